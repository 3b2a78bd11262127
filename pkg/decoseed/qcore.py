"""
Dense Hermitian linear algebra and density-operator utilities.

All matrices are complex numpy arrays. Tensor products follow the S-major convention: the basis
index of S+E is ``s * dim_e + e``.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.stats import unitary_group

from .const import (
    DEFAULT_CLUSTER_TOL,
    HERMITIAN_TOL,
    POSITIVITY_TOL,
    TRACE_TOL,
)
from .exc import (
    DegenerateClusteringError,
    DimensionMismatchError,
    InvalidDensityError,
    NonHermitianInputError,
)

_LOGGER = logging.getLogger(__name__)

Interval = Tuple[float, float]


def _square(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f'{name} must be a square matrix, got shape {a.shape}')
    return a


def hermiticity_defect(a: np.ndarray) -> float:
    """Largest entry of |A - A^+|"""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - a.conj().T)))


def as_hermitian(a, name: str = 'operator', tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return `a` as a complex square array, raising if it is not Hermitian"""
    a = _square(a, name)
    defect = hermiticity_defect(a)
    if defect > tol:
        raise NonHermitianInputError(f'{name} is not Hermitian (defect {defect:.3e})')
    return a


def commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    """Spectral norm of [A, B]"""
    return float(np.linalg.norm(a @ b - b @ a, ord=2))


def trace_norm(a: np.ndarray) -> float:
    """Sum of singular values"""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.sum(scipy.linalg.svdvals(a)))


def hs_norm(a: np.ndarray) -> float:
    """Hilbert-Schmidt (Frobenius) norm"""
    return float(np.linalg.norm(a))


def trapezoid_weights(grid) -> np.ndarray:
    """Trapezoid quadrature weights on an arbitrary increasing grid"""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        return np.ones_like(grid)
    d = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


@dataclass(frozen=True)
class DensityDiagnostics:
    """Defect measures of a candidate statistical operator"""
    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float

    def is_valid(self,
                 hermitian_tol: float = HERMITIAN_TOL,
                 trace_tol: float = TRACE_TOL,
                 positivity_tol: float = POSITIVITY_TOL) -> bool:
        return (self.hermiticity_defect <= hermitian_tol
                and self.trace_defect <= trace_tol
                and self.min_eigenvalue >= positivity_tol)


def validate_density(w) -> DensityDiagnostics:
    """Report how far `w` is from being a density operator.  Never raises on bad states."""
    w = _square(w, 'density')
    herm = 0.5 * (w + w.conj().T)
    return DensityDiagnostics(
        hermiticity_defect=hermiticity_defect(w),
        trace_defect=float(abs(np.trace(w) - 1.0)),
        min_eigenvalue=float(np.min(scipy.linalg.eigvalsh(herm))),
    )


def as_density(w, name: str = 'density') -> np.ndarray:
    """Return `w` as a complex array, raising InvalidDensityError unless it is a valid state"""
    w = _square(w, name)
    diagnostics = validate_density(w)
    if not diagnostics.is_valid():
        raise InvalidDensityError(f'{name} is not a density operator: {diagnostics}')
    return w


@dataclass(frozen=True, eq=False)
class SectorFamily:
    """
    Spectral family of a Hermitian operator with clustered eigenvalues.

    `basis` is a unitary whose columns are grouped by sector; `groups[m]` holds the column indices
    belonging to sector m, so that P_m = basis[:, groups[m]] @ basis[:, groups[m]]^+.
    """
    eigenvalues: np.ndarray
    projectors: Tuple[np.ndarray, ...]
    basis: np.ndarray
    groups: Tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def sectors(self) -> List[Tuple[float, np.ndarray]]:
        return list(zip(self.eigenvalues.tolist(), self.projectors))

    @property
    def labels(self) -> np.ndarray:
        """Sector index of every basis column"""
        labels = np.empty(self.dim, dtype=int)
        for m, idx in enumerate(self.groups):
            labels[idx] = m
        return labels

    @property
    def min_gap(self) -> float:
        if len(self) < 2:
            return float('inf')
        return float(np.min(np.diff(self.eigenvalues)))

    def to_sector_basis(self, a: np.ndarray) -> np.ndarray:
        return self.basis.conj().T @ a @ self.basis

    def from_sector_basis(self, a: np.ndarray) -> np.ndarray:
        return self.basis @ a @ self.basis.conj().T

    def window_sectors(self, interval: Interval) -> np.ndarray:
        """Indices m with lambda_m in the closed interval"""
        lo, hi = interval
        return np.flatnonzero((self.eigenvalues >= lo) & (self.eigenvalues <= hi))

    def window_columns(self, interval: Interval) -> np.ndarray:
        sectors = self.window_sectors(interval)
        if sectors.size == 0:
            return np.zeros(0, dtype=int)
        return np.concatenate([self.groups[m] for m in sectors])

    def window_projector(self, interval: Interval) -> np.ndarray:
        """P(Delta) aggregated from the sector projectors"""
        cols = self.basis[:, self.window_columns(interval)]
        return cols @ cols.conj().T


def spectral_projectors(v, cluster_tol: float = DEFAULT_CLUSTER_TOL) -> SectorFamily:
    """
    Split a Hermitian operator into eigenvalue clusters.

    A cluster collects consecutive eigenvalues within `cluster_tol` of its lowest member; its
    eigenvalue is the cluster mean.
    """
    if cluster_tol <= 0:
        raise ValueError('cluster_tol must be positive')
    v = as_hermitian(v, 'V')
    vals, vecs = scipy.linalg.eigh(v)

    bounds = []
    start = 0
    for i in range(1, len(vals)):
        if vals[i] - vals[start] > cluster_tol:
            bounds.append((start, i))
            start = i
    bounds.append((start, len(vals)))

    for (_, prev_end), (next_start, _) in zip(bounds, bounds[1:]):
        gap = vals[next_start] - vals[prev_end - 1]
        if gap <= cluster_tol:
            raise DegenerateClusteringError(
                f'clusters at {vals[prev_end - 1]:.12g} and {vals[next_start]:.12g} are {gap:.3e} apart')

    eigenvalues = np.array([vals[a:b].mean() for a, b in bounds])
    groups = tuple(np.arange(a, b) for a, b in bounds)
    projectors = tuple(vecs[:, idx] @ vecs[:, idx].conj().T for idx in groups)
    _LOGGER.debug('Clustered %d eigenvalues into %d sectors', len(vals), len(bounds))
    return SectorFamily(eigenvalues=eigenvalues, projectors=projectors, basis=vecs, groups=groups)


class SpectralPropagator:
    """Eigendecomposition of a Hermitian generator, reused for every time sample"""

    def __init__(self, h, name: str = 'H'):
        h = as_hermitian(h, name)
        self.dim = h.shape[0]
        self.energies, self.vectors = scipy.linalg.eigh(h)

    def unitary(self, t: float) -> np.ndarray:
        """e^{-iHt}"""
        return (self.vectors * np.exp(-1j * self.energies * t)) @ self.vectors.conj().T

    def evolve(self, w: np.ndarray, t: float) -> np.ndarray:
        """e^{-iHt} W e^{iHt}"""
        if w.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f'state of shape {w.shape} does not match generator of dim {self.dim}')
        if t == 0:
            return np.array(w, dtype=complex)
        u = self.unitary(t)
        return u @ w @ u.conj().T


def evolve(h, t: float, w) -> np.ndarray:
    """Unitary evolution of a state under a time-independent Hamiltonian"""
    w = _square(w, 'W')
    return SpectralPropagator(h).evolve(w, t)


def partial_trace_env(w, dim_s: int, dim_e: int) -> np.ndarray:
    """Trace out the environment factor of an S-major S+E operator"""
    w = _square(w, 'W')
    if w.shape[0] != dim_s * dim_e:
        raise DimensionMismatchError(f'dim(W)={w.shape[0]} is not {dim_s}*{dim_e}')
    return np.trace(w.reshape(dim_s, dim_e, dim_s, dim_e), axis1=1, axis2=3)


class BlockNorm(NamedTuple):
    m: int
    n: int
    trace_norm: float
    hs_norm: float


def block_norm_table(a_sector: np.ndarray, groups: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Trace and Hilbert-Schmidt norms of every block of a matrix already expressed in the sector
    basis.  Returns two (n_sectors, n_sectors) arrays.
    """
    n = len(groups)
    tn = np.zeros((n, n))
    hs = np.zeros((n, n))
    for m, rows in enumerate(groups):
        for k, cols in enumerate(groups):
            block = a_sector[np.ix_(rows, cols)]
            if block.size == 1:
                tn[m, k] = hs[m, k] = abs(block[0, 0])
                continue
            s = scipy.linalg.svdvals(block)
            tn[m, k] = np.sum(s)
            hs[m, k] = np.sqrt(np.sum(s ** 2))
    return tn, hs


def block_norms(a, family: SectorFamily) -> List[BlockNorm]:
    """Norms of P_m A P_n for every ordered sector pair"""
    a = _square(a, 'A')
    if a.shape[0] != family.dim:
        raise DimensionMismatchError(f'dim(A)={a.shape[0]} does not match sector family dim {family.dim}')
    tn, hs = block_norm_table(family.to_sector_basis(a), family.groups)
    return [BlockNorm(m, n, float(tn[m, n]), float(hs[m, n]))
            for m in range(len(family)) for n in range(len(family))]


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (x + x.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        # unitary_group needs dim > 1
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1), dtype=complex)
    return unitary_group.rvs(dim, random_state=rng)


def random_density(dim: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    """Random statistical operator of the given rank (full rank by default)"""
    rank = dim if rank is None else rank
    x = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    w = x @ x.conj().T
    w = 0.5 * (w + w.conj().T)
    return w / np.trace(w).real
