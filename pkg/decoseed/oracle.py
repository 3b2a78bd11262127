"""
Brute-force reference computations.

FiniteModel evolves the full S+E state for finite environment surrogates. FockOracle realizes one
or two boson modes in a truncated Fock basis.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .araki_zurek import SpectralDensity, validate_model
from .const import (
    DEFAULT_CLUSTER_TOL,
    DEFAULT_FOCK_NMAX,
    DIMENSION_CAP,
    FOCK_TAIL_TOL,
    MAX_FOCK_MODES,
)
from .exc import DimensionCapError, DimensionMismatchError, TruncationTooSmallError
from .qcore import SpectralPropagator, as_density, as_hermitian, partial_trace_env, spectral_projectors

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FiniteModel:
    """H_S (x) 1 + 1 (x) H_E + V_S (x) V_E on a finite environment"""
    h_s: np.ndarray
    v_s: np.ndarray
    h_e: np.ndarray
    v_e: np.ndarray

    @classmethod
    def build(cls, h_s, v_s, h_e, v_e, commuting: bool = False) -> 'FiniteModel':
        """Validate the operators; with `commuting` also enforce the commuting-model assumptions"""
        h_s, v_s = as_hermitian(h_s, 'H_S'), as_hermitian(v_s, 'V_S')
        h_e, v_e = as_hermitian(h_e, 'H_E'), as_hermitian(v_e, 'V_E')
        if h_s.shape != v_s.shape or h_e.shape != v_e.shape:
            raise DimensionMismatchError('system or environment operators differ in shape')
        if commuting:
            validate_model(h_s, v_s, h_e, v_e)
        return cls(h_s, v_s, h_e, v_e)

    @property
    def dim_s(self) -> int:
        return self.h_s.shape[0]

    @property
    def dim_e(self) -> int:
        return self.h_e.shape[0]

    @property
    def dim(self) -> int:
        return self.dim_s * self.dim_e

    @cached_property
    def h_total(self) -> np.ndarray:
        eye_s = np.eye(self.dim_s)
        eye_e = np.eye(self.dim_e)
        return np.kron(self.h_s, eye_e) + np.kron(eye_s, self.h_e) + np.kron(self.v_s, self.v_e)

    def gamma(self, lam: float) -> np.ndarray:
        """Environment Hamiltonian conditioned on the sector value lam"""
        return self.h_e + lam * self.v_e


def _check_cap(dim: int) -> None:
    if dim > DIMENSION_CAP:
        raise DimensionCapError(f'total dimension {dim} exceeds the cap {DIMENSION_CAP}')


def full_evolution(model: FiniteModel, w0, times, h_total: Optional[np.ndarray] = None,
                   validate: bool = True) -> np.ndarray:
    """
    Reduced states tr_E exp(-iHt) W0 exp(iHt), shape (n_times, dim_S, dim_S).

    `h_total` replaces the model Hamiltonian, which is how scattering potentials are added.
    Signed combinations of states (affine mixtures) need `validate=False`.
    """
    _check_cap(model.dim)
    w0 = as_density(w0, 'W0') if validate else np.asarray(w0, dtype=complex)
    if w0.shape[0] != model.dim:
        raise DimensionMismatchError(f'W0 has dim {w0.shape[0]}, model has dim {model.dim}')
    times = np.asarray(times, dtype=float)
    propagator = SpectralPropagator(model.h_total if h_total is None else h_total, 'H')
    _LOGGER.debug('Full evolution at dim %d over %d samples', model.dim, times.size)
    states = np.empty((times.size, model.dim_s, model.dim_s), dtype=complex)
    for i, t in enumerate(times):
        states[i] = partial_trace_env(propagator.evolve(w0, t), model.dim_s, model.dim_e)
    return states


def gamma_evolution_check(model: FiniteModel, omega, m: int, n: int, times,
                          cluster_tol: float = DEFAULT_CLUSTER_TOL) -> np.ndarray:
    """tr(exp(i Gamma_n t) exp(-i Gamma_m t) omega) computed directly on the environment"""
    omega = as_density(omega, 'omega')
    times = np.asarray(times, dtype=float)
    if m == n:
        return np.ones(times.size, dtype=complex)
    sectors = spectral_projectors(model.v_s, cluster_tol)
    u_m = SpectralPropagator(model.gamma(sectors.eigenvalues[m]), 'Gamma_m')
    u_n = SpectralPropagator(model.gamma(sectors.eigenvalues[n]), 'Gamma_n')
    out = np.empty(times.size, dtype=complex)
    for i, t in enumerate(times):
        out[i] = np.trace(u_n.unitary(t).conj().T @ u_m.unitary(t) @ omega)
    return out


class EnvironmentSurrogate(NamedTuple):
    v_e: np.ndarray
    omega: np.ndarray


def equal_weight_surrogate(mu: SpectralDensity, dim_e: int) -> EnvironmentSurrogate:
    """Diagonal V_E with inverse-CDF atoms at the quantiles (k + 1/2)/dim_e and omega = 1/dim_e"""
    if dim_e < 1:
        raise ValueError('dim_e must be positive')
    atoms = mu.quantile((np.arange(dim_e) + 0.5) / dim_e)
    return EnvironmentSurrogate(np.diag(atoms).astype(complex), np.eye(dim_e, dtype=complex) / dim_e)


def spectral_density_from_operator(v_e, omega, decimals: int = 12) -> SpectralDensity:
    """Point spectral measure of V_E in the state omega; degenerate eigenvalues are merged"""
    v_e = as_hermitian(v_e, 'V_E')
    omega = as_density(omega, 'omega')
    vals, vecs = scipy.linalg.eigh(v_e)
    probs = np.real(np.einsum('ik,ij,jk->k', vecs.conj(), omega, vecs))
    atoms, inverse = np.unique(np.round(vals, decimals), return_inverse=True)
    merged = np.zeros(atoms.size)
    np.add.at(merged, inverse, probs)
    return SpectralDensity.discrete_measure(atoms, np.clip(merged, 0.0, None))


class FockOracle:
    """
    Truncated Fock space of one or two modes with energies `eps`.

    Field operators are smeared with sqrt(weights) so that inner products match the weighted
    mode grid: Phi(f) = sum_k f_k sqrt(w_k) Q_k.
    """

    def __init__(self, eps: Sequence[float], n_max: int = DEFAULT_FOCK_NMAX, weights: Optional[Sequence[float]] = None):
        self.eps = np.atleast_1d(np.asarray(eps, dtype=float))
        self.n_modes = self.eps.size
        if not 1 <= self.n_modes <= MAX_FOCK_MODES:
            raise ValueError(f'Fock oracle supports 1 to {MAX_FOCK_MODES} modes, got {self.n_modes}')
        self.n_max = int(n_max)
        self.weights = np.ones(self.n_modes) if weights is None else np.atleast_1d(np.asarray(weights, dtype=float))
        self.dim = self.n_max ** self.n_modes
        _check_cap(self.dim)

        annihilate = np.diag(np.sqrt(np.arange(1, self.n_max)), 1).astype(complex)
        self.a = [self._embed(annihilate, k) for k in range(self.n_modes)]
        self.adag = [op.conj().T for op in self.a]
        self.q = [(op + op.conj().T) / np.sqrt(2) for op in self.a]
        self.p = [1j * (op.conj().T - op) / np.sqrt(2) for op in self.a]
        self.number = [np.real(np.diag(d @ a)) for d, a in zip(self.adag, self.a)]
        self.energies = sum(e * n for e, n in zip(self.eps, self.number))
        self.h_e = np.diag(self.energies).astype(complex)

    def _embed(self, single: np.ndarray, mode: int) -> np.ndarray:
        out = np.ones((1, 1), dtype=complex)
        for k in range(self.n_modes):
            out = np.kron(out, single if k == mode else np.eye(self.n_max))
        return out

    @property
    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def _smear(self, ops, values) -> np.ndarray:
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if values.size != self.n_modes:
            raise DimensionMismatchError(f'expected {self.n_modes} mode amplitudes, got {values.size}')
        return sum(v * np.sqrt(w) * op for v, w, op in zip(values, self.weights, ops))

    def phi(self, f) -> np.ndarray:
        return self._smear(self.q, f)

    def pi(self, g) -> np.ndarray:
        return self._smear(self.p, g)

    def weyl(self, f, g) -> np.ndarray:
        """T(f, g) = exp(-i Pi(f) - i Phi(g))"""
        return scipy.linalg.expm(-1j * (self.pi(f) + self.phi(g)))

    def coherent(self, f, g) -> np.ndarray:
        return self.weyl(f, g) @ self.vacuum

    def free_evolution(self, t: float) -> np.ndarray:
        """exp(-i H_E t), diagonal in the Fock basis"""
        return np.diag(np.exp(-1j * self.energies * t))

    def oscillator_hamiltonian(self, eps: float, coupling: float) -> np.ndarray:
        """P^2/2 + eps^2 Q^2/2 + coupling Q for the first mode, in the unit-oscillator basis"""
        q, p = self.q[0], self.p[0]
        return 0.5 * p @ p + 0.5 * eps ** 2 * q @ q + coupling * q

    def commutator_defect(self) -> float:
        """max over modes of ||[a, a^+] - 1|| on the levels below the truncation edge"""
        defects = []
        for mode, (a, adag) in enumerate(zip(self.a, self.adag)):
            comm = a @ adag - adag @ a
            keep = self._below_edge(mode)
            defects.append(np.max(np.abs(comm[np.ix_(keep, keep)] - np.eye(keep.size))))
        return float(max(defects))

    def _below_edge(self, mode: int) -> np.ndarray:
        return np.flatnonzero(self.number[mode] < self.n_max - 1)

    def tail_mass(self, state: np.ndarray) -> float:
        """Probability carried by occupation numbers above n_max/2 in any mode"""
        high = np.zeros(self.dim, dtype=bool)
        for n in self.number:
            high |= n > self.n_max / 2
        return float(np.sum(np.abs(state[high]) ** 2))

    def check_truncation(self, state: np.ndarray) -> None:
        tail = self.tail_mass(state)
        if tail > FOCK_TAIL_TOL:
            raise TruncationTooSmallError(f'Fock tail mass {tail:.3e} above n_max/2 exceeds {FOCK_TAIL_TOL:g}')
        if tail > FOCK_TAIL_TOL / 100:
            _LOGGER.warning('Fock tail mass %.3e is close to the truncation tolerance', tail)


def fock_expectation(oracle: FockOracle, operator: np.ndarray, state: Optional[np.ndarray] = None) -> complex:
    """<state| operator |state>, vacuum by default; both the state and operator|state> must fit"""
    state = oracle.vacuum if state is None else np.asarray(state, dtype=complex)
    if operator.shape != (oracle.dim, oracle.dim) or state.shape != (oracle.dim,):
        raise DimensionMismatchError('operator or state does not match the Fock space')
    image = operator @ state
    oracle.check_truncation(state)
    oracle.check_truncation(image)
    return complex(np.vdot(state, image))


def fock_chi(oracle: FockOracle, gamma_alpha: np.ndarray, gamma_beta: np.ndarray, times,
             states: Sequence[Tuple[float, np.ndarray]] = None) -> np.ndarray:
    """
    tr(exp(i Gamma_alpha t) exp(-i Gamma_beta t) omega) for omega a mixture of pure states
    given as (weight, vector) pairs, the vacuum by default.
    """
    states = states or [(1.0, oracle.vacuum)]
    for _, vec in states:
        oracle.check_truncation(vec)
    u_alpha = SpectralPropagator(gamma_alpha, 'Gamma_alpha')
    u_beta = SpectralPropagator(gamma_beta, 'Gamma_beta')
    times = np.asarray(times, dtype=float)
    out = np.zeros(times.size, dtype=complex)
    for i, t in enumerate(times):
        u = u_alpha.unitary(t).conj().T @ u_beta.unitary(t)
        out[i] = sum(w * np.vdot(vec, u @ vec) for w, vec in states)
    return out
