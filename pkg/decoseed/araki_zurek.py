"""
Closed-form reduced dynamics for environments whose coupling commutes with the free environment
dynamics.

The environment only enters through the spectral measure mu of V_E in the reference state, so
every off-diagonal sector block picks up the factor

    chi_{m,n}(t) = int exp(-i (lambda_m - lambda_n) lambda t) dmu(lambda)

which is evaluated here by quadrature on a grid.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate

from .const import (
    COMMUTATOR_TOL,
    DECAY_PLATEAU,
    DEFAULT_CLUSTER_TOL,
    DEFAULT_GAUSSIAN_SPAN,
    DEFAULT_GRID_POINTS,
    FIT_FLOOR,
    FIT_MIN_SAMPLES,
    FIT_SLACK,
    FIT_SPREAD,
    MEASURE_TOL,
    NORMALIZATION_TOL,
)
from .exc import (
    AssumptionViolatedError,
    DimensionMismatchError,
    InsufficientDecayError,
    NyquistViolationError,
    OverlappingWindowsError,
    UnnormalizedMeasureError,
    WeightSumInvalidError,
)
from .qcore import (
    Interval,
    SectorFamily,
    SpectralPropagator,
    as_density,
    as_hermitian,
    block_norm_table,
    commutator_norm,
    spectral_projectors,
    trapezoid_weights,
)

_LOGGER = logging.getLogger(__name__)

# Rows of the time x grid phase matrix evaluated at once
_TIME_CHUNK = 256


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """System Hamiltonian, system coupling and the sectors of the coupling"""
    h_s: np.ndarray
    v_s: np.ndarray
    sectors: SectorFamily

    @property
    def dim(self) -> int:
        return self.h_s.shape[0]

    @property
    def min_gap(self) -> float:
        return self.sectors.min_gap


def validate_model(h_s, v_s, h_e=None, v_e=None, cluster_tol: float = DEFAULT_CLUSTER_TOL) -> SystemSpec:
    """
    Check the commutation assumptions of the exactly soluble models and derive the sectors.

    :param h_s: system Hamiltonian
    :param v_s: system part of the coupling
    :param h_e: finite environment Hamiltonian, only supplied for surrogate checks
    :param v_e: finite environment part of the coupling
    :param cluster_tol: eigenvalue clustering tolerance for the sectors of V_S
    :raises AssumptionViolatedError: naming the commutator that fails
    """
    h_s = as_hermitian(h_s, 'H_S')
    v_s = as_hermitian(v_s, 'V_S')
    if h_s.shape != v_s.shape:
        raise DimensionMismatchError(f'H_S {h_s.shape} and V_S {v_s.shape} differ in shape')

    defect = commutator_norm(h_s, v_s)
    if defect > COMMUTATOR_TOL:
        raise AssumptionViolatedError('assumption 1 ([H_S, V_S] = 0)', defect)

    sectors = spectral_projectors(v_s, cluster_tol)
    for m, p in enumerate(sectors.projectors):
        defect = commutator_norm(h_s, p)
        if defect > COMMUTATOR_TOL:
            raise AssumptionViolatedError(f'assumption 2 ([H_S, P_{m}] = 0)', defect)

    if h_e is not None and v_e is not None:
        h_e = as_hermitian(h_e, 'H_E')
        v_e = as_hermitian(v_e, 'V_E')
        defect = commutator_norm(h_e, v_e)
        if defect > COMMUTATOR_TOL:
            raise AssumptionViolatedError('assumption 3 ([H_E, V_E] = 0)', defect)

    _LOGGER.debug('Validated model with dim %d and %d sectors', h_s.shape[0], len(sectors))
    return SystemSpec(h_s=h_s, v_s=v_s, sectors=sectors)


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """
    Spectral measure of V_E in the environment reference state.

    Continuous measures are sampled densities with quadrature weights. Point spectra are stored as
    atoms with unit weights and `discrete` set, in which case `density` holds the probabilities.
    """
    lambda_grid: np.ndarray
    density: np.ndarray
    quadrature_weights: np.ndarray
    smoothness_class: int = 0
    discrete: bool = False

    def __post_init__(self):
        if not (self.lambda_grid.shape == self.density.shape == self.quadrature_weights.shape):
            raise DimensionMismatchError('grid, density and weights must have one shape')
        if self.lambda_grid.size > 1 and np.any(np.diff(self.lambda_grid) <= 0):
            raise ValueError('lambda_grid must be strictly increasing')

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.quadrature_weights

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def mean(self) -> float:
        return float(np.sum(self.lambda_grid * self.masses) / self.total_mass)

    @property
    def grid_spacing(self) -> float:
        if self.discrete or self.lambda_grid.size < 2:
            return 0.0
        return float(np.max(np.diff(self.lambda_grid)))

    def validate(self) -> 'SpectralDensity':
        if np.any(self.density < 0):
            raise UnnormalizedMeasureError('spectral density takes negative values')
        mass = self.total_mass
        if abs(mass - 1.0) > MEASURE_TOL:
            raise UnnormalizedMeasureError(f'spectral measure has total mass {mass:.12g}')
        return self

    def quantile(self, q) -> np.ndarray:
        """Inverse cumulative distribution, used to build equal-weight surrogates"""
        if self.discrete:
            cdf = np.cumsum(self.masses)
            cdf = cdf / cdf[-1]
            idx = np.searchsorted(cdf, np.asarray(q, dtype=float), side='left')
            return self.lambda_grid[np.minimum(idx, self.lambda_grid.size - 1)]
        cdf = scipy.integrate.cumulative_trapezoid(self.density, self.lambda_grid, initial=0.0)
        cdf = cdf / cdf[-1]
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return np.interp(q, cdf[keep], self.lambda_grid[keep])

    @classmethod
    def from_samples(cls, grid, density, smoothness: int = 0) -> 'SpectralDensity':
        """Normalized density sampled on `grid` with trapezoid weights"""
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        weights = trapezoid_weights(grid)
        mass = float(np.sum(density * weights))
        if mass <= 0:
            raise UnnormalizedMeasureError('spectral density has no mass on its grid')
        return cls(grid, density / mass, weights, smoothness)

    @classmethod
    def gaussian(cls, mean: float = 0.0, sigma: float = 1.0, n_points: int = DEFAULT_GRID_POINTS,
                 span: float = DEFAULT_GAUSSIAN_SPAN) -> 'SpectralDensity':
        if sigma <= 0:
            raise ValueError('sigma must be positive')
        grid = np.linspace(mean - span * sigma, mean + span * sigma, n_points)
        density = np.exp(-0.5 * ((grid - mean) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        # a Gaussian is smooth to every order; advertise a large class
        return cls.from_samples(grid, density, smoothness=99)

    @classmethod
    def bump(cls, center: float = 0.0, half_width: float = 1.0, smoothness: int = 1,
             n_points: int = DEFAULT_GRID_POINTS) -> 'SpectralDensity':
        """
        Compactly supported density (1 - u^2)^(s+1), u = (lambda - center) / half_width.

        The density and its first `smoothness` derivatives vanish at the support edges.
        """
        if half_width <= 0:
            raise ValueError('half_width must be positive')
        if smoothness < 0:
            raise ValueError('smoothness must be non-negative')
        grid = np.linspace(center - half_width, center + half_width, n_points)
        u = (grid - center) / half_width
        density = np.clip(1.0 - u ** 2, 0.0, None) ** (smoothness + 1)
        return cls.from_samples(grid, density, smoothness=smoothness)

    @classmethod
    def discrete_measure(cls, atoms, probabilities=None) -> 'SpectralDensity':
        atoms = np.asarray(atoms, dtype=float)
        order = np.argsort(atoms)
        atoms = atoms[order]
        if probabilities is None:
            probabilities = np.full(atoms.size, 1.0 / atoms.size)
        else:
            probabilities = np.asarray(probabilities, dtype=float)[order]
        return cls(atoms, probabilities, np.ones_like(atoms), smoothness_class=0, discrete=True)

    @classmethod
    def lattice(cls, spacing: float, n_atoms: int, center: float = 0.0, probabilities=None) -> 'SpectralDensity':
        """Equally spaced point spectrum, uniform weights unless given"""
        if spacing <= 0 or n_atoms < 1:
            raise ValueError('lattice needs a positive spacing and at least one atom')
        atoms = center + spacing * (np.arange(n_atoms) - (n_atoms - 1) / 2)
        return cls.discrete_measure(atoms, probabilities)


def check_nyquist(mu: SpectralDensity, delta_lambda: float, times) -> None:
    """Raise when the grid cannot resolve exp(-i delta_lambda lambda t) up to max |t|"""
    times = np.asarray(times, dtype=float)
    if mu.discrete or times.size == 0:
        return
    product = abs(delta_lambda) * float(np.max(np.abs(times))) * mu.grid_spacing
    if product > math.pi:
        raise NyquistViolationError(
            f'|dlambda| * t_max * grid spacing = {product:.4g} exceeds pi; refine the spectral grid')


def chi_spectral(mu: SpectralDensity, delta_lambda: float, times) -> np.ndarray:
    """
    Decoherence function for one eigenvalue difference of V_S.

    :return: complex array, one value per time
    """
    mu.validate()
    times = np.asarray(times, dtype=float)
    check_nyquist(mu, delta_lambda, times)
    masses = mu.masses / mu.total_mass
    out = np.empty(times.size, dtype=complex)
    for start in range(0, times.size, _TIME_CHUNK):
        chunk = times[start:start + _TIME_CHUNK]
        out[start:start + _TIME_CHUNK] = np.exp(-1j * delta_lambda * np.outer(chunk, mu.lambda_grid)) @ masses
    out[times == 0] = 1.0
    return out


def sector_chi_table(eigenvalues: np.ndarray, mu: SpectralDensity, times) -> np.ndarray:
    """
    chi_{m,n}(t) for every sector pair, shape (n_times, n_sectors, n_sectors).

    Pairs sharing an eigenvalue difference share one quadrature.
    """
    times = np.asarray(times, dtype=float)
    n = len(eigenvalues)
    table = np.ones((times.size, n, n), dtype=complex)
    upper = [(m, k) for m in range(n) for k in range(m + 1, n)]
    if not upper:
        return table
    deltas = np.array([eigenvalues[m] - eigenvalues[k] for m, k in upper])
    unique, inverse = np.unique(np.round(deltas, 12), return_inverse=True)
    _LOGGER.debug('Evaluating %d distinct eigenvalue differences for %d pairs', unique.size, len(upper))
    columns = [chi_spectral(mu, float(d), times) for d in unique]
    for (m, k), j in zip(upper, inverse):
        table[:, m, k] = columns[j]
        table[:, k, m] = np.conj(columns[j])
    return table


class MixtureTerm(NamedTuple):
    weight: float
    rho: np.ndarray
    mu: SpectralDensity


@dataclass(frozen=True, eq=False)
class MixtureInitialState:
    """Finite affine combination sum_mu c_mu rho_mu (x) omega_mu of product states"""
    terms: Tuple[MixtureTerm, ...]

    def validate(self) -> 'MixtureInitialState':
        if not self.terms:
            raise WeightSumInvalidError('mixture has no terms')
        total = sum(term.weight for term in self.terms)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise WeightSumInvalidError(f'mixture weights sum to {total:.12g}')
        return self

    @property
    def is_convex(self) -> bool:
        return all(term.weight >= 0 for term in self.terms)


@dataclass(eq=False)
class DecoherenceCurve:
    """
    Decoherence functions and off-diagonal block norms sampled on a time grid.

    Columns follow `pairs`, the sector pairs (m, n) with m < n. The other orientation is the
    complex conjugate and diagonal pairs are identically one. `chi` is None when the dynamics has
    no closed-form decoherence function (scattering).
    """
    times: np.ndarray
    pairs: Tuple[Tuple[int, int], ...]
    chi: Optional[np.ndarray]
    block_tn: np.ndarray = field(default=None)
    block_hs: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (self.times.size, len(self.pairs))
        if self.block_tn is None:
            self.block_tn = np.full(shape, np.nan)
        if self.block_hs is None:
            self.block_hs = np.full(shape, np.nan)

    @classmethod
    def from_chi(cls, times, chi, pair: Tuple[int, int] = (0, 1)) -> 'DecoherenceCurve':
        """Single-pair curve, e.g. for a boson-field or synthetic decoherence function"""
        times = np.asarray(times, dtype=float)
        chi = np.asarray(chi, dtype=complex).reshape(times.size, 1)
        return cls(times=times, pairs=(pair,), chi=chi)

    def chi_of(self, m: int, n: int) -> np.ndarray:
        if m == n:
            return np.ones(self.times.size, dtype=complex)
        if self.chi is None:
            raise ValueError('curve carries no decoherence function')
        if (m, n) in self.pairs:
            return self.chi[:, self.pairs.index((m, n))]
        return np.conj(self.chi[:, self.pairs.index((n, m))])

    @property
    def abs_chi(self) -> np.ndarray:
        return np.abs(self.chi)


def _upper_pairs(n: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((m, k) for m in range(n) for k in range(m + 1, n))


def _sector_frames(rho0: np.ndarray, spec: SystemSpec, chi: np.ndarray,
                   times: np.ndarray) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
    """Yield (index, chi table, reduced state in the sector basis) per time sample"""
    family = spec.sectors
    labels = family.labels
    propagator = SpectralPropagator(spec.h_s, 'H_S')
    for i, t in enumerate(times):
        free = family.to_sector_basis(propagator.evolve(rho0, t))
        yield i, chi[i], free * chi[i][np.ix_(labels, labels)]


def _check_state(rho0, spec: SystemSpec) -> np.ndarray:
    rho0 = as_density(rho0, 'rho0')
    if rho0.shape[0] != spec.dim:
        raise DimensionMismatchError(f'rho0 has dim {rho0.shape[0]}, system has dim {spec.dim}')
    return rho0


def reduced_blocks_factorized(rho0, spec: SystemSpec, mu: SpectralDensity,
                              times) -> Tuple[DecoherenceCurve, np.ndarray]:
    """
    Reduced dynamics of rho0 (x) omega where omega has spectral measure `mu`.

    :return: the decoherence curve and the reduced states, shape (n_times, dim, dim)
    """
    rho0 = _check_state(rho0, spec)
    times = np.asarray(times, dtype=float)
    return reduced_blocks_from_table(rho0, spec, sector_chi_table(spec.sectors.eigenvalues, mu, times), times)


def reduced_blocks_from_table(rho0, spec: SystemSpec, chi_table: np.ndarray,
                              times) -> Tuple[DecoherenceCurve, np.ndarray]:
    """
    Assemble reduced states from a precomputed table chi_table[i, m, n] of decoherence functions,
    e.g. one produced by a boson-field environment.
    """
    rho0 = _check_state(rho0, spec)
    times = np.asarray(times, dtype=float)
    family = spec.sectors
    if chi_table.shape != (times.size, len(family), len(family)):
        raise DimensionMismatchError(
            f'chi table of shape {chi_table.shape} does not match {times.size} times and {len(family)} sectors')
    pairs = _upper_pairs(len(family))
    chi = np.empty((times.size, len(pairs)), dtype=complex)
    block_tn = np.empty((times.size, len(pairs)))
    block_hs = np.empty((times.size, len(pairs)))
    states = np.empty((times.size, spec.dim, spec.dim), dtype=complex)

    for i, table, reduced in _sector_frames(rho0, spec, chi_table, times):
        tn, hs = block_norm_table(reduced, family.groups)
        for j, (m, n) in enumerate(pairs):
            chi[i, j] = table[m, n]
            block_tn[i, j] = tn[m, n]
            block_hs[i, j] = hs[m, n]
        states[i] = rho0 if times[i] == 0 else family.from_sector_basis(reduced)

    return DecoherenceCurve(times, pairs, chi, block_tn, block_hs), states


def mixture_dynamics(state: MixtureInitialState, spec: SystemSpec, times) -> np.ndarray:
    """Reduced dynamics of a finite affine combination of product states, by linearity"""
    state.validate()
    if not state.is_convex:
        _LOGGER.warning('Mixture has negative weights; positivity of the total state is not checked here')
    times = np.asarray(times, dtype=float)
    total = np.zeros((times.size, spec.dim, spec.dim), dtype=complex)
    for term in state.terms:
        _, states = reduced_blocks_factorized(term.rho, spec, term.mu, times)
        total += term.weight * states
    return total


@dataclass(frozen=True)
class DecayBound:
    """
    Certificate |chi(t)| <= C_gamma (1 + delta |t|)^(-gamma).

    C_fit is the least-squares constant of the same power law; C_gamma is the smallest constant
    that dominates the fitted envelope.
    """
    C_gamma: float
    gamma: float
    delta: float
    C_fit: Optional[float] = None

    @property
    def spread(self) -> float:
        """C_gamma over C_fit, how far the samples stray above the least-squares power law"""
        return math.inf if not self.C_fit else self.C_gamma / self.C_fit

    def envelope(self, times) -> np.ndarray:
        return self.C_gamma * (1.0 + self.delta * np.abs(np.asarray(times, dtype=float))) ** (-self.gamma)

    def dominates(self, times, values, scale: float = 1.0) -> bool:
        """True when |values| stays under scale times the envelope, with the fit slack"""
        bound = scale * self.envelope(times) * (1.0 + FIT_SLACK)
        return bool(np.all(np.abs(values) <= bound))


def fit_decay_bound(curve: DecoherenceCurve, delta: float, pair: int = 0,
                    spread: float = FIT_SPREAD) -> Tuple[DecayBound, bool]:
    """
    Fit a power-law certificate to one decoherence function.

    The fit runs on the decreasing envelope of |chi| (running maximum taken from the right),
    restricted to |chi| > 1e-12. C_gamma is raised from the least-squares constant until the
    envelope is dominated on the window. The certificate holds when it dominates |chi| and C_gamma
    stays within `spread` times the least-squares constant; decays faster than any power fail the
    second condition.

    :raises InsufficientDecayError: if |chi| stays near one or the fitted slope is not negative
    """
    if delta <= 0:
        raise ValueError('delta must be positive')
    times = np.asarray(curve.times, dtype=float)
    if times.size < FIT_MIN_SAMPLES:
        raise ValueError(f'decay fit needs at least {FIT_MIN_SAMPLES} samples, got {times.size}')
    values = np.abs(curve.chi[:, pair])

    tail = values[times >= times[-1] / 2]
    if tail.size == 0 or np.max(tail) >= DECAY_PLATEAU:
        raise InsufficientDecayError(f'|chi| does not fall below {DECAY_PLATEAU} on the late half of the curve')

    envelope = np.maximum.accumulate(values[::-1])[::-1]
    window = envelope > FIT_FLOOR
    if np.count_nonzero(window) < 2:
        raise InsufficientDecayError('too few samples above the fit floor')
    if np.count_nonzero(window) < window.size:
        _LOGGER.debug('Fit window keeps %d of %d samples', np.count_nonzero(window), window.size)

    x = np.log1p(delta * np.abs(times[window]))
    y = np.log(envelope[window])
    slope, intercept = np.polyfit(x, y, 1)
    if slope >= 0:
        raise InsufficientDecayError(f'fitted log-log slope {slope:.4g} is not negative')
    gamma = -float(slope)
    c_fit = math.exp(intercept)
    c_gamma = max(c_fit, float(np.max(envelope[window] * np.exp(gamma * x))))

    bound = DecayBound(C_gamma=c_gamma, gamma=gamma, delta=float(delta), C_fit=c_fit)
    holds = bound.dominates(times, values) and bound.spread <= spread
    _LOGGER.debug('Decay fit: C=%.4g (least squares %.4g) gamma=%.4g holds=%s', c_gamma, c_fit, gamma, holds)
    return bound, holds


def window_distance(window1: Interval, window2: Interval) -> float:
    lo1, hi1 = sorted(window1)
    lo2, hi2 = sorted(window2)
    return max(lo2 - hi1, lo1 - hi2)


def window_block_norm(spec: SystemSpec, window1: Interval, window2: Interval, rho0,
                      mu: SpectralDensity, times) -> np.ndarray:
    """Hilbert-Schmidt norm of P(window1) rho(t) P(window2) at every time"""
    if window_distance(window1, window2) <= 0:
        raise OverlappingWindowsError(f'windows {window1} and {window2} do not have positive distance')
    rho0 = _check_state(rho0, spec)
    times = np.asarray(times, dtype=float)
    family = spec.sectors
    if len(family) < 64:
        _LOGGER.debug('Window norms on a coarse spectrum with %d sectors', len(family))
    rows = family.window_columns(window1)
    cols = family.window_columns(window2)
    out = np.zeros(times.size)
    if rows.size == 0 or cols.size == 0:
        return out
    chi_table = sector_chi_table(family.eigenvalues, mu, times)
    for i, _, reduced in _sector_frames(rho0, spec, chi_table, times):
        out[i] = np.linalg.norm(reduced[np.ix_(rows, cols)])
    return out


def recurrence_time(mu: SpectralDensity, delta_lambda: float, max_denominator: int = 10000) -> float:
    """
    First return time of a point-spectrum decoherence function, 2 pi / (|dlambda| g) with g the
    common divisor of the atom gaps. Infinite for continuous measures.
    """
    if not mu.discrete or delta_lambda == 0:
        return math.inf
    atoms = np.unique(mu.lambda_grid[mu.density > 0])
    if atoms.size < 2:
        return math.inf
    gaps = np.diff(atoms)
    base = gaps[0]
    ratios = [Fraction(float(g / base)).limit_denominator(max_denominator) for g in gaps]
    lcm = reduce(lambda a, b: a * b // math.gcd(a, b), (r.denominator for r in ratios), 1)
    step = reduce(math.gcd, (int(r.numerator * (lcm // r.denominator)) for r in ratios))
    g = base * step / lcm
    return 2 * math.pi / (abs(delta_lambda) * g)


def off_diagonal_observable(a, family: SectorFamily) -> np.ndarray:
    """Remove the diagonal sector blocks P_m A P_m of a Hermitian observable"""
    a = as_hermitian(a, 'A')
    labels = family.labels
    in_sector = family.to_sector_basis(a)
    in_sector[labels[:, None] == labels[None, :]] = 0
    return family.from_sector_basis(in_sector)


def induced_sector_residual(rho, family: SectorFamily, observable) -> float:
    """|tr(A rho)| for the off-diagonal part A of `observable`; small once sectors are induced"""
    a = off_diagonal_observable(observable, family)
    return float(abs(np.trace(a @ np.asarray(rho, dtype=complex))))


def residual_series(states: Sequence[np.ndarray], family: SectorFamily, observable) -> List[float]:
    a = off_diagonal_observable(observable, family)
    return [float(abs(np.trace(a @ rho))) for rho in states]
