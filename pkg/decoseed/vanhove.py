"""
Decoherence by a free boson field with linear coupling.

Conventions: T(f, g) = exp(-i Pi(f) - i Phi(g)) with Phi = (a^+ + a)/sqrt(2) and
Pi = i(a^+ - a)/sqrt(2); inner products are weighted sums over the mode grid. The sector-pair
evolution is exactly

    U_{alpha beta}(t) = exp(i theta) T(-F(t), -G(t))

with F = (alpha - beta)(1 - cos(eps t)) h, G = (alpha - beta) sin(eps t) h, h = f / eps and
theta = (alpha^2 - beta^2)/2 [(h | sin(eps t) h) - t (h | eps h)].
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .const import (
    DEFAULT_FOCK_NMAX,
    DEFAULT_IR_CAP,
    DEFAULT_MODE_POINTS,
    MIN_FOCK_NMAX,
    NORMALIZATION_TOL,
)
from .exc import (
    GridMismatchError,
    IRDivergentWithoutOverrideError,
    NegativeFrequencyError,
    NonMonotoneCutoffsError,
    TruncationTooSmallError,
    WeightSumInvalidError,
)
from .qcore import trapezoid_weights

_LOGGER = logging.getLogger(__name__)

_TIME_CHUNK = 256
# Relative change of the infrared norm over the last cutoff step below which it counts as converged
IR_CONVERGENCE_TOL = 0.05


@dataclass(frozen=True, eq=False)
class ModeFunction:
    """Real coupling function on a k-grid with quadrature weights and dispersion eps(k) = c k"""
    k_grid: np.ndarray
    weights: np.ndarray
    f: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        if not (self.k_grid.shape == self.weights.shape == self.f.shape):
            raise GridMismatchError('k_grid, weights and f must share one shape')
        if self.c <= 0:
            raise ValueError('dispersion constant c must be positive')
        if np.any(self.k_grid <= 0):
            raise NegativeFrequencyError('mode grid must be strictly positive')

    @property
    def n_modes(self) -> int:
        return self.k_grid.size

    @property
    def eps(self) -> np.ndarray:
        return self.c * self.k_grid

    @property
    def h(self) -> np.ndarray:
        """eps^-1 f"""
        return self.f / self.eps

    def inner(self, a, b) -> float:
        return float(np.sum(np.asarray(a) * np.asarray(b) * self.weights))

    @property
    def norm_sq(self) -> float:
        return self.inner(self.f, self.f)

    @property
    def ir_norm_sq(self) -> float:
        """||eps^-1 f||^2"""
        return self.inner(self.h, self.h)

    @property
    def half_ir_norm(self) -> float:
        """||eps^-1/2 f||"""
        return math.sqrt(self.inner(self.f, self.f / self.eps))

    @property
    def dressing_energy(self) -> float:
        """(h | eps h), the ground-state shift per unit coupling squared times two"""
        return self.inner(self.h, self.eps * self.h)

    def is_ir_regular(self, cap: float = DEFAULT_IR_CAP) -> bool:
        value = self.ir_norm_sq
        return math.isfinite(value) and value <= cap

    @property
    def is_bounded_below(self) -> bool:
        return self.half_ir_norm < 2 ** -0.5

    @classmethod
    def geometric(cls, func: Callable[[np.ndarray], np.ndarray], k_min: float, k_max: float,
                  n_points: int = DEFAULT_MODE_POINTS, c: float = 1.0) -> 'ModeFunction':
        """Sample `func` on a geometric grid, which resolves the infrared end"""
        if not 0 < k_min < k_max:
            raise ValueError('need 0 < k_min < k_max')
        k = np.geomspace(k_min, k_max, n_points)
        return cls(k, trapezoid_weights(k), np.asarray(func(k), dtype=float), c)

    @classmethod
    def single_mode(cls, eps: float, f0: float, c: float = 1.0) -> 'ModeFunction':
        if eps <= 0:
            raise NegativeFrequencyError(f'single mode needs eps > 0, got {eps}')
        return cls(np.array([eps / c]), np.ones(1), np.array([float(f0)]), c)


def power_coupling(exponent: float) -> Callable[[np.ndarray], np.ndarray]:
    """f(k) = k^exponent"""
    return lambda k: k ** exponent


def exp_linear_coupling(k: np.ndarray) -> np.ndarray:
    """f(k) = k e^-k"""
    return k * np.exp(-k)


def mode_family(func: Callable[[np.ndarray], np.ndarray], k_max: float, n_points: int = DEFAULT_MODE_POINTS,
                c: float = 1.0) -> Callable[[float], ModeFunction]:
    """Cutoff-parametrized coupling, k_min -> ModeFunction on [k_min, k_max]"""
    return lambda k_min: ModeFunction.geometric(func, k_min, k_max, n_points, c)


class CoherentTerm(NamedTuple):
    weight: float
    f: np.ndarray
    g: np.ndarray


@dataclass(frozen=True, eq=False)
class CoherentMixture:
    """Convex combination of coherent states T(f_n, g_n) Omega"""
    terms: Tuple[CoherentTerm, ...]

    @classmethod
    def vacuum(cls, n_modes: int) -> 'CoherentMixture':
        zero = np.zeros(n_modes)
        return cls((CoherentTerm(1.0, zero, zero),))

    @classmethod
    def single(cls, f, g) -> 'CoherentMixture':
        return cls((CoherentTerm(1.0, np.atleast_1d(np.asarray(f, dtype=float)),
                                 np.atleast_1d(np.asarray(g, dtype=float))),))

    def validate(self, n_modes: Optional[int] = None) -> 'CoherentMixture':
        if not self.terms:
            raise WeightSumInvalidError('coherent mixture has no terms')
        total = sum(term.weight for term in self.terms)
        if abs(total - 1.0) > NORMALIZATION_TOL or any(term.weight < 0 for term in self.terms):
            raise WeightSumInvalidError(f'coherent mixture weights must be non-negative and sum to 1, got {total:.12g}')
        for term in self.terms:
            if term.f.shape != term.g.shape or (n_modes is not None and term.f.size != n_modes):
                raise GridMismatchError('coherent state amplitudes do not match the mode grid')
            if not (np.all(np.isfinite(term.f)) and np.all(np.isfinite(term.g))):
                raise ValueError('coherent state amplitudes must be finite')
        return self


@dataclass(frozen=True, eq=False)
class DisplacementPair:
    """U_{alpha beta}(t) = exp(i phase) T(-F, -G); `weights` defines the inner product"""
    F: np.ndarray
    G: np.ndarray
    t: float
    phase: float
    weights: np.ndarray

    @property
    def norm_sq(self) -> float:
        return float(np.sum((self.F ** 2 + self.G ** 2) * self.weights))


def _ir_guard(f: ModeFunction, override: bool, cap: float) -> None:
    if not override and not f.is_ir_regular(cap):
        raise IRDivergentWithoutOverrideError(
            f'||eps^-1 f||^2 = {f.ir_norm_sq:.4g} exceeds the cap {cap:.4g}; pass override to evaluate on the grid')


def _displacements(f: ModeFunction, alpha: float, beta: float,
                   times: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """F, G of shape (n_times, n_modes) and the phases of shape (n_times,)"""
    eps, h = f.eps, f.h
    d = alpha - beta
    x = np.outer(times, eps)
    # 1 - cos x written as 2 sin^2(x/2)
    big_f = d * 2.0 * np.sin(x / 2) ** 2 * h
    big_g = d * np.sin(x) * h
    sin_term = (np.sin(x) * h * h) @ f.weights
    phase = 0.5 * (alpha ** 2 - beta ** 2) * (sin_term - times * f.dressing_energy)
    return big_f, big_g, phase


def displacement_pair(f: ModeFunction, alpha: float, beta: float, t: float, override: bool = False,
                      ir_cap: float = DEFAULT_IR_CAP) -> DisplacementPair:
    _ir_guard(f, override, ir_cap)
    big_f, big_g, phase = _displacements(f, alpha, beta, np.array([float(t)]))
    return DisplacementPair(big_f[0], big_g[0], float(t), float(phase[0]), f.weights)


def weyl_phase(f1, g1, f2, g2, weights) -> np.ndarray:
    """Phase of T(f1, g1) T(f2, g2) = exp(i phase) T(f1 + f2, g1 + g2); broadcasts over leading axes"""
    return 0.5 * (np.sum(f1 * g2 * weights, axis=-1) - np.sum(f2 * g1 * weights, axis=-1))


def _weyl_elements(p, q, phase, bra, ket, weights) -> np.ndarray:
    """
    <bra| exp(i phase) T(p, q) |ket> for coherent bra/ket, composing
    T(-f_m, -g_m) T(p, q) T(f_n, g_n) from the left.
    """
    f_m, g_m = bra
    f_n, g_n = ket
    first = weyl_phase(-f_m, -g_m, p, q, weights)
    second = weyl_phase(p - f_m, q - g_m, f_n, g_n, weights)
    x = p - f_m + f_n
    y = q - g_m + g_n
    modulus = np.exp(-0.25 * np.sum((x ** 2 + y ** 2) * weights, axis=-1))
    return np.exp(1j * (phase + first + second)) * modulus


def coherent_matrix_element(pair: DisplacementPair, bra: Tuple[np.ndarray, np.ndarray],
                            ket: Tuple[np.ndarray, np.ndarray]) -> complex:
    """<T(f_m, g_m) Omega | U_{alpha beta}(t) | T(f_n, g_n) Omega>"""
    arrays = [np.asarray(a, dtype=float) for a in (*bra, *ket)]
    if any(a.shape != pair.F.shape for a in arrays):
        raise GridMismatchError('coherent amplitudes and displacement live on different grids')
    f_m, g_m, f_n, g_n = arrays
    return complex(_weyl_elements(-pair.F, -pair.G, pair.phase, (f_m, g_m), (f_n, g_n), pair.weights))


def _mixture_trace(big_f, big_g, phase, omega: CoherentMixture, weights) -> np.ndarray:
    out = np.zeros(phase.shape, dtype=complex)
    for term in omega.terms:
        state = (term.f, term.g)
        out += term.weight * _weyl_elements(-big_f, -big_g, phase, state, state, weights)
    return out


def chi_vanhove(omega: CoherentMixture, f: ModeFunction, alpha: float, beta: float, times,
                override: bool = False, ir_cap: float = DEFAULT_IR_CAP) -> np.ndarray:
    """tr(U_{alpha beta}(t) omega) for a mixture of coherent states"""
    omega.validate(f.n_modes)
    times = np.asarray(times, dtype=float)
    if alpha == beta:
        return np.ones(times.size, dtype=complex)
    _ir_guard(f, override, ir_cap)
    out = np.empty(times.size, dtype=complex)
    for start in range(0, times.size, _TIME_CHUNK):
        chunk = times[start:start + _TIME_CHUNK]
        big_f, big_g, phase = _displacements(f, alpha, beta, chunk)
        out[start:start + _TIME_CHUNK] = _mixture_trace(big_f, big_g, phase, omega, f.weights)
    return out


def single_mode_displacements(eps: float, f0: float, alpha: float, beta: float,
                              times) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Displacements and phase of one oscillator with H = P^2/2 + eps^2 Q^2/2 + lambda f0 Q in
    unit-width phase-space coordinates. eps = 0 is the free particle.
    """
    if eps < 0:
        raise NegativeFrequencyError(f'eps must be non-negative, got {eps}')
    t = np.asarray(times, dtype=float)
    d = alpha - beta
    s = alpha ** 2 - beta ** 2
    if eps == 0:
        big_f = d * f0 * t ** 2 / 2
        big_g = d * f0 * t
        phase = -s * f0 ** 2 * t ** 3 / 12
    else:
        x = eps * t
        big_f = d * f0 * 2.0 * np.sin(x / 2) ** 2 / eps ** 2
        big_g = d * f0 * np.sin(x) / eps
        phase = 0.5 * s * f0 ** 2 * (np.sin(x) - x) / eps ** 3
    return big_f, big_g, phase


def single_mode_chi(eps: float, f0: float, alpha: float, beta: float, times,
                    state: Optional[CoherentMixture] = None) -> np.ndarray:
    """
    Decoherence function of a single oscillator, or of a free particle when eps = 0.

    `state` is a one-mode coherent mixture in unit-width coordinates, the vacuum by default.
    """
    state = (state or CoherentMixture.vacuum(1)).validate(1)
    big_f, big_g, phase = single_mode_displacements(eps, f0, alpha, beta, times)
    weights = np.ones(1)
    return _mixture_trace(big_f[:, None], big_g[:, None], phase, state, weights)


def suppression_window(times, chi, level: float) -> Tuple[Optional[float], Optional[float]]:
    """First time |chi| drops below `level` and the first later time it climbs back to it"""
    times = np.asarray(times, dtype=float)
    below = np.abs(np.asarray(chi)) < level
    if not np.any(below):
        return None, None
    first = int(np.argmax(below))
    after = np.flatnonzero(~below[first:])
    regrowth = float(times[first + after[0]]) if after.size else None
    return float(times[first]), regrowth


def vacuum_floor(f: ModeFunction, alpha: float, beta: float) -> float:
    """Lower bound exp(-(alpha - beta)^2 ||eps^-1 f||^2) on the vacuum |chi| for regular couplings"""
    return math.exp(-(alpha - beta) ** 2 * f.ir_norm_sq)


@dataclass(frozen=True)
class IRReport:
    regular: bool
    cutoffs: Tuple[float, ...]
    ir_norms: Tuple[float, ...]
    exponent_at_probe: Tuple[float, ...]
    scaled_probe_times: Tuple[float, ...]
    scaled_exponents: Tuple[float, ...]
    sup_bound: float

    @property
    def divergence_signature(self) -> bool:
        """Strict growth of the scaled exponent from one cutoff to the next"""
        values = self.scaled_exponents
        return all(b > a for a, b in zip(values, values[1:]))

    @property
    def growth_ratios(self) -> Tuple[float, ...]:
        values = self.scaled_exponents
        return tuple(b / a if a > 0 else math.inf for a, b in zip(values, values[1:]))

    def grows_by(self, factor: float) -> bool:
        """Whether the scaled exponent grows by at least `factor` at every cutoff step"""
        return self.divergence_signature and all(r >= factor for r in self.growth_ratios)


def ir_classify(family: Callable[[float], ModeFunction], cutoffs: Sequence[float], t_probe: float,
                alpha: float = 0.5, beta: float = -0.5) -> IRReport:
    """
    Classify a cutoff-parametrized coupling as infrared regular or divergent.

    The exponent D(t) = (||F||^2 + ||G||^2)/4 is reported at t_probe itself and at the
    infrared-scaled time t_probe / (c k_min), where the slowest mode has completed a fixed phase.
    """
    cutoffs = tuple(float(k) for k in cutoffs)
    if not cutoffs or any(k <= 0 for k in cutoffs) or any(b >= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise NonMonotoneCutoffsError(f'cutoffs must be positive and strictly decreasing, got {cutoffs}')

    norms, fixed, scaled_times, scaled = [], [], [], []
    for k_min in cutoffs:
        f = family(k_min)
        norms.append(f.ir_norm_sq)
        fixed.append(0.25 * displacement_pair(f, alpha, beta, t_probe, override=True).norm_sq)
        t_scaled = t_probe / (f.c * k_min)
        scaled_times.append(t_scaled)
        scaled.append(0.25 * displacement_pair(f, alpha, beta, t_scaled, override=True).norm_sq)

    if len(norms) > 1:
        change = abs(norms[-1] - norms[-2]) / max(abs(norms[-1]), np.finfo(float).tiny)
        regular = bool(math.isfinite(norms[-1]) and change < IR_CONVERGENCE_TOL)
    else:
        regular = bool(math.isfinite(norms[-1]))
    sup_bound = (alpha - beta) ** 2 * norms[-1] if regular else math.inf

    report = IRReport(regular, cutoffs, tuple(norms), tuple(fixed), tuple(scaled_times), tuple(scaled), sup_bound)
    if not regular and not report.divergence_signature:
        _LOGGER.warning('Infrared norm diverges but the scaled exponents %s lack the divergence signature', scaled)
    _LOGGER.debug('IR classification: regular=%s norms=%s', regular, norms)
    return report


def dressing_identity_check(f: ModeFunction, lam: float, n_max: int = DEFAULT_FOCK_NMAX) -> float:
    """
    Defect of H_E + lam Phi(f) = T(-lam h, 0) H_E T(lam h, 0) - lam^2/2 (h | eps h) on the lowest
    n_max/2 Fock levels of a single mode.
    """
    # the oracle imports nothing from this module
    from .oracle import FockOracle

    if f.n_modes != 1:
        raise ValueError('dressing identity check is single-mode')
    if n_max < MIN_FOCK_NMAX:
        raise TruncationTooSmallError(f'n_max={n_max} is below the minimum {MIN_FOCK_NMAX}')

    oracle = FockOracle(f.eps, n_max, f.weights)
    h = f.h
    zero = np.zeros(1)
    dressed = oracle.weyl(-lam * h, zero) @ oracle.h_e @ oracle.weyl(lam * h, zero)
    shift = 0.5 * lam ** 2 * f.dressing_energy
    coupled = oracle.h_e + lam * oracle.phi(f.f)
    low = n_max // 2
    diff = (dressed - shift * np.eye(oracle.dim) - coupled)[:low, :low]
    return float(np.linalg.norm(diff, ord=2))

