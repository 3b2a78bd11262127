"""
Commuting models perturbed by a bounded potential V on S+E.

The wave operator is approximated by a time average of exp(iHt) exp(-iH0 t) at horizon T, with
unitarity restored by a polar decomposition. The default Abel average weights t by exp(-t/T)/T and
has the closed form Psi (K o Psi^+ Phi) Phi^+ in the eigenbases of H and H0, where
K_lk = 1 / (1 - i (E_l - E0_k) T). Its Cauchy defect against T/2 halves on each doubling once T is
large against the inverse of the smallest nonzero gap between the two spectra.

On a finite surrogate the decay of V-induced transients needs H to share the spectrum of H0;
`isospectral_potential` builds such perturbations.
"""

import enum
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from .araki_zurek import DecoherenceCurve, SystemSpec, validate_model
from .const import (
    DEFAULT_CLUSTER_TOL,
    DEFAULT_POTENTIAL_CAP,
    MIN_MOLLER_SAMPLES,
    UNITARY_TOL,
)
from .exc import DimensionMismatchError, NonUnitaryInputError, PotentialTooStrongError
from .oracle import FiniteModel, full_evolution
from .qcore import SpectralPropagator, as_density, as_hermitian, block_norm_table, random_hermitian, trace_norm

_LOGGER = logging.getLogger(__name__)
_MAX_BRACKET_DOUBLINGS = 60


@dataclass(frozen=True, eq=False)
class ScatteringModel:
    spec: SystemSpec
    h_e: np.ndarray
    v_e: np.ndarray
    v: np.ndarray

    @classmethod
    def build(cls, h_s, v_s, h_e, v_e, v, potential_cap: float = DEFAULT_POTENTIAL_CAP,
              cluster_tol: float = DEFAULT_CLUSTER_TOL) -> 'ScatteringModel':
        """
        :raises PotentialTooStrongError: when ||V|| exceeds `potential_cap`
        """
        spec = validate_model(h_s, v_s, cluster_tol=cluster_tol)
        h_e, v_e = as_hermitian(h_e, 'H_E'), as_hermitian(v_e, 'V_E')
        v = as_hermitian(v, 'V')
        dim = spec.dim * h_e.shape[0]
        if h_e.shape != v_e.shape or v.shape != (dim, dim):
            raise DimensionMismatchError(f'V must act on the {dim}-dimensional S+E space')
        strength = float(np.linalg.norm(v, ord=2))
        if strength > potential_cap:
            raise PotentialTooStrongError(f'||V|| = {strength:.4g} exceeds the cap {potential_cap:.4g}')
        return cls(spec, h_e, v_e, v)

    @property
    def dim_e(self) -> int:
        return self.h_e.shape[0]

    @property
    def dim(self) -> int:
        return self.spec.dim * self.dim_e

    @cached_property
    def finite_model(self) -> FiniteModel:
        return FiniteModel(self.spec.h_s, self.spec.v_s, self.h_e, self.v_e)

    @property
    def h0(self) -> np.ndarray:
        return self.finite_model.h_total

    @cached_property
    def h(self) -> np.ndarray:
        return self.h0 + self.v

    @cached_property
    def propagator(self) -> SpectralPropagator:
        return SpectralPropagator(self.h, 'H')

    @cached_property
    def free_propagator(self) -> SpectralPropagator:
        return SpectralPropagator(self.h0, 'H0')

    @property
    def is_free(self) -> bool:
        return not np.any(self.v)


@enum.unique
class MollerKernel(enum.Enum):
    """Time average used for the wave operator approximant"""
    ABEL = 'abel'
    WINDOW = 'window'


class MollerReport(NamedTuple):
    omega: np.ndarray
    defect: float
    horizon: float
    n_samples: int
    kernel: MollerKernel = MollerKernel.ABEL


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def _window_mean(model: ScatteringModel, horizon: float, n_samples: int) -> np.ndarray:
    total = np.zeros((model.dim, model.dim), dtype=complex)
    for t in np.linspace(horizon / 2, horizon, n_samples):
        total += model.propagator.unitary(-t) @ model.free_propagator.unitary(t)
    return total / n_samples


def _abel_mean(model: ScatteringModel, horizon: float) -> np.ndarray:
    psi, phi = model.propagator.vectors, model.free_propagator.vectors
    kernel = 1.0 / (1.0 - 1j * np.subtract.outer(model.propagator.energies, model.free_propagator.energies) * horizon)
    return psi @ (kernel * (psi.conj().T @ phi)) @ phi.conj().T


def _averaged_wave_operator(model: ScatteringModel, horizon: float, n_samples: int,
                            kernel: MollerKernel) -> np.ndarray:
    mean = _abel_mean(model, horizon) if kernel is MollerKernel.ABEL else _window_mean(model, horizon, n_samples)
    unitary, _ = scipy.linalg.polar(mean)
    defect = unitarity_defect(unitary)
    if defect > UNITARY_TOL:
        raise NonUnitaryInputError(f'averaged wave operator is singular (unitarity defect {defect:.3e})')
    return unitary


def moller_approx(model: ScatteringModel, horizon: float, n_samples: int = MIN_MOLLER_SAMPLES,
                  kernel: MollerKernel = MollerKernel.ABEL) -> MollerReport:
    """
    Averaged wave operator at `horizon` and its Cauchy defect against the approximant at half
    the horizon.

    `n_samples` sets the grid of the window average over [T/2, T]; the Abel average is evaluated
    in closed form and only validates it.
    """
    if horizon <= 0:
        raise ValueError('horizon must be positive')
    if n_samples < MIN_MOLLER_SAMPLES:
        raise ValueError(f'need at least {MIN_MOLLER_SAMPLES} samples, got {n_samples}')
    kernel = MollerKernel(kernel)
    if model.is_free:
        return MollerReport(np.eye(model.dim, dtype=complex), 0.0, horizon, n_samples, kernel)
    omega = _averaged_wave_operator(model, horizon, n_samples, kernel)
    previous = _averaged_wave_operator(model, horizon / 2, n_samples, kernel)
    defect = float(np.linalg.norm(omega - previous, ord=2))
    _LOGGER.debug('Wave operator (%s) at T=%g: Cauchy defect %.3e', kernel.value, horizon, defect)
    return MollerReport(omega, defect, horizon, n_samples, kernel)


def moller_defects(model: ScatteringModel, horizons: Sequence[float], n_samples: int = MIN_MOLLER_SAMPLES,
                   kernel: MollerKernel = MollerKernel.ABEL) -> List[float]:
    return [moller_approx(model, horizon, n_samples, kernel).defect for horizon in horizons]


def residual_from_matrices(h: np.ndarray, h0: np.ndarray, w: np.ndarray, omega_hat: np.ndarray, t: float) -> float:
    """||U(t) W U(t)^+ - U0(t) Omega^+ W Omega U0(t)^+||_1 for explicit generators"""
    defect = unitarity_defect(omega_hat)
    if defect > UNITARY_TOL:
        raise NonUnitaryInputError(f'Omega is not unitary (defect {defect:.3e})')
    if not (h.shape == h0.shape == w.shape == omega_hat.shape):
        raise DimensionMismatchError('generators, state and wave operator must share one shape')
    full = SpectralPropagator(h, 'H').evolve(w, t)
    asymptotic = SpectralPropagator(h0, 'H0').evolve(omega_hat.conj().T @ w @ omega_hat, t)
    return trace_norm(full - asymptotic)


def equivalence_residual(model: ScatteringModel, w, omega_hat: np.ndarray, t: float) -> float:
    w = as_density(w, 'W')
    if w.shape[0] != model.dim:
        raise DimensionMismatchError(f'W has dim {w.shape[0]}, model has dim {model.dim}')
    return residual_from_matrices(model.h, model.h0, w, omega_hat, t)


def residual_trend(model: ScatteringModel, w, omega_hat: np.ndarray, horizon: float,
                   n_samples: int = 16) -> Tuple[float, float]:
    """Median residual over [0, T/2] and over [T/2, T]"""
    early = [equivalence_residual(model, w, omega_hat, t) for t in np.linspace(0, horizon / 2, n_samples)]
    late = [equivalence_residual(model, w, omega_hat, t) for t in np.linspace(horizon / 2, horizon, n_samples)]
    return float(np.median(early)), float(np.median(late))


def scattering_block_decay(model: ScatteringModel, w0, times) -> Tuple[DecoherenceCurve, np.ndarray]:
    """
    Exact reduced dynamics under H and the off-diagonal block norms against the sectors of V_S.

    The returned curve has no decoherence function, only block norms.
    """
    times = np.asarray(times, dtype=float)
    states = full_evolution(model.finite_model, w0, times, h_total=model.h)
    family = model.spec.sectors
    pairs = tuple((m, n) for m in range(len(family)) for n in range(m + 1, len(family)))
    block_tn = np.empty((times.size, len(pairs)))
    block_hs = np.empty((times.size, len(pairs)))
    for i, rho in enumerate(states):
        tn, hs = block_norm_table(family.to_sector_basis(rho), family.groups)
        for j, (m, n) in enumerate(pairs):
            block_tn[i, j] = tn[m, n]
            block_hs[i, j] = hs[m, n]
    return DecoherenceCurve(times, pairs, None, block_tn, block_hs), states


def suppression_factor(curve: DecoherenceCurve, pair: int = 0) -> float:
    """Off-diagonal trace norm at the first sample over its value at the last"""
    final = curve.block_tn[-1, pair]
    return float('inf') if final == 0 else float(curve.block_tn[0, pair] / final)


def decay_times(model: ScatteringModel, initial_states: Sequence[np.ndarray], times, level: float = 0.1,
                pair: int = 0) -> List[Optional[float]]:
    """
    Per initial state, the first time the off-diagonal trace norm falls below `level` times its
    initial value. Exposes how unevenly the decay proceeds across initial states.
    """
    out = []
    for w0 in initial_states:
        curve, _ = scattering_block_decay(model, w0, times)
        norms = curve.block_tn[:, pair]
        below = np.flatnonzero(norms < level * norms[0]) if norms[0] > 0 else np.zeros(0, dtype=int)
        out.append(float(curve.times[below[0]]) if below.size else None)
    return out


def random_potential(dim: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Random Hermitian V with spectral norm `strength`"""
    v = random_hermitian(dim, rng)
    return strength * v / np.linalg.norm(v, ord=2)


def isospectral_potential(h0, strength: float, rng: np.random.Generator, min_gap: float = 0.0) -> np.ndarray:
    """
    V = exp(iK) H0 exp(-iK) - H0 with spectral norm `strength`, so that H0 + V is unitarily
    equivalent to H0.

    K is a random Hermitian generator whose matrix elements between eigenvectors of H0 with energy
    gap below `min_gap` are removed, and its scale is found by root search on ||V||.

    :raises ValueError: when `min_gap` leaves no coupled pair of levels or `strength` is out of reach
    """
    h0 = as_hermitian(h0, 'H0')
    if strength < 0:
        raise ValueError('strength must be non-negative')
    if strength == 0:
        return np.zeros_like(h0, dtype=complex)
    energies, basis = scipy.linalg.eigh(h0)
    generator = random_hermitian(h0.shape[0], rng)
    generator[np.abs(np.subtract.outer(energies, energies)) < min_gap] = 0.0
    generator = basis @ generator @ basis.conj().T
    rate = float(np.linalg.norm(generator @ h0 - h0 @ generator, ord=2))
    if rate <= UNITARY_TOL:
        raise ValueError(f'no pair of levels of H0 is separated by at least {min_gap:g}')
    k_energies, k_vectors = scipy.linalg.eigh(generator)

    def potential(scale: float) -> np.ndarray:
        rotation = (k_vectors * np.exp(1j * scale * k_energies)) @ k_vectors.conj().T
        v = rotation @ h0 @ rotation.conj().T - h0
        return 0.5 * (v + v.conj().T)

    def excess(scale: float) -> float:
        return float(np.linalg.norm(potential(scale), ord=2)) - strength

    upper = 2 * strength / rate
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if excess(upper) > 0:
            break
        upper *= 2
    else:
        raise ValueError(f'no rotation of H0 reaches ||V|| = {strength:g}')
    scale = scipy.optimize.brentq(excess, 0.0, upper, xtol=1e-14)
    _LOGGER.debug('Isospectral potential: generator scale %.4g for ||V|| = %g', scale, strength)
    return potential(scale)
