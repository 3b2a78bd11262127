"""
Scenario documents, scenario execution and run artifacts.

A scenario document is plain text made of `[section]` headers and `key = value` lines. Matrices
are written as bracketed row lists, `[[1, 0.5i], [-0.5i, 1]]`, arrays as comma-separated values.
"""

import asyncio
import enum
import hashlib
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import matplotlib
import numpy as np
import scipy
from matplotlib.figure import Figure

from .araki_zurek import (
    DecoherenceCurve,
    MixtureInitialState,
    MixtureTerm,
    SpectralDensity,
    SystemSpec,
    chi_spectral,
    fit_decay_bound,
    induced_sector_residual,
    mixture_dynamics,
    recurrence_time,
    reduced_blocks_factorized,
    reduced_blocks_from_table,
    sector_chi_table,
    validate_model,
)
from .const import (
    CSV_FLOAT_FMT,
    CSV_HEADER,
    DEFAULT_CLUSTER_TOL,
    DEFAULT_FOCK_NMAX,
    DEFAULT_GAUSSIAN_SPAN,
    DEFAULT_GRID_POINTS,
    DEFAULT_MODE_POINTS,
    DEFAULT_POTENTIAL_CAP,
    DEFAULT_SURROGATE_DIM,
    DIMENSION_CAP,
    FIT_MIN_SAMPLES,
    HERMITIAN_TOL,
    MANIFEST_NAME,
    MIN_FOCK_NMAX,
    MIN_MOLLER_SAMPLES,
    MOLLER_HALVING_RATIO,
    NORMALIZATION_TOL,
    OUTPUT_FORMATS,
    POSITIVITY_TOL,
    THREADS_ENV,
    TRACE_TOL,
)
from .exc import InsufficientDecayError, OracleMismatchError, ScenarioParseError, ScenarioValidationError
from .oracle import FiniteModel, FockOracle, equal_weight_surrogate, fock_chi, full_evolution, spectral_density_from_operator
from .qcore import block_norm_table, hermiticity_defect, random_hermitian, trace_norm, validate_density
from .scattering import (
    MollerKernel,
    ScatteringModel,
    isospectral_potential,
    moller_approx,
    random_potential,
    residual_trend,
    scattering_block_decay,
    suppression_factor,
)
from .vanhove import (
    CoherentMixture,
    CoherentTerm,
    ModeFunction,
    chi_vanhove,
    exp_linear_coupling,
    ir_classify,
    mode_family,
    power_coupling,
    single_mode_chi,
    suppression_window,
    vacuum_floor,
)

try:
    import ujson as json
except ImportError:
    import json

TIMESTAMP_FMT = '%Y-%m-%dT%H:%M:%SZ'
_LOGGER = logging.getLogger(__name__)

Matrix = Tuple[Tuple[complex, ...], ...]
STATE_PRESETS = ('plus', 'zero', 'maximally_mixed')


@enum.unique
class ModelKind(enum.Enum):
    """Scenario models"""
    ARAKI_ZUREK = 'araki_zurek'
    VANHOVE = 'vanhove'
    SINGLE_MODE = 'single_mode'
    FREE_PARTICLE = 'free_particle'
    SCATTERING = 'scattering'


@enum.unique
class DensityFamily(enum.Enum):
    """Spectral measures of the environment coupling"""
    GAUSSIAN = 'gaussian'
    BUMP = 'bump'
    DISCRETE = 'discrete'
    LATTICE = 'lattice'


@enum.unique
class CouplingFamily(enum.Enum):
    """Boson coupling functions f(k)"""
    EXP_LINEAR = 'exp_linear'
    POWER = 'power'


@enum.unique
class PotentialKind(enum.Enum):
    """Perturbations of scattering scenarios"""
    ISOSPECTRAL = 'isospectral'
    RANDOM = 'random'



def _opt(default, kind):
    return field(default=default, metadata={'kind': kind})


@dataclass(frozen=True)
class ScenarioSection:
    name: str = _opt('scenario', 'str')
    model: ModelKind = _opt(ModelKind.ARAKI_ZUREK, ModelKind)


@dataclass(frozen=True)
class SystemConfig:
    h_s: Matrix = _opt(((0j, 0j), (0j, 0j)), 'matrix')
    v_s: Matrix = _opt(((0.5 + 0j, 0j), (0j, -0.5 + 0j)), 'matrix')
    cluster_tol: float = _opt(DEFAULT_CLUSTER_TOL, 'float')

    @property
    def dim(self) -> int:
        return len(self.h_s)


@dataclass(frozen=True)
class EnvironmentConfig:
    family: DensityFamily = _opt(DensityFamily.GAUSSIAN, DensityFamily)
    mean: float = _opt(0.0, 'float')
    sigma: float = _opt(1.0, 'float')
    smoothness: int = _opt(1, 'int')
    half_width: float = _opt(1.0, 'float')
    n_points: int = _opt(DEFAULT_GRID_POINTS, 'int')
    span: float = _opt(DEFAULT_GAUSSIAN_SPAN, 'float')
    spacing: float = _opt(0.5, 'float')
    n_atoms: int = _opt(21, 'int')
    atoms: Tuple[float, ...] = _opt((), 'floats')
    probabilities: Tuple[float, ...] = _opt((), 'floats')
    coupling: CouplingFamily = _opt(CouplingFamily.EXP_LINEAR, CouplingFamily)
    exponent: float = _opt(-0.25, 'float')
    k_min: float = _opt(1e-3, 'float')
    k_max: float = _opt(20.0, 'float')
    n_modes: int = _opt(DEFAULT_MODE_POINTS, 'int')
    c: float = _opt(1.0, 'float')
    cutoffs: Tuple[float, ...] = _opt((), 'floats')
    t_probe: float = _opt(10.0, 'float')
    ir_growth: float = _opt(1.0, 'float')
    eps: float = _opt(1.0, 'float')
    f0: float = _opt(1.0, 'float')
    dim_e: int = _opt(DEFAULT_SURROGATE_DIM, 'int')
    v_norm: float = _opt(0.05, 'float')
    potential_cap: float = _opt(DEFAULT_POTENTIAL_CAP, 'float')
    seed: int = _opt(0, 'int')
    potential: PotentialKind = _opt(PotentialKind.ISOSPECTRAL, PotentialKind)
    level_spacing: float = _opt(1.0, 'float')
    min_gap: float = _opt(1.0, 'float')
    moller_kernel: MollerKernel = _opt(MollerKernel.ABEL, MollerKernel)
    moller_horizon: float = _opt(10.0, 'float')
    moller_samples: int = _opt(16, 'int')


@dataclass(frozen=True)
class InitialStateConfig:
    rho0: Union[str, Matrix] = _opt('plus', 'state')
    mixture_weights: Tuple[float, ...] = _opt((), 'floats')
    mixture_sigmas: Tuple[float, ...] = _opt((), 'floats')
    coherent_weights: Tuple[float, ...] = _opt((), 'floats')
    coherent_f: Tuple[float, ...] = _opt((), 'floats')
    coherent_g: Tuple[float, ...] = _opt((), 'floats')


@dataclass(frozen=True)
class TimeConfig:
    t_max: float = _opt(10.0, 'float')
    n_steps: int = _opt(1001, 'int')


@dataclass(frozen=True)
class OracleConfig:
    enabled: bool = _opt(True, 'bool')
    dim_e: int = _opt(32, 'int')
    n_max: int = _opt(DEFAULT_FOCK_NMAX, 'int')
    tolerance: float = _opt(1e-10, 'float')


@dataclass(frozen=True)
class OutputConfig:
    directory: str = _opt('runs', 'str')
    formats: Tuple[str, ...] = _opt(OUTPUT_FORMATS, 'formats')


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete scenario; every section has defaults"""
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    system: SystemConfig = field(default_factory=SystemConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    initial_state: InitialStateConfig = field(default_factory=InitialStateConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def name(self) -> str:
        return self.scenario.name

    @property
    def model(self) -> ModelKind:
        return self.scenario.model

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.time.t_max, self.time.n_steps)

    def with_overrides(self, output_dir: Optional[str] = None, oracle: Optional[bool] = None) -> 'ScenarioConfig':
        config = self
        if output_dir is not None:
            config = replace(config, output=replace(config.output, directory=str(output_dir)))
        if oracle is not None:
            config = replace(config, oracle=replace(config.oracle, enabled=oracle))
        return config


_SECTIONS = {f.name: f.default_factory for f in fields(ScenarioConfig)}
_HEADER_RE = re.compile(r'^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$')
_ENTRY_RE = re.compile(r'^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$')
_ROW_RE = re.compile(r'\[([^\[\]]*)\]')


def _parse_complex(token: str) -> complex:
    token = token.strip().replace(' ', '')
    if token.endswith('i'):
        token = token[:-1] + 'j'
    return complex(token)


def _format_complex(z: complex) -> str:
    sign = '-' if math.copysign(1.0, z.imag) < 0 else '+'
    return f'{z.real!r}{sign}{abs(z.imag)!r}i'


def _parse_matrix(text: str) -> Matrix:
    text = text.strip()
    if not (text.startswith('[[') and text.endswith(']]')):
        raise ValueError('matrix must be written as [[a, b], [c, d]]')
    rows = _ROW_RE.findall(text[1:-1])
    matrix = tuple(tuple(_parse_complex(entry) for entry in row.split(',')) for row in rows)
    if not matrix or any(len(row) != len(matrix) for row in matrix):
        raise ValueError('matrix must be square')
    return matrix


def _format_matrix(matrix: Matrix) -> str:
    return '[' + ', '.join('[' + ', '.join(_format_complex(z) for z in row) + ']' for row in matrix) + ']'


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('true', 'on', 'yes', '1'):
        return True
    if lowered in ('false', 'off', 'no', '0'):
        return False
    raise ValueError(f'expected a boolean, got {text!r}')


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.split(',') if x.strip())


def _parse_state(text: str) -> Union[str, Matrix]:
    text = text.strip()
    if text.startswith('['):
        return _parse_matrix(text)
    if text not in STATE_PRESETS:
        raise ValueError(f'unknown state {text!r}; expected one of {", ".join(STATE_PRESETS)} or a matrix')
    return text


def _parse_value(kind, text: str):
    if isinstance(kind, type) and issubclass(kind, enum.Enum):
        try:
            return kind(text.strip())
        except ValueError:
            raise ValueError(f'expected one of {", ".join(m.value for m in kind)}, got {text.strip()!r}') from None
    parsers: Dict[str, Callable[[str], Any]] = {
        'str': str.strip,
        'float': lambda s: float(s),
        'int': lambda s: int(s),
        'bool': _parse_bool,
        'floats': _parse_floats,
        'matrix': _parse_matrix,
        'state': _parse_state,
        'formats': lambda s: tuple(x.strip() for x in s.split(',') if x.strip()),
    }
    return parsers[kind](text)


def _format_value(kind, value) -> str:
    if isinstance(value, enum.Enum):
        return value.value
    if kind == 'float':
        return repr(float(value))
    if kind == 'bool':
        return 'true' if value else 'false'
    if kind == 'floats':
        return ', '.join(repr(float(x)) for x in value)
    if kind == 'formats':
        return ', '.join(value)
    if kind == 'matrix' or (kind == 'state' and not isinstance(value, str)):
        return _format_matrix(value)
    return str(value)


def _read_document(text: str) -> Dict[str, Dict[str, str]]:
    """Split a document into sections of raw values, raising on malformed lines"""
    sections: Dict[str, Dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = re.split(r'[#;]', raw, maxsplit=1)[0].strip()
        if not line:
            continue
        header = _HEADER_RE.match(line)
        if header:
            current = header.group(1)
            if current not in _SECTIONS:
                raise ScenarioParseError(lineno, f'unknown section [{current}]')
            if current in sections:
                raise ScenarioParseError(lineno, f'duplicate section [{current}]')
            sections[current] = {}
            continue
        entry = _ENTRY_RE.match(line)
        if not entry:
            raise ScenarioParseError(lineno, f'expected "[section]" or "key = value", got {line!r}')
        if current is None:
            raise ScenarioParseError(lineno, 'key outside of any section')
        key, value = entry.group(1), entry.group(2).strip()
        if key in sections[current]:
            raise ScenarioParseError(lineno, f'duplicate key {key!r} in [{current}]')
        sections[current][key] = value
    return sections


def parse_scenario(text: str) -> ScenarioConfig:
    """
    Parse and validate a scenario document.

    :raises ScenarioParseError: on the first malformed line
    :raises ScenarioValidationError: carrying every conversion and validation error
    """
    raw = _read_document(text)
    errors: List[str] = []
    blocks = {}
    for section, factory in _SECTIONS.items():
        given = dict(raw.get(section, {}))
        values = {}
        for f in fields(factory):
            if f.name not in given:
                continue
            try:
                values[f.name] = _parse_value(f.metadata['kind'], given.pop(f.name))
            except ValueError as err:
                errors.append(f'{section}.{f.name}: {err}')
        errors.extend(f'{section}.{key}: unknown key' for key in given)
        blocks[section] = factory(**values)
    if errors:
        raise ScenarioValidationError(errors)

    config = ScenarioConfig(**blocks)
    errors = validate_config(config)
    if errors:
        raise ScenarioValidationError(errors)
    return config


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text('utf-8'))


def serialize(config: ScenarioConfig) -> str:
    """Write every key of every section, so that parsing the result restores `config`"""
    lines = []
    for section in fields(config):
        block = getattr(config, section.name)
        lines.append(f'[{section.name}]')
        for f in fields(block):
            lines.append(f'{f.name} = {_format_value(f.metadata["kind"], getattr(block, f.name))}')
        lines.append('')
    return '\n'.join(lines)


def _grid_spacing(env: EnvironmentConfig, sigma: float) -> float:
    if env.family is DensityFamily.GAUSSIAN:
        return 2 * env.span * sigma / (env.n_points - 1)
    if env.family is DensityFamily.BUMP:
        return 2 * env.half_width / (env.n_points - 1)
    return 0.0


def _validate_environment(env: EnvironmentConfig, model: ModelKind) -> List[str]:
    errors = []
    positive = ('sigma', 'half_width', 'span', 'spacing', 'k_min', 'c', 't_probe', 'potential_cap', 'moller_horizon',
                'level_spacing')
    errors.extend(f'environment.{name} must be positive' for name in positive if not getattr(env, name) > 0)
    if env.n_points < 2 or env.n_modes < 2:
        errors.append('environment.n_points and environment.n_modes must be at least 2')
    if env.smoothness < 0:
        errors.append('environment.smoothness must be non-negative')
    if env.n_atoms < 1 or env.dim_e < 1:
        errors.append('environment.n_atoms and environment.dim_e must be at least 1')
    if not env.k_max > env.k_min:
        errors.append('environment.k_max must exceed environment.k_min')
    if any(k <= 0 for k in env.cutoffs) or any(b >= a for a, b in zip(env.cutoffs, env.cutoffs[1:])):
        errors.append('environment.cutoffs must be positive and strictly decreasing')
    if env.ir_growth < 1:
        errors.append('environment.ir_growth must be at least 1')
    if env.eps < 0:
        errors.append('environment.eps must be non-negative')
    if model is ModelKind.SINGLE_MODE and env.eps == 0:
        errors.append('environment.eps must be positive for single_mode; use free_particle for eps = 0')
    if env.v_norm < 0:
        errors.append('environment.v_norm must be non-negative')
    elif env.v_norm > env.potential_cap:
        errors.append('environment.v_norm exceeds environment.potential_cap')
    if env.min_gap < 0:
        errors.append('environment.min_gap must be non-negative')
    if env.moller_samples < MIN_MOLLER_SAMPLES:
        errors.append(f'environment.moller_samples must be at least {MIN_MOLLER_SAMPLES}')
    if env.family is DensityFamily.DISCRETE:
        if not env.atoms:
            errors.append('environment.atoms is required for the discrete family')
        if env.probabilities:
            if len(env.probabilities) != len(env.atoms):
                errors.append('environment.probabilities must match environment.atoms in length')
            elif abs(sum(env.probabilities) - 1.0) > NORMALIZATION_TOL or min(env.probabilities) < 0:
                errors.append('environment.probabilities must be non-negative and sum to 1')
        if len(set(env.atoms)) != len(env.atoms):
            errors.append('environment.atoms must be distinct')
    if model is ModelKind.SCATTERING and env.family is not DensityFamily.GAUSSIAN:
        errors.append('scattering scenarios use the gaussian environment family')
    return errors


def validate_config(config: ScenarioConfig) -> List[str]:
    """All consistency errors of a scenario, empty when it is runnable"""
    errors = []
    model = config.model
    system = config.system
    if not config.time.t_max > 0:
        errors.append('time.t_max must be positive')
    if config.time.n_steps < 2:
        errors.append('time.n_steps must be at least 2')
    if not system.cluster_tol > 0:
        errors.append('system.cluster_tol must be positive')

    h_s = np.array(system.h_s, dtype=complex)
    v_s = np.array(system.v_s, dtype=complex)
    system_ok = h_s.shape == v_s.shape
    if not system_ok:
        errors.append(f'system.h_s {h_s.shape} and system.v_s {v_s.shape} differ in shape')
    for name, op in (('h_s', h_s), ('v_s', v_s)):
        if hermiticity_defect(op) > HERMITIAN_TOL:
            errors.append(f'system.{name} is not Hermitian')
            system_ok = False

    state = config.initial_state
    if not isinstance(state.rho0, str) and len(state.rho0) != system.dim:
        errors.append(f'initial_state.rho0 has dim {len(state.rho0)}, system has dim {system.dim}')
    if state.mixture_weights or state.mixture_sigmas:
        total = sum(state.mixture_weights)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            errors.append(f'initial_state.mixture_weights must sum to 1 (normalization of the mixed initial state), '
                          f'got {total:.12g}')
        if len(state.mixture_sigmas) != len(state.mixture_weights):
            errors.append('initial_state.mixture_sigmas must match initial_state.mixture_weights in length')
        if any(s <= 0 for s in state.mixture_sigmas):
            errors.append('initial_state.mixture_sigmas must be positive')
        if model is not ModelKind.ARAKI_ZUREK:
            errors.append('initial_state mixtures are only supported by araki_zurek')
    if state.coherent_weights or state.coherent_f or state.coherent_g:
        lengths = {len(state.coherent_weights), len(state.coherent_f), len(state.coherent_g)}
        if len(lengths) != 1:
            errors.append('initial_state.coherent_weights, coherent_f and coherent_g must have one length')
        if abs(sum(state.coherent_weights) - 1.0) > NORMALIZATION_TOL or any(w < 0 for w in state.coherent_weights):
            errors.append('initial_state.coherent_weights must be non-negative and sum to 1')
        if model not in (ModelKind.VANHOVE, ModelKind.SINGLE_MODE, ModelKind.FREE_PARTICLE):
            errors.append('initial_state coherent terms need a boson environment')

    errors.extend(_validate_environment(config.environment, model))

    oracle = config.oracle
    if oracle.n_max < MIN_FOCK_NMAX:
        errors.append(f'oracle.n_max must be at least {MIN_FOCK_NMAX}')
    if not oracle.tolerance > 0:
        errors.append('oracle.tolerance must be positive')
    if oracle.dim_e < 1:
        errors.append('oracle.dim_e must be at least 1')
    env_dim = config.environment.dim_e if model is ModelKind.SCATTERING else oracle.dim_e
    if system.dim * env_dim > DIMENSION_CAP:
        errors.append(f'system and environment surrogate exceed the dimension cap {DIMENSION_CAP}')

    unknown = set(config.output.formats) - set(OUTPUT_FORMATS)
    if unknown:
        errors.append(f'output.formats has unsupported entries {sorted(unknown)}')

    env = config.environment
    if model is ModelKind.ARAKI_ZUREK and system_ok and config.time.t_max > 0 and not errors:
        eigenvalues = np.linalg.eigvalsh(v_s)
        sigma = max(state.mixture_sigmas) if state.mixture_sigmas else env.sigma
        product = (eigenvalues[-1] - eigenvalues[0]) * config.time.t_max * _grid_spacing(env, sigma)
        if product > math.pi:
            errors.append(f'Nyquist condition violated: |dlambda| t_max grid spacing = {product:.4g} > pi')
    return errors


class Check(NamedTuple):
    name: str
    passed: bool
    hard: bool
    value: Any = None


@dataclass
class ValidationSummary:
    """Hard checks decide the exit status; soft checks are reported only"""
    checks: List[Check]
    oracle_deviation: Optional[float] = None
    oracle_tolerance: Optional[float] = None

    @property
    def oracle_failed(self) -> bool:
        return (self.oracle_deviation is not None and self.oracle_tolerance is not None
                and not self.oracle_deviation <= self.oracle_tolerance)

    @property
    def hard_failures(self) -> List[str]:
        return [check.name for check in self.checks if check.hard and not check.passed]

    @property
    def passed(self) -> bool:
        return not self.hard_failures and not self.oracle_failed

    def to_dict(self) -> Dict[str, Any]:
        return {
            'passed': self.passed,
            'hard_failures': self.hard_failures,
            'oracle_deviation': self.oracle_deviation,
            'oracle_tolerance': self.oracle_tolerance,
            'checks': [{'name': c.name, 'passed': c.passed, 'hard': c.hard, 'value': c.value} for c in self.checks],
        }


@dataclass
class RunArtifacts:
    directory: Path
    files: List[Path]
    manifest: Dict[str, Any]
    summary: ValidationSummary

    @property
    def passed(self) -> bool:
        return self.summary.passed


@dataclass
class _Outcome:
    curve: DecoherenceCurve
    states: np.ndarray
    checks: List[Check]
    oracle_deviation: Optional[float] = None
    reported: Dict[str, Any] = field(default_factory=dict)


def resolve_state(rho0: Union[str, Matrix], dim: int) -> np.ndarray:
    """Named system states are written in the eigenbasis of a diagonal V_S"""
    if not isinstance(rho0, str):
        return np.array(rho0, dtype=complex)
    if rho0 == 'plus':
        return np.full((dim, dim), 1.0 / dim, dtype=complex)
    if rho0 == 'zero':
        out = np.zeros((dim, dim), dtype=complex)
        out[0, 0] = 1.0
        return out
    return np.eye(dim, dtype=complex) / dim


def build_density(env: EnvironmentConfig, sigma: Optional[float] = None) -> SpectralDensity:
    family = env.family
    if family is DensityFamily.GAUSSIAN:
        return SpectralDensity.gaussian(env.mean, env.sigma if sigma is None else sigma, env.n_points, env.span)
    if family is DensityFamily.BUMP:
        return SpectralDensity.bump(env.mean, env.half_width, env.smoothness, env.n_points)
    if family is DensityFamily.LATTICE:
        return SpectralDensity.lattice(env.spacing, env.n_atoms, env.mean)
    return SpectralDensity.discrete_measure(env.atoms, env.probabilities or None)


def _state_check(states: np.ndarray) -> Check:
    worst_trace = worst_herm = 0.0
    min_eig = math.inf
    for rho in states:
        diag = validate_density(rho)
        worst_trace = max(worst_trace, diag.trace_defect)
        worst_herm = max(worst_herm, diag.hermiticity_defect)
        min_eig = min(min_eig, diag.min_eigenvalue)
    passed = worst_trace <= TRACE_TOL and worst_herm <= HERMITIAN_TOL and min_eig >= POSITIVITY_TOL
    return Check('state_validity', passed, True,
                 {'trace_defect': worst_trace, 'hermiticity_defect': worst_herm, 'min_eigenvalue': min_eig})


def _chi_bound_check(curve: DecoherenceCurve) -> Check:
    largest = float(np.max(np.abs(curve.chi))) if curve.chi.size else 0.0
    return Check('chi_bounded', largest <= 1 + 1e-12, True, largest)


def _surrogate_h_e(dim_e: int) -> np.ndarray:
    """Diagonal environment Hamiltonian commuting with every diagonal V_E"""
    return np.diag(np.linspace(0.0, 1.0, dim_e)).astype(complex)


def _max_trace_deviation(a: np.ndarray, b: np.ndarray) -> float:
    return max(trace_norm(x - y) for x, y in zip(a, b))


def _curve_from_states(times: np.ndarray, spec: SystemSpec, chi_table: np.ndarray,
                       states: np.ndarray) -> DecoherenceCurve:
    family = spec.sectors
    pairs = tuple((m, n) for m in range(len(family)) for n in range(m + 1, len(family)))
    chi = np.array([[table[m, n] for m, n in pairs] for table in chi_table]).reshape(times.size, len(pairs))
    block_tn = np.empty((times.size, len(pairs)))
    block_hs = np.empty((times.size, len(pairs)))
    for i, rho in enumerate(states):
        tn, hs = block_norm_table(family.to_sector_basis(rho), family.groups)
        block_tn[i] = [tn[m, n] for m, n in pairs]
        block_hs[i] = [hs[m, n] for m, n in pairs]
    return DecoherenceCurve(times, pairs, chi, block_tn, block_hs)


def _run_araki_zurek(config: ScenarioConfig) -> _Outcome:
    system, env, init = config.system, config.environment, config.initial_state
    spec = validate_model(system.h_s, system.v_s, cluster_tol=system.cluster_tol)
    times = config.times
    rho0 = resolve_state(init.rho0, spec.dim)
    reported: Dict[str, Any] = {}

    if init.mixture_weights:
        terms = tuple(MixtureTerm(c, rho0, build_density(env, sigma))
                      for c, sigma in zip(init.mixture_weights, init.mixture_sigmas))
        mixture = MixtureInitialState(terms)
        states = mixture_dynamics(mixture, spec, times)
        chi_table = sum(term.weight * sector_chi_table(spec.sectors.eigenvalues, term.mu, times) for term in terms)
        curve = _curve_from_states(times, spec, chi_table, states)
        mu = None
    else:
        mu = build_density(env)
        curve, states = reduced_blocks_factorized(rho0, spec, mu, times)

    checks = [_state_check(states), _chi_bound_check(curve)]
    eigenvalues = spec.sectors.eigenvalues

    if mu is not None and mu.discrete:
        for j, (m, n) in enumerate(curve.pairs):
            delta = abs(eigenvalues[m] - eigenvalues[n])
            period = recurrence_time(mu, delta)
            reported[f'recurrence_time_{m}_{n}'] = period
            if math.isfinite(period):
                revival = float(abs(chi_spectral(mu, delta, [period])[0]))
                checks.append(Check(f'recurrence_{m}_{n}', revival > 0.99, False, revival))
    elif times.size >= FIT_MIN_SAMPLES:
        for j, (m, n) in enumerate(curve.pairs):
            try:
                bound, holds = fit_decay_bound(curve, spec.min_gap, pair=j)
            except InsufficientDecayError as err:
                reported[f'decay_fit_{m}_{n}'] = str(err)
                continue
            reported[f'decay_fit_{m}_{n}'] = {'C_gamma': bound.C_gamma, 'C_fit': bound.C_fit, 'gamma': bound.gamma,
                                            'delta': bound.delta}
            checks.append(Check(f'decay_bound_{m}_{n}', holds, False, bound.gamma))

    if len(spec.sectors) > 1:
        rng = np.random.default_rng(env.seed)
        residual = max(induced_sector_residual(states[-1], spec.sectors, random_hermitian(spec.dim, rng))
                       for _ in range(20))
        checks.append(Check('induced_sectors', residual < 1e-3, False, residual))

    deviation = _araki_zurek_oracle(config, spec, rho0, mu, times) if config.oracle.enabled else None
    return _Outcome(curve, states, checks, deviation, reported)


def _araki_zurek_oracle(config: ScenarioConfig, spec: SystemSpec, rho0: np.ndarray,
                        mu: Optional[SpectralDensity], times: np.ndarray) -> float:
    """Closed form on a finite diagonal surrogate against full S+E evolution"""
    env, init, dim_e = config.environment, config.initial_state, config.oracle.dim_e
    if init.mixture_weights:
        width = 6 * max(init.mixture_sigmas)
        atoms = np.linspace(env.mean - width, env.mean + width, dim_e)
        v_e = np.diag(atoms).astype(complex)
        omegas = []
        for sigma in init.mixture_sigmas:
            weights = np.exp(-0.5 * ((atoms - env.mean) / sigma) ** 2)
            omegas.append(np.diag(weights / weights.sum()).astype(complex))
        closed = sum(c * reduced_blocks_factorized(rho0, spec, spectral_density_from_operator(v_e, omega), times)[1]
                     for c, omega in zip(init.mixture_weights, omegas))
        omega = sum(c * w for c, w in zip(init.mixture_weights, omegas))
        validate = all(c >= 0 for c in init.mixture_weights)
    else:
        if mu.discrete:
            v_e = np.diag(mu.lambda_grid).astype(complex)
            omega = np.diag(mu.masses / mu.total_mass).astype(complex)
        else:
            v_e, omega = equal_weight_surrogate(mu, dim_e)
        closed = reduced_blocks_factorized(rho0, spec, spectral_density_from_operator(v_e, omega), times)[1]
        validate = True

    model = FiniteModel.build(spec.h_s, spec.v_s, _surrogate_h_e(v_e.shape[0]), v_e, commuting=True)
    reference = full_evolution(model, np.kron(rho0, omega), times, validate=validate)
    deviation = _max_trace_deviation(closed, reference)
    _LOGGER.info('Oracle deviation %.3e on a %d x %d surrogate', deviation, spec.dim, v_e.shape[0])
    return deviation


def _pair_values(spec: SystemSpec):
    eigenvalues = spec.sectors.eigenvalues
    n = len(eigenvalues)
    return [(m, k, float(eigenvalues[k]), float(eigenvalues[m])) for m in range(n) for k in range(m + 1, n)]


def _boson_table(spec: SystemSpec, times: np.ndarray, chi_for: Callable[[float, float], np.ndarray]) -> np.ndarray:
    """chi_{m,n} = tr(U_{lambda_n lambda_m} omega) for m < n, conjugates below the diagonal"""
    n = len(spec.sectors)
    table = np.ones((times.size, n, n), dtype=complex)
    for m, k, alpha, beta in _pair_values(spec):
        table[:, m, k] = chi_for(alpha, beta)
        table[:, k, m] = np.conj(table[:, m, k])
    return table


def _coupling(env: EnvironmentConfig) -> Callable[[np.ndarray], np.ndarray]:
    return exp_linear_coupling if env.coupling is CouplingFamily.EXP_LINEAR else power_coupling(env.exponent)


def _run_vanhove(config: ScenarioConfig) -> _Outcome:
    system, env, init = config.system, config.environment, config.initial_state
    spec = validate_model(system.h_s, system.v_s, cluster_tol=system.cluster_tol)
    times = config.times
    rho0 = resolve_state(init.rho0, spec.dim)
    f = ModeFunction.geometric(_coupling(env), env.k_min, env.k_max, env.n_modes, env.c)
    if init.coherent_weights:
        omega = CoherentMixture(tuple(CoherentTerm(w, a * f.f, b * f.f) for w, a, b in
                                      zip(init.coherent_weights, init.coherent_f, init.coherent_g)))
    else:
        omega = CoherentMixture.vacuum(f.n_modes)
    override = bool(env.cutoffs)

    table = _boson_table(spec, times, lambda a, b: chi_vanhove(omega, f, a, b, times, override=override))
    curve, states = reduced_blocks_from_table(rho0, spec, table, times)
    checks = [_state_check(states), _chi_bound_check(curve)]
    reported: Dict[str, Any] = {
        'ir_norm_sq': f.ir_norm_sq,
        'bounded_below': f.is_bounded_below,
    }

    report = None
    if env.cutoffs:
        _, _, alpha, beta = _pair_values(spec)[0]
        report = ir_classify(mode_family(_coupling(env), env.k_max, env.n_modes, env.c), env.cutoffs, env.t_probe,
                             alpha, beta)
        reported['ir_classification'] = {
            'regular': report.regular,
            'cutoffs': report.cutoffs,
            'ir_norms': report.ir_norms,
            'exponent_at_probe': report.exponent_at_probe,
            'scaled_probe_times': report.scaled_probe_times,
            'scaled_exponents': report.scaled_exponents,
            'growth_ratios': report.growth_ratios,
            'sup_bound': report.sup_bound,
        }
        if not report.regular:
            checks.append(Check('ir_divergence_signature', report.divergence_signature, True, report.scaled_exponents))
            if env.ir_growth > 1:
                checks.append(Check('ir_growth', report.grows_by(env.ir_growth), True, report.growth_ratios))

    regular = report.regular if report is not None else f.is_ir_regular()
    for j, (m, k, alpha, beta) in enumerate(_pair_values(spec)):
        values = np.abs(curve.chi[:, j])
        reported[f'suppression_window_{m}_{k}'] = suppression_window(times, curve.chi[:, j], 0.5)
        if not init.coherent_weights and regular:
            floor = vacuum_floor(f, alpha, beta)
            checks.append(Check(f'ir_floor_{m}_{k}', float(values.min()) >= floor - 1e-8, True,
                                {'min_abs_chi': float(values.min()), 'floor': floor}))

    if config.oracle.enabled:
        _LOGGER.warning('No truncated-Fock oracle for a %d-mode field; oracle skipped', f.n_modes)
    return _Outcome(curve, states, checks, None, reported)


def _single_mode_state(init: InitialStateConfig) -> CoherentMixture:
    if not init.coherent_weights:
        return CoherentMixture.vacuum(1)
    return CoherentMixture(tuple(CoherentTerm(w, np.array([a]), np.array([b])) for w, a, b in
                                 zip(init.coherent_weights, init.coherent_f, init.coherent_g)))


def _run_single_mode(config: ScenarioConfig, free: bool) -> _Outcome:
    system, env, init = config.system, config.environment, config.initial_state
    spec = validate_model(system.h_s, system.v_s, cluster_tol=system.cluster_tol)
    times = config.times
    rho0 = resolve_state(init.rho0, spec.dim)
    eps = 0.0 if free else env.eps
    state = _single_mode_state(init)

    table = _boson_table(spec, times, lambda a, b: single_mode_chi(eps, env.f0, a, b, times, state))
    curve, states = reduced_blocks_from_table(rho0, spec, table, times)
    checks = [_state_check(states), _chi_bound_check(curve)]
    reported: Dict[str, Any] = {}

    for j, (m, k, alpha, beta) in enumerate(_pair_values(spec)):
        values = curve.chi[:, j]
        if free:
            monotone = bool(np.all(np.diff(np.abs(values)) <= 0))
            checks.append(Check(f'monotone_decay_{m}_{k}', monotone, not init.coherent_weights, monotone))
            continue
        period = 2 * math.pi / eps
        reported['recurrence_time'] = period
        shifted = single_mode_chi(eps, env.f0, alpha, beta, times + period, state)
        if math.isclose(alpha ** 2, beta ** 2, abs_tol=1e-15):
            drift = float(np.max(np.abs(shifted - values)))
        else:
            drift = float(np.max(np.abs(np.abs(shifted) - np.abs(values))))
        checks.append(Check(f'periodic_{m}_{k}', drift <= 1e-12, True, drift))

    deviation = None
    if config.oracle.enabled and free:
        _LOGGER.warning('Free-particle spreading leaves any Fock truncation; oracle skipped')
    elif config.oracle.enabled:
        deviation = _single_mode_oracle(config, spec, state, curve, eps, times)
    return _Outcome(curve, states, checks, deviation, reported)


def _single_mode_oracle(config: ScenarioConfig, spec: SystemSpec, state: CoherentMixture,
                        curve: DecoherenceCurve, eps: float, times: np.ndarray) -> float:
    oracle = FockOracle([1.0], config.oracle.n_max)
    vectors = [(term.weight, oracle.coherent(term.f, term.g)) for term in state.terms]
    f0 = config.environment.f0
    deviation = 0.0
    for j, (_, _, alpha, beta) in enumerate(_pair_values(spec)):
        reference = fock_chi(oracle, oracle.oscillator_hamiltonian(eps, alpha * f0),
                             oracle.oscillator_hamiltonian(eps, beta * f0), times, vectors)
        deviation = max(deviation, float(np.max(np.abs(reference - curve.chi[:, j]))))
    _LOGGER.info('Fock oracle deviation %.3e at n_max=%d', deviation, config.oracle.n_max)
    return deviation


def _scattering_potential(env: EnvironmentConfig, h0: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(env.seed)
    if env.v_norm == 0:
        return np.zeros_like(h0, dtype=complex)
    if env.potential is PotentialKind.RANDOM:
        return random_potential(h0.shape[0], env.v_norm, rng)
    return isospectral_potential(h0, env.v_norm, rng, min_gap=env.min_gap)


def _run_scattering(config: ScenarioConfig) -> _Outcome:
    system, env, init = config.system, config.environment, config.initial_state
    spec = validate_model(system.h_s, system.v_s, cluster_tol=system.cluster_tol)
    times = config.times
    rho0 = resolve_state(init.rho0, spec.dim)
    v_e, omega = equal_weight_surrogate(build_density(env), env.dim_e)
    h_e = np.diag(np.arange(env.dim_e) * env.level_spacing).astype(complex)
    h0 = FiniteModel(spec.h_s, spec.v_s, h_e, v_e).h_total
    model = ScatteringModel.build(spec.h_s, spec.v_s, h_e, v_e, _scattering_potential(env, h0),
                                  potential_cap=env.potential_cap, cluster_tol=system.cluster_tol)
    w0 = np.kron(rho0, omega)

    curve, states = scattering_block_decay(model, w0, times)
    factor = suppression_factor(curve)
    checks = [_state_check(states), Check('suppression', factor >= 10, False, factor)]

    # halving only holds when H shares the spectrum of H0 and the average is the Abel one
    converging = env.potential is PotentialKind.ISOSPECTRAL and env.moller_kernel is MollerKernel.ABEL
    short = moller_approx(model, env.moller_horizon, env.moller_samples, env.moller_kernel)
    long = moller_approx(model, 2 * env.moller_horizon, env.moller_samples, env.moller_kernel)
    halves = long.defect <= MOLLER_HALVING_RATIO * short.defect
    checks.append(Check('moller_defect_halves', halves, converging, [short.defect, long.defect]))
    early, late = residual_trend(model, w0, long.omega, 2 * env.moller_horizon)
    checks.append(Check('residual_trend', late <= early, False, [early, late]))
    reported = {'suppression_factor': factor, 'moller_defects': [short.defect, long.defect],
                'moller_kernel': env.moller_kernel.value, 'residual_medians': [early, late]}

    deviation = None
    if config.oracle.enabled:
        closed = reduced_blocks_factorized(rho0, spec, spectral_density_from_operator(v_e, omega), times)[1]
        deviation = _max_trace_deviation(closed, full_evolution(model.finite_model, w0, times))
        _LOGGER.info('Free-potential control deviation %.3e', deviation)
    return _Outcome(curve, states, checks, deviation, reported)


_RUNNERS: Dict[ModelKind, Callable[[ScenarioConfig], _Outcome]] = {
    ModelKind.ARAKI_ZUREK: _run_araki_zurek,
    ModelKind.VANHOVE: _run_vanhove,
    ModelKind.SINGLE_MODE: lambda config: _run_single_mode(config, free=False),
    ModelKind.FREE_PARTICLE: lambda config: _run_single_mode(config, free=True),
    ModelKind.SCATTERING: _run_scattering,
}


def _prepare_directory(directory: Path) -> None:
    """Create the output directory and make sure it is writable before any work is done"""
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise PermissionError(f'output directory {directory} is not writable')


def write_csv(path: Path, curve: DecoherenceCurve) -> Path:
    fmt = CSV_FLOAT_FMT.format
    nan = complex(math.nan, math.nan)
    lines = [','.join(CSV_HEADER)]
    for i, t in enumerate(curve.times):
        for j, (m, n) in enumerate(curve.pairs):
            z = complex(curve.chi[i, j]) if curve.chi is not None else nan
            lines.append(','.join((fmt(t), str(m), str(n), fmt(z.real), fmt(z.imag), fmt(abs(z)),
                                   fmt(curve.block_tn[i, j]), fmt(curve.block_hs[i, j]))))
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def write_svg(path: Path, name: str, curve: DecoherenceCurve, pair: int) -> Path:
    m, n = curve.pairs[pair]
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    if curve.chi is not None:
        ax.plot(curve.times, np.abs(curve.chi[:, pair]), label='|chi|')
    ax.plot(curve.times, curve.block_tn[:, pair], linestyle='--', label='block trace norm')
    ax.set_xlabel('t')
    ax.set_title(f'{name}: sectors ({m}, {n})')
    ax.legend()
    fig.savefig(path, format='svg', metadata={'Date': None})
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else str(float(value))
    if value is None or isinstance(value, str):
        return value
    return str(value)


def build_manifest(config: ScenarioConfig, files: Sequence[Path], timings: Dict[str, float],
                   summary: ValidationSummary, reported: Dict[str, Any]) -> Dict[str, Any]:
    from . import __version__

    return _jsonable({
        'name': config.name,
        'model': config.model.value,
        'created': datetime.now(timezone.utc).strftime(TIMESTAMP_FMT),
        'input_sha256': hashlib.sha256(serialize(config).encode('utf-8')).hexdigest(),
        'versions': {
            'decoseed': __version__,
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'matplotlib': matplotlib.__version__,
        },
        'timings': timings,
        'files': [path.name for path in files],
        'summary': summary.to_dict(),
        'reported': reported,
    })


def run_scenario(config: ScenarioConfig, output_dir: Optional[Union[str, Path]] = None) -> RunArtifacts:
    """
    Run one scenario and write its artifacts.

    Nothing is written until every computation has finished; files written before a failure are
    removed again.

    :raises OSError: if the output directory cannot be created or written
    :raises OracleMismatchError: after writing, when the oracle deviation exceeds its tolerance
    """
    directory = Path(output_dir or config.output.directory)
    _prepare_directory(directory)

    _LOGGER.info('Running scenario %s (%s)', config.name, config.model.value)
    started = time.perf_counter()
    outcome = _RUNNERS[config.model](config)
    timings = {'compute_s': time.perf_counter() - started}
    tolerance = config.oracle.tolerance if outcome.oracle_deviation is not None else None
    summary = ValidationSummary(outcome.checks, outcome.oracle_deviation, tolerance)

    written: List[Path] = []
    started = time.perf_counter()
    try:
        if 'csv' in config.output.formats:
            path = directory / f'{config.name}.csv'
            written.append(path)
            write_csv(path, outcome.curve)
        if 'svg' in config.output.formats:
            for j, (m, n) in enumerate(outcome.curve.pairs):
                path = directory / f'{config.name}_pair_{m}_{n}.svg'
                written.append(path)
                write_svg(path, config.name, outcome.curve, j)
        timings['write_s'] = time.perf_counter() - started
        manifest = build_manifest(config, written, timings, summary, outcome.reported)
        path = directory / MANIFEST_NAME
        written.append(path)
        path.write_text(json.dumps(manifest, indent=2), encoding='utf-8')
    except Exception:
        for path in written:
            if path.exists():
                path.unlink()
        raise

    artifacts = RunArtifacts(directory, written, manifest, summary)
    if summary.hard_failures:
        _LOGGER.error('Scenario %s failed hard checks: %s', config.name, ', '.join(summary.hard_failures))
    if summary.oracle_failed:
        err = OracleMismatchError(summary.oracle_deviation, summary.oracle_tolerance)
        err.artifacts = artifacts
        raise err
    return artifacts


def _worker_count() -> Optional[int]:
    raw = os.getenv(THREADS_ENV, '').strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        _LOGGER.warning('Ignoring non-integer %s=%r', THREADS_ENV, raw)
        return None
    return value if value > 0 else None


async def async_run_scenarios(configs: Sequence[ScenarioConfig],
                              output_dirs: Optional[Sequence[Optional[Union[str, Path]]]] = None
                              ) -> List[Union[RunArtifacts, BaseException]]:
    """
    Run scenarios concurrently in a thread pool capped by DECOSEED_THREADS.

    Each scenario writes only to its own directory. Failures are returned in place of artifacts.
    """
    output_dirs = list(output_dirs) if output_dirs is not None else [None] * len(configs)
    if len(output_dirs) != len(configs):
        raise ValueError('one output directory per scenario is required')
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=_worker_count()) as executor:
        futures = [loop.run_in_executor(executor, run_scenario, config, out)
                   for config, out in zip(configs, output_dirs)]
        return list(await asyncio.gather(*futures, return_exceptions=True))
