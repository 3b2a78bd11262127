"""Exactly soluble models of environment-induced superselection sectors"""
from .exc import (
    AssumptionViolatedError,
    DecoseedError,
    InsufficientDecayError,
    IRDivergentWithoutOverrideError,
    NyquistViolationError,
    OracleMismatchError,
    ScenarioParseError,
    ScenarioValidationError,
)
from .qcore import SectorFamily, block_norms, evolve, partial_trace_env, spectral_projectors, trace_norm, validate_density
from .araki_zurek import (
    DecayBound,
    DecoherenceCurve,
    MixtureInitialState,
    MixtureTerm,
    SpectralDensity,
    SystemSpec,
    chi_spectral,
    fit_decay_bound,
    reduced_blocks_factorized,
    validate_model,
    window_block_norm,
)
from .vanhove import CoherentMixture, CoherentTerm, ModeFunction, chi_vanhove, ir_classify, single_mode_chi
from .oracle import FiniteModel, FockOracle, full_evolution
from .scattering import (
    MollerKernel,
    ScatteringModel,
    equivalence_residual,
    isospectral_potential,
    moller_approx,
    scattering_block_decay,
)
from .harness import ScenarioConfig, async_run_scenarios, parse_scenario, run_scenario, serialize
from .presets import list_presets, load_preset

__version__ = '0.1.0'
