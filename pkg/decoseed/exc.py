"""Exceptions"""

# Default messages
NON_HERMITIAN_MESSAGE = 'Operator is not Hermitian within tolerance.'
INVALID_DENSITY_MESSAGE = 'Matrix is not a valid density operator.'
DEGENERATE_CLUSTERING_MESSAGE = 'Eigenvalue clusters overlap at the requested tolerance.'
DIMENSION_MISMATCH_MESSAGE = 'Operator dimensions do not match.'
UNNORMALIZED_MEASURE_MESSAGE = 'Spectral measure does not integrate to one.'
NYQUIST_MESSAGE = 'Time horizon exceeds the resolution of the spectral grid.'
WEIGHT_SUM_MESSAGE = 'Mixture weights must sum to one (mixture normalization).'
INSUFFICIENT_DECAY_MESSAGE = 'Decoherence function does not decay; decay bound fit is ill-posed.'
OVERLAPPING_WINDOWS_MESSAGE = 'Spectral windows must have a positive distance.'
IR_DIVERGENT_MESSAGE = 'Coupling is infrared divergent; pass override=True to evaluate on the grid.'
GRID_MISMATCH_MESSAGE = 'Grid functions are not sampled on the same grid.'
NON_MONOTONE_CUTOFFS_MESSAGE = 'Cutoffs must be strictly decreasing.'
NEGATIVE_FREQUENCY_MESSAGE = 'Mode frequency must be non-negative.'
TRUNCATION_MESSAGE = 'Fock truncation is too small for the requested state.'
NON_UNITARY_MESSAGE = 'Operator is not unitary within tolerance.'
DIMENSION_CAP_MESSAGE = 'Total Hilbert space dimension exceeds the dense diagonalization cap.'
POTENTIAL_MESSAGE = 'Scattering potential exceeds the configured norm cap.'


class DecoseedError(RuntimeError):
    """Parent class for all decoseed exceptions"""


class NonHermitianInputError(DecoseedError):
    """Input operator failed the Hermiticity check"""
    def __init__(self, msg=NON_HERMITIAN_MESSAGE, *args):
        super().__init__(msg, *args)


class InvalidDensityError(DecoseedError):
    """Input matrix is not a statistical operator"""
    def __init__(self, msg=INVALID_DENSITY_MESSAGE, *args):
        super().__init__(msg, *args)


class DegenerateClusteringError(DecoseedError):
    """Spectral clusters could not be separated"""
    def __init__(self, msg=DEGENERATE_CLUSTERING_MESSAGE, *args):
        super().__init__(msg, *args)


class DimensionMismatchError(DecoseedError):
    """Operand shapes are inconsistent"""
    def __init__(self, msg=DIMENSION_MISMATCH_MESSAGE, *args):
        super().__init__(msg, *args)


class AssumptionViolatedError(DecoseedError):
    """A model assumption (vanishing commutator) does not hold"""
    def __init__(self, which: str, defect: float = float('nan'), *args):
        self.which = which
        self.defect = defect
        super().__init__(f'{which} violated (commutator norm {defect:.3e})', *args)


class UnnormalizedMeasureError(DecoseedError):
    """Spectral density is not normalized"""
    def __init__(self, msg=UNNORMALIZED_MEASURE_MESSAGE, *args):
        super().__init__(msg, *args)


class NyquistViolationError(DecoseedError):
    """Requested times alias on the spectral grid"""
    def __init__(self, msg=NYQUIST_MESSAGE, *args):
        super().__init__(msg, *args)


class WeightSumInvalidError(DecoseedError):
    """Mixture weights do not sum to one"""
    def __init__(self, msg=WEIGHT_SUM_MESSAGE, *args):
        super().__init__(msg, *args)


class InsufficientDecayError(DecoseedError):
    """Curve never decays enough to fit a bound"""
    def __init__(self, msg=INSUFFICIENT_DECAY_MESSAGE, *args):
        super().__init__(msg, *args)


class OverlappingWindowsError(DecoseedError):
    """Spectral windows touch or overlap"""
    def __init__(self, msg=OVERLAPPING_WINDOWS_MESSAGE, *args):
        super().__init__(msg, *args)


class IRDivergentWithoutOverrideError(DecoseedError):
    """Infrared norm above the cap and no override given"""
    def __init__(self, msg=IR_DIVERGENT_MESSAGE, *args):
        super().__init__(msg, *args)


class GridMismatchError(DecoseedError):
    """Grid functions live on different grids"""
    def __init__(self, msg=GRID_MISMATCH_MESSAGE, *args):
        super().__init__(msg, *args)


class NonMonotoneCutoffsError(DecoseedError):
    """Cutoff sequence is not strictly decreasing"""
    def __init__(self, msg=NON_MONOTONE_CUTOFFS_MESSAGE, *args):
        super().__init__(msg, *args)


class NegativeFrequencyError(DecoseedError):
    """Negative single-mode frequency"""
    def __init__(self, msg=NEGATIVE_FREQUENCY_MESSAGE, *args):
        super().__init__(msg, *args)


class TruncationTooSmallError(DecoseedError):
    """Fock truncation cannot represent the state"""
    def __init__(self, msg=TRUNCATION_MESSAGE, *args):
        super().__init__(msg, *args)


class NonUnitaryInputError(DecoseedError):
    """Operator expected to be unitary is not"""
    def __init__(self, msg=NON_UNITARY_MESSAGE, *args):
        super().__init__(msg, *args)


class DimensionCapError(DecoseedError):
    """Dense problem too large"""
    def __init__(self, msg=DIMENSION_CAP_MESSAGE, *args):
        super().__init__(msg, *args)


class PotentialTooStrongError(DecoseedError):
    """Scattering potential norm above the cap"""
    def __init__(self, msg=POTENTIAL_MESSAGE, *args):
        super().__init__(msg, *args)


class ScenarioParseError(DecoseedError):
    """Malformed scenario document"""
    def __init__(self, line: int, message: str, *args):
        self.line = line
        self.message = message
        super().__init__(f'line {line}: {message}', *args)


class ScenarioValidationError(DecoseedError):
    """Scenario document parsed but failed validation"""
    def __init__(self, errors, *args):
        self.errors = list(errors)
        super().__init__('; '.join(self.errors), *args)


class OracleMismatchError(DecoseedError):
    """Closed form and brute-force oracle disagree"""
    def __init__(self, deviation: float, tolerance: float, *args):
        self.deviation = deviation
        self.tolerance = tolerance
        self.artifacts = None
        super().__init__(f'oracle deviation {deviation:.3e} exceeds tolerance {tolerance:.3e}', *args)
