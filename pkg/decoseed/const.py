"""Various constants"""

# Numerical tolerances
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
POSITIVITY_TOL = -1e-10
COMMUTATOR_TOL = 1e-10
NORMALIZATION_TOL = 1e-10
MEASURE_TOL = 1e-8
UNITARY_TOL = 1e-10
DEFAULT_CLUSTER_TOL = 1e-8

# Decay-bound fitting
FIT_FLOOR = 1e-12
FIT_MIN_SAMPLES = 64
FIT_SLACK = 1e-6
FIT_SPREAD = 10.0
DECAY_PLATEAU = 0.9

# Spectral grids
DEFAULT_GRID_POINTS = 2048
DEFAULT_GAUSSIAN_SPAN = 8.0

# Boson environments
DEFAULT_MODE_POINTS = 2048
DEFAULT_IR_CAP = 1e6
DEFAULT_FOCK_NMAX = 40
MIN_FOCK_NMAX = 20
FOCK_TAIL_TOL = 1e-8
MAX_FOCK_MODES = 2

# Finite surrogates
DIMENSION_CAP = 4096
DEFAULT_SURROGATE_DIM = 64
DEFAULT_POTENTIAL_CAP = 1.0
MIN_MOLLER_SAMPLES = 8
MOLLER_HALVING_RATIO = 0.55

# Harness
CSV_HEADER = ("t", "pair_m", "pair_n", "re_chi", "im_chi", "abs_chi", "block_tn", "block_hs")
CSV_FLOAT_FMT = "{:.17g}"
OUTPUT_FORMATS = ("csv", "svg")
THREADS_ENV = "DECOSEED_THREADS"
MANIFEST_NAME = "manifest.json"
