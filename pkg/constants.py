# constants.py
COMMANDS = ("solve", "benchmark", "psweep")
CASES = ("manufactured_sine", "cubic_1d", "cosine_2d")

# Newton
NEWTON_ABS_TOL = 1e-10
NEWTON_REL_TOL = 1e-10
NEWTON_MAX_ITERS = 50
LINE_SEARCH_HALVINGS = 20
EPSILON_SCHEDULE = (1e-2, 1e-4, 1e-6, 1e-8)
BOUNDARY_PROJECTIONS = ("interpolate", "ritz")

# Linear solves: ||Ax - b|| <= factor * (||A|| ||x|| + ||b||)
LU_RESIDUAL_FACTOR = 1e-9
# Rank-revealing QR locates singular pivots up to this size
DENSE_PIVOT_LIMIT = 4000

# Continuation
P_SCHEDULE_DEFAULT = (2.0, 4.0, 12.0, 42.0, 68.0, 142.0, 202.0)
MAX_BISECTIONS = 5

# Mesh ladders for the benchmark
REFINEMENT_STRATEGIES = ("regenerate", "refine")

# Norms above this exponent are evaluated in max-rescaled form
LARGE_EXPONENT = 30.0
STABILITY_SLACK = 1e-6

# Limit diagnostics
GUARD_CELLS = 3
MIN_DIAGNOSTIC_SAMPLES = 10
SAMPLES_PER_CELL = 8
HIST_BINS = 50
MODE_TOLERANCE = 0.1

# Centred box, as a fraction of the domain sides, for interior-only w errors
INTERIOR_FRACTION = 0.5
HOLDER_EXPONENT = 2.0

# Manufactured source self check
SOURCE_CHECK_POINTS = 100
SOURCE_CHECK_STEP = 1e-2
SOURCE_CHECK_RTOL = 1e-5
SOURCE_CHECK_SEED = 20240601

# Output
DEFAULT_OUT_DIR = "out"
CSV_FLOAT_FORMAT = "%.17g"
REPORT_CSV_NAME = "report.csv"
DIAGNOSTICS_CSV_NAME = "diagnostics.csv"
RUN_LOG_NAME = "run.log"
EOC_CSV_NAME = "eoc_{case}_p{p:g}_k{k}.csv"
EOC_DAT_NAME = "eoc_{case}_p{p:g}_k{k}.dat"
FIELD_VTK_NAME = "field_p{p:g}.vtk"
FIELD_DAT_NAME = "field_p{p:g}.dat"
SOLUTION_CSV_NAME = "solution_p{p:g}.csv"
MATRIX_MTX_NAME = "saddle_p{p:g}.mtx"

# Environment
THREADS_ENV = "PBILAP_THREADS"
