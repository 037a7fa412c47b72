"""Every numerical default in one place.  CLI flags override these per run."""
import math

# geometry
GEOM_TOL = 1e-12
HORIZON_BUDGET = 3.0
CORRIDOR_QMAX = 12
SWEEP_RESOLUTION = 1e-4  # rad
SWEEP_OFFSETS = 16  # ray offsets per direction and scatterer
SWEEP_REFINE_TOP = 64  # longest tangent lines re-searched locally
SWEEP_REFINE_ROUNDS = 8  # zoom rounds, each shrinking the local grid 4x

# billiard map
GRAZING_TOL = 1e-8  # cos(phi') below this is flagged grazing
DERIVATIVE_COS_TOL = 1e-6  # DT is refused below this cos(phi'); entries would exceed 1e6
TANGENCY_TOL = 1e-12  # relative discriminant band reported as NumericalTangency
TIE_TOL = 1e-12

# curve dynamics
MAX_IMAGE_GAP_FRACTION = 1e-3  # of total boundary length
NEAR_GRAZING_COS = 1e-3
MIN_LEAF_LENGTH = 1e-9
NOISE_LENGTH = 1e-13
PARAM_RESOLUTION = 4e-15  # rounding band of the cut search in s, per generation
MAX_SAMPLES = 4_000_000
BISECTION_TOL = 1e-12
INITIAL_SAMPLES = 64
CHUNK_SAMPLES = 1_000_000
STREAM_SAMPLES = 400_000

# entropy metrics
CLUSTERING_RADIUS = 1e-5
SEED_FRACTION = 0.25  # seed curve length as a fraction of min scatterer perimeter
PHI0_LADDER = tuple(math.pi / 2 - d for d in (0.3, 0.1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-6, 1e-9))

# renewal shift
LAMBDA_RESIDUAL = 1e-12
TAIL_TOL = 1e-14
SEP_BASE = 2.0

# statistics
SAMPLING_STEPS = 10_000_000
BATCHES = 100
GK_CUTOFF = 200
