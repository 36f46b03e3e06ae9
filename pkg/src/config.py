import os

APP_NAME = "semloc"
ARTIFACT_VERSION = "1.0.0"

# Logging
LOG_FILE_NAME = "semloc.log"
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# Camera / geometry
Z_MIN = 0.1  # meters, projection near limit
AMBIGUOUS_ANGLE_MARGIN = 1e-6  # log_map refuses angles >= pi - margin
DEFAULT_WIDTH = 640
DEFAULT_HEIGHT = 480
DEFAULT_HFOV_DEG = 80.0

# Semantics
PRED_PROBABILITY = 0.9  # confidence assigned to the predicted class
GRID_SNAP = 1e-9  # pixels, samples this close to a grid line lie on it
BACKGROUND_ID = 0
CLASS_NAMES = (
    "background",
    "road",
    "sidewalk",
    "marking",
    "pole",
    "sign",
    "building",
    "nature",
)

# Renderer
NEAR_PLANE = 0.1  # meters
FAR_PLANE = 200.0  # meters
DEPTH_TIE_EPS = 1e-9
MIN_TRIANGLE_AREA = 1e-12  # m^2

# Alignment
PYRAMID_LEVELS = 6
ALIGN_LEVELS = 3  # coarsest levels actually optimized
ITERS_PER_LEVEL = 10
PROB_FLOOR = 1e-6
EARLY_EXIT_STEP = 1e-8
DAMPING = 1e-6
MIN_RESIDUALS = 6
RESIDUAL_CLAMP = 1e-9  # r is clamped below at this value in dr/dlogp
MIN_CONDITIONING = 1e-10  # min/max eigenvalue ratio of J^T J
MIN_SITE_MASS = 0.5  # summed share of both classes at a coarse-level residual site
PURE_MASS = 1.0 - 1e-9  # a cell holding only the two classes of a site

# Window
WINDOW_SIZE = 8
KEYFRAME_STRIDE = 5
LAMBDA = 0.65
ODOM_WEIGHTS = (10.0, 10.0, 10.0, 50.0, 50.0, 50.0)
SEMANTIC_NORMALIZATION = "mean"  # "mean" | "raw"
LOST_AFTER = 3  # consecutive non-converged keyframes
STEP_RETRIES = 5

# Particle filter
PF_PARTICLES = 500
PF_BEST_FRACTION = 0.10
PF_PROCESS_SIGMA = (0.05, 0.05, 0.05, 0.005, 0.005, 0.005)
PF_RENDER_FACTOR = 4  # score at 1/4 resolution
PF_RESAMPLE_RATIO = 0.5

# Scene generation
SCENE_SEED = 0
NOISE_SEED = 1

# File formats
SLOG_MAGIC = b"SLOG"
CSV_FLOAT_FORMAT = "%.9g"
TRAJECTORY_COLUMNS = ["frame_id", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]
ERROR_COLUMNS = ["frame_id", "lat", "lon", "vert", "trans", "rot_deg"]

# Worker threads (None lets the libraries decide)
DEFAULT_THREADS = int(os.environ.get("SEMLOC_THREADS", "0")) or None
