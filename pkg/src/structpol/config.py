""" Configuration constants and defaults for the project. """

import math

SCHEMA_VERSION = 1

# Polarization algebra
DEGENERATE_DOLP = 1e-6  # below this DoLP the AoLP is reported as 0 and flagged
PHYSICAL_EPS = 1e-9  # relative slack for Stokes realizability checks

# Projector
PIXEL_MAX = 255
TWIST_ANGLE = math.pi / 2
SOURCE_AOLP = 0.0  # horizontal source polarizer
SOURCE_INTENSITY = 1.0

# Patterns
N_BITS = 6
N_PHASES = 4
PERIOD = 16.0  # projector pixels
N_SHIFT_SEQUENCES = 3
BIT_THRESHOLD = math.pi / 4  # 45 degrees, midpoint of the 90 degree level range

# Decoding
SPECULAR_THRESHOLD = 0.01  # relative specular-signal floor
SEQUENCE_TOLERANCE = 1.0  # px, disagreement allowed between shifted sequences
DISCONTINUITY_THRESHOLD = 2.0  # px

# Calibration
N_BOARDS = 5
MIN_BOARDS = 3

# Reconstruction
PARALLEL_ANGLE = math.radians(0.1)
FAR_PLANE = 1e6
PCA_WINDOW = 7

# Estimation
LAMBDA_DOLP_INIT = 0.1
LAMBDA_DOLP_JOINT = 0.01
LAMBDA_STOKES_JOINT = 1.0
MAX_ITERATIONS = 50
MAX_OUTER_ITERATIONS = 15
TOLERANCE = 1e-10
FD_STEP = 1e-6

# Output naming
MANIFEST_NAME = "manifest.json"
RIG_NAME = "rig.json"
CORRESPONDENCE_NAME = "correspondence.pfm"
DEPTH_NAME = "depth.pfm"
NORMALS_NAME = "normals.pfm"
CLOUD_NAME = "cloud.ply"
MATERIALS_NAME = "materials.json"
ALBEDO_NAME = "albedo.pfm"
REPORT_NAME = "report.json"

THREADS_ENV = "SPIDERS_THREADS"
THREADS_ENV_ALIAS = "STRUCTPOL_THREADS"
LOG_LEVEL_ENV = "STRUCTPOL_LOG_LEVEL"
