"""
Constants for V2XPnP Desk.

This module defines all shared constants used across the v2xpnp_desk package.
NOTE: Grid and channel constants are desk-scale; the full-scale preset lives in
cli/config.py.
"""

# ====================================================================================
# Scenario Config
# ====================================================================================

DEFAULT_NUM_FRAMES = 16
FRAME_INTERVAL_S = 0.5  # 2 Hz
HISTORY_FRAMES = 5  # t-4 .. t
PREDICTION_HORIZON = 6  # t+1 .. t+6 (3 s)

# Evaluation window in the ego frame (meters, inclusive)
EVAL_X_RANGE: tuple[float, float] = (-70.0, 70.0)
EVAL_Y_RANGE: tuple[float, float] = (-40.0, 40.0)

# Sensor model
SENSOR_RANGE_M = 100.0
SENSOR_ANGULAR_RESOLUTION_DEG = 0.25
VEHICLE_SENSOR_HEIGHT_M = 1.8
INFRASTRUCTURE_SENSOR_HEIGHT_M = 4.0

# Lane layout
LANE_SPACING_M = 5.5
WAYPOINTS_PER_POLYLINE = 10
WAYPOINT_SPACING_M = 2.0

# ====================================================================================
# Agent and Relation Labels
# ====================================================================================

AGENT_KINDS: tuple[str, str] = ("vehicle", "infrastructure")

# Edge e_ij is labelled kind(i)-kind(j)
RELATION_TYPES: tuple[str, ...] = ("V-V", "V-I", "I-V", "I-I")
RELATION_INDEX: dict[str, int] = {r: i for i, r in enumerate(RELATION_TYPES)}

COMMUNICATION_RANGE_M = 50.0

# ====================================================================================
# Payload Accounting
# ====================================================================================

BITS_PER_FLOAT = 32
BOX_FLOATS = 9  # 7 box params + confidence + source id
POINT_FLOATS = 4  # x, y, z, intensity

# ====================================================================================
# Perception Config
# ====================================================================================

VOXEL_SIZE_M = 0.4
MAX_POINTS_PER_VOXEL = 32
MAX_VOXELS = 32000
BEV_STRIDE = 10  # 4 m BEV cells
PILLAR_POINT_FEATURES = 6  # x, y, z, intensity, dx, dy to pillar center

# Anchor dimensions: length along heading, width across it
ANCHOR_LENGTH_M = 4.5
ANCHOR_WIDTH_M = 2.0
ANCHOR_HEIGHT_M = 1.5
ANCHOR_YAWS: tuple[float, float] = (0.0, 1.5707963267948966)
ANCHORS_PER_CELL = 2
BOX_CODE_SIZE = 8  # dx, dy, dz, dw, dl, dh, sin, cos

POSITIVE_IOU = 0.6
NEGATIVE_IOU = 0.45

DETECTION_SCORE_THRESHOLD = 0.3
DETECTION_NMS_IOU = 0.3
LATE_FUSION_NMS_IOU = 0.15
TRACKER_GATE_M = 3.0

# ====================================================================================
# Fusion Config
# ====================================================================================

WINDOW_SIZES: tuple[int, int, int] = (2, 4, 8)
MAP_POLYLINES_PER_CELL = 5
MAP_POINT_ATTRIBUTES = 7  # x, y, dx, dy, type, x_prev, y_prev
MAP_POSITION_SCALE = 0.1  # map coordinates enter the encoder in decametres

# ====================================================================================
# Loss and Metric Config
# ====================================================================================

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
SMOOTH_L1_BETA = 1.0

LOSS_WEIGHT_CLS = 1.0
LOSS_WEIGHT_REG = 2.0
LOSS_WEIGHT_PRED = 2.0

AP_IOU_THRESHOLD = 0.5
MISS_RATE_THRESHOLD_M = 2.0
EPA_FDE_THRESHOLD_M = 2.0
EPA_FALSE_POSITIVE_PENALTY = 0.5

# ====================================================================================
# Track Association Config
# ====================================================================================

CROSS_AGENT_IOU = 0.3  # same object seen by two agents

# ====================================================================================
# Training Config
# ====================================================================================

LEARNING_RATE = 2e-3
WEIGHT_DECAY = 1e-4
EPOCHS_PER_STAGE = 30
EARLY_STOPPING_PATIENCE = 5
TRAINING_LOG_FILE = "training_log.csv"

# ====================================================================================
# Autodiff Config
# ====================================================================================

GRADCHECK_PERTURBATION = 1e-3
GRADCHECK_TOLERANCE = 1e-3
GRADCHECK_FLOOR = 1e-3  # absolute floor under the relative-error denominator

CHECKPOINT_MAGIC = b"V2XPNPCK"
CHECKPOINT_VERSION = 1

# ====================================================================================
# File Paths
# ====================================================================================

DEFAULT_CONFIG_PATH = "configs/experiment.json"
DEFAULT_OUTPUT_DIR = "runs"
