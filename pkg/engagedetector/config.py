"""
Engagement Detector - Configuration File
Contains constant values and configuration settings used throughout the pipeline.
"""

import os
import math
from pathlib import Path
import json
import logging

# --- Setup Logger for config module ---
# Main setup (utils.setup_logging) attaches the real handlers
logger = logging.getLogger(__name__)
if not logger.hasHandlers():
    logger.addHandler(logging.NullHandler())

# Application information
APP_NAME = "engagedetector"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = ("Detect the intention of engagement with a companion robot "
                   "from lidar, skeleton, face and audio streams")

# Directory configuration
USER_HOME = str(Path.home())
CONFIG_DIR_ENV = "ENGAGEDETECTOR_CONFIG_DIR"
DEFAULT_CONFIG_DIR = os.path.join(USER_HOME, ".config", "engagement-detector")
SETTINGS_FILENAME = "settings.json"
LOG_FILENAME = "engagedetector.log"

# Logging settings
LOG_LEVEL = "INFO"
MAX_LOG_SIZE = 1024 * 1024 * 5  # 5 MB
MAX_LOG_BACKUPS = 3

# --- Master clock ---
FRAME_PERIOD_US = 80_000  # 12.5 Hz, the telemeter rate
FRAME_PERIOD_S = FRAME_PERIOD_US / 1e6

# --- Laser telemeter ---
LIDAR_BEAMS = 541
LIDAR_ANGLE_MIN = -math.radians(135.0)
LIDAR_ANGLE_MAX = math.radians(135.0)
LIDAR_MAX_RANGE = 8.0  # meters, returned when a beam hits nothing

# Background model
BG_ALPHA = 0.02
BG_TAU_FG = 0.25  # meters
BG_WARMUP_SCANS = 25

# Clustering of foreground beams
CLUSTER_GAP_BEAMS = 2
CLUSTER_SPLIT_DISTANCE = 0.15  # meters
CLUSTER_MIN_BEAMS = 2

# Foot Kalman filter
KALMAN_SIGMA_A = 2.0  # m.s-2, white acceleration
KALMAN_SIGMA_M = 0.05  # m, position measurement
KALMAN_SIGMA_V0 = 1.5  # m.s-1, initial velocity uncertainty
KALMAN_GATE = 0.5  # m, association radius
KALMAN_EIG_FLOOR = 0.0
FOOT_MAX_MISSES = 8
FOOT_DIRECTION_HISTORY = 3
FOOT_STATIONARY_EPS = 0.02  # m

# Feet pairing
PAIR_GATE = 1.0  # m
PAIR_WINDOW = 6  # frames (480 ms)
LEG_SPACE_MIN = 0.10
LEG_SPACE_MAX = 0.45
LEG_SPACE_STD_MAX = 0.05

# --- Body features ---
JOINT_CONFIDENCE_MIN = 0.5
IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480

# --- Acoustic features ---
SAD_PERIOD_US = 10_000
LOCALIZATION_PERIOD_US = 125_000
LOCALIZATION_STALENESS_US = 250_000
BEAM_COUNT = 11
BEAM_HALF_SPAN = math.radians(50.0)

# --- Fusion staleness ---
LASER_STALENESS_US = 160_000
SKELETON_STALENESS_US = 200_000
FACE_STALENESS_US = 200_000

# --- Selection ---
MRMR_SCHEME = "mid"
MIQ_EPSILON = 1e-12

# --- Classification ---
DEFAULT_K = 10
DEFAULT_SEED = 7
STANDARDIZER_SIGMA_FLOOR = 1e-12
SVM_LAMBDA = 1e-4
SVM_EPOCHS = 20
SVM_BATCH_SIZE = 32
MLP_LEARNING_RATE = 0.3
MLP_MOMENTUM = 0.2
MLP_EPOCHS = 500
MLP_BATCH_SIZE = 32

# --- Simulator ---
SIM_RANGE_NOISE = 0.02  # m
SIM_JOINT_NOISE = 0.02  # m
SIM_ANGLE_NOISE = math.radians(5.0)
SIM_FACE_MISS_RATE = 0.10
SIM_FOOT_RADIUS = 0.06  # m
SIM_KINECT_FOV = math.radians(60.0)
SIM_KINECT_MIN_DEPTH = 0.8
SIM_KINECT_MAX_DEPTH = 4.0
SIM_KINECT_HEIGHT = 1.2  # meters above the floor
SIM_KINECT_RATE_HZ = 30
SIM_FACE_MIN_RANGE = 0.5
SIM_FACE_MAX_RANGE = 3.5
SIM_FACE_CONE = math.radians(30.0)  # head must face the camera within this angle
SIM_SHOULDER_PRE_ROTATION = math.radians(20.0)
SIM_LEG_SPACE = 0.30
SIM_STEP_LENGTH = 0.60
SIM_SWING_AMPLITUDE = 0.15
SIM_STANDING_SPEED = 0.05  # m.s-1, below this the feet stop swinging
SIM_FACE_SIZE = 0.18  # m, physical face box edge
SIM_SCENARIO_START = 3.0  # s, agents enter after the background warmup

# Room: L-shaped 6 m x 5 m with a 2 m x 2.5 m notch behind the robot
ROOM_POLYGON = [(-3.0, -2.5), (3.0, -2.5), (3.0, 2.5), (-1.0, 2.5), (-1.0, 0.0), (-3.0, 0.0)]
# Door gaps: wall index, then the interval along that wall (meters from its first vertex)
ROOM_DOORS = {
    "A": (0, 4.0, 5.0),   # south wall, x in [1, 2]
    "B": (1, 2.0, 3.0),   # east wall facing the robot, y in [-0.5, 0.5]
    "C": (2, 1.0, 2.0),   # north wall, x in [1, 2]
}

# --- Settings Functions ---

# Cache for loaded settings to avoid repeated file reads
_settings_cache = None

_SETTINGS_DEFAULTS = {
    'log_level': LOG_LEVEL,
    'seed': DEFAULT_SEED,
    'k': DEFAULT_K,
    'classifier': "svm",
    'manifest': "32",
    'mrmr_scheme': MRMR_SCHEME,
}


def config_dir():
    """Returns the configuration directory, honouring the environment override."""
    return os.environ.get(CONFIG_DIR_ENV) or DEFAULT_CONFIG_DIR


def settings_path():
    return os.path.join(config_dir(), SETTINGS_FILENAME)


def log_path():
    return os.path.join(config_dir(), LOG_FILENAME)


def _ensure_config_dir():
    """Ensures the main configuration directory exists."""
    directory = config_dir()
    if not os.path.exists(directory):
        try:
            os.makedirs(directory, exist_ok=True)
            logger.info(f"Configuration directory created: {directory}")
        except OSError as e:
            logger.error(f"Failed to create configuration directory {directory}: {e}")


def _load_settings():
    """Loads settings from the JSON file into cache, creating defaults if needed."""
    global _settings_cache
    _ensure_config_dir()
    path = settings_path()

    if not os.path.exists(path):
        logger.info(f"Settings file not found ({path}). Creating with defaults.")
        _settings_cache = _SETTINGS_DEFAULTS.copy()
        _save_settings(_settings_cache)
        return _settings_cache

    try:
        with open(path, 'r', encoding='utf-8') as f:
            loaded_settings = json.load(f)
        # Merge defaults with loaded settings to handle missing keys
        _settings_cache = _SETTINGS_DEFAULTS.copy()
        _settings_cache.update(loaded_settings)
        logger.debug(f"Settings loaded from {path}")
        return _settings_cache
    except json.JSONDecodeError:
        logger.error(f"Settings file ({path}) is corrupted. Using defaults.")
        _settings_cache = _SETTINGS_DEFAULTS.copy()
        _save_settings(_settings_cache)
        return _settings_cache
    except OSError as e:
        logger.error(f"Failed to load settings from {path}: {e}. Using defaults.")
        _settings_cache = _SETTINGS_DEFAULTS.copy()
        return _settings_cache


def _save_settings(settings_dict):
    """Saves the given settings dictionary to the JSON file."""
    _ensure_config_dir()
    path = settings_path()
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(settings_dict, f, ensure_ascii=False, indent=4, sort_keys=True)
        logger.debug(f"Settings saved to {path}")
        return True
    except OSError as e:
        logger.error(f"Failed to save settings to {path}: {e}")
        return False


def get_setting(key, default=None):
    """Gets a setting value by key, loading from file if not cached."""
    global _settings_cache
    if _settings_cache is None:
        _settings_cache = _load_settings()
    actual_default = default if default is not None else _SETTINGS_DEFAULTS.get(key)
    return _settings_cache.get(key, actual_default)


def set_setting(key, value):
    """Sets a setting value by key and saves to file."""
    global _settings_cache
    if _settings_cache is None:
        _settings_cache = _load_settings()
    _settings_cache[key] = value
    return _save_settings(_settings_cache)


def reset_settings_cache():
    """Forgets cached settings so the next read goes back to disk."""
    global _settings_cache
    _settings_cache = None
