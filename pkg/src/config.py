"""
Configuration for the tree walk laboratory
"""

import os
from dotenv import load_dotenv

load_dotenv()

APP_NAME = "Tree Walk Lab"
DEBUG = os.getenv("DEBUG", "false").lower() == "true"

# Reports land here unless the config, TREEWALK_OUTPUT_DIR or --out says otherwise
OUTPUT_DIRECTORY = "./reports"
OUTPUT_DIRECTORY_ENV = "TREEWALK_OUTPUT_DIR"
WARNINGS_LOG_NAME = "warnings.jsonl"
DEFAULT_WORKERS = int(os.getenv("TREEWALK_WORKERS", "1"))

# Environment growth caps
MAX_TREE_VERTICES = 2_000_000
MAX_TREE_DEPTH = 20_000
MAX_WALK_STEPS = 10_000_000
MAX_RANGE_VERTICES = 5_000_000

# psi / kappa
PSI_ONE_TOLERANCE = 1e-10
KAPPA_BRACKET_LOW = 1.0 + 1e-6
KAPPA_T_MAX = 50.0
KAPPA_TOLERANCE = 1e-12
VALIDATION_DELTA = 0.1
PROBABILITY_TABLE_TOLERANCE = 1e-12

# Estimators
BOOTSTRAP_RESAMPLES = 1000
TAIL_WINDOW = (0.90, 0.999)
TAIL_INDEX_BAND = 0.3
MIN_SURVIVORS = 50
MIN_EFFECTIVE_SAMPLES = 100
MIN_GOF_SAMPLES = 100
MIN_TAIL_SAMPLES = 10_000
MIN_BIN_COUNT = 5
PROPAGATED_RELATIVE_SE_WARN = 0.05
CAP_BIAS_WARN_RATE = 0.01

# Spine series
TRUNCATION_MULTIPLIER = 50
TRUNCATION_REMAINDER_WARN = 0.01

# Replication
BATCH_SIZE = 10_000
QUENCHED_PANEL_SIZE = 50
PANEL_SURVIVAL_LEVEL = 20
W_ESTIMATE_LEVEL = 14
ORACLE_ALPHA = 0.01
