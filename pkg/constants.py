import os
from enum import Enum, IntEnum
from pathlib import Path

# set root path
ROOT_PATH = Path(os.path.dirname(__file__))

# model name
MODEL_NAME = 'FEDSPLIT'

# environment variable holding the log level
LOG_ENV_VAR = 'FEDSPLIT_LOG'


class LogLevel(Enum):
    ERROR = 'error'
    INFO = 'info'
    DEBUG = 'debug'


class ModelKind(Enum):
    LOGISTIC = 'logistic'
    QUADRATIC = 'quadratic'


class ServerOptimizer(Enum):
    FEDAVG = 'fedavg'
    FEDADAM = 'fedadam'
    FEDNOVA = 'fednova'


class SweepAxis(Enum):
    Z = 'z'
    V = 'v'
    N_CLIENTS = 'n_clients'
    ROUNDS = 'rounds'
    SUBSAMPLE = 'subsample'
    FREQUENCY = 'frequency'


class TargetCount(Enum):
    CLIENTS = 'clients'             # N = number of silos
    PARTICIPANTS = 'participants'   # N = current intermediary count N_v


class Stream(IntEnum):
    """Stream ids of the per-purpose random streams. Participant streams add the participant index."""
    DATA = 1
    SPLIT = 2
    LOCAL = 3
    NOISE = 4
    CLIP = 5
    SUBSAMPLE = 6
    HOLDOUT = 7
    MONTE_CARLO = 8


# participant-level streams: stream_id = kind * STREAM_STRIDE + participant index
STREAM_STRIDE = 1_000_000

# adaptive clipping (quantile tracking)
CLIP_QUANTILE = 0.5
CLIP_LR = 0.2
CLIP_QUANTILE_NOISE = 0.0

# FedAdam server optimizer
SERVER_LR = 1e-2
BETA1 = 0.9
BETA2 = 0.99
TAU_ADAPT = 1e-3

# ratio metrics
RATIO_GUARD = 1e-12

# accountant
ACCOUNTANT_RTOL = 1e-6
CALIBRATION_RTOL = 1e-8

# evaluation
DECISION_THRESHOLD = 0.5
AUC_SENTINEL = 0.5

# fields
ROUND = 'round'
SEED = 'seed'
XI = 'xi'
PHI = 'phi'
LAMBDA = 'lambda'
CLIP_C = 'clip_C'
V = 'v'
V_PER_CLIENT = 'v_per_client'
N_PARTICIPANTS = 'n_participants'
TRAIN_LOSS = 'train_loss'
TEST_ACC = 'test_acc'
TEST_AUC = 'test_auc'
EPSILON_SO_FAR = 'epsilon_so_far'
GUARDED = 'guarded'
AUC_DEFINED = 'auc_defined'
SIM_STD = 'sim_std'
V_TARGET = 'v_target'
V_NEXT = 'v_next'

# bounds
T = 't'
BOUND = 'bound'
ESTIMATE = 'estimate'
HALF_WIDTH = 'half_width'

# round csv header (one row per round per seed)
CSV_COLUMNS = (ROUND, SEED, XI, PHI, LAMBDA, CLIP_C, V, N_PARTICIPANTS,
               TRAIN_LOSS, TEST_ACC, TEST_AUC, EPSILON_SO_FAR, GUARDED)
ROUND_COLUMNS = CSV_COLUMNS + (SIM_STD,)
BOUNDS_COLUMNS = (T, BOUND, ESTIMATE, HALF_WIDTH)

# summary
MEAN = 'mean'
STD = 'std'
FINAL = 'final'
EPSILON = 'epsilon'
DELTA = 'delta'

# output files
ROUNDS_CSV = 'rounds.csv'
SUMMARY_JSON = 'summary.json'
BOUNDS_CSV = 'bounds.csv'
