from __future__ import annotations

GROUP_SIZE = 35
DEFAULT_HIDDEN_WIDTH = 32
SUPPORTED_SCALES = (2, 4, 8)
PARAMETER_BUDGET = 100_000

HUBER_DELTA = 1.0
DEFAULT_LOSS_WEIGHT = 0.35

DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_BATCH_SIZE = 4
DEFAULT_MAX_EPOCHS = 6000
DEFAULT_PATIENCE = 200
MIN_IMPROVEMENT = 1e-7

DEFAULT_VAL_FRACTION = 0.1
PSNR_CAP_DB = 100.0
SAM_NORM_FLOOR = 1e-8
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11

GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_SAMPLES = 200

CUBE_MAGIC = b"HSR1"
CUBE_VERSION = 1
CHECKPOINT_MAGIC = b"DDSR"
CHECKPOINT_VERSION = 1
MAX_CUBE_ELEMENTS = 1 << 32
