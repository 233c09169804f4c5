from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    DatasetSpec,
    LossWeights,
    TrainConfig,
    build_dataset_spec,
    build_train_config,
    dataset_preset,
    read_key_values,
)
from .data import (
    CubeScaling,
    HyperCube,
    PatchRecord,
    PreparedData,
    audit_splits,
    bicubic_resize,
    build_dataset,
    center_crop,
    degrade,
    extract_patches,
    group_bands,
    load_cube,
    load_prepared,
    make_splits,
    normalize,
    pad_bands,
    save_cube,
    synthetic_cube,
    ungroup_bands,
    write_prepared,
)
from .errors import DivergenceError, FormatError, ShapeError, SpecError
from .loss import LossBreakdown, hybrid_loss
from .metrics import MetricReport, cc, evaluate_all, mpsnr, mssim, rmse, sam
from .model import (
    DDSRNetParams,
    ForwardOutputs,
    ModelConfig,
    ddsrnet_forward,
    infer_model_config,
    init_params,
    param_count,
    spatial_net_forward,
    zero_params,
)
from .tensor import (
    AdamState,
    Parameter,
    Tensor,
    adam_step,
    backward,
    bilinear_upsample,
    conv2d,
    grad_check,
    huber,
    relu,
)
from .trainer import (
    EvaluationReport,
    TrainLog,
    apply_ablation,
    evaluate,
    run_ablation,
    train,
)
from .wavelet import WaveletPyramid, dwt2_haar, idwt2_haar

__all__ = [
    "AdamState",
    "CubeScaling",
    "DDSRNetParams",
    "DatasetSpec",
    "DivergenceError",
    "EvaluationReport",
    "FormatError",
    "ForwardOutputs",
    "HyperCube",
    "LossBreakdown",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "Parameter",
    "PatchRecord",
    "PreparedData",
    "ShapeError",
    "SpecError",
    "Tensor",
    "TrainConfig",
    "TrainLog",
    "WaveletPyramid",
    "adam_step",
    "apply_ablation",
    "audit_splits",
    "backward",
    "bicubic_resize",
    "bilinear_upsample",
    "build_dataset",
    "build_dataset_spec",
    "build_train_config",
    "cc",
    "center_crop",
    "conv2d",
    "dataset_preset",
    "ddsrnet_forward",
    "degrade",
    "dwt2_haar",
    "evaluate",
    "evaluate_all",
    "extract_patches",
    "grad_check",
    "group_bands",
    "huber",
    "hybrid_loss",
    "idwt2_haar",
    "infer_model_config",
    "init_params",
    "load_checkpoint",
    "load_cube",
    "load_prepared",
    "make_splits",
    "mpsnr",
    "mssim",
    "normalize",
    "pad_bands",
    "param_count",
    "read_key_values",
    "relu",
    "rmse",
    "run_ablation",
    "sam",
    "save_checkpoint",
    "save_cube",
    "spatial_net_forward",
    "synthetic_cube",
    "train",
    "ungroup_bands",
    "write_prepared",
    "zero_params",
]
