"""The dual-domain network: spatial path, Haar split, subband branches, Haar merge.

Parameter layout (all 3x3 convolutions with bias):

    spatial.conv1  C  -> Ch     spatial.conv2  Ch -> Ch    spatial.conv3  Ch -> C
    low.conv_a     C  -> Ch     low.conv_b     Ch -> C
    high.conv_a    C  -> Ch     high.conv_b    Ch -> C     (shared by LH, HL, HH)

With `share_high_branch=False` the detail branch is stored three times as
`high.lh.*`, `high.hl.*`, `high.hh.*`. Spatial convolutions exist only with
`use_spatial_net`, branch convolutions only with `use_wavelet_net`.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from typing import NamedTuple, override

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .constants import DEFAULT_HIDDEN_WIDTH, GROUP_SIZE, SUPPORTED_SCALES
from .errors import ShapeError
from .logging import make_component_logger
from .tensor import Parameter, Tensor, add, bilinear_upsample, conv2d, relu, stack_subbands, subband
from .wavelet import SUBBAND_NAMES, WaveletPyramid, dwt2_haar, idwt2_haar

emit_model_log = make_component_logger("model")


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    channels: int = Field(default=GROUP_SIZE, ge=1)
    hidden: int = Field(default=DEFAULT_HIDDEN_WIDTH, ge=1)
    scale: int = 4
    use_spatial_net: bool = True
    use_wavelet_net: bool = True
    share_high_branch: bool = True

    @field_validator("scale")
    @classmethod
    def check_scale(cls, value: int) -> int:
        if value not in SUPPORTED_SCALES:
            raise ValueError(f"scale must be one of {SUPPORTED_SCALES}, got {value}")
        return value


class ForwardOutputs(NamedTuple):
    sr: Tensor
    spatial: Tensor
    ll_refined: Tensor
    high_refined: Tensor


type ShapeTable = list[tuple[str, tuple[int, ...]]]


def conv_shapes(prefix: str, in_channels: int, out_channels: int) -> ShapeTable:
    return [
        (f"{prefix}.weight", (out_channels, in_channels, 3, 3)),
        (f"{prefix}.bias", (out_channels,)),
    ]


def branch_shapes(prefix: str, channels: int, hidden: int) -> ShapeTable:
    return conv_shapes(f"{prefix}.conv_a", channels, hidden) + conv_shapes(
        f"{prefix}.conv_b", hidden, channels
    )


def high_branch_prefixes(config: ModelConfig) -> list[str]:
    if config.share_high_branch:
        return ["high"]
    return [f"high.{name}" for name in SUBBAND_NAMES]


def layer_shapes(config: ModelConfig) -> ShapeTable:
    """Ordered (name, shape) table of every trainable tensor for a config."""
    c, h = config.channels, config.hidden
    shapes: ShapeTable = []
    if config.use_spatial_net:
        shapes += conv_shapes("spatial.conv1", c, h)
        shapes += conv_shapes("spatial.conv2", h, h)
        shapes += conv_shapes("spatial.conv3", h, c)
    if config.use_wavelet_net:
        shapes += branch_shapes("low", c, h)
        for prefix in high_branch_prefixes(config):
            shapes += branch_shapes(prefix, c, h)
    return shapes


class DDSRNetParams(Mapping[str, Parameter]):
    """Ordered, named collection of the network's Parameters."""

    def __init__(self, tensors: Mapping[str, Parameter]) -> None:
        self.tensors: dict[str, Parameter] = dict(tensors)

    @override
    def __getitem__(self, name: str) -> Parameter:
        return self.tensors[name]

    @override
    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    @override
    def __len__(self) -> int:
        return len(self.tensors)

    def parameters(self) -> list[Parameter]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for param in self.tensors.values():
            param.zero_grad()

    def clone(self) -> DDSRNetParams:
        return DDSRNetParams({name: param.clone() for name, param in self.tensors.items()})

    def astype(self, dtype: npt.DTypeLike) -> DDSRNetParams:
        return DDSRNetParams({name: param.astype(dtype) for name, param in self.tensors.items()})

    def conv(self, prefix: str) -> tuple[Parameter, Parameter]:
        return self.tensors[f"{prefix}.weight"], self.tensors[f"{prefix}.bias"]

    def all_finite(self) -> bool:
        return all(bool(np.isfinite(param.data).all()) for param in self.tensors.values())

    @override
    def __repr__(self) -> str:
        return f"DDSRNetParams({len(self.tensors)} tensors, {param_count(self)} values)"


def init_params(
    config: ModelConfig,
    seed: int = 0,
    dtype: npt.DTypeLike = np.float32,
) -> DDSRNetParams:
    """Weights uniform in +-sqrt(1 / (Cin * 9)), biases zero, reproducible per seed."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Parameter] = {}
    for name, shape in layer_shapes(config):
        if name.endswith(".bias"):
            value = np.zeros(shape, dtype=np.float64)
        else:
            bound = math.sqrt(1.0 / (shape[1] * 9))
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Parameter(name, value, dtype=dtype)
    params = DDSRNetParams(tensors)
    emit_model_log(
        "params.init",
        seed=seed,
        channels=config.channels,
        hidden=config.hidden,
        parameters=param_count(params),
    )
    return params


def zero_params(config: ModelConfig, dtype: npt.DTypeLike = np.float32) -> DDSRNetParams:
    """All-zero parameters: the network reduces to bilinear upsampling."""
    return DDSRNetParams({
        name: Parameter(name, np.zeros(shape), dtype=dtype) for name, shape in layer_shapes(config)
    })


def param_count(params: Mapping[str, Parameter]) -> int:
    return sum(int(param.data.size) for param in params.values())


def apply_conv(x: Tensor, params: DDSRNetParams, prefix: str) -> Tensor:
    weight, bias = params.conv(prefix)
    return conv2d(x, weight, bias)


def residual_block(x: Tensor, params: DDSRNetParams, prefix: str) -> Tensor:
    hidden = relu(apply_conv(x, params, f"{prefix}.conv_a"))
    return add(x, apply_conv(hidden, params, f"{prefix}.conv_b"))


def check_input(x: Tensor, channels: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a (B, C, H, W) input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"input has {x.shape[1]} channels, model expects {channels}")


def spatial_net_forward(x: Tensor, params: DDSRNetParams, scale: int) -> Tensor:
    """Conv3(U(Conv2(ReLU(Conv1(x))))) + U(x)."""
    conv1, _ = params.conv("spatial.conv1")
    check_input(x, conv1.shape[1])
    features = apply_conv(relu(apply_conv(x, params, "spatial.conv1")), params, "spatial.conv2")
    main = apply_conv(bilinear_upsample(features, scale), params, "spatial.conv3")
    return add(main, bilinear_upsample(x, scale))


def ddsrnet_forward(x: Tensor, params: DDSRNetParams, config: ModelConfig) -> ForwardOutputs:
    check_input(x, config.channels)
    if config.use_spatial_net:
        spatial = spatial_net_forward(x, params, config.scale)
    else:
        spatial = bilinear_upsample(x, config.scale)

    pyramid = dwt2_haar(spatial)
    if not config.use_wavelet_net:
        return ForwardOutputs(
            sr=spatial, spatial=spatial, ll_refined=pyramid.ll, high_refined=pyramid.high
        )

    ll_refined = residual_block(pyramid.ll, params, "low")
    prefixes = high_branch_prefixes(config)
    refined_bands = [
        residual_block(subband(pyramid.high, index), params, prefixes[index % len(prefixes)])
        for index in range(len(SUBBAND_NAMES))
    ]
    high_refined = stack_subbands(refined_bands)
    sr = idwt2_haar(WaveletPyramid(ll=ll_refined, high=high_refined))
    return ForwardOutputs(sr=sr, spatial=spatial, ll_refined=ll_refined, high_refined=high_refined)


def infer_model_config(params: Mapping[str, Parameter], scale: int) -> ModelConfig:
    """Recover the architecture switches and widths from tensor names and shapes."""
    names = set(params)
    use_spatial = "spatial.conv1.weight" in names
    use_wavelet = "low.conv_a.weight" in names
    if use_spatial:
        hidden, channels = params["spatial.conv1.weight"].shape[:2]
    elif use_wavelet:
        hidden, channels = params["low.conv_a.weight"].shape[:2]
    else:
        raise ShapeError("checkpoint holds neither spatial nor wavelet-branch tensors")
    config = ModelConfig(
        channels=channels,
        hidden=hidden,
        scale=scale,
        use_spatial_net=use_spatial,
        use_wavelet_net=use_wavelet,
        share_high_branch="high.conv_a.weight" in names or not use_wavelet,
    )
    check_params(params, config)
    return config


def check_params(params: Mapping[str, Parameter], config: ModelConfig) -> None:
    expected = dict(layer_shapes(config))
    for name, shape in expected.items():
        if name not in params:
            raise ShapeError(f"parameter {name} missing for this model configuration")
        actual = params[name].shape
        if actual != shape:
            raise ShapeError(f"parameter {name} has shape {actual}, configuration expects {shape}")
    unexpected = sorted(set(params) - set(expected))
    if unexpected:
        raise ShapeError(f"parameter {unexpected[0]} is not part of this model configuration")
