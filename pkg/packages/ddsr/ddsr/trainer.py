"""Training loop, evaluation against interpolation baselines, and the ablation study."""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import TrainConfig
from .data import (
    PatchPair,
    PreparedData,
    bicubic_resize,
    group_bands,
    materialize_patches,
    ungroup_bands,
)
from .errors import DivergenceError, ShapeError
from .logging import bind_log_context, make_component_logger, reset_log_context
from .loss import LossBreakdown, hybrid_loss
from .metrics import MetricReport, average_reports, evaluate_all
from .model import DDSRNetParams, ModelConfig, ddsrnet_forward, init_params, param_count
from .tensor import AdamState, Array, Tensor, adam_step, backward, bilinear_matrix

emit_trainer_log = make_component_logger("trainer")

ABLATIONS: tuple[tuple[str, str], ...] = (
    ("no-spatial", "Without Spatial-Net"),
    ("no-wavelet", "Without Wavelet-Net"),
    ("unshared-high", "Without Shared Wavelet Branch"),
    ("no-grouping", "Without Band Grouping"),
    ("no-hybrid-loss", "Without Hybrid Loss"),
)
FULL_MODEL_LABEL = "Full Model"


class EpochRecord(BaseModel):
    epoch: int
    train: LossBreakdown
    val: float
    best: bool

    def line(self) -> str:
        t = self.train
        return (
            f"EPOCH {self.epoch} train={t.total:.10g} rec={t.rec:.10g} spatial={t.spatial:.10g} "
            f"low={t.low:.10g} high={t.high:.10g} val={self.val:.10g} best={str(self.best).lower()}"
        )


class TrainLog(BaseModel):
    epochs: list[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    stopped_early: bool = False
    wall_seconds: float = 0.0

    def to_text(self) -> str:
        return "".join(record.line() + "\n" for record in self.epochs)


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: DDSRNetParams
    model: ModelConfig
    log: TrainLog


class EvaluationReport(BaseModel):
    model: MetricReport
    bicubic: MetricReport
    bilinear: MetricReport
    patches: int

    def to_text(self) -> str:
        return (
            self.model.to_block()
            + self.model.metrics_line()
            + "\n"
            + self.bicubic.metrics_line("BASELINE bicubic")
            + "\n"
            + self.bilinear.metrics_line("BASELINE bilinear")
            + "\n"
        )


class AblationRow(BaseModel):
    flag: str | None
    label: str
    mpsnr: float
    sam: float
    parameters: int


def with_model(config: TrainConfig, **changes: object) -> TrainConfig:
    return config.model_copy(update={"model": config.model.model_copy(update=changes)})


def apply_ablation(config: TrainConfig, flag: str | None) -> TrainConfig:
    """Switch one component off; `None` returns the configuration unchanged."""
    if flag is None:
        return config
    match flag:
        case "no-spatial":
            return with_model(config, use_spatial_net=False)
        case "no-wavelet":
            return with_model(config, use_wavelet_net=False)
        case "unshared-high":
            return with_model(config, share_high_branch=False)
        case "no-grouping":
            return config.model_copy(update={"band_grouping": False})
        case "no-hybrid-loss":
            loss = config.loss.model_copy(
                update={"rec": 1.0, "spatial": 0.0, "low": 0.0, "high": 0.0}
            )
            return config.model_copy(update={"loss": loss})
        case _:
            choices = ", ".join(name for name, _ in ABLATIONS)
            raise ValueError(f"unknown ablation {flag!r}; choose from {choices}")


def resolve_model_config(config: TrainConfig, data: PreparedData) -> ModelConfig:
    channels = data.spec.group_size if config.band_grouping else data.padded_bands
    return config.model.model_copy(update={"channels": channels, "scale": data.spec.scale})


def to_samples(pairs: Sequence[PatchPair], channels: int) -> tuple[Array, Array]:
    """Stack patches into (N, channels, h, w) arrays, one sample per band group."""
    hr = np.concatenate([group_bands(pair.hr, channels) for pair in pairs], axis=0)
    lr = np.concatenate([group_bands(pair.lr, channels) for pair in pairs], axis=0)
    return hr, lr


def batch_slices(count: int, batch_size: int) -> list[slice]:
    return [slice(start, min(start + batch_size, count)) for start in range(0, count, batch_size)]


def validation_loss(
    params: DDSRNetParams,
    model: ModelConfig,
    config: TrainConfig,
    hr: Array,
    lr: Array,
) -> float:
    total = 0.0
    for window in batch_slices(hr.shape[0], config.batch_size):
        outputs = ddsrnet_forward(Tensor(lr[window]), params, model)
        _, breakdown = hybrid_loss(outputs, Tensor(hr[window]), config.loss, config.delta)
        total += breakdown.total * (window.stop - window.start)
    return total / hr.shape[0]


def mean_breakdown(parts: list[tuple[LossBreakdown, int]]) -> LossBreakdown:
    count = sum(size for _, size in parts)
    fields = ("total", "rec", "spatial", "low", "high")
    return LossBreakdown(
        **{name: sum(getattr(part, name) * size for part, size in parts) / count for name in fields}
    )


def train(
    config: TrainConfig,
    data: PreparedData,
    *,
    on_epoch: Callable[[EpochRecord], object] | None = None,
) -> TrainResult:
    """Train one weight-shared model over every (band group, patch) sample.

    Returns the parameters from the epoch with the lowest validation loss.
    """
    started = time.monotonic()
    model = resolve_model_config(config, data)
    train_pairs = materialize_patches(data.split("train"), data.cubes)
    val_pairs = materialize_patches(data.split("val"), data.cubes)
    if not train_pairs or not val_pairs:
        raise ValueError("training needs at least one train and one validation patch")
    train_hr, train_lr = to_samples(train_pairs, model.channels)
    val_hr, val_lr = to_samples(val_pairs, model.channels)

    rng = np.random.default_rng(config.seed)
    params = init_params(model, seed=config.seed)
    state = AdamState(lr=config.lr)
    best_params = params.clone()
    log = TrainLog()
    token = bind_log_context(seed=config.seed, samples=int(train_hr.shape[0]))
    emit_trainer_log(
        "train.start",
        parameters=param_count(params),
        train_samples=int(train_hr.shape[0]),
        val_samples=int(val_hr.shape[0]),
        channels=model.channels,
    )
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(train_hr.shape[0])
            parts: list[tuple[LossBreakdown, int]] = []
            for batch, window in enumerate(batch_slices(order.size, config.batch_size), start=1):
                chosen = order[window]
                outputs = ddsrnet_forward(Tensor(train_lr[chosen]), params, model)
                target = Tensor(train_hr[chosen])
                loss, breakdown = hybrid_loss(outputs, target, config.loss, config.delta)
                if not math.isfinite(breakdown.total):
                    emit_trainer_log("train.diverged", level="error", epoch=epoch, batch=batch)
                    raise DivergenceError(
                        f"non-finite training loss {breakdown.total}", epoch=epoch, batch=batch
                    )
                params.zero_grad()
                backward(loss)
                _ = adam_step(params.parameters(), state)
                parts.append((breakdown, int(chosen.size)))

            val = validation_loss(params, model, config, val_hr, val_lr)
            if not math.isfinite(val):
                emit_trainer_log("train.diverged", level="error", epoch=epoch, batch=None)
                raise DivergenceError(f"non-finite validation loss {val}", epoch=epoch)
            improved = val <= log.best_val - config.min_improvement
            if improved:
                log.best_val = val
                log.best_epoch = epoch
                best_params = params.clone()
            record = EpochRecord(epoch=epoch, train=mean_breakdown(parts), val=val, best=improved)
            log.epochs.append(record)
            emit_trainer_log(
                "epoch.complete", epoch=epoch, train=record.train.total, val=val, best=improved
            )
            if on_epoch is not None:
                _ = on_epoch(record)
            if epoch - log.best_epoch >= config.patience:
                log.stopped_early = True
                emit_trainer_log("train.early_stop", epoch=epoch, best_epoch=log.best_epoch)
                break
    finally:
        reset_log_context(token)

    log.wall_seconds = time.monotonic() - started
    emit_trainer_log(
        "train.complete",
        epochs=len(log.epochs),
        best_epoch=log.best_epoch,
        best_val=log.best_val,
        seconds=log.wall_seconds,
    )
    return TrainResult(params=best_params, model=model, log=log)


def predict_groups(params: DDSRNetParams, model: ModelConfig, lr: Array) -> Array:
    """Super-resolve a (bands, h, w) patch; bands must be a multiple of the model width."""
    if lr.shape[0] % model.channels:
        raise ShapeError(
            f"{lr.shape[0]} bands cannot be split into model inputs of {model.channels} channels"
        )
    groups = group_bands(lr, model.channels)
    outputs = ddsrnet_forward(Tensor(groups), params, model)
    return outputs.sr.data


def check_compatible(model: ModelConfig, data: PreparedData) -> None:
    if model.scale != data.spec.scale:
        raise ShapeError(
            f"model scale {model.scale} does not match dataset scale {data.spec.scale}"
        )
    if data.padded_bands % model.channels:
        raise ShapeError(
            f"model expects {model.channels}-channel inputs; dataset has {data.padded_bands} bands"
        )


def bilinear_resize(values: Array, scale: int) -> Array:
    rows = bilinear_matrix(values.shape[-2], scale)
    cols = bilinear_matrix(values.shape[-1], scale)
    return np.matmul(np.matmul(rows, values.astype(np.float64)), cols.T).astype(np.float32)


def evaluate(
    params: DDSRNetParams,
    data: PreparedData,
    model: ModelConfig,
    *,
    passthrough: bool = False,
) -> EvaluationReport:
    """Metrics on the test patches in the scene's original units.

    Padded bands are removed and predictions clamped to [0, 1] before
    denormalizing. `passthrough` scores the reference against itself.
    """
    check_compatible(model, data)
    records = data.split("test")
    if not records:
        raise ValueError("dataset has no test patches")
    pairs = materialize_patches(records, data.cubes)
    reports: dict[str, list[MetricReport]] = {"model": [], "bicubic": [], "bilinear": []}
    for record, pair in zip(records, pairs, strict=True):
        cube = data.cubes[record.cube_index]
        if cube.scaling is None:
            raise ValueError("evaluation needs a normalized cube")
        original = cube.original_bands
        reference = cube.scaling.denormalize(pair.hr[:original])
        if passthrough:
            predicted = pair.hr[:original]
        else:
            predicted = ungroup_bands(predict_groups(params, model, pair.lr), original)
        size = pair.hr.shape[-1]
        candidates = {
            "model": predicted,
            "bicubic": bicubic_resize(pair.lr, size, size)[:original],
            "bilinear": bilinear_resize(pair.lr, record.scale)[:original],
        }
        for name, values in candidates.items():
            clamped = np.clip(values, 0.0, 1.0)
            reports[name].append(
                evaluate_all(
                    cube.scaling.denormalize(clamped), reference, data_range=cube.scaling.span
                )
            )
    report = EvaluationReport(
        model=average_reports(reports["model"]),
        bicubic=average_reports(reports["bicubic"]),
        bilinear=average_reports(reports["bilinear"]),
        patches=len(records),
    )
    emit_trainer_log(
        "eval.complete",
        patches=report.patches,
        mpsnr=report.model.mpsnr,
        bicubic_mpsnr=report.bicubic.mpsnr,
    )
    return report


def run_ablation(base: TrainConfig, data: PreparedData) -> list[AblationRow]:
    """Train and evaluate each single-component removal, then the full model, with one seed."""
    rows: list[AblationRow] = []
    variants: list[tuple[str | None, str]] = [*ABLATIONS, (None, FULL_MODEL_LABEL)]
    for flag, label in variants:
        token = bind_log_context(ablation=flag or "full")
        try:
            result = train(apply_ablation(base, flag), data)
            report = evaluate(result.params, data, result.model)
        finally:
            reset_log_context(token)
        rows.append(
            AblationRow(
                flag=flag,
                label=label,
                mpsnr=report.model.mpsnr,
                sam=report.model.sam,
                parameters=param_count(result.params),
            )
        )
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    width = max(len(row.label) for row in rows)
    lines = [f"{'variant':<{width}}  {'mpsnr':>12}  {'sam':>12}  {'params':>8}"]
    lines.extend(
        f"{row.label:<{width}}  {row.mpsnr:>12.6f}  {row.sam:>12.6f}  {row.parameters:>8d}"
        for row in rows
    )
    return "\n".join(lines) + "\n"

