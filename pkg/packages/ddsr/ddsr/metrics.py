"""Image-quality metrics on (bands, height, width) arrays."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel
from skimage.metrics import structural_similarity

from .constants import PSNR_CAP_DB, SAM_NORM_FLOOR, SSIM_SIGMA, SSIM_WINDOW
from .errors import ShapeError
from .tensor import Array

METRIC_NAMES = ("mpsnr", "mssim", "sam", "rmse", "cc")


class MetricReport(BaseModel):
    mpsnr: float
    mssim: float
    sam: float
    rmse: float
    cc: float

    def to_block(self) -> str:
        return "".join(f"{name}: {getattr(self, name):.8f}\n" for name in METRIC_NAMES)

    def metrics_line(self, prefix: str = "METRICS") -> str:
        values = " ".join(f"{name}={getattr(self, name):.8f}" for name in METRIC_NAMES)
        return f"{prefix} {values}"


def average_reports(reports: list[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("cannot average an empty list of metric reports")
    means = {
        name: float(np.mean([getattr(report, name) for report in reports])) for name in METRIC_NAMES
    }
    return MetricReport(**means)


def check_pair(pred: Array, ref: Array) -> tuple[Array, Array]:
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ")
    if pred.ndim != 3:
        raise ShapeError(f"metrics expect (bands, height, width) arrays, got shape {pred.shape}")
    return pred.astype(np.float64), ref.astype(np.float64)


def mpsnr(pred: Array, ref: Array, data_range: float = 1.0) -> float:
    """Band-averaged PSNR in dB; a band with zero error counts as PSNR_CAP_DB."""
    pred64, ref64 = check_pair(pred, ref)
    mse = np.mean((pred64 - ref64) ** 2, axis=(1, 2))
    with np.errstate(divide="ignore"):
        psnr = 10.0 * np.log10(data_range**2 / mse)
    return float(np.mean(np.minimum(np.where(mse == 0, PSNR_CAP_DB, psnr), PSNR_CAP_DB)))


def mssim(pred: Array, ref: Array, data_range: float = 1.0) -> float:
    pred64, ref64 = check_pair(pred, ref)
    if min(pred64.shape[1:]) < SSIM_WINDOW:
        raise ShapeError(
            f"SSIM needs spatial dimensions of at least {SSIM_WINDOW}, got {pred64.shape[1:]}"
        )
    scores = [
        structural_similarity(
            ref_band,
            pred_band,
            data_range=data_range,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
        )
        for pred_band, ref_band in zip(pred64, ref64, strict=True)
    ]
    return float(np.mean(scores))


def sam_with_count(pred: Array, ref: Array) -> tuple[float, int]:
    """Mean spectral angle in degrees and the number of skipped near-zero pixels."""
    pred64, ref64 = check_pair(pred, ref)
    pred_vectors = pred64.reshape(pred64.shape[0], -1)
    ref_vectors = ref64.reshape(ref64.shape[0], -1)
    pred_norm = np.linalg.norm(pred_vectors, axis=0)
    ref_norm = np.linalg.norm(ref_vectors, axis=0)
    valid = (pred_norm >= SAM_NORM_FLOOR) & (ref_norm >= SAM_NORM_FLOOR)
    skipped = int(valid.size - valid.sum())
    if not valid.any():
        raise ValueError("spectral angle undefined: every pixel has a near-zero spectrum")
    cosine = np.sum(pred_vectors[:, valid] * ref_vectors[:, valid], axis=0) / (
        pred_norm[valid] * ref_norm[valid]
    )
    angles = np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0)))
    return float(np.mean(angles)), skipped


def sam(pred: Array, ref: Array) -> float:
    return sam_with_count(pred, ref)[0]


def rmse(pred: Array, ref: Array) -> float:
    pred64, ref64 = check_pair(pred, ref)
    return float(np.sqrt(np.mean((pred64 - ref64) ** 2)))


def cc(pred: Array, ref: Array) -> float:
    """Mean per-band Pearson correlation over bands where both inputs vary."""
    pred64, ref64 = check_pair(pred, ref)
    scores: list[float] = []
    for pred_band, ref_band in zip(pred64, ref64, strict=True):
        pred_centred = pred_band - pred_band.mean()
        ref_centred = ref_band - ref_band.mean()
        denominator = np.sqrt(np.sum(pred_centred**2) * np.sum(ref_centred**2))
        if denominator == 0:
            continue
        scores.append(float(np.sum(pred_centred * ref_centred) / denominator))
    if not scores:
        raise ValueError("correlation undefined: every band is constant")
    return float(np.mean(scores))


def evaluate_all(pred: Array, ref: Array, data_range: float = 1.0) -> MetricReport:
    return MetricReport(
        mpsnr=mpsnr(pred, ref, data_range),
        mssim=mssim(pred, ref, data_range),
        sam=sam(pred, ref),
        rmse=rmse(pred, ref),
        cc=cc(pred, ref),
    )
