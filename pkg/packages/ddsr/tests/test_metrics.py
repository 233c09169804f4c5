from __future__ import annotations

import math

import numpy as np
import pytest
from ddsr.errors import ShapeError
from ddsr.metrics import (
    MetricReport,
    average_reports,
    cc,
    evaluate_all,
    mpsnr,
    mssim,
    rmse,
    sam,
    sam_with_count,
)
from ddsr.tensor import Array
from scipy import ndimage


def random_pairs(count: int, seed: int = 0) -> list[tuple[Array, Array]]:
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        ref = rng.random((3, 16, 16))
        pred = np.clip(ref + rng.normal(0.0, rng.uniform(0.01, 0.2), ref.shape), 0.0, 1.0)
        pairs.append((pred, ref))
    return pairs


def psnr_oracle(pred: Array, ref: Array) -> float:
    values = [10.0 * np.log10(1.0 / np.mean((p - r) ** 2)) for p, r in zip(pred, ref, strict=True)]
    return float(np.mean(values))


def ssim_oracle(pred: Array, ref: Array) -> float:
    c1, c2 = 0.01**2, 0.03**2

    def blur(image: Array) -> Array:
        return ndimage.gaussian_filter(image, sigma=1.5, truncate=3.5, mode="reflect")

    scores = []
    for p, r in zip(pred, ref, strict=True):
        mu_p, mu_r = blur(p), blur(r)
        var_p = blur(p * p) - mu_p**2
        var_r = blur(r * r) - mu_r**2
        cov = blur(p * r) - mu_p * mu_r
        ssim_map = ((2 * mu_p * mu_r + c1) * (2 * cov + c2)) / (
            (mu_p**2 + mu_r**2 + c1) * (var_p + var_r + c2)
        )
        scores.append(ssim_map[5:-5, 5:-5].mean())
    return float(np.mean(scores))


def test_psnr_and_ssim_match_reference_formulas() -> None:
    for pred, ref in random_pairs(50):
        assert mpsnr(pred, ref) == pytest.approx(psnr_oracle(pred, ref), rel=1e-10)
        assert mssim(pred, ref) == pytest.approx(ssim_oracle(pred, ref), abs=1e-8)


def sam_oracle(pred: Array, ref: Array) -> float:
    angles = []
    for row in range(ref.shape[1]):
        for col in range(ref.shape[2]):
            p, r = pred[:, row, col], ref[:, row, col]
            p_norm, r_norm = float(np.linalg.norm(p)), float(np.linalg.norm(r))
            if min(p_norm, r_norm) < 1e-8:
                continue
            cosine = float(np.dot(p, r)) / (p_norm * r_norm)
            angles.append(math.degrees(math.acos(min(1.0, max(-1.0, cosine)))))
    return sum(angles) / len(angles)


def rmse_oracle(pred: Array, ref: Array) -> float:
    squared = [(float(p) - float(r)) ** 2 for p, r in zip(pred.ravel(), ref.ravel(), strict=True)]
    return math.sqrt(sum(squared) / len(squared))


def cc_oracle(pred: Array, ref: Array) -> float:
    scores = [np.corrcoef(p.ravel(), r.ravel())[0, 1] for p, r in zip(pred, ref, strict=True)]
    return float(np.mean(scores))


def test_spectral_and_error_metrics_match_pixel_loops() -> None:
    for pred, ref in random_pairs(50, seed=7):
        assert sam(pred, ref) == pytest.approx(sam_oracle(pred, ref), abs=1e-6)
        assert rmse(pred, ref) == pytest.approx(rmse_oracle(pred, ref), abs=1e-6)
        assert cc(pred, ref) == pytest.approx(cc_oracle(pred, ref), abs=1e-6)


def test_metrics_ignore_band_order() -> None:
    pred, ref = random_pairs(1, seed=8)[0]
    order = [2, 0, 1]
    before = evaluate_all(pred, ref)
    after = evaluate_all(pred[order], ref[order])
    for name in ("mpsnr", "mssim", "sam", "rmse", "cc"):
        assert getattr(after, name) == pytest.approx(getattr(before, name), rel=1e-12)


def test_psnr_falls_as_noise_grows() -> None:
    rng = np.random.default_rng(9)
    ref = rng.random((3, 16, 16))
    noise = rng.standard_normal(ref.shape)
    scores = [mpsnr(ref + level * noise, ref) for level in (0.01, 0.05, 0.1)]
    assert scores[0] > scores[1] > scores[2]


def test_psnr_known_values() -> None:
    ref = np.random.default_rng(10).random((2, 8, 8)) * 0.5
    assert mpsnr(ref + 0.1, ref) == pytest.approx(20.0, abs=1e-9)
    errors = np.array([0.1, 0.01]).reshape(2, 1, 1)
    assert mpsnr(ref + errors, ref) == pytest.approx(30.0, abs=1e-9)


def test_ssim_of_inverted_binary_image_is_negative() -> None:
    ref = (np.random.default_rng(11).random((1, 16, 16)) > 0.5).astype(np.float64)
    assert mssim(1.0 - ref, ref) < 0.0


def test_identical_inputs_hit_metric_ceilings() -> None:
    ref = np.random.default_rng(1).random((4, 12, 12))
    assert mpsnr(ref, ref) == 100.0
    assert mssim(ref, ref) == pytest.approx(1.0)
    assert sam(ref, ref) == pytest.approx(0.0, abs=1e-5)
    assert rmse(ref, ref) == 0.0
    assert cc(ref, ref) == pytest.approx(1.0)


def test_psnr_respects_data_range() -> None:
    pred, ref = random_pairs(1, seed=2)[0]
    assert mpsnr(pred * 255.0, ref * 255.0, data_range=255.0) == pytest.approx(mpsnr(pred, ref))


def test_spectral_angle_of_orthogonal_spectra() -> None:
    pred = np.array([1.0, 0.0]).reshape(2, 1, 1)
    ref = np.array([0.0, 1.0]).reshape(2, 1, 1)
    assert sam(pred, ref) == pytest.approx(90.0, abs=1e-12)
    assert sam(2.0 * ref, ref) == pytest.approx(0.0, abs=1e-6)


def test_spectral_angle_skips_zero_spectra() -> None:
    ref = np.ones((3, 1, 2))
    pred = ref.copy()
    pred[:, 0, 1] = 0.0
    angle, skipped = sam_with_count(pred, ref)
    assert skipped == 1
    assert angle == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError, match="near-zero"):
        sam(np.zeros((3, 2, 2)), np.ones((3, 2, 2)))


def test_rmse_and_correlation_known_values() -> None:
    ref = np.random.default_rng(3).random((2, 5, 5))
    assert rmse(np.zeros_like(ref), np.zeros_like(ref) + 0.5) == pytest.approx(0.5)
    assert cc(2.0 * ref + 1.0, ref) == pytest.approx(1.0)
    assert cc(-ref, ref) == pytest.approx(-1.0)


def test_correlation_skips_constant_bands() -> None:
    ref = np.random.default_rng(4).random((2, 5, 5))
    pred = ref.copy()
    pred[1] = 0.3
    assert cc(pred, ref) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="constant"):
        cc(np.ones((2, 3, 3)), np.ones((2, 3, 3)))


def test_metrics_reject_mismatched_or_small_inputs() -> None:
    with pytest.raises(ShapeError):
        rmse(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))
    with pytest.raises(ShapeError, match="bands, height, width"):
        mpsnr(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ShapeError, match="SSIM"):
        mssim(np.zeros((1, 10, 16)), np.zeros((1, 10, 16)))


def test_report_text_formats() -> None:
    report = MetricReport(mpsnr=40.5, mssim=0.9, sam=1.25, rmse=0.01, cc=0.99)
    assert report.to_block().splitlines() == [
        "mpsnr: 40.50000000",
        "mssim: 0.90000000",
        "sam: 1.25000000",
        "rmse: 0.01000000",
        "cc: 0.99000000",
    ]
    assert report.metrics_line() == (
        "METRICS mpsnr=40.50000000 mssim=0.90000000 sam=1.25000000 rmse=0.01000000 cc=0.99000000"
    )


def test_average_reports_is_field_mean() -> None:
    first = MetricReport(mpsnr=30.0, mssim=0.8, sam=2.0, rmse=0.02, cc=0.9)
    second = MetricReport(mpsnr=40.0, mssim=1.0, sam=4.0, rmse=0.04, cc=1.0)
    average = average_reports([first, second])
    assert average.mpsnr == pytest.approx(35.0)
    assert average.sam == pytest.approx(3.0)
    with pytest.raises(ValueError):
        average_reports([])


def test_evaluate_all_bundles_every_metric() -> None:
    pred, ref = random_pairs(1, seed=5)[0]
    report = evaluate_all(pred, ref)
    assert report.mpsnr == pytest.approx(mpsnr(pred, ref))
    assert report.cc == pytest.approx(cc(pred, ref))
