from __future__ import annotations

import numpy as np
import pytest
from ddsr.errors import ShapeError
from ddsr.tensor import Parameter, Tensor, add, grad_check, huber
from ddsr.wavelet import WaveletPyramid, dwt2_haar, haar_analysis, haar_synthesis, idwt2_haar


def test_constant_block_has_only_approximation_energy() -> None:
    pyramid = dwt2_haar(Tensor(np.ones((1, 1, 2, 2))))
    assert pyramid.ll.data[0, 0, 0, 0] == 2.0
    np.testing.assert_array_equal(pyramid.high.data, 0.0)


def test_impulse_spreads_evenly_over_subbands() -> None:
    bands = haar_analysis(np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))
    np.testing.assert_array_equal(bands.reshape(-1), [0.5, 0.5, 0.5, 0.5])


def test_subband_sign_convention() -> None:
    # a=1 b=2 c=3 d=4
    bands = haar_analysis(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])).reshape(-1)
    np.testing.assert_allclose(bands, [5.0, -2.0, -1.0, 0.0])


@pytest.mark.parametrize(("dtype", "tolerance"), [(np.float32, 1e-5), (np.float64, 1e-10)])
def test_perfect_reconstruction_on_random_shapes(dtype: type, tolerance: float) -> None:
    rng = np.random.default_rng(0)
    for _ in range(200):
        shape = (
            int(rng.integers(1, 3)),
            int(rng.integers(1, 5)),
            2 * int(rng.integers(1, 9)),
            2 * int(rng.integers(1, 9)),
        )
        x = rng.standard_normal(shape).astype(dtype)
        restored = idwt2_haar(dwt2_haar(Tensor(x))).data
        error = np.max(np.abs(restored - x)) / max(1e-12, float(np.max(np.abs(x))))
        assert error < tolerance


def test_transform_preserves_energy() -> None:
    x = np.random.default_rng(1).standard_normal((2, 3, 8, 10))
    bands = haar_analysis(x)
    assert np.sum(bands**2) == pytest.approx(np.sum(x**2), rel=1e-10)


def test_odd_dimensions_are_rejected() -> None:
    with pytest.raises(ShapeError, match="even"):
        dwt2_haar(Tensor(np.zeros((1, 1, 3, 4))))


def test_inconsistent_subbands_are_rejected() -> None:
    pyramid = WaveletPyramid(
        ll=Tensor(np.zeros((1, 2, 4, 4))), high=Tensor(np.zeros((1, 2, 3, 4, 5)))
    )
    with pytest.raises(ShapeError):
        idwt2_haar(pyramid)


def test_synthesis_rejects_wrong_band_count() -> None:
    with pytest.raises(ShapeError):
        haar_synthesis(np.zeros((1, 1, 3, 2, 2)))


def test_transform_gradients_match_finite_differences() -> None:
    rng = np.random.default_rng(2)
    x = Parameter("x", rng.standard_normal((1, 2, 4, 6)))
    ll_target = Tensor(rng.standard_normal((1, 2, 2, 3)))
    high_target = Tensor(rng.standard_normal((1, 2, 3, 2, 3)))
    image_target = Tensor(rng.standard_normal((1, 2, 4, 6)))

    def model_fn() -> Tensor:
        pyramid = dwt2_haar(x)
        loss = add(huber(pyramid.ll, ll_target), huber(pyramid.high, high_target))
        return add(loss, huber(idwt2_haar(pyramid), image_target))

    result = grad_check(model_fn, [x], samples=48)
    assert result.passed, result
