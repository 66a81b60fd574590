import numpy as np
import pytest

from invtransport import metrics
from invtransport.metrics import compare, ms_ssim, rmse
from invtransport.transport import Image


def random_image(seed, size=64):
    return Image(np.random.default_rng(seed).random((size, size, 3)))


def test_rmse_examples():
    a = random_image(0)
    assert rmse(a, a) == 0.0
    assert rmse(Image(np.zeros((4, 4, 3))), Image(np.ones((4, 4, 3)))) == 1.0
    with pytest.raises(ValueError):
        rmse(Image(np.zeros((4, 4, 3))), Image(np.zeros((4, 5, 3))))


def test_rmse_symmetric_and_discerning():
    for s in range(10):
        a, b = random_image(s, 8), random_image(s + 100, 8)
        assert rmse(a, b) == pytest.approx(rmse(b, a), abs=1e-12)
        assert rmse(a, b) > 0


def test_ms_ssim_identity_and_symmetry():
    a, b = random_image(1), random_image(2)
    assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ms_ssim(a, b) == pytest.approx(ms_ssim(b, a), abs=1e-9)


def test_ms_ssim_degrades_with_noise():
    rng = np.random.default_rng(3)
    base = random_image(4).data
    noise = rng.normal(size=base.shape)
    values = [ms_ssim(Image(base), Image(base + s * noise)) for s in (0.01, 0.05, 0.2, 0.5)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ms_ssim_minimum_size():
    with pytest.raises(ValueError, match="32x32"):
        ms_ssim(random_image(0, 16), random_image(1, 16))


def test_single_scale_matches_scikit_image():
    structural_similarity = pytest.importorskip("skimage.metrics").structural_similarity
    rng = np.random.default_rng(5)
    x = rng.random((48, 48))
    y = np.clip(x + 0.1 * rng.normal(size=x.shape), 0, None)
    L = float(max(x.max(), y.max()))
    ours, _ = metrics._ssim_terms(x, y, (0.01 * L) ** 2, (0.03 * L) ** 2, metrics._gaussian_window())
    ref = structural_similarity(x, y, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=L)
    assert ours == pytest.approx(ref, abs=1e-10)


def test_compare_report():
    a, b = random_image(6), random_image(7)
    rep = compare(a, b)
    assert rep.one_minus_ms_ssim == 1.0 - rep.ms_ssim
    assert set(rep.as_record()) == {"rmse", "ms_ssim", "one_minus_ms_ssim"}
