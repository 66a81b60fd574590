import math

import numpy as np
import pytest

from invtransport.grad import (
    finite_difference_gradient,
    latent_chain_factors,
    path_score,
    render_with_gradients,
    sign_preview,
)
from invtransport.sampling import RngStream
from invtransport.scene import Camera, ConstantEnvLight, DirectionalLight, Medium, Scene, Slab, Sphere
from invtransport.transport import Image, PathEvents, render, trace_volume_path

ORTHO = Camera(kind="orthographic", position=(0, 0, -3), extent=1.0, width=4, height=4)
ABSORBER = Scene(Medium(2.0, 1e-6, 0.0), Slab(0.0, 1.0), ConstantEnvLight(), ORTHO)


def test_path_score_examples():
    m = Medium(2.0, 0.8, 0.0)
    s = path_score(PathEvents((), (), 1.7), m)
    assert s.as_array().tolist() == [-1.7, 0.0, 0.0]
    s = path_score(PathEvents((0.1, 0.2, 0.3), (0.5, -0.2, 0.9), 0.4), m)
    assert s.d_albedo == pytest.approx(3.75, abs=1e-15)
    assert s.d_sigma_t == pytest.approx(3 / 2.0 - 1.0, abs=1e-15)
    assert s.d_g == pytest.approx(3 * (0.5 - 0.2 + 0.9), abs=1e-12)


def test_traced_scores_follow_depth():
    sc = Scene(Medium(4.0, 0.7, 0.3), Sphere(), DirectionalLight((0.6, 0.0, -0.8)), Camera(width=8, height=8))
    for i in range(40):
        path = trace_volume_path(sc, (4, 4), RngStream(5, i))
        assert path.scores.d_albedo == path.depth / 0.7
        assert np.all(np.isfinite(path.scores.as_array()))


def test_forward_matches_render_bit_exactly():
    sc = Scene(Medium(5.0, 0.8, 0.5), Sphere(), DirectionalLight((0.6, 0.0, -0.8)), Camera(width=8, height=8))
    gr = render_with_gradients(sc, 16, seed=21)
    ref = render(sc, 16, seed=21)
    assert np.array_equal(gr.forward.data, ref.data)
    assert np.array_equal(gr.forward.variance, ref.variance)
    assert gr.stacked().shape == (3, 8, 8, 3)


@pytest.mark.parametrize("spp", [256, 1024])
def test_absorber_sigma_derivative(spp):
    gr = render_with_gradients(ABSORBER, spp, seed=100 + spp)
    n = 16
    mean = gr.d_sigma_t.data[..., 0].mean()
    se = math.sqrt(gr.d_sigma_t.variance[..., 0].sum()) / n
    assert abs(mean + math.exp(-2.0)) < 3 * se


def test_background_derivatives_are_zero():
    sc = Scene(Medium(5.0, 0.8, 0.5), Sphere((0, 0, 0), 0.5), DirectionalLight((0.6, 0.0, -0.8)),
               Camera(width=16, height=16))
    gr = render_with_gradients(sc, 8, seed=3)
    corner = (slice(0, 3), slice(0, 3))
    for name in ("sigma_t", "albedo", "g"):
        assert np.all(gr.derivative(name).data[corner] == 0.0)
    assert np.all(gr.forward.data[corner] == 0.0)


def test_finite_difference_domain_errors():
    sc = ABSORBER.with_medium(albedo=0.99)
    with pytest.raises(ValueError, match="domain"):
        finite_difference_gradient(sc, "albedo", 0.05, 4, 0)
    with pytest.raises(ValueError):
        finite_difference_gradient(sc, "eta", 0.01, 4, 0)
    with pytest.raises(ValueError):
        finite_difference_gradient(sc, "g", 0.0, 4, 0)


def test_finite_difference_transmittance_slab():
    # the per-path FD of an escape indicator is Bernoulli-like, so agreement is
    # checked against the analytic derivative within its own standard error
    fd = finite_difference_gradient(ABSORBER, "sigma_t", 1e-3, 4096, seed=8)
    mean = fd.data[..., 0].mean()
    se = math.sqrt(fd.variance[..., 0].sum()) / 16
    assert abs(mean + math.exp(-2.0)) < 3 * se


def test_g_derivative_at_isotropy_matches_finite_difference():
    sc = Scene(Medium(3.0, 0.8, 0.0), Sphere(), DirectionalLight((0.0, 0.28, 0.96)),
               Camera(width=8, height=8))
    score = render_with_gradients(sc, 1024, seed=31).d_g
    fd = finite_difference_gradient(sc, "g", 1e-2, 1024, seed=32)
    s, s_se = score.total()
    f, f_se = fd.total()
    assert abs(s - f) < 3 * math.hypot(s_se, f_se)


def test_latent_chain_factors():
    m = Medium(5.0, 0.8, 0.5)
    assert latent_chain_factors(m).tolist() == pytest.approx([5.0, 0.16, 0.75])


def test_sign_preview_channels():
    img = Image(np.array([[[1.0, 1.0, 1.0], [-2.0, -2.0, -2.0]]]))
    prev = sign_preview(img).data
    assert prev[0, 0].tolist() == [1.0, 0.0, 0.0]
    assert prev[0, 1].tolist() == [0.0, 0.0, 2.0]
