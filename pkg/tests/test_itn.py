import math

import numpy as np
import pytest

from invtransport.dataset import DatasetSpec, gen_dataset
from invtransport.inverse import LatentParams, to_physical
from invtransport.itn import (
    FEATURE_DIM,
    Example,
    Network,
    TrainConfig,
    evaluate,
    examples_from,
    featurize,
    latent_mse,
    net_forward,
    regularizer_latent_grad,
    train,
    training_gradient,
    true_latent,
)
from invtransport.scene import Box, Camera, DirectionalLight, Medium, Scene, Sphere
from invtransport.transport import Image, render

LIGHTS = {
    "side": DirectionalLight((1.0, 0.0, 0.0), (3, 3, 3)),
    "back": DirectionalLight((0.5, 0.0, 0.8660254037844386), (3, 3, 3)),
}


def tiny_spec(size, per_combo, shapes=None, lights=None, **kw):
    return DatasetSpec(
        shapes=shapes or {"sphere": Sphere()},
        lights=lights or {"side": LIGHTS["side"]},
        camera=Camera(position=(0, 0, -4), fov=35, width=size, height=size),
        params_per_combo=per_combo, **kw)


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    spec = tiny_spec(32, 6, shapes={"sphere": Sphere(), "box": Box((-0.7,) * 3, (0.7,) * 3)},
                     lights=LIGHTS, held_out_shapes=("box",), held_out_lights=("back",), spp=8, seed=3)
    return gen_dataset(spec, tmp_path_factory.mktemp("small"))


@pytest.fixture(scope="module")
def clean_set(tmp_path_factory):
    # MS-SSIM is very sensitive to render noise; the oracle check needs clean inputs
    return gen_dataset(tiny_spec(32, 2, lights=LIGHTS, spp=256, seed=5), tmp_path_factory.mktemp("clean"))


@pytest.fixture(scope="module")
def fifty(tmp_path_factory):
    return gen_dataset(tiny_spec(16, 50, spp=4, seed=1), tmp_path_factory.mktemp("fifty"))


def small_net(seed=0, sizes=(FEATURE_DIM, 8, 6, 3)):
    return Network.initialize(sizes, seed=seed)


def test_featurize_examples():
    assert np.array_equal(featurize(Image(np.zeros((32, 32, 3)))), np.zeros(FEATURE_DIM))
    f = featurize(Image(np.full((64, 48, 3), 2.5)))
    assert f.shape == (FEATURE_DIM,)
    assert np.allclose(f, math.log1p(2.5), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        featurize(Image(np.zeros((8, 32, 3))))


def test_featurize_block_average():
    data = np.zeros((32, 32, 3))
    data[0:2, 2:4, 1] = 4.0  # one 2x2 block, green channel
    f = featurize(Image(data)).reshape(16, 16, 3)
    assert f[0, 1, 1] == pytest.approx(math.log1p(4.0))
    assert np.count_nonzero(f) == 1


def test_net_forward_examples():
    net = Network.zeros()
    out, _ = net_forward(net, np.ones(FEATURE_DIM))
    assert out.tolist() == [0.0, 0.0, 0.0]
    m = to_physical(LatentParams.from_array(out))
    assert (m.sigma_t, m.albedo, m.g) == (1.0, 0.5, 0.0)
    with pytest.raises(ValueError, match="does not match"):
        net_forward(net, np.ones(10))


def test_hand_built_linear_map():
    net = Network.zeros((4, 4, 3))
    net.weights[0][:] = np.eye(4)
    net.weights[1][:] = np.array([[1.0, 2, 0, 0], [0, 0, 3, 0], [0, 0, 0, -1]])
    net.biases[1][:] = [0.5, 0, 0]
    probe = np.array([1.0, 2.0, 3.0, 4.0])  # positive, so the rectifier passes it through
    out, _ = net_forward(net, probe)
    assert out.tolist() == [5.5, 9.0, -4.0]
    again, _ = net_forward(net, probe)
    assert np.array_equal(out, again)


def _supervised_loss(net, feats, targets):
    out, _ = net_forward(net, feats)
    return float(np.sum((out - targets) ** 2))


def test_backprop_matches_finite_differences(small_set):
    ex = examples_from(small_set, small_set.records[:3])
    net = small_net(seed=5)
    cfg = TrainConfig(mode="ITN", lam=0.0)
    res = training_gradient(net, ex, cfg, lam=0.0)
    flat_grad = np.concatenate([g.ravel() for g in res.grads])
    feats = np.stack([e.features for e in ex])
    targets = np.stack([e.latent for e in ex])
    base = net.flat()
    rng = np.random.default_rng(0)
    candidates = np.flatnonzero(np.abs(flat_grad) > 1e-3)
    probe = rng.choice(candidates, 10, replace=False)
    h = 1e-6
    for k in probe:
        plus, minus = base.copy(), base.copy()
        plus[k] += h
        minus[k] -= h
        net.set_flat(plus)
        lp = _supervised_loss(net, feats, targets)
        net.set_flat(minus)
        lm = _supervised_loss(net, feats, targets)
        fd = (lp - lm) / (2 * h)
        assert abs(fd - flat_grad[k]) <= 1e-4 * abs(flat_grad[k])
    net.set_flat(base)


def test_zero_lambda_is_supervised_only(small_set):
    ex = examples_from(small_set, small_set.records[:4])
    net = small_net()
    rn = training_gradient(net, ex, TrainConfig(mode="RN"))
    itn = training_gradient(net, ex, TrainConfig(mode="ITN"), lam=0.0)
    for a, b in zip(rn.grads, itn.grads):
        assert np.array_equal(a, b)


def test_output_at_truth_has_zero_supervised_gradient(small_set):
    ex = examples_from(small_set, small_set.records[:1])
    net = Network.zeros((FEATURE_DIM, 8, 6, 3))
    net.biases[-1][:] = ex[0].latent
    res = training_gradient(net, ex, TrainConfig(mode="RN"))
    assert res.supervised == 0.0
    assert all(np.all(g == 0) for g in res.grads)


def test_regularizer_stationary_at_truth():
    sc = Scene(Medium(5.0, 0.8, 0.5), Sphere(), LIGHTS["back"], Camera(width=16, height=16, fov=35))
    ex = Example(featurize(Image(np.zeros((16, 16, 3)))), true_latent(sc.medium),
                 render(sc, 4096, 77), sc)
    grads = np.array([regularizer_latent_grad(ex, ex.latent, "ITN", 8, s)[1] for s in range(40)])
    se = grads.std(0, ddof=1) / math.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(0)) < 3 * se)


def test_render_failure_skips_record(small_set):
    ex = examples_from(small_set, small_set.records[:2])
    ex[1].image = Image(np.zeros((4, 4, 3)))  # wrong film size makes the regularizer fail
    res = training_gradient(small_net(), ex, TrainConfig(mode="ITN", reg_spp=2), lam=1.0, seed=1)
    assert [name for name, _ in res.skipped] == [ex[1].name]


def test_rn_training_reduces_mse(fifty):
    ex = examples_from(fifty, fifty.records)
    assert len(ex) == 50
    cfg = TrainConfig(mode="RN", epochs=200, seed=2)
    start, _ = train(ex, TrainConfig(mode="RN", epochs=0, seed=2))
    net, log = train(ex, cfg)
    assert latent_mse(net, ex) <= latent_mse(start, ex) / 10
    assert len(log.epochs) == 200


def test_training_deterministic_and_lambda_scaled(small_set):
    ex = examples_from(small_set, small_set.split("train"))
    cfg = TrainConfig(mode="ITN", epochs=3, warm_start_epochs=2, reg_spp=2, seed=4,
                      layer_sizes=(FEATURE_DIM, 8, 6, 3))
    a, log_a = train(ex, cfg)
    b, _ = train(ex, cfg)
    assert np.array_equal(a.flat(), b.flat())
    sup, reg = log_a.lam_terms
    assert 0.5 <= log_a.lam * reg / sup <= 2.0
    with pytest.raises(ValueError):
        train([], cfg)


def test_checkpoint_round_trip(tmp_path):
    net = small_net(seed=9)
    net.input_mean = np.arange(FEATURE_DIM, dtype=float)
    net.input_scale = np.full(FEATURE_DIM, 2.0)
    net.save(tmp_path / "n.json")
    back = Network.load(tmp_path / "n.json")
    assert np.array_equal(back.flat(), net.flat())
    assert np.array_equal(back.input_mean, net.input_mean)


def test_evaluate_oracle(clean_set, small_set):
    ds = clean_set
    oracle = evaluate(None, ds, ["train"], spp=256, seed=1, predictor=lambda rec: rec.medium)
    assert len(oracle) == 1 and oracle[0].count == 4
    row = oracle[0]
    assert row.rmse_sigma_t == row.rmse_albedo == row.rmse_g == 0.0
    assert row.one_minus_ms_ssim < 0.01
    # appearance error of the truth is Monte Carlo noise of two independent
    # renders; estimate its size from the renderer's own variance
    floors = []
    for rec in ds.records:
        extra = render(ds.scene_for(rec), 256, 999)
        floors.append(math.sqrt(2 * float(np.mean(extra.variance))))
    assert row.appearance_rmse < 1.5 * float(np.mean(floors))

    splits = ["train", "test-unseen-shape", "test-unseen-light", "test-unseen-both", "test"]
    rows = evaluate(None, small_set, splits, spp=4, predictor=lambda rec: rec.medium)
    # the box under the held-out light is the only unseen-both combination
    assert [r.split for r in rows] == splits


def test_evaluate_constant_prediction(small_set):
    const = Medium(6.0, 0.6, 0.4)
    rows = evaluate(None, small_set, ["test"], spp=4, predictor=lambda rec: const)
    truth = np.array([[r.medium.sigma_t, r.medium.albedo, r.medium.g] for r in small_set.split(
        "test-unseen-shape", "test-unseen-light", "test-unseen-both")])
    closed = np.sqrt(np.mean((truth - [6.0, 0.6, 0.4]) ** 2, axis=0))
    assert len(rows) == 1 and rows[0].count == len(truth)
    assert [rows[0].rmse_sigma_t, rows[0].rmse_albedo, rows[0].rmse_g] == pytest.approx(closed, abs=1e-12)
