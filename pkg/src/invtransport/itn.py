"""Regressor networks from images to medium parameters, and their training.

Three objectives share one network and one loop:

* ``RN``: supervised squared error on latent parameters only;
* ``ITN``: supervised error plus ``lambda * ||I - T(pred)||^2`` where ``T``
  is the full path tracer;
* ``SSN``: the same regularizer with a single-scattering renderer.

The regularizer gradient with respect to the predicted parameters comes
from the score-function derivative images, chain-ruled through the latent
transform and then backpropagated through the network.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .grad import latent_chain_factors
from .dataset import TEST_SPLITS
from .inverse import (
    AdamState,
    LatentParams,
    adam_step,
    from_physical,
    physical_loss_grad,
    to_physical,
)
from .metrics import ms_ssim, rmse
from .sampling import mix_seed
from .scene import Medium
from .transport import Image, render

log = logging.getLogger(__name__)

FEATURE_GRID = 16
FEATURE_DIM = FEATURE_GRID * FEATURE_GRID * 3
DEFAULT_LAYERS = (FEATURE_DIM, 64, 32, 3)
MODES = ("RN", "ITN", "SSN")
CHECKPOINT_FORMAT = "invtransport-network"
CHECKPOINT_VERSION = 1


def featurize(image) -> np.ndarray:
    """Box-average to 16x16, compress with log(1+x), flatten row-major.

    Block boundaries follow ``np.array_split`` so any film size at least
    16x16 works; 64x64 gives exact 4x4 blocks.
    """
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    h, w = data.shape[:2]
    if h < FEATURE_GRID or w < FEATURE_GRID:
        raise ValueError(f"image must be at least {FEATURE_GRID}x{FEATURE_GRID}, got {w}x{h}")
    rows = np.array_split(np.arange(h), FEATURE_GRID)
    cols = np.array_split(np.arange(w), FEATURE_GRID)
    out = np.empty((FEATURE_GRID, FEATURE_GRID, 3))
    for i, r in enumerate(rows):
        band = data[r[0]:r[-1] + 1].mean(axis=0)
        for j, c in enumerate(cols):
            out[i, j] = band[c[0]:c[-1] + 1].mean(axis=0)
    return np.log1p(np.maximum(out, 0.0)).reshape(-1)


@dataclass
class Network:
    """Fully connected regressor; rectifiers between layers, linear output.

    Inputs are standardized with ``input_mean`` / ``input_scale`` before the
    first layer.  The output is a latent ``(log sigma_t, logit albedo,
    atanh g)`` vector.
    """

    weights: list
    biases: list
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def layer_sizes(self):
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    @classmethod
    def initialize(cls, layer_sizes=DEFAULT_LAYERS, seed=0):
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, layer_sizes=DEFAULT_LAYERS):
        return cls([np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])],
                   [np.zeros(o) for o in layer_sizes[1:]])

    def params(self):
        return list(self.weights) + list(self.biases)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vector):
        pos = 0
        for p in self.params():
            p[...] = vector[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self):
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       None if self.input_mean is None else self.input_mean.copy(),
                       None if self.input_scale is None else self.input_scale.copy())

    # checkpoint: JSON, row-major nested lists, float64 printed with repr precision
    def to_dict(self):
        n_in = self.layer_sizes[0]
        mean = self.input_mean if self.input_mean is not None else np.zeros(n_in)
        scale = self.input_scale if self.input_scale is not None else np.ones(n_in)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": "relu",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_mean": mean.tolist(),
            "input_scale": scale.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a network checkpoint (format {doc.get('format')!r})")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        weights = [np.array(w, dtype=np.float64) for w in doc["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
        net = cls(weights, biases, np.array(doc["input_mean"]), np.array(doc["input_scale"]))
        if list(net.layer_sizes) != list(doc["layer_sizes"]):
            raise ValueError("checkpoint layer_sizes disagree with weight shapes")
        return net

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def net_forward(network: Network, features):
    """Forward pass on one feature vector or a ``(batch, dim)`` array.

    Returns ``(latents, cache)``; ``cache`` feeds :func:`net_backward`.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != network.layer_sizes[0]:
        raise ValueError(f"feature length {x.shape[1]} does not match input layer "
                         f"{network.layer_sizes[0]}")
    if network.input_mean is not None:
        x = (x - network.input_mean) / network.input_scale
    acts = [x]
    pre = []
    for k, (w, b) in enumerate(zip(network.weights, network.biases)):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if k < len(network.weights) - 1 else z)
    out = acts[-1]
    return (out[0] if single else out), (acts, pre, single)


def net_backward(network: Network, cache, d_out):
    """Weight and bias gradients given ``dLoss/dOutput`` (same shape as the output)."""
    acts, pre, single = cache
    delta = np.asarray(d_out, dtype=np.float64)
    if single:
        delta = delta[None, :]
    n_layers = len(network.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        grad_w[k] = delta.T @ acts[k]
        grad_b[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ network.weights[k]) * (pre[k - 1] > 0)
    return grad_w + grad_b


def predict(network: Network, image) -> Medium:
    latent, _ = net_forward(network, featurize(image))
    return to_physical(LatentParams.from_array(latent))


def true_latent(medium: Medium):
    return from_physical(medium).as_array()


@dataclass
class TrainConfig:
    mode: str = "RN"
    lam: float | None = None  # None: auto-scale after the warm start
    epochs: int = 60
    minibatch: int = 10
    lr: float = 1e-3
    reg_spp: int = 8
    seed: int = 0
    warm_start_epochs: int = 40
    finetune_lr: float | None = None  # step size once the regularizer is on
    layer_sizes: tuple = DEFAULT_LAYERS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.epochs < 0 or self.warm_start_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


@dataclass
class Example:
    """One training record prepared for the network."""

    features: np.ndarray
    latent: np.ndarray
    image: Image | None = None
    scene: object = None  # template Scene; the medium is replaced by the prediction
    name: str = ""


def examples_from(dataset, records):
    out = []
    for rec in records:
        img = dataset.image(rec)
        out.append(Example(featurize(img), true_latent(rec.medium), img, dataset.template(rec),
                           rec.image))
    return out


@dataclass
class GradientResult:
    grads: list
    supervised: float
    regularizer: float
    skipped: list = field(default_factory=list)


def _reg_scene(scene, mode):
    return scene.replace(max_depth=1) if mode == "SSN" else scene


def regularizer_latent_grad(example: Example, latent, mode, spp, seed):
    """``(loss, d loss / d latent)`` of ``||I - T(pred)||^2`` with A/B streams."""
    medium = to_physical(LatentParams.from_array(latent))
    scene = _reg_scene(example.scene, mode).replace(medium=medium)
    loss, grad_phys, _ = physical_loss_grad(example.image, scene, spp, seed)
    return loss, grad_phys * latent_chain_factors(medium)


def training_gradient(network: Network, minibatch, config: TrainConfig, lam=0.0, seed=0):
    """Summed gradient of the objective over ``minibatch`` (a list of :class:`Example`).

    Record ``i`` renders with ``mix_seed(seed, i)``.  A record whose render
    fails contributes only its supervised term and is listed in ``skipped``.
    """
    if not minibatch:
        raise ValueError("minibatch must be nonempty")
    feats = np.stack([ex.features for ex in minibatch])
    targets = np.stack([ex.latent for ex in minibatch])
    out, cache = net_forward(network, feats)
    resid = out - targets
    supervised = float(np.sum(resid**2))
    d_out = 2.0 * resid
    reg_total = 0.0
    skipped = []
    if config.mode != "RN" and lam > 0:
        for i, ex in enumerate(minibatch):
            try:
                loss, g = regularizer_latent_grad(ex, out[i], config.mode, config.reg_spp,
                                                  mix_seed(seed, i))
            except (ValueError, FloatingPointError) as exc:
                skipped.append((ex.name, str(exc)))
                continue
            reg_total += loss
            d_out[i] += lam * g
    grads = net_backward(network, cache, d_out)
    return GradientResult(grads, supervised, reg_total, skipped)


def _fit_input_scaling(network, examples):
    feats = np.stack([ex.features for ex in examples])
    network.input_mean = feats.mean(axis=0)
    # one shared scale: per-feature scaling would blow up pixels that are
    # nearly constant in training (background) but not in held-out scenes
    network.input_scale = np.full(feats.shape[1], feats.std() + 1e-12)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    lam: float = 0.0
    lam_terms: tuple | None = None  # (supervised, regularizer) means at scaling time
    skipped: list = field(default_factory=list)


def _mean_terms(network, examples, config, seed):
    """Per-record means of the supervised and (unweighted) regularizer losses."""
    sup, reg, n = 0.0, 0.0, 0
    for i, ex in enumerate(examples):
        out, _ = net_forward(network, ex.features)
        sup += float(np.sum((out - ex.latent) ** 2))
        medium = to_physical(LatentParams.from_array(out))
        scene = _reg_scene(ex.scene, config.mode).replace(medium=medium)
        est = render(scene, config.reg_spp, mix_seed(seed, i))
        npix = ex.image.data.shape[0] * ex.image.data.shape[1]
        reg += float(np.sum((ex.image.data - est.data) ** 2) / npix)
        n += 1
    return sup / n, reg / n


def train(examples, config: TrainConfig, progress=None):
    """Train from scratch; returns ``(network, TrainLog)``.

    The first ``warm_start_epochs`` epochs are supervised only.  For ITN and
    SSN the remaining ``epochs - warm_start_epochs`` add the regularizer,
    with lambda chosen once so both terms have the same mean per record
    (unless ``config.lam`` is set).  RN trains all ``epochs`` supervised.
    """
    if not examples:
        raise ValueError("training split is empty")
    net = Network.initialize(config.layer_sizes, seed=mix_seed(config.seed, 0) % 2**63)
    _fit_input_scaling(net, examples)
    # start predictions at the mean training latent
    net.biases[-1][:] = np.mean([ex.latent for ex in examples], axis=0)
    state = AdamState(lr=config.lr)
    order_rng = np.random.default_rng(mix_seed(config.seed, 1) % 2**63)
    tlog = TrainLog()
    lam = 0.0
    n = len(examples)
    for epoch in range(config.epochs):
        regularized = config.mode != "RN" and epoch >= config.warm_start_epochs
        if regularized and epoch == config.warm_start_epochs:
            if config.lam is None:
                sup, reg = _mean_terms(net, examples, config, mix_seed(config.seed, 2))
                lam = sup / reg if reg > 0 else 0.0
                tlog.lam_terms = (sup, reg)
            else:
                lam = config.lam
            tlog.lam = lam
            log.info("lambda = %.6g", lam)
            if config.finetune_lr is not None:
                state.lr = config.finetune_lr
        perm = order_rng.permutation(n)
        sup_sum = reg_sum = 0.0
        for b, start in enumerate(range(0, n, config.minibatch)):
            batch = [examples[i] for i in perm[start:start + config.minibatch]]
            seed = mix_seed(config.seed, 1_000_000 + epoch * 10_000 + b)
            res = training_gradient(net, batch, config, lam if regularized else 0.0, seed)
            tlog.skipped.extend(res.skipped)
            sup_sum += res.supervised
            reg_sum += res.regularizer
            flat_grad = np.concatenate([g.ravel() for g in res.grads]) / len(batch)
            state, flat = adam_step(state, net.flat(), flat_grad)
            net.set_flat(flat)
        row = {"epoch": epoch, "supervised": sup_sum / n, "regularizer": reg_sum / n,
               "lambda": lam if regularized else 0.0}
        tlog.epochs.append(row)
        if progress:
            progress(row)
    return net, tlog


def latent_mse(network, examples):
    feats = np.stack([ex.features for ex in examples])
    out, _ = net_forward(network, feats)
    targets = np.stack([ex.latent for ex in examples])
    return float(np.mean(np.sum((out - targets) ** 2, axis=1)))


@dataclass
class SplitMetrics:
    split: str
    count: int
    rmse_sigma_t: float
    rmse_albedo: float
    rmse_g: float
    appearance_rmse: float
    one_minus_ms_ssim: float

    def as_record(self):
        return dict(self.__dict__)


def evaluate(network, dataset, splits, spp=16, seed=0, predictor=None):
    """Per-split parameter RMSE (physical units) and appearance metrics.

    Each record is re-rendered at its predicted parameters with ``spp`` and
    ``mix_seed(seed, index)`` and compared with its input image.
    The pseudo-split ``"test"`` pools every held-out split.  ``predictor``
    overrides the network (any ``record -> Medium`` callable).
    """
    rows = []
    for split in splits:
        records = dataset.split(*TEST_SPLITS) if split == "test" else dataset.split(split)
        if not records:
            continue
        errs, app_rmse, app_ssim = [], [], []
        for i, rec in enumerate(records):
            img = dataset.image(rec)
            pred = predictor(rec) if predictor else predict(network, img)
            truth = rec.medium
            errs.append([pred.sigma_t - truth.sigma_t, pred.albedo - truth.albedo,
                         pred.g - truth.g])
            est = render(dataset.scene_for(rec, pred), spp, mix_seed(seed, i))
            app_rmse.append(rmse(img, est))
            app_ssim.append(1.0 - ms_ssim(img, est))
        e = np.array(errs)
        r = np.sqrt(np.mean(e**2, axis=0))
        rows.append(SplitMetrics(split, len(records), float(r[0]), float(r[1]), float(r[2]),
                                 float(np.mean(app_rmse)), float(np.mean(app_ssim))))
    return rows
