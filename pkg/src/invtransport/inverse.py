"""Analysis-by-synthesis: fit medium parameters to an image with stochastic Adam.

The optimizer works on unconstrained latents ``(log sigma_t, logit albedo,
atanh g)`` so every iterate is a valid medium.  Each gradient estimate uses
two independent renders: stream A for the residual ``I - T`` and stream B
for the derivative images, which keeps the product unbiased for the
gradient of the expected loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grad import latent_chain_factors, render_with_gradients
from .sampling import mix_seed
from .scene import Medium, Scene
from .transport import Image, render

CHECKPOINTS = (1, 50, 100, 150, 200)

_BELOW_ONE = math.nextafter(1.0, 0.0)
_TINY = math.ulp(0.0)
_MAX_LOG = 700.0

STREAM_A = 0
STREAM_B = 1


@dataclass(frozen=True)
class LatentParams:
    l_sigma: float
    l_albedo: float
    l_g: float

    def as_array(self):
        return np.array([self.l_sigma, self.l_albedo, self.l_g])

    @classmethod
    def from_array(cls, values):
        v = np.asarray(values, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]))


def from_physical(medium: Medium) -> LatentParams:
    a, g = medium.albedo, medium.g
    if not (medium.sigma_t > 0 and 0.0 < a < 1.0 and -1.0 < g < 1.0):
        raise ValueError(f"medium {medium} is outside the open parameter domain")
    return LatentParams(math.log(medium.sigma_t), math.log(a) - math.log1p(-a), math.atanh(g))


def to_physical(latent: LatentParams) -> Medium:
    l_s, l_a, l_g = latent.as_array()
    if not np.all(np.isfinite([l_s, l_a, l_g])):
        raise ValueError(f"non-finite latent {latent}")
    # logistic written to stay accurate for large |l_a|
    if l_a >= 0:
        albedo = 1.0 / (1.0 + math.exp(-l_a))
    else:
        e = math.exp(l_a)
        albedo = e / (1.0 + e)
    # far out in latent space the float result rounds onto the boundary;
    # keep it one ulp inside so the medium stays valid
    albedo = min(max(albedo, _TINY), _BELOW_ONE)
    g = max(min(math.tanh(l_g), _BELOW_ONE), -_BELOW_ONE)
    return Medium(math.exp(min(max(l_s, -_MAX_LOG), _MAX_LOG)), albedo, g)


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))


def adam_step(state: AdamState, latent, grad):
    """One bias-corrected Adam update; returns ``(state, latent)``.

    ``latent`` may be a :class:`LatentParams` or any flat array (network
    weights reuse this update), and the return type matches the input.
    """
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    is_latent = isinstance(latent, LatentParams)
    x = latent.as_array() if is_latent else np.asarray(latent, dtype=float)
    if state.m.shape != g.shape:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    x = x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, (LatentParams.from_array(x) if is_latent else x)


def image_loss(target, estimate):
    """Mean over pixels of the squared RGB residual norm."""
    t = target.data if isinstance(target, Image) else target
    e = estimate.data if isinstance(estimate, Image) else estimate
    npix = t.shape[0] * t.shape[1]
    return float(np.sum((t - e) ** 2) / npix)


def physical_loss_grad(target, scene, spp, seed, same_stream=False):
    """Loss and its gradient with respect to ``(sigma_t, albedo, g)``.

    Returns ``(loss, grad, forward_A)``.  ``same_stream=True`` reuses stream
    A for the derivative images; this biases the gradient and exists only
    to demonstrate why the default uses two streams.
    """
    t = target.data if isinstance(target, Image) else np.asarray(target)
    if t.shape != (scene.height, scene.width, 3):
        raise ValueError(f"target shape {t.shape} does not match film "
                         f"{(scene.height, scene.width, 3)}")
    seed_a = mix_seed(seed, STREAM_A)
    seed_b = seed_a if same_stream else mix_seed(seed, STREAM_B)
    grad_b = render_with_gradients(scene, spp, seed_b)
    fwd_a = grad_b.forward if same_stream else render(scene, spp, seed_a)
    npix = t.shape[0] * t.shape[1]
    residual = t - fwd_a.data
    loss = float(np.sum(residual**2) / npix)
    grad = -2.0 / npix * np.einsum("hwc,phwc->p", residual, grad_b.stacked())
    return loss, grad, fwd_a


def loss_and_grad(target, scene: Scene, latent: LatentParams, spp: int, seed: int,
                  same_stream=False):
    """Stochastic estimate of the image loss and its gradient in latent space."""
    medium = to_physical(latent)
    loss, grad_phys, _ = physical_loss_grad(
        target, scene.replace(medium=medium), spp, seed, same_stream=same_stream)
    return loss, grad_phys * latent_chain_factors(medium)


@dataclass
class TraceRow:
    iter: int
    latent: LatentParams
    medium: Medium
    loss: float
    grad: np.ndarray
    seed: int

    def as_record(self):
        return {
            "iter": self.iter,
            "sigma_t": self.medium.sigma_t,
            "albedo": self.medium.albedo,
            "g": self.medium.g,
            "loss": self.loss,
            "grad_norm": float(np.linalg.norm(self.grad)),
            "seed": self.seed,
        }


@dataclass
class InversionTrace:
    rows: list = field(default_factory=list)
    error: str | None = None

    def checkpoints(self, iterations=CHECKPOINTS):
        wanted = set(iterations)
        return [r for r in self.rows if r.iter in wanted]

    @property
    def final(self):
        return self.rows[-1]

    def to_jsonl(self):
        return "".join(json.dumps(r.as_record()) + "\n" for r in self.rows)

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def spp_schedule(iterations, base=16, final=64, final_iters=50):
    """Per-iteration values: ``base``, then ``final`` for the last ``final_iters``.

    Used for both the spp and the step-size schedules.
    """
    return [final if it > iterations - final_iters else base for it in range(1, iterations + 1)]


def invert(target, scene: Scene, init, iterations=200, spp=16, seed=0, lr=1e-2,
           final_spp=None, final_lr=None, final_iters=50):
    """Minimize the image loss from ``init`` (``LatentParams`` or ``Medium``).

    ``spp`` and ``lr`` may be scalars or lists with one entry per iteration.
    With scalars, the last ``final_iters`` iterations switch to
    ``final_spp`` and ``final_lr`` when those are given.  Row
    ``i`` of the trace holds the parameters used at iteration ``i`` together
    with the loss measured there; iteration 1 is the initialization.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    latent = init if isinstance(init, LatentParams) else from_physical(init)
    if isinstance(spp, int):
        schedule = spp_schedule(iterations, spp, final_spp or spp, final_iters)
    else:
        schedule = list(spp)
        if len(schedule) != iterations:
            raise ValueError("spp schedule length must equal iterations")
    if np.isscalar(lr):
        rates = spp_schedule(iterations, lr, lr if final_lr is None else final_lr, final_iters)
    else:
        rates = [float(r) for r in lr]
        if len(rates) != iterations:
            raise ValueError("lr schedule length must equal iterations")
    state = AdamState(lr=rates[0])
    trace = InversionTrace()
    for it in range(1, iterations + 1):
        state.lr = rates[it - 1]
        it_seed = mix_seed(seed, 1000 + it)
        try:
            loss, grad = loss_and_grad(target, scene, latent, schedule[it - 1], it_seed)
        except (ValueError, FloatingPointError) as exc:
            trace.error = f"iteration {it}: {exc}"
            break
        trace.rows.append(TraceRow(it, latent, to_physical(latent), loss, grad, it_seed))
        state, latent = adam_step(state, latent, grad)
    return trace
