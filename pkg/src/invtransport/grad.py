"""Derivative images by the score-function (likelihood-ratio) estimator.

Every path contribution ``f/p`` is additionally multiplied by the path's
score, the sum of log-derivatives of its throughput factors:

* ``sigma_t``: ``+1/sigma_t`` per collision (the ``sigma_s = albedo*sigma_t``
  vertex factor) and ``-d`` per traversed segment (transmittance), including
  the final segment to the boundary;
* ``albedo``: ``+1/albedo`` per scatter vertex;
* ``g``: the Henyey-Greenstein log-derivative at every scatter vertex.

No ``d log p`` term is added even though free flights are sampled with a
``sigma_t``-dependent density: ``E_p[(f/p) d(log f)] = d/dpi E_p[f/p]`` for
any valid sampling density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import hg_score_g
from .scene import Medium, Scene
from .transport import Image, PathEvents, channel_image, render, run_kernel

PARAMS = ("sigma_t", "albedo", "g")


@dataclass(frozen=True)
class ScoreVector:
    d_sigma_t: float = 0.0
    d_albedo: float = 0.0
    d_g: float = 0.0

    def as_array(self):
        return np.array([self.d_sigma_t, self.d_albedo, self.d_g])


@dataclass
class GradRender:
    forward: Image
    d_sigma_t: Image
    d_albedo: Image
    d_g: Image
    spp: int
    seed: int

    def derivative(self, name):
        return getattr(self, "d_" + name)

    def stacked(self):
        """Derivative data shaped ``(3, height, width, 3)`` in ``PARAMS`` order."""
        return np.stack([self.d_sigma_t.data, self.d_albedo.data, self.d_g.data])


def path_score(events: PathEvents, medium: Medium) -> ScoreVector:
    """Log-derivatives of one contribution's throughput with respect to the medium."""
    n = events.n_scatter
    d_sigma = n / medium.sigma_t - sum(events.collision_lengths) - events.terminal_length
    d_g = float(np.sum(hg_score_g(medium.g, np.asarray(events.phase_cosines)))) if events.phase_cosines else 0.0
    score = ScoreVector(d_sigma, n / medium.albedo, d_g)
    if not np.all(np.isfinite(score.as_array())):
        raise FloatingPointError(f"non-finite path score {score}")
    return score


def render_with_gradients(scene: Scene, spp: int, seed: int) -> GradRender:
    """Forward image and its derivatives from one set of paths.

    ``forward`` is bit-identical to ``render(scene, spp, seed)``.
    """
    mean, var = run_kernel(scene, scene.medium.as_array()[None, :], [1.0], spp, seed)
    rad = scene.light.radiance
    images = [channel_image(mean[..., k], var[..., k], rad, spp) for k in range(4)]
    return GradRender(*images, spp=spp, seed=seed)


def _perturbed(medium, param, delta):
    values = {"sigma_t": medium.sigma_t, "albedo": medium.albedo, "g": medium.g}
    values[param] += delta
    return Medium(**values)


def finite_difference_gradient(scene: Scene, param: str, h: float, spp: int, seed: int) -> Image:
    """Central difference ``(render(pi+h) - render(pi-h)) / 2h`` with common random numbers.

    Both renders consume identical streams per pixel-sample, and the
    variance of the paired difference is reported on the result.
    """
    if param not in PARAMS:
        raise ValueError(f"unknown parameter {param!r}; expected one of {PARAMS}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    try:
        plus = _perturbed(scene.medium, param, h)
        minus = _perturbed(scene.medium, param, -h)
    except ValueError as exc:
        raise ValueError(f"step h={h} leaves the valid domain of {param}: {exc}") from None
    media = np.stack([plus.as_array(), minus.as_array()])
    coeffs = [1.0 / (2.0 * h), -1.0 / (2.0 * h)]
    mean, var = run_kernel(scene, media, coeffs, spp, seed)
    return channel_image(mean[..., 0], var[..., 0], scene.light.radiance, spp)


def latent_chain_factors(medium: Medium):
    """``d(physical)/d(latent)`` for ``(log sigma_t, logit albedo, atanh g)``."""
    return np.array([medium.sigma_t, medium.albedo * (1.0 - medium.albedo), 1.0 - medium.g**2])


def sign_preview(image: Image) -> Image:
    """False-colour view of a signed scalar image: red positive, blue negative."""
    lum = image.data.mean(axis=2)
    out = np.zeros_like(image.data)
    out[..., 0] = np.maximum(lum, 0.0)
    out[..., 2] = np.maximum(-lum, 0.0)
    return Image(out, image.spp)


__all__ = [
    "PARAMS",
    "GradRender",
    "ScoreVector",
    "finite_difference_gradient",
    "latent_chain_factors",
    "path_score",
    "render",
    "render_with_gradients",
    "sign_preview",
]
