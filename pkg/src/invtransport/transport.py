"""Forward Monte Carlo rendering of homogeneous translucent objects.

Paths start at the camera, enter the medium through an index-matched
boundary and random-walk by free-flight sampling.  Absorption multiplies the
path weight by the albedo at every collision (the walk itself never
terminates on absorption), a directional light is connected by next-event
estimation at every scatter vertex, and a constant environment is collected
when a path leaves the medium.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import numba

from . import _config
from ._kernel import (
    EV_COLLISION,
    EV_DIRECTION,
    EV_ENTRY,
    EV_ESCAPE,
    EV_MISS,
    EV_NEE,
    EV_STOP,
    REC_COLS,
    record_rows,
    render_kernel,
    trace_nb,
)
from .sampling import RngStream, hg_pdf, stream_id_for, transmittance
from .scene import LIGHT_KINDS, Scene, exit_distance


@dataclass
class Image:
    """Linear RGB radiance, ``data`` shaped ``(height, width, 3)``, row 0 at the top.

    ``variance`` (same shape, optional) is the estimated variance of each
    pixel mean, i.e. the squared standard error.
    """

    data: np.ndarray
    spp: int = 0
    variance: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"image data must be (height, width, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image data must be finite")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    def stderr(self):
        if self.variance is None:
            raise ValueError("image carries no variance estimate")
        return np.sqrt(self.variance)

    def total(self):
        """Sum over all pixels and channels, with its standard error.

        Pixels are independent, but the three channels of a pixel are the
        same path values scaled by the light's colour, so their errors add
        linearly rather than in quadrature.
        """
        if self.variance is None:
            return float(self.data.sum()), float("nan")
        per_pixel = np.sqrt(self.variance).sum(axis=2)
        return float(self.data.sum()), math.sqrt(float(np.sum(per_pixel**2)))


@dataclass(frozen=True)
class PathEvents:
    """What one path contribution went through, as needed for its score.

    ``collision_lengths`` are free-flight segments ending at scatter vertices,
    ``phase_cosines`` the phase-function cosines at those vertices (the last
    one points at the light for next-event contributions) and
    ``terminal_length`` the attenuated final segment to the boundary.
    """

    collision_lengths: tuple = ()
    phase_cosines: tuple = ()
    terminal_length: float = 0.0

    @property
    def n_scatter(self):
        return len(self.collision_lengths)


@dataclass(frozen=True)
class Contribution:
    kind: str  # "escape" or "nee"
    value: float  # f/p per unit light radiance
    events: PathEvents


@dataclass
class PathSample:
    """One traced camera path and everything it contributed."""

    vertices: np.ndarray
    contributions: list
    weight: float
    depth: int
    events: PathEvents
    escaped: bool
    stop_reason: str | None
    light_radiance: np.ndarray
    medium: object = None
    _scores: object = field(default=None, repr=False)

    @property
    def value(self):
        """Scalar estimate per unit light radiance."""
        return sum(c.value for c in self.contributions)

    @property
    def radiance(self):
        return self.value * self.light_radiance

    @property
    def scores(self):
        """Score of the full path (its escape contribution), from ``grad.path_score``."""
        if self._scores is None:
            from .grad import path_score

            self._scores = path_score(self.events, self.medium)
        return self._scores


@functools.lru_cache(maxsize=64)
def _packed(scene):
    gkind, gp = scene.geometry.packed()
    cam = scene.camera.packed()
    lkind = LIGHT_KINDS[scene.light.kind]
    ldir = np.array(scene.light.direction, dtype=np.float64)
    return gkind, gp, cam, lkind, ldir


def _set_threads():
    n = min(_config.configured_workers(), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(max(1, n))


def run_kernel(scene, media, coeffs, spp, seed, first_sample=0, max_depth=None):
    """Raw kernel call; returns per-pixel ``(mean, variance_of_mean)`` 4-vectors.

    Arrays are shaped ``(height, width, 4)`` in units of light radiance.
    """
    if spp < 1:
        raise ValueError(f"spp must be >= 1, got {spp}")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    gkind, gp, cam, lkind, ldir = _packed(scene)
    depth = scene.max_depth if max_depth is None else max_depth
    _set_threads()
    sums, sumsq = render_kernel(
        gkind, gp, cam, lkind, ldir,
        np.ascontiguousarray(media, dtype=np.float64), np.asarray(coeffs, dtype=np.float64),
        int(depth), int(scene.rr_start_depth), float(scene.rr_continue_prob),
        int(spp), np.uint64(seed), int(first_sample),
    )
    mean = sums / spp
    if spp > 1:
        var = np.maximum(sumsq / spp - mean * mean, 0.0) * (spp / (spp - 1)) / spp
    else:
        var = np.full_like(mean, np.inf)
    shape = (scene.height, scene.width, 4)
    return mean.reshape(shape), var.reshape(shape)


def channel_image(scalar, scalar_var, radiance, spp):
    rad = np.asarray(radiance, dtype=np.float64)
    data = scalar[:, :, None] * rad
    var = None if scalar_var is None else scalar_var[:, :, None] * rad * rad
    return Image(data, spp, var)


def render(scene: Scene, spp: int, seed: int) -> Image:
    """Unbiased estimate of the image, averaging ``spp`` paths per pixel.

    Deterministic in ``(scene, spp, seed)`` regardless of the worker count.
    """
    mean, var = run_kernel(scene, scene.medium.as_array()[None, :], [1.0], spp, seed)
    return channel_image(mean[..., 0], var[..., 0], scene.light.radiance, spp)


def render_single_scatter(scene: Scene, spp: int, seed: int) -> Image:
    """Single-scattering image: direct transmission plus light scattered once."""
    return render(scene.replace(max_depth=1), spp, seed)


def nee_contribution(scene, vertex, incoming, rng=None):
    """Radiance reaching ``vertex`` from the directional light, toward ``incoming``'s
    continuation: ``L * hg_pdf(cos) * transmittance(exit distance)``.

    ``rng`` is accepted for interface symmetry; directional lights need no
    random numbers.
    """
    light = scene.light
    if light.kind != "directional":
        raise ValueError(f"next-event estimation needs a directional light, got {light.kind!r}")
    to_light = np.asarray(light.direction)
    cos_l = float(np.clip(np.dot(incoming, to_light), -1.0, 1.0))
    d_l = exit_distance(scene.geometry, vertex, to_light)
    factor = hg_pdf(scene.medium.g, cos_l) * transmittance(scene.medium.sigma_t, d_l)
    return factor * np.asarray(light.radiance)


def trace_volume_path(scene: Scene, pixel, rng: RngStream | None = None, sample_index=0,
                      seed=0) -> PathSample:
    """Trace and record one camera path through ``pixel = (x, y)``.

    With ``rng=None`` the path uses the same stream as sample ``sample_index``
    of :func:`render` with ``seed``, so it reproduces that render's path.
    """
    px, py = pixel
    if not (0 <= px < scene.width and 0 <= py < scene.height):
        raise ValueError(f"pixel {pixel} outside the {scene.width}x{scene.height} film")
    if rng is None:
        rng = RngStream(seed, stream_id_for(py * scene.width + px, sample_index))
    gkind, gp, cam, lkind, ldir = _packed(scene)
    m = scene.medium
    out = np.zeros(4)
    rec = np.zeros((record_rows(scene.max_depth), REC_COLS))
    n = trace_nb(gkind, gp, cam, lkind, ldir, m.sigma_t, m.albedo, m.g,
                 scene.max_depth, scene.rr_start_depth, scene.rr_continue_prob,
                 px, py, rng.state, out, rec, True)
    return _path_from_log(rec[:n], scene)


_STOP_NAMES = {0: "depth", 1: "roulette", 2: "underflow"}


def _path_from_log(log, scene):
    vertices = []
    contributions = []
    collisions = []
    cosines = []
    terminal = 0.0
    escaped = False
    stop = None
    weight = 1.0
    for row in log:
        code = int(row[0])
        if code == EV_MISS:
            if row[1] > 0:
                contributions.append(Contribution("escape", float(row[1]), PathEvents()))
            escaped = True
        elif code == EV_ENTRY:
            vertices.append(row[1:4].copy())
        elif code == EV_COLLISION:
            vertices.append(row[1:4].copy())
            collisions.append(float(row[4]))
            weight = float(row[5])
        elif code == EV_NEE:
            events = PathEvents(tuple(collisions), tuple(cosines) + (float(row[1]),), float(row[2]))
            contributions.append(Contribution("nee", float(row[3]), events))
        elif code == EV_DIRECTION:
            cosines.append(float(row[1]))
        elif code == EV_ESCAPE:
            vertices.append(row[1:4].copy())
            terminal = float(row[4])
            escaped = True
            if row[5] > 0:
                events = PathEvents(tuple(collisions), tuple(cosines), terminal)
                contributions.append(Contribution("escape", float(row[5]), events))
        elif code == EV_STOP:
            stop = _STOP_NAMES[int(row[1])]
    events = PathEvents(tuple(collisions), tuple(cosines), terminal)
    return PathSample(
        vertices=np.array(vertices).reshape(-1, 3),
        contributions=contributions,
        weight=weight,
        depth=len(collisions),
        events=events,
        escaped=escaped,
        stop_reason=stop,
        light_radiance=np.asarray(scene.light.radiance),
        medium=scene.medium,
    )

