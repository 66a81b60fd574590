"""Random streams and the sampling primitives of homogeneous-medium transport.

Random numbers come from Philox4x32-10, a counter-based generator: the
value at position ``counter`` of stream ``(seed, stream_id)`` is a pure
function of those three integers.  Any worker can therefore regenerate any
pixel-sample's numbers without coordination, and renders at perturbed
parameters can reuse the exact same numbers (common random numbers).

The ``*_nb`` functions are the jitted versions used inside kernels; the
public functions validate their inputs and are meant for Python callers.
"""

import math

import numpy as np
from numba import njit

from . import _config  # noqa: F401  (must precede kernel compilation)

_MASK32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)
_SHIFT21 = np.uint64(21)
_SHIFT11 = np.uint64(11)
_INV_2_53 = 1.0 / 9007199254740992.0

INV_FOUR_PI = 1.0 / (4.0 * math.pi)
G_ISOTROPIC_EPS = 1e-6


@njit(cache=True)
def philox4x32_nb(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on 32-bit words held in uint64 containers."""
    for _ in range(10):
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _PHILOX_W0) & _MASK32
        k1 = (k1 + _PHILOX_W1) & _MASK32
    return c0, c1, c2, c3


@njit(cache=True)
def uniform_at_nb(seed, stream_id, counter):
    """Uniform double in [0, 1) at one position of a stream (53 random bits)."""
    x0, x1, _, _ = philox4x32_nb(
        counter & _MASK32, counter >> _SHIFT32,
        stream_id & _MASK32, stream_id >> _SHIFT32,
        seed & _MASK32, seed >> _SHIFT32,
    )
    bits = (x0 << _SHIFT21) | (x1 >> _SHIFT11)
    return float(bits) * _INV_2_53


@njit(cache=True)
def next_uniform_nb(state):
    """Draw from a stream held as ``state = [seed, stream_id, counter]``."""
    u = uniform_at_nb(state[0], state[1], state[2])
    state[2] += np.uint64(1)
    return u


def stream_id_for(pixel_index, sample_index):
    """Stream id of one pixel-sample: pixel in the high word, sample in the low."""
    return (int(pixel_index) << 32) | (int(sample_index) & 0xFFFFFFFF)


def mix_seed(seed, salt):
    """Derive an independent 64-bit seed (splitmix64 finalizer over seed+salt)."""
    z = (int(seed) + 0x9E3779B97F4A7C15 * (int(salt) + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


class RngStream:
    """A reproducible uniform stream identified by ``(seed, stream_id)``.

    The sequence depends only on ``(seed, stream_id, counter)``; two streams
    with the same identifiers produce the same numbers wherever they run.
    """

    def __init__(self, seed, stream_id, counter=0):
        for name, value in (("seed", seed), ("stream_id", stream_id), ("counter", counter)):
            if not 0 <= int(value) < 2**64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")
        self._state = np.array([seed, stream_id, counter], dtype=np.uint64)

    @property
    def seed(self):
        return int(self._state[0])

    @property
    def stream_id(self):
        return int(self._state[1])

    @property
    def counter(self):
        return int(self._state[2])

    @property
    def state(self):
        """The raw ``[seed, stream_id, counter]`` array shared with kernels."""
        return self._state

    def uniform(self):
        return next_uniform_nb(self._state)

    def uniforms(self, n):
        return np.array([next_uniform_nb(self._state) for _ in range(n)])

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"


# -- free flight and attenuation ---------------------------------------------


@njit(cache=True)
def sample_free_flight_nb(sigma_t, u):
    return -math.log1p(-u) / sigma_t


@njit(cache=True)
def transmittance_nb(sigma_t, d):
    return math.exp(-sigma_t * d)


def sample_free_flight(sigma_t, u):
    """Distance to the next collision, by inverting the exponential CDF.

    The implied density is ``sigma_t * exp(-sigma_t * d)``.
    """
    if not sigma_t > 0:
        raise ValueError(f"sigma_t must be positive, got {sigma_t}")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    return sample_free_flight_nb(float(sigma_t), float(u))


def transmittance(sigma_t, d):
    """Beer-Lambert attenuation ``exp(-sigma_t * d)`` over distance ``d``."""
    if d < 0:
        raise ValueError(f"distance must be nonnegative, got {d}")
    return transmittance_nb(float(sigma_t), float(d))


# -- Henyey-Greenstein --------------------------------------------------------


@njit(cache=True)
def hg_pdf_nb(g, cos_theta):
    denom = 1.0 + g * g - 2.0 * g * cos_theta
    return INV_FOUR_PI * (1.0 - g * g) / (denom * math.sqrt(denom))


@njit(cache=True)
def hg_sample_cos_nb(g, u):
    if abs(g) < G_ISOTROPIC_EPS:
        return 1.0 - 2.0 * u
    s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
    c = (1.0 + g * g - s * s) / (2.0 * g)
    return min(1.0, max(-1.0, c))


@njit(cache=True)
def hg_score_g_nb(g, cos_theta):
    denom = 1.0 + g * g - 2.0 * g * cos_theta
    return -2.0 * g / (1.0 - g * g) - 1.5 * (2.0 * g - 2.0 * cos_theta) / denom


@njit(cache=True)
def orthonormal_basis_nb(nx, ny, nz):
    """Two tangents completing ``n`` to a right-handed frame (Duff et al. 2017)."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (1.0 + sign * nx * nx * a, sign * b, -sign * nx,
            b, sign + ny * ny * a, -ny)


@njit(cache=True)
def rotate_to_frame_nb(dx, dy, dz, cos_theta, phi):
    """Direction at polar angle ``acos(cos_theta)`` and azimuth ``phi`` about ``d``."""
    sin_theta = math.sqrt(max(0.0, 1.0 - cos_theta * cos_theta))
    tx, ty, tz, bx, by, bz = orthonormal_basis_nb(dx, dy, dz)
    cp = math.cos(phi) * sin_theta
    sp = math.sin(phi) * sin_theta
    ox = cp * tx + sp * bx + cos_theta * dx
    oy = cp * ty + sp * by + cos_theta * dy
    oz = cp * tz + sp * bz + cos_theta * dz
    inv = 1.0 / math.sqrt(ox * ox + oy * oy + oz * oz)
    return ox * inv, oy * inv, oz * inv


def _check_g(g):
    if not -1.0 < g < 1.0:
        raise ValueError(f"g must lie in (-1, 1), got {g}")


def _check_cos(cos_theta):
    c = np.asarray(cos_theta, dtype=float)
    if np.any((c < -1.0) | (c > 1.0)) or not np.all(np.isfinite(c)):
        raise ValueError("cos_theta must lie in [-1, 1]")
    return c


def hg_pdf(g, cos_theta):
    """Henyey-Greenstein density per unit solid angle.

    Accepts scalar or array ``cos_theta`` (cosine between the incoming
    propagation direction and the outgoing direction).
    """
    _check_g(g)
    c = _check_cos(cos_theta)
    denom = 1.0 + g * g - 2.0 * g * c
    out = INV_FOUR_PI * (1.0 - g * g) / denom**1.5
    return float(out) if out.ndim == 0 else out


def hg_score_g(g, cos_theta):
    """Derivative of ``log hg_pdf`` with respect to ``g``."""
    _check_g(g)
    c = _check_cos(cos_theta)
    out = -2.0 * g / (1.0 - g * g) - 1.5 * (2.0 * g - 2.0 * c) / (1.0 + g * g - 2.0 * g * c)
    return float(out) if out.ndim == 0 else out


def hg_sample_cos(g, u1):
    """Scattering-angle cosine by inverting the HG CDF (vectorized over ``u1``)."""
    _check_g(g)
    u = np.asarray(u1, dtype=float)
    if np.any((u < 0.0) | (u >= 1.0)):
        raise ValueError("u1 must lie in [0, 1)")
    if abs(g) < G_ISOTROPIC_EPS:
        out = 1.0 - 2.0 * u
    else:
        s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
        out = np.clip((1.0 + g * g - s * s) / (2.0 * g), -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def hg_sample(g, u1, u2, incoming=(0.0, 0.0, 1.0)):
    """Sample an outgoing unit direction with density ``hg_pdf`` about ``incoming``."""
    if not 0.0 <= u2 < 1.0:
        raise ValueError(f"u2 must lie in [0, 1), got {u2}")
    d = np.asarray(incoming, dtype=float)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("incoming direction must be unit length")
    cos_theta = hg_sample_cos(g, u1)
    return np.array(rotate_to_frame_nb(d[0], d[1], d[2], cos_theta, 2.0 * math.pi * u2))
