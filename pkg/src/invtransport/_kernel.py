"""Jitted volumetric path tracer shared by forward, derivative and FD renders.

One kernel serves every render mode.  Each pixel-sample traces one path per
entry of ``media`` using the same random stream (common random numbers) and
accumulates ``sum_m coeffs[m] * [f/p, (f/p)*s_sigma, (f/p)*s_albedo, (f/p)*s_g]``.
A plain render is ``media=[pi], coeffs=[1]``; a central difference is
``media=[pi+h, pi-h], coeffs=[1/2h, -1/2h]``.  Contributions are scalars
per unit light radiance because the medium is grey.
"""

import math

import numpy as np
from numba import njit, prange

from .sampling import (
    hg_pdf_nb,
    hg_sample_cos_nb,
    hg_score_g_nb,
    next_uniform_nb,
    rotate_to_frame_nb,
)
from .scene import (
    CAMERA_PINHOLE,
    LIGHT_CONSTANT_ENV,
    LIGHT_DIRECTIONAL,
    exit_distance_nb,
    intersect_nb,
)

# event log codes written when recording a path
EV_ENTRY = 0
EV_COLLISION = 1
EV_NEE = 2
EV_DIRECTION = 3
EV_ESCAPE = 4
EV_STOP = 5
EV_MISS = 6

STOP_DEPTH = 0
STOP_ROULETTE = 1
STOP_UNDERFLOW = 2

WEIGHT_FLOOR = 1e-300
REC_COLS = 6


def record_rows(max_depth):
    return 3 * max_depth + 4


@njit(cache=True)
def camera_ray_nb(cam, px, py, jx, jy):
    width = cam[14]
    height = cam[15]
    aspect = width / height
    sx = (2.0 * (px + jx) / width - 1.0) * aspect * cam[13]
    sy = (1.0 - 2.0 * (py + jy) / height) * cam[13]
    if cam[0] == CAMERA_PINHOLE:
        dx = cam[4] + sx * cam[7] + sy * cam[10]
        dy = cam[5] + sx * cam[8] + sy * cam[11]
        dz = cam[6] + sx * cam[9] + sy * cam[12]
        inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
        return cam[1], cam[2], cam[3], dx * inv, dy * inv, dz * inv
    ox = cam[1] + sx * cam[7] + sy * cam[10]
    oy = cam[2] + sx * cam[8] + sy * cam[11]
    oz = cam[3] + sx * cam[9] + sy * cam[12]
    return ox, oy, oz, cam[4], cam[5], cam[6]


@njit(cache=True)
def _log(rec, n, code, a, b, c, d, e):
    if n < rec.shape[0]:
        rec[n, 0] = code
        rec[n, 1] = a
        rec[n, 2] = b
        rec[n, 3] = c
        rec[n, 4] = d
        rec[n, 5] = e
    return n + 1


@njit(cache=True)
def trace_nb(gkind, gp, cam, lkind, ldir, sigma_t, albedo, g,
             max_depth, rr_start, rr_q, px, py, state, out, rec, record):
    """Trace one camera path; add ``[F, dF/dsigma, dF/dalbedo, dF/dg]`` into ``out``.

    Returns the number of logged events (0 unless ``record``).
    """
    n = 0
    jx = next_uniform_nb(state)
    jy = next_uniform_nb(state)
    ox, oy, oz, dx, dy, dz = camera_ray_nb(cam, px, py, jx, jy)
    hit, t0, t1 = intersect_nb(gkind, gp, ox, oy, oz, dx, dy, dz)
    if not hit:
        if lkind == LIGHT_CONSTANT_ENV:
            out[0] += 1.0
        if record:
            n = _log(rec, n, EV_MISS, 1.0 if lkind == LIGHT_CONSTANT_ENV else 0.0, 0.0, 0.0, 0.0, 0.0)
        return n

    x = ox + t0 * dx
    y = oy + t0 * dy
    z = oz + t0 * dz
    if record:
        n = _log(rec, n, EV_ENTRY, x, y, z, 0.0, 0.0)
    dist_b = t1 - t0
    weight = 1.0
    # running log-derivatives of the throughput
    s_sig = 0.0
    s_alb = 0.0
    s_g = 0.0
    inv_sigma = 1.0 / sigma_t
    inv_alb = 1.0 / albedo
    depth = 0
    while True:
        t = -math.log1p(-next_uniform_nb(state)) * inv_sigma
        if t >= dist_b:
            if lkind == LIGHT_CONSTANT_ENV:
                out[0] += weight
                out[1] += weight * (s_sig - dist_b)
                out[2] += weight * s_alb
                out[3] += weight * s_g
            if record:
                n = _log(rec, n, EV_ESCAPE, x + dist_b * dx, y + dist_b * dy, z + dist_b * dz,
                         dist_b, weight if lkind == LIGHT_CONSTANT_ENV else 0.0)
            return n

        x += t * dx
        y += t * dy
        z += t * dz
        s_sig += inv_sigma - t
        weight *= albedo
        s_alb += inv_alb
        depth += 1
        if record:
            n = _log(rec, n, EV_COLLISION, x, y, z, t, weight)

        if lkind == LIGHT_DIRECTIONAL:
            lx = ldir[0]
            ly = ldir[1]
            lz = ldir[2]
            cos_l = dx * lx + dy * ly + dz * lz
            d_l = exit_distance_nb(gkind, gp, x, y, z, lx, ly, lz)
            c = weight * hg_pdf_nb(g, cos_l) * math.exp(-sigma_t * d_l)
            out[0] += c
            out[1] += c * (s_sig - d_l)
            out[2] += c * s_alb
            out[3] += c * (s_g + hg_score_g_nb(g, cos_l))
            if record:
                n = _log(rec, n, EV_NEE, cos_l, d_l, c, 0.0, 0.0)

        if depth >= max_depth:
            if record:
                n = _log(rec, n, EV_STOP, STOP_DEPTH, 0.0, 0.0, 0.0, 0.0)
            return n
        if depth >= rr_start and rr_q < 1.0:
            if next_uniform_nb(state) >= rr_q:
                if record:
                    n = _log(rec, n, EV_STOP, STOP_ROULETTE, 0.0, 0.0, 0.0, 0.0)
                return n
            weight /= rr_q
        if weight < WEIGHT_FLOOR:
            if record:
                n = _log(rec, n, EV_STOP, STOP_UNDERFLOW, 0.0, 0.0, 0.0, 0.0)
            return n

        cos_s = hg_sample_cos_nb(g, next_uniform_nb(state))
        phi = 2.0 * math.pi * next_uniform_nb(state)
        s_g += hg_score_g_nb(g, cos_s)
        dx, dy, dz = rotate_to_frame_nb(dx, dy, dz, cos_s, phi)
        dist_b = exit_distance_nb(gkind, gp, x, y, z, dx, dy, dz)
        if record:
            n = _log(rec, n, EV_DIRECTION, cos_s, dx, dy, dz, 0.0)


@njit(parallel=True, cache=True)
def render_kernel(gkind, gp, cam, lkind, ldir, media, coeffs,
                  max_depth, rr_start, rr_q, spp, seed, first_sample):
    """Per-pixel sums and sums of squares of the combined 4-vector contribution.

    Pixels run in parallel; each pixel's samples accumulate in sample order,
    so the result does not depend on the number of threads.
    """
    width = int(cam[14])
    height = int(cam[15])
    npix = width * height
    sums = np.zeros((npix, 4))
    sumsq = np.zeros((npix, 4))
    nmedia = media.shape[0]
    seed_u = np.uint64(seed)
    for pix in prange(npix):
        state = np.empty(3, dtype=np.uint64)
        out = np.empty(4)
        acc = np.empty(4)
        rec = np.empty((1, REC_COLS))
        px = pix % width
        py = pix // width
        for s in range(spp):
            acc[:] = 0.0
            stream = (np.uint64(pix) << np.uint64(32)) | np.uint64(first_sample + s)
            for m in range(nmedia):
                state[0] = seed_u
                state[1] = stream
                state[2] = np.uint64(0)
                out[:] = 0.0
                trace_nb(gkind, gp, cam, lkind, ldir, media[m, 0], media[m, 1], media[m, 2],
                         max_depth, rr_start, rr_q, px, py, state, out, rec, False)
                for k in range(4):
                    acc[k] += coeffs[m] * out[k]
            for k in range(4):
                sums[pix, k] += acc[k]
                sumsq[pix, k] += acc[k] * acc[k]
    return sums, sumsq
