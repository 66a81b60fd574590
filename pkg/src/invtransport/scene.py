"""Scene description: medium, convex primitive, light, camera, renderer settings.

Scenes are immutable dataclasses.  Each also exposes a packed ``numpy``
representation (``.packed()``) that the jitted kernels consume.

Scene files are JSON documents with the top-level keys ``medium``,
``geometry``, ``light``, ``camera`` and an optional ``renderer`` block.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _config  # noqa: F401

DEFAULT_MAX_DEPTH = 256
DEFAULT_RR_START_DEPTH = 32
DEFAULT_RR_CONTINUE_PROB = 0.99

GEOM_SPHERE = 0
GEOM_SLAB = 1
GEOM_BOX = 2
GEOMETRY_KINDS = {"sphere": GEOM_SPHERE, "slab": GEOM_SLAB, "box": GEOM_BOX}

LIGHT_DIRECTIONAL = 0
LIGHT_CONSTANT_ENV = 1
LIGHT_KINDS = {"directional": LIGHT_DIRECTIONAL, "constant_env": LIGHT_CONSTANT_ENV}

CAMERA_PINHOLE = 0
CAMERA_ORTHOGRAPHIC = 1
CAMERA_KINDS = {"pinhole": CAMERA_PINHOLE, "orthographic": CAMERA_ORTHOGRAPHIC}


class SceneError(ValueError):
    """Invalid scene content.  ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SceneSyntaxError(SceneError):
    """The scene document is not well-formed JSON."""

    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


def _vec3(value, name):
    try:
        v = tuple(float(x) for x in value)
    except TypeError:
        raise SceneError(f"{name} must be a list of 3 numbers", name) from None
    if len(v) != 3 or not all(math.isfinite(x) for x in v):
        raise SceneError(f"{name} must be 3 finite numbers", name)
    return v


def _radiance(value, name):
    if isinstance(value, (int, float)):
        value = (value, value, value)
    v = _vec3(value, name)
    if min(v) < 0:
        raise SceneError(f"{name} must be nonnegative", name)
    return v


@dataclass(frozen=True)
class Medium:
    """Homogeneous scattering medium.

    ``sigma_t`` is the extinction coefficient per unit scene length,
    ``albedo`` the scattering probability per collision and ``g`` the
    Henyey-Greenstein anisotropy.
    """

    sigma_t: float
    albedo: float
    g: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma_t) and self.sigma_t > 0):
            raise SceneError(f"sigma_t must be > 0, got {self.sigma_t}", "sigma_t")
        if not 0.0 < self.albedo < 1.0:
            raise SceneError(f"albedo must lie in (0, 1), got {self.albedo}", "albedo")
        if not -1.0 < self.g < 1.0:
            raise SceneError(f"g must lie in (-1, 1), got {self.g}", "g")

    def as_array(self):
        return np.array([self.sigma_t, self.albedo, self.g], dtype=np.float64)


@dataclass(frozen=True)
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    kind = "sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "geometry.center"))
        if not self.radius > 0:
            raise SceneError("radius must be > 0", "geometry.radius")

    def packed(self):
        return GEOM_SPHERE, np.array([*self.center, self.radius, 0.0, 0.0])


@dataclass(frozen=True)
class Slab:
    """Region ``z_min < z < z_max``, unbounded in x and y."""

    z_min: float = 0.0
    z_max: float = 1.0
    kind = "slab"

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise SceneError("z_min must be < z_max", "geometry.z_min")

    def packed(self):
        return GEOM_SLAB, np.array([self.z_min, self.z_max, 0.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class Box:
    min_corner: tuple = (-1.0, -1.0, -1.0)
    max_corner: tuple = (1.0, 1.0, 1.0)
    kind = "box"

    def __post_init__(self):
        lo = _vec3(self.min_corner, "geometry.min")
        hi = _vec3(self.max_corner, "geometry.max")
        if not all(a < b for a, b in zip(lo, hi)):
            raise SceneError("min corner must be < max corner componentwise", "geometry.min")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def packed(self):
        return GEOM_BOX, np.array([*self.min_corner, *self.max_corner])


@dataclass(frozen=True)
class DirectionalLight:
    """Delta light arriving from ``direction`` (unit vector pointing toward the light)."""

    direction: tuple = (0.0, 0.0, -1.0)
    radiance: tuple = (1.0, 1.0, 1.0)
    kind = "directional"

    def __post_init__(self):
        d = _vec3(self.direction, "light.direction")
        if abs(math.sqrt(sum(x * x for x in d)) - 1.0) > 1e-9:
            raise SceneError("light direction must have unit norm", "light.direction")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "radiance", _radiance(self.radiance, "light.radiance"))


@dataclass(frozen=True)
class ConstantEnvLight:
    """Uniform radiance arriving from every direction."""

    radiance: tuple = (1.0, 1.0, 1.0)
    kind = "constant_env"

    def __post_init__(self):
        object.__setattr__(self, "radiance", _radiance(self.radiance, "light.radiance"))

    @property
    def direction(self):
        return (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Camera:
    """Pinhole (``fov`` in degrees, vertical) or orthographic (``extent`` = film height)."""

    kind: str = "pinhole"
    position: tuple = (0.0, 0.0, -4.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov: float = 40.0
    extent: float = 2.0
    width: int = 32
    height: int = 32

    def __post_init__(self):
        if self.kind not in CAMERA_KINDS:
            raise SceneError(f"unknown camera kind {self.kind!r}", "camera.kind")
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, _vec3(getattr(self, name), f"camera.{name}"))
        if self.kind == "pinhole" and not 0.0 < self.fov < 180.0:
            raise SceneError("fov must lie in (0, 180) degrees", "camera.fov")
        if self.kind == "orthographic" and not self.extent > 0:
            raise SceneError("extent must be > 0", "camera.extent")
        for name in ("width", "height"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise SceneError(f"{name} must be a positive integer", f"camera.{name}")
            object.__setattr__(self, name, int(v))
        f = np.subtract(self.look_at, self.position)
        if np.linalg.norm(f) == 0:
            raise SceneError("look_at must differ from position", "camera.look_at")
        if np.linalg.norm(np.cross(f, self.up)) < 1e-12:
            raise SceneError("up must not be parallel to the view direction", "camera.up")

    def packed(self):
        """``[kind, pos(3), forward(3), right(3), up(3), scale, width, height]``."""
        pos = np.array(self.position)
        f = np.subtract(self.look_at, pos)
        f = f / np.linalg.norm(f)
        r = np.cross(f, self.up)
        r = r / np.linalg.norm(r)
        u = np.cross(r, f)
        if self.kind == "pinhole":
            scale = math.tan(math.radians(self.fov) / 2.0)
        else:
            scale = self.extent / 2.0
        return np.array([CAMERA_KINDS[self.kind], *pos, *f, *r, *u, scale, self.width, self.height])


@dataclass(frozen=True)
class Scene:
    medium: Medium
    geometry: object
    light: object
    camera: Camera
    max_depth: int = DEFAULT_MAX_DEPTH
    rr_start_depth: int = DEFAULT_RR_START_DEPTH
    rr_continue_prob: float = DEFAULT_RR_CONTINUE_PROB

    def __post_init__(self):
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise SceneError("max_depth must be a positive integer", "renderer.max_depth")
        if int(self.rr_start_depth) != self.rr_start_depth or self.rr_start_depth < 0:
            raise SceneError("rr_start_depth must be a nonnegative integer", "renderer.rr_start_depth")
        if not 0.0 < self.rr_continue_prob <= 1.0:
            raise SceneError("rr_continue_prob must lie in (0, 1]", "renderer.rr_continue_prob")
        if contains(self.geometry, self.camera.position):
            raise SceneError("camera position must lie outside the geometry", "camera.position")

    @property
    def width(self):
        return self.camera.width

    @property
    def height(self):
        return self.camera.height

    def with_medium(self, sigma_t=None, albedo=None, g=None):
        m = self.medium
        return dataclasses.replace(self, medium=Medium(
            m.sigma_t if sigma_t is None else sigma_t,
            m.albedo if albedo is None else albedo,
            m.g if g is None else g,
        ))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# -- ray queries ----------------------------------------------------------------


@njit(cache=True)
def intersect_nb(kind, p, ox, oy, oz, dx, dy, dz):
    """Inside interval of the ray clipped to ``t >= 0``; ``(False, 0, 0)`` on a miss."""
    t0 = -np.inf
    t1 = np.inf
    if kind == GEOM_SPHERE:
        cx = ox - p[0]
        cy = oy - p[1]
        cz = oz - p[2]
        b = cx * dx + cy * dy + cz * dz
        c = cx * cx + cy * cy + cz * cz - p[3] * p[3]
        disc = b * b - c
        if disc <= 0.0:
            return False, 0.0, 0.0
        s = math.sqrt(disc)
        # stable roots: form the larger-magnitude one directly
        if b > 0.0:
            t0 = -b - s
            t1 = c / t0
        else:
            t1 = -b + s
            t0 = c / t1
    elif kind == GEOM_SLAB:
        if dz == 0.0:
            if not (p[0] < oz < p[1]):
                return False, 0.0, 0.0
        else:
            a = (p[0] - oz) / dz
            b = (p[1] - oz) / dz
            t0 = min(a, b)
            t1 = max(a, b)
    else:
        o = (ox, oy, oz)
        d = (dx, dy, dz)
        for i in range(3):
            lo = p[i]
            hi = p[3 + i]
            if d[i] == 0.0:
                if not (lo < o[i] < hi):
                    return False, 0.0, 0.0
            else:
                a = (lo - o[i]) / d[i]
                b = (hi - o[i]) / d[i]
                if a > b:
                    a, b = b, a
                t0 = max(t0, a)
                t1 = min(t1, b)
    t0 = max(t0, 0.0)
    if not t1 > t0:
        return False, 0.0, 0.0
    return True, t0, t1


@njit(cache=True)
def exit_distance_nb(kind, p, ox, oy, oz, dx, dy, dz):
    """Distance from an interior point to the boundary; ``inf`` if never left."""
    if kind == GEOM_SPHERE:
        cx = ox - p[0]
        cy = oy - p[1]
        cz = oz - p[2]
        b = cx * dx + cy * dy + cz * dz
        c = cx * cx + cy * cy + cz * cz - p[3] * p[3]
        disc = max(b * b - c, 0.0)
        s = math.sqrt(disc)
        if b < 0.0:
            return max(-b + s, 0.0)
        # far root via the product of roots avoids cancellation
        denom = -b - s
        return max(c / denom, 0.0) if denom != 0.0 else 0.0
    if kind == GEOM_SLAB:
        if dz > 0.0:
            return max((p[1] - oz) / dz, 0.0)
        if dz < 0.0:
            return max((p[0] - oz) / dz, 0.0)
        return np.inf
    t = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for i in range(3):
        if d[i] > 0.0:
            t = min(t, (p[3 + i] - o[i]) / d[i])
        elif d[i] < 0.0:
            t = min(t, (p[i] - o[i]) / d[i])
    return max(t, 0.0)


def _unit(direction):
    d = np.asarray(direction, dtype=float)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit 3-vector")
    return d


def contains(geometry, point):
    """True when ``point`` is strictly inside the primitive."""
    x = np.asarray(point, dtype=float)
    if isinstance(geometry, Sphere):
        return float(np.sum((x - geometry.center) ** 2)) < geometry.radius**2
    if isinstance(geometry, Slab):
        return geometry.z_min < x[2] < geometry.z_max
    if isinstance(geometry, Box):
        return bool(np.all(x > geometry.min_corner) and np.all(x < geometry.max_corner))
    raise TypeError(f"unsupported geometry {geometry!r}")


def intersect(geometry, origin, direction):
    """``(t_enter, t_exit)`` of the ray's overlap with the primitive, or ``None``."""
    kind, p = geometry.packed()
    o = np.asarray(origin, dtype=float)
    d = _unit(direction)
    hit, t0, t1 = intersect_nb(kind, p, o[0], o[1], o[2], d[0], d[1], d[2])
    return (t0, t1) if hit else None


def exit_distance(geometry, point, direction):
    """Distance from an interior ``point`` to the boundary along ``direction``."""
    if not contains(geometry, point):
        raise ValueError(f"point {tuple(point)} is not inside the geometry")
    kind, p = geometry.packed()
    x = np.asarray(point, dtype=float)
    d = _unit(direction)
    return exit_distance_nb(kind, p, x[0], x[1], x[2], d[0], d[1], d[2])


def surface_residual(geometry, point):
    """Signed implicit-surface value; zero on the boundary."""
    x = np.asarray(point, dtype=float)
    if isinstance(geometry, Sphere):
        return float(np.linalg.norm(x - geometry.center) - geometry.radius)
    if isinstance(geometry, Slab):
        return float(min(abs(x[2] - geometry.z_min), abs(x[2] - geometry.z_max)))
    lo = np.asarray(geometry.min_corner)
    hi = np.asarray(geometry.max_corner)
    q = np.maximum(lo - x, x - hi)
    return float(np.max(q))


# -- scene documents --------------------------------------------------------------


def _take(block, allowed, where):
    if not isinstance(block, dict):
        raise SceneError(f"{where} must be an object", where)
    unknown = set(block) - set(allowed)
    if unknown:
        key = sorted(unknown)[0]
        raise SceneError(f"unknown key {where}.{key}", f"{where}.{key}")
    return block


def _require(block, key, where):
    if key not in block:
        raise SceneError(f"missing required key {where}.{key}", f"{where}.{key}")
    return block[key]


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneError(f"{name} must be a number", name)
    return float(value)


def _parse_medium(block):
    _take(block, {"sigma_t", "albedo", "g"}, "medium")
    values = {k: _number(_require(block, k, "medium"), k) for k in ("sigma_t", "albedo", "g")}
    return Medium(**values)


def _parse_geometry(block):
    _take(block, {"kind", "center", "radius", "z_min", "z_max", "min", "max"}, "geometry")
    kind = _require(block, "kind", "geometry")
    allowed = {
        "sphere": {"kind", "center", "radius"},
        "slab": {"kind", "z_min", "z_max"},
        "box": {"kind", "min", "max"},
    }
    if kind not in allowed:
        raise SceneError(f"unknown geometry kind {kind!r}", "geometry.kind")
    _take(block, allowed[kind], "geometry")
    if kind == "sphere":
        return Sphere(tuple(block.get("center", (0.0, 0.0, 0.0))),
                      _number(_require(block, "radius", "geometry"), "geometry.radius"))
    if kind == "slab":
        return Slab(_number(_require(block, "z_min", "geometry"), "geometry.z_min"),
                    _number(_require(block, "z_max", "geometry"), "geometry.z_max"))
    return Box(tuple(_require(block, "min", "geometry")), tuple(_require(block, "max", "geometry")))


def _parse_light(block):
    _take(block, {"kind", "direction", "radiance"}, "light")
    kind = _require(block, "kind", "light")
    radiance = block.get("radiance", (1.0, 1.0, 1.0))
    if kind == "directional":
        return DirectionalLight(tuple(_require(block, "direction", "light")), radiance)
    if kind == "constant_env":
        _take(block, {"kind", "radiance"}, "light")
        return ConstantEnvLight(radiance)
    raise SceneError(f"unknown light kind {kind!r}", "light.kind")


def _parse_camera(block):
    _take(block, {"kind", "position", "look_at", "up", "fov", "extent", "width", "height"}, "camera")
    kind = block.get("kind", "pinhole")
    if kind == "pinhole" and "extent" in block:
        raise SceneError("unknown key camera.extent for a pinhole camera", "camera.extent")
    if kind == "orthographic" and "fov" in block:
        raise SceneError("unknown key camera.fov for an orthographic camera", "camera.fov")
    kwargs = {"kind": kind}
    for key in ("position", "look_at", "up"):
        if key in block:
            kwargs[key] = tuple(block[key])
    for key in ("fov", "extent"):
        if key in block:
            kwargs[key] = _number(block[key], f"camera.{key}")
    for key in ("width", "height"):
        value = _require(block, key, "camera")
        if isinstance(value, bool) or not isinstance(value, int):
            raise SceneError(f"camera.{key} must be an integer", f"camera.{key}")
        kwargs[key] = value
    return Camera(**kwargs)


def scene_from_dict(doc):
    _take(doc, {"medium", "geometry", "light", "camera", "renderer"}, "scene")
    renderer = _take(doc.get("renderer", {}), {"max_depth", "rr_start_depth", "rr_continue_prob"},
                     "renderer")
    kwargs = {}
    for key in ("max_depth", "rr_start_depth"):
        if key in renderer:
            value = renderer[key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise SceneError(f"renderer.{key} must be an integer", f"renderer.{key}")
            kwargs[key] = value
    if "rr_continue_prob" in renderer:
        kwargs["rr_continue_prob"] = _number(renderer["rr_continue_prob"], "renderer.rr_continue_prob")
    return Scene(
        medium=_parse_medium(_require(doc, "medium", "scene")),
        geometry=_parse_geometry(_require(doc, "geometry", "scene")),
        light=_parse_light(_require(doc, "light", "scene")),
        camera=_parse_camera(_require(doc, "camera", "scene")),
        **kwargs,
    )


def parse_scene(text):
    """Parse and validate a JSON scene document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return scene_from_dict(doc)


def load_scene(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scene(fh.read())


def scene_to_dict(scene):
    geom = scene.geometry
    if isinstance(geom, Sphere):
        gdoc = {"kind": "sphere", "center": list(geom.center), "radius": geom.radius}
    elif isinstance(geom, Slab):
        gdoc = {"kind": "slab", "z_min": geom.z_min, "z_max": geom.z_max}
    else:
        gdoc = {"kind": "box", "min": list(geom.min_corner), "max": list(geom.max_corner)}
    light = scene.light
    ldoc = {"kind": light.kind, "radiance": list(light.radiance)}
    if light.kind == "directional":
        ldoc["direction"] = list(light.direction)
    cam = scene.camera
    cdoc = {"kind": cam.kind, "position": list(cam.position), "look_at": list(cam.look_at),
            "up": list(cam.up), "width": cam.width, "height": cam.height}
    if cam.kind == "pinhole":
        cdoc["fov"] = cam.fov
    else:
        cdoc["extent"] = cam.extent
    m = scene.medium
    return {
        "medium": {"sigma_t": m.sigma_t, "albedo": m.albedo, "g": m.g},
        "geometry": gdoc,
        "light": ldoc,
        "camera": cdoc,
        "renderer": {"max_depth": scene.max_depth, "rr_start_depth": scene.rr_start_depth,
                     "rr_continue_prob": scene.rr_continue_prob},
    }


def serialize_scene(scene):
    return json.dumps(scene_to_dict(scene), indent=2)

