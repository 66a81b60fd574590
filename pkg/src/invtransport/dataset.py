"""Synthetic training sets: shapes x lights x medium parameter triplets.

A dataset directory holds

* ``manifest.jsonl``: one record per image,
  ``{image, sigma_t, albedo, g, shape, light, split}`` with ``image``
  relative to the directory;
* ``dataset.json``: the scene template for each shape/light combination,
  the render settings, and a ``complete`` flag that stays false until every
  record has been written;
* ``images/*.pfm``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .pfm import read_pfm, write_pfm
from .sampling import mix_seed
from .scene import (
    Box,
    Camera,
    DirectionalLight,
    Medium,
    Scene,
    Slab,
    Sphere,
    scene_from_dict,
    scene_to_dict,
)
from .transport import render

SPLITS = ("train", "test-unseen-shape", "test-unseen-light", "test-unseen-both")
TEST_SPLITS = SPLITS[1:]
MANIFEST_NAME = "manifest.jsonl"
INFO_NAME = "dataset.json"
FORMAT = "invtransport-dataset"
VERSION = 1

SIGMA_RANGE = (2.5, 30.0)
ALBEDO_RANGE = (0.3, 0.95)
G_RANGE = (0.0, 0.9)


def split_for(shape, light, held_out_shapes, held_out_lights):
    new_shape = shape in held_out_shapes
    new_light = light in held_out_lights
    if new_shape and new_light:
        return "test-unseen-both"
    if new_shape:
        return "test-unseen-shape"
    if new_light:
        return "test-unseen-light"
    return "train"


def _direction(azimuth_deg):
    """Unit vector toward the light, rotated from the view axis about +y.

    0 degrees lights the medium from behind the camera, 90 from the side and
    180 from directly behind the medium.
    """
    a = math.radians(azimuth_deg)
    return (math.sin(a), 0.0, -math.cos(a))


@dataclass
class DatasetSpec:
    shapes: dict
    lights: dict
    camera: Camera
    params_per_combo: int = 25
    params: list | None = None  # explicit triplets shared by every combination
    held_out_shapes: tuple = ()
    held_out_lights: tuple = ()
    spp: int = 32
    seed: int = 0
    max_depth: int = 256

    def sample_params(self, combo_index):
        if self.params is not None:
            return [m if isinstance(m, Medium) else Medium(*m) for m in self.params]
        rng = np.random.default_rng([self.seed, combo_index])
        lo, hi = np.log(SIGMA_RANGE[0]), np.log(SIGMA_RANGE[1])
        out = []
        for _ in range(self.params_per_combo):
            s = float(np.exp(rng.uniform(lo, hi)))
            a = float(rng.uniform(*ALBEDO_RANGE))
            g = float(rng.uniform(*G_RANGE))
            out.append(Medium(s, a, g))
        return out

    def template(self, shape, light):
        return Scene(Medium(1.0, 0.5, 0.0), self.shapes[shape], self.lights[light], self.camera,
                     max_depth=self.max_depth)


def default_spec(seed=0, spp=32, size=64, params_per_combo=25) -> DatasetSpec:
    """The desk-scale set: 3 shapes x 4 lights x 25 triplets at 64x64.

    Lights sweep from the side (90 degrees from the view axis) to behind
    the medium (150).  Sphere and slab under the two extreme lights are for
    training; the box and the two intermediate lights are held out.
    """
    radiance = (3.0, 3.0, 3.0)
    return DatasetSpec(
        shapes={
            "sphere": Sphere((0.0, 0.0, 0.0), 1.0),
            "slab": Slab(-0.5, 0.5),
            "box": Box((-0.7, -0.7, -0.7), (0.7, 0.7, 0.7)),
        },
        lights={
            "side": DirectionalLight(_direction(90.0), radiance),
            "back": DirectionalLight(_direction(150.0), radiance),
            "side-back": DirectionalLight(_direction(110.0), radiance),
            "back-side": DirectionalLight(_direction(130.0), radiance),
        },
        camera=Camera("pinhole", (0.0, 1.2, -4.0), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0),
                      fov=40.0, width=size, height=size),
        params_per_combo=params_per_combo,
        held_out_shapes=("box",),
        held_out_lights=("side-back", "back-side"),
        spp=spp,
        seed=seed,
    )


@dataclass
class Record:
    image: str
    medium: Medium
    shape: str
    light: str
    split: str

    def as_record(self):
        return {"image": self.image, "sigma_t": self.medium.sigma_t, "albedo": self.medium.albedo,
                "g": self.medium.g, "shape": self.shape, "light": self.light, "split": self.split}


@dataclass
class Dataset:
    root: str
    records: list
    templates: dict
    complete: bool = True
    info: dict = field(default_factory=dict)
    _images: dict = field(default_factory=dict, repr=False)

    def split(self, *names):
        return [r for r in self.records if r.split in names]

    def template(self, record) -> Scene:
        return self.templates[(record.shape, record.light)]

    def scene_for(self, record, medium=None) -> Scene:
        return self.template(record).replace(medium=medium or record.medium)

    def image(self, record):
        if record.image not in self._images:
            self._images[record.image] = read_pfm(os.path.join(self.root, record.image))
        return self._images[record.image]


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _info_doc(spec: DatasetSpec, complete, errors):
    templates = {}
    for shape in spec.shapes:
        for light in spec.lights:
            templates[f"{shape}/{light}"] = scene_to_dict(spec.template(shape, light))
    return {
        "format": FORMAT,
        "version": VERSION,
        "complete": complete,
        "errors": errors,
        "spp": spec.spp,
        "seed": spec.seed,
        "held_out_shapes": list(spec.held_out_shapes),
        "held_out_lights": list(spec.held_out_lights),
        "templates": templates,
    }


def gen_dataset(spec: DatasetSpec, out_dir, progress=None) -> Dataset:
    """Render every shape x light x triplet combination into ``out_dir``.

    Record ``i`` is rendered with seed ``mix_seed(spec.seed, i)``.  A record
    that fails to write is reported in ``dataset.json`` and the set is left
    marked incomplete.
    """
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    info_path = os.path.join(out_dir, INFO_NAME)
    atomic_write_text(info_path, json.dumps(_info_doc(spec, False, []), indent=2))
    records, errors = [], []
    index = 0
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as manifest:
        for combo, (shape, light) in enumerate(
                (s, l) for s in spec.shapes for l in spec.lights):
            split = split_for(shape, light, spec.held_out_shapes, spec.held_out_lights)
            template = spec.template(shape, light)
            for medium in spec.sample_params(combo):
                rel = f"images/{index:05d}_{shape}_{light}.pfm"
                img = render(template.replace(medium=medium), spec.spp, mix_seed(spec.seed, index))
                try:
                    write_pfm(img, os.path.join(out_dir, rel))
                except OSError as exc:
                    errors.append({"record": index, "image": rel, "error": str(exc)})
                    index += 1
                    continue
                rec = Record(rel, medium, shape, light, split)
                manifest.write(json.dumps(rec.as_record()) + "\n")
                manifest.flush()
                records.append(rec)
                if progress:
                    progress(index, rec)
                index += 1
    atomic_write_text(info_path, json.dumps(_info_doc(spec, not errors, errors), indent=2))
    return load_dataset(out_dir)


def load_dataset(root) -> Dataset:
    with open(os.path.join(root, INFO_NAME), encoding="utf-8") as fh:
        info = json.load(fh)
    if info.get("format") != FORMAT:
        raise ValueError(f"{root} is not a dataset directory (format {info.get('format')!r})")
    templates = {}
    for key, doc in info["templates"].items():
        shape, light = key.split("/", 1)
        templates[(shape, light)] = scene_from_dict(doc)
    records = []
    with open(os.path.join(root, MANIFEST_NAME), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if row["split"] not in SPLITS:
                raise ValueError(f"unknown split {row['split']!r}")
            records.append(Record(row["image"], Medium(row["sigma_t"], row["albedo"], row["g"]),
                                  row["shape"], row["light"], row["split"]))
    return Dataset(root, records, templates, complete=bool(info.get("complete")), info=info)
