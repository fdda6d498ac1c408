"""Deterministic synthetic scenes standing in for a salient-object set and a
box-annotated set.

Salient scenes hold one large object with its full mask. Weak scenes hold one
to three objects that may overlap; their masks are written only to an
evaluation directory the trainer never reads. Shape kind doubles as the class
label. Every object's box is the tight box of its visible mask, so each box
row and column crosses the object.

Layout written by :func:`generate`::

    <out>/manifest.json           boxes (+ mask_file for the salient split)
    <out>/images/*.ppm
    <out>/masks/*.pgm             salient split only
    <out>/eval/manifest.json      weak split only: same entries plus mask_file
    <out>/eval/masks/*.pgm
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .augment import resize_image
from .fileio import save_manifest, write_pgm, write_ppm
from .geometry import bbox_of_mask

SALIENT = "salient"
WEAK = "weak"
KINDS = ("ellipse", "rectangle", "polygon")
_SPLIT_CODE = {SALIENT: 0, WEAK: 1}
DEFAULT_SIZE = {SALIENT: 80, WEAK: 96}
MIN_AREA = 40


@dataclass
class ShapeSpec:
    kind: str
    color: tuple
    center: tuple  # (row, col) in pixels
    radii: tuple   # half extents before rotation
    rotation: float
    vertices: list = field(default_factory=list)  # polygon only, unit-radius angles


@dataclass
class SceneSpec:
    height: int
    width: int
    background: tuple
    shapes: list
    seed: tuple


def _rotated(rr, cc, shape: ShapeSpec):
    cy, cx = shape.center
    c, s = math.cos(shape.rotation), math.sin(shape.rotation)
    dy, dx = rr - cy, cc - cx
    return c * dx + s * dy, -s * dx + c * dy


def render_shape(shape: ShapeSpec, height: int, width: int) -> np.ndarray:
    """Boolean coverage of pixel centres."""
    rr, cc = np.mgrid[0:height, 0:width] + 0.5
    u, v = _rotated(rr, cc, shape)
    a, b = shape.radii
    if shape.kind == "ellipse":
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if shape.kind == "rectangle":
        return (np.abs(u) <= a) & (np.abs(v) <= b)
    if shape.kind == "polygon":
        pts = [(a * math.cos(t), b * math.sin(t)) for t in shape.vertices]
        inside = np.ones((height, width), dtype=bool)
        for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
            inside &= (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) >= 0
        return inside
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def _texture(rng: np.random.Generator, height: int, width: int, base: np.ndarray, amp: float) -> np.ndarray:
    coarse = rng.uniform(-amp, amp, size=(3, 5, 5))
    # low-frequency field: bilinear blow-up of a 5x5 grid
    field_ = resize_image(coarse, height, width)
    return base[:, None, None] + field_


def _colour_pair(rng: np.random.Generator):
    bg = rng.uniform(0.15, 0.85, size=3)
    while True:
        fg = rng.uniform(0.0, 1.0, size=3)
        if np.linalg.norm(fg - bg) >= 0.45:
            return bg, fg


def _random_shape(rng: np.random.Generator, kind: str, center, radii, color) -> ShapeSpec:
    verts = []
    if kind == "polygon":
        k = int(rng.integers(3, 7))
        gaps = rng.uniform(0.5, 1.5, size=k)
        angles = np.cumsum(gaps / gaps.sum() * 2 * math.pi) + rng.uniform(0, 2 * math.pi)
        verts = [float(t) for t in angles]
    return ShapeSpec(kind, tuple(float(c) for c in color), tuple(center), tuple(radii),
                     float(rng.uniform(0, math.pi)), verts)


def _child_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_CODE[split], index]))


def _salient_scene(rng, size: int, seed) -> SceneSpec:
    bg, fg = _colour_pair(rng)
    kind = KINDS[int(rng.integers(len(KINDS)))]
    radii = rng.uniform(0.32, 0.48, size=2) * size
    margin = 0.06 * size
    center = rng.uniform(size / 2 - margin, size / 2 + margin, size=2)
    return SceneSpec(size, size, tuple(bg), [_random_shape(rng, kind, center, radii, fg)], seed)


def _weak_scene(rng, size: int, seed) -> SceneSpec:
    bg, _ = _colour_pair(rng)
    n = int(rng.integers(1, 4))
    shapes = []
    for i in range(n):
        kind = KINDS[int(rng.integers(len(KINDS)))]
        radii = rng.uniform(0.12, 0.26, size=2) * size
        if shapes and rng.random() < 0.6:
            # overlap an earlier object on purpose
            ref = shapes[int(rng.integers(len(shapes)))]
            off = rng.uniform(-1.0, 1.0, size=2) * np.asarray(ref.radii) * 1.2
            center = np.clip(np.asarray(ref.center) + off, 0.15 * size, 0.85 * size)
        else:
            center = rng.uniform(0.2 * size, 0.8 * size, size=2)
        while True:
            fg = rng.uniform(0.0, 1.0, size=3)
            if np.linalg.norm(fg - np.asarray(bg)) >= 0.45 and all(
                    np.linalg.norm(fg - np.asarray(s.color)) >= 0.25 for s in shapes):
                break
        shapes.append(_random_shape(rng, kind, center, radii, fg))
    return SceneSpec(size, size, tuple(bg), shapes, seed)


def visible_masks(scene: SceneSpec) -> list:
    """Per-shape masks after painter's-order occlusion (later shapes on top)."""
    full = [render_shape(s, scene.height, scene.width) for s in scene.shapes]
    out = []
    for i, m in enumerate(full):
        vis = m.copy()
        for later in full[i + 1:]:
            vis &= ~later
        out.append(vis)
    return out


def _acceptable(scene: SceneSpec, masks: list) -> bool:
    full = [render_shape(s, scene.height, scene.width) for s in scene.shapes]
    for vis, whole in zip(masks, full):
        if vis.sum() < MIN_AREA or vis.sum() < 0.5 * whole.sum():
            return False
        _, n = ndimage.label(vis, structure=np.ones((3, 3)))
        if n != 1:
            return False
    return True


def render_scene(scene: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    img = _texture(rng, scene.height, scene.width, np.asarray(scene.background), 0.18)
    for shape in scene.shapes:
        m = render_shape(shape, scene.height, scene.width)
        obj = _texture(rng, scene.height, scene.width, np.asarray(shape.color), 0.06)
        img = np.where(m[None], obj, img)
    img = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_scene(split: str, index: int, seed: int, size: int) -> tuple:
    """(scene, image, masks) for one image; retries until every mask is usable."""
    rng = _child_rng(seed, split, index)
    build = _salient_scene if split == SALIENT else _weak_scene
    for _ in range(100):
        scene = build(rng, size, (seed, split, index))
        masks = visible_masks(scene)
        if _acceptable(scene, masks):
            return scene, render_scene(scene, rng), masks
    raise RuntimeError(f"could not build a valid {split} scene for index {index}")


def generate(split: str, count: int, seed: int, out_dir, size: int = None) -> dict:
    """Render ``count`` scenes of a split to ``out_dir`` and return the manifest."""
    if split not in _SPLIT_CODE:
        raise ValueError(f"split must be 'salient' or 'weak', got {split!r}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    size = size or DEFAULT_SIZE[split]
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    mask_dir = out / ("masks" if split == SALIENT else "eval/masks")
    mask_dir.mkdir(parents=True, exist_ok=True)
    prefix = "s" if split == SALIENT else "w"

    images, eval_images = [], []
    for i in range(count):
        scene, img, masks = make_scene(split, i, seed, size)
        image_id = f"{prefix}{i:05d}"
        write_ppm(out / "images" / f"{image_id}.ppm", img)
        entry = {"id": image_id, "file": f"images/{image_id}.ppm",
                 "width": scene.width, "height": scene.height, "instances": []}
        eval_entry = {**entry, "file": f"../images/{image_id}.ppm", "instances": []}
        for j, (shape, m) in enumerate(zip(scene.shapes, masks)):
            inst_id = f"{image_id}_{j}"
            write_pgm(mask_dir / f"{inst_id}.pgm", m)
            inst = {"id": inst_id, "class": shape.kind, "box": bbox_of_mask(m).to_list()}
            if split == SALIENT:
                entry["instances"].append({**inst, "mask_file": f"masks/{inst_id}.pgm"})
            else:
                entry["instances"].append(inst)
                eval_entry["instances"].append({**inst, "mask_file": f"masks/{inst_id}.pgm"})
        images.append(entry)
        eval_images.append(eval_entry)

    manifest = {"split": split, "seed": seed, "images": images}
    save_manifest(out / "manifest.json", manifest)
    if split == WEAK:
        save_manifest(out / "eval" / "manifest.json", {"split": split, "seed": seed, "images": eval_images})
    return manifest
