"""Netpbm image/mask files, run-length mask codec and JSON manifests.

Manifest schema (paths relative to the manifest file)::

    {"images": [{"id": str, "file": str, "width": int, "height": int,
                 "instances": [{"id": str, "class": str, "box": [x, y, w, h],
                                "mask_file": str (optional), "rle": {...} (optional),
                                "ignore": bool (optional), "agreement": float (optional),
                                "score": float (optional)}]}]}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Box


class ManifestError(ValueError):
    """Malformed manifest or referenced file."""


def _read_netpbm(path, magic: bytes) -> tuple:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != magic:
        raise ManifestError(f"{path}: expected {magic.decode()} file, found {tokens[0][:2]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ManifestError(f"{path}: only 8-bit files are supported")
    return data[pos + 1:], w, h


def write_pgm(path, mask) -> None:
    """Binary mask as P5, foreground 255, background 0."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + (m.astype(np.uint8) * 255).tobytes())


def read_pgm(path) -> np.ndarray:
    raw, w, h = _read_netpbm(path, b"P5")
    if len(raw) < w * h:
        raise ManifestError(f"{path}: truncated PGM")
    return np.frombuffer(raw[:w * h], dtype=np.uint8).reshape(h, w) >= 128


def write_ppm(path, image: np.ndarray) -> None:
    """``[3, H, W]`` floats in [0, 1] as 8-bit P6."""
    img = np.asarray(image)
    _, h, w = img.shape
    q = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    raw, w, h = _read_netpbm(path, b"P6")
    if len(raw) < 3 * w * h:
        raise ManifestError(f"{path}: truncated PPM")
    arr = np.frombuffer(raw[:3 * w * h], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def rle_encode(mask) -> dict:
    """Uncompressed column-major RLE; counts alternate starting with background."""
    m = np.asarray(mask, dtype=bool)
    flat = m.reshape(-1, order="F")
    if flat.size == 0:
        return {"size": list(m.shape), "counts": []}
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    runs = np.diff(np.concatenate([[0], edges, [flat.size]])).tolist()
    if flat[0]:
        runs = [0] + runs
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": [int(c) for c in runs]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    if sum(counts) != h * w:
        raise ManifestError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"{path}: no such manifest") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    images = doc.get("images") if isinstance(doc, dict) else None
    if not isinstance(images, list):
        raise ManifestError(f"{path}: missing 'images' list")
    for img in images:
        for key in ("id", "file", "instances"):
            if key not in img:
                raise ManifestError(f"{path}: image entry lacks '{key}'")
        for inst in img["instances"]:
            for key in ("id", "class", "box"):
                if key not in inst:
                    raise ManifestError(f"{path}: instance in image {img['id']} lacks '{key}'")
            try:
                Box.from_list(inst["box"])
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}: bad box for instance {inst['id']}: {exc}") from None
    doc["_root"] = str(path.parent)
    return doc


def save_manifest(path, doc: dict) -> None:
    clean = {k: v for k, v in doc.items() if not k.startswith("_")}
    Path(path).write_text(json.dumps(clean, indent=1, sort_keys=True) + "\n")


def resolve(doc: dict, rel: str) -> Path:
    return Path(doc["_root"]) / rel


def instance_mask(doc: dict, inst: dict) -> np.ndarray:
    if "rle" in inst:
        return rle_decode(inst["rle"])
    if "mask_file" in inst:
        path = resolve(doc, inst["mask_file"])
        if not path.exists():
            raise ManifestError(f"{path}: mask file not found")
        return read_pgm(path)
    raise ManifestError(f"instance {inst['id']} carries no mask")


def image_pixels(doc: dict, img: dict) -> np.ndarray:
    path = resolve(doc, img["file"])
    if not path.exists():
        raise ManifestError(f"{path}: image file not found")
    return read_ppm(path)
