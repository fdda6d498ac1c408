"""Proxy masks from a trained model, smaller-object-better merging, and
dropping by proxy box agreement.

Dropped proxies stay in the output with ``ignore=True``; a downstream trainer
is expected to skip them in its mask loss rather than lose the instance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .augment import PROXY_SIZE, paste_scores, proxy_crop
from .geometry import Box, bbox_of_mask, box_iou

BACKGROUND = -1
DEFAULT_DROP_THRESHOLD = 0.95
DEFAULT_ALPHA = 0.7


@dataclass
class ProxyAnnotation:
    instance_id: str
    image_id: str
    class_label: str
    gt_box: Box
    mask: np.ndarray
    ignore: bool = False
    agreement: float = 0.0

    @classmethod
    def from_mask(cls, instance_id, image_id, class_label, gt_box: Box, mask) -> "ProxyAnnotation":
        return cls(instance_id, image_id, class_label, gt_box, np.asarray(mask, dtype=bool),
                   False, proxy_agreement(mask, gt_box))


def proxy_agreement(mask, gt_box: Box) -> float:
    """IoU between the tight box of ``mask`` and the GT box (0 for an empty mask)."""
    box = bbox_of_mask(mask)
    return 0.0 if box is None else box_iou(box, gt_box)


def predict_proxy(image: np.ndarray, gt_box: Box, model, alpha: Optional[float] = DEFAULT_ALPHA,
                  size: int = PROXY_SIZE) -> np.ndarray:
    """Image-resolution mask for one GT box.

    ``model.predict(pixels[N,3,S,S], alpha)`` must return ``[N,S,S]`` scores;
    :class:`boxseg.heads.Model` blends salient and transferred heads with
    ``alpha`` (``None`` selects the weak head).
    """
    return predict_proxies(image, [gt_box], model, alpha, size)[0]


def predict_proxies(image: np.ndarray, boxes: Sequence[Box], model, alpha: Optional[float] = DEFAULT_ALPHA,
                    size: int = PROXY_SIZE) -> list:
    if not boxes:
        return []
    _, height, width = image.shape
    crops = np.stack([proxy_crop(image, b, size).pixels for b in boxes])
    scores = model.predict(crops, alpha)
    return [paste_scores(s, b, height, width) for s, b in zip(scores, boxes)]


def merge_masks(instances: Sequence) -> np.ndarray:
    """Label map where each contested pixel goes to the covering instance of
    smallest mask area (ties: lowest id). Background is ``BACKGROUND``.

    ``instances`` is a sequence of ``(id, mask)`` with integer ids.
    """
    if not instances:
        raise ValueError("merge_masks: no instances")
    shape = np.asarray(instances[0][1]).shape
    labels = np.full(shape, BACKGROUND, dtype=np.int64)
    best = np.full(shape, np.iinfo(np.int64).max, dtype=np.int64)
    best_id = np.full(shape, np.iinfo(np.int64).max, dtype=np.int64)
    for inst_id, mask in instances:
        m = np.asarray(mask, dtype=bool)
        if m.shape != shape:
            raise ValueError(f"merge_masks: instance {inst_id} has shape {m.shape}, expected {shape}")
        area = int(m.sum())
        wins = m & ((area < best) | ((area == best) & (inst_id < best_id)))
        labels[wins] = inst_id
        best[wins] = area
        best_id[wins] = inst_id
    return labels


def merge_annotations(annotations: Sequence[ProxyAnnotation]) -> list:
    """Merge the proxies of one image and recompute each agreement on its merged mask."""
    if not annotations:
        return []
    labels = merge_masks([(i, a.mask) for i, a in enumerate(annotations)])
    return [replace(a, mask=labels == i, agreement=proxy_agreement(labels == i, a.gt_box))
            for i, a in enumerate(annotations)]


def drop_masks(annotations: Sequence[ProxyAnnotation], threshold: float = DEFAULT_DROP_THRESHOLD) -> tuple:
    """Flag proxies whose agreement is below ``threshold``; returns (annotations, drop rate)."""
    if not annotations:
        raise ValueError("drop_masks: no annotations")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"drop threshold must lie in [0, 1], got {threshold}")
    out = [replace(a, ignore=a.agreement < threshold) for a in annotations]
    return out, sum(a.ignore for a in out) / len(out)
