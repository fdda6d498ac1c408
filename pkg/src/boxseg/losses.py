"""Training losses: bag-level MIL loss with pairwise smoothing, blended pixel BCE,
and the per-sample total that switches the pixel term on for salient samples.

The MIL and pixel losses are single fused primitives with hand-derived
backward rules; they plug into the diffcore graph like any other op.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bags import NEGATIVE, POSITIVE, BagSet
from .diffcore import Tensor, ops

WEAK = "weak"
SALIENT = "salient"

_NEIGHBOURS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


@dataclass(frozen=True)
class LossConfig:
    smooth_weight: float = 0.05
    alpha: float = 0.7
    clamp_eps: float = 1e-7
    log_base: str = "natural"

    def __post_init__(self):
        if self.smooth_weight < 0:
            raise ValueError(f"smooth_weight must be >= 0, got {self.smooth_weight}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")
        if self.log_base != "natural":
            raise ValueError("only natural logarithms are supported")


def _check_prob_map(s: Tensor, bags: Optional[BagSet] = None) -> None:
    if s.ndim != 2:
        raise ValueError(f"score map must be [H,W], got shape {s.shape}")
    if bags is not None and s.shape != (bags.patch_h, bags.patch_w):
        raise ValueError(f"score map {s.shape} does not match bags for {bags.patch_h}x{bags.patch_w}")
    if s.data.min() < 0.0 or s.data.max() > 1.0:
        raise ValueError("score map values must lie in [0, 1]")


def _bag_argmax(flat: np.ndarray, idx: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Flat index of each bag's maximum; ties go to the lowest row-major index."""
    vals = np.where(valid, flat[idx], -np.inf)
    return idx[np.arange(idx.shape[0]), np.argmax(vals, axis=1)]


def _smooth(s: np.ndarray, members: np.ndarray) -> tuple:
    """Ordered 8-neighbour squared differences from every member pixel, and the gradient."""
    h, w = s.shape
    phi = 0.0
    grad = np.zeros_like(s)
    weight = members.astype(np.float64)
    for dr, dc in _NEIGHBOURS:
        pr = slice(max(0, -dr), h - max(0, dr))
        qr = slice(max(0, dr), h - max(0, -dr))
        pc = slice(max(0, -dc), w - max(0, dc))
        qc = slice(max(0, dc), w - max(0, -dc))
        d = (s[pr, pc] - s[qr, qc]) * weight[pr, pc]
        phi += float(np.sum(d * d))
        grad[pr, pc] += 2.0 * d
        grad[qr, qc] -= 2.0 * d
    return phi, grad


def smooth_term(s: Tensor, bags: BagSet) -> Tensor:
    _check_prob_map(s, bags)
    phi, grad = _smooth(s.data, bags.pixel_mask)
    return ops.record(np.asarray(phi), "smooth_term", (s,), lambda g: (float(g) * grad,))


def mil_loss(s: Tensor, bags: BagSet, cfg: LossConfig = LossConfig()) -> Tensor:
    """Negative log-likelihood of bag labels plus ``smooth_weight`` times the smooth term.

    ``s`` holds probabilities. Each bag is scored by its maximum pixel; the
    gradient flows only through that pixel.
    """
    if len(bags) == 0:
        raise ValueError("mil_loss: empty bag set")
    _check_prob_map(s, bags)
    eps = cfg.clamp_eps
    flat = s.data.reshape(-1)
    grad = np.zeros(flat.size)
    loss = 0.0

    pos = _bag_argmax(flat, *bags.index_matrix(POSITIVE))
    if pos.size:
        m = flat[pos]
        loss -= float(np.sum(np.log(np.clip(m, eps, 1.0 - eps))))
        live = (m > eps) & (m < 1.0 - eps)
        np.add.at(grad, pos[live], -1.0 / m[live])

    neg = _bag_argmax(flat, *bags.index_matrix(NEGATIVE))
    if neg.size:
        m = flat[neg]
        loss -= float(np.sum(np.log(1.0 - np.clip(m, eps, 1.0 - eps))))
        live = (m > eps) & (m < 1.0 - eps)
        np.add.at(grad, neg[live], 1.0 / (1.0 - m[live]))

    grad = grad.reshape(s.shape)
    if cfg.smooth_weight:
        phi, gphi = _smooth(s.data, bags.pixel_mask)
        loss += cfg.smooth_weight * phi
        grad += cfg.smooth_weight * gphi
    return ops.record(np.asarray(loss), "mil_loss", (s,), lambda g: (float(g) * grad,))


def pixel_loss(mask, s_a: Tensor, s_t: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean binary cross-entropy of the blend ``alpha*s_a + (1-alpha)*s_t`` against ``mask``."""
    m = np.asarray(mask, dtype=np.float64)
    if not (m.shape == s_a.shape == s_t.shape):
        raise ValueError(f"pixel_loss: shape mismatch mask {m.shape}, s_a {s_a.shape}, s_t {s_t.shape}")
    eps, a = cfg.clamp_eps, cfg.alpha
    blend = a * s_a.data + (1.0 - a) * s_t.data
    b = np.clip(blend, eps, 1.0 - eps)
    n = b.size
    loss = -float(np.sum(m * np.log(b) + (1.0 - m) * np.log(1.0 - b))) / n
    live = (blend > eps) & (blend < 1.0 - eps)
    gb = np.where(live, (-m / b + (1.0 - m) / (1.0 - b)) / n, 0.0)
    return ops.record(np.asarray(loss), "pixel_loss", (s_a, s_t),
                    lambda g: (float(g) * a * gb, float(g) * (1.0 - a) * gb))


def total_loss(sample_kind: str, mil, pix=None):
    """Per-sample loss: the pixel term is added only for salient samples."""
    if sample_kind == WEAK:
        if pix is not None:
            raise ValueError("total_loss: a weak sample cannot carry a pixel loss")
        return mil
    if sample_kind == SALIENT:
        if pix is None:
            raise ValueError("total_loss: a salient sample needs a pixel loss")
        return mil + pix
    raise ValueError(f"total_loss: unknown sample kind {sample_kind!r}")


def batch_loss(per_sample: Sequence) -> Tensor:
    if not per_sample:
        raise ValueError("batch_loss: empty batch")
    return ops.mean(ops.stack(list(per_sample)))

