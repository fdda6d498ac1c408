"""Joint training of the weak, salient and transferred heads.

Each batch mixes box-annotated (weak) and mask-annotated (salient) samples.
Weak samples feed the weak head and its MIL loss only. Salient samples feed
the weak head (MIL on the tight box of their mask) and also the salient and
transferred heads through the blended pixel loss. ``mil_only`` mode is the
baseline that drops the pixel term and freezes everything it would train.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augment import Rng, salient_augment, scaled_size, weak_augment, TRAIN_SIZE
from .bags import build_bags
from .diffcore import Graph, NonFiniteError, Tensor, ops
from .fileio import ManifestError, image_pixels, instance_mask, load_manifest
from .geometry import Box
from .heads import Model, head_forward
from .losses import SALIENT, WEAK, LossConfig, batch_loss, mil_loss, pixel_loss, total_loss
from .metrics import InstanceRecord, iou_at_k, miou_star
from .proxymask import predict_proxies
from .sampler import Batch, SamplerConfig, plan_epoch

JOINT = "joint"
MIL_ONLY = "mil_only"
_FROZEN_IN_MIL_ONLY = ("salient.", "mlp.")


class NonFiniteLoss(NonFiniteError):
    """Training produced a NaN/Inf; ``sample_id`` names the offending sample."""

    def __init__(self, message: str, sample_id: Optional[str] = None):
        super().__init__(message)
        self.sample_id = sample_id


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    lr: float = 4e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    mode: str = JOINT
    seed: int = 0
    patch_size: int = TRAIN_SIZE
    clip_norm: Optional[float] = None
    head_lr_scale: float = 1.0
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    sampler_cfg: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.mode not in (JOINT, MIL_ONLY):
            raise ValueError(f"mode must be '{JOINT}' or '{MIL_ONLY}', got {self.mode!r}")
        if self.patch_size < 8:
            raise ValueError(f"patch_size must be >= 8, got {self.patch_size}")

    @property
    def salient_resize(self) -> int:
        return scaled_size(self.patch_size)

    @property
    def proxy_size(self) -> int:
        return scaled_size(self.patch_size)

    @property
    def predictor_alpha(self) -> Optional[float]:
        """Validation predictor: the salient/transferred blend, or the weak head in mil_only."""
        return self.loss_cfg.alpha if self.mode == JOINT else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss_cfg", {}))
        sampler = SamplerConfig(**d.pop("sampler_cfg", {}))
        return cls(loss_cfg=loss, sampler_cfg=sampler, **d)


# ---------------------------------------------------------------- data

@dataclass
class Sample:
    kind: str
    sample_id: str
    pixels: np.ndarray
    box: Box
    mask: Optional[np.ndarray] = None


@dataclass
class TrainData:
    """In-memory training sources: one weak entry per box, one salient entry per image."""

    weak: list      # (instance id, image, Box)
    salient: list   # (image id, image, mask)


@dataclass
class ValData:
    images: list    # (image id, image, [Box], [mask], [class])

    @property
    def instance_count(self) -> int:
        return sum(len(b) for _, _, b, _, _ in self.images)


def load_weak(path) -> list:
    doc = load_manifest(path)
    out = []
    for img in doc["images"]:
        pixels = image_pixels(doc, img)
        for inst in img["instances"]:
            out.append((inst["id"], pixels, Box.from_list(inst["box"])))
    return out


def load_salient(path) -> list:
    doc = load_manifest(path)
    out = []
    for img in doc["images"]:
        if len(img["instances"]) != 1:
            raise ManifestError(f"{path}: salient image {img['id']} must hold exactly one instance")
        out.append((img["id"], image_pixels(doc, img), instance_mask(doc, img["instances"][0])))
    return out


def load_val(path) -> ValData:
    doc = load_manifest(path)
    images = []
    for img in doc["images"]:
        insts = img["instances"]
        images.append((img["id"], image_pixels(doc, img), [Box.from_list(i["box"]) for i in insts],
                       [instance_mask(doc, i) for i in insts], [i["class"] for i in insts]))
    return ValData(images)


@lru_cache(maxsize=4096)
def _bags(box: Box, size: int):
    return build_bags(box, size, size)


def make_samples(batch: Batch, data: TrainData, cfg: TrainConfig, epoch: int, step: int) -> list:
    """Augmented patches for one planned batch; each slot has its own child generator."""
    size = cfg.patch_size
    out = []
    for slot, i in enumerate(batch.weak):
        sid, image, box = data.weak[i]
        patch = weak_augment(image, box, Rng([cfg.seed, epoch, step, 0, slot]), size)
        out.append(Sample(WEAK, sid, patch.pixels, patch.box))
    for slot, i in enumerate(batch.salient):
        sid, image, mask = data.salient[i]
        patch = salient_augment(image, mask, Rng([cfg.seed, epoch, step, 1, slot]), size,
                                cfg.salient_resize)
        out.append(Sample(SALIENT, sid, patch.pixels, patch.box, patch.mask))
    return out


# ---------------------------------------------------------------- objective

@dataclass
class StepStats:
    loss: float
    mil: list
    pix: list


def _sample_losses(model: Model, samples: Sequence[Sample], cfg: TrainConfig,
                   counters: Optional[Counter]) -> tuple:
    size = samples[0].pixels.shape[-1]
    pixels = np.stack([s.pixels for s in samples])
    feats = model.features(pixels)
    s_w = head_forward(feats, model.weak, size, size)
    sal = [i for i, s in enumerate(samples) if s.kind == SALIENT]
    joint = cfg.mode == JOINT and sal
    if joint:
        sal_feats = ops.index(feats, np.asarray(sal))
        s_a = head_forward(sal_feats, model.salient, size, size)
        s_t = head_forward(sal_feats, model.transferred(), size, size)
    per_sample, mils, pixs = [], [], []
    for i, s in enumerate(samples):
        mil = mil_loss(ops.index(s_w, i), _bags(s.box, size), cfg.loss_cfg)
        mils.append(mil)
        if counters is not None:
            counters[f"mil_{s.kind}"] += 1
        pix = None
        if joint and s.kind == SALIENT:
            j = sal.index(i)
            pix = pixel_loss(s.mask, ops.index(s_a, j), ops.index(s_t, j), cfg.loss_cfg)
            pixs.append(pix)
            if counters is not None:
                counters[f"pix_{s.kind}"] += 1
        if s.kind == SALIENT and pix is None:
            per_sample.append(mil)  # mil_only: the pixel term is switched off entirely
        else:
            per_sample.append(total_loss(s.kind, mil, pix))
    return batch_loss(per_sample), mils, pixs


def batch_objective(model: Model, samples: Sequence[Sample], cfg: TrainConfig,
                    counters: Optional[Counter] = None) -> tuple:
    """Scalar batch loss Tensor plus per-sample MIL and pixel loss values.

    A non-finite value is traced back to the first sample that produces it
    on its own, and reported as :class:`NonFiniteLoss`.
    """
    if not samples:
        raise ValueError("batch_objective: empty batch")
    try:
        loss, mils, pixs = _sample_losses(model, samples, cfg, counters)
    except NonFiniteError as exc:
        for s in samples:
            try:
                _sample_losses(model, [s], cfg, None)
            except NonFiniteError:
                raise NonFiniteLoss(f"non-finite loss on {s.kind} sample {s.sample_id}: {exc}",
                                    s.sample_id) from None
        raise NonFiniteLoss(f"non-finite batch loss: {exc}") from None
    return loss, StepStats(loss.item(), [m.item() for m in mils], [p.item() for p in pixs])


def transfer_leaks(model: Model) -> list:
    """Names of weak-head parameters reachable from the transferred head's graph (should be none)."""
    transferred = model.transferred()
    reach = set()
    for t in transferred.tensors():
        reach.update(id(x) for x in Graph.trace(t).tensors)
    return [name for name, p in model.weak.named("weak").items() if id(p) in reach]


# ---------------------------------------------------------------- optimiser

def _is_bias(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf.endswith("_b") or leaf.startswith("b")


class SGD:
    """Momentum SGD: ``v = mu*v + g + wd*w``; ``w -= lr*v``. Decay skips biases."""

    def __init__(self, params: dict, lr: float, momentum: float, weight_decay: float,
                 frozen: Sequence[str] = (), clip_norm: Optional[float] = None,
                 lr_scale: Optional[dict] = None):
        self.params = params
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.frozen = set(frozen)
        self.clip_norm = clip_norm
        self.lr_scale = lr_scale or {}
        self.velocity = {k: np.zeros(p.shape) for k, p in params.items() if k not in self.frozen}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, v in self.velocity.items():
            p = self.params[name]
            g = p.grad
            scale = 1.0
            if g is not None:
                norm = float(np.sqrt(np.vdot(g, g)))
                if not np.isfinite(norm):
                    raise NonFiniteLoss(f"non-finite gradient for parameter {name}")
                if self.clip_norm is not None and norm > self.clip_norm:
                    scale = self.clip_norm / norm
            v *= self.momentum
            if g is not None:
                v += g if scale == 1.0 else scale * g
            if self.weight_decay and not _is_bias(name):
                v += self.weight_decay * p.data
            p.data -= (self.lr * self.lr_scale.get(name.split(".", 1)[0], 1.0)) * v


def make_optimizer(model: Model, cfg: TrainConfig) -> SGD:
    params = model.parameters()
    frozen = [k for k in params if cfg.mode == MIL_ONLY and k.startswith(_FROZEN_IN_MIL_ONLY)]
    scale = {"salient": cfg.head_lr_scale, "mlp": cfg.head_lr_scale}
    return SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay, frozen, cfg.clip_norm, scale)


def train_step(model: Model, opt: SGD, samples: Sequence[Sample], cfg: TrainConfig,
               counters: Optional[Counter] = None) -> StepStats:
    """One forward/backward/update on a prepared batch; returns the pre-update loss."""
    opt.zero_grad()
    loss, stats = batch_objective(model, samples, cfg, counters)
    loss.backward()
    opt.step()
    return stats


# ---------------------------------------------------------------- validation and loop

def validate(model: Model, val: ValData, alpha: Optional[float], size: int) -> list:
    """Per-instance proxy predictions on held-out images, as metric records."""
    records = []
    for image_id, image, boxes, masks, classes in val.images:
        preds = predict_proxies(image, boxes, model, alpha, size)
        for pred, gt, cls in zip(preds, masks, classes):
            records.append(InstanceRecord(cls, gt, pred, 1.0, image_id))
    return records


def _val_summary(records) -> dict:
    if not records:
        return {"val_miou_star": None, "val_iou50": None, "val_iou75": None}
    return {"val_miou_star": miou_star(records), "val_iou50": iou_at_k(records, 0.5),
            "val_iou75": iou_at_k(records, 0.75)}


@dataclass
class TrainResult:
    model: Model
    log: list
    counters: Counter


def train(data: TrainData, cfg: TrainConfig, val: Optional[ValData] = None,
          checkpoint=None, log_path=None, model: Optional[Model] = None) -> TrainResult:
    """Run ``cfg.epochs`` planned epochs; log one JSON record per epoch (epoch 0 = init)."""
    model = model or Model.init(cfg.seed)
    opt = make_optimizer(model, cfg)
    counters: Counter = Counter()
    log = []

    def record(epoch, mil, pix):
        rec = {"epoch": epoch, "mean_mil": mil, "mean_pix": pix}
        rec.update(_val_summary(validate(model, val, cfg.predictor_alpha, cfg.proxy_size) if val else []))
        log.append(rec)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    if log_path is not None:
        Path(log_path).write_text("")
    record(0, None, None)
    for epoch in range(1, cfg.epochs + 1):
        plan = plan_epoch(len(data.weak), len(data.salient), cfg.sampler_cfg, epoch)
        mils, pixs = [], []
        for step, batch in enumerate(plan.batches):
            samples = make_samples(batch, data, cfg, epoch, step)
            stats = train_step(model, opt, samples, cfg, counters)
            mils += stats.mil
            pixs += stats.pix
        record(epoch, float(np.mean(mils)), float(np.mean(pixs)) if pixs else None)
    if checkpoint is not None:
        model.save(checkpoint)
    return TrainResult(model, log, counters)
