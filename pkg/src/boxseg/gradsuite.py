"""Finite-difference checks of every trainable path: MIL loss, pixel loss, and a
complete batch objective over a freshly initialised model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bags import build_bags
from .diffcore import Tensor, gradcheck, ops
from .geometry import Box
from .heads import HeadParams, Model, weight_transfer
from .losses import SALIENT, WEAK, LossConfig, mil_loss, pixel_loss
from .trainer import Sample, TrainConfig, batch_objective

TOLERANCE = 1e-4
RESOLUTION = 2e4  # required ratio of |gradient| to the roundoff floor
PATCH = 16


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _random_box(rng: np.random.Generator, size: int) -> Box:
    w, h = (int(v) for v in rng.integers(3, size - 3, size=2))
    x, y = int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1))
    return Box(x, y, w, h)


def check_mil(seed: int, size: int = PATCH) -> CheckResult:
    rng = np.random.default_rng([seed, 0])
    logits = Tensor(rng.normal(0.0, 1.5, size=(size, size)))
    bags = build_bags(_random_box(rng, size), size, size)
    return _check("mil_loss", seed, lambda: mil_loss(ops.sigmoid(logits), bags), [logits], rng)


def check_pixel(seed: int, size: int = PATCH) -> CheckResult:
    rng = np.random.default_rng([seed, 1])
    za = Tensor(rng.normal(0.0, 1.5, size=(size, size)))
    zt = Tensor(rng.normal(0.0, 1.5, size=(size, size)))
    mask = rng.random((size, size)) < 0.5
    cfg = LossConfig()
    return _check("pixel_loss", seed, lambda: pixel_loss(mask, ops.sigmoid(za), ops.sigmoid(zt), cfg),
                  [za, zt], rng)


def random_samples(rng: np.random.Generator, size: int = PATCH, n_weak: int = 1,
                   n_salient: int = 1) -> list:
    out = []
    for i in range(n_weak + n_salient):
        box = _random_box(rng, size)
        kind = WEAK if i < n_weak else SALIENT
        mask = None
        if kind == SALIENT:
            mask = np.zeros((size, size), dtype=bool)
            mask[box.slices()] = rng.random((box.h, box.w)) < 0.7
        out.append(Sample(kind, f"{kind}{i}", rng.random((3, size, size)), box, mask))
    return out


def _resolvable(params: list, f, rng: np.random.Generator, eps: float,
                per_tensor: Optional[int] = None) -> list:
    """Coordinates whose analytic gradient stands clear of finite-difference roundoff.

    A central difference of an objective of magnitude ``|f|`` carries an
    absolute error of roughly ``|f| * 1e-16 / eps``; coordinates with smaller
    true gradients only measure that noise, so they are not checked.
    ``per_tensor`` subsamples the surviving coordinates of each tensor.
    """
    for p in params:
        p.requires_grad, p.grad = True, None
    out = f()
    out.backward()
    floor = RESOLUTION * abs(out.item()) * 1e-16 / eps
    coords = []
    for p in params:
        g = np.zeros(p.size) if p.grad is None else np.abs(p.grad).reshape(-1)
        ok = np.flatnonzero(g >= floor)
        if per_tensor is not None:
            ok = rng.choice(ok, size=min(per_tensor, ok.size), replace=False)
        coords.append(ok.tolist())
        p.grad = None
    return coords


def _check(name: str, seed: int, f, params: list, rng, eps: float = 1e-6, per_tensor=None) -> CheckResult:
    coords = _resolvable(params, f, rng, eps, per_tensor)
    return CheckResult(name, seed, gradcheck(f, params, eps, coords))


def check_objective(seed: int, size: int = PATCH, per_tensor: int = 2, eps: float = 1e-6) -> CheckResult:
    """Full batch objective of one weak and one salient sample, every parameter tensor.

    The transfer MLP's output layer gets random weights so that all of its
    parameters carry gradient (it starts at zero in a real run). The MLP reads
    a frozen copy of the weak head: the analytic gradient stops at that input
    by design, so the finite differences must not see through it either.
    """
    rng = np.random.default_rng([seed, 2])
    model = Model.init(seed)
    model.mlp.w2.data = rng.normal(0.0, 0.05, size=model.mlp.w2.shape)
    source = HeadParams(*(Tensor(t.data.copy()) for t in model.weak.tensors()))
    model.transferred = lambda: weight_transfer(source, model.mlp)
    samples = random_samples(rng, size)
    cfg = TrainConfig(patch_size=size)

    def f():
        return batch_objective(model, samples, cfg)[0]

    return _check("train_step", seed, f, list(model.parameters().values()), rng, eps, per_tensor)


def run_suite(seeds=range(20), size: int = PATCH) -> list:
    results = []
    for s in seeds:
        results += [check_mil(s, size), check_pixel(s, size), check_objective(s, size)]
    return results
