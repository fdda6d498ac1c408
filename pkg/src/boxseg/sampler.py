"""Mixed weak/salient batch planning with a fixed per-batch ratio.

An epoch walks the salient set exactly once; each batch is topped up with a
fixed number of weak samples drawn from a reshuffling stream. The ragged last
batch is padded with already-used salient ids, which are flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

FIXED = "fixed"
RANDOM = "rs"


@dataclass(frozen=True)
class SamplerConfig:
    weak_per_batch: int = 9
    salient_per_batch: int = 7
    seed: int = 0
    mode: str = FIXED

    def __post_init__(self):
        if self.weak_per_batch < 1 or self.salient_per_batch < 1:
            raise ValueError(f"ratio needs at least one sample of each kind, got "
                             f"{self.weak_per_batch}:{self.salient_per_batch}")
        if self.mode not in (FIXED, RANDOM):
            raise ValueError(f"unknown sampler mode {self.mode!r}")

    @property
    def batch_size(self) -> int:
        return self.weak_per_batch + self.salient_per_batch

    @classmethod
    def from_ratio(cls, ratio: str, seed: int = 0, mode: str = FIXED) -> "SamplerConfig":
        try:
            a, b = (int(v) for v in ratio.split(":"))
        except ValueError:
            raise ValueError(f"ratio must look like 'a:b', got {ratio!r}") from None
        return cls(a, b, seed, mode)


@dataclass
class Batch:
    weak: list
    salient: list
    padded: list = field(default_factory=list)  # salient ids re-drawn to fill the last batch


@dataclass
class EpochPlan:
    batches: list

    def to_json(self) -> str:
        return json.dumps({"batches": [asdict(b) for b in self.batches]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EpochPlan":
        return cls([Batch(**b) for b in json.loads(text)["batches"]])


class _Stream:
    """Shuffled ids served without replacement, reshuffled on exhaustion."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.queue: list = []

    def take(self, k: int) -> list:
        out = []
        while len(out) < k:
            if not self.queue:
                self.queue = self.rng.permutation(self.n).tolist()
            out.append(self.queue.pop())
        return out


def plan_epoch(n_weak: int, n_salient: int, cfg: SamplerConfig, epoch: int = 0) -> EpochPlan:
    a, b = cfg.weak_per_batch, cfg.salient_per_batch
    if n_salient < b or n_weak < a:
        raise ValueError(f"plan_epoch: need at least {a} weak and {b} salient samples, "
                         f"got {n_weak} and {n_salient}")
    rng = np.random.default_rng([cfg.seed, epoch])
    if cfg.mode == RANDOM:
        return _plan_random(n_weak, n_salient, cfg, rng)

    order = rng.permutation(n_salient).tolist()
    weak = _Stream(n_weak, rng)
    batches = []
    for i in range(math.ceil(n_salient / b)):
        sal = order[i * b:(i + 1) * b]
        pad = []
        if len(sal) < b:
            used = order[:i * b]
            pad = [used[j] for j in rng.choice(len(used), size=b - len(sal), replace=False)]
        batches.append(Batch(weak.take(a), sal + pad, pad))
    return EpochPlan(batches)


def _plan_random(n_weak: int, n_salient: int, cfg: SamplerConfig, rng) -> EpochPlan:
    """Baseline: uniform batches over the union, same batch count as the fixed plan."""
    size = cfg.batch_size
    n_batches = math.ceil(n_salient / cfg.salient_per_batch)
    union = _Stream(n_weak + n_salient, rng)
    batches = []
    for _ in range(n_batches):
        ids = union.take(size)
        batches.append(Batch([i for i in ids if i < n_weak], [i - n_weak for i in ids if i >= n_weak]))
    return EpochPlan(batches)
