"""Toy convolutional backbone, the three segmentation heads, and the transfer MLP.

All three heads share one architecture (3x3 conv, 3x3 conv, 1x1 projection)
and differ only in parameters. The transferred head has no parameters of its
own: they are produced from the *detached* weak-head parameters by a two-layer
leaky-ReLU MLP, so gradients reach the MLP but never the weak head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .diffcore import Tensor, load_tensors, ops, save_tensors

SLOPE = 0.01
BACKBONE_CHANNELS = (16, 32, 32, 16)
BACKBONE_STRIDES = (1, 2, 2, 1)


def _he(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


@dataclass
class HeadParams:
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    conv3_w: Tensor
    conv3_b: Tensor

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[1]

    def tensors(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def shapes(channels: int) -> list:
        c = channels
        return [(c, c, 3, 3), (c,), (c, c, 3, 3), (c,), (1, c, 1, 1), (1,)]

    @classmethod
    def size_for(cls, channels: int) -> int:
        return sum(int(np.prod(s)) for s in cls.shapes(channels))

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "HeadParams":
        arrays = [_he(rng, s) if len(s) == 4 else np.zeros(s) for s in cls.shapes(channels)]
        return cls(*(Tensor(a, requires_grad=True) for a in arrays))

    @classmethod
    def zeros(cls, channels: int) -> "HeadParams":
        return cls(*(Tensor(np.zeros(s), requires_grad=True) for s in cls.shapes(channels)))

    def flatten(self) -> Tensor:
        return ops.concat(self.tensors())

    @classmethod
    def unflatten(cls, vec: Tensor, channels: int) -> "HeadParams":
        if vec.shape != (cls.size_for(channels),):
            raise ValueError(f"unflatten: vector of shape {vec.shape} does not fit a "
                             f"{channels}-channel head ({cls.size_for(channels)} values)")
        parts, start = [], 0
        for s in cls.shapes(channels):
            n = int(np.prod(s))
            parts.append(ops.reshape(ops.index(vec, slice(start, start + n)), s))
            start += n
        return cls(*parts)


@dataclass
class BackboneParams:
    weights: list
    biases: list
    strides: tuple = BACKBONE_STRIDES

    @classmethod
    def init(cls, rng: np.random.Generator, in_channels: int = 3,
             channels: tuple = BACKBONE_CHANNELS) -> "BackboneParams":
        ws, bs, c_in = [], [], in_channels
        for c_out in channels:
            ws.append(Tensor(_he(rng, (c_out, c_in, 3, 3)), requires_grad=True))
            bs.append(Tensor(np.zeros(c_out), requires_grad=True))
            c_in = c_out
        return cls(ws, bs)

    @property
    def out_channels(self) -> int:
        return self.weights[-1].shape[0]

    def named(self, prefix: str) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.conv{i + 1}_w"] = w
            out[f"{prefix}.conv{i + 1}_b"] = b
        return out


@dataclass
class TransferMLP:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    slope: float = SLOPE

    @staticmethod
    def hidden_for(dim: int) -> int:
        return max(64, math.ceil(dim / 4))

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "TransferMLP":
        """He-initialised first layer, zero second-layer weights.

        ``b2`` starts at a fresh head initialisation whose 1x1 projection is
        zero: the transferred head then outputs exactly 0.5 at step 0 while its
        inner convolutions are non-degenerate (an all-zero head is a saddle
        where only the final bias would ever receive gradient).
        """
        d = HeadParams.size_for(channels)
        hidden = cls.hidden_for(d)
        start = HeadParams.init(channels, rng)
        start.conv3_w.data[...] = 0.0
        b2 = start.flatten().data
        return cls(Tensor(_he(rng, (hidden, d)), requires_grad=True),
                   Tensor(np.zeros(hidden), requires_grad=True),
                   Tensor(np.zeros((d, hidden)), requires_grad=True),
                   Tensor(b2, requires_grad=True))

    @classmethod
    def zeros(cls, channels: int) -> "TransferMLP":
        d = HeadParams.size_for(channels)
        hidden = cls.hidden_for(d)
        return cls(*(Tensor(np.zeros(s), requires_grad=True)
                     for s in ((hidden, d), (hidden,), (d, hidden), (d,))))

    def tensors(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


def backbone_forward(x: Tensor, params: BackboneParams, slope: float = SLOPE) -> Tensor:
    """Encoder over ``[N,3,H,W]`` (or ``[3,H,W]``) pixels in [0, 1]; output is 1/4 resolution."""
    h = ops.add(x, -0.5)
    for w, b, s in zip(params.weights, params.biases, params.strides):
        h = ops.leaky_relu(ops.conv2d(h, w, b, stride=s, pad=1), slope)
    return h


def head_forward(features: Tensor, params: HeadParams, out_h: int, out_w: int,
                 slope: float = SLOPE) -> Tensor:
    """Probability map ``[out_h, out_w]`` (or ``[N, out_h, out_w]`` for batched features)."""
    if features.ndim not in (3, 4):
        raise ValueError(f"head_forward: features must be [C,h,w] or [N,C,h,w], got {features.shape}")
    if features.shape[-3] != params.channels:
        raise ValueError(f"head_forward: features carry {features.shape[-3]} channels, "
                         f"head expects {params.channels}")
    h = ops.leaky_relu(ops.conv2d(features, params.conv1_w, params.conv1_b, 1, 1), slope)
    h = ops.leaky_relu(ops.conv2d(h, params.conv2_w, params.conv2_b, 1, 1), slope)
    logits = ops.conv2d(h, params.conv3_w, params.conv3_b, 1, 0)
    logits = ops.reshape(logits, logits.shape[:-3] + logits.shape[-2:])
    return ops.sigmoid(ops.upsample_bilinear(logits, out_h, out_w))


def weight_transfer(weak: HeadParams, mlp: TransferMLP) -> HeadParams:
    """Map detached weak-head parameters to transferred-head parameters."""
    flat = ops.concat([t.detach() for t in weak.tensors()])
    if flat.shape[0] != mlp.w1.shape[1]:
        raise ValueError(f"weight_transfer: weak head has {flat.shape[0]} parameters, "
                         f"MLP expects {mlp.w1.shape[1]}")
    hidden = ops.leaky_relu(ops.linear(flat, mlp.w1, mlp.b1), mlp.slope)
    out = ops.linear(hidden, mlp.w2, mlp.b2)
    return HeadParams.unflatten(out, weak.channels)


class Model:
    """Backbone + weak, salient and transfer-MLP parameters."""

    def __init__(self, backbone: BackboneParams, weak: HeadParams, salient: HeadParams,
                 mlp: TransferMLP):
        self.backbone = backbone
        self.weak = weak
        self.salient = salient
        self.mlp = mlp

    @classmethod
    def init(cls, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        backbone = BackboneParams.init(rng)
        c = backbone.out_channels
        return cls(backbone, HeadParams.init(c, rng), HeadParams.init(c, rng), TransferMLP.init(c, rng))

    def parameters(self) -> dict:
        out = {}
        out.update(self.backbone.named("backbone"))
        out.update(self.weak.named("weak"))
        out.update(self.salient.named("salient"))
        out.update(self.mlp.named("mlp"))
        return out

    def features(self, pixels) -> Tensor:
        x = pixels if isinstance(pixels, Tensor) else Tensor.wrap(np.asarray(pixels, dtype=np.float64))
        return backbone_forward(x, self.backbone)

    def transferred(self) -> HeadParams:
        return weight_transfer(self.weak, self.mlp)

    def predict(self, pixels: np.ndarray, alpha: Optional[float] = 0.7) -> np.ndarray:
        """Score maps for a batch ``[N,3,H,W]``; ``alpha=None`` uses the weak head alone."""
        pixels = np.asarray(pixels, dtype=np.float64)
        feats = self.features(pixels).detach()
        h, w = pixels.shape[-2:]
        if alpha is None:
            return head_forward(feats, self.weak, h, w).data
        s_a = head_forward(feats, self.salient, h, w).data
        s_t = head_forward(feats, self.transferred(), h, w).data
        return alpha * s_a + (1.0 - alpha) * s_t

    def save(self, path) -> None:
        save_tensors(path, {k: v.data for k, v in self.parameters().items()})

    @classmethod
    def load(cls, path) -> "Model":
        arrays = load_tensors(path)
        model = cls.init(0)
        params = model.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ValueError(f"{Path(path)}: checkpoint lacks {sorted(missing)[0]}")
        for name, t in params.items():
            if arrays[name].shape != t.shape:
                raise ValueError(f"{Path(path)}: {name} has shape {arrays[name].shape}, expected {t.shape}")
            t.data = arrays[name]
        return model
