"""Local-concepts accumulation head.

Given a feature map of shape [B, C, H, W], every rectangular pooling kernel
other than 1x1 is slid over the map at stride 1. Each spatial position of
each pooled map is one C-dimensional local-concept vector; all of them pass
through one shared linear embedding followed by ReLU, and the head's output
is the arithmetic mean of every embedded vector. The channel count is
preserved by pooling, so every concept vector has exactly C entries no
matter which kernel produced it.

Kernels are processed one at a time so peak memory stays at O(C*H*W) per
kernel, and the accumulation order is fixed (kh-major, then kw), which keeps
results bit-stable run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class EmptyKernelError(ValueError):
    """A 1x1 feature map admits no pooling kernel larger than 1x1."""


@dataclass(frozen=True)
class LcaConfig:
    in_channels: int
    embed_dim: int
    include_one_by_k: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.embed_dim < 1:
            raise ValueError(
                f"in_channels ({self.in_channels}) and embed_dim "
                f"({self.embed_dim}) must be >= 1"
            )


@dataclass
class LcaParams:
    fc_weight: Tensor  # [D, C], shared across every concept vector
    fc_bias: Tensor  # [D]


def enumerate_kernels(h: int, w: int, cfg: LcaConfig) -> list[tuple[int, int]]:
    """All pooling kernel sizes for an HxW map, kh-major, excluding 1x1."""
    if h < 1 or w < 1:
        raise ShapeError(f"feature map extent {h}x{w} is empty")
    if h * w < 2:
        raise EmptyKernelError("1x1 feature map has no kernels larger than 1x1")
    lo = 1 if cfg.include_one_by_k else 2
    kernels = [
        (kh, kw)
        for kh in range(lo, h + 1)
        for kw in range(lo, w + 1)
        if (kh, kw) != (1, 1)
    ]
    if not kernels:
        # Reachable when include_one_by_k=false on a single-row/column map.
        raise EmptyKernelError(f"no admissible kernels for a {h}x{w} map")
    return kernels


def concept_count(h: int, w: int, cfg: LcaConfig) -> int:
    """Total stride-1 window positions over all enumerated kernels."""
    total = 0
    for kh, kw in enumerate_kernels(h, w, cfg):
        total += (h - kh + 1) * (w - kw + 1)
    return total


def lca_param_init(cfg: LcaConfig, rng) -> LcaParams:
    """Glorot-uniform weight, zero bias; deterministic given the rng state."""
    s = float(np.sqrt(6.0 / (cfg.in_channels + cfg.embed_dim)))
    w = rng.uniform_array((cfg.embed_dim, cfg.in_channels), -s, s)
    return LcaParams(
        fc_weight=T.Parameter("fc_weight", w),
        fc_bias=T.Parameter("fc_bias", np.zeros(cfg.embed_dim, dtype=np.float32)),
    )


def concept_vectors(featmap: np.ndarray, cfg: LcaConfig) -> np.ndarray:
    """Materialize every raw local-concept vector as an array [B, P, C].

    Reference-path companion to lca_forward: same kernels, same ordering,
    no embedding. Intended for verification and demonstration, not training
    (it holds all P vectors at once).
    """
    b, c, h, w = featmap.shape
    if c != cfg.in_channels:
        raise ShapeError(f"feature map has {c} channels, config says {cfg.in_channels}")
    chunks = []
    for kh, kw in enumerate_kernels(h, w, cfg):
        win = np.lib.stride_tricks.sliding_window_view(featmap, (kh, kw), axis=(2, 3))
        pooled = win.mean(axis=(-2, -1))  # [B, C, H', W']
        chunks.append(pooled.transpose(0, 2, 3, 1).reshape(b, -1, c))
    return np.concatenate(chunks, axis=1)


def lca_forward(featmap: Tensor, params: LcaParams, cfg: LcaConfig) -> Tensor:
    """Embed every local-concept vector and average: [B,C,H,W] -> [B,D]."""
    if featmap.ndim != 4:
        raise ShapeError(f"lca_forward expects a 4-D feature map, got {featmap.shape}")
    b, c, h, w = featmap.shape
    if c != cfg.in_channels:
        raise ShapeError(f"feature map has {c} channels, config says {cfg.in_channels}")

    kernels = enumerate_kernels(h, w, cfg)
    wt = T.transpose(params.fc_weight)  # [C, D]
    total = None
    positions = 0
    for kh, kw in kernels:
        pooled = T.avgpool2d(featmap, kh, kw, stride=1)  # [B, C, H', W']
        hp, wp = pooled.shape[2], pooled.shape[3]
        vecs = T.reshape(T.transpose(pooled, (0, 2, 3, 1)), (b * hp * wp, c))
        emb = T.relu(T.add(T.matmul(vecs, wt), params.fc_bias))  # [B*H'*W', D]
        ksum = T.tensor_sum(T.reshape(emb, (b, hp * wp, cfg.embed_dim)), axis=1)
        total = ksum if total is None else T.add(total, ksum)
        positions += hp * wp

    expected = concept_count(h, w, cfg)
    assert positions == expected, f"materialized {positions} concepts, expected {expected}"
    return T.scale(total, 1.0 / positions)
