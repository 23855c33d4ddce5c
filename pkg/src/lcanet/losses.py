"""Classification objectives: negative log-likelihood, prediction entropy,
and their weighted combination.

The combined loss is NLL − λ·H. Minimizing it trades likelihood against
keeping the predictive distribution spread out; λ=0 recovers plain NLL.
Entropy is computed from log-probabilities for stability, with the 0·log 0
convention resolved to 0 so exact zeros in a hand-built distribution are
legal inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .tensor import _record  # intra-package: registering two bespoke adjoints


@dataclass(frozen=True)
class LossConfig:
    lambda_entropy: float = 0.1

    def __post_init__(self):
        lam = self.lambda_entropy
        if not np.isfinite(lam) or lam < 0:
            raise ValueError(f"lambda_entropy must be finite and >= 0, got {lam}")


def nll_loss(logp: Tensor, targets) -> Tensor:
    """Mean over the batch of −logp[i, target_i]."""
    if logp.ndim != 2:
        raise ShapeError(f"nll_loss expects [B,K] log-probs, got {logp.shape}")
    b, k = logp.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (b,):
        raise ShapeError(f"targets shape {targets.shape} does not match batch {b}")
    if targets.min() < 0 or targets.max() >= k:
        raise IndexError(f"target out of range [0,{k}): {targets.min()}..{targets.max()}")

    rows = np.arange(b)
    out = -logp.data[rows, targets].mean()

    def grad_fn(g):
        gx = np.zeros_like(logp.data)
        gx[rows, targets] = -g / b
        return (gx,)

    return _record("nll", np.asarray(out, dtype=logp.dtype), (logp,), grad_fn)


def entropy(logp: Tensor) -> Tensor:
    """Mean over the batch of H = −Σ_k p_k·log p_k, with 0·log 0 := 0."""
    if logp.ndim != 2:
        raise ShapeError(f"entropy expects [B,K] log-probs, got {logp.shape}")
    b = logp.shape[0]
    p = np.exp(logp.data)
    # logp = -inf at p = 0 would make the discarded branch of np.where
    # evaluate 0 * inf; errstate keeps that expected case silent.
    with np.errstate(invalid="ignore"):
        plogp = np.where(p > 0, p * logp.data, 0.0)
    out = -plogp.sum(axis=1).mean()

    def grad_fn(g):
        # d(−p·logp)/dl = −e^l·(l + 1); the p=0 branch is constant 0.
        with np.errstate(invalid="ignore"):
            gx = np.where(p > 0, -p * (logp.data + 1.0), 0.0) * (g / b)
        return (gx.astype(logp.dtype, copy=False),)

    return _record("entropy", np.asarray(out, dtype=logp.dtype), (logp,), grad_fn)


def max_entropy_loss(logits: Tensor, targets, cfg: LossConfig) -> Tensor:
    """NLL − λ·entropy, both taken over log_softmax(logits)."""
    logp = T.log_softmax(logits)
    loss = nll_loss(logp, targets)
    if cfg.lambda_entropy != 0.0:
        loss = T.sub(loss, T.scale(entropy(logp), cfg.lambda_entropy))
    return loss
