"""SGD with classical (heavy-ball) momentum and a step learning-rate schedule.

Update rule, per parameter: v <- mu*v + g, then theta <- theta - lr*v.
No dampening, no Nesterov lookahead. Weight decay, when nonzero, is applied
as decoupled decay after the momentum step rather than folded into the
gradient. Gradients are zeroed once consumed.
"""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, Parameter


class SGD:
    def __init__(self, params, lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0, schedule=()):
        params = list(params)
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must be in [0,1), got {momentum}")
        for epoch, factor in schedule:
            if factor <= 0:
                raise ValueError(f"schedule factor at epoch {epoch} must be > 0")
        names = [p.name for p in params if isinstance(p, Parameter)]
        if len(names) != len(params) or len(set(names)) != len(names):
            raise ContractError("params must be uniquely named Parameters")
        self.params = params
        self.base_lr = float(lr)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.schedule = tuple((int(e), float(f)) for e, f in schedule)
        self.velocity = {p.name: np.zeros_like(p.data) for p in params}

    def step(self) -> None:
        """Apply one momentum update from the accumulated grads, then zero them."""
        mu, lr, wd = self.momentum, self.lr, self.weight_decay
        for p in self.params:
            v = self.velocity[p.name]
            if v.shape != p.data.shape:
                raise ContractError(
                    f"velocity shape {v.shape} != param {p.name} shape {p.data.shape}"
                )
            v *= mu
            v += p.grad
            p.data -= np.asarray(lr, dtype=p.dtype) * v
            if wd:
                p.data -= np.asarray(lr * wd, dtype=p.dtype) * p.data
            p.grad[...] = 0

    def apply_schedule(self, epoch: int) -> None:
        """lr = base_lr times every multiplier whose epoch has been reached."""
        lr = self.base_lr
        for at_epoch, factor in self.schedule:
            if epoch >= at_epoch:
                lr *= factor
        self.lr = lr
