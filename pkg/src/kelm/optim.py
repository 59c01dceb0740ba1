"""Adaptive-gradient optimizers with decoupled weight decay.

``AdamW`` owns a named parameter dict; moment buffers are keyed by parameter
name so the full optimizer state can round-trip through checkpoints
bit-exactly. Weight decay is applied only to matrix-shaped weights (biases,
gains and embedding-free vectors are excluded), the usual transformer recipe.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .autodiff import Tensor
from .errors import UsageError


def linear_warmup_decay(step: int, warmup: int, total: int) -> float:
    """Scale factor: linear 0->1 over ``warmup`` steps, then linear decay to 0."""
    if total <= 0:
        return 1.0
    if warmup > 0 and step < warmup:
        return step / warmup
    if total <= warmup:
        return 1.0
    return max(0.0, (total - step) / (total - warmup))


class AdamW:
    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 5e-5,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        warmup_steps: int = 0,
        total_steps: int = 0,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def current_lr(self) -> float:
        # Schedule is evaluated at the upcoming step (1-based).
        return self.lr * linear_warmup_decay(
            self.step_count + 1, self.warmup_steps, self.total_steps
        )

    def step(self) -> None:
        lr_t = self.current_lr()
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            update = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= (lr_t * update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- checkpoint support --------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"opt/m/{name}"] = self._m[name]
            out[f"opt/v/{name}"] = self._v[name]
        return out

    def load_state(self, arrays: Dict[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params.items():
            mk, vk = f"opt/m/{name}", f"opt/v/{name}"
            if mk not in arrays or vk not in arrays:
                raise UsageError(f"optimizer state missing for parameter {name!r}")
            if arrays[mk].shape != p.data.shape:
                raise UsageError(f"optimizer state shape mismatch for {name!r}")
            self._m[name] = arrays[mk].astype(p.data.dtype).copy()
            self._v[name] = arrays[vk].astype(p.data.dtype).copy()
        self.step_count = int(step_count)


class Adam(AdamW):
    """Plain Adam: AdamW with decay and schedule disabled."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(
            params, lr=lr, betas=betas, eps=eps, weight_decay=0.0,
            warmup_steps=0, total_steps=0,
        )
