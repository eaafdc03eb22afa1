from __future__ import annotations

import numpy as np

from sdgzsl.errors import ConfigError, NumericError
from sdgzsl.tensor.autodiff import Tensor


class Adam:
    """Adam with bias correction.

    ``params`` maps a stable name to a leaf tensor; moments are keyed by the
    same names so they can be checkpointed.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, group: str = "params"):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.group = group
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter group {self.group!r} ({name})")
            grads[name] = p.grad
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = arrays[f"m/{name}"].copy()
            self.v[name] = arrays[f"v/{name}"].copy()
        self.step_count = step_count


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: Adam) -> None:
    """Apply one Adam update with explicitly supplied gradients."""
    for name, g in grads.items():
        params[name].grad = g
    state.step()
