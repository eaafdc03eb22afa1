"""Central-difference gradient checking for closures over leaf tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sdgzsl.errors import ContractError
from sdgzsl.tensor.autodiff import Tape, Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    eps: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name, err in sorted(self.errors.items()):
            flag = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:40s} {err:.3e} {flag}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def grad_check(closure, params: dict[str, Tensor], eps: float = 1e-5,
               tolerance: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of ``closure()`` with central differences.

    ``closure`` must rebuild the loss from scratch on every call and be
    deterministic (freeze any noise or dropout draws inside it).
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ContractError(f"grad_check needs 64-bit parameters; {name} is {p.data.dtype}")

    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = closure()
    tape.backward(loss)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for name, p in params.items()}

    report = GradCheckReport(tolerance=tolerance, eps=eps)
    for name, p in params.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = closure().item()
            flat[i] = orig - eps
            down = closure().item()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
        report.errors[name] = relative_error(analytic[name], numeric)
    for p in params.values():
        p.grad = None
    return report
