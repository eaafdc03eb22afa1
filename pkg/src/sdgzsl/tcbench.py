"""Density-ratio TC estimate against the closed form on correlated Gaussians.

The two halves ``h_s`` (l dims) and ``h_n`` (m dims) are standard normal;
coordinate ``i`` of ``h_s`` has correlation ``rho`` with coordinate ``i`` of
``h_n`` for ``i < min(l, m)`` and everything else is independent. The total
correlation of the joint is then ``-1/2 log det C`` with ``C`` the
correlation matrix, i.e. ``-min(l, m)/2 * log(1 - rho^2)``.

The estimate trains a discriminator on joint vs. permuted rows and reports the
mean log-odds on held-out joint rows. A linear discriminator cannot express
the Gaussian log density ratio (it is quadratic in h), so the benchmark uses
the quadratic-feature variant by default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from sdgzsl.errors import ConfigError
from sdgzsl.networks import Discriminator
from sdgzsl.objectives import discriminator_loss, permute_batch, tc_estimate
from sdgzsl.tensor import Adam, Rng, Tape, Tensor, concat, no_grad, precision


@dataclass
class TCBenchResult:
    rho: float
    dims: tuple[int, int]
    analytic: float
    estimate: float
    n_train: int
    n_eval: int
    steps: int

    @property
    def rel_error(self) -> float:
        if self.analytic == 0:
            return float("nan")
        return abs(self.estimate - self.analytic) / self.analytic

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["rel_error"] = self.rel_error
        return d


def correlation_matrix(rho: float, l: int, m: int) -> np.ndarray:
    c = np.eye(l + m)
    for i in range(min(l, m)):
        c[i, l + i] = c[l + i, i] = rho
    return c


def analytic_tc(rho: float, l: int, m: int) -> float:
    sign, logdet = np.linalg.slogdet(correlation_matrix(rho, l, m))
    if sign <= 0:
        raise ConfigError(f"rho={rho} does not give a valid correlation matrix")
    return -0.5 * logdet


def correlated_halves(n: int, l: int, m: int, rho: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    if not -1.0 < rho < 1.0:
        raise ConfigError(f"rho must lie in (-1, 1), got {rho}")
    h_s = rng.normal((n, l))
    h_n = rng.normal((n, m))
    k = min(l, m)
    h_n[:, :k] = rho * h_s[:, :k] + np.sqrt(1.0 - rho * rho) * h_n[:, :k]
    return h_s, h_n


def fit_discriminator(h_s: np.ndarray, h_n: np.ndarray, rng: Rng, steps: int = 1500, lr: float = 0.02,
                      batch_size: int = 4096, features: str = "quadratic", hidden=()) -> Discriminator:
    """Train Dis on joint rows (label 1) vs. freshly permuted rows (label 0).

    The learning rate decays linearly to zero so the minibatch noise in the
    final weights averages out.
    """
    l, m = h_s.shape[1], h_n.shape[1]
    Dis = Discriminator(l + m, None if not hidden else rng, hidden=hidden, features=features)
    opt = Adam(Dis.params(), lr=lr, group="Dis")
    n = h_s.shape[0]
    for step in range(steps):
        opt.lr = lr * (1.0 - step / steps)
        idx = rng.permutation(n)[:batch_size] if batch_size < n else np.arange(n)
        hs, hn = Tensor(h_s[idx]), Tensor(h_n[idx])
        with Tape() as tape:
            h_perm = permute_batch(hs, hn, rng)
            loss = discriminator_loss(concat([hs, hn]), h_perm, Dis)
        opt.zero_grad()
        tape.backward(loss)
        opt.step()
    return Dis


def run_tc_bench(rho: float, dims=(4, 4), n_train: int = 20000, n_eval: int = 20000, steps: int = 1500,
                 lr: float = 0.02, seed: int = 0, features: str = "quadratic") -> TCBenchResult:
    l, m = dims
    with precision("f64"):
        data_rng = Rng(seed, "tc-data")
        train_s, train_n = correlated_halves(n_train, l, m, rho, data_rng)
        eval_s, eval_n = correlated_halves(n_eval, l, m, rho, data_rng)
        Dis = fit_discriminator(train_s, train_n, Rng(seed, "tc-fit"), steps=steps, lr=lr, features=features)
        with no_grad():
            estimate = tc_estimate(Tensor(np.concatenate([eval_s, eval_n], axis=1)), Dis).item()
    return TCBenchResult(rho, (l, m), analytic_tc(rho, l, m), estimate, n_train, n_eval, steps)
