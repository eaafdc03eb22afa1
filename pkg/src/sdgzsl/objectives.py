"""Loss terms, the compatibility target, batch permutation and warm-up."""

from __future__ import annotations

import numpy as np

from sdgzsl.errors import DataError, NumericError, ShapeError
from sdgzsl.networks import Discriminator, ModelState, discriminate, generate, reparameterize
from sdgzsl.tensor import Rng, Tensor, concat, gather_rows, log, square


def _reduce(total: Tensor, batch: int, reduction: str) -> Tensor:
    return total if reduction == "sum" else total * (1.0 / batch)


def _same_shape(a: Tensor, b, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def compatibility_matrix(labels_batch, labels_unique) -> np.ndarray:
    """B x N_c matrix with 1 where the batch label equals the unique label."""
    labels_batch = np.asarray(labels_batch)
    labels_unique = np.asarray(labels_unique)
    missing = np.setdiff1d(labels_batch, labels_unique)
    if missing.size:
        raise DataError(f"batch labels {missing.tolist()} missing from the unique label set")
    return (labels_batch[:, None] == labels_unique[None, :]).astype(np.float64)


def relation_loss(scores: Tensor, target, reduction: str = "mean") -> Tensor:
    target = Tensor(target, dtype=scores.dtype)
    _same_shape(scores, target, "relation_loss")
    return _reduce(square(scores - target).sum(), scores.shape[0], reduction)


def reconstruction_loss(x, x_rec: Tensor, reduction: str = "mean") -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=x_rec.dtype)
    _same_shape(x, x_rec, "reconstruction_loss")
    return _reduce(square(x - x_rec).sum(), x.shape[0], reduction)


def kl_gaussian(mu: Tensor, sigma: Tensor, reduction: str = "mean") -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over latent dims."""
    _same_shape(mu, sigma, "kl_gaussian")
    if np.any(sigma.data <= 0):
        raise NumericError("kl_gaussian: sigma must be strictly positive")
    per_entry = square(mu) + square(sigma) - 2.0 * log(sigma) - 1.0
    return _reduce(per_entry.sum() * 0.5, mu.shape[0], reduction)


def cvae_loss(x: Tensor, a: Tensor, model: ModelState, rng: Rng | None, kl_weight: float,
              training: bool = True, eps=None, reduction: str = "mean",
              dropout_rng: Rng | None = None) -> tuple[Tensor, Tensor]:
    """Reconstruction + weighted KL of the conditional VAE; also returns x_hat.

    ``rng`` draws the reparameterisation noise unless ``eps`` fixes it, and
    the dropout masks unless a separate ``dropout_rng`` is given.
    """
    dropout_rng = dropout_rng or rng
    mu, sigma = model.Q.forward(x, a, dropout_rng, training)
    z = reparameterize(mu, sigma, rng, eps)
    x_hat = generate(model.P, z, a, dropout_rng, training)
    loss = reconstruction_loss(x, x_hat, reduction) + kl_weight * kl_gaussian(mu, sigma, reduction)
    return loss, x_hat


def permutation_pair(batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    return rng.permutation(batch), rng.permutation(batch)


def permute_batch(h_s: Tensor, h_n: Tensor, rng: Rng | None = None, perms=None) -> Tensor:
    """Shuffle h_s and h_n rows independently and re-pair them.

    ``perms`` may supply the two index permutations directly; otherwise two
    are drawn from ``rng`` (the "permute" stream).
    """
    if h_s.shape[0] != h_n.shape[0]:
        raise ShapeError(f"permute_batch: batch mismatch {h_s.shape} vs {h_n.shape}")
    first, second = perms if perms is not None else permutation_pair(h_s.shape[0], rng)
    return concat([gather_rows(h_s, first), gather_rows(h_n, second)])


def tc_estimate(h: Tensor, Dis: Discriminator, reduction: str = "mean") -> Tensor:
    """Batch-mean log odds of the discriminator; its own weights get no gradient."""
    p = discriminate(Dis, h, frozen=True)
    log_odds = log(p) - log(1.0 - p)
    return _reduce(log_odds.sum(), h.shape[0], reduction)


def discriminator_loss(h: Tensor, h_perm: Tensor, Dis: Discriminator, reduction: str = "mean") -> Tensor:
    """-mean[log Dis(h) + log(1 - Dis(h_perm))] with both inputs held constant."""
    _same_shape(h, h_perm, "discriminator_loss")
    p_joint = discriminate(Dis, h.detach())
    p_perm = discriminate(Dis, h_perm.detach())
    total = log(p_joint).sum() + log(1.0 - p_perm).sum()
    return _reduce(-total, h.shape[0], reduction)


def warmup_weight(epoch: float, horizon: int, final: float) -> float:
    return min(epoch / horizon, 1.0) * final
