"""Finite-difference checks for every loss term on small random instances."""

from __future__ import annotations

import numpy as np

from sdgzsl.config import TrainConfig
from sdgzsl.networks import ModelState, decode_disentangle, encode_disentangle, init_model, relate
from sdgzsl.objectives import (
    compatibility_matrix,
    cvae_loss,
    discriminator_loss,
    permute_batch,
    reconstruction_loss,
    relation_loss,
    tc_estimate,
)
from sdgzsl.tensor import GradCheckReport, Rng, Tensor, concat, grad_check, precision

LOSS_TERMS = ("reconstruction", "relation", "tc", "discriminator", "cvae")


def suite_config(seed: int) -> TrainConfig:
    return TrainConfig(
        feature_dim=16, attr_dim=6, latent_dim=4, hs_dim=4, cvae_hidden=8, generator_hidden=8,
        decoder_hidden=8, relation_hidden=8, dropout=0.0, seed=seed, precision="f64",
    )


def _subset(params: dict, prefixes) -> dict:
    return {k: v for k, v in params.items() if k.split(".")[0] in prefixes}


def _closures(model: ModelState, rng: Rng, batch: int):
    cfg = model.cfg
    n_classes = 3
    x = Tensor(rng.normal((batch, cfg.feature_dim)))
    labels = np.arange(batch) % n_classes
    attrs = rng.uniform((n_classes, cfg.attr_dim))
    a = Tensor(attrs[labels])
    a_unique = Tensor(attrs)
    target = compatibility_matrix(labels, np.arange(n_classes))
    eps = rng.normal((batch, cfg.latent_dim))
    perms = (rng.permutation(batch), rng.permutation(batch))
    params = model.all_params()

    def rec():
        h_s, h_n = encode_disentangle(model.E, x)
        return reconstruction_loss(x, decode_disentangle(model.D, h_s, h_n))

    def rel():
        h_s, _ = encode_disentangle(model.E, x)
        return relation_loss(relate(model.R, h_s, a_unique), target)

    def tc():
        h_s, h_n = encode_disentangle(model.E, x)
        return tc_estimate(concat([h_s, h_n]), model.Dis)

    h_fixed = Tensor(rng.normal((batch, cfg.split_dim)))

    def dis():
        h_s = Tensor(h_fixed.data[:, :cfg.hs_dim])
        h_n = Tensor(h_fixed.data[:, cfg.hs_dim:])
        return discriminator_loss(h_fixed, permute_batch(h_s, h_n, perms=perms), model.Dis)

    def cvae():
        return cvae_loss(x, a, model, None, 1.0, training=False, eps=eps)[0]

    return {
        "reconstruction": (rec, _subset(params, {"E", "D"})),
        "relation": (rel, _subset(params, {"E", "R"})),
        "tc": (tc, _subset(params, {"E"})),
        "discriminator": (dis, _subset(params, {"Dis"})),
        "cvae": (cvae, _subset(params, {"Q", "P"})),
    }


def check_loss_terms(seed: int, batch: int = 8, eps: float = 1e-5,
                     tolerance: float = 1e-6) -> dict[str, GradCheckReport]:
    """One grad-check report per loss term, all in 64-bit mode."""
    with precision("f64"):
        model = init_model(suite_config(seed))
        closures = _closures(model, Rng(seed, "gradcheck"), batch)
        return {name: grad_check(fn, params, eps, tolerance) for name, (fn, params) in closures.items()}


def run_gradient_suite(seeds=range(5), batch: int = 8, eps: float = 1e-5,
                       tolerance: float = 1e-6) -> dict[int, dict[str, GradCheckReport]]:
    return {int(s): check_loss_terms(int(s), batch, eps, tolerance) for s in seeds}
