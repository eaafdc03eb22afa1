"""Synthetic benchmark with known semantic and nuisance factors.

Per class ``c`` an attribute vector ``a_c ~ U(0, 1)^k`` is drawn. Each sample
of class ``y`` has a semantic factor ``s = M a_y + e_s`` and a class-independent
nuisance factor ``n ~ N(0, nuisance_scale^2 I)``; the observation is
``x = tanh(G [s; n]) + e_x`` for a fixed random mixing matrix ``G``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from sdgzsl.data.bundle import DatasetBundle
from sdgzsl.errors import ConfigError
from sdgzsl.tensor.rng import Rng


@dataclass
class SyntheticSpec:
    n_seen: int = 8
    n_unseen: int = 2
    attr_dim: int = 4
    semantic_dim: int = 4
    nuisance_dim: int = 4
    feature_dim: int = 32
    per_class: int = 100
    semantic_scale: float = 1.0
    semantic_noise: float = 0.1
    nuisance_scale: float = 1.0
    feature_noise: float = 0.05
    mixing_scale: float = 0.5
    train_frac: float = 0.8
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        for name in ("n_seen", "n_unseen", "attr_dim", "semantic_dim", "nuisance_dim", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.per_class < 2:
            raise ConfigError("per_class must be >= 2 so seen classes have train and test rows")
        if self.feature_dim < self.semantic_dim + self.nuisance_dim:
            raise ConfigError(
                f"feature_dim ({self.feature_dim}) must be >= semantic_dim + nuisance_dim "
                f"({self.semantic_dim + self.nuisance_dim})"
            )
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError("train_frac must be in (0, 1)")
        for name in ("semantic_noise", "nuisance_scale", "feature_noise", "mixing_scale", "semantic_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def generate_synthetic(spec: SyntheticSpec) -> tuple[DatasetBundle, dict[str, np.ndarray]]:
    """Build a bundle and the ground-truth ``semantic`` / ``nuisance`` factors."""
    spec.validate()
    rng = Rng(spec.seed, "synthetic")
    n_classes = spec.n_seen + spec.n_unseen
    p, q = spec.semantic_dim, spec.nuisance_dim

    attributes = rng.uniform((n_classes, spec.attr_dim))
    # centred U(0,1) attributes have variance 1/12; this gives s unit variance per dim
    semantic_map = rng.normal((spec.attr_dim, p)) * (spec.semantic_scale * np.sqrt(12.0 / spec.attr_dim))
    mixing = rng.normal((p + q, spec.feature_dim)) * (spec.mixing_scale / np.sqrt((p + q) / 2))
    order = rng.permutation(n_classes)
    seen = np.sort(order[:spec.n_seen])
    unseen = np.sort(order[spec.n_seen:])

    labels = np.repeat(np.arange(n_classes), spec.per_class)
    n = labels.size
    attr_centered = attributes - attributes.mean(axis=0)
    semantic = attr_centered[labels] @ semantic_map + spec.semantic_noise * rng.normal((n, p))
    nuisance = spec.nuisance_scale * rng.normal((n, q))
    features = np.tanh(np.concatenate([semantic, nuisance], axis=1) @ mixing)
    features = features + spec.feature_noise * rng.normal((n, spec.feature_dim))

    train_idx, test_seen_idx, test_unseen_idx = [], [], []
    n_train = int(round(spec.train_frac * spec.per_class))
    n_train = min(max(n_train, 1), spec.per_class - 1)
    for c in range(n_classes):
        rows = np.flatnonzero(labels == c)
        if c in unseen:
            test_unseen_idx.append(rows)
        else:
            rows = rows[rng.permutation(rows.size)]
            train_idx.append(np.sort(rows[:n_train]))
            test_seen_idx.append(np.sort(rows[n_train:]))

    bundle = DatasetBundle(
        features=features.astype(np.float32),
        labels=labels.astype(np.int64),
        attributes=attributes.astype(np.float32),
        seen_classes=seen.astype(np.int64),
        unseen_classes=unseen.astype(np.int64),
        train_seen_idx=np.concatenate(train_idx).astype(np.int64),
        test_seen_idx=np.concatenate(test_seen_idx).astype(np.int64),
        test_unseen_idx=np.concatenate(test_unseen_idx).astype(np.int64),
    ).validate()
    return bundle, {"semantic": semantic, "nuisance": nuisance}
