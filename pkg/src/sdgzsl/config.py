"""Configuration records shared by the networks, trainer and CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from sdgzsl.errors import ConfigError

STREAM_CHOICES = ("real", "reconstructed", "both")


@dataclass
class LossWeights:
    relation: float = 1.0  # lambda1
    tc: float = 1.0  # lambda2
    dis: float = 1.0  # lambda3
    kl: float = 1.0
    warmup_epochs: int = 10

    def validate(self) -> None:
        for f in ("relation", "tc", "dis", "kl"):
            if getattr(self, f) < 0:
                raise ConfigError(f"loss weight {f} must be >= 0, got {getattr(self, f)}")
        if self.warmup_epochs < 1:
            raise ConfigError("warmup_epochs must be >= 1")


@dataclass
class TrainConfig:
    feature_dim: int = 2048  # d
    attr_dim: int = 85  # k
    latent_dim: int = 32  # z
    hs_dim: int = 64  # l
    hn_dim: int | None = None  # m; defaults to hs_dim
    cvae_hidden: int = 2048
    generator_hidden: int = 2048
    decoder_hidden: int = 2048
    relation_hidden: int = 2048
    dis_hidden: tuple[int, ...] = ()
    dis_features: str = "linear"
    dropout: float = 0.2
    leaky_slope: float = 0.2
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 64
    lr: float = 1e-4
    dis_lr: float | None = None
    epochs: int = 50
    n_dis: int = 1
    overall1_inside_loop: bool = True
    streams: str = "both"
    reduction: str = "mean"
    n_syn: int = 300
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        if self.hn_dim is None:
            self.hn_dim = self.hs_dim
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.dis_hidden = tuple(self.dis_hidden)

    @property
    def split_dim(self) -> int:
        return self.hs_dim + self.hn_dim

    def validate(self) -> "TrainConfig":
        dims = ("feature_dim", "attr_dim", "latent_dim", "hs_dim", "hn_dim", "cvae_hidden",
                "generator_hidden", "decoder_hidden", "relation_hidden")
        for name in dims:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(h < 1 for h in self.dis_hidden):
            raise ConfigError("dis_hidden widths must be >= 1")
        if self.dis_features not in ("linear", "quadratic"):
            raise ConfigError(f"dis_features must be 'linear' or 'quadratic', got {self.dis_features!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_dis < 1:
            raise ConfigError("n_dis must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.streams not in STREAM_CHOICES:
            raise ConfigError(f"streams must be one of {STREAM_CHOICES}, got {self.streams!r}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if self.lr <= 0 or (self.dis_lr is not None and self.dis_lr <= 0):
            raise ConfigError("learning rates must be positive")
        if self.n_syn < 1:
            raise ConfigError("n_syn must be >= 1")
        self.weights.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return from_dict(cls, d)


@dataclass
class EvalConfig:
    classifier_lr: float = 1e-3
    classifier_epochs: int = 100
    classifier_batch: int = 64
    n_syn: int | None = None  # falls back to TrainConfig.n_syn
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def from_dict(cls, d: dict):
    """Build a dataclass from a dict, rejecting unknown keys."""
    if d is None:
        return cls()
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = dict(d)
    if cls is TrainConfig and isinstance(kwargs.get("weights"), dict):
        kwargs["weights"] = from_dict(LossWeights, kwargs["weights"])
    return cls(**kwargs)


def apply_override(cfg_dict: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place (value parsed as JSON when possible)."""
    import json

    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = cfg_dict
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {key!r}: {part!r} is not a section")
    node[parts[-1]] = value


# Loss weights zeroed by each named ablation; "cvae-only" and "no-rn-tc" share weights.
ABLATIONS = {
    "full": {},
    "no-rn": {"relation": 0.0},
    "no-tc": {"tc": 0.0, "dis": 0.0},
    "no-rn-tc": {"relation": 0.0, "tc": 0.0, "dis": 0.0},
    "cvae-only": {"relation": 0.0, "tc": 0.0, "dis": 0.0},
}


def apply_ablation(cfg: TrainConfig, name: str) -> TrainConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    weights = dataclasses.replace(cfg.weights, **ABLATIONS[name])
    return dataclasses.replace(cfg, weights=weights)


# Widths and step sizes for the small synthetic benchmark (a few seconds per epoch on a CPU).
SYNTHETIC_PRESET = {
    "latent_dim": 8,
    "hs_dim": 8,
    "cvae_hidden": 128,
    "generator_hidden": 128,
    "decoder_hidden": 128,
    "relation_hidden": 64,
    "dropout": 0.2,
    "epochs": 100,
    "lr": 1e-3,
    "n_syn": 100,
    "weights": {"relation": 5.0, "tc": 1.0, "dis": 1.0, "kl": 1.0, "warmup_epochs": 10},
}


def synthetic_preset(feature_dim: int, attr_dim: int, seed: int = 0, **overrides) -> TrainConfig:
    d = dict(SYNTHETIC_PRESET, feature_dim=feature_dim, attr_dim=attr_dim, seed=seed)
    d["weights"] = dict(d["weights"])
    d.update(overrides)
    return TrainConfig.from_dict(d)
