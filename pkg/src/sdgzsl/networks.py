"""The six networks: cVAE encoder/decoder, disentangling encoder/decoder,
relation module and total-correlation discriminator.

Weights use He-uniform initialisation, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``,
with zero biases. All networks take an explicit ``training`` flag; dropout is
the identity when it is False.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sdgzsl.config import TrainConfig
from sdgzsl.errors import ConfigError, NumericError, ShapeError
from sdgzsl.tensor import (
    Adam,
    Rng,
    RngStreams,
    Tensor,
    clamp,
    concat,
    dropout,
    gather_cols,
    gather_rows,
    get_dtype,
    leaky_relu,
    precision,
    relu,
    reshape,
    sigmoid,
    slice_cols,
    softplus,
)

PROB_EPS = 1e-6


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: Rng | None, name: str, dtype=None):
        dtype = dtype or get_dtype()
        if rng is None:
            w = np.zeros((n_in, n_out))
        else:
            bound = np.sqrt(6.0 / n_in)
            w = (rng.uniform((n_in, n_out)) * 2.0 - 1.0) * bound
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight", dtype=dtype)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias", dtype=dtype)
        self.name = name

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor, frozen: bool = False) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expected input width {self.n_in}, got {x.shape}")
        w, b = (self.weight.detach(), self.bias.detach()) if frozen else (self.weight, self.bias)
        return x @ w + b

    def params(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


class Module:
    """Parameter bookkeeping for a fixed list of Linear layers."""

    layers: list[Linear]

    def params(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params().values())


class DisentangleEncoder(Module):
    """x -> h = [h_s, h_n] through FC-LeakyReLU-Dropout."""

    def __init__(self, d: int, l: int, m: int, rng, slope=0.2, rate=0.2):
        if l < 1 or m < 1:
            raise ConfigError(f"split dims must be >= 1, got l={l}, m={m}")
        self.fc = Linear(d, l + m, rng, "E.fc")
        self.layers = [self.fc]
        self.l, self.m, self.slope, self.rate = l, m, slope, rate

    def forward(self, x: Tensor, rng=None, training=False) -> Tensor:
        return dropout(leaky_relu(self.fc(x), self.slope), self.rate, rng, training)


class DisentangleDecoder(Module):
    """[h_s, h_n] -> x through FC-LeakyReLU-Dropout-FC."""

    def __init__(self, l_plus_m: int, hidden: int, d: int, rng, slope=0.2, rate=0.2):
        self.fc1 = Linear(l_plus_m, hidden, rng, "D.fc1")
        self.fc2 = Linear(hidden, d, rng, "D.fc2")
        self.layers = [self.fc1, self.fc2]
        self.slope, self.rate = slope, rate

    def forward(self, h: Tensor, rng=None, training=False) -> Tensor:
        hid = dropout(leaky_relu(self.fc1(h), self.slope), self.rate, rng, training)
        return self.fc2(hid)


class RelationNet(Module):
    """Scores (h_s, a) pairs: FC-ReLU-FC-Sigmoid over their concatenation."""

    def __init__(self, l: int, k: int, hidden: int, rng):
        self.fc1 = Linear(l + k, hidden, rng, "R.fc1")
        self.fc2 = Linear(hidden, 1, rng, "R.fc2")
        self.layers = [self.fc1, self.fc2]

    def forward(self, pairs: Tensor) -> Tensor:
        return sigmoid(self.fc2(relu(self.fc1(pairs))))


class Discriminator(Module):
    """Sigmoid classifier telling joint h from permuted h.

    The default is the single FC layer over ``h``. ``hidden`` adds
    LeakyReLU layers in front of it and ``features="quadratic"`` feeds
    ``[h, upper-triangle of h h^T]`` instead of ``h``; both are opt-in
    extensions used for density-ratio benchmarking on Gaussian data.
    """

    def __init__(self, n_in: int, rng, hidden=(), features="linear", slope=0.2):
        self.features = features
        self.n_in = n_in
        width = n_in + (n_in * (n_in + 1) // 2 if features == "quadratic" else 0)
        self.layers = []
        for i, h in enumerate(hidden):
            self.layers.append(Linear(width, h, rng, f"Dis.fc{i}"))
            width = h
        self.layers.append(Linear(width, 1, rng, "Dis.out"))
        self.slope = slope
        iu = np.triu_indices(n_in)
        self._tri = iu

    def _featurize(self, h: Tensor) -> Tensor:
        if self.features != "quadratic":
            return h
        rows, cols = self._tri
        return concat([h, gather_cols(h, rows) * gather_cols(h, cols)])

    def logits(self, h: Tensor, frozen: bool = False) -> Tensor:
        out = self._featurize(h)
        for layer in self.layers[:-1]:
            out = leaky_relu(layer(out, frozen), self.slope)
        return self.layers[-1](out, frozen)

    def forward(self, h: Tensor, frozen: bool = False) -> Tensor:
        return clamp(sigmoid(self.logits(h, frozen)), PROB_EPS, 1.0 - PROB_EPS)


SIGMA_FLOOR = 1e-6


class CvaeEncoder(Module):
    """q(z | x, a): shared trunk, a linear mean head and a softplus std head."""

    def __init__(self, d: int, k: int, hidden: int, z: int, rng, slope=0.2, rate=0.2):
        self.fc1 = Linear(d + k, hidden, rng, "Q.fc1")
        self.fc2 = Linear(hidden, hidden, rng, "Q.fc2")
        self.fc3 = Linear(hidden, hidden, rng, "Q.fc3")
        self.mu = Linear(hidden, z, rng, "Q.mu")
        self.sigma = Linear(hidden, z, rng, "Q.sigma")
        self.layers = [self.fc1, self.fc2, self.fc3, self.mu, self.sigma]
        self.slope, self.rate = slope, rate

    def forward(self, x: Tensor, a: Tensor, rng=None, training=False) -> tuple[Tensor, Tensor]:
        t = leaky_relu(self.fc1(concat([x, a])), self.slope)
        t = leaky_relu(dropout(self.fc2(t), self.rate, rng, training), self.slope)
        t = self.fc3(t)
        mu = self.mu(t)
        # the floor keeps sigma > 0 where softplus underflows in f32
        sigma = softplus(dropout(self.sigma(t), self.rate, rng, training)) + SIGMA_FLOOR
        return mu, sigma


class CvaeDecoder(Module):
    """p(x | z, a) through FC-ReLU-Dropout-FC-LeakyReLU."""

    def __init__(self, z: int, k: int, hidden: int, d: int, rng, slope=0.2, rate=0.2):
        self.fc1 = Linear(z + k, hidden, rng, "P.fc1")
        self.fc2 = Linear(hidden, d, rng, "P.fc2")
        self.layers = [self.fc1, self.fc2]
        self.slope, self.rate = slope, rate

    def forward(self, z: Tensor, a: Tensor, rng=None, training=False) -> Tensor:
        t = dropout(relu(self.fc1(concat([z, a]))), self.rate, rng, training)
        return leaky_relu(self.fc2(t), self.slope)


# ------------------------------------------------------------------ operations


def encode_disentangle(E: DisentangleEncoder, x: Tensor, rng=None, training=False) -> tuple[Tensor, Tensor]:
    h = E.forward(x, rng, training)
    return slice_cols(h, 0, E.l), slice_cols(h, E.l, E.l + E.m)


def decode_disentangle(D: DisentangleDecoder, h_s: Tensor, h_n: Tensor, rng=None, training=False) -> Tensor:
    return D.forward(concat([h_s, h_n]), rng, training)


def reparameterize(mu: Tensor, sigma: Tensor, rng: Rng | None = None, eps=None) -> Tensor:
    """z = mu + sigma * eps with eps ~ N(0, I) drawn from ``rng`` unless given."""
    if np.any(sigma.data <= 0):
        raise NumericError("reparameterize: sigma must be strictly positive")
    if eps is None:
        eps = rng.normal(mu.shape)
    eps = Tensor(eps, dtype=mu.dtype)
    return mu + sigma * eps


def generate(P: CvaeDecoder, z: Tensor, a: Tensor, rng=None, training=False) -> Tensor:
    if z.shape[0] != a.shape[0]:
        raise ShapeError(f"generate: batch mismatch {z.shape} vs {a.shape}")
    return P.forward(z, a, rng, training)


def relate(R: RelationNet, h_s: Tensor, a_set: Tensor) -> Tensor:
    """Relation score for every (row of h_s, row of a_set) pair, shape [B, N_c]."""
    B, n_c = h_s.shape[0], a_set.shape[0]
    left = gather_rows(h_s, np.repeat(np.arange(B), n_c))
    right = gather_rows(a_set, np.tile(np.arange(n_c), B))
    return reshape(R.forward(concat([left, right])), (B, n_c))


def discriminate(Dis: Discriminator, h: Tensor, frozen: bool = False) -> Tensor:
    if h.shape[-1] != Dis.n_in:
        raise ShapeError(f"discriminate: expected width {Dis.n_in}, got {h.shape}")
    return Dis.forward(h, frozen)


# --------------------------------------------------------------------- state


@dataclass
class ModelState:
    cfg: TrainConfig
    Q: CvaeEncoder
    P: CvaeDecoder
    E: DisentangleEncoder
    D: DisentangleDecoder
    R: RelationNet
    Dis: Discriminator
    opt_w: Adam = None
    opt_dis: Adam = None
    rngs: RngStreams = None
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    def generator_modules(self) -> dict[str, Module]:
        return {"Q": self.Q, "P": self.P, "E": self.E, "D": self.D, "R": self.R}

    def w_params(self) -> dict[str, Tensor]:
        out = {}
        for mod in self.generator_modules().values():
            out.update(mod.params())
        return out

    def dis_params(self) -> dict[str, Tensor]:
        return self.Dis.params()

    def all_params(self) -> dict[str, Tensor]:
        return {**self.w_params(), **self.dis_params()}

    def num_params(self) -> int:
        return sum(p.data.size for p in self.all_params().values())


def expected_param_count(cfg: TrainConfig) -> int:
    """Closed-form parameter count for the configured architecture."""
    d, k, z, l, m = cfg.feature_dim, cfg.attr_dim, cfg.latent_dim, cfg.hs_dim, cfg.hn_dim

    def fc(i, o):
        return i * o + o

    hq, hp, hd, hr = cfg.cvae_hidden, cfg.generator_hidden, cfg.decoder_hidden, cfg.relation_hidden
    q = fc(d + k, hq) + fc(hq, hq) + fc(hq, hq) + 2 * fc(hq, z)
    p = fc(z + k, hp) + fc(hp, d)
    e = fc(d, l + m)
    dd = fc(l + m, hd) + fc(hd, d)
    r = fc(l + k, hr) + fc(hr, 1)
    width = l + m + ((l + m) * (l + m + 1) // 2 if cfg.dis_features == "quadratic" else 0)
    dis = 0
    for h in cfg.dis_hidden:
        dis += fc(width, h)
        width = h
    dis += fc(width, 1)
    return q + p + e + dd + r + dis


def init_model(cfg: TrainConfig, rng: Rng | None = None) -> ModelState:
    """Build every network and zeroed optimiser moments for ``cfg``.

    ``rng`` defaults to the ``"init"`` stream of ``cfg.seed``.
    """
    cfg.validate()
    with precision(cfg.precision):
        rngs = RngStreams(cfg.seed)
        rng = rng or rngs.init
        s, r = cfg.leaky_slope, cfg.dropout
        d, k = cfg.feature_dim, cfg.attr_dim
        state = ModelState(
            cfg=cfg,
            Q=CvaeEncoder(d, k, cfg.cvae_hidden, cfg.latent_dim, rng, s, r),
            P=CvaeDecoder(cfg.latent_dim, k, cfg.generator_hidden, d, rng, s, r),
            E=DisentangleEncoder(d, cfg.hs_dim, cfg.hn_dim, rng, s, r),
            D=DisentangleDecoder(cfg.split_dim, cfg.decoder_hidden, d, rng, s, r),
            R=RelationNet(cfg.hs_dim, k, cfg.relation_hidden, rng),
            Dis=Discriminator(cfg.split_dim, rng, cfg.dis_hidden, cfg.dis_features, s),
            rngs=rngs,
        )
    state.opt_w = Adam(state.w_params(), lr=cfg.lr, group="W")
    state.opt_dis = Adam(state.dis_params(), lr=cfg.dis_lr or cfg.lr, group="Dis")
    return state
