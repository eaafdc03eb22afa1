"""Alternating discriminator / generator training, checkpoints and unseen synthesis."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sdgzsl.config import TrainConfig
from sdgzsl.data import Batch, DatasetBundle, batch_iterator, decode_sdtensor, encode_sdtensor
from sdgzsl.errors import ConfigError, FormatError, NumericError
from sdgzsl.networks import ModelState, decode_disentangle, encode_disentangle, init_model, relate
from sdgzsl.objectives import (
    compatibility_matrix,
    cvae_loss,
    discriminator_loss,
    permute_batch,
    reconstruction_loss,
    relation_loss,
    tc_estimate,
    warmup_weight,
)
from sdgzsl.tensor import Tape, Tensor, concat, no_grad, precision

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sdgzsl-checkpoint"
CHECKPOINT_VERSION = 1
HEADER_ENTRY = "__header__"

LOG_COLUMNS = ("epoch", "loss_cvae", "loss_rec", "loss_rel", "tc", "loss_dis", "kl_w", "tc_w")


@dataclass
class EpochRecord:
    epoch: int
    loss_cvae: float
    loss_rec: float
    loss_rel: float
    tc: float
    loss_dis: float
    kl_w: float
    tc_w: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError(f"epoch {rec.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(rec)

    def extend(self, other: "TrainLog") -> None:
        for rec in other.records:
            self.append(rec)

    def rows(self) -> list[tuple]:
        return [tuple(getattr(r, c) for c in LOG_COLUMNS) for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]])

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        out = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                out.append(EpochRecord(epoch=int(row["epoch"]),
                                       **{c: float(row[c]) for c in LOG_COLUMNS[1:]}))
        return out


# --------------------------------------------------------------------- steps


@dataclass
class StepLosses:
    cvae: Tensor
    rec: Tensor
    rel: Tensor
    tc: Tensor
    overall1: Tensor
    overall2: Tensor
    latents: list[tuple[Tensor, Tensor]]


def _stream_inputs(cfg: TrainConfig, x: Tensor, x_hat: Tensor) -> list[tuple[Tensor, Tensor]]:
    """(encoder input, reconstruction target) for each configured stream."""
    real = (x, x)
    recon = (x_hat, x_hat.detach())
    return {"real": [real], "reconstructed": [recon], "both": [real, recon]}[cfg.streams]


def _mean(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms)) if len(terms) > 1 else total


def compute_losses(model: ModelState, batch: Batch, kl_w: float, tc_w: float,
                   training: bool = True, eps=None) -> StepLosses:
    """Forward pass for one batch; records onto the active tape, if any.

    Dropout masks come from the ``dropout`` stream and reparameterisation noise
    from the ``noise`` stream unless ``eps`` fixes it.
    """
    cfg = model.cfg
    rngs = model.rngs
    red = cfg.reduction
    x = Tensor(batch.x)
    a = Tensor(batch.a)
    a_unique = Tensor(batch.a_unique)
    target = compatibility_matrix(batch.y, batch.y_unique)

    cvae, x_hat = cvae_loss(x, a, model, rngs.noise, kl_w, training, eps, red, dropout_rng=rngs.dropout)
    recs, rels, tcs, latents = [], [], [], []
    for inp, tgt in _stream_inputs(cfg, x, x_hat):
        h_s, h_n = encode_disentangle(model.E, inp, rngs.dropout, training)
        latents.append((h_s, h_n))
        recs.append(reconstruction_loss(tgt, decode_disentangle(model.D, h_s, h_n, rngs.dropout, training), red))
        rels.append(relation_loss(relate(model.R, h_s, a_unique), target, red))
        tcs.append(tc_estimate(concat([h_s, h_n]), model.Dis, red))
    rec, rel, tc = _mean(recs), _mean(rels), _mean(tcs)
    overall1 = cvae + rec + cfg.weights.relation * rel
    overall2 = overall1 + tc_w * tc
    return StepLosses(cvae, rec, rel, tc, overall1, overall2, latents)


def dis_step(model: ModelState, latents: list[tuple[Tensor, Tensor]]) -> float:
    """One discriminator update on permuted copies of each stream's latents."""
    cfg = model.cfg
    with Tape() as tape:
        terms = []
        for h_s, h_n in latents:
            h_s, h_n = h_s.detach(), h_n.detach()
            h = concat([h_s, h_n])
            h_perm = permute_batch(h_s, h_n, model.rngs.permute)
            terms.append(discriminator_loss(h, h_perm, model.Dis, cfg.reduction))
        loss = _mean(terms)
        weighted = cfg.weights.dis * loss
    value = loss.item()
    if cfg.weights.dis > 0:
        model.opt_dis.zero_grad()
        tape.backward(weighted)
        model.opt_dis.step()
    return value


def _check(name: str, t: Tensor) -> float:
    v = t.item()
    if not np.isfinite(v):
        raise NumericError(f"non-finite {name} loss")
    return v


def _w_step(model: ModelState, tape: Tape, loss: Tensor) -> None:
    model.opt_w.zero_grad()
    model.opt_dis.zero_grad()
    tape.backward(loss)
    model.opt_w.step()
    model.opt_dis.zero_grad()


def _phase_a(model: ModelState, batch: Batch, kl_w: float, update_w: bool) -> float:
    with Tape() as tape:
        losses = compute_losses(model, batch, kl_w, 0.0)
    dis_value = dis_step(model, losses.latents)
    if update_w:
        _check("overall1", losses.overall1)
        _w_step(model, tape, losses.overall1)
    return dis_value


def _cycle(bundle: DatasetBundle, batch_size: int, rng):
    while True:
        yield from batch_iterator(bundle, batch_size, rng)


def train_epoch(model: ModelState, bundle: DatasetBundle) -> EpochRecord:
    cfg = model.cfg
    epoch = model.epoch
    kl_w = warmup_weight(epoch, cfg.weights.warmup_epochs, cfg.weights.kl)
    tc_w = warmup_weight(epoch, cfg.weights.warmup_epochs, cfg.weights.tc)
    sums = dict(loss_cvae=0.0, loss_rec=0.0, loss_rel=0.0, tc=0.0, loss_dis=0.0)
    n_batches = 0
    n_dis_steps = 0
    with precision(cfg.precision):
        a_stream = _cycle(bundle, cfg.batch_size, model.rngs.shuffle)
        for batch in batch_iterator(bundle, cfg.batch_size, model.rngs.shuffle):
            for _ in range(cfg.n_dis):
                sums["loss_dis"] += _phase_a(model, next(a_stream), kl_w, cfg.overall1_inside_loop)
                n_dis_steps += 1
            if not cfg.overall1_inside_loop:
                _phase_a_w_only(model, next(a_stream), kl_w)
            with Tape() as tape:
                losses = compute_losses(model, batch, kl_w, tc_w)
            sums["loss_cvae"] += _check("cvae", losses.cvae)
            sums["loss_rec"] += _check("rec", losses.rec)
            sums["loss_rel"] += _check("relation", losses.rel)
            sums["tc"] += _check("tc", losses.tc)
            _check("overall2", losses.overall2)
            _w_step(model, tape, losses.overall2)
            n_batches += 1
    model.epoch += 1
    return EpochRecord(
        epoch=epoch,
        loss_cvae=sums["loss_cvae"] / n_batches,
        loss_rec=sums["loss_rec"] / n_batches,
        loss_rel=sums["loss_rel"] / n_batches,
        tc=sums["tc"] / n_batches,
        loss_dis=sums["loss_dis"] / max(n_dis_steps, 1),
        kl_w=kl_w,
        tc_w=tc_w,
    )


def _phase_a_w_only(model: ModelState, batch: Batch, kl_w: float) -> None:
    with Tape() as tape:
        losses = compute_losses(model, batch, kl_w, 0.0)
    _check("overall1", losses.overall1)
    _w_step(model, tape, losses.overall1)


def train(dataset: DatasetBundle, cfg: TrainConfig, state: ModelState | None = None,
          on_epoch=None) -> tuple[ModelState, TrainLog]:
    """Run epochs ``state.epoch .. cfg.epochs - 1`` (a fresh model when ``state`` is None).

    ``on_epoch(state, record)`` is called after every epoch, e.g. to checkpoint.
    """
    cfg.validate()
    if dataset.feature_dim != cfg.feature_dim or dataset.attr_dim != cfg.attr_dim:
        raise ConfigError(
            f"config dims (d={cfg.feature_dim}, k={cfg.attr_dim}) do not match dataset "
            f"(d={dataset.feature_dim}, k={dataset.attr_dim})"
        )
    model = state if state is not None else init_model(cfg)
    model.cfg = cfg
    tlog = TrainLog()
    while model.epoch < cfg.epochs:
        started = time.perf_counter()
        rec = train_epoch(model, dataset)
        tlog.append(rec)
        log.info("epoch %d cvae=%.4f rec=%.4f rel=%.4f tc=%.4f dis=%.4f (%.1fs)", rec.epoch,
                 rec.loss_cvae, rec.loss_rec, rec.loss_rel, rec.tc, rec.loss_dis, time.perf_counter() - started)
        if on_epoch is not None:
            on_epoch(model, rec)
    return model, tlog


# ---------------------------------------------------------------- synthesis


PARTS = ("hs", "hn", "h")


def encode_features(model: ModelState, x: np.ndarray, part: str = "hs") -> np.ndarray:
    """Eval-mode disentangled representation of raw features."""
    if part not in PARTS:
        raise ConfigError(f"representation must be one of {PARTS}, got {part!r}")
    with precision(model.cfg.precision), no_grad():
        h_s, h_n = encode_disentangle(model.E, Tensor(x))
    return {"hs": h_s.data, "hn": h_n.data, "h": np.concatenate([h_s.data, h_n.data], axis=1)}[part]


def generate_features(model: ModelState, attrs: np.ndarray, n_syn: int, rng) -> np.ndarray:
    """Draw ``n_syn`` features per attribute row through the cVAE decoder."""
    cfg = model.cfg
    a = np.repeat(np.asarray(attrs), n_syn, axis=0)
    with precision(cfg.precision), no_grad():
        z = Tensor(rng.normal((a.shape[0], cfg.latent_dim)))
        return model.P.forward(z, Tensor(a)).data


def synthesize_unseen(model: ModelState, attrs_unseen: np.ndarray, n_syn: int, rng,
                      class_ids=None, part: str = "hs") -> tuple[np.ndarray, np.ndarray]:
    """Generated features for each unseen class, encoded and sliced to ``part``.

    Rows are grouped by class in the order of ``attrs_unseen``; labels are
    ``class_ids`` (default ``0..U-1``) repeated ``n_syn`` times each.
    """
    attrs_unseen = np.atleast_2d(attrs_unseen)
    if class_ids is None:
        class_ids = np.arange(attrs_unseen.shape[0])
    x_hat = generate_features(model, attrs_unseen, n_syn, rng)
    return encode_features(model, x_hat, part), np.repeat(np.asarray(class_ids), n_syn)


# ------------------------------------------------------------- checkpoints


def _header_bytes(header: dict) -> np.ndarray:
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def checkpoint_arrays(state: ModelState) -> dict[str, np.ndarray]:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.cfg.to_dict(),
        "epoch": state.epoch,
        "opt_w_step": state.opt_w.step_count,
        "opt_dis_step": state.opt_dis.step_count,
        "rng": state.rngs.get_state(),
    }
    arrays = {HEADER_ENTRY: _header_bytes(header)}
    for name, p in state.all_params().items():
        arrays[f"param/{name}"] = p.data
    for name, arr in state.opt_w.state_arrays().items():
        arrays[f"adam/W/{name}"] = arr
    for name, arr in state.opt_dis.state_arrays().items():
        arrays[f"adam/Dis/{name}"] = arr
    return arrays


def save_checkpoint(state: ModelState, path) -> None:
    path = Path(path)
    data = encode_sdtensor(checkpoint_arrays(state))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> ModelState:
    try:
        arrays = decode_sdtensor(Path(path).read_bytes())
    except FileNotFoundError:
        raise FormatError(f"checkpoint not found: {path}") from None
    if HEADER_ENTRY not in arrays:
        raise FormatError(f"{path} is an SDTensor file but not a checkpoint (no {HEADER_ENTRY})")
    try:
        header = json.loads(arrays.pop(HEADER_ENTRY).astype(np.uint8).tobytes().decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header in {path}: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint {header.get('format')!r} v{header.get('version')} "
            f"(expected {CHECKPOINT_FORMAT!r} v{CHECKPOINT_VERSION})"
        )
    cfg = TrainConfig.from_dict(header["config"])
    state = init_model(cfg)
    for name, p in state.all_params().items():
        key = f"param/{name}"
        if key not in arrays or arrays[key].shape != p.data.shape:
            raise FormatError(f"checkpoint entry {key} missing or mis-shaped")
        p.data = arrays[key].copy()
    state.opt_w.load_state_arrays(_prefixed(arrays, "adam/W/"), header["opt_w_step"])
    state.opt_dis.load_state_arrays(_prefixed(arrays, "adam/Dis/"), header["opt_dis_step"])
    state.rngs.set_state(header["rng"])
    state.epoch = header["epoch"]
    return state


def _prefixed(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

