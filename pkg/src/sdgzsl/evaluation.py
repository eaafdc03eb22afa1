"""GZSL metrics, softmax classifier, retrieval mAP and report export."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sdgzsl.config import EvalConfig
from sdgzsl.data import DatasetBundle
from sdgzsl.errors import ConfigError
from sdgzsl.networks import Linear, ModelState
from sdgzsl.tensor import Adam, Rng, Tape, Tensor, log_softmax, no_grad, precision
from sdgzsl.trainer import encode_features, generate_features

DEFAULT_RATIOS = (1.0, 0.5, 0.25)
REPRESENTATIONS = ("hs", "hn", "h", "x")


def harmonic_mean(u: float, s: float) -> float:
    """2US / (U + S); zero when both are zero."""
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def per_class_top1(preds, truth, class_set) -> float:
    """Macro-averaged top-1 accuracy in percent.

    Classes in ``class_set`` with no rows in ``truth`` are left out of the
    average (with a warning).
    """
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    accs = per_class_accuracies(preds, truth, class_set)
    if not accs:
        warnings.warn("per_class_top1: no class in class_set has test samples", stacklevel=2)
        return 0.0
    return float(np.mean(list(accs.values())))


def per_class_accuracies(preds, truth, class_set) -> dict[int, float]:
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    stray = np.setdiff1d(truth, np.asarray(class_set))
    if stray.size:
        raise ConfigError(f"truth labels {stray.tolist()} are not in the class set")
    out = {}
    for c in class_set:
        mask = truth == c
        if not mask.any():
            warnings.warn(f"class {c} has no test samples; excluded from the average", stacklevel=3)
            continue
        out[int(c)] = 100.0 * float(np.mean(preds[mask] == c))
    return out


# ---------------------------------------------------------------- classifier


@dataclass
class SoftmaxClassifier:
    """Single linear map followed by softmax; predicts the lowest class id on ties."""

    layer: Linear
    classes: np.ndarray

    def logits(self, reps: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.layer(Tensor(reps, dtype=self.layer.weight.dtype)).data

    def predict(self, reps: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.logits(reps), axis=1)]


def train_softmax_classifier(reps: np.ndarray, labels: np.ndarray, classes, cfg: EvalConfig | None = None,
                             rng: Rng | None = None) -> SoftmaxClassifier:
    cfg = cfg or EvalConfig()
    rng = rng or Rng(cfg.seed, "classifier")
    classes = np.sort(np.asarray(classes))
    labels = np.asarray(labels)
    absent = np.setdiff1d(classes, labels)
    if absent.size:
        raise ConfigError(f"classes {absent.tolist()} have no training samples")
    stray = np.setdiff1d(labels, classes)
    if stray.size:
        raise ConfigError(f"training labels {stray.tolist()} are outside the class set")
    target_idx = np.searchsorted(classes, labels)
    onehot = np.eye(classes.size)[target_idx]
    reps = np.asarray(reps)
    dtype = reps.dtype if reps.dtype.kind == "f" else np.float32
    layer = Linear(reps.shape[1], classes.size, rng, "cls", dtype=dtype)
    opt = Adam(layer.params(), lr=cfg.classifier_lr, group="classifier")
    n = reps.shape[0]
    bs = min(cfg.classifier_batch, n)
    for _ in range(cfg.classifier_epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            with Tape() as tape:
                lp = log_softmax(layer(Tensor(reps[idx], dtype=dtype)))
                loss = -(lp * Tensor(onehot[idx], dtype=dtype)).sum() * (1.0 / idx.size)
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
    return SoftmaxClassifier(layer, classes)


# ------------------------------------------------------------------ retrieval


def average_precision(relevance, ratio: float, n_relevant: int | None = None) -> float:
    """Truncated AP: precision at each relevant hit within the top K, summed, over K.

    K = ceil(ratio * n_relevant) with n_relevant the number of relevant items
    in the full ranking unless given.
    """
    relevance = np.asarray(relevance, dtype=bool)
    n_rel = int(relevance.sum()) if n_relevant is None else n_relevant
    if n_rel == 0:
        return 0.0
    k = max(int(math.ceil(ratio * n_rel - 1e-12)), 1)
    top = relevance[:k]
    hits = np.flatnonzero(top)
    if hits.size == 0:
        return 0.0
    precisions = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precisions.sum() / k)


def retrieval_map_from_reps(queries: np.ndarray, query_labels, db: np.ndarray, db_labels,
                            ratios=DEFAULT_RATIOS) -> dict[float, float]:
    """Rank ``db`` rows by Euclidean distance to each query (ties by index) and macro-average AP."""
    db_labels = np.asarray(db_labels)
    per_ratio: dict[float, list[float]] = {float(r): [] for r in ratios}
    for q, c in zip(np.atleast_2d(queries), query_labels):
        dist = np.sqrt(((db - q) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        relevance = db_labels[order] == c
        for r in per_ratio:
            per_ratio[r].append(average_precision(relevance, r))
    return {r: float(np.mean(v)) for r, v in per_ratio.items()}


def _reps_for(model: ModelState, x: np.ndarray, part: str) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) if part == "x" else encode_features(model, x, part)


def synthesize(model: ModelState, bundle: DatasetBundle, classes, n_syn: int, rng: Rng,
               part: str) -> tuple[np.ndarray, np.ndarray]:
    classes = np.asarray(classes)
    x_hat = generate_features(model, bundle.attributes[classes], n_syn, rng)
    return _reps_for(model, x_hat, part), np.repeat(classes, n_syn)


def retrieval_map(model: ModelState, bundle: DatasetBundle, ratios=DEFAULT_RATIOS, n_syn: int = 300,
                  rng: Rng | None = None, part: str = "hs") -> dict[float, float]:
    """Centroid-query retrieval over real unseen test samples."""
    rng = rng or Rng(0, "noise")
    unseen = np.sort(bundle.unseen_classes)
    syn, syn_labels = synthesize(model, bundle, unseen, n_syn, rng, part)
    centroids = np.stack([syn[syn_labels == c].mean(axis=0) for c in unseen])
    x_test, y_test = bundle.split("test_unseen")
    db = _reps_for(model, x_test, part)
    present = np.isin(unseen, y_test)
    return retrieval_map_from_reps(centroids[present], unseen[present], db, y_test, ratios)


# -------------------------------------------------------------------- report


@dataclass
class GZSLReport:
    representation: str
    U: float
    S: float
    H: float
    T1: float
    per_class_accuracy: dict[int, float]
    retrieval_map: dict[float, float]
    confusion_rows: list[int]
    confusion_cols: list[int]
    confusion: list[list[int]]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_accuracy"] = {str(k): v for k, v in self.per_class_accuracy.items()}
        d["retrieval_map"] = {f"{k:g}": v for k, v in self.retrieval_map.items()}
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_confusion_csv(self, counts_path, percent_path) -> None:
        counts = np.asarray(self.confusion, dtype=np.int64)
        totals = counts.sum(axis=1, keepdims=True)
        pct = np.divide(100.0 * counts, totals, out=np.zeros(counts.shape), where=totals > 0)
        for path, mat, fmt in ((counts_path, counts, str), (percent_path, pct, lambda v: f"{v:.2f}")):
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["true\\pred"] + [str(c) for c in self.confusion_cols])
                for c, row in zip(self.confusion_rows, mat):
                    writer.writerow([str(c)] + [fmt(v) for v in row])


def confusion_matrix(preds, truth, row_classes, col_classes) -> np.ndarray:
    rows = {int(c): i for i, c in enumerate(row_classes)}
    cols = {int(c): i for i, c in enumerate(col_classes)}
    out = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for p, t in zip(np.asarray(preds).tolist(), np.asarray(truth).tolist()):
        out[rows[t], cols[p]] += 1
    return out


def evaluate_gzsl(model: ModelState, bundle: DatasetBundle, cfg: EvalConfig | None = None,
                  representation: str = "hs", ratios=DEFAULT_RATIOS) -> GZSLReport:
    """Train the final classifiers on real seen + synthesized unseen representations and score them."""
    cfg = cfg or EvalConfig()
    if representation not in REPRESENTATIONS:
        raise ConfigError(f"representation must be one of {REPRESENTATIONS}, got {representation!r}")
    n_syn = cfg.n_syn or model.cfg.n_syn
    seen, unseen = np.sort(bundle.seen_classes), np.sort(bundle.unseen_classes)
    all_classes = np.sort(np.concatenate([seen, unseen]))

    with precision(model.cfg.precision):
        syn_rng = Rng(cfg.seed, "noise")
        x_train, y_train = bundle.split("train_seen")
        seen_reps = _reps_for(model, x_train, representation)
        syn_reps, syn_labels = synthesize(model, bundle, unseen, n_syn, syn_rng, representation)
        gzsl = train_softmax_classifier(
            np.concatenate([seen_reps, syn_reps]), np.concatenate([y_train, syn_labels]),
            all_classes, cfg, Rng(cfg.seed, "classifier"),
        )
        zsl = train_softmax_classifier(syn_reps, syn_labels, unseen, cfg, Rng(cfg.seed, "classifier-zsl"))

        x_ts, y_ts = bundle.split("test_seen")
        x_tu, y_tu = bundle.split("test_unseen")
        pred_ts = gzsl.predict(_reps_for(model, x_ts, representation)) if y_ts.size else y_ts
        tu_reps = _reps_for(model, x_tu, representation)
        pred_tu = gzsl.predict(tu_reps)
        u = per_class_top1(pred_tu, y_tu, unseen)
        s = per_class_top1(pred_ts, y_ts, seen) if y_ts.size else 0.0
        t1 = per_class_top1(zsl.predict(tu_reps), y_tu, unseen)
        per_class = {**per_class_accuracies(pred_ts, y_ts, seen), **per_class_accuracies(pred_tu, y_tu, unseen)}
        rmap = retrieval_map(model, bundle, ratios, n_syn, Rng(cfg.seed, "retrieval"), representation)

    rows = sorted(int(c) for c in unseen if np.any(y_tu == c))
    return GZSLReport(
        representation=representation,
        U=u, S=s, H=harmonic_mean(u, s), T1=t1,
        per_class_accuracy=dict(sorted(per_class.items())),
        retrieval_map=rmap,
        confusion_rows=rows,
        confusion_cols=[int(c) for c in all_classes],
        confusion=confusion_matrix(pred_tu, y_tu, rows, all_classes).tolist(),
        extra={"n_syn": n_syn, "classifier_epochs": cfg.classifier_epochs, "classifier_lr": cfg.classifier_lr},
    )
