"""DatasetBundle, its manifest format, and minibatch iteration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from sdgzsl.data.sdtensor import read_sdtensor, write_sdtensor
from sdgzsl.errors import DataError, ValidationError

INDEX_KEYS = ("train_seen_idx", "test_seen_idx", "test_unseen_idx")


@dataclass(frozen=True)
class DatasetBundle:
    """Features, labels, class attributes and the seen/unseen split.

    ``attributes`` row ``c`` describes class id ``c``.
    """

    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    train_seen_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def all_classes(self) -> np.ndarray:
        return np.sort(np.concatenate([self.seen_classes, self.unseen_classes]))

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = getattr(self, f"{name}_idx")
        return self.features[idx], self.labels[idx]

    def validate(self) -> "DatasetBundle":
        check_bundle(self)
        return self

    def equals(self, other: "DatasetBundle") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            and getattr(self, f).dtype == getattr(other, f).dtype
            for f in self.__dataclass_fields__
        )


def check_bundle(b: DatasetBundle) -> None:
    """Raise ValidationError naming the first violated rule."""
    if b.features.ndim != 2:
        raise ValidationError("features_rank", f"features must be 2-D, got shape {b.features.shape}")
    if b.labels.ndim != 1 or b.labels.shape[0] != b.features.shape[0]:
        raise ValidationError("labels_shape", f"{b.labels.shape} labels for {b.features.shape[0]} rows")
    if b.attributes.ndim != 2:
        raise ValidationError("attributes_rank", f"attributes must be 2-D, got {b.attributes.shape}")
    if not np.all(np.isfinite(b.features)) or not np.all(np.isfinite(b.attributes)):
        raise ValidationError("finite_values", "features and attributes must be finite")
    seen, unseen = set(b.seen_classes.tolist()), set(b.unseen_classes.tolist())
    if not seen or not unseen:
        raise ValidationError("nonempty_class_sets", "need at least one seen and one unseen class")
    overlap = seen & unseen
    if overlap:
        raise ValidationError("disjoint_classes", f"classes {sorted(overlap)} are both seen and unseen")
    n_rows = b.attributes.shape[0]
    missing = sorted(c for c in seen | unseen | set(b.labels.tolist()) if not 0 <= c < n_rows)
    if missing:
        raise ValidationError("attribute_rows", f"no attribute row for class ids {missing}")
    n = b.features.shape[0]
    for key in INDEX_KEYS:
        idx = getattr(b, key)
        if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= n)):
            raise ValidationError("index_bounds", f"{key} must index rows 0..{n - 1}")
    if b.train_seen_idx.size == 0:
        raise ValidationError("nonempty_train", "train_seen_idx is empty")
    rules = (
        ("train_labels_seen", "train_seen_idx", seen),
        ("test_seen_labels", "test_seen_idx", seen),
        ("test_unseen_labels", "test_unseen_idx", unseen),
    )
    for rule, key, allowed in rules:
        bad = sorted(set(b.labels[getattr(b, key)].tolist()) - allowed)
        if bad:
            raise ValidationError(rule, f"{key} contains labels {bad}")


# ------------------------------------------------------------------ manifest


def _ref(manifest_dir: Path, spec, cache: dict) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=np.int64)
    if not isinstance(spec, dict) or "path" not in spec or "entry" not in spec:
        raise DataError(f"manifest reference must be a list or {{path, entry}}, got {spec!r}")
    path = manifest_dir / spec["path"]
    if path not in cache:
        if not path.exists():
            raise DataError(f"manifest references missing file {path}")
        cache[path] = read_sdtensor(path)
    try:
        return cache[path][spec["entry"]]
    except KeyError:
        raise DataError(f"entry {spec['entry']!r} not found in {path}") from None


def load_bundle(manifest_path) -> DatasetBundle:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    required = ("features", "labels", "attributes", "seen_classes", "unseen_classes", *INDEX_KEYS)
    absent = [k for k in required if k not in manifest]
    if absent:
        raise DataError(f"manifest {manifest_path} lacks keys: {', '.join(absent)}")
    base = manifest_path.parent
    cache: dict = {}
    features = _ref(base, manifest["features"], cache)
    if features.dtype.kind != "f":
        raise ValidationError("features_dtype", f"features must be floating point, got {features.dtype}")
    bundle = DatasetBundle(
        features=features,
        labels=_ref(base, manifest["labels"], cache).astype(np.int64),
        attributes=_ref(base, manifest["attributes"], cache),
        seen_classes=np.asarray(manifest["seen_classes"], dtype=np.int64),
        unseen_classes=np.asarray(manifest["unseen_classes"], dtype=np.int64),
        **{k: _ref(base, manifest[k], cache).astype(np.int64) for k in INDEX_KEYS},
    )
    return bundle.validate()


def save_bundle(bundle: DatasetBundle, out_dir, stem: str = "data", extra: dict | None = None) -> Path:
    """Write ``<stem>.sdt`` plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensor_file = f"{stem}.sdt"
    arrays = {
        "features": bundle.features,
        "labels": bundle.labels.astype(np.int64),
        "attributes": bundle.attributes,
        **{k: bundle.__dict__[k].astype(np.int64) for k in INDEX_KEYS},
    }
    if extra:
        arrays.update(extra)
    write_sdtensor(out_dir / tensor_file, arrays)
    manifest = {
        "features": {"path": tensor_file, "entry": "features"},
        "labels": {"path": tensor_file, "entry": "labels"},
        "attributes": {"path": tensor_file, "entry": "attributes"},
        "seen_classes": bundle.seen_classes.tolist(),
        "unseen_classes": bundle.unseen_classes.tolist(),
        **{k: {"path": tensor_file, "entry": k} for k in INDEX_KEYS},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    a_unique: np.ndarray
    y_unique: np.ndarray
    idx: np.ndarray


def make_batch(bundle: DatasetBundle, idx: np.ndarray) -> Batch:
    y = bundle.labels[idx]
    y_unique = np.unique(y)
    return Batch(
        x=bundle.features[idx],
        y=y,
        a=bundle.attributes[y],
        a_unique=bundle.attributes[y_unique],
        y_unique=y_unique,
        idx=idx,
    )


def batch_iterator(bundle: DatasetBundle, batch_size: int, rng) -> Iterator[Batch]:
    """One shuffled pass over the seen training split; the last batch may be short."""
    train = bundle.train_seen_idx
    if batch_size > train.size:
        raise DataError(f"batch size {batch_size} exceeds training set size {train.size}")
    order = train[rng.permutation(train.size)]
    for start in range(0, order.size, batch_size):
        yield make_batch(bundle, order[start:start + batch_size])

