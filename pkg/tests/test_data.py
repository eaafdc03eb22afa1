import dataclasses
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sdgzsl.data import (
    SyntheticSpec,
    batch_iterator,
    decode_sdtensor,
    encode_sdtensor,
    generate_synthetic,
    load_bundle,
    make_batch,
    read_sdtensor,
    save_bundle,
    write_sdtensor,
)
from sdgzsl.errors import ConfigError, DataError, FormatError, ValidationError
from sdgzsl.tensor import Rng


@pytest.fixture(scope="module")
def bundle():
    return generate_synthetic(SyntheticSpec(per_class=20, seed=3))[0]


class TestSDTensor:
    def test_round_trip(self):
        arrays = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array([1.5, -2.25]),
            "idx": np.array([[3, 4]], dtype=np.int64),
            "scalar": np.array(7.0),
        }
        out = decode_sdtensor(encode_sdtensor(arrays))
        assert list(out) == list(arrays)
        for k, v in arrays.items():
            assert out[k].dtype == v.dtype and out[k].shape == v.shape
            np.testing.assert_array_equal(out[k], v)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(st.sampled_from([np.float32, np.float64, np.int64]),
                      hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4)))
    def test_round_trip_property(self, arr):
        out = decode_sdtensor(encode_sdtensor({"x": arr}))["x"]
        assert out.dtype == arr.dtype and out.shape == arr.shape
        assert out.tobytes() == arr.tobytes()

    def test_known_bytes(self):
        buf = encode_sdtensor({"v": np.array([1, 2], dtype=np.int64)})
        expected = (b"SDT1" + struct.pack("<I", 1) + struct.pack("<H", 1) + b"v" + bytes([2, 1])
                    + struct.pack("<Q", 2) + struct.pack("<2q", 1, 2))
        assert buf == expected

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="offset 0"):
            decode_sdtensor(b"NOPE" + b"\0" * 8)

    def test_truncated(self):
        buf = encode_sdtensor({"v": np.ones(4)})
        with pytest.raises(FormatError, match="offset"):
            decode_sdtensor(buf[:-3])

    def test_trailing_bytes(self):
        buf = encode_sdtensor({"v": np.ones(2)})
        with pytest.raises(FormatError):
            decode_sdtensor(buf + b"\0")

    def test_unknown_dtype_code(self):
        buf = bytearray(encode_sdtensor({"v": np.ones(2)}))
        buf[4 + 4 + 2 + 1] = 9
        with pytest.raises(FormatError):
            decode_sdtensor(bytes(buf))

    def test_unsupported_dtype(self):
        with pytest.raises(FormatError):
            encode_sdtensor({"c": np.array([1 + 2j])})

    def test_file_io(self, tmp_path):
        path = tmp_path / "t.sdt"
        write_sdtensor(path, {"x": np.eye(3)})
        np.testing.assert_array_equal(read_sdtensor(path)["x"], np.eye(3))
        assert not list(tmp_path.glob("*.tmp"))


class TestBundle:
    def test_save_load_round_trip(self, bundle, tmp_path):
        manifest = save_bundle(bundle, tmp_path)
        assert load_bundle(manifest).equals(bundle)

    def test_inline_index_lists(self, bundle, tmp_path):
        manifest = save_bundle(bundle, tmp_path)
        doc = json.loads(manifest.read_text())
        doc["test_unseen_idx"] = bundle.test_unseen_idx.tolist()
        manifest.write_text(json.dumps(doc))
        assert load_bundle(manifest).equals(bundle)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_bundle(tmp_path / "none.json")

    def test_missing_key(self, bundle, tmp_path):
        manifest = save_bundle(bundle, tmp_path)
        doc = json.loads(manifest.read_text())
        del doc["labels"]
        manifest.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="labels"):
            load_bundle(manifest)

    def test_missing_entry(self, bundle, tmp_path):
        manifest = save_bundle(bundle, tmp_path)
        doc = json.loads(manifest.read_text())
        doc["features"]["entry"] = "nope"
        manifest.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_bundle(manifest)

    @pytest.mark.parametrize("rule,change", [
        ("disjoint_classes", lambda b: dict(unseen_classes=np.append(b.unseen_classes, b.seen_classes[0]))),
        ("attribute_rows", lambda b: dict(attributes=b.attributes[:-1])),
        ("index_bounds", lambda b: dict(test_seen_idx=np.append(b.test_seen_idx, 10 ** 6))),
        ("nonempty_train", lambda b: dict(train_seen_idx=np.array([], dtype=np.int64))),
        ("train_labels_seen", lambda b: dict(train_seen_idx=np.append(b.train_seen_idx, b.test_unseen_idx[0]))),
        ("test_unseen_labels", lambda b: dict(test_unseen_idx=np.append(b.test_unseen_idx, b.train_seen_idx[0]))),
        ("finite_values", lambda b: dict(features=np.where(np.eye(*b.features.shape, dtype=bool), np.nan, b.features))),
        ("labels_shape", lambda b: dict(labels=b.labels[:-1])),
    ])
    def test_validation_rules(self, bundle, rule, change):
        with pytest.raises(ValidationError) as info:
            dataclasses.replace(bundle, **change(bundle)).validate()
        assert info.value.rule == rule

    def test_split(self, bundle):
        x, y = bundle.split("test_unseen")
        assert x.shape[0] == y.shape[0] == bundle.test_unseen_idx.size
        assert set(y.tolist()) <= set(bundle.unseen_classes.tolist())


class TestBatching:
    def test_epoch_covers_training_split_once(self, bundle):
        idx = np.concatenate([b.idx for b in batch_iterator(bundle, 32, Rng(0, "shuffle"))])
        assert sorted(idx.tolist()) == sorted(bundle.train_seen_idx.tolist())

    def test_last_batch_short(self, bundle):
        sizes = [b.x.shape[0] for b in batch_iterator(bundle, 50, Rng(0, "shuffle"))]
        n = bundle.train_seen_idx.size
        assert sum(sizes) == n and sizes[-1] == n - 50 * (len(sizes) - 1)

    def test_oversized_batch(self, bundle):
        with pytest.raises(DataError):
            next(batch_iterator(bundle, 10 ** 6, Rng(0)))

    def test_same_seed_same_order(self, bundle):
        first = [b.idx for b in batch_iterator(bundle, 16, Rng(4, "shuffle"))]
        second = [b.idx for b in batch_iterator(bundle, 16, Rng(4, "shuffle"))]
        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    def test_batch_fields(self, bundle):
        b = make_batch(bundle, bundle.train_seen_idx[:10])
        np.testing.assert_array_equal(b.a, bundle.attributes[b.y])
        np.testing.assert_array_equal(b.y_unique, np.unique(b.y))
        np.testing.assert_array_equal(b.a_unique, bundle.attributes[b.y_unique])


class TestSynthetic:
    def test_shapes_and_split(self):
        spec = SyntheticSpec(per_class=10, seed=1)
        b, truth = generate_synthetic(spec)
        assert b.features.shape == (100, spec.feature_dim)
        assert b.attributes.shape == (10, spec.attr_dim)
        assert b.unseen_classes.size == 2 and b.seen_classes.size == 8
        assert b.train_seen_idx.size == 8 * 8 and b.test_seen_idx.size == 8 * 2
        assert truth["semantic"].shape == (100, spec.semantic_dim)
        assert truth["nuisance"].shape == (100, spec.nuisance_dim)

    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(seed=7, per_class=5))[0]
        b = generate_synthetic(SyntheticSpec(seed=7, per_class=5))[0]
        c = generate_synthetic(SyntheticSpec(seed=8, per_class=5))[0]
        assert a.equals(b) and not a.equals(c)

    def test_nuisance_is_class_independent(self):
        b, truth = generate_synthetic(SyntheticSpec(seed=2, per_class=400))
        means = np.stack([truth["nuisance"][b.labels == c].mean(axis=0) for c in range(10)])
        assert np.abs(means).max() < 0.25

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticSpec(feature_dim=4))
