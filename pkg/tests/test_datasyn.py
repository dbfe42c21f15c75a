import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.neighbors import NearestCentroid

from tical.datasyn import (Dataset, SyntheticSpec, decode_dataset, encode_dataset, generate, manifest_text,
                           parse_manifest, payload_checksum, read_csv, read_dataset, split_dataset, write_csv,
                           write_dataset)
from tical.errors import FormatError, GenerationError, InvalidSpecError


def small(**kw):
    base = dict(n_samples=300, seed=1)
    base.update(kw)
    return SyntheticSpec(**base)


def test_no_conflict_means_equal_gen_labels():
    ds = generate(small(p_conflict=0.0))
    assert np.all(ds.gen_labels == ds.label[:, None])
    assert not ds.conflict_mask.any()


def test_conflict_fraction_within_binomial_bound():
    ds = generate(SyntheticSpec(n_samples=10000, p_conflict=0.3, seed=5))
    frac = ds.conflict_mask.mean()
    assert 0.283 <= frac <= 0.317


def test_conflicts_touch_exactly_one_nonlanguage_modality():
    ds = generate(small(p_conflict=0.5, n_samples=2000))
    g = ds.gen_labels
    assert np.array_equal(g[:, 0], ds.label)
    changed = (g[:, 1:] != ds.label[:, None]).sum(1)
    assert set(np.unique(changed)) <= {0, 1}
    assert np.array_equal(changed == 1, ds.conflict_mask)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_language_is_untouched_by_conflict(seed, p):
    with_conflict = generate(small(seed=seed, p_conflict=p, n_samples=200))
    assert np.array_equal(with_conflict.gen_labels[:, 0], with_conflict.label)


def test_same_seed_byte_identical(tmp_path):
    write_dataset(generate(small(seed=9)), tmp_path / "a.ticd")
    write_dataset(generate(small(seed=9)), tmp_path / "b.ticd")
    assert (tmp_path / "a.ticd").read_bytes() == (tmp_path / "b.ticd").read_bytes()
    write_dataset(generate(small(seed=10)), tmp_path / "c.ticd")
    assert (tmp_path / "a.ticd").read_bytes() != (tmp_path / "c.ticd").read_bytes()


def test_binary_round_trip(tmp_path):
    ds = generate(small(p_conflict=0.4))
    write_dataset(ds, tmp_path / "d.ticd")
    back = read_dataset(tmp_path / "d.ticd")
    assert back.equals(ds)
    assert back.dims == ds.dims and len(back) == len(ds)


def test_header_layout():
    ds = generate(small(n_samples=10, dims=(3, 2, 1), n_classes=4))
    blob = encode_dataset(ds)
    assert blob[:4] == b"TICD"
    assert struct.unpack_from("<H5I", blob, 4) == (1, 4, 3, 2, 1, 10)
    rec = 2 + 6 + 4 * 6
    assert len(blob) == 26 + 10 * rec + 4
    assert struct.unpack_from("<H", blob, 26)[0] == ds.label[0]
    assert np.frombuffer(blob, "<f4", count=6, offset=34).tolist() == np.concatenate(
        [x[0] for x in ds.inputs]).tolist()


def test_checksum_recomputed_equals_stored():
    blob = encode_dataset(generate(small()))
    recomputed, stored = payload_checksum(blob)
    assert recomputed == stored == zlib.crc32(blob[26:-4])


def test_corrupt_magic_names_offset_zero():
    blob = bytearray(encode_dataset(generate(small())))
    blob[1] ^= 0xFF
    with pytest.raises(FormatError) as exc:
        decode_dataset(bytes(blob))
    assert exc.value.offset == 0


def test_payload_corruption_fails_checksum():
    blob = bytearray(encode_dataset(generate(small())))
    blob[100] ^= 0x01
    with pytest.raises(FormatError, match="checksum"):
        decode_dataset(bytes(blob))


@pytest.mark.parametrize("cut", [3, 20, 500])
def test_truncation_is_format_error(cut):
    blob = encode_dataset(generate(small()))
    with pytest.raises(FormatError):
        decode_dataset(blob[:cut])
    with pytest.raises(FormatError):
        decode_dataset(blob + b"\0")


def test_bad_version():
    blob = bytearray(encode_dataset(generate(small())))
    blob[4] = 9
    with pytest.raises(FormatError) as exc:
        decode_dataset(bytes(blob))
    assert exc.value.offset == 4


def test_csv_round_trip(tmp_path):
    ds = generate(small(n_samples=50))
    write_csv(ds, tmp_path / "d.csv")
    assert read_csv(tmp_path / "d.csv", ds.n_classes, ds.dims).equals(ds)
    header = (tmp_path / "d.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["label", "gen_l", "gen_v", "gen_a", "l0"] and header[-1] == "a7"


def test_separable_without_conflict():
    spec = SyntheticSpec(n_samples=4000, separation=3.0, noise=0.5, p_conflict=0.0, seed=2)
    ds = generate(spec)
    x = np.concatenate(ds.inputs, axis=1)
    clf = NearestCentroid().fit(x[:2000], ds.label[:2000])
    assert (clf.predict(x[2000:]) == ds.label[2000:]).mean() >= 0.99


def test_infeasible_separation():
    with pytest.raises(GenerationError):
        generate(SyntheticSpec(n_classes=60, dims=(1, 1, 1), separation=4.0, n_samples=10))


@pytest.mark.parametrize("kwargs", [dict(n_classes=1), dict(dims=(3, 0, 2)), dict(separation=0.0),
                                    dict(noise=-1.0), dict(p_conflict=1.5), dict(n_samples=0),
                                    dict(split=(0.5, 0.5, 0.5))])
def test_spec_validation(kwargs):
    with pytest.raises(InvalidSpecError):
        SyntheticSpec(**kwargs)


def test_split_sizes_and_order():
    ds = generate(small(n_samples=1000))
    parts = split_dataset(ds)
    assert [len(parts[k]) for k in ("train", "val", "test")] == [700, 100, 200]
    assert np.array_equal(np.concatenate([parts[k].sample_ids for k in ("train", "val", "test")]), np.arange(1000))


def test_manifest_echo():
    spec = small(p_conflict=0.25)
    m = parse_manifest(manifest_text(spec, {"train": 210}))
    assert m["p_conflict"] == "0.25" and m["dims"] == "16 12 8" and m["count_train"] == "210"


def test_dataset_subset_by_mask():
    ds = generate(small(p_conflict=0.5))
    sub = ds.subset(ds.conflict_mask)
    assert isinstance(sub, Dataset) and sub.conflict_mask.all()
