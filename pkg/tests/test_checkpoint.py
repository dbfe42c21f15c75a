import struct
import zlib

import numpy as np
import pytest

from conftest import SMALL_DIMS, small_config
from tical.checkpoint import (check_compatible, decode_checkpoint, encode_checkpoint, load_checkpoint,
                              save_checkpoint)
from tical.errors import CompatibilityError, FormatError
from tical.trainer import Trainer


def reseal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def test_round_trip_evaluation_is_bit_identical(trained, splits, tmp_path):
    before = trained.evaluate(splits["test"])
    save_checkpoint(trained, tmp_path / "c.tick")
    back = load_checkpoint(tmp_path / "c.tick")
    after = back.evaluate(splits["test"])
    assert np.array_equal(before.outputs.p_final, after.outputs.p_final)
    assert np.array_equal(before.kappa, after.kappa)
    assert before.metrics == after.metrics
    assert back.epoch == trained.epoch and back.cfg == trained.cfg


def test_reencoding_is_byte_identical(trained):
    blob = encode_checkpoint(trained)
    assert encode_checkpoint(decode_checkpoint(blob)) == blob


def test_restored_state_matches(trained):
    back = decode_checkpoint(encode_checkpoint(trained))
    pa, pb = trained.model.parameters(), back.model.parameters()
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
    assert back.optimizer.step_count == trained.optimizer.step_count
    assert back.optimizer.lr == trained.optimizer.lr
    assert all(np.array_equal(trained.optimizer.m[k], back.optimizer.m[k]) for k in pa)
    assert np.array_equal(back.class_weights, trained.class_weights)
    for a, b in zip(trained.hasl, back.hasl):
        assert [(e.seq, e.label) for e in a.entries] == [(e.seq, e.label) for e in b.entries]
        assert a.next_seq == b.next_seq


def test_resumed_training_matches_uninterrupted(splits):
    cfg = small_config(epochs=4, lam=1)
    full = Trainer(cfg, SMALL_DIMS, 7)
    full.fit(splits["train"])
    half = Trainer(cfg.__class__(**{**cfg.__dict__, "epochs": 2}), SMALL_DIMS, 7)
    half.fit(splits["train"])
    resumed = decode_checkpoint(encode_checkpoint(half))
    resumed.cfg = cfg
    resumed.fit(splits["train"])
    pa, pb = full.model.parameters(), resumed.model.parameters()
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)


def test_fresh_trainer_round_trip():
    tr = Trainer(small_config(), SMALL_DIMS, 7)
    back = decode_checkpoint(encode_checkpoint(tr))
    assert back.class_weights is None and all(len(h) == 0 for h in back.hasl)


def test_bad_magic(trained):
    blob = bytearray(encode_checkpoint(trained))
    blob[0:4] = b"NOPE"
    with pytest.raises(FormatError) as exc:
        decode_checkpoint(bytes(blob))
    assert exc.value.offset == 0


def test_checksum_mismatch(trained):
    blob = bytearray(encode_checkpoint(trained))
    blob[200] ^= 0x10
    with pytest.raises(FormatError, match="checksum"):
        decode_checkpoint(bytes(blob))


def test_version_and_truncation(trained):
    body = encode_checkpoint(trained)[:-4]
    with pytest.raises(FormatError) as exc:
        decode_checkpoint(reseal(body[:4] + struct.pack("<H", 7) + body[6:]))
    assert exc.value.offset == 4
    with pytest.raises(FormatError):
        decode_checkpoint(reseal(body[:-100]))
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(reseal(body + b"\0\0"))
    with pytest.raises(FormatError):
        decode_checkpoint(b"TICK")


def test_compatibility(trained):
    check_compatible(trained, SMALL_DIMS, 7)
    with pytest.raises(CompatibilityError):
        check_compatible(trained, (6, 5, 5), 7)
    with pytest.raises(CompatibilityError):
        check_compatible(trained, SMALL_DIMS, 6)
