"""Binary checkpoint container for a :class:`~tical.trainer.Trainer`.

Layout (little-endian)::

    b"TICK", u16 version
    u32 n, n bytes   config echo (UTF-8 JSON: train config, input dims, K)
    u32 epoch
    u32 P, then P parameters:
        u16 n, name bytes, u8 ndim, ndim x u32 shape, f8 values
    Adam: u64 step, f8 lr, then for each parameter in the same order its
        first and second moment (f8, same shape)
    u8 has_weights [, K x f8 class weights]
    3 anchor lists: u64 next_seq, u32 count, u32 dim,
        count x (i64 seq, i64 label, dim x f8 feature)
    u32 CRC-32 of everything above

Everything is written in a fixed order, so the same trainer state always
serialises to the same bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .anchors import AnchorList
from .errors import CompatibilityError, FormatError
from .trainer import TrainConfig, Trainer

MAGIC = b"TICK"
VERSION = 1


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def blob(self, data: bytes):
        self.pack("I", len(data))
        self.parts.append(data)

    def array(self, a: np.ndarray):
        self.parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def _need(self, n: int):
        if self.pos + n > self.end:
            raise FormatError(f"truncated checkpoint: need {n} more bytes", self.pos)

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        self._need(s.size)
        out = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return out if len(out) > 1 else out[0]

    def raw(self, n: int) -> bytes:
        self._need(n)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def blob(self) -> bytes:
        return self.raw(self.unpack("I"))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        self._need(8 * count)
        out = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos)
        self.pos += 8 * count
        return out.astype(np.float64).reshape(shape)


def config_echo(trainer: Trainer) -> dict:
    return {
        "train": trainer.cfg.to_dict(),
        "input_dims": list(trainer.model_cfg.input_dims),
        "n_classes": trainer.n_classes,
    }


def encode_checkpoint(trainer: Trainer) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("H", VERSION)
    w.blob(json.dumps(config_echo(trainer), sort_keys=True).encode())
    w.pack("I", trainer.epoch)
    params = trainer.model.parameters()
    w.pack("I", len(params))
    for name, p in params.items():
        raw = name.encode()
        w.pack("H", len(raw))
        w.parts.append(raw)
        w.pack("B", p.data.ndim)
        w.pack(f"{p.data.ndim}I", *p.data.shape)
        w.array(p.data)
    opt = trainer.optimizer
    w.pack("Qd", opt.step_count, opt.lr)
    for name in params:
        w.array(opt.m[name])
        w.array(opt.v[name])
    if trainer.class_weights is None:
        w.pack("B", 0)
    else:
        w.pack("B", 1)
        w.array(trainer.class_weights)
    for hasl in trainer.hasl:
        st = hasl.state()
        feats = st["features"]
        w.pack("QII", st["next_seq"], len(st["seqs"]), feats.shape[1] if feats.ndim == 2 else 0)
        for seq, label, f in zip(st["seqs"], st["labels"], feats):
            w.pack("qq", int(seq), int(label))
            w.array(f)
    body = w.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Trainer:
    if len(data) < 10:
        raise FormatError("file too short for a checkpoint", len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    end = len(data) - 4
    (stored,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) != stored:
        raise FormatError("checksum mismatch", end)
    r = _Reader(data, end)
    r.pos = 4
    version = r.unpack("H")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    echo = json.loads(r.blob().decode())
    cfg = TrainConfig.from_dict(echo["train"])
    trainer = Trainer(cfg, tuple(echo["input_dims"]), int(echo["n_classes"]))
    trainer.epoch = r.unpack("I")
    params = trainer.model.parameters()
    n_params = r.unpack("I")
    if n_params != len(params):
        raise FormatError(f"expected {len(params)} parameters, found {n_params}", r.pos)
    for expected in params:
        at = r.pos
        name = r.raw(r.unpack("H")).decode()
        ndim = r.unpack("B")
        shape = tuple(np.atleast_1d(r.unpack(f"{ndim}I"))) if ndim else ()
        if name != expected or shape != params[expected].data.shape:
            raise FormatError(f"parameter {name!r} {shape} does not match model slot {expected!r}", at)
        params[expected].data = r.array(shape)
    opt = trainer.optimizer
    opt.step_count, opt.lr = r.unpack("Qd")
    for name, p in params.items():
        opt.m[name] = r.array(p.data.shape)
        opt.v[name] = r.array(p.data.shape)
    if r.unpack("B"):
        trainer.class_weights = r.array((trainer.n_classes,))
    for i, hasl in enumerate(trainer.hasl):
        next_seq, count, dim = r.unpack("QII")
        seqs, labels, feats = [], [], []
        for _ in range(count):
            seq, label = r.unpack("qq")
            seqs.append(seq)
            labels.append(label)
            feats.append(r.array((dim,)))
        st = hasl.state()
        st.update(next_seq=next_seq, seqs=seqs, labels=labels,
                  features=np.stack(feats) if feats else np.zeros((0, dim)))
        trainer.hasl[i] = AnchorList.from_state(st, hasl.max_norm)
    if r.pos != end:
        raise FormatError("trailing bytes before checksum", r.pos)
    return trainer


def save_checkpoint(trainer: Trainer, path) -> None:
    Path(path).write_bytes(encode_checkpoint(trainer))


def load_checkpoint(path) -> Trainer:
    return decode_checkpoint(Path(path).read_bytes())


def check_compatible(trainer: Trainer, input_dims, n_classes: int) -> None:
    """Raise CompatibilityError unless the data shape matches the checkpoint."""
    dims = tuple(int(d) for d in input_dims)
    if dims != trainer.model_cfg.input_dims or int(n_classes) != trainer.n_classes:
        raise CompatibilityError(
            f"checkpoint expects dims {trainer.model_cfg.input_dims} and K={trainer.n_classes}, "
            f"data has dims {dims} and K={n_classes}")
