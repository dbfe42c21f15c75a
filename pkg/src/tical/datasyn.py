"""Synthetic three-modality Gaussian data with injected inter-modal conflicts.

Each class has one prototype per modality.  A sample draws a base class,
and with probability ``p_conflict`` one of the visual/acoustic modalities
is regenerated from a different class.  The language modality always
carries the sample label.

Binary layout (all integers little-endian)::

    offset 0   b"TICD"
    offset 4   u16 version (=1)
    offset 6   u32 K, u32 d_l, u32 d_v, u32 d_a, u32 n
    offset 26  n records: u16 label, 3 x u16 gen_labels, (d_l+d_v+d_a) x f32
    end - 4    u32 CRC-32 of the record bytes

CSV layout: header row, then one row per sample with columns
``label, gen_l, gen_v, gen_a, l0..l{d_l-1}, v0.., a0..``.
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GenerationError, InvalidSpecError

MAGIC = b"TICD"
VERSION = 1
_HEADER = struct.Struct("<4sH5I")
_MAX_PROTOTYPE_TRIES = 10_000


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 7
    dims: tuple[int, int, int] = (16, 12, 8)
    separation: float = 4.0
    noise: float = 0.5
    p_conflict: float = 0.3
    n_samples: int = 6000
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))
        if self.n_classes < 2:
            raise InvalidSpecError("need at least two classes")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidSpecError(f"need three positive dims, got {self.dims}")
        if self.separation <= 0 or self.noise <= 0:
            raise InvalidSpecError("separation and noise must be positive")
        if not 0.0 <= self.p_conflict <= 1.0:
            raise InvalidSpecError(f"p_conflict must lie in [0, 1], got {self.p_conflict}")
        if self.n_samples < 1:
            raise InvalidSpecError("n_samples must be positive")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise InvalidSpecError(f"split fractions must be three nonnegative values summing to 1, got {self.split}")


@dataclass
class Dataset:
    x_l: np.ndarray
    x_v: np.ndarray
    x_a: np.ndarray
    label: np.ndarray
    gen_labels: np.ndarray
    n_classes: int
    sample_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x_l = np.asarray(self.x_l, dtype=np.float32)
        self.x_v = np.asarray(self.x_v, dtype=np.float32)
        self.x_a = np.asarray(self.x_a, dtype=np.float32)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.gen_labels = np.asarray(self.gen_labels, dtype=np.int64).reshape(-1, 3)
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.label), dtype=np.int64)

    def __len__(self):
        return int(self.label.shape[0])

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.x_l.shape[1], self.x_v.shape[1], self.x_a.shape[1])

    @property
    def inputs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.x_l, self.x_v, self.x_a)

    @property
    def conflict_mask(self) -> np.ndarray:
        g = self.gen_labels
        return (g[:, 0] != g[:, 1]) | (g[:, 0] != g[:, 2])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        idx = idx.astype(np.intp, copy=False)
        return Dataset(self.x_l[idx], self.x_v[idx], self.x_a[idx], self.label[idx],
                       self.gen_labels[idx], self.n_classes, self.sample_ids[idx])

    def equals(self, other: "Dataset") -> bool:
        return (self.n_classes == other.n_classes
                and all(np.array_equal(a, b) for a, b in zip(self.inputs, other.inputs))
                and np.array_equal(self.label, other.label)
                and np.array_equal(self.gen_labels, other.gen_labels))


def _prototypes(rng: np.random.Generator, k: int, dim: int, sep: float) -> np.ndarray:
    """Draw k points one at a time, rejecting any closer than ``sep`` to an earlier one."""
    protos: list[np.ndarray] = []
    spread = sep / np.sqrt(2.0)
    for _ in range(k):
        for _ in range(_MAX_PROTOTYPE_TRIES):
            cand = rng.normal(0.0, spread, size=dim)
            if all(np.linalg.norm(cand - p) >= sep for p in protos):
                protos.append(cand)
                break
        else:
            raise GenerationError(
                f"could not place {k} prototypes {sep} apart in {dim} dimensions")
    return np.stack(protos)


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    k, n = spec.n_classes, spec.n_samples
    protos = [_prototypes(rng, k, d, spec.separation) for d in spec.dims]
    base = rng.integers(0, k, size=n)
    conflict = rng.random(n) < spec.p_conflict
    which = rng.integers(1, 3, size=n)              # 1 = visual, 2 = acoustic
    shift = rng.integers(1, k, size=n)              # uniform over the other k-1 classes
    gen = np.repeat(base[:, None], 3, axis=1)
    rows = np.flatnonzero(conflict)
    gen[rows, which[rows]] = (base[rows] + shift[rows]) % k
    xs = [protos[m][gen[:, m]] + rng.normal(0.0, spec.noise, size=(n, d))
          for m, d in enumerate(spec.dims)]
    return Dataset(xs[0], xs[1], xs[2], base, gen, k)


def split_dataset(ds: Dataset, fractions=(0.7, 0.1, 0.2)) -> dict[str, Dataset]:
    """Contiguous train/val/test split (samples are already i.i.d.)."""
    n = len(ds)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return {
        "train": ds.subset(np.arange(0, n_train)),
        "val": ds.subset(np.arange(n_train, n_train + n_val)),
        "test": ds.subset(np.arange(n_train + n_val, n)),
    }


# --------------------------------------------------------------------------
# binary format

def encode_dataset(ds: Dataset) -> bytes:
    n = len(ds)
    d_l, d_v, d_a = ds.dims
    rec = np.dtype([("label", "<u2"), ("gen", "<u2", (3,)), ("x", "<f4", (d_l + d_v + d_a,))])
    arr = np.zeros(n, dtype=rec)
    arr["label"] = ds.label
    arr["gen"] = ds.gen_labels
    arr["x"] = np.concatenate(ds.inputs, axis=1)
    payload = arr.tobytes()
    header = _HEADER.pack(MAGIC, VERSION, ds.n_classes, d_l, d_v, d_a, n)
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def decode_dataset(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size:
        raise FormatError("file shorter than the header", len(blob))
    magic, version, k, d_l, d_v, d_a, n = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    width = d_l + d_v + d_a
    rec = np.dtype([("label", "<u2"), ("gen", "<u2", (3,)), ("x", "<f4", (width,))])
    start = _HEADER.size
    end = start + n * rec.itemsize
    if len(blob) < end + 4:
        raise FormatError(f"truncated payload: need {end + 4} bytes, have {len(blob)}", len(blob))
    if len(blob) > end + 4:
        raise FormatError("trailing bytes after checksum", end + 4)
    payload = blob[start:end]
    (stored,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(payload) != stored:
        raise FormatError("checksum mismatch", end)
    arr = np.frombuffer(payload, dtype=rec)
    x = arr["x"].astype(np.float32)
    labels = arr["label"].astype(np.int64)
    gen = arr["gen"].astype(np.int64)
    if n and (labels.max() >= k or gen.max() >= k):
        bad = int(np.argmax((labels >= k) | (gen >= k).any(axis=1)))
        raise FormatError(f"class index out of range in record {bad}", start + bad * rec.itemsize)
    return Dataset(x[:, :d_l], x[:, d_l:d_l + d_v], x[:, d_l + d_v:], labels, gen, int(k))


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def read_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


def payload_checksum(blob: bytes) -> tuple[int, int]:
    """(recomputed, stored) CRC-32 of a dataset file's record bytes."""
    return zlib.crc32(blob[_HEADER.size:-4]), struct.unpack("<I", blob[-4:])[0]


# --------------------------------------------------------------------------
# CSV and manifest

def csv_columns(dims) -> list[str]:
    d_l, d_v, d_a = dims
    return (["label", "gen_l", "gen_v", "gen_a"] + [f"l{i}" for i in range(d_l)]
            + [f"v{i}" for i in range(d_v)] + [f"a{i}" for i in range(d_a)])


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_columns(ds.dims))
        x = np.concatenate(ds.inputs, axis=1)
        for i in range(len(ds)):
            # repr of the float32 value round-trips exactly through float32()
            w.writerow([int(ds.label[i])] + [int(g) for g in ds.gen_labels[i]]
                       + [repr(float(v)) for v in x[i]])


def read_csv(path, n_classes: int, dims) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != csv_columns(dims):
        raise InvalidSpecError(f"{path}: header does not match dims {tuple(dims)}")
    body = np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
    d_l, d_v, _ = dims
    x = body[:, 4:].astype(np.float32)
    return Dataset(x[:, :d_l], x[:, d_l:d_l + d_v], x[:, d_l + d_v:], body[:, 0].astype(np.int64),
                   body[:, 1:4].astype(np.int64), n_classes)


def manifest_text(spec: SyntheticSpec, counts: dict[str, int] | None = None) -> str:
    lines = []
    for key, value in asdict(spec).items():
        if isinstance(value, (tuple, list)):
            value = " ".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    for name, count in (counts or {}).items():
        lines.append(f"count_{name} = {count}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
