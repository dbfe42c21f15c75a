"""Per-modality lists of high-confidence anchor samples.

Samples the model classifies correctly with confidence above a threshold
are stored as (feature, label) anchors in a fixed-capacity FIFO.  A query
feature receives the label of its nearest anchor together with the distance
to it; ties go to the oldest anchor.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import ballgeom
from .ballgeom import BallPoint
from .errors import InvalidInputError, NotReadyError

MODALITIES = ("l", "v", "a")


@dataclass(frozen=True)
class AnchorEntry:
    feature: np.ndarray
    label: int
    seq: int


class AnchorList:
    """Fixed-capacity FIFO of anchors for one modality.

    With ``balanced=True`` each class keeps its own queue of
    ``capacity // n_classes`` entries, so a frequent class cannot push a rare
    one out entirely.
    """

    def __init__(self, capacity: int = 128, modality: str = "l", min_fill: int = 8,
                 balanced: bool = False, n_classes: int | None = None,
                 metric: str = "ball", max_norm: float = 1.0 - 1e-5):
        if capacity < 1:
            raise InvalidInputError(f"anchor capacity must be positive, got {capacity}")
        if modality not in MODALITIES:
            raise InvalidInputError(f"unknown modality {modality!r}")
        if balanced and not n_classes:
            raise InvalidInputError("balanced anchor lists need n_classes")
        if metric not in ("ball", "euclid"):
            raise InvalidInputError(f"unknown anchor metric {metric!r}")
        self.capacity = capacity
        self.modality = modality
        self.min_fill = min_fill
        self.balanced = balanced
        self.n_classes = n_classes
        self.metric = metric
        self.max_norm = max_norm
        self.next_seq = 0
        if balanced:
            per_class = max(1, capacity // n_classes)
            self._queues = {c: deque(maxlen=per_class) for c in range(n_classes)}
        else:
            self._queue: deque[AnchorEntry] = deque()
        self._cache = None

    def __len__(self):
        if self.balanced:
            return sum(len(q) for q in self._queues.values())
        return len(self._queue)

    @property
    def entries(self) -> list[AnchorEntry]:
        """Snapshot of the stored anchors in insertion (seq) order."""
        if self.balanced:
            return sorted((e for q in self._queues.values() for e in q), key=lambda e: e.seq)
        return list(self._queue)

    def is_ready(self) -> bool:
        return len(self) >= self.min_fill

    def _check_feature(self, feature) -> np.ndarray:
        f = feature.coords if isinstance(feature, BallPoint) else np.asarray(feature, dtype=np.float64)
        if f.ndim != 1 or not np.all(np.isfinite(f)) or ballgeom.row_norms(f[None, :])[0] > self.max_norm:
            raise InvalidInputError("anchor features must be finite points inside the ball")
        return f

    def try_admit(self, feature, true_label: int, predicted_label: int, confidence: float,
                  theta: float) -> bool:
        """Store ``feature`` iff the prediction is right and ``confidence > theta``."""
        if not 0.0 <= theta <= 1.0:
            raise InvalidInputError(f"theta must lie in [0, 1], got {theta}")
        if int(predicted_label) != int(true_label) or not confidence > theta:
            return False
        label = int(true_label)
        entry = AnchorEntry(self._check_feature(feature).copy(), label, self.next_seq)
        self.next_seq += 1
        if self.balanced:
            if not 0 <= label < self.n_classes:
                raise InvalidInputError(f"label {label} outside [0, {self.n_classes})")
            self._queues[label].append(entry)
        else:
            if len(self._queue) >= self.capacity:
                self._queue.popleft()
            self._queue.append(entry)
        self._cache = None
        return True

    def _arrays(self):
        if self._cache is None:
            entries = self.entries
            feats = np.stack([e.feature for e in entries]) if entries else np.zeros((0, 0))
            labels = np.array([e.label for e in entries], dtype=np.intp)
            self._cache = (feats, labels)
        return self._cache

    def nearest_batch(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and label of the nearest anchor for each row of ``features``."""
        if len(self) == 0:
            raise NotReadyError(f"anchor list for modality {self.modality!r} is empty")
        feats, labels = self._arrays()
        q = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.metric == "ball":
            d = ballgeom.distance_matrix(q, feats)
        else:
            d = ballgeom.euclidean_matrix(q, feats)
        idx = np.argmin(d, axis=1)  # first minimum == smallest seq
        rows = np.arange(q.shape[0])
        return d[rows, idx], labels[idx]

    def nearest(self, feature) -> tuple[float, int]:
        f = feature.coords if isinstance(feature, BallPoint) else np.asarray(feature, dtype=np.float64)
        d, y = self.nearest_batch(f[None, :])
        return float(d[0]), int(y[0])

    # checkpoint support -------------------------------------------------
    def state(self) -> dict:
        entries = self.entries
        dim = entries[0].feature.size if entries else 0
        return {
            "modality": self.modality,
            "capacity": self.capacity,
            "min_fill": self.min_fill,
            "balanced": self.balanced,
            "n_classes": self.n_classes or 0,
            "metric": self.metric,
            "next_seq": self.next_seq,
            "seqs": np.array([e.seq for e in entries], dtype=np.int64),
            "labels": np.array([e.label for e in entries], dtype=np.int64),
            "features": (np.stack([e.feature for e in entries]) if entries else np.zeros((0, dim))),
        }

    @classmethod
    def from_state(cls, st: dict, max_norm: float = 1.0 - 1e-5) -> "AnchorList":
        lst = cls(st["capacity"], st["modality"], st["min_fill"], bool(st["balanced"]),
                  st["n_classes"] or None, st["metric"], max_norm)
        for seq, label, feat in zip(st["seqs"], st["labels"], st["features"]):
            entry = AnchorEntry(np.array(feat, dtype=np.float64), int(label), int(seq))
            if lst.balanced:
                lst._queues[int(label)].append(entry)
            else:
                lst._queue.append(entry)
        lst.next_seq = int(st["next_seq"])
        return lst


def nearest(anchor_list: AnchorList, feature) -> tuple[float, int]:
    return anchor_list.nearest(feature)


def try_admit(anchor_list: AnchorList, feature, true_label, predicted_label, confidence, theta) -> bool:
    return anchor_list.try_admit(feature, true_label, predicted_label, confidence, theta)


def is_ready(anchor_list: AnchorList) -> bool:
    return anchor_list.is_ready()
