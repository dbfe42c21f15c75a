"""Typicality, pseudo-label discrepancy and inter-modal consistency.

Given each sample's distance to its nearest anchor in every modality:

* typicality rescales a modality's distances within the batch to [0, 1],
  1 for the closest sample and 0 for the farthest;
* the label discrepancy is the mean absolute deviation of the three pseudo
  labels' scores from their mean, raised to the power ``rho``;
* consistency is ``sqrt((tau_l * tau_v * tau_a) ** t * exp(-k * d_label))``;
* the per-modality loss weight is ``exp(1 - tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

_FLAT_BATCH = 1e-12


@dataclass(frozen=True)
class ConsistencyParams:
    t: float = 0.2
    k: float = 0.5
    rho: float = 4.0
    label_scale: tuple[float, ...] = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    # "symmetric" averages |s_m - mu| over l, v, a.  "printed" counts the
    # visual deviation twice and drops the acoustic one.
    discrepancy_form: str = "symmetric"

    def __post_init__(self):
        if self.t <= 0 or self.k < 0 or self.rho <= 0:
            raise InvalidInputError(f"need t > 0, k >= 0, rho > 0 (got {self.t}, {self.k}, {self.rho})")
        if self.discrepancy_form not in ("symmetric", "printed"):
            raise InvalidInputError(f"unknown discrepancy form {self.discrepancy_form!r}")
        object.__setattr__(self, "label_scale", tuple(float(s) for s in self.label_scale))

    @property
    def scale_array(self) -> np.ndarray:
        return np.asarray(self.label_scale)


@dataclass
class ConsistencyReport:
    """Per-sample consistency quantities for one batch.

    Arrays are indexed ``[sample]`` or ``[sample, modality]`` with modalities
    ordered (l, v, a).
    """

    d: np.ndarray
    tau: np.ndarray
    pseudo: np.ndarray
    d_label: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.phi is None:
            self.phi = unimodal_weight(self.tau)

    def __len__(self):
        return self.kappa.shape[0]

    def row(self, i: int) -> dict:
        return {
            "d": self.d[i].tolist(),
            "tau": self.tau[i].tolist(),
            "pseudo": [int(y) for y in self.pseudo[i]],
            "d_label": float(self.d_label[i]),
            "kappa": float(self.kappa[i]),
        }


def batch_typicality(distances) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise InvalidInputError("typicality needs a non-empty batch")
    hi, lo = d.max(), d.min()
    if hi - lo < _FLAT_BATCH:
        return np.ones_like(d)
    return (hi - d) / (hi - lo)


def typicality(d_m: float, d_batch) -> float:
    batch = np.asarray(d_batch, dtype=np.float64).reshape(-1)
    if batch.size == 0:
        raise InvalidInputError("typicality needs a non-empty batch")
    hits = np.flatnonzero(batch == d_m)
    if hits.size == 0:
        raise InvalidInputError(f"distance {d_m!r} is not a member of the batch")
    return float(batch_typicality(batch)[hits[0]])


def label_discrepancy_batch(pseudo: np.ndarray, params: ConsistencyParams) -> np.ndarray:
    """``pseudo`` is an (n, 3) array of class indices ordered (l, v, a)."""
    pseudo = np.asarray(pseudo, dtype=np.intp)
    scale = params.scale_array
    if np.any(pseudo < 0) or np.any(pseudo >= scale.size):
        raise InvalidInputError(f"pseudo labels outside the label scale (size {scale.size})")
    s = scale[pseudo]
    mu = (s[:, 0] + s[:, 1] + s[:, 2]) / 3.0
    dev = np.abs(s - mu[:, None])
    if params.discrepancy_form == "symmetric":
        mad = (dev[:, 0] + dev[:, 1] + dev[:, 2]) / 3.0
    else:
        mad = (dev[:, 0] + dev[:, 1] + dev[:, 1]) / 3.0
    return mad ** params.rho


def label_discrepancy(y_l: int, y_v: int, y_a: int, params: ConsistencyParams) -> float:
    return float(label_discrepancy_batch(np.array([[y_l, y_v, y_a]]), params)[0])


def consistency(tau_l, tau_v, tau_a, d_label, params: ConsistencyParams):
    """Works elementwise on scalars or arrays."""
    prod = np.asarray(tau_l, dtype=np.float64) * tau_v * tau_a
    if np.any(prod < 0) or np.any(prod > 1):
        raise InvalidInputError("typicality values must lie in [0, 1]")
    kappa = np.sqrt(prod ** params.t * np.exp(-params.k * np.asarray(d_label, dtype=np.float64)))
    return float(kappa) if kappa.ndim == 0 else kappa


def unimodal_weight(tau):
    """Loss weight ``exp(1 - tau)``: 1 for a fully typical modality, e for the least typical."""
    w = np.exp(1.0 - np.asarray(tau, dtype=np.float64))
    return float(w) if w.ndim == 0 else w


def estimate(d: np.ndarray, pseudo: np.ndarray, params: ConsistencyParams) -> ConsistencyReport:
    """Consistency quantities for a batch from nearest-anchor distances and labels.

    ``d`` and ``pseudo`` are (n, 3); typicality is normalised per modality
    over the n rows.
    """
    d = np.asarray(d, dtype=np.float64)
    tau = np.stack([batch_typicality(d[:, m]) for m in range(3)], axis=1)
    d_label = label_discrepancy_batch(pseudo, params)
    kappa = consistency(tau[:, 0], tau[:, 1], tau[:, 2], d_label, params)
    return ConsistencyReport(d, tau, np.asarray(pseudo, dtype=np.intp), d_label, np.atleast_1d(kappa))

