"""Poincaré-ball points, radial projection and the hyperbolic distance.

Curvature is fixed at -1.  Plain numpy versions serve anchor lookups and
evaluation; the ``*_t`` variants build autodiff graphs for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural as nn
from .errors import InvalidInputError
from .neural import Tensor


@dataclass(frozen=True)
class BallConfig:
    dimension: int
    eps_boundary: float = 1e-5
    eps_arcosh: float = 1e-12

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidInputError(f"ball dimension must be >= 1, got {self.dimension}")
        if not 0.0 < self.eps_boundary < 1.0:
            raise InvalidInputError(f"eps_boundary must lie in (0, 1), got {self.eps_boundary}")
        if self.eps_arcosh <= 0.0:
            raise InvalidInputError(f"eps_arcosh must be positive, got {self.eps_arcosh}")

    @property
    def max_norm(self) -> float:
        return 1.0 - self.eps_boundary


def row_norms(v: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row of a 2-D array.

    Every ball-membership test goes through this one function so that the
    projection and the invariant checks agree to the last bit.
    """
    return np.sqrt(np.einsum("ij,ij->i", v, v))


@dataclass(frozen=True)
class BallPoint:
    """A point strictly inside the unit ball (norm <= 1 - eps_boundary)."""

    coords: np.ndarray = field(repr=False)
    eps_boundary: float = 1e-5

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64).reshape(-1)
        if c.size < 1 or not np.all(np.isfinite(c)):
            raise InvalidInputError("ball point coordinates must be finite and non-empty")
        norm = row_norms(c[None, :])[0]
        if norm > 1.0 - self.eps_boundary:
            raise InvalidInputError(f"norm {norm:.6g} exceeds 1 - {self.eps_boundary:g}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dimension(self) -> int:
        return self.coords.size


def project_to_ball(v, cfg: BallConfig) -> BallPoint:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != cfg.dimension:
        raise InvalidInputError(f"expected dimension {cfg.dimension}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("cannot project a non-finite vector")
    return BallPoint(project_rows(v[None, :], cfg.max_norm)[0], cfg.eps_boundary)


def project_rows(v: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale every row whose norm exceeds ``max_norm`` onto that radius."""
    flat = v.reshape(-1, v.shape[-1])
    norms = row_norms(flat)[:, None]
    scale = np.where(norms > max_norm, max_norm / np.where(norms > 0, norms, 1.0), 1.0)
    # Rounding can leave max_norm/|v| * v a hair outside; shrink ulp by ulp.
    out = flat * scale
    over = row_norms(out)[:, None] > max_norm
    while np.any(over):
        out = np.where(over, out * np.nextafter(1.0, 0.0), out)
        over = row_norms(out)[:, None] > max_norm
    return out.reshape(v.shape)


def project_rows_t(v: Tensor, max_norm: float) -> Tensor:
    """Differentiable radial projection of each row of ``v``."""
    vd = v.data
    norms = np.linalg.norm(vd, axis=-1, keepdims=True)
    outside = norms > max_norm
    safe = np.where(outside, norms, 1.0)
    out = project_rows(vd, max_norm)
    unit = vd / safe

    def bw(g):
        radial = (g * unit).sum(axis=-1, keepdims=True)
        proj = (max_norm / safe) * (g - unit * radial)
        return (np.where(outside, proj, g),)

    return nn.make_op(out, (v,), bw, "project_to_ball")


def ball_distance(p, q) -> float:
    """Hyperbolic distance between two ball points (or raw coordinate vectors)."""
    pc = p.coords if isinstance(p, BallPoint) else np.asarray(p, dtype=np.float64)
    qc = q.coords if isinstance(q, BallPoint) else np.asarray(q, dtype=np.float64)
    return float(distance_rows(pc[None, :], qc[None, :])[0])


def arcosh1p(u: np.ndarray) -> np.ndarray:
    """``arcosh(1 + u)`` without the cancellation of forming ``1 + u`` first.

    Negative ``u`` (rounding noise) is clamped to 0, i.e. the arcosh
    argument is clamped to 1.
    """
    u = np.maximum(u, 0.0)
    return np.log1p(u + np.sqrt(u * (u + 2.0)))


def _excess(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``z - 1`` where ``z`` is the arcosh argument of the distance formula."""
    diff = x - y
    num = np.einsum("...i,...i->...", diff, diff)
    den = (1.0 - np.einsum("...i,...i->...", x, x)) * (1.0 - np.einsum("...i,...i->...", y, y))
    return 2.0 * num / den


def distance_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise distances between equally shaped (or broadcastable) point arrays."""
    return arcosh1p(_excess(x, y))


def distance_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """All distances between rows of ``x`` (n x d) and rows of ``y`` (m x d)."""
    sx = np.einsum("ij,ij->i", x, x)
    sy = np.einsum("ij,ij->i", y, y)
    diff = x[:, None, :] - y[None, :, :]
    num = np.einsum("ijk,ijk->ij", diff, diff)
    return arcosh1p(2.0 * num / np.outer(1.0 - sx, 1.0 - sy))


def euclidean_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def distance_rows_t(x: Tensor, y: Tensor, eps_arcosh: float = 1e-12) -> Tensor:
    """Differentiable row-wise hyperbolic distance."""
    diff = x - y
    num = (diff * diff).sum(axis=-1)
    den = (1.0 - (x * x).sum(axis=-1)) * (1.0 - (y * y).sum(axis=-1))
    return nn.arcosh1p(2.0 * num / den, eps=eps_arcosh)


def euclidean_rows_t(x: Tensor, y: Tensor) -> Tensor:
    diff = x - y
    return nn.sqrt((diff * diff).sum(axis=-1))


def pairwise_distance_t(x: Tensor, eps_arcosh: float = 1e-12) -> Tensor:
    """Hyperbolic distances of all row pairs i<j (``np.triu_indices`` order).

    One graph node with a closed-form backward; equivalent to gathering the
    pairs and calling :func:`distance_rows_t`, but much cheaper.
    """
    x = nn.as_tensor(x)
    xd = x.data
    n = xd.shape[0]
    iu = np.triu_indices(n, 1)
    alpha = 1.0 - np.einsum("ij,ij->i", xd, xd)
    diff = xd[:, None, :] - xd[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    den = np.outer(alpha, alpha)
    u = 2.0 * sq / den

    def bw(g):
        w = np.zeros((n, n))
        w[iu] = g
        w = w + w.T
        uc = np.maximum(u, eps_arcosh)
        # d u_ij / d x_i = 4 (x_i - x_j) / (a_i a_j) + 4 |x_i - x_j|^2 x_i / (a_i^2 a_j)
        c = 4.0 * w / (np.sqrt(uc * (uc + 2.0)) * den)
        c_self = c * sq / alpha[:, None]
        return (xd * (c.sum(axis=1) + c_self.sum(axis=1))[:, None] - c @ xd,)

    return nn.make_op(arcosh1p(u)[iu], (x,), bw, "pairwise_distance")


def pairwise_euclidean_t(x: Tensor) -> Tensor:
    """Euclidean counterpart of :func:`pairwise_distance_t`."""
    x = nn.as_tensor(x)
    xd = x.data
    n = xd.shape[0]
    iu = np.triu_indices(n, 1)
    diff = xd[:, None, :] - xd[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def bw(g):
        w = np.zeros((n, n))
        w[iu] = g
        w = w + w.T
        c = np.divide(w, dist, out=np.zeros_like(w), where=dist > 0)
        return (xd * c.sum(axis=1)[:, None] - c @ xd,)

    return nn.make_op(dist[iu], (x,), bw, "pairwise_euclidean")
