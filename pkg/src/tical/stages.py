"""The three-stage fusion model and its losses.

* **EP** (early perception): a linear head per modality on the encoded
  feature.
* **CI** (correlative integration): self-attention across the three
  modality tokens, mean-pooled, then an MLP head.
* **AC** (advanced cognition): per-modality MLP heads on
  ``concat(fused, f_m)``.

Every modality encoder is a two-layer MLP with tanh on both layers whose
output is scaled and radially projected into the Poincaré ball; those ball
points are the features used for anchors, typicality and the structure
regulariser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ballgeom
from . import neural as nn
from .consistency import unimodal_weight
from .errors import InvalidInputError
from .neural import Linear, Tensor

MODALITIES = ("l", "v", "a")


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple[int, int, int]
    n_classes: int
    hidden: int = 64
    eps_boundary: float = 1e-5
    eps_arcosh: float = 1e-12
    # The encoder's tanh output is multiplied by this before projection, which
    # bounds feature norms by feature_scale * sqrt(hidden).  Radial clamping
    # has no radial gradient, so features that reach the clamp would stay
    # pinned there; None means 0.95/sqrt(hidden) (norm <= 0.95).
    feature_scale: float | None = None
    # EP logits are multiplied by this; ball features have norm < 1, so an
    # unscaled linear head needs very large weights to become confident.
    # None means sqrt(hidden).
    ep_logit_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise InvalidInputError(f"need three positive input dims, got {self.input_dims}")
        if self.hidden < 1 or self.n_classes < 2:
            raise InvalidInputError("hidden must be >= 1 and n_classes >= 2")

    @property
    def ball_dim(self) -> int:
        return self.hidden

    @property
    def ep_scale(self) -> float:
        return self.ep_logit_scale if self.ep_logit_scale is not None else math.sqrt(self.hidden)

    @property
    def output_scale(self) -> float:
        return self.feature_scale if self.feature_scale is not None else 0.95 / math.sqrt(self.hidden)


@dataclass
class Forward:
    """Graph handles from one forward pass (``features`` are ball points)."""

    features: list[Tensor]
    ep_logits: list[Tensor]
    fused: Tensor
    ci_logits: Tensor
    ac_logits: list[Tensor]

    def outputs(self) -> "StageOutputs":
        soft = lambda t: _softmax_np(t.data)  # noqa: E731
        return StageOutputs([soft(t) for t in self.ep_logits], soft(self.ci_logits),
                            [soft(t) for t in self.ac_logits])


@dataclass
class StageOutputs:
    p_ep: list[np.ndarray]
    p_ci: np.ndarray
    p_ac: list[np.ndarray]
    p_final: np.ndarray | None = None


def _softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class TicalModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        h, k = cfg.hidden, cfg.n_classes
        self.encoders = [(Linear(d, h, rng), Linear(h, h, rng)) for d in cfg.input_dims]
        self.ep_heads = [Linear(h, k, rng) for _ in MODALITIES]
        self.wq = Tensor(nn.xavier_uniform(rng, h, h), requires_grad=True)
        self.wk = Tensor(nn.xavier_uniform(rng, h, h), requires_grad=True)
        self.wv = Tensor(nn.xavier_uniform(rng, h, h), requires_grad=True)
        self.ci_head = (Linear(h, h, rng), Linear(h, k, rng))
        self.ac_heads = [(Linear(2 * h, h, rng), Linear(h, k, rng)) for _ in MODALITIES]

    def parameters(self) -> dict[str, Tensor]:
        """Every trainable tensor under a stable name, in a fixed order."""
        out: dict[str, Tensor] = {}

        def put(prefix, layer):
            for name, p in layer.parameters().items():
                out[f"{prefix}.{name}"] = p

        for m, (l1, l2) in zip(MODALITIES, self.encoders):
            put(f"enc_{m}.0", l1)
            put(f"enc_{m}.1", l2)
        for m, head in zip(MODALITIES, self.ep_heads):
            put(f"ep_{m}", head)
        out["ci.attn.wq"], out["ci.attn.wk"], out["ci.attn.wv"] = self.wq, self.wk, self.wv
        put("ci.0", self.ci_head[0])
        put("ci.1", self.ci_head[1])
        for m, (l1, l2) in zip(MODALITIES, self.ac_heads):
            put(f"ac_{m}.0", l1)
            put(f"ac_{m}.1", l2)
        return out

    # stages ------------------------------------------------------------
    def encode(self, x, modality: int) -> Tensor:
        x = nn.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dims[modality]:
            raise InvalidInputError(
                f"modality {MODALITIES[modality]} expects width {self.cfg.input_dims[modality]}, got {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise InvalidInputError(f"non-finite input in modality {MODALITIES[modality]}")
        l1, l2 = self.encoders[modality]
        z = nn.tanh(l2(nn.tanh(l1(x)))) * self.cfg.output_scale
        return ballgeom.project_rows_t(z, 1.0 - self.cfg.eps_boundary)

    def ep_forward(self, feats: list[Tensor]) -> list[Tensor]:
        return [head(f) * self.cfg.ep_scale for head, f in zip(self.ep_heads, feats)]

    def ci_forward(self, feats: list[Tensor]) -> tuple[Tensor, Tensor]:
        tokens = nn.stack(feats, axis=1)
        fused = nn.scaled_dot_attention(tokens, self.wq, self.wk, self.wv)
        l1, l2 = self.ci_head
        return fused, l2(nn.relu(l1(fused)))

    def ac_forward(self, fused: Tensor, feats: list[Tensor]) -> list[Tensor]:
        return [l2(nn.relu(l1(nn.concat([fused, f], axis=-1))))
                for (l1, l2), f in zip(self.ac_heads, feats)]

    def forward(self, xs) -> Forward:
        feats = [self.encode(x, m) for m, x in enumerate(xs)]
        ep = self.ep_forward(feats)
        fused, ci = self.ci_forward(feats)
        ac = self.ac_forward(fused, feats)
        return Forward(feats, ep, fused, ci, ac)


# --------------------------------------------------------------------------
# losses

def ep_loss(ep_logits, targets, class_weights, reduce: bool = True) -> Tensor:
    """Mean over modalities of the class-weighted cross-entropy."""
    per = [nn.weighted_cross_entropy(z, targets, class_weights, reduce=False) for z in ep_logits]
    v = (per[0] + per[1] + per[2]) * (1.0 / 3.0)
    return v.mean() if reduce else v


def ci_loss(ci_logits, targets, class_weights, reduce: bool = True) -> Tensor:
    return nn.weighted_cross_entropy(ci_logits, targets, class_weights, reduce=reduce)


def ac_loss(ac_logits, targets, class_weights, tau=None, phi=None, reduce: bool = True) -> Tensor:
    """``phi(tau_l) L_l + phi(tau_v) L_v + phi(tau_a) L_a``.

    ``tau`` (or precomputed ``phi``) is (3,) for batch-wide weights or
    (B, 3) for per-sample weights; neither given means all weights are 1.
    """
    if phi is None:
        phi = np.ones(3) if tau is None else unimodal_weight(np.asarray(tau, dtype=np.float64))
    phi = np.asarray(phi, dtype=np.float64)
    total = None
    for m, z in enumerate(ac_logits):
        term = nn.weighted_cross_entropy(z, targets, class_weights, reduce=False) * phi[..., m]
        total = term if total is None else total + term
    return total.mean() if reduce else total


def task_loss(kappa, l_ep, l_ci, l_ac):
    """``kappa L_EP + L_CI + (1 - kappa) L_AC``; works per sample when kappa is a vector."""
    if isinstance(kappa, np.ndarray) or np.ndim(kappa) > 0:
        kappa = np.asarray(kappa, dtype=np.float64)
    return l_ep * kappa + l_ci + l_ac * (1.0 - kappa)


def total_loss(task, hyp, phase: str):
    """Early phase trains on the task loss alone; the late phase adds the
    (already negated) structure term."""
    if phase == "early" or hyp is None:
        return task
    if phase != "late":
        raise InvalidInputError(f"phase must be 'early' or 'late', got {phase!r}")
    return task + hyp


def fuse_predictions(kappa, p_ep, p_ci, p_ac):
    """Consistency-weighted fusion of stage distributions.

    ``p_ep`` and ``p_ac`` hold one distribution (or batch of them) per
    modality and are averaged first.  Returns the unnormalised score and
    its argmax (lowest index on ties).
    """
    pe = (np.asarray(p_ep[0]) + np.asarray(p_ep[1]) + np.asarray(p_ep[2])) / 3.0
    pa = (np.asarray(p_ac[0]) + np.asarray(p_ac[1]) + np.asarray(p_ac[2])) / 3.0
    k = np.asarray(kappa, dtype=np.float64)
    if k.ndim == 1:
        k = k[:, None]
    p_final = k * pe + np.asarray(p_ci) + (1.0 - k) * pa
    return p_final, np.argmax(p_final, axis=-1)
