"""Two-phase training loop with anchor-list upkeep and consistency weighting.

Epochs are numbered from 1.  Through epoch ``lam`` every sample uses the
constant ``kappa0`` and unit modality weights, and no structure term is
added.  Afterwards each batch gets nearest-anchor pseudo labels,
batch-relative typicality and per-sample consistency, which weight the
stage losses; the structure regulariser joins the objective.  Anchor
admission runs in both phases off the EP heads' predictions.
"""

from __future__ import annotations

import json
import logging
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import neural as nn
from .anchors import MODALITIES, AnchorList
from .consistency import ConsistencyParams, ConsistencyReport, estimate
from .datasyn import Dataset
from .emotree import EmotionTree, TreeSpec, build_tree, default_label_scale
from .errors import InvalidInputError, InvalidSpecError, NumericalError
from .metrics import compute_metrics
from .stages import (ModelConfig, StageOutputs, TicalModel, ac_loss, ci_loss, ep_loss,
                     fuse_predictions, task_loss, total_loss)
from .structloss import PairBatch, hypcpcc_loss

log = logging.getLogger(__name__)

ABLATIONS = ("no-tau", "no-kappa", "euclid-hasl", "no-hypcpcc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    lr_decay: float = 0.005
    lam: int = 5
    theta: float = 0.8
    hasl_capacity: int = 128
    min_fill: int = 8
    hasl_balanced: bool = False
    kappa0: float = 0.5
    seed: int = 0
    task: str = "ordinal"
    hidden: int = 64
    t: float = 0.2
    k: float = 0.5
    rho: float = 4.0
    discrepancy_form: str = "symmetric"
    tree: TreeSpec = field(default_factory=TreeSpec)
    ablate: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ablate", tuple(sorted(set(self.ablate))))
        if not 0 <= self.lam < self.epochs:
            raise InvalidSpecError(f"need 0 <= lambda < epochs (got {self.lam}, {self.epochs})")
        if not 0.0 <= self.theta <= 1.0 or not 0.0 <= self.kappa0 <= 1.0:
            raise InvalidSpecError("theta and kappa0 must lie in [0, 1]")
        if self.batch_size < 1 or self.hasl_capacity < 1 or self.min_fill < 0:
            raise InvalidSpecError("batch_size and hasl_capacity must be positive, min_fill nonnegative")
        if self.task not in ("ordinal", "categorical"):
            raise InvalidSpecError(f"unknown task {self.task!r}")
        bad = [a for a in self.ablate if a not in ABLATIONS]
        if bad:
            raise InvalidSpecError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablate"] = list(self.ablate)
        d["tree"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.tree).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        tree = d.pop("tree", {}) or {}
        tree = {k: (tuple(tuple(e) if isinstance(e, list) else e for e in v) if isinstance(v, list) else v)
                for k, v in tree.items()}
        d["ablate"] = tuple(d.get("ablate", ()))
        known = {f.name for f in fields(cls)}
        return cls(tree=TreeSpec(**tree), **{k: v for k, v in d.items() if k in known})


@dataclass
class StepResult:
    losses: dict[str, float]
    kappa: np.ndarray
    report: ConsistencyReport | None
    phase: str
    hyp_grad_norm: float = 0.0


@dataclass
class EpochReport:
    epoch: int
    phase: str
    lr: float
    losses: dict[str, float]
    mean_kappa: float
    hasl_fill: dict[str, int]
    val: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Evaluation:
    metrics: dict
    y_true: np.ndarray
    y_pred: np.ndarray
    kappa: np.ndarray
    outputs: StageOutputs
    report: ConsistencyReport | None
    stage_pred: dict[str, np.ndarray]


def inverse_frequency_weights(labels, n_classes: int) -> np.ndarray:
    """Class weights proportional to 1/frequency, normalised to mean 1; absent classes get 0."""
    counts = np.bincount(np.asarray(labels, dtype=np.intp), minlength=n_classes).astype(np.float64)
    w = np.divide(1.0, counts, out=np.zeros(n_classes), where=counts > 0)
    return w * (n_classes / w.sum())


class Trainer:
    """Owns model, optimizer and anchor lists; single-threaded by design."""

    def __init__(self, cfg: TrainConfig, input_dims, n_classes: int | None = None,
                 class_weights=None):
        self.cfg = cfg
        k = n_classes if n_classes is not None else cfg.tree.n_classes
        if cfg.tree.n_classes != k:
            cfg = replace(cfg, tree=replace(cfg.tree, n_classes=k))
            self.cfg = cfg
        self.tree: EmotionTree = build_tree(cfg.tree)
        scale = cfg.tree.scale if cfg.tree.scale is not None else default_label_scale(self.tree, cfg.task)
        self.params = ConsistencyParams(cfg.t, cfg.k, cfg.rho, scale, cfg.discrepancy_form)
        self.model_cfg = ModelConfig(tuple(input_dims), k, cfg.hidden)
        self.model = TicalModel(self.model_cfg, seed=cfg.seed)
        self.optimizer = nn.Adam(self.model.parameters(), lr=cfg.lr)
        metric = "euclid" if "euclid-hasl" in cfg.ablate else "ball"
        self.hasl = [AnchorList(cfg.hasl_capacity, m, cfg.min_fill, cfg.hasl_balanced, k, metric,
                                1.0 - self.model_cfg.eps_boundary) for m in MODALITIES]
        self.class_weights = (None if class_weights is None
                              else np.asarray(class_weights, dtype=np.float64))
        self.epoch = 0

    @property
    def n_classes(self) -> int:
        return self.model_cfg.n_classes

    def phase(self, epoch: int) -> str:
        return "early" if epoch <= self.cfg.lam else "late"

    def hasl_ready(self) -> bool:
        return all(h.is_ready() for h in self.hasl)

    def consistency_for(self, feats: list[np.ndarray]) -> ConsistencyReport:
        d, y = zip(*(h.nearest_batch(f) for h, f in zip(self.hasl, feats)))
        return estimate(np.stack(d, axis=1), np.stack(y, axis=1), self.params)

    # ------------------------------------------------------------------
    def train_step(self, xs, y, epoch: int, audit: bool = False) -> StepResult:
        cfg = self.cfg
        y = np.asarray(y, dtype=np.intp)
        b = y.shape[0]
        weights = self.class_weights if self.class_weights is not None else np.ones(self.n_classes)
        phase = self.phase(epoch)
        fw = self.model.forward([np.asarray(x, dtype=np.float64) for x in xs])
        feats = [f.data for f in fw.features]

        report = None
        kappa = np.full(b, cfg.kappa0)
        phi = np.ones((b, 3))
        if phase == "late" and self.hasl_ready():
            report = self.consistency_for(feats)
            kappa = report.kappa if "no-kappa" not in cfg.ablate else np.full(b, 0.5)
            phi = report.phi if "no-tau" not in cfg.ablate else phi

        l_ep = ep_loss(fw.ep_logits, y, weights, reduce=False)
        l_ci = ci_loss(fw.ci_logits, y, weights, reduce=False)
        l_ac = ac_loss(fw.ac_logits, y, weights, phi=phi, reduce=False)
        task = task_loss(kappa, l_ep, l_ci, l_ac).mean()
        hyp = None
        if report is not None and b >= 2 and "no-hypcpcc" not in cfg.ablate:
            hyp = hypcpcc_loss([PairBatch(fw.features[m], report.pseudo[:, m]) for m in range(3)],
                               self.tree)
        total = total_loss(task, hyp, phase)

        losses = {"ep": float(l_ep.data.mean()), "ci": float(l_ci.data.mean()),
                  "ac": float(l_ac.data.mean()), "task": float(task.data),
                  "hyp": float(hyp.data) if hyp is not None else 0.0, "total": float(total.data)}
        for name, value in losses.items():
            if not np.isfinite(value):
                raise NumericalError(f"loss term {name!r} is not finite at epoch {epoch}", op=name)

        hyp_grad_norm = 0.0
        self.optimizer.zero_grad()
        if audit and hyp is not None and hyp.requires_grad:
            nn.backward(hyp)
            hyp_grad_norm = float(np.sqrt(sum(float((p.grad ** 2).sum())
                                              for p in self.optimizer.params.values() if p.grad is not None)))
            self.optimizer.zero_grad()
        nn.backward(total)
        self.optimizer.step()

        probs = [np.exp(z.data - z.data.max(axis=1, keepdims=True)) for z in fw.ep_logits]
        for m, p in enumerate(probs):
            p /= p.sum(axis=1, keepdims=True)
            pred = p.argmax(axis=1)
            conf = p.max(axis=1)
            for i in range(b):
                self.hasl[m].try_admit(feats[m][i], y[i], pred[i], conf[i], cfg.theta)
        return StepResult(losses, kappa, report, phase, hyp_grad_norm)

    def train_epoch(self, data: Dataset, val: Dataset | None = None,
                    on_step: Callable[[int, int, StepResult], None] | None = None,
                    audit: bool = False) -> EpochReport:
        cfg = self.cfg
        epoch = self.epoch + 1
        self.optimizer.lr = cfg.lr * (1.0 - cfg.lr_decay) ** (epoch - 1)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
        sums: dict[str, float] = {}
        kappa_sum, n_seen, n_steps = 0.0, 0, 0
        xs = data.inputs
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            res = self.train_step([x[idx] for x in xs], data.label[idx], epoch, audit=audit)
            for key, v in res.losses.items():
                sums[key] = sums.get(key, 0.0) + v
            kappa_sum += float(res.kappa.sum())
            n_seen += idx.size
            n_steps += 1
            if on_step is not None:
                on_step(epoch, step, res)
        self.epoch = epoch
        report = EpochReport(
            epoch=epoch, phase=self.phase(epoch), lr=self.optimizer.lr,
            losses={k: v / n_steps for k, v in sums.items()},
            mean_kappa=kappa_sum / n_seen,
            hasl_fill={m: len(h) for m, h in zip(MODALITIES, self.hasl)},
            val=self.evaluate(val).metrics if val is not None and len(val) else None,
        )
        log.info("epoch %d %s total=%.4f kappa=%.3f", epoch, report.phase,
                 report.losses["total"], report.mean_kappa)
        return report

    def fit(self, train: Dataset, val: Dataset | None = None, log_path=None,
            on_step=None, audit: bool = False, audit_path=None) -> list[EpochReport]:
        """Train up to ``cfg.epochs``, appending one JSON line per epoch to ``log_path``.

        ``audit_path`` additionally records every step (phase, gradient norm
        of the structure term alone, and the per-sample consistency rows) and
        implies ``audit``.
        """
        if self.class_weights is None:
            self.class_weights = inverse_frequency_weights(train.label, self.n_classes)
        reports = []
        with ExitStack() as stack:
            fh = stack.enter_context(open(log_path, "a")) if log_path is not None else None
            step_cb = on_step
            if audit_path is not None:
                audit = True
                afh = stack.enter_context(open(audit_path, "a"))

                def step_cb(epoch, step, res):
                    afh.write(audit_record(epoch, step, res) + "\n")
                    if on_step is not None:
                        on_step(epoch, step, res)

            while self.epoch < self.cfg.epochs:
                rep = self.train_epoch(train, val, on_step=step_cb, audit=audit)
                reports.append(rep)
                if fh is not None:
                    fh.write(rep.to_json() + "\n")
                    fh.flush()
        return reports

    # ------------------------------------------------------------------
    def evaluate(self, data: Dataset, batch_size: int | None = None) -> Evaluation:
        """Batched inference in dataset order.

        Typicality is normalised within each evaluation batch, mirroring
        training.  Without ready anchor lists every sample uses ``kappa0``.
        """
        if len(data) == 0:
            raise InvalidInputError("cannot evaluate an empty dataset")
        bs = batch_size or self.cfg.batch_size
        ready = self.hasl_ready() and self.epoch > self.cfg.lam
        p_ep = [[], [], []]
        p_ac = [[], [], []]
        p_ci, kappas, reports = [], [], []
        with nn.no_grad():
            for start in range(0, len(data), bs):
                sl = slice(start, start + bs)
                fw = self.model.forward([np.asarray(x[sl], dtype=np.float64) for x in data.inputs])
                out = fw.outputs()
                n = fw.ci_logits.shape[0]
                if ready:
                    rep = self.consistency_for([f.data for f in fw.features])
                    reports.append(rep)
                    kappa = rep.kappa if "no-kappa" not in self.cfg.ablate else np.full(n, 0.5)
                else:
                    kappa = np.full(n, self.cfg.kappa0)
                kappas.append(kappa)
                p_ci.append(out.p_ci)
                for m in range(3):
                    p_ep[m].append(out.p_ep[m])
                    p_ac[m].append(out.p_ac[m])
        p_ep = [np.concatenate(p) for p in p_ep]
        p_ac = [np.concatenate(p) for p in p_ac]
        p_ci = np.concatenate(p_ci)
        kappa = np.concatenate(kappas)
        p_final, y_pred = fuse_predictions(kappa, p_ep, p_ci, p_ac)
        outputs = StageOutputs(p_ep, p_ci, p_ac, p_final)
        merged = None
        if reports:
            merged = ConsistencyReport(*(np.concatenate([getattr(r, f) for r in reports])
                                         for f in ("d", "tau", "pseudo", "d_label", "kappa")))
        metrics = compute_metrics(data.label, y_pred, self.cfg.task, self.params.label_scale,
                                  self.n_classes)
        stage_pred = {
            "ep": np.argmax((p_ep[0] + p_ep[1] + p_ep[2]) / 3.0, axis=1),
            "ci": np.argmax(p_ci, axis=1),
            "ac": np.argmax((p_ac[0] + p_ac[1] + p_ac[2]) / 3.0, axis=1),
        }
        return Evaluation(metrics, data.label.copy(), y_pred, kappa, outputs, merged, stage_pred)

    def pseudo_labels(self, data: Dataset, batch_size: int | None = None) -> np.ndarray:
        """Nearest-anchor labels, shape (n, 3)."""
        bs = batch_size or self.cfg.batch_size
        out = []
        with nn.no_grad():
            for start in range(0, len(data), bs):
                sl = slice(start, start + bs)
                fw = self.model.forward([np.asarray(x[sl], dtype=np.float64) for x in data.inputs])
                out.append(np.stack([h.nearest_batch(f.data)[1] for h, f in zip(self.hasl, fw.features)],
                                    axis=1))
        return np.concatenate(out)


def audit_record(epoch: int, step: int, res: StepResult) -> str:
    rows = None
    if res.report is not None:
        rows = [res.report.row(i) for i in range(len(res.report))]
        for row, kappa in zip(rows, res.kappa):
            row["kappa_used"] = float(kappa)
    return json.dumps({"epoch": epoch, "step": step, "phase": res.phase,
                       "hyp_grad_norm": res.hyp_grad_norm, "rows": rows}, sort_keys=True)


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
