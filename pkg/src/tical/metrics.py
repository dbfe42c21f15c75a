"""Classification metrics: Acc-2, Acc-K, F1, UAR and WAR."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    t = np.asarray(true, dtype=np.intp)
    p = np.asarray(pred, dtype=np.intp)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def compute_metrics(true, pred, task: str = "ordinal", label_scale=None, n_classes: int | None = None,
                    f1_average: str = "weighted") -> dict:
    """Score predictions against true class indices.

    ``acc2`` is reported for ordinal tasks only: it compares the sign of the
    label scores and skips samples whose true score is 0; it is None when
    nothing is left.  ``f1_average`` picks ``weighted`` (support-weighted)
    or ``macro`` F1; either way classes without support are skipped.
    """
    t = np.asarray(true, dtype=np.intp).reshape(-1)
    p = np.asarray(pred, dtype=np.intp).reshape(-1)
    if t.size == 0 or t.shape != p.shape:
        raise InvalidInputError(f"need equal-length, non-empty label sequences (got {t.size} and {p.size})")
    if n_classes is None:
        n_classes = int(max(t.max(), p.max())) + 1
    if t.min() < 0 or p.min() < 0 or max(t.max(), p.max()) >= n_classes:
        raise InvalidInputError(f"labels must lie in [0, {n_classes})")
    cm = confusion_matrix(t, p, n_classes)
    total = cm.sum()
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm).astype(np.float64)
    has = support > 0
    recall = np.divide(tp, support, out=np.zeros(n_classes), where=has)
    precision = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    if f1_average == "weighted":
        f1_score = float((f1[has] * support[has]).sum() / support[has].sum())
    elif f1_average == "macro":
        f1_score = float(f1[has].mean())
    else:
        raise InvalidInputError(f"unknown F1 average {f1_average!r}")
    war = float(np.trace(cm) / total)
    out = {
        "n": int(total),
        "acc_k": war,
        f"f1_{f1_average}": f1_score,
        "uar": float(recall[has].mean()),
        "war": war,
    }
    if task == "ordinal":
        scale = (np.arange(n_classes) - (n_classes - 1) / 2.0 if label_scale is None
                 else np.asarray(label_scale, dtype=np.float64))
        st, sp = np.sign(scale[t]), np.sign(scale[p])
        keep = st != 0
        out["acc2"] = float((st[keep] == sp[keep]).mean()) if keep.any() else None
    elif task != "categorical":
        raise InvalidInputError(f"task must be 'ordinal' or 'categorical', got {task!r}")
    return out


def format_record(metrics: dict) -> str:
    """Flat ``key=value`` line; absent values print as ``NA``."""
    parts = []
    for key in sorted(metrics):
        v = metrics[key]
        parts.append(f"{key}={'NA' if v is None else (repr(v) if isinstance(v, float) else v)}")
    return " ".join(parts)
