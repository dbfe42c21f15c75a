"""Cophenetic correlation between label-tree distances and feature distances.

For a batch of features with (pseudo) labels, every unordered pair i<j has a
tree distance between its labels and a hyperbolic distance between its
features; the score is the Pearson correlation of the two pair sequences.
A batch where either sequence is constant scores 0 and carries no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import ballgeom
from . import neural as nn
from .emotree import EmotionTree
from .errors import InvalidBatchError, InvalidInputError
from .neural import Tensor

# Below this centred sum of squares the feature distances count as constant.
_DEGENERATE_SS = 1e-24


@dataclass
class PairBatch:
    features: np.ndarray | Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        n = self.features.shape[0]
        if n < 2:
            raise InvalidBatchError(f"a pair batch needs at least 2 samples, got {n}")
        if self.labels.shape != (n,):
            raise InvalidBatchError(f"{n} features but labels of shape {self.labels.shape}")


def _tree_pair_distances(labels: np.ndarray, tree: EmotionTree, iu):
    k = tree.n_classes
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidInputError(f"labels must be class indices in [0, {k})")
    return tree.all_pairs_distance()[labels[iu[0]], labels[iu[1]]]


def hypcpcc_t(batch: PairBatch, tree: EmotionTree, metric: str = "ball") -> Tensor:
    """Differentiable correlation score; ``metric='euclid'`` swaps in Euclidean distances."""
    x = nn.as_tensor(batch.features)
    iu = np.triu_indices(x.shape[0], 1)
    d_tree = _tree_pair_distances(batch.labels, tree, iu)
    if np.ptp(d_tree) == 0.0:
        return Tensor(0.0)
    d_feat = ballgeom.pairwise_distance_t(x) if metric == "ball" else ballgeom.pairwise_euclidean_t(x)
    centred_feat = d_feat - d_feat.mean()
    ss_feat = (centred_feat * centred_feat).sum()
    if float(ss_feat.data) < _DEGENERATE_SS:
        return Tensor(0.0)
    centred_tree = d_tree - d_tree.mean()
    ss_tree = float(centred_tree @ centred_tree)
    return (centred_feat * centred_tree).sum() / nn.sqrt(ss_feat * ss_tree)


def hypcpcc(batch: PairBatch, tree: EmotionTree, metric: str = "ball") -> float:
    with nn.no_grad():
        return float(hypcpcc_t(batch, tree, metric).data)


def hypcpcc_loss(batches: Mapping[str, PairBatch] | list, tree: EmotionTree,
                 metric: str = "ball", n_modalities: int = 3) -> Tensor:
    """Negated mean score over modalities.

    Modalities absent from ``batches`` (e.g. anchors not ready yet) count as
    degenerate: they contribute 0 but still divide the mean.
    """
    items = batches.values() if isinstance(batches, Mapping) else batches
    total = Tensor(0.0)
    for b in items:
        total = total + hypcpcc_t(b, tree, metric)
    return total * (-1.0 / n_modalities)
