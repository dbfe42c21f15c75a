import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import pearsonr

from tical import ballgeom as bg
from tical import neural as nn
from tical.emotree import TreeSpec, build_tree
from tical.errors import InvalidBatchError, InvalidInputError
from tical.structloss import PairBatch, hypcpcc, hypcpcc_loss

CHAIN = build_tree(TreeSpec("ordinal-chain", 7))


def on_geodesic(hyperbolic_radii, dim=3):
    """Points on one diameter; their ball distance is |r_i - r_j|."""
    pts = np.zeros((len(hyperbolic_radii), dim))
    pts[:, 0] = np.tanh(np.asarray(hyperbolic_radii, float) / 2.0)
    return pts


def brute_force_cpcc(features, labels, tree):
    pairs_t, pairs_b = [], []
    n = len(labels)
    for i in range(n):
        for j in range(i + 1, n):
            pairs_t.append(tree.tree_distance(labels[i], labels[j]))
            pairs_b.append(bg.ball_distance(features[i], features[j]))
    mt, mb = sum(pairs_t) / len(pairs_t), sum(pairs_b) / len(pairs_b)
    cov = sum((a - mt) * (b - mb) for a, b in zip(pairs_t, pairs_b))
    vt = sum((a - mt) ** 2 for a in pairs_t)
    vb = sum((b - mb) ** 2 for b in pairs_b)
    if vt == 0 or vb == 0:
        return 0.0
    return cov / math.sqrt(vt * vb)


def random_points(rng, n, dim, max_r=0.9):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True) * max_r * rng.random((n, 1))


def test_affinely_aligned_batch_scores_one():
    labels = np.array([0, 3, 1, 6, 2, 5])
    batch = PairBatch(on_geodesic(0.4 * labels + 0.1), labels)
    assert hypcpcc(batch, CHAIN) == pytest.approx(1.0, abs=1e-9)


def test_anti_affine_batch_scores_minus_one():
    # class 1 at the origin, classes 0 and 2 close to each other at radius 0.5:
    # the tree-distant pair (0, 2) is the closest pair in the ball.
    pts = np.array([[0.5, 0.01, 0.0], [0.0, 0.0, 0.0], [0.5, -0.01, 0.0]])
    batch = PairBatch(pts, [0, 1, 2])
    assert hypcpcc(batch, CHAIN) == pytest.approx(-1.0, abs=1e-9)


def test_identical_labels_are_degenerate():
    rng = np.random.default_rng(0)
    assert hypcpcc(PairBatch(random_points(rng, 5, 3), [2] * 5), CHAIN) == 0.0


def test_coincident_features_are_degenerate():
    x = nn.Tensor(np.tile([[0.1, 0.2]], (4, 1)), requires_grad=True)
    loss = hypcpcc_loss([PairBatch(x, [0, 1, 2, 3])] * 3, CHAIN)
    assert loss.item() == 0.0
    assert not loss.requires_grad


def test_batch_size_below_two():
    with pytest.raises(InvalidBatchError):
        PairBatch(np.zeros((1, 3)), [0])


def test_label_out_of_range():
    with pytest.raises(InvalidInputError):
        hypcpcc(PairBatch(np.zeros((2, 3)) + [[0.1, 0, 0], [0, 0.1, 0]], [0, 7]), CHAIN)


def test_matches_brute_force_and_scipy():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = rng.integers(3, 12)
        pts = random_points(rng, n, 4)
        labels = rng.integers(0, 7, size=n)
        got = hypcpcc(PairBatch(pts, labels), CHAIN)
        want = brute_force_cpcc(pts, labels, CHAIN)
        assert got == pytest.approx(want, abs=1e-9)
        if want != 0.0:
            iu = np.triu_indices(n, 1)
            ref = pearsonr(CHAIN.all_pairs_distance()[labels[iu[0]], labels[iu[1]]],
                           bg.distance_matrix(pts, pts)[iu]).statistic
            assert got == pytest.approx(ref, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100.0))
def test_bounded_and_invariant_to_tree_scaling(seed, factor):
    rng = np.random.default_rng(seed)
    pts = random_points(rng, 8, 3)
    labels = rng.integers(0, 7, size=8)
    tree = build_tree(TreeSpec("polarity-hierarchy", 7))
    value = hypcpcc(PairBatch(pts, labels), tree)
    assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12
    assert abs(hypcpcc(PairBatch(pts, labels), tree.scaled(factor)) - value) < 1e-9


def test_loss_examples():
    labels = np.array([0, 3, 1, 6, 2, 5])
    aligned = PairBatch(on_geodesic(0.3 * labels), labels)
    flat = PairBatch(on_geodesic(0.3 * labels), np.zeros(6, dtype=int))
    assert hypcpcc_loss({"l": aligned, "v": aligned, "a": aligned}, CHAIN).item() == pytest.approx(-1.0, abs=1e-9)
    assert hypcpcc_loss([flat, flat, flat], CHAIN).item() == 0.0
    assert hypcpcc_loss([aligned, flat, flat], CHAIN).item() == pytest.approx(-1 / 3, abs=1e-9)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    feats = []
    while len(feats) < 3:
        pts = random_points(rng, 8, 8, 0.85)
        iu = np.triu_indices(8, 1)
        if bg.distance_matrix(pts, pts)[iu].min() >= 1e-3:
            feats.append(nn.Tensor(pts, requires_grad=True))
    labels = [rng.integers(0, 7, size=8) for _ in range(3)]
    fn = lambda: hypcpcc_loss([PairBatch(f, y) for f, y in zip(feats, labels)], CHAIN)  # noqa: E731
    nn.check_gradients(fn, feats, step=1e-5, rtol=1e-4)


def test_euclidean_variant_gradient():
    rng = np.random.default_rng(3)
    x = nn.Tensor(random_points(rng, 6, 3), requires_grad=True)
    labels = rng.integers(0, 7, size=6)
    nn.check_gradients(lambda: hypcpcc_loss([PairBatch(x, labels)], CHAIN, metric="euclid"), [x])
