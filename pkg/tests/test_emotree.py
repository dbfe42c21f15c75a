import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tical.emotree import (EmotionTree, TreeSpec, all_pairs_distance, build_tree, default_label_scale,
                           default_polarity, parse_tree_spec, tree_distance)
from tical.errors import InvalidInputError, InvalidSpecError


def nx_distances(tree: EmotionTree) -> np.ndarray:
    g = nx.Graph()
    g.add_weighted_edges_from(tree.edges)
    k = tree.n_classes
    out = np.zeros((k, k))
    for a in range(k):
        lengths = nx.single_source_dijkstra_path_length(g, tree.node_of(a))
        for b in range(k):
            out[a, b] = lengths[tree.node_of(b)]
    return out


@st.composite
def random_trees(draw):
    """Random trees: each new node attaches to an earlier one; classes sit on random nodes."""
    n_nodes = draw(st.integers(2, 12))
    weights = draw(st.lists(st.floats(0.1, 5.0), min_size=n_nodes - 1, max_size=n_nodes - 1))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n_nodes)]
    k = draw(st.integers(2, n_nodes))
    names = draw(st.permutations([f"c{i}" for i in range(k)] + [f"n{i}" for i in range(n_nodes - k)]))
    edges = [(names[p], names[i], w) for i, (p, w) in enumerate(zip(parents, weights), start=1)]
    return EmotionTree(list(names), edges, {f"c{i}": i for i in range(k)})


def test_ordinal_chain_shape():
    tree = build_tree(TreeSpec("ordinal-chain", 7))
    assert len(tree.edges) == 6 and all(w == 1.0 for _, _, w in tree.edges)
    assert tree.n_classes == 7 and len(tree.nodes) == 7


def test_flat_star_leaves_at_unit_depth():
    tree = build_tree(TreeSpec("flat-star", 6))
    assert [tree.depth(c) for c in range(6)] == [1.0] * 6


def test_polarity_hierarchy_separates_extremes():
    tree = build_tree(TreeSpec("polarity-hierarchy", 7))
    parent = {b: a for a, b, _ in tree.edges}
    scores = np.arange(7) - 3
    for c in range(7):
        expected = {-1: "negative", 0: "neutral", 1: "positive"}[int(np.sign(scores[c]))]
        assert parent[tree.node_of(c)] == expected
    assert parent[tree.node_of(0)] != parent[tree.node_of(6)]
    # leaf -> polarity (1) -> root (2) -> polarity (2) -> leaf (1)
    assert tree_distance(tree, 0, 6) == 6.0
    assert tree_distance(tree, 0, 1) == 2.0


def test_too_few_classes():
    with pytest.raises(InvalidSpecError):
        TreeSpec("flat-star", 1)


def test_unknown_scheme():
    with pytest.raises(InvalidSpecError):
        TreeSpec("ring", 4)


def test_distance_examples():
    chain = build_tree(TreeSpec("ordinal-chain", 7))
    assert tree_distance(chain, 4, 4) == 0.0
    assert tree_distance(chain, 0, 3) == 3.0
    star = build_tree(TreeSpec("flat-star", 5, weights=(2.5,) * 5))
    assert tree_distance(star, 1, 3) == 5.0


def test_unknown_class_index():
    tree = build_tree(TreeSpec("ordinal-chain", 3))
    with pytest.raises(InvalidInputError):
        tree_distance(tree, 0, 3)
    with pytest.raises(InvalidInputError):
        tree_distance(tree, -1, 0)


def test_two_class_chain_matrix():
    tree = build_tree(TreeSpec("ordinal-chain", 2))
    assert np.array_equal(all_pairs_distance(tree), [[0.0, 1.0], [1.0, 0.0]])


@pytest.mark.parametrize("scheme", ["ordinal-chain", "polarity-hierarchy", "flat-star"])
@pytest.mark.parametrize("k", [2, 3, 6, 7, 10])
def test_builtin_schemes_match_networkx(scheme, k):
    tree = build_tree(TreeSpec(scheme, k))
    assert np.allclose(all_pairs_distance(tree), nx_distances(tree), rtol=0, atol=1e-12)


@settings(max_examples=100)
@given(random_trees())
def test_random_trees_match_networkx_and_metric_axioms(tree):
    d = all_pairs_distance(tree)
    k = tree.n_classes
    assert np.allclose(d, nx_distances(tree), rtol=1e-12, atol=1e-12)
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    assert np.all(d >= 0)
    for a, b, c in itertools.product(range(k), repeat=3):
        assert d[a, c] <= d[a, b] + d[b, c] + 1e-12
    for a, b in itertools.product(range(k), repeat=2):
        assert d[a, b] == tree_distance(tree, a, b)
        if a != b:
            assert d[a, b] > 0


@pytest.mark.parametrize("edges, message", [
    ([("c0", "c1", 1.0), ("c1", "c2", 1.0), ("c2", "c0", 1.0)], "edges"),
    ([("c0", "c1", 1.0), ("c1", "c2", 0.0)], "positive"),
    ([("c0", "c1", 1.0), ("x", "y", 1.0)], None),
])
def test_invalid_trees(edges, message):
    nodes = sorted({n for a, b, _ in edges for n in (a, b)})
    class_of = {n: int(n[1:]) for n in nodes if n.startswith("c")}
    with pytest.raises(InvalidSpecError):
        EmotionTree(nodes, edges, class_of)


def test_scaled_tree_scales_distances():
    tree = build_tree(TreeSpec("polarity-hierarchy", 6))
    assert np.allclose(all_pairs_distance(tree.scaled(3.0)), 3.0 * all_pairs_distance(tree))


def test_default_polarity_and_label_scale():
    assert default_polarity(7) == (-1, -1, -1, 0, 1, 1, 1)
    assert default_polarity(6) == (-1, -1, -1, 1, 1, 1)
    chain = build_tree(TreeSpec("ordinal-chain", 7))
    assert default_label_scale(chain, "ordinal") == (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    tree = build_tree(TreeSpec("polarity-hierarchy", 6, polarity=(-1, -1, 0, 1, 1, 1)))
    assert default_label_scale(tree, "categorical") == (-3.0, -3.0, 0.0, 3.0, 3.0, 3.0)


def test_parse_tree_spec_with_edges():
    text = """
    # two-level tree
    scheme = polarity-hierarchy
    n_classes = 3
    scale = -1 0 1
    edges =
        root neg 2
        root pos 2
        neg c0 1
        pos c1 1.5
        pos c2 1
    """
    spec = parse_tree_spec(text)
    assert spec.n_classes == 3 and spec.scale == (-1.0, 0.0, 1.0)
    tree = build_tree(spec)
    assert tree_distance(tree, 0, 1) == 6.5
    assert tree_distance(tree, 1, 2) == 2.5


def test_parse_tree_spec_weights_and_polarity():
    spec = parse_tree_spec("scheme = polarity-hierarchy\nn_classes = 4\npolarity = - - + +\n"
                           "weights = 3 3 1 1 1 1\n")
    tree = build_tree(spec)
    assert tree_distance(tree, 0, 3) == 8.0


@pytest.mark.parametrize("text", ["colour = red", "scheme = flat-star\nn_classes = x",
                                  "edges =\n a b", "just words"])
def test_parse_tree_spec_errors(text):
    with pytest.raises(InvalidSpecError):
        build_tree(parse_tree_spec(text))
