"""Weighted trees over emotion classes and their path distances.

Three built-in layouts are available:

``ordinal-chain``
    classes ``c0 .. c{K-1}`` on a path, consecutive classes joined by unit
    edges (the natural layout for -3..+3 sentiment levels).
``polarity-hierarchy``
    ``root`` -> ``negative`` / ``neutral`` / ``positive`` (weight 2) ->
    class leaves (weight 1).  A class belongs to the subtree given by the
    sign of its centred index unless ``polarity`` overrides it.
``flat-star``
    ``root`` joined to every class leaf with weight 1.

Tree spec files are plain text, one ``key = value`` per line, ``#`` starts a
comment::

    scheme = polarity-hierarchy
    n_classes = 6
    polarity = - - 0 + + +        # optional, polarity-hierarchy only
    weights = 2 2 2 1 1 1 1 1 1   # optional, replaces edge weights in build order
    scale = -3 -3 0 3 3 3         # optional per-class label scores
    edges =                       # optional, replaces the topology entirely
        root neg 2
        neg c0 1
        ...

Edge lines are ``parent child weight``; class ``i`` must be the node named
``c{i}``.  An ``edges`` block runs until the next ``key =`` line.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidSpecError

SCHEMES = ("ordinal-chain", "polarity-hierarchy", "flat-star")
_POLARITY_NODE = {-1: "negative", 0: "neutral", 1: "positive"}
_POLARITY_TOKEN = {"-": -1, "0": 0, "+": 1, "-1": -1, "1": 1, "+1": 1}


@dataclass(frozen=True)
class TreeSpec:
    scheme: str = "ordinal-chain"
    n_classes: int = 7
    weights: tuple[float, ...] | None = None
    edges: tuple[tuple[str, str, float], ...] | None = None
    polarity: tuple[int, ...] | None = None
    scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidSpecError(f"unknown tree scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_classes < 2:
            raise InvalidSpecError(f"a tree needs at least 2 classes, got {self.n_classes}")
        if self.polarity is not None and len(self.polarity) != self.n_classes:
            raise InvalidSpecError("polarity must list one sign per class")
        if self.scale is not None and len(self.scale) != self.n_classes:
            raise InvalidSpecError("scale must list one score per class")


@dataclass
class EmotionTree:
    nodes: list[str]
    edges: list[tuple[str, str, float]]
    class_of: dict[str, int]
    root: str | None = None
    polarity: tuple[int, ...] | None = None
    _adj: dict[str, list[tuple[str, float]]] = field(init=False, repr=False)
    _matrix: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise InvalidSpecError("duplicate node names")
        node_set = set(self.nodes)
        adj: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        for a, b, w in self.edges:
            if a not in node_set or b not in node_set:
                raise InvalidSpecError(f"edge ({a}, {b}) references an unknown node")
            if not (w > 0 and np.isfinite(w)):
                raise InvalidSpecError(f"edge ({a}, {b}) has non-positive weight {w}")
            adj[a].append((b, float(w)))
            adj[b].append((a, float(w)))
        if len(self.edges) != len(self.nodes) - 1:
            raise InvalidSpecError(f"{len(self.nodes)} nodes need {len(self.nodes) - 1} edges, got {len(self.edges)}")
        self._adj = adj
        if len(self._single_source(self.nodes[0])) != len(self.nodes):
            raise InvalidSpecError("tree is not connected")
        k = len(self.class_of)
        if sorted(self.class_of.values()) != list(range(k)):
            raise InvalidSpecError("class indices must be 0..K-1, each on exactly one node")
        if any(n not in node_set for n in self.class_of):
            raise InvalidSpecError("class assigned to an unknown node")
        self._node_of = {c: n for n, c in self.class_of.items()}

    @property
    def n_classes(self) -> int:
        return len(self.class_of)

    def node_of(self, c: int) -> str:
        try:
            return self._node_of[int(c)]
        except (KeyError, ValueError, TypeError):
            raise InvalidInputError(f"unknown class index {c!r}") from None

    def _single_source(self, src: str) -> dict[str, float]:
        dist = {src: 0.0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v, w in self._adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + w
                    queue.append(v)
        return dist

    def tree_distance(self, a: int, b: int) -> float:
        # Path sums start from the smaller class index so that d(a, b) and
        # d(b, a) add the same weights in the same order.
        na, nb = self.node_of(min(a, b)), self.node_of(max(a, b))
        if na == nb:
            return 0.0
        return self._single_source(na)[nb]

    def all_pairs_distance(self) -> np.ndarray:
        """K x K matrix of class distances (cached; treat as read-only)."""
        if self._matrix is None:
            k = self.n_classes
            m = np.zeros((k, k))
            for a in range(k):
                d = self._single_source(self.node_of(a))
                for b in range(a + 1, k):
                    m[a, b] = m[b, a] = d[self.node_of(b)]
            m.setflags(write=False)
            self._matrix = m
        return self._matrix

    def depth(self, c: int) -> float:
        """Weighted distance from the root to class ``c`` (0 for rootless trees)."""
        if self.root is None:
            return 0.0
        return self._single_source(self.root)[self.node_of(c)]

    def scaled(self, factor: float) -> "EmotionTree":
        return EmotionTree(list(self.nodes), [(a, b, w * factor) for a, b, w in self.edges],
                           dict(self.class_of), self.root, self.polarity)


def tree_distance(tree: EmotionTree, a: int, b: int) -> float:
    return tree.tree_distance(a, b)


def all_pairs_distance(tree: EmotionTree) -> np.ndarray:
    return tree.all_pairs_distance()


def default_polarity(n_classes: int) -> tuple[int, ...]:
    centre = (n_classes - 1) / 2.0
    return tuple(int(np.sign(i - centre)) for i in range(n_classes))


def build_tree(spec: TreeSpec) -> EmotionTree:
    k = spec.n_classes
    classes = [f"c{i}" for i in range(k)]
    class_of = {name: i for i, name in enumerate(classes)}
    polarity = None
    root = None
    if spec.edges is not None:
        nodes: list[str] = []
        for a, b, _ in spec.edges:
            for n in (a, b):
                if n not in nodes:
                    nodes.append(n)
        missing = [c for c in classes if c not in nodes]
        if missing:
            raise InvalidSpecError(f"explicit edges do not mention class nodes {missing}")
        edges = [(a, b, float(w)) for a, b, w in spec.edges]
        root = "root" if "root" in nodes else None
        polarity = spec.polarity
        return EmotionTree(nodes, edges, class_of, root, polarity)

    if spec.scheme == "ordinal-chain":
        nodes = classes
        edges = [(classes[i], classes[i + 1], 1.0) for i in range(k - 1)]
    elif spec.scheme == "flat-star":
        root = "root"
        nodes = [root] + classes
        edges = [(root, c, 1.0) for c in classes]
    else:
        root = "root"
        polarity = spec.polarity if spec.polarity is not None else default_polarity(k)
        used = [p for p in (-1, 0, 1) if p in polarity]
        nodes = [root] + [_POLARITY_NODE[p] for p in used] + classes
        edges = [(root, _POLARITY_NODE[p], 2.0) for p in used]
        edges += [(_POLARITY_NODE[polarity[i]], classes[i], 1.0) for i in range(k)]
    if spec.weights is not None:
        if len(spec.weights) != len(edges):
            raise InvalidSpecError(f"weights lists {len(spec.weights)} values for {len(edges)} edges")
        edges = [(a, b, float(w)) for (a, b, _), w in zip(edges, spec.weights)]
    return EmotionTree(nodes, edges, class_of, root, polarity)


def default_label_scale(tree: EmotionTree, task: str = "ordinal") -> tuple[float, ...]:
    """Numeric score per class used by the label-discrepancy term.

    Ordinal tasks use the centred class index (-3..+3 for seven levels).
    Categorical tasks on a polarity tree use the leaf's signed depth; other
    categorical trees fall back to the centred index.
    """
    k = tree.n_classes
    centred = tuple(float(i - (k - 1) / 2.0) for i in range(k))
    if task == "ordinal" or tree.polarity is None or tree.root is None:
        return centred
    return tuple(float(tree.polarity[i]) * tree.depth(i) for i in range(k))


def parse_tree_spec(text: str) -> TreeSpec:
    values: dict[str, str] = {}
    edges: list[tuple[str, str, float]] | None = None
    in_edges = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = (s.strip() for s in line.partition("="))
            in_edges = key == "edges"
            if in_edges:
                edges = []
                if val:
                    raise InvalidSpecError(f"line {lineno}: edge lines go below 'edges ='")
                continue
            if key not in ("scheme", "n_classes", "weights", "polarity", "scale"):
                raise InvalidSpecError(f"line {lineno}: unknown key {key!r}")
            values[key] = val
        elif in_edges:
            parts = line.split()
            if len(parts) != 3:
                raise InvalidSpecError(f"line {lineno}: edge needs 'parent child weight'")
            try:
                edges.append((parts[0], parts[1], float(parts[2])))
            except ValueError:
                raise InvalidSpecError(f"line {lineno}: bad edge weight {parts[2]!r}") from None
        else:
            raise InvalidSpecError(f"line {lineno}: expected 'key = value'")
    try:
        n_classes = int(values.get("n_classes", "7"))
        weights = tuple(float(w) for w in values["weights"].split()) if "weights" in values else None
        scale = tuple(float(s) for s in values["scale"].split()) if "scale" in values else None
        polarity = (tuple(_POLARITY_TOKEN[p] for p in values["polarity"].split())
                    if "polarity" in values else None)
    except (ValueError, KeyError) as exc:
        raise InvalidSpecError(f"malformed tree spec value: {exc}") from None
    return TreeSpec(values.get("scheme", "ordinal-chain"), n_classes, weights,
                    tuple(edges) if edges is not None else None, polarity, scale)


def load_tree_spec(path) -> TreeSpec:
    return parse_tree_spec(Path(path).read_text())
