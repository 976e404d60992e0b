"""Decision trees as undirected graphs and second-order (node2vec) random walks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import DecisionTree


@dataclass(frozen=True)
class TreeGraph:
    n_nodes: int
    adjacency: tuple[tuple[int, ...], ...]

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u < v]

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency[u]


@dataclass(frozen=True)
class WalkParams:
    length: int = 5
    walks_per_node: int = 50
    p: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        if self.length < 1 or self.walks_per_node < 1:
            raise ValueError("walk length and walks per node must be >= 1")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")


def tree_to_graph(tree: DecisionTree) -> TreeGraph:
    """One vertex per tree node, one undirected edge per parent-child link."""
    adj = [[] for _ in range(tree.n_nodes)]
    for node in np.flatnonzero(tree.feature >= 0):
        for child in (tree.left[node], tree.right[node]):
            adj[node].append(int(child))
            adj[int(child)].append(int(node))
    return TreeGraph(tree.n_nodes, tuple(tuple(sorted(a)) for a in adj))


def transition_weights(graph: TreeGraph, prev: int, cur: int, p: float, q: float) -> np.ndarray:
    """Unnormalized weights for stepping from ``cur`` to each of its neighbors,
    having arrived from ``prev``."""
    out = []
    for nxt in graph.adjacency[cur]:
        if nxt == prev:
            out.append(1.0 / p)
        elif graph.has_edge(prev, nxt):
            out.append(1.0)
        else:
            out.append(1.0 / q)
    return np.asarray(out)


def generate_walks(graph: TreeGraph, params: WalkParams, seed) -> list[list[int]]:
    """``walks_per_node`` walks from every node, each up to ``params.length`` nodes.

    All walks of one graph advance together, one step per iteration; the
    next node is drawn by inverting the cumulative weights of the
    second-order transition rule.  Each repetition visits the start nodes in
    a fresh random order.
    """
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    if n == 0:
        raise ValueError("graph has no nodes")
    starts = np.concatenate([rng.permutation(n) for _ in range(params.walks_per_node)])
    width = max((len(a) for a in graph.adjacency), default=0)
    if width == 0 or params.length == 1:
        return [[int(s)] for s in starts]

    nbr = np.full((n, width), -1, dtype=np.int64)
    for u, a in enumerate(graph.adjacency):
        nbr[u, : len(a)] = a
    degree = (nbr >= 0).sum(axis=1)
    edge_keys = np.sort(np.array([u * n + v for u, a in enumerate(graph.adjacency) for v in a],
                                 dtype=np.int64))

    def is_edge(a, b):
        keys = a * n + b
        pos = np.clip(np.searchsorted(edge_keys, keys), 0, edge_keys.size - 1)
        return edge_keys[pos] == keys

    n_walks = starts.size
    walks = np.full((n_walks, params.length), -1, dtype=np.int64)
    walks[:, 0] = starts
    alive = degree[starts] > 0
    cur = starts.copy()
    prev = np.full(n_walks, -1, dtype=np.int64)
    for step in range(1, params.length):
        cand = nbr[cur]
        valid = cand >= 0
        if step == 1:
            weights = valid.astype(np.float64)
        else:
            prev_b = np.broadcast_to(prev[:, None], cand.shape)
            back = cand == prev_b
            near = valid & ~back & is_edge(np.where(valid, cand, 0), prev_b)
            weights = np.where(back, 1.0 / params.p, np.where(near, 1.0, 1.0 / params.q))
            weights = np.where(valid, weights, 0.0)
        cum = np.cumsum(weights, axis=1)
        u = rng.random(n_walks) * cum[:, -1]
        choice = (cum <= u[:, None]).sum(axis=1)
        choice = np.minimum(choice, degree[cur] - 1).clip(min=0)
        nxt = cand[np.arange(n_walks), choice]
        nxt = np.where(alive, nxt, -1)
        walks[:, step] = nxt
        prev, cur = np.where(alive, cur, prev), np.where(alive, nxt, cur)

    return [row[row >= 0].tolist() for row in walks]


def write_corpus(walks, path) -> None:
    """Debug dump: one walk per line, node ids separated by spaces."""
    with open(path, "w") as fh:
        for walk in walks:
            fh.write(" ".join(map(str, walk)) + "\n")
