"""Undirected simple graphs, normalized operators, and synthetic generators.

Graphs are immutable after construction and safe to share across threads.
All randomness flows through numpy's PCG64 generator so that a seed pins the
exact edge set and features on every platform; the draw order is documented
on each generator and committed golden fixtures pin the stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphValidationError(ValueError):
    """Edge list or generator parameters violate the graph contract."""


@dataclass(frozen=True)
class Graph:
    """Node count, undirected edge set, sorted neighbor lists, degree vector."""

    n: int
    edges: frozenset[tuple[int, int]]
    neighbor_lists: tuple[tuple[int, ...], ...]
    degrees: tuple[int, ...]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a

    def num_edges(self) -> int:
        return len(self.edges)


def graph_from_edge_list(n: int, edges) -> Graph:
    """Build a graph from (u, v) pairs, deduplicating and symmetrizing.

    Self-loops and out-of-range endpoints are rejected.
    """
    if n < 0:
        raise GraphValidationError("node count must be non-negative")
    canon = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise GraphValidationError(f"self-loop ({u},{u}) not allowed")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphValidationError(f"edge ({u},{v}) outside [0,{n})")
        canon.add((min(u, v), max(u, v)))
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for u, v in canon:
        nbrs[u].append(v)
        nbrs[v].append(u)
    neighbor_lists = tuple(tuple(sorted(ns)) for ns in nbrs)
    degrees = tuple(len(ns) for ns in neighbor_lists)
    return Graph(n=n, edges=frozenset(canon), neighbor_lists=neighbor_lists, degrees=degrees)


def two_node_fixture() -> Graph:
    """The two-node fully connected graph used by the smoothing fixtures."""
    return graph_from_edge_list(2, [(0, 1)])


@dataclass(frozen=True)
class NormalizedOperators:
    """Dense operators derived from one graph.

    a_sym      I - D^{-1/2} A D^{-1/2} (isolated nodes keep their identity row)
    a_renorm   D~^{-1/2} (A + I) D~^{-1/2} with D~ the degrees of A + I
    laplacian  D - A
    """

    a_sym: np.ndarray
    a_renorm: np.ndarray
    laplacian: np.ndarray


def normalized_operators(g: Graph) -> NormalizedOperators:
    a = g.adjacency()
    deg = np.asarray(g.degrees, dtype=np.float64)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    a_sym = np.eye(g.n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    a_tilde = a + np.eye(g.n)
    inv_sqrt_t = 1.0 / np.sqrt(deg + 1.0)
    a_renorm = inv_sqrt_t[:, None] * a_tilde * inv_sqrt_t[None, :]
    laplacian = np.diag(deg) - a
    return NormalizedOperators(a_sym=a_sym, a_renorm=a_renorm, laplacian=laplacian)


def lazy_walk_matrix(g: Graph) -> np.ndarray:
    """Row-stochastic transition matrix of the walk over N(u) plus u itself."""
    p = g.adjacency() + np.eye(g.n)
    return p / p.sum(axis=1, keepdims=True)


def lazy_walk_distribution(g: Graph, u: int, num_steps: int) -> np.ndarray:
    """Exact occupancy distribution after ``num_steps`` lazy-walk steps from u."""
    if not (0 <= u < g.n):
        raise GraphValidationError(f"start node {u} outside [0,{g.n})")
    if num_steps < 0:
        raise GraphValidationError("num_steps must be non-negative")
    p = lazy_walk_matrix(g)
    dist = np.zeros(g.n)
    dist[u] = 1.0
    for _ in range(num_steps):
        dist = dist @ p
    return dist


def is_connected(g: Graph) -> bool:
    if g.n == 0:
        return True
    seen = {0}
    stack = [0]
    while stack:
        for v in g.neighbor_lists[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == g.n


def random_connected_graph(n: int, extra_edges: int, seed: int) -> Graph:
    """Random spanning tree plus extra random edges; connected by construction.

    Draw order: node i in 1..n-1 attaches to rng.integers(0, i); then
    ``extra_edges`` candidate pairs are drawn as (rng.integers(n),
    rng.integers(n)), skipping self-pairs and duplicates.
    """
    if n < 1:
        raise GraphValidationError("need at least one node")
    rng = np.random.Generator(np.random.PCG64(seed))
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    have = {(min(u, v), max(u, v)) for u, v in edges}
    for _ in range(extra_edges):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u != v and (min(u, v), max(u, v)) not in have:
            have.add((min(u, v), max(u, v)))
    return graph_from_edge_list(n, sorted(have))


# ---------------------------------------------------------------------------
# stochastic block model


def sbm_generate(block_sizes, p_in: float, p_out: float, d_in: int | None = None,
                 noise: float = 0.0, seed: int = 0):
    """Sample one stochastic-block-model graph with labels and noisy features.

    Each intra-block pair is an edge with probability ``p_in``, inter-block
    with ``p_out``. Labels are block indices. Features are one-hot block
    indicators, except each node's indicator is replaced by a uniformly random
    one with probability ``noise``, so class identity is only recoverable by
    combining structure with features.

    Draw order (PCG64(seed)): one uniform per node pair (u, v), u < v, in
    lexicographic order; then per node in ascending order one uniform for the
    corruption decision, plus one integer in [0, C) when corrupted.

    Returns ``(graph, labels, features)`` with features of width ``d_in``
    (default: number of blocks; wider is zero-padded).
    """
    block_sizes = [int(b) for b in block_sizes]
    if not block_sizes or any(b <= 0 for b in block_sizes):
        raise GraphValidationError("block_sizes must be positive and non-empty")
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not (0.0 <= p <= 1.0):
            raise GraphValidationError(f"{name}={p} outside [0,1]")
    if p_out > p_in:
        raise GraphValidationError("p_out must not exceed p_in")
    if not (0.0 <= noise <= 1.0):
        raise GraphValidationError(f"noise={noise} outside [0,1]")
    n_blocks = len(block_sizes)
    if d_in is None:
        d_in = n_blocks
    if d_in < n_blocks:
        raise GraphValidationError(f"d_in={d_in} narrower than {n_blocks} blocks")

    labels = np.repeat(np.arange(n_blocks), block_sizes)
    n = int(labels.size)
    rng = np.random.Generator(np.random.PCG64(seed))
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            p = p_in if labels[u] == labels[v] else p_out
            if rng.random() < p:
                edges.append((u, v))
    features = np.zeros((n, d_in))
    for u in range(n):
        cls = int(labels[u])
        if rng.random() < noise:
            cls = int(rng.integers(0, n_blocks))
        features[u, cls] = 1.0
    return graph_from_edge_list(n, edges), labels, features


@dataclass
class LabeledGraphSet:
    """A split of per-node-labeled graphs with matching feature matrices."""

    graphs: list[Graph] = field(default_factory=list)
    node_labels: list[np.ndarray] = field(default_factory=list)
    node_features: list[np.ndarray] = field(default_factory=list)
    split: str = "train"
    n_classes: int = 0

    def __post_init__(self):
        for g, y, x in zip(self.graphs, self.node_labels, self.node_features):
            if len(y) != g.n or x.shape[0] != g.n:
                raise GraphValidationError("labels/features do not match node count")
            if self.n_classes and np.any(np.asarray(y) >= self.n_classes):
                raise GraphValidationError("label outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.graphs)


def sbm_dataset(block_sizes, p_in: float, p_out: float, noise: float,
                n_graphs: int, seed: int, split: str = "train",
                d_in: int | None = None) -> LabeledGraphSet:
    """Generate ``n_graphs`` SBM samples; graph i uses seed ``seed + i``."""
    graphs, labels, feats = [], [], []
    for i in range(n_graphs):
        g, y, x = sbm_generate(block_sizes, p_in, p_out, d_in=d_in, noise=noise,
                               seed=seed + i)
        graphs.append(g)
        labels.append(y)
        feats.append(x)
    return LabeledGraphSet(graphs=graphs, node_labels=labels, node_features=feats,
                           split=split, n_classes=len(list(block_sizes)))


# ---------------------------------------------------------------------------
# fixture file formats: edge list ("n m" header, one "u v" line per edge),
# labels (one integer per line), features (CSV of round-trippable floats)


def write_edge_list(g: Graph, path) -> None:
    lines = [f"{g.n} {g.num_edges()}"]
    lines += [f"{u} {v}" for u, v in sorted(g.edges)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GraphValidationError(f"bad edge-list header in {path}")
        n, m = int(header[0]), int(header[1])
        edges = []
        for _ in range(m):
            u, v = fh.readline().split()
            edges.append((int(u), int(v)))
    g = graph_from_edge_list(n, edges)
    if g.num_edges() != m:
        raise GraphValidationError(f"edge count mismatch in {path}")
    return g


def write_labels(labels, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(str(int(y)) for y in labels) + "\n")


def read_labels(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


def write_features(features: np.ndarray, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for row in np.asarray(features, dtype=np.float64):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_features(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(x) for x in line.split(",")])
    return np.array(rows, dtype=np.float64)
