"""Over-smoothing metrics and the influence / random-walk agreement check.

Smoothness is measured two ways, matching the two faces of embedding
collapse: pairwise cosine similarity drifting toward 1, and row norms
clustering. The influence machinery quantifies how much one node's input
still matters to another node's final embedding, via exact reverse-mode
Jacobian sums (no finite differencing).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward, matmul, sum_all
from .graphs import (
    Graph,
    GraphValidationError,
    is_connected,
    lazy_walk_distribution,
    lazy_walk_matrix,
    two_node_fixture,
)


class UndefinedMetricError(ValueError):
    """Fewer than two nonzero rows: pairwise cosine is undefined."""


def _pairwise_cosine(h: np.ndarray) -> tuple[float, int]:
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=1)
    keep = norms > 0.0
    excluded = int((~keep).sum())
    rows = h[keep] / norms[keep, None]
    m = rows.shape[0]
    if m < 2:
        raise UndefinedMetricError("need at least 2 nonzero rows")
    gram = rows @ rows.T
    total = (gram.sum() - m) / 2.0  # strict upper triangle
    mean = total / (m * (m - 1) / 2)
    return float(np.clip(mean, -1.0, 1.0)), excluded


def mean_pairwise_cosine(h: np.ndarray) -> float:
    """Mean cosine over unordered row pairs; zero rows are left out."""
    return _pairwise_cosine(h)[0]


def norm_stats(h: np.ndarray) -> tuple[float, float, float, float]:
    """(mean, population std, min, max) of the row norms."""
    norms = np.linalg.norm(np.asarray(h, dtype=np.float64), axis=1)
    if norms.size == 0:
        raise UndefinedMetricError("no rows")
    return float(norms.mean()), float(norms.std()), float(norms.min()), float(norms.max())


@dataclass
class SmoothnessReport:
    """Per-layer smoothness series, layer 0 (the encoded input) included."""

    cosine: list[float] = field(default_factory=list)
    norm_mean: list[float] = field(default_factory=list)
    norm_std: list[float] = field(default_factory=list)
    norm_min: list[float] = field(default_factory=list)
    norm_max: list[float] = field(default_factory=list)
    excluded_rows: list[int] = field(default_factory=list)

    @classmethod
    def from_trace(cls, trace: list[np.ndarray]) -> "SmoothnessReport":
        rep = cls()
        for h in trace:
            cos, excl = _pairwise_cosine(h)
            mean, std, lo, hi = norm_stats(h)
            rep.cosine.append(cos)
            rep.norm_mean.append(mean)
            rep.norm_std.append(std)
            rep.norm_min.append(lo)
            rep.norm_max.append(hi)
            rep.excluded_rows.append(excl)
        return rep

    @property
    def final_cosine(self) -> float:
        return self.cosine[-1]


class MeanAggregationModel:
    """Linear fixture model: each step replaces every embedding by the mean
    over the node's neighborhood plus itself. No weights, no nonlinearity.

    ``forward`` mirrors the trainable model's signature so the influence
    helpers work on both.
    """

    def __init__(self, depth: int):
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.depth = depth

    def forward(self, tape: Tape, graph: Graph, x_values: np.ndarray,
                align_cfg=None):
        from .model import ForwardResult

        x = tape.tensor(np.asarray(x_values, dtype=np.float64).copy())
        p = tape.tensor(lazy_walk_matrix(graph))
        h = x
        trace = [h.values.copy()]
        for _ in range(self.depth):
            h = matmul(p, h)
            trace.append(h.values.copy())
        return ForwardResult(logits=h, h0=x, final_h=h, trace=trace, bound={})


def _target_row_sum(final_h: Tensor, v: int) -> Tensor:
    """Scalar tensor: sum of the entries of row v of the final embedding."""
    n, d = final_h.shape
    picker = np.zeros((1, n))
    picker[0, v] = 1.0
    row = matmul(final_h.tape.tensor(picker), final_h)
    return sum_all(row)


def influence_score(model, graph: Graph, x_values: np.ndarray, u: int, v: int,
                    align_cfg=None) -> float:
    """Summed Jacobian of node v's final embedding w.r.t. node u's layer-0
    embedding, from one backward pass."""
    if not (0 <= u < graph.n and 0 <= v < graph.n):
        raise GraphValidationError("node index out of range")
    tape = Tape()
    result = model.forward(tape, graph, x_values, align_cfg)
    backward(_target_row_sum(result.final_h, v))
    return float(result.h0.grad[u].sum())


def influence_vector(model, graph: Graph, x_values: np.ndarray, target: int,
                     align_cfg=None) -> np.ndarray:
    """All-sources influence on one target node from a single backward pass:
    entry v is the summed Jacobian of the target's final embedding w.r.t.
    node v's layer-0 embedding."""
    tape = Tape()
    result = model.forward(tape, graph, x_values, align_cfg)
    backward(_target_row_sum(result.final_h, target))
    return result.h0.grad.sum(axis=1).copy()


SMOOTHING_FIXTURE_FEATURES = np.array([[1.0, 0.01], [-1.0, 0.01]])


def smoothing_fixture_curves(depth: int = 16) -> tuple[list[float], list[float]]:
    """Layer-by-layer cosine on the two-node graph, with and without alignment.

    The model is the simplified attention layer: identity weights, zero
    attention vectors (uniform attention), no nonlinearity. Starting from two
    nearly antipodal feature rows, the plain model collapses both embeddings
    onto their midpoint after one layer, while the eval-mode aligned model
    keeps them apart for many layers. Returns (baseline, aligned) cosine
    series of length ``depth``.
    """
    from .align import AlignConfig, randalign_update
    from .autodiff import Tape
    from .layers import BoundLayer, GraphContext, gat_forward

    graph = two_node_fixture()
    eval_cfg = AlignConfig(mode="eval", scaling=True)

    def curve(aligned: bool) -> list[float]:
        h = SMOOTHING_FIXTURE_FEATURES.copy()
        cosines = []
        for _ in range(depth):
            tape = Tape()
            ctx = GraphContext(tape, graph)
            h_t = tape.tensor(h)
            bound = BoundLayer(w=tape.tensor(np.eye(2)),
                               bias=tape.tensor(np.zeros((1, 2))),
                               a_src=tape.tensor(np.zeros((2, 1))),
                               a_dst=tape.tensor(np.zeros((2, 1))))
            out, _ = gat_forward(ctx, h_t, bound, activation="identity")
            if aligned:
                out = randalign_update(h_t, out, eval_cfg)
            h = out.values
            cosines.append(mean_pairwise_cosine(h))
        return cosines

    return curve(False), curve(True)


@dataclass
class InfluenceReport:
    """Influence of every input node on one node's depth-K embedding,
    side by side with the lazy-walk reference distribution."""

    node: int
    depth: int
    influence: np.ndarray
    walk: np.ndarray
    max_deviation: float


def influence_walk_report(graph: Graph, depth: int, d_h: int,
                          target: int = 0) -> InfluenceReport:
    """Compare normalized influence against the lazy-walk distribution.

    Builds the linear mean-aggregation fixture, takes the influence of every
    input node on ``target``'s depth-K embedding, L1-normalizes it, and
    compares against the exact K-step lazy-walk distribution started at
    ``target``. For this exactly linear model the two agree to float
    precision; ``max_deviation`` is the L-inf residual.
    """
    if not is_connected(graph):
        raise GraphValidationError("graph must be connected")
    if depth < 1:
        raise GraphValidationError("depth must be >= 1")
    model = MeanAggregationModel(depth)
    x = np.ones((graph.n, d_h))
    infl = influence_vector(model, graph, x, target)
    if np.any(infl < -1e-12):
        raise AssertionError("mean-aggregation influence should be non-negative")
    infl = np.clip(infl, 0.0, None)
    infl = infl / infl.sum()
    walk = lazy_walk_distribution(graph, target, depth)
    deviation = float(np.abs(infl - walk).max())
    return InfluenceReport(node=target, depth=depth, influence=infl, walk=walk,
                           max_deviation=deviation)


def influence_walk_deviation(graph: Graph, depth: int, d_h: int,
                             target: int = 0) -> float:
    """Just the L-inf gap from ``influence_walk_report``."""
    return influence_walk_report(graph, depth, d_h, target).max_deviation
