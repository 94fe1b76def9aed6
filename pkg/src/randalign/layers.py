"""Message-passing layers: GCN, single-head GAT, and a gated variant.

Every layer maps a graph plus an (n, d_h) embedding matrix to the next
intermediate embedding on the autodiff tape. The attention layer follows the
raw-score form (no leaky slope) and attends over each node's neighborhood
plus the node itself, so single-node graphs stay well defined. The gated
variant ("GatedGCN-lite") derives its sigmoid edge gates from the endpoint
node embeddings alone; there is no edge-feature channel.

Layers never add their own residual connection: the alignment update owns
the residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    apply_primitive,
    exp,
    hadamard,
    log,
    masked_row_softmax,
    matmul,
    relu,
    scale,
    sub,
    transpose,
)
from .graphs import Graph, normalized_operators

LAYER_KINDS = ("gcn", "gat", "gatedgcn")

STANDARDIZE_EPS = 1e-5
GATE_EPS = 1e-6


@dataclass
class ModelConfig:
    layer_kind: str
    depth: int
    d_in: int
    d_h: int
    n_classes: int
    use_randalign: bool = False
    align_scaling: bool = True
    use_standardization: bool = False
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"layer_kind must be one of {LAYER_KINDS}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if min(self.d_in, self.d_h, self.n_classes) < 1:
            raise ValueError("widths must be >= 1")
        if self.nonlinearity != "relu":
            raise ValueError("only relu is supported")


@dataclass
class LayerParams:
    """Learnable weights for one layer, stored as plain arrays.

    ``a_src``/``a_dst`` are the two halves of the attention vector: scoring a
    concatenated pair [x || y] with one vector is identical to
    a_src.x + a_dst.y. ``gate_u``/``gate_v`` exist only for the gated kind;
    ``norm_scale``/``norm_shift`` only when standardization is enabled.
    """

    w: np.ndarray
    bias: np.ndarray
    a_src: np.ndarray | None = None
    a_dst: np.ndarray | None = None
    gate_u: np.ndarray | None = None
    gate_v: np.ndarray | None = None
    norm_scale: np.ndarray | None = None
    norm_shift: np.ndarray | None = None


def _uniform(rng: np.random.Generator, shape: tuple[int, int], fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def init_layer_params(kind: str, d_h: int, rng: np.random.Generator,
                      standardize: bool = False) -> LayerParams:
    """Seeded init, uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    Draw order: w, bias, then (a_src, a_dst) for gat or (gate_u, gate_v) for
    gatedgcn. Standardization scale/shift start at 1/0 without consuming the
    stream.
    """
    p = LayerParams(w=_uniform(rng, (d_h, d_h), d_h), bias=_uniform(rng, (1, d_h), d_h))
    if kind == "gat":
        p.a_src = _uniform(rng, (d_h, 1), d_h)
        p.a_dst = _uniform(rng, (d_h, 1), d_h)
    elif kind == "gatedgcn":
        p.gate_u = _uniform(rng, (d_h, d_h), d_h)
        p.gate_v = _uniform(rng, (d_h, d_h), d_h)
    if standardize:
        p.norm_scale = np.ones((1, d_h))
        p.norm_shift = np.zeros((1, d_h))
    return p


@dataclass
class DenseParams:
    """A plain affine map (used by the input encoder and the readout heads)."""

    w: np.ndarray
    bias: np.ndarray


def init_dense_params(d_in: int, d_out: int, rng: np.random.Generator) -> DenseParams:
    return DenseParams(w=_uniform(rng, (d_in, d_out), d_in),
                       bias=_uniform(rng, (1, d_out), d_in))


class GraphContext:
    """Per-pass constants for one graph: propagation matrix, masks, ones.

    Everything here is a constant of the pass; gradients flow through the
    embedding operands only.
    """

    def __init__(self, tape: Tape, graph: Graph):
        self.tape = tape
        self.graph = graph
        self.n = graph.n
        self._prop: Tensor | None = None
        self._attn_mask: np.ndarray | None = None
        self._ones_col: Tensor | None = None
        self._ones_row: Tensor | None = None

    @property
    def prop(self) -> Tensor:
        if self._prop is None:
            self._prop = self.tape.tensor(normalized_operators(self.graph).a_renorm)
        return self._prop

    @property
    def attn_mask(self) -> np.ndarray:
        if self._attn_mask is None:
            mask = self.graph.adjacency().astype(bool)
            np.fill_diagonal(mask, True)
            self._attn_mask = mask
        return self._attn_mask

    @property
    def ones_col(self) -> Tensor:
        if self._ones_col is None:
            self._ones_col = self.tape.tensor(np.ones((self.n, 1)))
        return self._ones_col

    @property
    def ones_row(self) -> Tensor:
        if self._ones_row is None:
            self._ones_row = self.tape.tensor(np.ones((1, self.n)))
        return self._ones_row


def broadcast_rows(row: Tensor, n: int, ones_col: Tensor | None = None) -> Tensor:
    """Tile a (1, d) row down to (n, d) on the tape."""
    if ones_col is None:
        ones_col = row.tape.tensor(np.ones((n, 1)))
    return matmul(ones_col, row)


def _activate(h: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(h)
    if activation == "identity":
        return h
    raise ValueError(f"unknown activation {activation!r}")


def encode(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Linear input encoder: X W + bias, no nonlinearity.

    Lifts raw features to the hidden width so that every aligned pair of
    embeddings shares one width from layer 0 on.
    """
    n = x.rows
    return add(matmul(x, w), broadcast_rows(bias, n))


def gcn_forward(ctx: GraphContext, h: Tensor, p: "BoundLayer",
                activation: str = "relu") -> Tensor:
    """relu(A_hat @ H @ W + bias) with the renormalized propagation matrix."""
    z = add(matmul(ctx.prop, matmul(h, p.w)), broadcast_rows(p.bias, ctx.n, ctx.ones_col))
    return _activate(z, activation)


def gat_forward(ctx: GraphContext, h: Tensor, p: "BoundLayer",
                activation: str = "relu") -> tuple[Tensor, Tensor]:
    """Attention aggregation; returns (embedding, attention matrix).

    Raw score for edge (u, v) is a_src.(W h_u) + a_dst.(W h_v); rows are
    normalized with a masked softmax over N(u) plus u itself, so every
    consumed attention row sums to one.
    """
    wh = matmul(h, p.w)
    src = matmul(wh, p.a_src)
    dst = matmul(wh, p.a_dst)
    scores = add(matmul(src, ctx.ones_row), matmul(ctx.ones_col, transpose(dst)))
    alpha = masked_row_softmax(scores, ctx.attn_mask)
    z = add(matmul(alpha, wh), broadcast_rows(p.bias, ctx.n, ctx.ones_col))
    return _activate(z, activation), alpha


def gatedgcn_forward(ctx: GraphContext, h: Tensor, p: "BoundLayer",
                     activation: str = "relu") -> Tensor:
    """Gated neighbor mean plus a self term.

    Gates are sigmoid(gate_u @ h_u + gate_v @ h_v) per edge and feature; the
    neighbor sum is normalized by the gate sum plus a small epsilon, so an
    isolated node reduces to relu(W h_u + bias).
    """
    wh = matmul(h, p.w)
    gu = matmul(h, p.gate_u)
    gv = matmul(h, p.gate_v)
    agg = apply_primitive("gated_neighbor_mean", [gu, gv, wh],
                          neighbor_lists=ctx.graph.neighbor_lists, eps=GATE_EPS)
    z = add(add(wh, agg), broadcast_rows(p.bias, ctx.n, ctx.ones_col))
    return _activate(z, activation)


def standardize(h: Tensor, norm_scale: Tensor, norm_shift: Tensor) -> Tensor:
    """Per-feature mean-0 / variance-1 over the nodes of one graph.

    Population variance with an epsilon guard in the denominator, then a
    learnable per-feature scale and shift. The guard means a unit-variance
    column comes out with variance 1/(1 + eps/var), not exactly 1.
    """
    tape = h.tape
    n, d = h.shape
    ones_row = tape.tensor(np.ones((1, n)))
    ones_col = tape.tensor(np.ones((n, 1)))
    mean_row = scale(matmul(ones_row, h), 1.0 / n)
    centered = sub(h, matmul(ones_col, mean_row))
    var_row = scale(matmul(ones_row, hadamard(centered, centered)), 1.0 / n)
    guarded = add(var_row, tape.tensor(np.full((1, d), STANDARDIZE_EPS)))
    inv_std_row = exp(scale(log(guarded), -0.5))
    normed = hadamard(centered, matmul(ones_col, inv_std_row))
    return add(hadamard(normed, matmul(ones_col, norm_scale)),
               matmul(ones_col, norm_shift))


def readout_node(h: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Per-node class logits: H W + bias. The loss applies the softmax."""
    return add(matmul(h, w), broadcast_rows(bias, h.rows))


def readout_graph(h: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Mean-pool the node rows, then the same linear head: (1, n_classes)."""
    n = h.rows
    if n == 0:
        raise ValueError("cannot pool an empty graph")
    pooled = scale(matmul(h.tape.tensor(np.ones((1, n))), h), 1.0 / n)
    return add(matmul(pooled, w), bias)


@dataclass
class BoundLayer:
    """Tape-bound view of LayerParams: the same fields as leaf tensors."""

    w: Tensor
    bias: Tensor
    a_src: Tensor | None = None
    a_dst: Tensor | None = None
    gate_u: Tensor | None = None
    gate_v: Tensor | None = None
    norm_scale: Tensor | None = None
    norm_shift: Tensor | None = None
    tensors: dict[str, Tensor] = field(default_factory=dict)


def bind_layer(tape: Tape, p: LayerParams, prefix: str) -> BoundLayer:
    bound = BoundLayer(w=tape.tensor(p.w), bias=tape.tensor(p.bias))
    bound.tensors = {f"{prefix}.w": bound.w, f"{prefix}.bias": bound.bias}
    for name in ("a_src", "a_dst", "gate_u", "gate_v", "norm_scale", "norm_shift"):
        arr = getattr(p, name)
        if arr is not None:
            t = tape.tensor(arr)
            setattr(bound, name, t)
            bound.tensors[f"{prefix}.{name}"] = t
    return bound
