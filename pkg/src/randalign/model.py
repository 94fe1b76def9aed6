"""End-to-end node-classification model: encoder, K layers, optional
alignment, linear readout.

Parameters live as plain numpy arrays owned by the ``Model``; every forward
pass binds them as leaf tensors on a fresh tape, so the optimizer reads
per-parameter gradients off the leaves after ``backward`` and updates the
arrays in place.

With standardization enabled each layer's pre-activation is standardized
before the nonlinearity (the usual conv -> norm -> relu order). When the
alignment update is enabled it runs after the nonlinearity, on the layer's
finished output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import AlignConfig, randalign_update
from .autodiff import Tape, Tensor, relu
from .graphs import Graph
from .layers import (
    BoundLayer,
    GraphContext,
    ModelConfig,
    bind_layer,
    encode,
    gat_forward,
    gatedgcn_forward,
    gcn_forward,
    init_dense_params,
    init_layer_params,
    readout_node,
    standardize,
)


@dataclass
class ForwardResult:
    logits: Tensor
    h0: Tensor
    final_h: Tensor
    trace: list[np.ndarray]
    bound: dict[str, Tensor]


class Model:
    """Parameter container plus the forward pass over one graph."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = init_dense_params(cfg.d_in, cfg.d_h, rng)
        self.layers = [
            init_layer_params(cfg.layer_kind, cfg.d_h, rng,
                              standardize=cfg.use_standardization)
            for _ in range(cfg.depth)
        ]
        self.head = init_dense_params(cfg.d_h, cfg.n_classes, rng)

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        """Deterministic (name, array) order used by init, Adam, and audits."""
        out = [("encoder.w", self.encoder.w), ("encoder.bias", self.encoder.bias)]
        for k, p in enumerate(self.layers):
            prefix = f"layer{k}"
            out.append((f"{prefix}.w", p.w))
            out.append((f"{prefix}.bias", p.bias))
            for name in ("a_src", "a_dst", "gate_u", "gate_v",
                         "norm_scale", "norm_shift"):
                arr = getattr(p, name)
                if arr is not None:
                    out.append((f"{prefix}.{name}", arr))
        out.append(("head.w", self.head.w))
        out.append(("head.bias", self.head.bias))
        return out

    def _layer_step(self, ctx: GraphContext, h: Tensor, bound: BoundLayer) -> Tensor:
        kind = self.cfg.layer_kind
        activation = "identity" if self.cfg.use_standardization else "relu"
        if kind == "gcn":
            z = gcn_forward(ctx, h, bound, activation=activation)
        elif kind == "gat":
            z, _ = gat_forward(ctx, h, bound, activation=activation)
        else:
            z = gatedgcn_forward(ctx, h, bound, activation=activation)
        if self.cfg.use_standardization:
            z = relu(standardize(z, bound.norm_scale, bound.norm_shift))
        return z

    def forward(self, tape: Tape, graph: Graph, x_values: np.ndarray,
                align_cfg: AlignConfig | None = None) -> ForwardResult:
        """Run the full pass; ``align_cfg`` is required when alignment is on."""
        cfg = self.cfg
        if cfg.use_randalign and align_cfg is None:
            raise ValueError("model uses alignment: pass an AlignConfig")
        ctx = GraphContext(tape, graph)
        x = tape.tensor(np.asarray(x_values, dtype=np.float64).copy())
        bound: dict[str, Tensor] = {}

        enc_w, enc_b = tape.tensor(self.encoder.w), tape.tensor(self.encoder.bias)
        bound["encoder.w"] = enc_w
        bound["encoder.bias"] = enc_b
        h = encode(x, enc_w, enc_b)
        h0 = h
        trace = [h.values.copy()]

        for k, layer in enumerate(self.layers):
            bl = bind_layer(tape, layer, f"layer{k}")
            bound.update(bl.tensors)
            z = self._layer_step(ctx, h, bl)
            if cfg.use_randalign:
                h = randalign_update(h, z, align_cfg)
            else:
                h = z
            trace.append(h.values.copy())

        head_w, head_b = tape.tensor(self.head.w), tape.tensor(self.head.bias)
        bound["head.w"] = head_w
        bound["head.bias"] = head_b
        logits = readout_node(h, head_w, head_b)
        return ForwardResult(logits=logits, h0=h0, final_h=h, trace=trace, bound=bound)


def build_model(cfg: ModelConfig, seed: int) -> Model:
    return Model(cfg, np.random.Generator(np.random.PCG64(seed)))


def save_params_csv(model: Model, path) -> None:
    """Flat CSV of named matrices: ``name,rows,cols,v...`` one line each,
    row-major, full round-trip precision."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for name, arr in model.named_params():
            flat = ",".join(repr(float(v)) for v in arr.ravel())
            fh.write(f"{name},{arr.shape[0]},{arr.shape[1]},{flat}\n")


def load_params_csv(model: Model, path) -> None:
    """Restore parameters written by ``save_params_csv`` into ``model``."""
    loaded = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            name, rows, cols = parts[0], int(parts[1]), int(parts[2])
            values = np.array([float(v) for v in parts[3:]]).reshape(rows, cols)
            loaded[name] = values
    params = dict(model.named_params())
    if set(loaded) != set(params):
        raise ValueError("parameter names do not match this model")
    for name, arr in params.items():
        if loaded[name].shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        arr[:] = loaded[name]
