"""Random alignment of a layer's output toward the previous layer's embedding.

Each node's freshly aggregated embedding is pulled back toward its previous
embedding by a random convex combination, then a residual adds the previous
embedding on top:

    new[u] = prev[u] + c_u * (prev[u] / ||prev[u]||) * ||agg[u]|| + (1 - c_u) * agg[u]

The mixing coefficient c_u is drawn per node from U(0, 1) during training and
fixed at its expectation 0.5 during evaluation. With ``scaling`` off the
middle term degrades to plain interpolation ``c_u * prev[u]`` (the ablation
variant). A previous row with norm below 1e-12 has no usable direction, so
its aligned term falls back to the raw aggregation unchanged.

Coefficients are constants of the pass: no gradient flows into the sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, add, apply_primitive


@dataclass
class AlignConfig:
    """Mode, scaling flag, and the RNG stream owned by one training run.

    Eval mode never consumes the stream, so interleaving eval passes cannot
    perturb a seeded training trajectory.
    """

    mode: str = "eval"
    scaling: bool = True
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        if self.mode == "train" and self.rng is None:
            raise ValueError("train mode needs an rng stream")


def sample_mix_coeff(cfg: AlignConfig) -> float:
    """One mixing coefficient: U(0,1) in training, exactly 0.5 in eval."""
    if cfg.mode == "train":
        return float(cfg.rng.random())
    return 0.5


def _sample_coeff_vector(cfg: AlignConfig, n: int) -> np.ndarray:
    # vectorized draw; PCG64 yields the identical stream as n single draws
    if cfg.mode == "train":
        return cfg.rng.random(n)
    return np.full(n, 0.5)


def align_row(h_prev: np.ndarray, h_new: np.ndarray, coeff: float,
              scaling: bool = True) -> np.ndarray:
    """Reference single-row alignment (no residual, no tape).

    With scaling on: ``coeff * unit(h_prev) * ||h_new|| + (1-coeff) * h_new``;
    off: ``coeff * h_prev + (1-coeff) * h_new``.
    """
    if not (0.0 <= coeff <= 1.0):
        raise ValueError(f"coeff={coeff} outside [0,1]")
    h_prev = np.asarray(h_prev, dtype=np.float64)
    h_new = np.asarray(h_new, dtype=np.float64)
    if not scaling:
        return coeff * h_prev + (1.0 - coeff) * h_new
    prev_norm = np.linalg.norm(h_prev)
    if prev_norm < 1e-12:
        return h_new.copy()
    return coeff * (h_prev / prev_norm) * np.linalg.norm(h_new) + (1.0 - coeff) * h_new


def randalign_update(h_prev: Tensor, h_new: Tensor, cfg: AlignConfig,
                     coeffs: np.ndarray | None = None) -> Tensor:
    """Tape-recorded update ``h_prev + align(h_prev, h_new)`` for all rows.

    One independent coefficient per node is drawn in ascending node order
    (``coeffs`` overrides the draw, for tests that need a pinned stream).
    Differentiable with respect to both inputs.
    """
    if h_prev.shape != h_new.shape:
        raise ShapeError(f"align shapes {h_prev.shape} vs {h_new.shape}")
    if coeffs is None:
        coeffs = _sample_coeff_vector(cfg, h_prev.rows)
    else:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (h_prev.rows,):
            raise ValueError(f"need {h_prev.rows} coefficients, got {coeffs.shape}")
    aligned = apply_primitive("align_rows", [h_prev, h_new],
                              coeffs=coeffs, scaling=bool(cfg.scaling))
    return add(h_prev, aligned)
