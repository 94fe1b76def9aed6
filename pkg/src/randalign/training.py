"""Loss, Adam, reduce-on-plateau scheduling, and the seeded training loop.

Training is full batch: one Adam step per epoch over every training graph,
with per-graph tapes whose gradients accumulate into the shared parameter
buffers. The learning rate starts at 1e-3 and halves whenever the training
loss fails to improve for ``patience`` epochs; the run stops once the rate
drops below 1e-6 (or at the epoch cap).

All reported accuracies come from eval-mode forward passes, and a run is a
pure function of (seed, configs, data): one PCG64 stream seeded with the run
seed initializes the parameters and then supplies the alignment draws.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .align import AlignConfig
from .autodiff import Tape, Tensor, backward, exp, hadamard, log, matmul, scale, sub
from .diagnostics import SmoothnessReport
from .graphs import LabeledGraphSet
from .layers import ModelConfig
from .model import Model


class LabelError(ValueError):
    """A label falls outside [0, n_classes)."""


def cross_entropy_loss(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Weighted mean of -log softmax(logits)[i, label_i], as a scalar tensor.

    Stabilized with the log-sum-exp shift (the per-row max is a constant of
    the pass, which leaves both the value and the gradient exact). Weights
    are per class; the mean is sum(w_i * loss_i) / sum(w_i).
    """
    n, n_classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise LabelError(f"need {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"label outside [0,{n_classes})")
    if class_weights is None:
        class_weights = np.ones(n_classes)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (n_classes,) or np.any(class_weights < 0):
        raise LabelError("class_weights must be non-negative, one per class")

    tape = logits.tape
    row_max = logits.values.max(axis=1, keepdims=True)
    shifted = sub(logits, tape.tensor(np.repeat(row_max, n_classes, axis=1)))
    exp_shifted = exp(shifted)
    sum_exp = matmul(exp_shifted, tape.tensor(np.ones((n_classes, 1))))
    lse = sub(log(sum_exp), tape.tensor(-row_max))
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    picked = matmul(hadamard(logits, tape.tensor(onehot)),
                    tape.tensor(np.ones((n_classes, 1))))
    per_node = sub(lse, picked)
    w = class_weights[labels]
    w_row = (w / w.sum())[None, :]
    return matmul(tape.tensor(w_row), per_node)


def class_weights_from_labels(label_arrays, n_classes: int) -> np.ndarray:
    """Inverse class frequency over the training split, normalized so the
    weights of the classes actually present average to one. Absent classes
    get weight zero (they cannot contribute to the loss anyway)."""
    counts = np.zeros(n_classes)
    for y in label_arrays:
        counts += np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = 1.0 / counts[present]
    w[present] *= present.sum() / w[present].sum()
    return w


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class PlateauSchedule:
    """Halve the rate after ``patience`` epochs without loss improvement.

    Improvement means the metric dropped below the best seen minus a 1e-6
    absolute tolerance. ``halt`` turns true once the rate falls below the
    minimum; learning never resumes after that.
    """

    lr: float = 1e-3
    factor: float = 0.5
    patience: int = 10
    min_lr: float = 1e-6
    improve_tol: float = 1e-6
    best: float = float("inf")
    since_improvement: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def plateau_update(sched: PlateauSchedule, epoch_metric: float) -> tuple[float, bool]:
    if epoch_metric < sched.best - sched.improve_tol:
        sched.best = epoch_metric
        sched.since_improvement = 0
    else:
        sched.since_improvement += 1
        if sched.since_improvement >= sched.patience:
            sched.lr *= sched.factor
            sched.since_improvement = 0
    return sched.lr, sched.lr < sched.min_lr


def balanced_accuracy(preds, labels, n_classes: int) -> float:
    """Mean per-class recall; classes absent from the labels are skipped."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.size == 0:
        raise LabelError("preds and labels must be equal-length and non-empty")
    recalls = []
    for c in range(n_classes):
        mask = labels == c
        if mask.any():
            recalls.append(float((preds[mask] == c).mean()))
    return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainConfig:
    lr_init: float = 1e-3
    patience: int = 10
    max_epochs: int = 200
    min_lr: float = 1e-6
    improve_tol: float = 1e-6


@dataclass
class RunRecord:
    """Everything one seeded run produced; serializes to CSV row groups.

    Wall-clock time stays in memory only so output files are byte
    reproducible.
    """

    seed: int
    config: dict
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    smoothness: SmoothnessReport | None = None
    wall_seconds: float = 0.0
    diverged: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def final_train_acc(self) -> float:
        return self.train_acc[-1] if self.train_acc else 0.0

    @property
    def final_test_acc(self) -> float:
        return self.test_acc[-1] if self.test_acc else 0.0

    @property
    def final_cosine(self) -> float:
        return self.smoothness.final_cosine if self.smoothness else float("nan")


def evaluate(model: Model, data: LabeledGraphSet, align_scaling: bool = True) -> float:
    """Eval-mode balanced accuracy over all nodes pooled across graphs."""
    eval_cfg = AlignConfig(mode="eval", scaling=align_scaling)
    preds, labels = [], []
    for g, y, x in zip(data.graphs, data.node_labels, data.node_features):
        result = model.forward(Tape(), g, x, eval_cfg)
        preds.append(result.logits.values.argmax(axis=1))
        labels.append(np.asarray(y))
    return balanced_accuracy(np.concatenate(preds), np.concatenate(labels),
                             data.n_classes)


def train_run(model_cfg: ModelConfig, train_data: LabeledGraphSet,
              test_data: LabeledGraphSet, train_cfg: TrainConfig,
              seed: int) -> RunRecord:
    """Run one seeded training; deterministic given (seed, configs, data)."""
    if not len(train_data) or not len(test_data):
        raise ValueError("train and test splits must be non-empty")
    started = time.perf_counter()
    stream = np.random.Generator(np.random.PCG64(seed))
    model = Model(model_cfg, stream)
    train_align = AlignConfig(mode="train", scaling=model_cfg.align_scaling, rng=stream)

    params = dict(model.named_params())
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    adam = AdamState(lr=train_cfg.lr_init)
    sched = PlateauSchedule(lr=train_cfg.lr_init, patience=train_cfg.patience,
                            min_lr=train_cfg.min_lr, improve_tol=train_cfg.improve_tol)
    weights = class_weights_from_labels(train_data.node_labels, train_data.n_classes)

    record = RunRecord(seed=seed, config={
        "layer_kind": model_cfg.layer_kind, "depth": model_cfg.depth,
        "d_h": model_cfg.d_h, "randalign": model_cfg.use_randalign,
        "scaling": model_cfg.align_scaling,
        "standardize": model_cfg.use_standardization,
    })
    n_graphs = len(train_data)

    # overflow in a diverging run is the signal the guard watches for, not
    # something to warn about
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(train_cfg.max_epochs):
            for buf in grads.values():
                buf.fill(0.0)
            epoch_loss = 0.0
            for g, y, x in zip(train_data.graphs, train_data.node_labels,
                               train_data.node_features):
                tape = Tape()
                result = model.forward(tape, g, x, train_align)
                loss = cross_entropy_loss(result.logits, y, weights)
                backward(scale(loss, 1.0 / n_graphs))
                for name, leaf in result.bound.items():
                    grads[name] += leaf.grad
                epoch_loss += float(loss.values[0, 0]) / n_graphs

            if not np.isfinite(epoch_loss):
                record.diverged = True
                break

            adam.lr = sched.lr
            adam_step(params, grads, adam)
            record.train_loss.append(epoch_loss)
            record.lr.append(sched.lr)
            record.train_acc.append(evaluate(model, train_data,
                                             model_cfg.align_scaling))
            record.test_acc.append(evaluate(model, test_data,
                                            model_cfg.align_scaling))
            _, halt = plateau_update(sched, epoch_loss)
            if halt:
                break

        probe_g = test_data.graphs[0]
        probe_x = test_data.node_features[0]
        eval_cfg = AlignConfig(mode="eval", scaling=model_cfg.align_scaling)
        try:
            result = model.forward(Tape(), probe_g, probe_x, eval_cfg)
            record.smoothness = SmoothnessReport.from_trace(result.trace)
        except (FloatingPointError, ValueError):
            record.smoothness = None
    record.wall_seconds = time.perf_counter() - started
    return record
