"""Experiment driver: config parsing, the depth-sweep run matrix, CSV and
fixture emission, and the self-verification suite.

Config files are flat UTF-8 text, one ``key = value`` per line, ``#`` starts
a comment, lists are comma separated. Artifacts are a pure function of the
config: runs execute in a canonical (depth, randalign, seed) order and all
floats are printed with 6 significant digits, so re-running a config yields
byte-identical CSVs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .graphs import LabeledGraphSet, sbm_dataset, write_edge_list, write_features, write_labels
from .layers import LAYER_KINDS, ModelConfig
from .training import RunRecord, TrainConfig, train_run


class ConfigError(ValueError):
    """The experiment config cannot be parsed or fails validation."""


@dataclass
class ExperimentConfig:
    block_sizes: list[int] = field(default_factory=lambda: [10] * 6)
    p_in: float = 0.5
    p_out: float = 0.05
    feature_noise: float = 0.3
    feature_dim: int | None = None
    train_graphs: int = 100
    test_graphs: int = 30
    data_seed: int = 1
    layer_kind: str = "gcn"
    depths: list[int] = field(default_factory=lambda: [4, 8, 16])
    hidden_dim: int = 16
    randalign: list[bool] = field(default_factory=lambda: [False, True])
    scaling: bool = True
    standardize: bool = True
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    lr_init: float = 1e-3
    patience: int = 10
    max_epochs: int = 40
    min_lr: float = 1e-6
    out_dir: str = "results"

    def __post_init__(self):
        if not self.depths or not self.seeds:
            raise ConfigError("depths and seeds must be non-empty")
        if any(d < 1 for d in self.depths):
            raise ConfigError("depths must be >= 1")
        if self.layer_kind not in LAYER_KINDS:
            raise ConfigError(f"layer_kind must be one of {LAYER_KINDS}")
        if not self.randalign:
            raise ConfigError("randalign list must be non-empty")
        if min(self.train_graphs, self.test_graphs) < 1:
            raise ConfigError("need at least one graph per split")
        if self.hidden_dim < 1 or self.max_epochs < 1:
            raise ConfigError("hidden_dim and max_epochs must be >= 1")


_BOOL_WORDS = {"on": True, "true": True, "yes": True, "1": True,
               "off": False, "false": False, "no": False, "0": False}


def _parse_bool(word: str) -> bool:
    try:
        return _BOOL_WORDS[word.strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {word!r}") from None


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind == "int_list":
            return [int(v) for v in raw.split(",") if v.strip()]
        if kind == "bool_list":
            return [_parse_bool(v) for v in raw.split(",") if v.strip()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            return _parse_bool(raw)
        return raw
    except (ValueError, ConfigError) as err:
        raise ConfigError(f"bad value for {key}: {raw!r} ({err})") from None


_KEY_KINDS = {
    "block_sizes": "int_list",
    "p_in": float,
    "p_out": float,
    "feature_noise": float,
    "feature_dim": int,
    "train_graphs": int,
    "test_graphs": int,
    "data_seed": int,
    "layer_kind": str,
    "depths": "int_list",
    "hidden_dim": int,
    "randalign": "bool_list",
    "scaling": bool,
    "standardize": bool,
    "seeds": "int_list",
    "lr_init": float,
    "patience": int,
    "max_epochs": int,
    "min_lr": float,
    "out_dir": str,
}


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_KINDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, _KEY_KINDS[key])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# datasets and the run matrix


def build_datasets(cfg: ExperimentConfig) -> tuple[LabeledGraphSet, LabeledGraphSet]:
    """Train split seeds from data_seed, test split from data_seed + 10000."""
    train = sbm_dataset(cfg.block_sizes, cfg.p_in, cfg.p_out, cfg.feature_noise,
                        cfg.train_graphs, seed=cfg.data_seed, split="train",
                        d_in=cfg.feature_dim)
    test = sbm_dataset(cfg.block_sizes, cfg.p_in, cfg.p_out, cfg.feature_noise,
                       cfg.test_graphs, seed=cfg.data_seed + 10_000, split="test",
                       d_in=cfg.feature_dim)
    return train, test


def _run_specs(cfg: ExperimentConfig) -> list[tuple[int, bool, int]]:
    return [(depth, ra, seed)
            for depth in sorted(cfg.depths)
            for ra in sorted(cfg.randalign)
            for seed in sorted(cfg.seeds)]


def _execute_one(args) -> RunRecord:
    cfg, train, test, depth, ra, seed = args
    d_in = cfg.feature_dim or len(cfg.block_sizes)
    model_cfg = ModelConfig(cfg.layer_kind, depth=depth, d_in=d_in,
                            d_h=cfg.hidden_dim, n_classes=len(cfg.block_sizes),
                            use_randalign=ra, align_scaling=cfg.scaling,
                            use_standardization=cfg.standardize)
    train_cfg = TrainConfig(lr_init=cfg.lr_init, patience=cfg.patience,
                            max_epochs=cfg.max_epochs, min_lr=cfg.min_lr)
    return train_run(model_cfg, train, test, train_cfg, seed)


def worker_count() -> int:
    raw = os.environ.get("RANDALIGN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_matrix_records(cfg: ExperimentConfig) -> list[tuple[tuple[int, bool, int], RunRecord]]:
    """Train the whole (depth x randalign x seed) grid in canonical order."""
    train, test = build_datasets(cfg)
    specs = _run_specs(cfg)
    args = [(cfg, train, test, depth, ra, seed) for depth, ra, seed in specs]
    workers = worker_count()
    if workers > 1 and len(args) > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            records = pool.map(_execute_one, args)
    else:
        records = [_execute_one(a) for a in args]
    return list(zip(specs, records))


# ---------------------------------------------------------------------------
# CSV emission


def fmt_float(v: float) -> str:
    if isinstance(v, float) and np.isnan(v):
        return "nan"
    return f"{v:.6g}"


def _onoff(flag: bool) -> str:
    return "on" if flag else "off"


RUNS_COLUMNS = ["layer_kind", "depth", "randalign", "scaling", "seed", "epoch",
                "lr", "train_loss", "train_acc", "test_acc", "final_cosine",
                "diverged"]

SUMMARY_COLUMNS = ["layer_kind", "depth", "randalign", "scaling", "n_seeds",
                   "train_acc_mean", "train_acc_std", "test_acc_mean",
                   "test_acc_std", "final_cosine_mean", "epochs_mean",
                   "diverged_count"]


def runs_csv_rows(cfg: ExperimentConfig,
                  results: list[tuple[tuple[int, bool, int], RunRecord]]) -> list[str]:
    lines = [",".join(RUNS_COLUMNS)]
    for (depth, ra, seed), rec in results:
        base = [cfg.layer_kind, str(depth), _onoff(ra), _onoff(cfg.scaling), str(seed)]
        cosine = fmt_float(rec.final_cosine)
        flag = _onoff(rec.diverged)
        for epoch in range(rec.epochs):
            lines.append(",".join(base + [
                str(epoch + 1),
                fmt_float(rec.lr[epoch]),
                fmt_float(rec.train_loss[epoch]),
                fmt_float(rec.train_acc[epoch]),
                fmt_float(rec.test_acc[epoch]),
                cosine,
                flag,
            ]))
        if rec.epochs == 0:  # diverged before completing the first epoch
            lines.append(",".join(base + ["0", fmt_float(cfg.lr_init), "nan",
                                          "nan", "nan", cosine, flag]))
    return lines


def summary_csv_rows(cfg: ExperimentConfig,
                     results: list[tuple[tuple[int, bool, int], RunRecord]]) -> list[str]:
    cells: dict[tuple[int, bool], list[RunRecord]] = {}
    for (depth, ra, _seed), rec in results:
        cells.setdefault((depth, ra), []).append(rec)
    lines = [",".join(SUMMARY_COLUMNS)]
    for (depth, ra) in sorted(cells):
        recs = cells[(depth, ra)]
        ok = [r for r in recs if not r.diverged]
        diverged = len(recs) - len(ok)

        def agg(values):
            if not values:
                return float("nan"), float("nan")
            arr = np.array(values, dtype=np.float64)
            return float(arr.mean()), float(arr.std())

        train_mean, train_std = agg([r.final_train_acc for r in ok])
        test_mean, test_std = agg([r.final_test_acc for r in ok])
        cos_mean, _ = agg([r.final_cosine for r in ok
                           if np.isfinite(r.final_cosine)])
        epochs_mean, _ = agg([float(r.epochs) for r in ok])
        lines.append(",".join([
            cfg.layer_kind, str(depth), _onoff(ra), _onoff(cfg.scaling),
            str(len(recs)), fmt_float(train_mean), fmt_float(train_std),
            fmt_float(test_mean), fmt_float(test_std), fmt_float(cos_mean),
            fmt_float(epochs_mean), str(diverged),
        ]))
    return lines


def write_lines(lines: list[str], path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run_matrix(cfg: ExperimentConfig) -> int:
    """Execute the grid and write runs.csv / summary.csv. Returns the number
    of diverged runs (reported as warnings, not errors)."""
    results = run_matrix_records(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_lines(runs_csv_rows(cfg, results), os.path.join(cfg.out_dir, "runs.csv"))
    write_lines(summary_csv_rows(cfg, results), os.path.join(cfg.out_dir, "summary.csv"))
    return sum(1 for _, rec in results if rec.diverged)


def read_csv_rows(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        return []
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


# ---------------------------------------------------------------------------
# fixture generation (gen-sbm)


def generate_fixtures(cfg: ExperimentConfig) -> list[str]:
    """Write every dataset graph as edge-list / labels / features files."""
    train, test = build_datasets(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    written = []
    for split, data in (("train", train), ("test", test)):
        for i, (g, y, x) in enumerate(zip(data.graphs, data.node_labels,
                                          data.node_features)):
            stem = os.path.join(cfg.out_dir, f"{split}_{i:03d}")
            write_edge_list(g, stem + ".edges")
            write_labels(y, stem + ".labels")
            write_features(x, stem + ".features.csv")
            written.append(stem)
    return written


# ---------------------------------------------------------------------------
# the self-verification suite


def _check_two_node_smoothing() -> tuple[bool, str]:
    from .diagnostics import smoothing_fixture_curves

    baseline, aligned = smoothing_fixture_curves(depth=16)
    monotone = all(b >= a - 1e-12 for a, b in zip(baseline, baseline[1:]))
    saturated = baseline[-1] >= 1.0 - 1e-3
    separated = aligned[-1] <= baseline[-1] - 0.05
    ok = monotone and saturated and separated
    detail = (f"baseline16={baseline[-1]:.6f} aligned16={aligned[-1]:.6f} "
              f"monotone={monotone}")
    return ok, detail


def _check_influence_walk_agreement() -> tuple[bool, str]:
    from .diagnostics import influence_walk_deviation
    from .graphs import random_connected_graph

    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(4, 17))
        g = random_connected_graph(n, int(rng.integers(0, n)), seed=5000 + i)
        depth = int(rng.integers(1, 6))
        worst = max(worst, influence_walk_deviation(g, depth, d_h=3))
    return worst < 1e-9, f"max deviation {worst:.3e} over 20 graphs"


def _check_alignment_algebra() -> tuple[bool, str]:
    from .align import align_row

    rng = np.random.Generator(np.random.PCG64(7))
    violations = 0
    for _ in range(10_000):
        d = int(rng.integers(1, 6))
        h_prev = rng.normal(size=d) * rng.uniform(0.1, 10)
        h_new = rng.normal(size=d) * rng.uniform(0.1, 10)
        coeff = float(rng.random())
        out = align_row(h_prev, h_new, coeff, scaling=True)
        if np.linalg.norm(out) > np.linalg.norm(h_new) + 1e-9:
            violations += 1
        if np.linalg.norm(align_row(h_prev, h_new, 0.0) - h_new) > 1e-9:
            violations += 1
        unit = h_prev / np.linalg.norm(h_prev)
        end = unit * np.linalg.norm(h_new)
        if np.linalg.norm(align_row(h_prev, h_new, 1.0) - end) > 1e-9:
            violations += 1
        c = float(rng.uniform(0.1, 5.0))
        if np.linalg.norm(align_row(c * h_new, h_new, coeff) - h_new) > 1e-9:
            violations += 1
    return violations == 0, f"{violations} violations over 10000 triples"


def _check_gradient_suite() -> tuple[bool, str]:
    from .align import AlignConfig, randalign_update
    from .autodiff import (
        Tape,
        apply_primitive,
        finite_diff_check,
        hadamard,
        masked_row_softmax,
        sum_all,
    )
    from .graphs import random_connected_graph
    from .layers import BoundLayer, GraphContext, gat_forward, gatedgcn_forward, gcn_forward
    from .training import cross_entropy_loss

    worst = 0.0

    def check(f, x):
        nonlocal worst
        worst = max(worst, finite_diff_check(f, x, eps=1e-5))

    unary = ["scale", "relu", "sigmoid", "exp", "log", "sum_all",
             "row_l2_norm", "transpose"]
    binary = ["matmul", "add", "sub", "hadamard", "rowwise_div"]
    for seed in range(10):
        rng = np.random.default_rng(9000 + seed)
        for kind in unary:
            vals = rng.normal(size=(3, 3))
            if kind == "log":
                vals = np.abs(vals) + 0.2
            if kind == "relu":
                vals[np.abs(vals) < 0.05] = 0.3
            if kind == "row_l2_norm":
                vals += np.sign(vals) * 0.1
            attrs = {"factor": 1.3} if kind == "scale" else {}
            check(lambda x, k=kind, a=attrs: sum_all(apply_primitive(k, [x], **a)),
                  Tape().tensor(vals))
        for kind in binary:
            a = rng.normal(size=(3, 3))
            if kind == "rowwise_div":
                b = rng.uniform(0.5, 2.0, size=(3, 1))
            elif kind == "matmul":
                b = rng.normal(size=(3, 3))
            else:
                b = rng.normal(size=(3, 3))
            check(lambda x, k=kind, o=b: sum_all(apply_primitive(k, [x, x.tape.tensor(o)])),
                  Tape().tensor(a))
        mask = rng.random((3, 3)) < 0.7
        mask[np.arange(3), np.arange(3)] = True
        w = rng.normal(size=(3, 3))
        check(lambda x, m=mask, w=w: sum_all(hadamard(masked_row_softmax(x, m),
                                                      x.tape.tensor(w))),
              Tape().tensor(rng.normal(size=(3, 3))))

        g = random_connected_graph(4, 2, seed=seed)
        w_mat = rng.normal(size=(3, 3))
        bias = rng.normal(size=(1, 3))
        probe = rng.normal(size=(4, 3))
        x0 = rng.normal(size=(4, 3)) + 0.3

        def bound_for(tape, **extra):
            b = BoundLayer(w=tape.tensor(w_mat), bias=tape.tensor(bias))
            for name, arr in extra.items():
                setattr(b, name, tape.tensor(arr))
            return b

        a_src, a_dst = rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
        gu, gv = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        check(lambda x: sum_all(hadamard(
            gcn_forward(GraphContext(x.tape, g), x, bound_for(x.tape)),
            x.tape.tensor(probe))), Tape().tensor(x0.copy()))
        check(lambda x: sum_all(hadamard(
            gat_forward(GraphContext(x.tape, g), x,
                        bound_for(x.tape, a_src=a_src, a_dst=a_dst))[0],
            x.tape.tensor(probe))), Tape().tensor(x0.copy()))
        check(lambda x: sum_all(hadamard(
            gatedgcn_forward(GraphContext(x.tape, g), x,
                             bound_for(x.tape, gate_u=gu, gate_v=gv)),
            x.tape.tensor(probe))), Tape().tensor(x0.copy()))

        labels = rng.integers(0, 3, size=4)
        check(lambda x, y=labels: cross_entropy_loss(x, y),
              Tape().tensor(rng.normal(size=(4, 3))))

        coeffs = rng.random(4)
        other = rng.normal(size=(4, 3)) + np.sign(rng.normal(size=(4, 3))) * 0.2
        check(lambda x: sum_all(hadamard(
            randalign_update(x, x.tape.tensor(other), AlignConfig(mode="eval"),
                             coeffs=coeffs),
            x.tape.tensor(probe))), Tape().tensor(x0.copy()))

    return worst < 1e-4, f"max relative error {worst:.3e}"


VERIFY_CHECKS = [
    ("two-node-smoothing", _check_two_node_smoothing),
    ("influence-walk-agreement", _check_influence_walk_agreement),
    ("alignment-algebra", _check_alignment_algebra),
    ("gradient-checks", _check_gradient_suite),
]


def verify_fixtures(report=print) -> bool:
    """Run the fixture suite; one PASS/FAIL line per check."""
    all_ok = True
    for name, check in VERIFY_CHECKS:
        ok, detail = check()
        all_ok &= ok
        report(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
