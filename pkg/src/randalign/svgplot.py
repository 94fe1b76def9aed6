"""Dependency-free SVG line charts for the experiment CSVs.

Output is a standalone SVG string built from fixed-format numbers, so the
same rows always produce byte-identical files. Three chart kinds:

* learning_curve      train (bold) and test (thin) accuracy vs. epoch
* smoothness_vs_depth final-layer mean pairwise cosine vs. depth
* accuracy_vs_depth   mean +- std test accuracy vs. depth
"""

from __future__ import annotations

import math

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f"]

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 20, 34, 46


class PlotSchemaError(ValueError):
    """The CSV rows do not carry the columns a chart kind needs."""


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class Chart:
    """Axes, polylines, markers, and legend over a fixed data window."""

    def __init__(self, title: str, x_label: str, y_label: str,
                 x_range: tuple[float, float], y_range: tuple[float, float]):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        x_lo, x_hi = x_range
        y_lo, y_hi = y_range
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0
        self.x_lo, self.x_hi = x_lo, x_hi
        self.y_lo, self.y_hi = y_lo, y_hi
        self.body: list[str] = []
        self._legend_count = 0

    def _px(self, x: float) -> float:
        frac = (x - self.x_lo) / (self.x_hi - self.x_lo)
        return MARGIN_L + frac * (WIDTH - MARGIN_L - MARGIN_R)

    def _py(self, y: float) -> float:
        frac = (y - self.y_lo) / (self.y_hi - self.y_lo)
        return HEIGHT - MARGIN_B - frac * (HEIGHT - MARGIN_T - MARGIN_B)

    def polyline(self, points: list[tuple[float, float]], color: str,
                 width: float = 1.0, dashed: bool = False) -> None:
        if not points:
            return
        coords = " ".join(f"{_fmt(self._px(x))},{_fmt(self._py(y))}" for x, y in points)
        dash = ' stroke-dasharray="6,3"' if dashed else ""
        self.body.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{_fmt(width)}"'
            f'{dash} points="{coords}" />')

    def markers(self, points: list[tuple[float, float]], color: str,
                radius: float = 2.6) -> None:
        for x, y in points:
            self.body.append(f'<circle cx="{_fmt(self._px(x))}" cy="{_fmt(self._py(y))}"'
                             f' r="{_fmt(radius)}" fill="{color}" />')

    def error_bar(self, x: float, y: float, half: float, color: str) -> None:
        px = self._px(x)
        top, bot = self._py(y + half), self._py(y - half)
        self.body.append(f'<line x1="{_fmt(px)}" y1="{_fmt(top)}" x2="{_fmt(px)}"'
                         f' y2="{_fmt(bot)}" stroke="{color}" stroke-width="1.00" />')
        for py in (top, bot):
            self.body.append(f'<line x1="{_fmt(px - 3)}" y1="{_fmt(py)}"'
                             f' x2="{_fmt(px + 3)}" y2="{_fmt(py)}"'
                             f' stroke="{color}" stroke-width="1.00" />')

    def legend(self, label: str, color: str, bold: bool = False) -> None:
        y = MARGIN_T + 6 + 14 * self._legend_count
        self._legend_count += 1
        weight = "2.50" if bold else "1.00"
        x0 = WIDTH - MARGIN_R - 150
        self.body.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y)}" x2="{_fmt(x0 + 22)}"'
                         f' y2="{_fmt(y)}" stroke="{color}" stroke-width="{weight}" />')
        self.body.append(f'<text x="{_fmt(x0 + 27)}" y="{_fmt(y + 3.5)}"'
                         f' font-size="10" font-family="sans-serif">{label}</text>')

    def _ticks(self, lo: float, hi: float, count: int = 5) -> list[float]:
        step = (hi - lo) / count
        return [lo + i * step for i in range(count + 1)]

    def render(self) -> str:
        ax_color = "#333333"
        parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}"'
            f' height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff" />',
            f'<text x="{_fmt(WIDTH / 2)}" y="20" font-size="13"'
            f' font-family="sans-serif" text-anchor="middle">{self.title}</text>',
        ]
        x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
        x1, y1 = WIDTH - MARGIN_R, MARGIN_T
        parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"'
                     f' stroke="{ax_color}" stroke-width="1" />')
        parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"'
                     f' stroke="{ax_color}" stroke-width="1" />')
        for tx in self._ticks(self.x_lo, self.x_hi):
            px = self._px(tx)
            parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}"'
                         f' y2="{y0 + 4}" stroke="{ax_color}" stroke-width="1" />')
            parts.append(f'<text x="{_fmt(px)}" y="{y0 + 16}" font-size="9"'
                         f' font-family="sans-serif" text-anchor="middle">{tx:.4g}</text>')
        for ty in self._ticks(self.y_lo, self.y_hi):
            py = self._py(ty)
            parts.append(f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}"'
                         f' y2="{_fmt(py)}" stroke="{ax_color}" stroke-width="1" />')
            parts.append(f'<text x="{x0 - 7}" y="{_fmt(py + 3)}" font-size="9"'
                         f' font-family="sans-serif" text-anchor="end">{ty:.4g}</text>')
        parts.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{HEIGHT - 10}" font-size="11"'
                     f' font-family="sans-serif" text-anchor="middle">{self.x_label}</text>')
        parts.append(f'<text x="16" y="{_fmt((y0 + y1) / 2)}" font-size="11"'
                     f' font-family="sans-serif" text-anchor="middle"'
                     f' transform="rotate(-90 16 {_fmt((y0 + y1) / 2)})">{self.y_label}</text>')
        parts.extend(self.body)
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def _need(rows: list[dict], columns: list[str]) -> None:
    if not rows:
        raise PlotSchemaError("no data rows")
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise PlotSchemaError(f"missing columns: {missing}")


def _config_key(row: dict) -> tuple:
    return (row["layer_kind"], int(row["depth"]), row["randalign"], row["scaling"])


def _config_label(key: tuple) -> str:
    kind, depth, ra, sc = key
    label = f"{kind}-{depth} {'align' if ra == 'on' else 'base'}"
    if ra == "on" and sc == "off":
        label += " (no scaling)"
    return label


def _group_sorted(rows: list[dict], key_fn) -> dict:
    groups: dict = {}
    for row in rows:
        groups.setdefault(key_fn(row), []).append(row)
    return dict(sorted(groups.items(), key=lambda kv: kv[0]))


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _std(values: list[float]) -> float:
    m = _mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def render_learning_curve(rows: list[dict]) -> str:
    _need(rows, ["layer_kind", "depth", "randalign", "scaling", "seed", "epoch",
                 "train_acc", "test_acc"])
    chart = Chart("Learning curves (bold: train, thin: test)", "epoch",
                  "balanced accuracy", (1.0, max(float(r["epoch"]) for r in rows)),
                  (0.0, 1.0))
    for i, (key, group) in enumerate(_group_sorted(rows, _config_key).items()):
        color = PALETTE[i % len(PALETTE)]
        by_epoch = _group_sorted(group, lambda r: int(r["epoch"]))
        train = [(e, _mean([float(r["train_acc"]) for r in g]))
                 for e, g in by_epoch.items()]
        test = [(e, _mean([float(r["test_acc"]) for r in g]))
                for e, g in by_epoch.items()]
        chart.polyline(sorted(train), color, width=2.5)
        chart.polyline(sorted(test), color, width=1.0)
        chart.legend(_config_label(key), color, bold=True)
    return chart.render()


def _final_epoch_rows(rows: list[dict]) -> list[dict]:
    last: dict = {}
    for row in rows:
        key = (_config_key(row), int(row["seed"]))
        if key not in last or int(row["epoch"]) > int(last[key]["epoch"]):
            last[key] = row
    return list(last.values())


def _arm_key(row: dict) -> tuple:
    return (row["layer_kind"], row["randalign"], row["scaling"])


def render_smoothness_vs_depth(rows: list[dict]) -> str:
    _need(rows, ["layer_kind", "depth", "randalign", "scaling", "seed", "epoch",
                 "final_cosine"])
    finals = _final_epoch_rows(rows)
    depths = sorted({int(r["depth"]) for r in finals})
    all_vals = [float(r["final_cosine"]) for r in finals if r["final_cosine"] != "nan"]
    y_lo = min(0.0, min(all_vals) - 0.05) if all_vals else 0.0
    chart = Chart("Final-layer smoothness vs. depth", "layers",
                  "mean pairwise cosine", (min(depths), max(depths)), (y_lo, 1.05))
    for i, (key, group) in enumerate(_group_sorted(finals, _arm_key).items()):
        color = PALETTE[i % len(PALETTE)]
        points = []
        for depth in depths:
            vals = [float(r["final_cosine"]) for r in group
                    if int(r["depth"]) == depth and r["final_cosine"] != "nan"]
            if vals:
                points.append((depth, _mean(vals)))
        chart.polyline(points, color, width=1.5)
        chart.markers(points, color)
        kind, ra, sc = key
        chart.legend(_config_label((kind, 0, ra, sc)).replace("-0", ""), color)
    return chart.render()


def render_accuracy_vs_depth(rows: list[dict]) -> str:
    _need(rows, ["layer_kind", "depth", "randalign", "scaling", "seed", "epoch",
                 "test_acc"])
    finals = _final_epoch_rows(rows)
    depths = sorted({int(r["depth"]) for r in finals})
    chart = Chart("Test accuracy vs. depth (mean +- std over seeds)", "layers",
                  "balanced accuracy", (min(depths), max(depths)), (0.0, 1.0))
    for i, (key, group) in enumerate(_group_sorted(finals, _arm_key).items()):
        color = PALETTE[i % len(PALETTE)]
        points, spreads = [], []
        for depth in depths:
            vals = [float(r["test_acc"]) for r in group if int(r["depth"]) == depth]
            if vals:
                points.append((depth, _mean(vals)))
                spreads.append(_std(vals))
        chart.polyline(points, color, width=1.5)
        chart.markers(points, color)
        for (x, y), half in zip(points, spreads):
            chart.error_bar(x, y, half, color)
        kind, ra, sc = key
        chart.legend(_config_label((kind, 0, ra, sc)).replace("-0", ""), color)
    return chart.render()


RENDERERS = {
    "learning_curve": render_learning_curve,
    "smoothness_vs_depth": render_smoothness_vs_depth,
    "accuracy_vs_depth": render_accuracy_vs_depth,
}


def emit_plot(runs_csv, out_svg, kind: str) -> None:
    """Render one chart kind from a runs.csv file to a standalone SVG."""
    from .experiments import read_csv_rows

    if kind not in RENDERERS:
        raise PlotSchemaError(f"unknown chart kind {kind!r}")
    svg = RENDERERS[kind](read_csv_rows(runs_csv))
    with open(out_svg, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(svg)
