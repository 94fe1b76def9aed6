import os
import subprocess
import sys

import numpy as np
import pytest

from randalign.experiments import (
    ConfigError,
    ExperimentConfig,
    RUNS_COLUMNS,
    SUMMARY_COLUMNS,
    build_datasets,
    generate_fixtures,
    load_config,
    parse_config_text,
    read_csv_rows,
    run_matrix,
    verify_fixtures,
)
from randalign.svgplot import PlotSchemaError, RENDERERS

TINY_CONFIG = """
# smoke config: two tiny blocks, one depth, one seed
block_sizes = 5,5
p_in = 0.9
p_out = 0.1
feature_noise = 0.2
train_graphs = 3
test_graphs = 2
layer_kind = gcn
depths = 2
hidden_dim = 4
randalign = off,on
seeds = 0
max_epochs = 2
out_dir = {out_dir}
"""


def _write_config(tmp_path, text=None, **overrides):
    out_dir = tmp_path / "out"
    body = (text or TINY_CONFIG).format(out_dir=out_dir)
    for key, value in overrides.items():
        body += f"\n{key} = {value}\n"
    path = tmp_path / "exp.conf"
    path.write_text(body)
    return path, out_dir


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config_text("")
        assert cfg.depths == [4, 8, 16]
        assert cfg.randalign == [False, True]
        assert cfg.seeds == [0, 1, 2, 3, 4]

    def test_values_comments_and_lists(self):
        cfg = parse_config_text(
            "depths = 2, 4 # sweep\n# full-line comment\nscaling = off\n"
            "seeds=1,2\np_in = 0.75\n")
        assert cfg.depths == [2, 4]
        assert cfg.scaling is False
        assert cfg.seeds == [1, 2]
        assert cfg.p_in == 0.75

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config_text("learning = fast\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config_text("depths 4\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config_text("depths = four\n")
        with pytest.raises(ConfigError):
            parse_config_text("scaling = maybe\n")

    def test_empty_lists_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("depths = \n")

    def test_semantic_validation(self):
        with pytest.raises(ConfigError):
            parse_config_text("layer_kind = transformer\n")
        with pytest.raises(ConfigError):
            parse_config_text("train_graphs = 0\n")
        with pytest.raises(ConfigError):
            parse_config_text("randalign = \n")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.conf")


class TestDatasets:
    def test_split_sizes_and_classes(self):
        cfg = ExperimentConfig(block_sizes=[3, 3], train_graphs=4, test_graphs=2,
                               p_in=0.9, p_out=0.1)
        train, test = build_datasets(cfg)
        assert len(train) == 4 and len(test) == 2
        assert train.n_classes == 2
        assert train.graphs[0].n == 6

    def test_disjoint_split_streams(self):
        cfg = ExperimentConfig(block_sizes=[3, 3], train_graphs=2, test_graphs=2,
                               p_in=0.9, p_out=0.1)
        train, test = build_datasets(cfg)
        assert train.graphs[0].edges != test.graphs[0].edges or \
            not np.array_equal(train.node_features[0], test.node_features[0])


class TestRunMatrix:
    def test_smoke_produces_both_csvs(self, tmp_path):
        path, out_dir = _write_config(tmp_path)
        assert run_matrix(load_config(path)) == 0
        assert (out_dir / "runs.csv").exists()
        assert (out_dir / "summary.csv").exists()

    def test_schema_and_row_counts(self, tmp_path):
        path, out_dir = _write_config(tmp_path, depths="2,3", seeds="0,1")
        run_matrix(load_config(path))
        runs = read_csv_rows(out_dir / "runs.csv")
        summary = read_csv_rows(out_dir / "summary.csv")
        assert list(runs[0]) == RUNS_COLUMNS
        assert list(summary[0]) == SUMMARY_COLUMNS
        # 2 depths x 2 randalign x 2 seeds x 2 epochs
        assert len(runs) == 16
        assert len(summary) == 4
        assert all(int(r["n_seeds"]) == 2 for r in summary)

    def test_canonical_cell_order(self, tmp_path):
        path, out_dir = _write_config(tmp_path, depths="3,2", seeds="1,0")
        run_matrix(load_config(path))
        summary = read_csv_rows(out_dir / "summary.csv")
        cells = [(int(r["depth"]), r["randalign"]) for r in summary]
        assert cells == [(2, "off"), (2, "on"), (3, "off"), (3, "on")]

    def test_rerun_byte_identical(self, tmp_path):
        path, out_dir = _write_config(tmp_path)
        run_matrix(load_config(path))
        first = (out_dir / "runs.csv").read_bytes(), (out_dir / "summary.csv").read_bytes()
        run_matrix(load_config(path))
        second = (out_dir / "runs.csv").read_bytes(), (out_dir / "summary.csv").read_bytes()
        assert first == second


class TestPlots:
    def _rows(self, tmp_path):
        path, out_dir = _write_config(tmp_path)
        run_matrix(load_config(path))
        return read_csv_rows(out_dir / "runs.csv")

    def test_learning_curve_polyline_count(self, tmp_path):
        svg = RENDERERS["learning_curve"](self._rows(tmp_path))
        # two configurations -> 2 bold + 2 thin polylines
        assert svg.count("<polyline") == 4
        assert svg.count('stroke-width="2.50"') >= 2

    def test_empty_rows_rejected(self):
        with pytest.raises(PlotSchemaError):
            RENDERERS["learning_curve"]([])

    def test_wrong_schema_rejected(self):
        with pytest.raises(PlotSchemaError):
            RENDERERS["accuracy_vs_depth"]([{"foo": "1"}])

    def test_all_kinds_render(self, tmp_path):
        rows = self._rows(tmp_path)
        for kind, renderer in RENDERERS.items():
            svg = renderer(rows)
            assert svg.startswith("<?xml")
            assert svg.rstrip().endswith("</svg>")

    def test_emit_plot_writes_file(self, tmp_path):
        from randalign.svgplot import emit_plot

        path, out_dir = _write_config(tmp_path)
        run_matrix(load_config(path))
        out_svg = tmp_path / "chart.svg"
        emit_plot(out_dir / "runs.csv", out_svg, "accuracy_vs_depth")
        assert out_svg.read_text().startswith("<?xml")
        with pytest.raises(PlotSchemaError):
            emit_plot(out_dir / "runs.csv", out_svg, "pie")

    def test_golden_svg_byte_identical(self):
        golden_dir = os.path.join(os.path.dirname(__file__), "golden")
        rows = read_csv_rows(os.path.join(golden_dir, "runs_fixture.csv"))
        svg = RENDERERS["learning_curve"](rows)
        with open(os.path.join(golden_dir, "learning_curve.svg"), encoding="utf-8") as fh:
            assert svg == fh.read()


class TestFixtureGeneration:
    def test_gen_writes_triples(self, tmp_path):
        cfg = ExperimentConfig(block_sizes=[3, 3], train_graphs=2, test_graphs=1,
                               p_in=0.9, p_out=0.1, out_dir=str(tmp_path / "fx"))
        written = generate_fixtures(cfg)
        assert len(written) == 3
        for stem in written:
            assert os.path.exists(stem + ".edges")
            assert os.path.exists(stem + ".labels")
            assert os.path.exists(stem + ".features.csv")

    def test_golden_sbm_fixture_bytes(self):
        # pins the generator stream: regenerating the committed fixture must
        # reproduce it exactly
        golden_dir = os.path.join(os.path.dirname(__file__), "golden", "sbm")
        from randalign.graphs import sbm_generate, write_edge_list, write_features, write_labels

        g, labels, feats = sbm_generate([4, 4], 0.8, 0.1, d_in=2, noise=0.25, seed=77)
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            write_edge_list(g, os.path.join(tmp, "g.edges"))
            write_labels(labels, os.path.join(tmp, "g.labels"))
            write_features(feats, os.path.join(tmp, "g.features.csv"))
            for name in ("g.edges", "g.labels", "g.features.csv"):
                with open(os.path.join(tmp, name), "rb") as fh:
                    fresh = fh.read()
                with open(os.path.join(golden_dir, name), "rb") as fh:
                    assert fresh == fh.read(), f"{name} drifted from golden"


class TestVerify:
    def test_suite_green(self, capsys):
        assert verify_fixtures()
        out = capsys.readouterr().out
        assert out.count("PASS") == 4
        assert "FAIL" not in out

    def test_corrupted_alignment_is_caught(self, monkeypatch, capsys):
        # mutation sanity: silently dropping the norm-scaling step must trip
        # the norm-bound sweep
        import randalign.align as align_mod

        true_align = align_mod.align_row

        def no_scaling(h_prev, h_new, coeff, scaling=True):
            return true_align(h_prev, h_new, coeff, scaling=False)

        monkeypatch.setattr(align_mod, "align_row", no_scaling)
        assert not verify_fixtures()
        out = capsys.readouterr().out
        assert "FAIL alignment-algebra" in out


class TestWorkerPool:
    def test_parallel_run_byte_identical(self, tmp_path, monkeypatch):
        path, out_dir = _write_config(tmp_path)
        run_matrix(load_config(path))
        sequential = (out_dir / "runs.csv").read_bytes()
        monkeypatch.setenv("RANDALIGN_THREADS", "2")
        run_matrix(load_config(path))
        assert (out_dir / "runs.csv").read_bytes() == sequential


def _cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "randalign", *args],
                          capture_output=True, text=True, cwd=cwd)


class TestCli:
    def test_run_smoke_and_determinism(self, tmp_path):
        path, out_dir = _write_config(tmp_path)
        proc = _cli("run", str(path))
        assert proc.returncode == 0
        first = (out_dir / "runs.csv").read_bytes()
        assert _cli("run", str(path)).returncode == 0
        assert (out_dir / "runs.csv").read_bytes() == first

    def test_unparseable_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.conf"
        bad.write_text("nonsense == = \n")
        assert _cli("run", str(bad)).returncode == 2
        assert _cli("gen-sbm", str(bad)).returncode == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert _cli("run", str(tmp_path / "none.conf")).returncode == 2

    def test_plot_schema_mismatch_exits_2(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        proc = _cli("plot", str(empty), str(tmp_path / "o.svg"), "--kind",
                    "learning_curve")
        assert proc.returncode == 2

    def test_plot_writes_svg(self, tmp_path):
        path, out_dir = _write_config(tmp_path)
        _cli("run", str(path))
        out_svg = tmp_path / "plot.svg"
        proc = _cli("plot", str(out_dir / "runs.csv"), str(out_svg), "--kind",
                    "smoothness_vs_depth")
        assert proc.returncode == 0
        assert out_svg.read_text().startswith("<?xml")

    def test_gen_sbm_writes_fixture_files(self, tmp_path):
        path, out_dir = _write_config(tmp_path)
        proc = _cli("gen-sbm", str(path))
        assert proc.returncode == 0
        assert (out_dir / "train_000.edges").exists()
        assert (out_dir / "test_001.features.csv").exists()
