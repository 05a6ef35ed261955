"""Command line pipeline: wiring, option precedence, exit codes, determinism."""

from __future__ import annotations

import filecmp
from pathlib import Path

import pytest

from dualpanel.cli import main
from dualpanel.ingest import read_panel
from dualpanel.study import read_diagnostics, read_results
from dualpanel.variables import PANEL_FULL_COLUMNS, read_panel_full


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full run: simulate dataset -> ingest -> spread -> build-panel."""
    root = tmp_path_factory.mktemp("pipeline")
    raw = root / "raw"
    assert main([
        "simulate", "--mode", "dataset", "--seed", "11", "--out", str(raw),
        "--set", "n_firms=12", "--set", "n_months=60",
    ]) == 0
    assert main([
        "ingest",
        "--daily", str(raw / "daily_prices.csv"),
        "--fx", str(raw / "fx.csv"),
        "--attrs", str(raw / "monthly_attrs.csv"),
        "--out", str(root / "ingest"),
    ]) == 0
    assert main([
        "spread", "--daily", str(raw / "daily_prices.csv"),
        "--out", str(root / "spread"),
    ]) == 0
    assert main([
        "build-panel",
        "--skeleton", str(root / "ingest" / "panel_skeleton.csv"),
        "--spreads", str(root / "spread" / "spreads.csv"),
        "--out", str(root / "panel"),
    ]) == 0
    return root


class TestPipeline:
    def test_each_stage_writes_its_files(self, pipeline):
        assert (pipeline / "raw" / "daily_prices.csv").exists()
        assert (pipeline / "raw" / "fx.csv").exists()
        assert (pipeline / "raw" / "monthly_attrs.csv").exists()
        assert (pipeline / "ingest" / "panel_skeleton.csv").exists()
        assert (pipeline / "ingest" / "drops_skeleton.csv").exists()
        assert (pipeline / "spread" / "spreads.csv").exists()
        for name in ("panel.csv", "drops_panel.csv", "trend.csv", "run.log"):
            assert (pipeline / "panel" / name).exists()

    def test_panel_covers_the_simulated_window(self, pipeline):
        skeleton = read_panel(pipeline / "ingest" / "panel_skeleton.csv")
        panel = read_panel_full(pipeline / "panel" / "panel.csv")
        assert len(skeleton) == 12 * 60
        assert len(panel) == len(skeleton)
        assert list(panel.columns) == list(PANEL_FULL_COLUMNS)
        assert panel["month"].min() == "2011-01"
        assert panel["month"].max() == "2015-12"

    def test_estimate_fits_and_prints_the_table(self, pipeline, capsys):
        out = pipeline / "estimate"
        assert main([
            "estimate", "--panel", str(pipeline / "panel" / "panel.csv"),
            "--spec", "baseline_1", "--collapse", "--out", str(out),
        ]) == 0
        shown = capsys.readouterr().out
        assert shown.startswith("Model: baseline_1")
        assert (out / "table.txt").read_text() == shown
        results = read_results(out / "results.csv")
        diagnostics = read_diagnostics(out / "diagnostics.csv")
        assert set(results["spec_id"]) == {"baseline_1"}
        policy = results[results["term"] == "shhk_policy"].iloc[0]
        assert policy["coef"] > 0
        assert diagnostics.iloc[0]["n_obs"] == 12 * 59

    def test_suite_writes_grouped_tables(self, pipeline, capsys):
        out = pipeline / "suite"
        assert main([
            "suite", "--panel", str(pipeline / "panel" / "panel.csv"),
            "--specs", "baseline_1,baseline_2", "--collapse", "--out", str(out),
        ]) == 0
        for name in ("results.csv", "diagnostics.csv", "descriptives.csv",
                     "trend.csv", "tables.txt"):
            assert (out / name).exists()
        tables = (out / "tables.txt").read_text()
        assert "Descriptive statistics" in tables
        assert "Table: baseline" in tables
        results = read_results(out / "results.csv")
        assert set(results["spec_id"]) == {"baseline_1", "baseline_2"}

    def test_report_renders_stored_results(self, pipeline, capsys):
        suite = pipeline / "suite"
        out = pipeline / "report"
        assert main([
            "report",
            "--results", str(suite / "results.csv"),
            "--diagnostics", str(suite / "diagnostics.csv"),
            "--descriptives", str(suite / "descriptives.csv"),
            "--trend", str(suite / "trend.csv"),
            "--out", str(out),
        ]) == 0
        report = (out / "report.txt").read_text()
        assert "Descriptive statistics" in report
        assert "Table: baseline" in report
        assert "Monthly mean premium" in report
        assert "Interaction arithmetic check" in report
        assert "+0.1985" in report

    def test_run_log_blocks_are_structured(self, pipeline):
        log = (pipeline / "panel" / "run.log").read_text()
        blocks = [b for b in log.split("\n\n") if b.strip()]
        assert len(blocks) == 1
        lines = blocks[0].splitlines()
        assert lines[0] == "command: build-panel"
        assert any(line.startswith("package: dualpanel ") for line in lines)
        assert any(line.startswith("config skeleton=") for line in lines)
        assert any(line.startswith("config_sha256: ") for line in lines)
        assert any(line.startswith("rows panel=") for line in lines)

    def test_rerunning_appends_a_block(self, pipeline, tmp_path):
        out = tmp_path / "twice"
        argv = ["simulate", "--mode", "panel", "--seed", "2", "--out", str(out),
                "--set", "n_firms=2", "--set", "n_months=3"]
        assert main(argv) == 0
        assert main(argv) == 0
        log = (out / "run.log").read_text()
        blocks = [b for b in log.split("\n\n") if b.strip()]
        assert len(blocks) == 2
        assert blocks[0] == blocks[1]


class TestSimulateCommand:
    def test_prices_mode(self, tmp_path, capsys):
        out = tmp_path / "prices"
        assert main(["simulate", "--mode", "prices", "--seed", "3",
                     "--out", str(out), "--set", "months=2"]) == 0
        header = (out / "prices.csv").read_text().splitlines()[0]
        assert header == "day,month,high,low,close"

    def test_panel_mode_writes_truth(self, tmp_path):
        out = tmp_path / "panel"
        assert main(["simulate", "--mode", "panel", "--seed", "3",
                     "--out", str(out),
                     "--set", "n_firms=2", "--set", "n_months=3",
                     "--set", "theta_policy=0.25"]) == 0
        truth = dict(
            line.split(",") for line in
            (out / "truth.csv").read_text().splitlines()[1:]
        )
        assert float(truth["theta_policy"]) == 0.25
        assert float(truth["beta_lag"]) == 0.7
        panel = read_panel_full(out / "panel.csv")
        assert len(panel) == 6

    def test_set_overrides_are_validated(self, tmp_path, capsys):
        out = str(tmp_path / "x")
        assert main(["simulate", "--mode", "panel", "--out", out,
                     "--set", "bogus=1"]) == 1
        assert "unknown simulation parameter" in capsys.readouterr().err
        assert main(["simulate", "--mode", "panel", "--out", out,
                     "--set", "n_firms"]) == 1
        assert "key=value" in capsys.readouterr().err
        assert main(["simulate", "--mode", "panel", "--out", out,
                     "--set", "n_firms=lots"]) == 1
        assert "bad value for n_firms" in capsys.readouterr().err

    def test_bad_mode(self, tmp_path, capsys):
        assert main(["simulate", "--mode", "nonsense",
                     "--out", str(tmp_path / "x")]) == 1
        assert "mode must be" in capsys.readouterr().err


class TestOptionPrecedence:
    def args(self, out, extra=()):
        return ["simulate", "--mode", "panel", "--out", str(out),
                "--set", "n_firms=2", "--set", "n_months=3", *extra]

    def test_manifest_supplies_options(self, tmp_path):
        manifest = tmp_path / "sim.manifest"
        manifest.write_text(
            "# simulation inputs\n"
            "mode=panel\n"
            "seed=7\n"
            "n_firms=2\n"
            "n_months=3\n"
        )
        from_manifest = tmp_path / "a"
        assert main(["simulate", "--manifest", str(manifest),
                     "--out", str(from_manifest)]) == 0
        from_flags = tmp_path / "b"
        assert main(self.args(from_flags, ["--seed", "7"])) == 0
        assert ((from_manifest / "panel.csv").read_bytes()
                == (from_flags / "panel.csv").read_bytes())

    def test_flag_beats_manifest(self, tmp_path):
        manifest = tmp_path / "sim.manifest"
        manifest.write_text("seed=7\n")
        overridden = tmp_path / "a"
        assert main(self.args(overridden, ["--manifest", str(manifest),
                                           "--seed", "9"])) == 0
        direct = tmp_path / "b"
        assert main(self.args(direct, ["--seed", "9"])) == 0
        assert ((overridden / "panel.csv").read_bytes()
                == (direct / "panel.csv").read_bytes())

    def test_set_beats_seed_flag(self, tmp_path):
        via_set = tmp_path / "a"
        assert main(self.args(via_set, ["--seed", "9", "--set", "seed=5"])) == 0
        direct = tmp_path / "b"
        assert main(self.args(direct, ["--seed", "5"])) == 0
        assert ((via_set / "panel.csv").read_bytes()
                == (direct / "panel.csv").read_bytes())

    def test_manifest_errors(self, tmp_path, capsys):
        assert main(["simulate", "--manifest", str(tmp_path / "none.manifest"),
                     "--out", str(tmp_path / "x")]) == 1
        assert "manifest not found" in capsys.readouterr().err
        bad = tmp_path / "bad.manifest"
        bad.write_text("mode panel\n")
        assert main(["simulate", "--manifest", str(bad),
                     "--out", str(tmp_path / "x")]) == 1
        assert "expected key=value" in capsys.readouterr().err


class TestExitCodes:
    def test_no_command_prints_usage(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_command(self, capsys):
        assert main(["bogus"]) == 1

    def test_version_and_help(self, capsys):
        assert main(["--version"]) == 0
        assert "dualpanel" in capsys.readouterr().out
        assert main(["--help"]) == 0
        assert "Subcommands" in capsys.readouterr().out

    def test_missing_required_option(self, tmp_path, capsys):
        assert main(["estimate", "--out", str(tmp_path / "x")]) == 1
        assert "missing required option --panel" in capsys.readouterr().err

    def test_unknown_spec(self, tmp_path, capsys):
        panel = tmp_path / "panel.csv"
        panel.write_text(",".join(PANEL_FULL_COLUMNS) + "\n")
        assert main(["estimate", "--panel", str(panel), "--spec", "nope",
                     "--out", str(tmp_path / "x")]) == 1
        assert "unknown spec" in capsys.readouterr().err

    def test_missing_input_file_is_io_error(self, tmp_path, capsys):
        missing = tmp_path / "absent.csv"
        assert main(["estimate", "--panel", str(missing),
                     "--spec", "baseline_1", "--out", str(tmp_path / "x")]) == 3
        assert str(missing) in capsys.readouterr().err

    def test_malformed_input_is_validation_error(self, tmp_path, capsys):
        daily = tmp_path / "daily.csv"
        daily.write_text(
            "firm_id,market,date,high,low,close,volume,turnover\n"
            "F1,A,2011-01-03,not_a_number,9.9,10.0,1000,0.01\n"
        )
        assert main(["ingest", "--daily", str(daily),
                     "--fx", str(tmp_path / "fx.csv"),
                     "--attrs", str(tmp_path / "attrs.csv"),
                     "--out", str(tmp_path / "x")]) == 1
        assert "daily.csv:2" in capsys.readouterr().err

    def test_failed_estimation_is_exit_two(self, tmp_path, capsys):
        out = tmp_path / "sim"
        assert main(["simulate", "--mode", "panel", "--seed", "1",
                     "--out", str(out),
                     "--set", "n_firms=3", "--set", "n_months=2"]) == 0
        assert main(["estimate", "--panel", str(out / "panel.csv"),
                     "--spec", "baseline_1",
                     "--out", str(tmp_path / "fit")]) == 2
        assert "estimation error" in capsys.readouterr().err


class TestDeterminism:
    def run_tree(self, root: Path, monkeypatch) -> None:
        """Drive a fixed pipeline with paths relative to ``root``."""
        root.mkdir()
        monkeypatch.chdir(root)
        assert main(["simulate", "--mode", "panel", "--seed", "6",
                     "--out", "sim",
                     "--set", "n_firms=10", "--set", "n_months=72"]) == 0
        assert main(["estimate", "--panel", "sim/panel.csv",
                     "--spec", "baseline_1", "--collapse",
                     "--out", "fit"]) == 0
        assert main(["report", "--results", "fit/results.csv",
                     "--diagnostics", "fit/diagnostics.csv",
                     "--out", "report"]) == 0

    def test_identical_invocations_give_identical_trees(self, tmp_path,
                                                        monkeypatch):
        self.run_tree(tmp_path / "one", monkeypatch)
        self.run_tree(tmp_path / "two", monkeypatch)

        files = sorted(
            p.relative_to(tmp_path / "one")
            for p in (tmp_path / "one").rglob("*") if p.is_file()
        )
        assert files
        other = sorted(
            p.relative_to(tmp_path / "two")
            for p in (tmp_path / "two").rglob("*") if p.is_file()
        )
        assert files == other
        for rel in files:
            left = tmp_path / "one" / rel
            right = tmp_path / "two" / rel
            assert filecmp.cmp(left, right, shallow=False), rel
