import subprocess
import sys
from pathlib import Path

import pytest

from samdeploy.cli import main
from samdeploy.engine import SimConfig, init_world, save_snapshot

from conftest import SPAIN_SAM
from test_engine import CLOSED_SAM

# parse-consistent variant of the closed toy table whose farm row no longer
# equals its column: households pay 900 for output produced with 1000 of
# inputs, so validation must flag it while parsing still succeeds
UNBALANCED_SAM = CLOSED_SAM.replace(
    "P01_Farm\t0\t0\t0\t0\t0\t0\t0\t0\t1000\t1000",
    "P01_Farm\t0\t0\t0\t0\t0\t0\t0\t0\t900\t900",
).replace(
    "colSUM\t1000\t800\t0\t0\t1200\t500\t200\t200\t1900",
    "colSUM\t1000\t800\t0\t0\t1200\t500\t200\t200\t1800",
)


@pytest.fixture(scope="module")
def toy_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("sam") / "toy.sam"
    path.write_text(CLOSED_SAM)
    return path


def read_manifest(rundir: Path) -> dict:
    out = {}
    for line in (rundir / "manifest.txt").read_text().splitlines():
        key, _, value = line.partition(" = ")
        out[key] = value
    return out


RUN_FILES = ("timeseries.csv", "sam_computed.csv", "sam_pct.csv",
             "wealth_hist.csv", "ledger_cells.csv", "final.snap")


class TestValidate:
    def test_balanced_table_passes(self, capsys):
        rc = main(["validate", "--sam", str(SPAIN_SAM)])
        assert rc == 0
        assert "balanced" in capsys.readouterr().out

    def test_unbalanced_table_fails(self, tmp_path, capsys):
        path = tmp_path / "bad.sam"
        path.write_text(UNBALANCED_SAM)
        rc = main(["validate", "--sam", str(path)])
        assert rc == 1
        assert "NOT balanced" in capsys.readouterr().out

    def test_missing_file_is_input_error(self, tmp_path, capsys):
        rc = main(["validate", "--sam", str(tmp_path / "absent.sam")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("samdeploy:")
        assert "absent.sam" in err
        assert err.count("\n") == 1

    def test_malformed_table_is_input_error(self, tmp_path, capsys):
        path = tmp_path / "garbage.sam"
        path.write_text("not a table\nat all\n")
        rc = main(["validate", "--sam", str(path)])
        assert rc == 1
        assert "garbage.sam" in capsys.readouterr().err


class TestUsageErrors:
    def test_no_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["validate", "--sam", "x", "--bogus"])
        assert exc.value.code == 2

    def test_module_is_runnable(self):
        proc = subprocess.run(
            [sys.executable, "-m", "samdeploy.cli", "--version"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "samdeploy" in proc.stdout


class TestRun:
    def test_needs_exactly_one_input(self, tmp_path, capsys):
        rc = main(["run", "--out", str(tmp_path / "o")])
        assert rc == 1
        rc = main(["run", "--sam", "a", "--snapshot", "b",
                   "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_writes_run_directory(self, toy_path, tmp_path):
        out = tmp_path / "r"
        rc = main(["run", "--sam", str(toy_path), "--agents", "120",
                   "--months", "10", "--deploy-months", "8", "--seed", "5",
                   "--out", str(out), "--window", "4"])
        assert rc == 0
        for name in RUN_FILES + ("manifest.txt",):
            assert (out / name).exists(), name
        manifest = read_manifest(out)
        assert manifest["months_run"] == "10"
        assert manifest["final_month"] == "10"
        assert manifest["phase"] == "free"
        assert manifest["config.n_sim_agents"] == "120"
        assert manifest["config.seed"] == "5"
        assert "timestamp" in manifest

    def test_same_argv_gives_identical_bytes(self, toy_path, tmp_path):
        argv = ["run", "--sam", str(toy_path), "--agents", "120",
                "--months", "6", "--deploy-months", "6", "--seed", "9"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        for name in RUN_FILES:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        left = (a / "manifest.txt").read_text().splitlines()
        right = (b / "manifest.txt").read_text().splitlines()
        diffs = [(l, r) for l, r in zip(left, right) if l != r]
        assert len(left) == len(right)
        assert len(diffs) == 1
        assert diffs[0][0].startswith("timestamp = ")

    def test_seed_changes_outputs(self, toy_path, tmp_path):
        base = ["run", "--sam", str(toy_path), "--agents", "120",
                "--months", "6", "--deploy-months", "6"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(base + ["--seed", "1", "--out", str(a)]) == 0
        assert main(base + ["--seed", "2", "--out", str(b)]) == 0
        assert (a / "timeseries.csv").read_bytes() != \
            (b / "timeseries.csv").read_bytes()

    def test_snapshot_rejects_config_flags(self, toy_path, tmp_path, capsys):
        out = tmp_path / "r"
        assert main(["run", "--sam", str(toy_path), "--agents", "120",
                     "--months", "4", "--deploy-months", "8", "--seed", "5",
                     "--out", str(out)]) == 0
        rc = main(["run", "--snapshot", str(out / "final.snap"),
                   "--months", "2", "--agents", "200",
                   "--out", str(tmp_path / "r2")])
        assert rc == 1
        assert "snapshot" in capsys.readouterr().err

    def test_corrupt_snapshot_is_input_error(self, tmp_path, capsys):
        path = tmp_path / "bad.snap"
        path.write_text("{}")
        rc = main(["run", "--snapshot", str(path), "--months", "2",
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "bad.snap" in capsys.readouterr().err


class TestContinuation:
    def test_deploy_then_run_matches_uninterrupted(self, toy_path, tmp_path):
        flags = ["--agents", "120", "--seed", "13"]
        straight = tmp_path / "straight"
        assert main(["run", "--sam", str(toy_path), "--months", "12",
                     "--deploy-months", "8", *flags,
                     "--out", str(straight)]) == 0

        stage = tmp_path / "stage"
        assert main(["deploy", "--sam", str(toy_path), "--months", "8",
                     *flags, "--out", str(stage)]) == 0
        resumed = tmp_path / "resumed"
        assert main(["run", "--snapshot", str(stage / "final.snap"),
                     "--months", "4", "--out", str(resumed)]) == 0

        a, b = read_manifest(straight), read_manifest(resumed)
        assert a["final_month"] == b["final_month"] == "12"
        assert a["ledger_hash"] == b["ledger_hash"]
        assert a["budget_factor"] == b["budget_factor"]
        assert (straight / "timeseries.csv").read_bytes() == \
            (resumed / "timeseries.csv").read_bytes()


class TestConfigPrecedence:
    def test_file_overrides_defaults_and_flags_override_file(
            self, toy_path, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_sim_agents = 150\nseed = 21  # comment\n\n"
                       "deployment_months = 6\n")
        out = tmp_path / "r"
        rc = main(["run", "--sam", str(toy_path), "--config", str(cfg),
                   "--agents", "140", "--months", "2", "--out", str(out)])
        assert rc == 0
        manifest = read_manifest(out)
        assert manifest["config.n_sim_agents"] == "140"
        assert manifest["config.seed"] == "21"
        assert manifest["config.deployment_months"] == "6"
        assert manifest["config.days_per_month"] == "30"

    def test_bad_config_line_is_input_error(self, toy_path, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just words\n")
        rc = main(["run", "--sam", str(toy_path), "--config", str(cfg),
                   "--months", "1", "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "bad.cfg:1" in capsys.readouterr().err

    def test_unknown_config_key_is_input_error(self, toy_path, tmp_path,
                                               capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed = 9\n")
        rc = main(["run", "--sam", str(toy_path), "--config", str(cfg),
                   "--months", "1", "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "warp_speed" in capsys.readouterr().err


@pytest.fixture(scope="module")
def rundir(toy_path, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cli") / "base"
    assert main(["run", "--sam", str(toy_path), "--agents", "120",
                 "--months", "10", "--deploy-months", "8", "--seed", "5",
                 "--out", str(out)]) == 0
    return out


class TestCompareAndReport:
    def test_compare_prints_major_cells(self, rundir, capsys):
        rc = main(["compare", "--snapshot", str(rundir / "final.snap"),
                   "--window", "4"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "major cells" in out
        assert "worst deviation" in out

    def test_compare_out_writes_matrices(self, rundir, tmp_path):
        out = tmp_path / "cmp"
        rc = main(["compare", "--snapshot", str(rundir / "final.snap"),
                   "--out", str(out)])
        assert rc == 0
        assert (out / "sam_computed.csv").exists()
        assert (out / "sam_pct.csv").exists()

    def test_fresh_snapshot_has_nothing_to_compare(self, spain, tmp_path,
                                                   capsys):
        snap = tmp_path / "fresh.snap"
        save_snapshot(init_world(spain, SimConfig(n_sim_agents=100, seed=1)),
                      snap)
        rc = main(["compare", "--snapshot", str(snap)])
        assert rc == 1
        assert "no closed months" in capsys.readouterr().err

    def test_report_writes_csvs_and_figures(self, rundir, tmp_path):
        out = tmp_path / "rep"
        rc = main(["report", "--snapshot", str(rundir / "final.snap"),
                   "--out", str(out), "--window", "4"])
        assert rc == 0
        for name in ("timeseries.csv", "sam_computed.csv", "sam_pct.csv",
                     "wealth_hist.csv", "ledger_cells.csv",
                     "timeseries.png", "sam_pct.png", "wealth_hist.png"):
            path = out / name
            assert path.exists(), name
            assert path.stat().st_size > 0, name

    def test_report_figures_are_deterministic(self, rundir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["report", "--snapshot", str(rundir / "final.snap"),
                         "--out", str(out), "--window", "4"]) == 0
        for name in ("timeseries.png", "sam_pct.png", "wealth_hist.png"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
