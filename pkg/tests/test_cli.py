"""Tests for the cli package."""

import json
import math
import os

import numpy as np
import pytest

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from cli.commands import EXIT_CONFIG, EXIT_CRITERION, EXIT_PASS, EXIT_PRECONDITION, OUT_DIR_ENV, main
from cli.output import manifest_header, read_csv
from core.run_store import RunStore

BASE = {"d": 1, "n_list": [2, 3, 4], "t": 0.1, "rho0": [[0, 0.5, 0.0], [1, 0.3, 0.0]]}


@pytest.fixture
def workspace(tmp_path):
    """Config writer plus an output directory, both under tmp_path."""
    out_dir = os.path.join(str(tmp_path), "out")

    def write(name="config.json", **changes):
        path = os.path.join(str(tmp_path), name)
        with open(path, "w") as f:
            json.dump({**BASE, **changes}, f, indent=4)
        return path

    def run(command, config_path, *extra):
        return main([command, "--config", config_path, "--out-dir", out_dir, "--threads", "1", *extra])

    def read(name):
        with open(os.path.join(out_dir, name)) as f:
            return f.read()

    return write, run, read, out_dir


class TestExitCodes:
    def test_missing_key(self, workspace, tmp_path):
        write, run, _, _ = workspace
        path = write()
        with open(path) as f:
            data = json.load(f)
        del data["t"]
        with open(path, "w") as f:
            json.dump(data, f)
        assert run("verify-rate", path) == EXIT_CONFIG

    def test_density_out_of_range(self, workspace):
        write, run, _, _ = workspace
        assert run("covariance", write(rho0=[[0, 0.8, 0.0], [1, 0.3, 0.0]])) == EXIT_CONFIG

    def test_bad_thread_count(self, workspace):
        write, _, _, out_dir = workspace
        assert main(["covariance", "--config", write(), "--out-dir", out_dir, "--threads", "0"]) == EXIT_CONFIG

    def test_synthetic_passes(self, workspace):
        write, run, read, _ = workspace
        assert run("verify-rate", write(engine="synthetic", synthetic_exponent=-0.5)) == EXIT_PASS
        summary = json.loads(read("summary.json"))
        assert summary["fit"]["slope"] == pytest.approx(-0.5)
        assert summary["criteria"] == {"slope_gate": "pass"}
        assert summary["smoothness"]["observable"] == "quadratic_form"

    def test_synthetic_flat_fails(self, workspace):
        write, run, read, _ = workspace
        assert run("verify-rate", write(engine="synthetic", synthetic_exponent=0.0)) == EXIT_CRITERION
        assert json.loads(read("manifest.json"))["criteria"] == {"slope_gate": "fail"}

    def test_noise_gate(self, workspace):
        write, run, read, _ = workspace
        path = write(rho0=[[0, 0.3, 0.0]], n_list=[1, 2, 3], t=0.05, engine="monte_carlo", replicas=30)
        assert run("verify-rate", path) == EXIT_PRECONDITION
        manifest = json.loads(read("manifest.json"))
        assert manifest["exit_code"] == EXIT_PRECONDITION
        assert manifest["criteria"] == {"noise_gate": "fail"}

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert "ssep-lab" in capsys.readouterr().out


class TestOutputs:
    def test_error_table_and_manifest(self, workspace):
        write, run, read, out_dir = workspace
        run("verify-rate", write())
        text = read("error_table.csv")
        assert text.startswith("# command: verify-rate\n")
        assert "# config_hash: " in text and "started_at" not in text
        frame = read_csv(os.path.join(out_dir, "error_table.csv"))
        assert list(frame["n"]) == [2, 3, 4]
        assert (frame["particle_stderr"] == 0).all()
        manifest = json.loads(read("manifest.json"))
        assert "wall_clock_seconds" in manifest and "resources" in manifest

    def test_same_seed_same_bytes(self, workspace, tmp_path):
        write, _, _, _ = workspace
        path = write(engine="monte_carlo", replicas=20, n_list=[1, 2, 3])
        outputs = []
        for name, threads in (("a", "1"), ("b", "2")):
            out_dir = os.path.join(str(tmp_path), name)
            main(["verify-rate", "--config", path, "--out-dir", out_dir, "--threads", threads, "--seed", "11"])
            with open(os.path.join(out_dir, "error_table.csv"), "rb") as f:
                outputs.append(f.read())
        assert outputs[0] == outputs[1]

    def test_seed_changes_output(self, workspace, tmp_path):
        write, _, _, _ = workspace
        path = write(engine="monte_carlo", replicas=20, n_list=[1, 2, 3])
        outputs = []
        for seed in ("1", "2"):
            out_dir = os.path.join(str(tmp_path), seed)
            main(["verify-rate", "--config", path, "--out-dir", out_dir, "--threads", "1", "--seed", seed])
            outputs.append(read_csv(os.path.join(out_dir, "error_table.csv"))["particle_value"].tolist())
        assert outputs[0] != outputs[1]

    def test_covariance_at_constant_density(self, workspace):
        write, run, _, out_dir = workspace
        c, t = 0.3, 0.1
        assert run("covariance", write(rho0=[[0, c, 0.0]], t=t, n_list=[2])) == EXIT_PASS
        frame = read_csv(os.path.join(out_dir, "covariance.csv")).set_index("mode")
        assert list(frame.index) == ["1", "cos(1)", "sin(1)", "cos(2)", "sin(2)"]
        k2 = np.array([0, 1, 1, 4, 4])
        expected = c * (1 - c) * (1 - np.exp(-4 * math.pi ** 2 * k2 * t))
        assert np.allclose(frame.values, np.diag(expected), atol=1e-14)

    def test_simulate_snapshots(self, workspace):
        write, run, _, out_dir = workspace
        assert run("simulate", write(snapshots=[0.05, 0.1])) == EXIT_PASS
        frame = read_csv(os.path.join(out_dir, "snapshots.csv"))
        assert sorted(frame["time"].unique()) == [0.0, 0.05, 0.1]
        assert sorted(frame["n"].unique()) == [2, 3, 4]
        counts = frame.groupby(["n", "time"])["occupancy"].sum().unstack()
        assert (counts.nunique(axis=1) == 1).all()

    def test_berry_esseen_skipped(self, workspace):
        write, run, read, _ = workspace
        path = write(rho0=[[0, 0.5, 0.0]], n_list=[1, 2, 3], observable="pairing_square",
                     observable_params={"phi": [[0, 1.0, 0.0]]})
        assert run("berry-esseen", path) == EXIT_PASS
        summary = json.loads(read("summary.json"))
        assert summary["criteria"] == {"slope_gate": "skipped"}
        assert summary["smoothness"]["polynomial"] is True

    def test_berry_esseen_needs_single_pairing(self, workspace):
        write, run, _, _ = workspace
        assert run("berry-esseen", write()) == EXIT_PRECONDITION

    def test_out_dir_from_environment(self, workspace, tmp_path, monkeypatch):
        write, _, _, _ = workspace
        env_dir = os.path.join(str(tmp_path), "env_out")
        monkeypatch.setenv(OUT_DIR_ENV, env_dir)
        assert main(["covariance", "--config", write()]) == EXIT_PASS
        assert os.path.exists(os.path.join(env_dir, "covariance.csv"))

    def test_run_registered(self, workspace):
        write, run, read, out_dir = workspace
        run("covariance", write())
        store = RunStore.in_directory(out_dir)
        manifest = json.loads(read("manifest.json"))
        runs = store.runs_for_config(manifest["config_hash"])
        assert len(runs) == 1 and runs[0]["exit_code"] == EXIT_PASS
        store.close()

    def test_verify_rate_rows_registered(self, workspace):
        write, run, _, out_dir = workspace
        run("verify-rate", write(engine="synthetic"))
        store = RunStore.in_directory(out_dir)
        run_id = store.conn.execute("SELECT id FROM runs").fetchone()[0]
        assert [row["n"] for row in store.error_rows(run_id)] == [2, 3, 4]
        store.close()


class TestManifestHeader:
    def test_sorted_and_flat(self):
        header = manifest_header({"b": 1, "a": {"y": 2, "x": [1, 2]}})
        assert header == '# a: {"x":[1,2],"y":2}\n# b: 1\n'
