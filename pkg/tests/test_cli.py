import json
import subprocess
import sys

import pytest

from tempatch.synth import generate_periodic, write_csv


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "tempatch.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "periodic.csv"
    write_csv(generate_periodic(12, 300, seed=0), p)
    return str(p)


@pytest.fixture(scope="module")
def config(dataset, tmp_path_factory):
    p = tmp_path_factory.mktemp("cli-cfg") / "cfg.json"
    p.write_text(json.dumps({
        "dataset": dataset, "window": 60, "patches": 3, "blocks": 1,
        "d_h": 8, "mpnn_layers": 1, "trans_layers": 1, "epochs": 2,
        "batch_size": 50, "lr": 1e-3, "time_dim": 4, "seed": 0,
    }))
    return str(p)


class TestExitCodes:
    def test_success_is_zero(self, dataset):
        assert run_cli("prepare", dataset).returncode == 0

    def test_config_error_is_two(self, dataset, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dataset": dataset, "windw": 3}))
        r = run_cli("train", "--config", str(bad), "--workdir", str(tmp_path))
        assert r.returncode == 2
        assert "windw" in r.stderr

    def test_missing_required_key_is_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"window": 3}))
        r = run_cli("train", "--config", str(bad), "--workdir", str(tmp_path))
        assert r.returncode == 2
        assert "dataset" in r.stderr

    def test_data_error_is_three(self, tmp_path):
        broken = tmp_path / "broken.csv"
        broken.write_text("src,dst,timestamp,label\n0,banana,1.0,-1\n")
        r = run_cli("prepare", str(broken))
        assert r.returncode == 3
        assert "broken.csv:2" in r.stderr

    def test_usage_error_is_two(self):
        assert run_cli("train").returncode == 2


class TestCommands:
    def test_prepare_reports_stats(self, dataset):
        r = run_cli("prepare", dataset)
        report = json.loads(r.stdout)
        assert report["num_nodes"] == 12 and report["num_edges"] == 300
        assert report["split"]["train"] == 210
        assert 0.9 < report["repeat_ratio"] <= 1.0

    def test_synth_writes_csv(self, tmp_path):
        out = tmp_path / "s.csv"
        r = run_cli("synth", "--pattern", "periodic", "--nodes", "10",
                    "--edges", "50", "--seed", "1", "--out", str(out))
        assert r.returncode == 0
        assert out.read_text().startswith("src,dst,timestamp,label\n")
        assert len(out.read_text().strip().split("\n")) == 51

    def test_train_then_evaluate(self, config, tmp_path):
        r = run_cli("train", "--config", config, "--workdir", str(tmp_path))
        assert r.returncode == 0, r.stderr
        out = json.loads(r.stdout)
        assert "checkpoint" in out and 0 <= out["best"]["ap"] <= 1
        r2 = run_cli("evaluate", "--config", config,
                     "--checkpoint", out["checkpoint"], "--split", "test")
        assert r2.returncode == 0, r2.stderr
        metrics = json.loads(r2.stdout)
        assert metrics["split"] == "test" and "ap" in metrics

    def test_metrics_csv_bit_identical(self, config, tmp_path):
        run_cli("train", "--config", config, "--workdir", str(tmp_path / "a"))
        run_cli("train", "--config", config, "--workdir", str(tmp_path / "b"))
        a = (tmp_path / "a/metrics.csv").read_bytes()
        assert a == (tmp_path / "b/metrics.csv").read_bytes()

    def test_bench_writes_expected_columns(self, tmp_path):
        out = tmp_path / "bench.csv"
        r = run_cli("bench", "--sizes", "64,128", "--patches", "4",
                    "--blocks", "1", "--d-h", "8", "--out", str(out))
        assert r.returncode == 0, r.stderr
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "E,M,L,ms"
        assert len(lines) == 3

    def test_ablate_sweeps_param(self, config, tmp_path):
        r = run_cli("ablate", "--config", config, "--param", "use_pe",
                    "--values", "true,false", "--seeds", "0",
                    "--workdir", str(tmp_path), "--out", "ab.csv")
        assert r.returncode == 0, r.stderr
        lines = (tmp_path / "ab.csv").read_text().strip().split("\n")
        assert lines[0] == "param,value,seed,metric,score"
        assert len(lines) == 5   # 2 settings x (ap, auc)
