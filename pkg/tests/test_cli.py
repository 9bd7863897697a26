import json

import numpy as np
import pytest

from kernelshot.cli import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    run_cli,
)
from kernelshot.harness import load_bundle


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli([
        "gen-synthetic", "--classes", "4", "--dim", "16", "--shots", "4",
        "--val-per-class", "3", "--test-per-class", "6",
        "--concentration", "2.0", "--seed", "1", "--out", str(out),
    ])
    assert code == EXIT_OK
    return out


def data_flags(d):
    return [
        "--train", str(d / "train"), "--val", str(d / "val"),
        "--test", str(d / "test"), "--text-anchors", str(d / "text"),
    ]


class TestGenSynthetic:
    def test_creates_four_bundles(self, data_dir):
        for name in ("train", "val", "test", "text"):
            b = load_bundle(data_dir / name)
            assert b.n > 0

    def test_train_rows_per_class_twice_shots(self, data_dir):
        train = load_bundle(data_dir / "train")
        counts = np.bincount(train.labels)
        assert (counts == 8).all()  # 2 x --shots 4

    def test_refuses_overwrite_without_force(self, data_dir):
        code = run_cli([
            "gen-synthetic", "--classes", "4", "--dim", "16",
            "--out", str(data_dir),
        ])
        assert code == EXIT_DATA


class TestRun:
    def test_emits_run_result_json(self, data_dir, capsys):
        code = run_cli([
            "run", "--method", "tip-adapter-krr", *data_flags(data_dir),
            "--shots", "4", "--seed", "1",
        ])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["method"] == "tip-adapter-krr"
        assert doc["seeds"] == [1]
        assert 0.0 <= doc["test_accuracies"][0] <= 100.0
        # numeric flags echo back in the result document
        assert doc["chosen_hyperparams"][0]["lambda"] == 0.1

    def test_flags_echoed(self, data_dir, capsys):
        run_cli([
            "run", "--method", "tip-adapter", *data_flags(data_dir),
            "--shots", "4", "--alpha", "2.5", "--beta", "7",
            "--logit-scale", "50",
        ])
        doc = json.loads(capsys.readouterr().out)
        hp = doc["chosen_hyperparams"][0]
        assert hp["alpha"] == 2.5
        assert hp["beta"] == 7.0
        assert hp["logit_scale"] == 50.0

    def test_writes_out_file(self, data_dir, tmp_path):
        out = tmp_path / "result.json"
        code = run_cli([
            "run", "--method", "zero-shot-clip", *data_flags(data_dir),
            "--shots", "4", "--out", str(out),
        ])
        assert code == EXIT_OK
        assert json.loads(out.read_text())["method"] == "zero-shot-clip"

    def test_deterministic_given_flags(self, data_dir, capsys):
        argv = [
            "run", "--method", "tip-adapter", *data_flags(data_dir),
            "--shots", "4", "--seed", "3",
        ]
        run_cli(argv)
        first = json.loads(capsys.readouterr().out)
        run_cli(argv)
        second = json.loads(capsys.readouterr().out)
        first.pop("wall_clock_sec"), second.pop("wall_clock_sec")
        assert first == second

    def test_missing_bundle_is_data_error(self, data_dir, tmp_path):
        code = run_cli([
            "run", "--method", "tip-adapter",
            "--train", str(tmp_path / "missing"),
            "--val", str(data_dir / "val"), "--test", str(data_dir / "test"),
            "--text-anchors", str(data_dir / "text"),
        ])
        assert code == EXIT_DATA

    def test_unknown_method_is_usage_error(self, data_dir):
        with pytest.raises(SystemExit) as e:
            run_cli(["run", "--method", "nope", *data_flags(data_dir)])
        assert e.value.code == 2

    def test_unknown_flag_is_usage_error(self, data_dir):
        with pytest.raises(SystemExit) as e:
            run_cli(["run", "--method", "tip-adapter",
                     *data_flags(data_dir), "--bogus", "1"])
        assert e.value.code == 2


class TestSweepAndCompare:
    def test_sweep_with_grid_file(self, data_dir, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({
            "alpha": [0.5, 2.0], "beta": [5.0], "lambda": [0.1],
        }))
        code = run_cli([
            "sweep", "--method", "tip-adapter", *data_flags(data_dir),
            "--shots", "4", "--seeds", "0,1", "--grid", str(grid),
        ])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["test_accuracies"]) == 2
        assert doc["chosen_hyperparams"][0]["alpha"] in (0.5, 2.0)

    def test_compare_emits_delta_table(self, data_dir, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({
            "alpha": [0.5, 2.0], "beta": [5.0], "lambda": [0.1, 1.0],
        }))
        code = run_cli([
            "compare", "--methods", "tip-adapter,tip-adapter-krr",
            *data_flags(data_dir), "--shots", "4", "--seeds", "0,1,2",
            "--grid", str(grid),
        ])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["deltas"][0]["baseline"] == "tip-adapter"
        assert len(doc["deltas"][0]["delta_per_seed"]) == 3

    def test_compare_csv_format(self, data_dir, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"alpha": [1.0], "beta": [5.0],
                                    "lambda": [0.1]}))
        code = run_cli([
            "compare", "--methods", "zero-shot-clip,tip-adapter",
            *data_flags(data_dir), "--shots", "4", "--seeds", "0",
            "--grid", str(grid), "--format", "csv",
        ])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("method,mean_accuracy")
        assert any(line.startswith("delta(") for line in lines)

    def test_jobs_flag_output_identical(self, data_dir, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"alpha": [0.5, 2.0], "beta": [3.0, 7.0],
                                    "lambda": [0.1]}))
        argv = [
            "sweep", "--method", "tip-adapter", *data_flags(data_dir),
            "--shots", "4", "--seeds", "0,1", "--grid", str(grid),
        ]
        run_cli(argv + ["--jobs", "1"])
        serial = json.loads(capsys.readouterr().out)
        run_cli(argv + ["--jobs", "4"])
        parallel = json.loads(capsys.readouterr().out)
        serial.pop("wall_clock_sec"), parallel.pop("wall_clock_sec")
        assert serial == parallel


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert run_cli(["gradcheck"]) == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_beta_stress_passes(self):
        assert run_cli(["gradcheck", "--beta", "20"]) == EXIT_OK

    def test_break_gradient_fails(self, capsys):
        assert run_cli(["gradcheck", "--break-gradient"]) == EXIT_NUMERICAL


class TestInspect:
    def test_prints_metadata(self, data_dir, capsys):
        code = run_cli(["inspect", str(data_dir / "train")])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["kind"] == "image"
        assert doc["n"] == 32  # 4 classes x 8 rows
        assert doc["has_labels"]
        assert doc["payload_sha256"]

    def test_does_not_mutate_bundle(self, data_dir):
        f = data_dir / "train" / "features.bin"
        before = f.read_bytes()
        run_cli(["inspect", str(data_dir / "train")])
        assert f.read_bytes() == before

    def test_missing_path_data_error(self, tmp_path):
        assert run_cli(["inspect", str(tmp_path / "none")]) == EXIT_DATA
