import json
import os
import subprocess
import sys

import pytest

from bridgelab.cli import main
from bridgelab.denoiser import DenoiserModel, load_checkpoint
from bridgelab.schedule import VpSchedule


# Published values carry two decimals; the float guard keeps an exact half-unit gap inside.
PUBLISHED_SLACK = 0.005 + 1e-12


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, ckpt = root / "data", root / "train"
    assert run("make-data", "--task", "rgb2ir", "--n", 4, "--res", 16, "--seed", 7, "--out", data) == 0
    assert run("train-bridge", "--task", "rgb2ir", "--data", data, "--iters", 40, "--batch", 2, "--width", 4,
               "--out", ckpt) == 0
    return root


def _files(folder):
    return {name: (folder / name).read_bytes() for name in sorted(os.listdir(folder))}


class TestMakeData:
    def test_count_and_manifest(self, tmp_path):
        assert run("make-data", "--task", "sar2ir", "--n", 64, "--res", 32, "--seed", 7, "--out", tmp_path) == 0
        assert len((tmp_path / "manifest.txt").read_text().splitlines()) == 64
        assert len(os.listdir(tmp_path / "source")) == 64 and len(os.listdir(tmp_path / "target")) == 64
        assert (tmp_path / "config.txt").read_text().startswith("command = make-data\n")

    def test_rerun_identical_bytes(self, tmp_path):
        for d in ("a", "b"):
            assert run("make-data", "--task", "sar2rgb", "--n", 3, "--res", 16, "--out", tmp_path / d) == 0
        assert _files(tmp_path / "a" / "target") == _files(tmp_path / "b" / "target")
        assert (tmp_path / "a" / "manifest.txt").read_bytes() == (tmp_path / "b" / "manifest.txt").read_bytes()

    def test_unknown_task_names_flag(self, tmp_path, capsys):
        assert run("make-data", "--task", "sar2uv", "--out", tmp_path) == 1
        assert "--task" in capsys.readouterr().err


class TestUsage:
    def test_help_exits_zero_and_lists_flags(self):
        out = subprocess.run([sys.executable, "-m", "bridgelab", "sample", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for flag in ("--ckpt", "--data", "--nfe", "--eta", "--seed", "--out", "--config", "--debug-endpoint"):
            assert flag in out.stdout

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("make-data", "--task", "sar2eo", "--bogus", 1, "--out", tmp_path)
        assert e.value.code == 1

    def test_config_precedence(self, tmp_path):
        cfg = tmp_path / "run.txt"
        cfg.write_text("command = make-data\ntask = sar2eo\nn = 5\nres = 16\n")
        assert run("make-data", "--config", cfg, "--n", 2, "--out", tmp_path / "o") == 0
        assert len((tmp_path / "o" / "manifest.txt").read_text().splitlines()) == 2
        written = (tmp_path / "o" / "config.txt").read_text()
        assert "n = 2" in written and "task = sar2eo" in written

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "run.txt"
        cfg.write_text("task = sar2eo\ncolour = red\n")
        assert run("make-data", "--config", cfg, "--out", tmp_path / "o") == 1

    def test_thread_cap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BRIDGELAB_THREADS", "1")
        assert run("make-data", "--task", "sar2eo", "--n", 2, "--res", 16, "--out", tmp_path / "ok") == 0
        monkeypatch.setenv("BRIDGELAB_THREADS", "zero")
        assert run("make-data", "--task", "sar2eo", "--n", 2, "--res", 16, "--out", tmp_path / "bad") == 1


class TestTraining:
    def test_zero_iterations_is_initialisation(self, tmp_path):
        assert run("train-bridge", "--task", "gaussian", "--iters", 0, "--n-train", 100, "--seed", 3,
                   "--out", tmp_path) == 0
        model, _ = load_checkpoint(tmp_path / "checkpoint.ckpt")
        init = DenoiserModel.mlp(1, VpSchedule(), seed=3)
        assert model.params.tobytes() == init.params.tobytes()
        assert json.loads((tmp_path / "heldout.json").read_text())["ratio"] > 1.0

    def test_divergence_exit_code(self, tmp_path, capsys):
        assert run("train-bridge", "--task", "gaussian", "--iters", 50, "--n-train", 100, "--lr", 1e200,
                   "--out", tmp_path) == 2
        assert "diverged at index" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path):
        assert run("train-bridge", "--task", "sar2eo", "--data", tmp_path / "nowhere", "--out", tmp_path) == 3

    def test_cut_training_and_sampling(self, workspace, tmp_path):
        data = workspace / "data"
        assert run("train-cut", "--task", "rgb2ir", "--data", data, "--iters", 2, "--width", 4,
                   "--out", tmp_path / "cut") == 0
        last = (tmp_path / "cut" / "loss.csv").read_text().splitlines()[-1].split(",")
        assert all(map(lambda v: float(v) == float(v), last[1:3]))
        assert run("sample", "--ckpt", tmp_path / "cut" / "checkpoint.ckpt", "--data", data,
                   "--out", tmp_path / "s") == 0
        assert len(os.listdir(tmp_path / "s" / "samples")) == 4


class TestSample:
    def test_single_step_matches_endpoint_dump(self, workspace, tmp_path):
        ckpt, data = workspace / "train" / "checkpoint.ckpt", workspace / "data"
        assert run("sample", "--ckpt", ckpt, "--data", data, "--nfe", 1, "--debug-endpoint", 1,
                   "--out", tmp_path) == 0
        assert _files(tmp_path / "samples") == _files(tmp_path / "debug_endpoint")
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["n_steps"] == 1 and meta["eta"] == 0.0 and "wall_ms" in meta

    def test_seed_controls_booting_noise(self, workspace, tmp_path):
        ckpt, data = workspace / "train" / "checkpoint.ckpt", workspace / "data"
        for name, seed in (("a", 5), ("b", 5), ("c", 6)):
            assert run("sample", "--ckpt", ckpt, "--data", data, "--nfe", 4, "--eta", 0, "--seed", seed,
                       "--out", tmp_path / name) == 0
        a, b, c = (_files(tmp_path / n / "samples") for n in "abc")
        assert a == b
        assert a != c

    def test_missing_checkpoint(self, workspace, tmp_path):
        assert run("sample", "--ckpt", tmp_path / "none.ckpt", "--data", workspace / "data", "--out", tmp_path) == 3

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert run("sample", "--ckpt", bad, "--data", workspace / "data", "--out", tmp_path / "o") == 3


class TestSweepAndEval:
    def test_sweep_rows(self, workspace, tmp_path, capsys):
        assert run("sweep", "--ckpt", workspace / "train" / "checkpoint.ckpt", "--data", workspace / "data",
                   "--steps", "1,2,5,10,20,100", "--out", tmp_path) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "n_steps,fid_norm,l1,score,wall_ms,seed" and len(lines) == 7
        assert capsys.readouterr().out.startswith("best: n_steps=")

    def test_eval_perfect_prediction(self, workspace, tmp_path):
        data = workspace / "data"
        assert run("eval", "--task", "rgb2ir", "--pred", data / "target", "--data", data, "--out", tmp_path) == 0
        row = json.loads((tmp_path / "report.json").read_text())["per_task"][0]
        assert row["l1"] == 0.0 and row["fid_norm"] <= 1e-6 and "lpips_surrogate" in row

    def test_eval_from_published_rows(self, tmp_path, capsys):
        rows = [(0.22, 0.50, 0.08), (0.88, 0.64, 0.21), (0.65, 0.60, 0.15), (0.36, 0.15, 0.09)]
        table = tmp_path / "ours.csv"
        table.write_text("task,fid_norm,lpips,l1\n" + "".join(f"t{i},{a},{b},{c}\n" for i, (a, b, c) in enumerate(rows)))
        assert run("eval", "--from-csv", table, "--out", tmp_path / "o") == 0
        combined = float(capsys.readouterr().out.split()[-1])
        assert combined == pytest.approx(0.38, abs=PUBLISHED_SLACK)

    def test_eval_from_leaderboard_scores(self, tmp_path, capsys):
        # Per-task scores entered as a single column reproduce the leaderboard combined values.
        for scores, expected in (([0.27, 0.58, 0.46, 0.20], 0.38), ([0.11, 0.50, 0.49, 0.20], 0.32)):
            table = tmp_path / "t.csv"
            table.write_text("task,fid_norm,lpips,l1\n" + "".join(f"t{i},{s},{s},{s}\n" for i, s in enumerate(scores)))
            assert run("eval", "--from-csv", table, "--out", tmp_path / "o") == 0
            assert float(capsys.readouterr().out.split()[-1]) == pytest.approx(expected, abs=PUBLISHED_SLACK)

    def test_empty_inputs(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        (empty / "manifest.txt").write_text("")
        (tmp_path / "pred").mkdir()
        assert run("eval", "--task", "sar2eo", "--pred", tmp_path / "pred", "--data", empty,
                   "--out", tmp_path / "o") == 4
        table = tmp_path / "t.csv"
        table.write_text("task,fid_norm,lpips,l1\n")
        assert run("eval", "--from-csv", table, "--out", tmp_path / "o2") == 4
