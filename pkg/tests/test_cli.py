import json
import subprocess
import sys
import time

import pytest

from ubm.checkpoint import read_checkpoint_meta
from ubm.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, main

TINY = [
    "--set", "synth.num_sessions=140",
    "--set", "synth.num_valid_sessions=40",
    "--set", "synth.num_test_sessions=40",
    "--set", "synth.num_intents=4",
    "--set", "synth.vocab_size=60",
    "--set", "synth.items_per_intent=6",
    "--set", "synth.session_min=6",
    "--set", "model.hidden_size=16",
    "--set", "model.num_layers=1",
    "--set", "model.num_heads=2",
    "--set", "model.ff_size=32",
    "--set", "pretrain.stage1_batch=16",
    "--set", "pretrain.stage2_batch=8",
    "--set", "pretrain.peak_lr=1e-3",
    "--set", "finetune.batch_size=16",
    "--set", "finetune.epochs=2",
    "--set", "finetune.lr=1e-3",
    "--set", "finetune.nip_min_count=3",
    "--set", "finetune.pool_refresh_interval=4",
    "--set", "analyze.align_uniform_samples=30",
]


def run(cmd, out, extra=()):
    return main([cmd, "--out", str(out), *TINY, *extra])


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("generate-corpus", out) == EXIT_OK
    assert run("build-vocab", out) == EXIT_OK
    assert run("pretrain", out, ("--stage", "all")) == EXIT_OK
    return out


class TestPipeline:
    def test_artifacts_exist(self, pipeline_dir):
        for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "vocab.json",
                     "stage1.ckpt", "stage2.ckpt"):
            assert (pipeline_dir / name).is_file(), name

    def test_finetune_and_evaluate_pip(self, pipeline_dir, capsys):
        assert run("finetune", pipeline_dir, ("--task", "pip")) == EXIT_OK
        assert run("evaluate", pipeline_dir, ("--task", "pip")) == EXIT_OK
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(report["metrics"]) == {"accuracy", "auroc", "f1", "kappa"}
        assert report["task"] == "pip" and report["split"] == "test"
        assert (pipeline_dir / "metrics_pip_test.json").is_file()

    def test_finetune_from_scratch_flag(self, pipeline_dir):
        assert run("finetune", pipeline_dir, ("--task", "rlp", "--from-scratch")) == EXIT_OK
        meta = read_checkpoint_meta(pipeline_dir / "task_rlp.ckpt")
        assert meta["started_from"] == "random-init"

    def test_config_snapshot_in_checkpoint_header(self, pipeline_dir):
        meta = read_checkpoint_meta(pipeline_dir / "stage2.ckpt")
        assert meta["config"]["pretrain"]["temperature"] == 0.05
        assert meta["config"]["model"]["hidden_size"] == 16
        assert meta["vocab_hash"]

    def test_set_override_visible_in_header(self, tmp_path):
        out = tmp_path / "tau"
        assert run("generate-corpus", out) == EXIT_OK
        assert run("build-vocab", out) == EXIT_OK
        assert run("pretrain", out, ("--stage", "2", "--set", "pretrain.temperature=0.07",
                                     "--set", "pretrain.stage2_epochs=1")) == EXIT_OK
        meta = read_checkpoint_meta(out / "stage2.ckpt")
        assert meta["config"]["pretrain"]["temperature"] == 0.07

    def test_analyze_outputs(self, pipeline_dir, capsys):
        rc = run("analyze", pipeline_dir, ("--align-uniform", "--export-embeddings", "--sparsity"))
        assert rc == EXIT_OK
        capsys.readouterr()
        align = json.loads((pipeline_dir / "align_uniform.json").read_text())
        assert -8.0 <= align["uniformity_loss"] <= 0.0
        assert 0.0 <= align["alignment_loss"] <= 4.0
        sparsity = json.loads((pipeline_dir / "sparsity.json").read_text())
        assert sparsity["groups"]
        header = (pipeline_dir / "embeddings.csv").read_text().splitlines()[0]
        assert header.split(",")[0] == "session_id"
        assert len(header.split(",")) == 1 + 16

    def test_analyze_requires_a_mode(self, pipeline_dir):
        assert run("analyze", pipeline_dir) == EXIT_CONFIG


class TestErrorPaths:
    def test_invalid_config_key_exits_2(self, tmp_path):
        assert main(["generate-corpus", "--out", str(tmp_path), "--set", "model.bogus=1"]) == EXIT_CONFIG

    def test_vocab_mismatch_exits_3(self, pipeline_dir, tmp_path):
        out = tmp_path / "other"
        assert run("generate-corpus", out, ("--set", "run.seed=999")) == EXIT_OK
        assert run("build-vocab", out, ("--set", "run.seed=999")) == EXIT_OK
        rc = main([
            "finetune", "--out", str(out), *TINY, "--task", "pip",
            "--start", str(pipeline_dir / "stage2.ckpt"), "--set", "run.seed=999",
        ])
        assert rc == EXIT_MISMATCH

    def test_env_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UBM_SEED", "31337")
        out = tmp_path / "env"
        assert run("generate-corpus", out) == EXIT_OK
        assert run("build-vocab", out) == EXIT_OK
        assert run("pretrain", out, ("--stage", "2")) == EXIT_OK
        meta = read_checkpoint_meta(out / "stage2.ckpt")
        assert meta["seed"] == 31337

    def test_locked_output_dir_refused(self, tmp_path):
        lock_path = tmp_path / ".ubm.lock"
        holder = subprocess.Popen(
            [sys.executable, "-c",
             "import sys, time; from filelock import FileLock;"
             f"l = FileLock({str(lock_path)!r}); l.acquire(); print('held', flush=True); time.sleep(30)"],
            stdout=subprocess.PIPE,
        )
        try:
            assert holder.stdout.readline().strip() == b"held"
            rc = main(["generate-corpus", "--out", str(tmp_path), *TINY])
            assert rc == EXIT_CONFIG
        finally:
            holder.kill()
            holder.wait()


class TestDeterminism:
    def full_pipeline(self, out):
        assert run("generate-corpus", out) == EXIT_OK
        assert run("build-vocab", out) == EXIT_OK
        assert run("pretrain", out, ("--stage", "all")) == EXIT_OK
        assert run("finetune", out, ("--task", "pip")) == EXIT_OK
        assert run("evaluate", out, ("--task", "pip")) == EXIT_OK
        return (out / "metrics_pip_test.json").read_text()

    def test_two_seeded_runs_identical_metrics(self, tmp_path, capsys):
        a = self.full_pipeline(tmp_path / "a")
        b = self.full_pipeline(tmp_path / "b")
        capsys.readouterr()
        assert a == b
