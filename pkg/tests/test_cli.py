"""End-to-end tests for the pipeline subcommands."""
from pathlib import Path

import pytest

from negmine.checkpoint import load_checkpoint
from negmine.cli import main
from negmine.kb import save_tsv
from negmine.rankers import read_ranked_tsv
from negmine.evaluation import read_trials_tsv
from negmine.synthetic import SyntheticSpec, generate_kb

SPEC = SyntheticSpec(
    clusters=3, cluster_size=6, relations=6, density=0.8, negative_fraction=0.25, seed=3
)


@pytest.fixture()
def workspace(tmp_path):
    """A kb.tsv plus a fast config file; returns the config path."""
    kb = generate_kb(SPEC)
    save_tsv(list(kb.triples), tmp_path / "kb.tsv")
    config = tmp_path / "config.txt"
    config.write_text(
        f"kb={tmp_path / 'kb.tsv'}\n"
        f"output_dir={tmp_path / 'out'}\n"
        "split=true-negatives\n"
        "hidden_dim=8\n"
        "epochs=3\n"
        "learning_rate=0.05\n"
        "batch_size=32\n"
        "keep_fraction=1.0\n"
        "seed=1\n",
        encoding="utf-8",
    )
    return config


def run(*argv: str) -> int:
    return main(list(argv))


class TestExitCodes:
    def test_rank_without_checkpoint_names_path(self, workspace, capsys):
        code = run("rank", "--config", str(workspace))
        err = capsys.readouterr().err
        assert code == 2
        assert err.startswith("negmine: missing-input:")
        assert "scorer.ckpt" in err
        assert err.count("\n") == 1

    def test_train_with_missing_kb(self, workspace, capsys):
        code = run("train", "--config", str(workspace), "--kb", "nowhere.tsv")
        err = capsys.readouterr().err
        assert code == 2
        assert "nowhere.tsv" in err

    def test_missing_config_file(self, tmp_path, capsys):
        code = run("train", "--config", str(tmp_path / "absent.txt"))
        assert code == 2
        assert "absent.txt" in capsys.readouterr().err

    def test_invalid_flag_value(self, workspace, capsys):
        code = run("train", "--config", str(workspace), "--k", "0")
        err = capsys.readouterr().err
        assert code == 3
        assert err.startswith("negmine: invalid:")

    def test_unknown_config_key(self, tmp_path, capsys):
        config = tmp_path / "config.txt"
        config.write_text("bogus=1\n", encoding="utf-8")
        code = run("train", "--config", str(config))
        assert code == 3
        assert "unknown config key" in capsys.readouterr().err

    def test_kb_not_configured(self, capsys):
        code = run("train")
        assert code == 3
        assert "kb file not configured" in capsys.readouterr().err

    def test_sample_rejects_ranked_sampler(self, workspace, capsys):
        code = run("sample", "--config", str(workspace), "--sampler", "negater-theta")
        assert code == 3
        assert "baseline negatives only" in capsys.readouterr().err


class TestDryRun:
    def test_plan_without_writes(self, workspace, capsys, tmp_path):
        code = run("train", "--config", str(workspace), "--dry-run")
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith("plan:")
        assert "would write" in out
        assert not (tmp_path / "out").exists()

    def test_dry_run_still_validates_inputs(self, workspace, capsys):
        code = run("rank", "--config", str(workspace), "--dry-run")
        assert code == 2


class TestLocking:
    def test_held_lock_rejected(self, workspace, capsys, tmp_path):
        out_dir = tmp_path / "out"
        out_dir.mkdir()
        (out_dir / ".lock").write_text("123", encoding="utf-8")
        code = run("train", "--config", str(workspace))
        err = capsys.readouterr().err
        assert code == 3
        assert "lockfile exists" in err

    def test_lock_released_after_run(self, workspace, tmp_path):
        assert run("train", "--config", str(workspace)) == 0
        assert not (tmp_path / "out" / ".lock").exists()


class TestPipelineIntegration:
    def test_stage_chain(self, workspace, tmp_path, capsys):
        # Spec'd flow: after candidates and theta ranking, every ranked row's
        # relation must hold an entry in the fitted threshold map.
        for argv in (
            ("train", "--config", str(workspace)),
            ("thresholds", "--config", str(workspace)),
            ("candidates", "--config", str(workspace), "--k", "10"),
            ("rank", "--config", str(workspace), "--method", "theta"),
        ):
            assert run(*argv) == 0, argv
        out = capsys.readouterr().out
        assert "wrote" in out
        _, thresholds = load_checkpoint(tmp_path / "out" / "scorer.ckpt")
        rows = read_ranked_tsv(tmp_path / "out" / "ranked.tsv")
        assert rows
        assert all(row.triple.relation in thresholds.per_relation for row in rows)
        assert (tmp_path / "out" / "thresholds.tsv").exists()
        assert (tmp_path / "out" / "train-loss.tsv").read_text().count("\n") == 3

    def test_evaluate_uniform_five_trials(self, workspace, tmp_path, capsys):
        assert run("evaluate", "--config", str(workspace), "--sampler", "uniform",
                   "--trials", "5") == 0
        out = capsys.readouterr().out
        results = read_trials_tsv(tmp_path / "out" / "trials-uniform.tsv")
        assert [r.trial for r in results] == [1, 2, 3, 4, 5]
        assert all(0.0 <= r.accuracy <= 1.0 for r in results)
        assert out.count("trial ") == 5
        assert "+/-" in out

    def test_report_combines_trial_files(self, workspace, tmp_path, capsys):
        assert run("evaluate", "--config", str(workspace), "--sampler", "uniform",
                   "--trials", "2") == 0
        assert run("evaluate", "--config", str(workspace), "--sampler", "slots",
                   "--trials", "2") == 0
        assert run("report", "--config", str(workspace)) == 0
        out = capsys.readouterr().out
        assert (tmp_path / "out" / "report.tsv").exists()
        assert "baseline: uniform" in out
        assert "slots" in out

    def test_report_without_trials(self, workspace, capsys):
        code = run("report", "--config", str(workspace))
        assert code == 2
        assert "trials-*" in capsys.readouterr().err

    def test_sample_writes_labeled_negatives(self, workspace, tmp_path):
        assert run("sample", "--config", str(workspace), "--sampler", "uniform") == 0
        lines = (tmp_path / "out" / "negatives.tsv").read_text().splitlines()
        assert lines
        assert all(line.endswith("\t0") for line in lines)

    def test_evaluate_rejects_mismatched_ranked_method(self, workspace, tmp_path, capsys):
        for argv in (
            ("train", "--config", str(workspace)),
            ("candidates", "--config", str(workspace)),
            ("rank", "--config", str(workspace), "--method", "none"),
        ):
            assert run(*argv) == 0
        code = run("evaluate", "--config", str(workspace), "--sampler", "negater-theta",
                   "--trials", "1")
        capsys.readouterr()
        assert code == 3


class TestDeterminism:
    def run_chain(self, workspace, out_dir: Path) -> None:
        for argv in (
            ("train",),
            ("thresholds",),
            ("candidates",),
            ("rank", "--method", "theta"),
        ):
            assert run(*argv, "--config", str(workspace), "--output-dir", str(out_dir)) == 0

    def test_byte_identical_reruns(self, workspace, tmp_path, capsys):
        self.run_chain(workspace, tmp_path / "a")
        self.run_chain(workspace, tmp_path / "b")
        capsys.readouterr()
        for name in ("scorer.ckpt", "train-loss.tsv", "thresholds.tsv",
                     "candidates.tsv", "ranked.tsv"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name

    def test_seed_flag_changes_shuffle(self, workspace, tmp_path, capsys):
        for argv in (
            ("train", "--config", str(workspace)),
            ("thresholds", "--config", str(workspace)),
            ("candidates", "--config", str(workspace)),
        ):
            assert run(*argv) == 0
        assert run("rank", "--config", str(workspace), "--method", "theta",
                   "--seed", "1") == 0
        first = (tmp_path / "out" / "ranked.tsv").read_bytes()
        assert run("rank", "--config", str(workspace), "--method", "theta",
                   "--seed", "2") == 0
        second = (tmp_path / "out" / "ranked.tsv").read_bytes()
        capsys.readouterr()
        assert first != second


class TestEnvironmentOverrides:
    def test_output_dir_from_env(self, workspace, tmp_path, monkeypatch, capsys):
        target = tmp_path / "env-out"
        monkeypatch.setenv("NEGMINE_OUTPUT_DIR", str(target))
        assert run("train", "--config", str(workspace)) == 0
        capsys.readouterr()
        assert (target / "scorer.ckpt").exists()
        assert not (tmp_path / "out").exists()

    def test_flag_beats_env(self, workspace, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("NEGMINE_OUTPUT_DIR", str(tmp_path / "env-out"))
        assert run("train", "--config", str(workspace),
                   "--output-dir", str(tmp_path / "flag-out")) == 0
        capsys.readouterr()
        assert (tmp_path / "flag-out" / "scorer.ckpt").exists()

    def test_bad_thread_env(self, workspace, monkeypatch, capsys):
        monkeypatch.setenv("NEGMINE_THREADS", "many")
        code = run("train", "--config", str(workspace))
        assert code == 3
        assert "NEGMINE_THREADS" in capsys.readouterr().err
