"""
End-to-end runs of run_experiment.main() on a tiny configuration.
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

import run_experiment
import storage
from edgenet import load_params
from models import MetricTable


def run(config_file, out_dir, *args):
    return run_experiment.main([*args, "--config", str(config_file), "--out-dir", str(out_dir)])


@pytest.fixture
def generated(tiny_config_file, tmp_path):
    out = tmp_path / "run"
    assert run(tiny_config_file, out, "gen") == 0
    return out


def test_gen_writes_both_logs(generated):
    train_log = generated / "train.log.jsonl"
    test_log = generated / "test.log.jsonl"
    header = storage.loads(train_log.read_bytes().splitlines()[0])
    assert header["count"] == 24
    assert storage.loads(test_log.read_bytes().splitlines()[0])["count"] == 12


def test_gen_is_reproducible(tiny_config_file, generated, tmp_path):
    again = tmp_path / "again"
    assert run(tiny_config_file, again, "gen") == 0
    for name in ("train.log.jsonl", "test.log.jsonl"):
        assert (again / name).read_bytes() == (generated / name).read_bytes()


def test_seed_flag_changes_the_data(tiny_config_file, generated, tmp_path):
    other = tmp_path / "other"
    assert run(tiny_config_file, other, "gen", "--seed", "99") == 0
    assert (other / "train.log.jsonl").read_bytes() != (generated / "train.log.jsonl").read_bytes()


def test_train_then_resume(tiny_config_file, generated):
    assert run(tiny_config_file, generated, "train") == 0
    ckpt = generated / "checkpoints" / "edgenet-seed0.json"
    assert load_params(ckpt)[1].step == 3
    log_lines = (generated / "training.log.seed0.tsv").read_text().splitlines()
    assert len(log_lines) == 4

    assert run(tiny_config_file, generated, "train", "--resume", "--steps", "5") == 0
    assert load_params(ckpt)[1].step == 5
    log_lines = (generated / "training.log.seed0.tsv").read_text().splitlines()
    assert len(log_lines) == 6
    assert log_lines[-1].split("\t")[0] == "5"


def test_eval_and_audit(tiny_config_file, generated):
    assert run(tiny_config_file, generated, "train", "--model", "all") == 0
    assert (generated / "checkpoints" / "dnalite-seed0.json").exists()

    assert run(tiny_config_file, generated, "eval") == 0
    reports = generated / "reports"
    data = storage.read_json(reports / "eval.json")
    table = MetricTable(**data["table"])
    assert [row.mechanism for row in table.rows] == ["gsp", "ugsp", "dnalite", "edgenet"]
    assert table.row("edgenet").rpm.mean == 1.0
    assert data["config"]["synth"]["n_ads"] == 4
    assert (reports / "eval.txt").read_text().startswith("# config: ")
    assert (reports / "eval.csv").exists()

    assert run(tiny_config_file, generated, "audit", "--mechanism", "gsp") == 0
    assert storage.read_json(reports / "audit_gsp.json")["report"]["instances"] == 4


def test_audit_second_price_is_truthful(tiny_config_file, generated):
    assert run(tiny_config_file, generated, "audit", "--mechanism", "second-price") == 0
    report = storage.read_json(generated / "reports" / "audit_second-price.json")["report"]
    assert report["ic_r"] == 0.0


def test_compare_over_seeds(tiny_config_file, generated):
    assert run(tiny_config_file, generated, "compare") == 0
    for seed in (0, 1):
        assert (generated / "checkpoints" / f"edgenet-seed{seed}.json").exists()
        assert (generated / "checkpoints" / f"dnalite-seed{seed}.json").exists()
    table = MetricTable(**storage.read_json(generated / "reports" / "compare.json")["table"])
    assert table.seeds == [0, 1]
    assert table.reference == "edgenet"


def test_config_from_environment(tiny_config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("ADLAB_CONFIG", str(tiny_config_file))
    out = tmp_path / "env"
    assert run_experiment.main(["gen", "--out-dir", str(out)]) == 0
    assert storage.loads((out / "test.log.jsonl").read_bytes().splitlines()[0])["count"] == 12


class TestExitCodes:
    def test_malformed_override(self, tiny_config_file, tmp_path):
        assert run(tiny_config_file, tmp_path, "gen", "--set", "no-equals-sign") == 1

    def test_invalid_value(self, tiny_config_file, tmp_path):
        assert run(tiny_config_file, tmp_path, "gen", "--set", "train.steps=0") == 1

    def test_missing_config_file(self, tmp_path):
        assert run(tmp_path / "absent.json", tmp_path, "gen") == 1

    def test_unknown_command_and_choice(self, tiny_config_file, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            run_experiment.main(["deploy"])
        assert excinfo.value.code == 1
        with pytest.raises(SystemExit) as excinfo:
            run(tiny_config_file, tmp_path, "audit", "--mechanism", "vcg")
        assert excinfo.value.code == 1

    def test_help(self):
        with pytest.raises(SystemExit) as excinfo:
            run_experiment.main(["--help"])
        assert excinfo.value.code == 0

    def test_missing_logs_are_a_runtime_error(self, tiny_config_file, tmp_path):
        assert run(tiny_config_file, tmp_path / "empty", "eval") == 2

    def test_missing_checkpoint_is_a_runtime_error(self, tiny_config_file, generated):
        assert run(tiny_config_file, generated, "audit", "--mechanism", "edgenet") == 2
