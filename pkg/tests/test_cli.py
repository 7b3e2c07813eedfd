import csv
import json

import numpy as np
import pytest

from harness.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, parse_overrides
from harness.metrics import read_jsonl
from numeric.errors import ConfigError


@pytest.fixture
def trained_run(smoke_config_path, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", smoke_config_path, "--out", str(out)]) == EXIT_OK
    return out


class TestArguments:
    def test_unknown_subcommand(self, capsys):
        assert main(["fly"]) == EXIT_CONFIG
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand(self):
        assert main([]) == EXIT_CONFIG

    def test_help(self):
        assert main(["--help"]) == EXIT_OK

    def test_overrides(self):
        assert parse_overrides(["experiment.epochs=4", "model.hidden = [2, 2]"]) == {
            "experiment.epochs": 4, "model.hidden": [2, 2]}
        with pytest.raises(ConfigError):
            parse_overrides(["experiment.epochs"])

    def test_bad_override_is_a_config_error(self, smoke_config_path, tmp_path):
        code = main(["train", "--config", smoke_config_path, "--out", str(tmp_path), "--set", "no.such.key=1"])
        assert code == EXIT_CONFIG

    def test_malformed_sweep_is_a_config_error(self, smoke_config_path, tmp_path):
        code = main(["compare", "--config", smoke_config_path, "--out", str(tmp_path / "c.csv"), "--sweep", "sync.c"])
        assert code == EXIT_CONFIG

    def test_missing_checkpoint_is_a_runtime_error(self, tmp_path):
        assert main(["evaluate", "--checkpoint", str(tmp_path / "absent.ckpt")]) == EXIT_RUNTIME


class TestCommands:
    def test_train_writes_one_record_per_epoch(self, trained_run):
        records = read_jsonl(trained_run / "metrics.jsonl")
        assert [r.epoch for r in records] == [1, 2, 3]
        assert (trained_run / "final.ckpt").exists()
        assert (trained_run / "config.cfg").exists()
        history = [json.loads(line) for line in (trained_run / "history.jsonl").read_text().splitlines()]
        assert history and all(entry["event"] in ("ema", "redistribute") for entry in history)

    def test_train_baseline_method(self, smoke_config_path, tmp_path):
        out = tmp_path / "baseline"
        code = main(["train", "--config", smoke_config_path, "--out", str(out), "--set", "experiment.method=at_vanilla"])
        assert code == EXIT_OK
        assert len(read_jsonl(out / "metrics.jsonl")) == 3

    def test_evaluate_is_reproducible(self, trained_run, tmp_path):
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        ckpt = str(trained_run / "final.ckpt")
        assert main(["evaluate", "--checkpoint", ckpt, "--out", str(first)]) == EXIT_OK
        assert main(["evaluate", "--checkpoint", ckpt, "--out", str(second)]) == EXIT_OK
        assert read_jsonl(first) == read_jsonl(second)
        assert read_jsonl(first)[0] == read_jsonl(trained_run / "metrics.jsonl")[-1]

    def test_attack_writes_examples(self, trained_run, tmp_path):
        out = tmp_path / "adv.npz"
        assert main(["attack", "--checkpoint", str(trained_run / "final.ckpt"), "--out", str(out)]) == EXIT_OK
        arrays = np.load(out)
        assert set(arrays.files) == {"x_clean", "labels", "x_adv_linf", "x_adv_l2"}
        delta = np.abs(arrays["x_adv_linf"] - arrays["x_clean"])
        assert delta.max() <= 0.05 + 1e-9

    def test_compare_csv_layout(self, smoke_config_path, tmp_path):
        out = tmp_path / "compare.csv"
        assert main(["compare", "--config", smoke_config_path, "--out", str(out)]) == EXIT_OK
        with open(out, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["Method", "Natural", "PGD_inf", "PGD_2", "Union"]
        assert [row[0] for row in rows[1:]] == ["generalist:D_nat_linf", "at_vanilla"]
        for row in rows[1:]:
            linf, l2, union = float(row[2]), float(row[3]), float(row[4])
            assert union == pytest.approx((linf + l2) / 2, abs=0.006)

    def test_verify_theory_reports(self, smoke_config_path, tmp_path):
        out = tmp_path / "theory"
        assert main(["verify-theory", "--config", smoke_config_path, "--out", str(out)]) == EXIT_OK
        bound = json.loads((out / "bound.json").read_text())
        assert bound["trials"] == 4 and len(bound["lhs"]) == 4
        lipschitz = json.loads((out / "mixing_lipschitz.json").read_text())
        assert lipschitz["violations"] == 0
        stability = json.loads((out / "stability.json").read_text())
        assert stability["eps_oplus"] == pytest.approx(
            sum(g * e for g, e in zip(stability["gamma"], stability["per_task_eps"])))
