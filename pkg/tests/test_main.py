"""Command-line surface"""

import json

import numpy as np
import pytest

from config import Config
from main import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, main
from property_suite import PROPERTIES

TINY_MODEL = {
    "embedding_size": 8,
    "hidden_size": 16,
    "num_layers": 2,
    "look_back": 2,
    "temperature": 3.0,
    "memory_span": 3,
    "residual_blocks": 0,
    "dropout": [0.0, 0.0, 0.0],
    "precision": "float64",
}


@pytest.fixture(autouse=True)
def isolated_db(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "DB_PATH", str(tmp_path / "runs.db"))


def write_config(write_text, **sections):
    return write_text("experiment.json", json.dumps(sections))


def stdout_lines(capsys):
    return [line for line in capsys.readouterr().out.splitlines() if line]


class TestErrors:
    def test_unknown_key_exits_with_config_error(self, write_text, capsys):
        path = write_config(write_text, model={"hidden": 3})
        assert main(["eval-lm", "--config", path, "--no-save"]) == EXIT_CONFIG_ERROR
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["error"] == "ConfigError"

    def test_bad_override(self, capsys):
        assert main(["eval-lm", "--override", "trainer.lr", "--no-save"]) == EXIT_CONFIG_ERROR
        assert "ConfigError" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [["parse"], [], ["eval-parse", "--aggregate", "macro"], ["check-properties", "--trials", "many"]],
    )
    def test_usage_errors_are_one_json_line(self, argv, capsys):
        assert main(argv) == EXIT_CONFIG_ERROR
        err = capsys.readouterr().err
        assert len(err.strip().splitlines()) == 1
        error = json.loads(err)
        assert error["error"] == "ConfigError"
        assert "usage" in error

    def test_missing_input_is_named(self, capsys):
        main(["parse"])
        assert "--input" in json.loads(capsys.readouterr().err)["message"]

    def test_missing_corpus_is_runtime_error(self, write_text, tmp_path, capsys):
        path = write_config(write_text, data={"train": str(tmp_path / "missing.txt")})
        assert main(["eval-lm", "--config", path, "--no-save"]) == EXIT_RUNTIME_ERROR
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "CorpusError"


class TestCommands:
    def test_check_properties(self, capsys):
        assert main(["check-properties", "--trials", "20", "--no-save"]) == EXIT_OK
        reports = [json.loads(line) for line in stdout_lines(capsys)]
        assert [r["name"] for r in reports] == list(PROPERTIES)
        assert all(r["failures"] == 0 for r in reports)

    def test_untrained_char_model_scores_near_two_bits(self, write_text, capsys):
        rng = np.random.default_rng(0)
        corpus = write_text("train.txt", "".join(rng.choice(list("abcd"), size=400)))
        path = write_config(
            write_text,
            model=TINY_MODEL,
            trainer={"eval_batch_size": 2, "bptt": 20},
            data={"train": corpus, "valid": corpus},
        )
        assert main(["eval-lm", "--config", path, "--no-save"]) == EXIT_OK
        report = json.loads(stdout_lines(capsys)[-1])
        assert report["bpc"] == pytest.approx(2.0, abs=0.1)
        assert report["tokens"] == 400

    def test_eval_parse_of_gold_predictions(self, write_text, capsys):
        gold = write_text("gold.trees", "(S (X a b) (Y c d))\n")
        pred = write_text("pred.txt", "((a b) (c d))\n")
        assert main(["eval-parse", "--gold", gold, "--predictions", pred, "--no-save"]) == EXIT_OK
        report = json.loads(stdout_lines(capsys)[-1])
        assert report["f1"] == 1.0
        assert report["sentences"] == 1
        assert set(report["baselines"]) == {"random", "lbranch", "rbranch", "upper_bound"}

    def test_parse_and_inspect_word_model(self, write_text, capsys):
        corpus = write_text("train.txt", "the cat sat\na dog ran off\n")
        path = write_config(write_text, model=dict(TINY_MODEL, mode="word"), data={"train": corpus})
        sentences = write_text("in.txt", "the cat sat\n\na dog ran off\n")

        assert main(["parse", "--config", path, "--input", sentences, "--no-save"]) == EXIT_OK
        trees = stdout_lines(capsys)
        assert len(trees) == 2
        assert trees[0].replace("(", "").replace(")", "").split() == ["the", "cat", "sat"]

        assert main(["inspect-distances", "--config", path, "--text", "the cat sat", "--no-save"]) == EXIT_OK
        rows = [line.split("\t") for line in stdout_lines(capsys)]
        assert [token for token, _ in rows] == ["the", "cat", "sat"]
        assert all(np.isfinite(float(value)) for _, value in rows)

    def test_train_override_reaches_log(self, write_text, tmp_path, capsys):
        corpus = write_text("train.txt", "abcab cabca\n" * 8)
        path = write_config(
            write_text,
            name="cli",
            model=TINY_MODEL,
            trainer={"batch_size": 2, "bptt": 10, "eval_batch_size": 2, "epochs": 1, "log_interval": 1},
            data={"train": corpus, "valid": corpus},
        )
        output = tmp_path / "runs"
        code = main(
            ["train", "--config", path, "--override", "trainer.lr=0.001", "--output-dir", str(output), "--no-save"]
        )
        assert code == EXIT_OK
        summary = json.loads(stdout_lines(capsys)[-1])
        assert summary["epochs"] == 1
        with open(output / "cli" / "metrics.jsonl", "r", encoding="utf-8") as f:
            records = [json.loads(line) for line in f]
        assert records and all(r["lr"] == 0.001 for r in records)

    def test_list_and_stats(self, write_text, capsys):
        gold = write_text("gold.trees", "(S (X a b) (Y c d))\n")
        pred = write_text("pred.txt", "((a b) (c d))\n")
        assert main(["eval-parse", "--gold", gold, "--predictions", pred]) == EXIT_OK
        capsys.readouterr()

        assert main(["list"]) == EXIT_OK
        listing = stdout_lines(capsys)
        assert len(listing) == 1 and "eval-parse" in listing[0]

        assert main(["stats"]) == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["total_runs"] == 1
        assert stats["best_metrics"] == {"eval-parse": {"f1": 1.0}}

    def test_list_empty(self, capsys):
        assert main(["list"]) == EXIT_OK
        assert "No runs saved yet." in capsys.readouterr().out
