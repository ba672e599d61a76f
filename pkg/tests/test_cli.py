import json
import logging

import numpy as np
import pandas as pd
import pytest

from app.api.cli import build_parser, collect_overrides, dispatch, parse_config
from app.core.exceptions import ConfigurationError
from app.core.training import read_history
from app.main import main

SMALL_RUN = {
    "synthetic": {"num_nodes": 4, "num_steps": 160},
    "model": {"history_len": 6, "horizon": 3, "hidden_dim": 8, "embed_dim": 6, "num_layers": 1, "topk": 3},
    "train": {"max_epochs": 2, "batch_size": 16, "learning_rate": 0.01},
    "evaluation": {"horizons": [1, 3]},
    "ablation_seeds": [0],
}


@pytest.fixture
def small_run(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_RUN))
    return str(path)


def overrides_for(argv):
    return collect_overrides(build_parser().parse_args(argv))


class TestConfiguration:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        config = parse_config(str(path))
        assert (config.model.hidden_dim, config.model.embed_dim, config.model.num_layers) == (32, 40, 3)
        assert config.model.topk == 20
        assert config.train.learning_rate == 0.001
        assert config.train.patience == 100

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"model": {"num_layers": 2}}))
        assert parse_config(str(path)).model.num_layers == 2
        config = parse_config(str(path), overrides_for(["train", "--layers", "4", "--set", "model.topk=5"]))
        assert config.model.num_layers == 4
        assert config.model.topk == 5

    def test_short_epoch_budget_shrinks_default_patience(self):
        config = parse_config(None, overrides_for(["train", "--epochs", "3"]))
        assert config.train.patience == 3

    def test_seed_reaches_trainer_and_generator(self):
        config = parse_config(None, overrides_for(["train", "--seed", "42"]))
        assert config.train.seed == 42
        assert config.synthetic.seed == 42

    def test_unknown_key_suggests_closest(self, tmp_path):
        path = tmp_path / "typo.json"
        path.write_text(json.dumps({"model": {"hiden_dim": 16}}))
        with pytest.raises(ConfigurationError, match="did you mean 'hidden_dim'"):
            parse_config(str(path))

    @pytest.mark.parametrize("key", ["hiden_dim", "hidden_dim"])
    def test_misplaced_section_key_suggests_dotted_path(self, tmp_path, key):
        path = tmp_path / "flat.json"
        path.write_text(json.dumps({key: 16}))
        with pytest.raises(ConfigurationError, match=r"did you mean 'model\.hidden_dim'"):
            parse_config(str(path))

    def test_invalid_value(self):
        with pytest.raises(ConfigurationError, match="learning_rate"):
            parse_config(None, {"train.learning_rate": -1.0})

    def test_patience_beyond_epochs(self):
        with pytest.raises(ConfigurationError):
            parse_config(None, {"train.max_epochs": 5, "train.patience": 10})


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert dispatch(["frobnicate"]) == 2

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"model": {"hiden_dim": 16}}))
        assert dispatch(["train", "--config", str(path)]) == 2
        assert "hidden_dim" in capsys.readouterr().err

    def test_evaluate_without_checkpoint(self, tmp_path):
        assert dispatch(["evaluate", "--output", str(tmp_path)]) == 2

    def test_missing_dataset(self, tmp_path, capsys):
        code = dispatch(["train", "--dataset", str(tmp_path / "absent"), "--output", str(tmp_path / "out")])
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")


class TestCommands:
    def test_gradcheck(self, tmp_path, capsys):
        assert dispatch(["gradcheck", "--output", str(tmp_path)]) == 0
        assert "max relative error" in capsys.readouterr().out
        report = json.loads((tmp_path / "gradcheck.json").read_text())
        assert "model:mlp" in report

    def test_generate_is_reproducible(self, small_run, tmp_path):
        for name in ("a", "b"):
            assert dispatch(["generate", "--config", small_run, "--seed", "9", "--output", str(tmp_path / name)]) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert files == ["metadata.json", "mode0.bin", "mode1.bin", "resolved_config.json"]
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_train_evaluate_predict(self, small_run, tmp_path, capsys):
        train_dir, eval_dir, predict_dir = tmp_path / "train", tmp_path / "eval", tmp_path / "predict"
        assert dispatch(["train", "--config", small_run, "--output", str(train_dir)]) == 0
        resolved = json.loads((train_dir / "resolved_config.json").read_text())
        assert resolved["config"]["model"]["hidden_dim"] == 8
        assert "resolved_at" in resolved

        history = read_history(train_dir / "history.jsonl")
        assert len(history) == 2
        checkpoint = str(train_dir / "checkpoint.zip")

        assert dispatch([
            "evaluate", "--config", small_run, "--checkpoint", checkpoint, "--split", "val", "--output", str(eval_dir),
        ]) == 0
        summary = json.loads((eval_dir / "evaluation.json").read_text())
        assert summary["loss"] == pytest.approx(min(r.val_loss for r in history), rel=1e-9)
        table = pd.read_csv(eval_dir / "metrics.csv")
        assert list(table["horizon"]) == [1, 3, 1, 3]

        assert dispatch([
            "predict", "--config", small_run, "--checkpoint", checkpoint, "--relations", "--output", str(predict_dir),
        ]) == 0
        with np.load(predict_dir / "predictions.npz") as archive:
            assert archive["predictions"].shape[1:] == (2, 4, 3, 1)
        with np.load(predict_dir / "relations.npz") as archive:
            assert sorted(archive.files) == ["A_0_0", "A_0_1", "A_1_0", "A_1_1"]

    def test_params(self, small_run, tmp_path, capsys):
        assert dispatch(["params", "--config", small_run, "--no-timing", "--output", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "parameters:" in out
        assert "growth exponent in W" in out
        assert len(pd.read_csv(tmp_path / "scaling.csv")) == 8

    def test_ablate(self, small_run, tmp_path, capsys):
        code = dispatch([
            "ablate", "--config", small_run, "--variants", "full", "wo_csrl", "--output", str(tmp_path),
        ])
        assert code == 0
        table = pd.read_csv(tmp_path / "ablation.csv")
        assert set(table["variant"]) == {"full", "wo_csrl"}
        seeds = pd.read_csv(tmp_path / "ablation_seeds.csv")
        assert len(seeds) == 2
        assert "full beats wo_csrl" in capsys.readouterr().out


def test_main_configures_app_logger(monkeypatch):
    app_logger = logging.getLogger("app")
    monkeypatch.setattr(app_logger, "handlers", list(app_logger.handlers))
    monkeypatch.setattr(app_logger, "propagate", app_logger.propagate)
    monkeypatch.setattr(app_logger, "level", app_logger.level)

    assert main(["frobnicate"]) == 2
    assert app_logger.propagate is False
    assert len(app_logger.handlers) == 1
