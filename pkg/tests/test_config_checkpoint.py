"""Run-config parsing and binary checkpoint round trips."""

import numpy as np
import pytest

from stfm import checkpoint
from stfm import tensor as T
from stfm import training
from stfm.checkpoint import CheckpointError
from stfm.model import DecoderConfig, EncoderConfig, SetModel
from stfm.rng import Rng
from stfm.runconfig import (ConfigError, load_run_config, parse_kv_text,
                            parse_run_config, resolved_text)

SEED = 5

GOOD_CFG = """\
# comment lines and blank lines are ignored
task = max-regression
encoder = sab,sab
dim = 16
heads = 4
pooling = pma:1
steps = 100
batch_size = 8
lr = 1e-3
seed = 3
"""


class TestRunConfig:
    def test_parse_happy_path(self):
        cfg = parse_run_config(GOOD_CFG)
        assert cfg.task == "max-regression"
        assert cfg.encoder == ("sab", "sab")
        assert cfg.dim == 16 and cfg.heads == 4
        assert cfg.lr == 1e-3 and cfg.seed == 3
        assert cfg.eval_every == 1000  # default fills in

    def test_inline_comments_and_spacing(self):
        kv = parse_kv_text("a = 1  # trailing\n\n  b=2\n")
        assert kv == {"a": "1", "b": "2"}

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="momentum"):
            parse_run_config(GOOD_CFG + "momentum = 0.9\n")

    def test_missing_key_named(self):
        text = "\n".join(l for l in GOOD_CFG.splitlines()
                         if not l.startswith("batch_size"))
        with pytest.raises(ConfigError, match="batch_size"):
            parse_run_config(text)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_run_config(GOOD_CFG + "dim = 32\n")

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="steps"):
            parse_run_config(GOOD_CFG.replace("steps = 100", "steps = many"))

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_kv_text("a = 1\nnot a pair\n")

    def test_seed_override(self):
        assert parse_run_config(GOOD_CFG, seed_override=77).seed == 77

    def test_resolved_text_round_trips(self):
        cfg = parse_run_config(GOOD_CFG)
        again = parse_run_config(resolved_text(cfg))
        assert again == cfg

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(GOOD_CFG)
        assert load_run_config(path).dim == 16

    def test_shipped_presets_parse(self):
        import pathlib
        cfg_dir = pathlib.Path(__file__).resolve().parents[1] / "configs"
        presets = sorted(cfg_dir.glob("*.cfg"))
        assert len(presets) >= 6
        for p in presets:
            load_run_config(p)


def small_model(seed=SEED):
    enc = EncoderConfig(blocks=("sab", "isab:3"), dim=8, heads=2)
    dec = DecoderConfig(pooling="pma:2", post_sabs=1, head=(4, 2))
    return SetModel(2, enc, dec, Rng(seed))


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        model = small_model()
        path = tmp_path / "m.stfm"
        checkpoint.save_checkpoint(model, path)
        loaded = checkpoint.load_checkpoint(path)
        for p1, p2 in zip(model.parameters(), loaded.parameters()):
            assert p1.name == p2.name
            np.testing.assert_array_equal(p1.data, p2.data)
        path2 = tmp_path / "m2.stfm"
        checkpoint.save_checkpoint(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_loaded_model_computes_identically(self, tmp_path):
        model = small_model()
        path = tmp_path / "m.stfm"
        checkpoint.save_checkpoint(model, path)
        loaded = checkpoint.load_checkpoint(path)
        x = Rng(0).normal(0.0, 1.0, size=(7, 2))
        with T.no_grad():
            np.testing.assert_array_equal(model(x).data, loaded(x).data)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "m.stfm"
        checkpoint.save_checkpoint(small_model(), path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointError, match="truncated"):
            checkpoint.load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "m.stfm"
        checkpoint.save_checkpoint(small_model(), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            checkpoint.load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.stfm"
        checkpoint.save_checkpoint(small_model(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            checkpoint.load_checkpoint(path)

    def test_load_into_other_architecture_names_mismatch(self, tmp_path):
        path = tmp_path / "m.stfm"
        checkpoint.save_checkpoint(small_model(), path)
        other = SetModel(2, EncoderConfig(blocks=("rff",), dim=8, heads=2),
                         DecoderConfig(pooling="mean", head=(1,)), Rng(0))
        with pytest.raises(CheckpointError, match="mismatch"):
            checkpoint.load_into(other, path)

    def test_load_into_same_architecture_replaces_weights(self, tmp_path):
        path = tmp_path / "m.stfm"
        trained = small_model(seed=1)
        checkpoint.save_checkpoint(trained, path)
        fresh = small_model(seed=2)
        checkpoint.load_into(fresh, path)
        for p1, p2 in zip(trained.parameters(), fresh.parameters()):
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_same_seed_retraining_yields_identical_bytes(self, tmp_path):
        cfg = training.TrainConfig(
            task=training.TASK_MAX_REGRESSION, encoder=("sab",), dim=8,
            heads=2, steps=15, batch_size=4, eval_every=100, seed=SEED)
        paths = []
        for name in ("a.stfm", "b.stfm"):
            model, _ = training.train_max_regression(cfg)
            path = tmp_path / name
            checkpoint.save_checkpoint(model, path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()
