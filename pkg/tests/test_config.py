import pytest

from delicate.config import SEED_ENV, RunConfig, RunConfigError, load_config, parse_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.run.seed == 7 and cfg.distill.temperature == 8.0 and cfg.eval.lr == 3e-5
    assert cfg.model.share_layers is False


def test_parse_typed_values():
    cfg = parse_config("[model]\nshare_layers = yes\nnum_layers = 2\n[distill]\ntemperature = 4.5\n")
    assert cfg.model.share_layers is True and cfg.model.num_layers == 2 and cfg.distill.temperature == 4.5


@pytest.mark.parametrize("text", [
    "[model]\nwidth = 3\n",
    "[nonsense]\nx = 1\n",
    "[model]\nnum_layers = two\n",
    "[model]\nshare_layers = maybe\n",
    "num_layers = 2\n",
])
def test_bad_config_rejected(text):
    with pytest.raises(RunConfigError):
        parse_config(text)


def test_dumps_round_trip():
    cfg = RunConfig()
    cfg.set("paths.corpus", "data/100%.smi")
    cfg.set("distill.use_logits", "false")
    again = parse_config(cfg.dumps())
    assert again == cfg


def test_precedence(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseed = 3\n[pretrain]\nepochs = 4\n")
    assert load_config(path, env={}).run.seed == 3
    assert load_config(path, [("run.seed", "5")], env={}).run.seed == 5
    cfg = load_config(path, [("run.seed", "5")], env={SEED_ENV: "11"})
    assert cfg.run.seed == 11 and cfg.pretrain.epochs == 4


def test_missing_file():
    with pytest.raises(RunConfigError):
        load_config("/nonexistent/run.ini", env={})


def test_override_needs_dot():
    with pytest.raises(RunConfigError):
        RunConfig().set("seed", "1")
