import pytest

from svs.config import ExperimentConfig, load_config, parse_value
from svs.errors import InvalidArgumentError


def test_desk_defaults():
    cfg = ExperimentConfig.desk()
    assert cfg.audio.sample_rate_hz == 24000
    assert cfg.audio.hop == 480
    assert cfg.audio.frame_rate_hz == 50.0
    assert cfg.model.upsample_factor == 480
    assert cfg.train.epochs == 5 and cfg.train.iterations_per_epoch == 100
    assert cfg.loss.lambda_mel == 45.0 and cfg.loss.lambda_fm == 2.0 and cfg.loss.lambda_kl == 1.0


def test_full_preset_is_full_size():
    cfg = ExperimentConfig.preset("full")
    assert cfg.train.epochs == 200 and cfg.train.iterations_per_epoch == 1000
    assert cfg.ssl.provider == "external" and cfg.ssl.dim == 1024
    assert cfg.train.lr_gamma == 0.998


def test_unknown_preset():
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig.preset("huge")


def test_text_round_trip():
    cfg = ExperimentConfig.desk().with_values({"model.dilations": "1, 3", "train.seed": "99"})
    again = ExperimentConfig.from_lines(cfg.to_lines())
    assert again == cfg
    assert again.model.dilations == (1, 3)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# desk run\npreset = desk\ntrain.epochs = 3\nloss.adversarial = false\n", encoding="utf-8"
    )
    cfg = load_config(path, {"train.epochs": "7"})
    assert cfg.train.epochs == 7
    assert cfg.loss.adversarial is False


def test_bad_key_names_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("train.epochs = 3\nnonsense\n", encoding="utf-8")
    with pytest.raises(InvalidArgumentError, match=":2:"):
        load_config(path)


@pytest.mark.parametrize(
    "values",
    [
        {"train.lr": "0"},
        {"train.lr_gamma": "1.5"},
        {"train.betas": "0.8, 1.0"},
        {"audio.hop": "4096"},
        {"model.posterior_input": "wavlm"},
        {"model.upsample_rates": "8, 6, 5"},
        {"train.nope": "1"},
    ],
)
def test_invalid_values_rejected(values):
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig.desk().with_values(values)


def test_parse_value_errors():
    with pytest.raises(InvalidArgumentError):
        parse_value("maybe", bool, "loss.adversarial")
    assert parse_value("yes", bool) is True
