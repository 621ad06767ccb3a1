import numpy as np
import pytest

from svs.config import ExperimentConfig
from svs.data import make_synthetic_corpus
from svs.dsp import Waveform

# small enough that a training step takes well under a second on CPU
TINY_VALUES = {
    "model.latent_dim": 8,
    "model.hidden_channels": 16,
    "model.decoder_channels": 16,
    "model.speaker_emb_dim": 4,
    "model.dilations": (1, 2),
    "model.disc_channels": 4,
    "model.disc_max_channels": 8,
    "ssl.layers": 4,
    "ssl.dim": 8,
    "train.segment_frames": 8,
    "train.iterations_per_epoch": 2,
    "train.epochs": 1,
    "train.batch_size": 2,
}


def sine(freq_hz: float, seconds: float = 1.0, rate: int = 24000, amplitude: float = 1.0) -> Waveform:
    t = np.arange(int(round(seconds * rate))) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t), rate)


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    return ExperimentConfig.desk().with_values(TINY_VALUES)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Manifest path of the 4-utterance, 2-speaker synthetic corpus (seed 7)."""
    return make_synthetic_corpus(7, 4, 2, tmp_path_factory.mktemp("corpus"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
