import inspect

import numpy as np
import pytest
import torch

from svs.config import AudioConfig, ModelConfig
from svs.errors import InvalidArgumentError
from svs.model import (
    GaussianParams,
    SVSModel,
    crop_frames,
    encode_prior,
    reparameterize,
    synthesize,
)
from svs.score import FrameScore, MusicScore, ScoreEvent, length_regulate


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return SVSModel(ModelConfig(n_speakers=2, n_phonemes=4), AudioConfig(), ssl_layers=4, ssl_dim=8).eval()


def frame_score(n=50, pitch=60):
    return FrameScore(np.ones(n, dtype=np.int64), np.full(n, pitch, dtype=np.int64))


def one_second_score():
    return MusicScore("s", (ScoreEvent(1, 60, 0.5), ScoreEvent(2, 64, 0.3), ScoreEvent(0, -1, 0.2)))


# ============================================================================
# Prior / posterior
# ============================================================================


def test_prior_shapes_and_determinism(model):
    with torch.no_grad():
        a = encode_prior(model, frame_score(), 0)
        b = encode_prior(model, frame_score(), 0)
    assert a.mean.shape == (1, 50, 32) and a.log_var.shape == (1, 50, 32)
    torch.testing.assert_close(a.mean, b.mean, rtol=0, atol=0)


def test_prior_depends_on_speaker(model):
    with torch.no_grad():
        a = encode_prior(model, frame_score(), 0)
        b = encode_prior(model, frame_score(), 1)
    assert not torch.equal(a.mean, b.mean)


def test_unknown_speaker_and_phoneme(model):
    with pytest.raises(InvalidArgumentError):
        encode_prior(model, frame_score(), 2)
    bad = FrameScore(np.full(5, 9, dtype=np.int64), np.full(5, 60, dtype=np.int64))
    with pytest.raises(InvalidArgumentError):
        encode_prior(model, bad, 0)


def test_posterior_on_full_size_fused_input():
    cfg = ModelConfig(n_speakers=1, n_phonemes=2)
    big = SVSModel(cfg, AudioConfig(), ssl_layers=25, ssl_dim=1024)
    with torch.no_grad():
        p = big.encode_posterior(torch.randn(1, 50, 1104), torch.tensor([0]))
    assert p.mean.shape == (1, 50, 32)


def test_posterior_preserves_frames(model):
    with torch.no_grad():
        for frames in (49, 50):
            p = model.encode_posterior(torch.randn(1, frames, 88), torch.tensor([1]))
            assert p.n_frames == frames


def test_zeroed_projection_gives_bias(model):
    cfg = ModelConfig(n_speakers=1, n_phonemes=2)
    m = SVSModel(cfg, AudioConfig(), ssl_layers=4, ssl_dim=8)
    proj = m.posterior.head.proj
    with torch.no_grad():
        proj.weight.zero_()
        p = m.encode_posterior(torch.randn(1, 50, 88), torch.tensor([0]))
    expected = proj.bias[: cfg.latent_dim].detach().expand(1, 50, -1)
    torch.testing.assert_close(p.mean, expected)


def test_posterior_rejects_wrong_dim(model):
    with pytest.raises(InvalidArgumentError):
        model.encode_posterior(torch.randn(1, 50, 80), torch.tensor([0]))


def test_mel_only_posterior_has_no_layer_weights():
    m = SVSModel(ModelConfig(posterior_input="mel"), AudioConfig())
    assert m.layer_weights is None
    assert m.posterior.in_dim == 80


# ============================================================================
# Reparameterization
# ============================================================================


def test_reparameterize_cases():
    mean = torch.randn(1, 5, 3)
    zero = torch.zeros(1, 5, 3)
    n = torch.randn(1, 5, 3)
    torch.testing.assert_close(reparameterize(GaussianParams(mean, zero), zero).z, mean)
    torch.testing.assert_close(reparameterize(GaussianParams(mean, zero), n).z - mean, n)
    log_var = torch.full((1, 5, 3), 2 * np.log(2.0))
    torch.testing.assert_close(reparameterize(GaussianParams(mean, log_var), n).z - mean, 2 * n)
    with pytest.raises(InvalidArgumentError):
        reparameterize(GaussianParams(mean, zero), torch.zeros(1, 4, 3))


def test_crop_frames_per_item():
    x = torch.arange(2 * 6).view(2, 6)
    out = crop_frames(x, torch.tensor([0, 3]), 2)
    assert out.tolist() == [[0, 1], [9, 10]]


# ============================================================================
# Decoder + synthesis
# ============================================================================


def test_decode_length_bounds_and_determinism(model):
    z = torch.randn(1, 50, 32)
    pitch = torch.full((1, 50), 60)
    with torch.no_grad():
        a = model.decode(z, torch.tensor([0]), pitch)
        b = model.decode(z, torch.tensor([0]), pitch)
    assert a.shape == (1, 24000)
    assert float(a.abs().max()) <= 1.0
    torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_decode_length_mismatch(model):
    with pytest.raises(InvalidArgumentError):
        model.decode(torch.randn(1, 50, 32), torch.tensor([0]), torch.full((1, 49), 60))


def test_excitation_is_silent_on_rests(model):
    pitch = torch.tensor([[60, -1]])
    source = model.decoder.excitation(pitch, torch.float32)
    assert source.shape == (1, 1, 960)
    assert torch.all(source[0, 0, 480:] == 0)
    assert float(source[0, 0, :480].abs().max()) > 0


def test_synthesize_length_and_seed(model):
    score = one_second_score()
    a = synthesize(model, score, 0, seed=11)
    b = synthesize(model, score, 0, seed=11)
    c = synthesize(model, score, 0, seed=12)
    assert len(a) == 24000 and a.sample_rate_hz == 24000
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.any(a.samples != c.samples)


def test_shape_chain():
    m = SVSModel(ModelConfig(n_speakers=1, n_phonemes=2, decoder_channels=16), AudioConfig(), 4, 8)
    score = MusicScore("s", tuple(ScoreEvent(1, 62, d) for d in (0.03, 0.03, 0.04)))
    fs = length_regulate(score, 50.0)
    assert len(synthesize(m, score, 0, seed=0)) == fs.n_frames * 480


def test_synthesis_takes_no_audio_or_provider():
    params = set(inspect.signature(synthesize).parameters)
    assert params == {"model", "score", "speaker", "seed", "noise_scale"}


def test_synthesize_restores_training_flag(model):
    model.train()
    synthesize(model, one_second_score(), 0, seed=0)
    assert model.training
    model.eval()


def test_gradients_reach_every_generator_part():
    torch.manual_seed(1)
    m = SVSModel(ModelConfig(n_speakers=2, n_phonemes=3, decoder_channels=16), AudioConfig(), 3, 4)
    phonemes = torch.randint(0, 3, (2, 6))
    pitch = torch.randint(55, 70, (2, 6))
    speakers = torch.tensor([0, 1])
    stacks = torch.randn(2, 3, 6, 4)
    e = torch.cat([m.layer_weights(stacks), torch.randn(2, 6, 80)], dim=-1)
    prior = m.encode_prior(phonemes, pitch, speakers)
    post = m.encode_posterior(e, speakers)
    z = reparameterize(post, torch.randn(2, 6, 32))
    y = m.decode(z.z, speakers, pitch)
    loss = ((post.mean - prior.mean) ** 2).mean() + post.log_var.mean() + (y**2).mean()
    loss.backward()
    for part in (m.prior, m.posterior, m.decoder, m.speakers, m.layer_weights):
        grads = [p.grad for p in part.parameters() if p.grad is not None]
        assert grads and any(float(g.abs().sum()) > 0 for g in grads)
