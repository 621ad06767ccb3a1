import numpy as np
import pytest
import torch

from svs.config import AudioConfig, LossConfig, ModelConfig
from svs.errors import InvalidArgumentError
from svs.gan import (
    DiscriminatorOutput,
    Discriminators,
    adversarial_losses,
    compose_generator_loss,
    discriminator_adv_loss,
    feature_matching,
    fold_by_period,
    generator_adv_loss,
    kl_loss,
    mel_l1,
)
from svs.model import GaussianParams


@pytest.fixture(scope="module")
def discs():
    torch.manual_seed(0)
    return Discriminators(ModelConfig())


def gaussian(mean, log_var):
    t = lambda v: torch.as_tensor(v, dtype=torch.float64).view(1, 1, -1)  # noqa: E731
    return GaussianParams(t(mean), t(log_var))


# ============================================================================
# KL
# ============================================================================


def test_kl_identical_is_zero():
    p = GaussianParams(torch.randn(2, 7, 4, dtype=torch.float64), torch.randn(2, 7, 4, dtype=torch.float64))
    assert abs(float(kl_loss(p, p))) <= 1e-9


def test_kl_unit_shift():
    assert float(kl_loss(gaussian([1.0], [0.0]), gaussian([0.0], [0.0]))) == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    gen = torch.Generator().manual_seed(5)
    for _ in range(20):
        mq, mp = torch.rand(2, generator=gen, dtype=torch.float64) * 2 - 1
        lq, lp = torch.rand(2, generator=gen, dtype=torch.float64) * 2 - 1
        closed = float(kl_loss(gaussian([mq], [lq]), gaussian([mp], [lp])))

        sq, sp = torch.exp(0.5 * lq), torch.exp(0.5 * lp)
        x = mq + sq * torch.randn(1_000_000, generator=gen, dtype=torch.float64)
        log_q = -0.5 * ((x - mq) / sq) ** 2 - torch.log(sq)
        log_p = -0.5 * ((x - mp) / sp) ** 2 - torch.log(sp)
        assert abs(closed - float((log_q - log_p).mean())) <= 1e-2


def test_kl_non_negative_and_zero_only_when_equal():
    gen = torch.Generator().manual_seed(9)
    for _ in range(50):
        a = GaussianParams(torch.randn(1, 3, 2, generator=gen), torch.randn(1, 3, 2, generator=gen))
        b = GaussianParams(torch.randn(1, 3, 2, generator=gen), torch.randn(1, 3, 2, generator=gen))
        assert float(kl_loss(a, b)) >= -1e-9
        assert float(kl_loss(a, b)) > 1e-7


def test_kl_masked_mean_ignores_padding():
    post = GaussianParams(torch.randn(1, 4, 2, dtype=torch.float64), torch.randn(1, 4, 2, dtype=torch.float64))
    prior = GaussianParams(torch.randn(1, 4, 2, dtype=torch.float64), torch.randn(1, 4, 2, dtype=torch.float64))
    pad = lambda t: torch.cat([t, torch.full((1, 3, 2), 7.0, dtype=t.dtype)], dim=1)  # noqa: E731
    padded = kl_loss(
        GaussianParams(pad(post.mean), pad(post.log_var)),
        GaussianParams(pad(prior.mean), torch.cat([prior.log_var, torch.zeros(1, 3, 2, dtype=torch.float64)], 1)),
        torch.tensor([[True] * 4 + [False] * 3]),
    )
    torch.testing.assert_close(padded, kl_loss(post, prior))


def test_kl_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        kl_loss(gaussian([0.0, 1.0], [0.0, 0.0]), gaussian([0.0], [0.0]))


# ============================================================================
# Discriminators
# ============================================================================


def test_family_structure_and_determinism(discs):
    y = torch.randn(1, 24000) * 0.1
    with torch.no_grad():
        a, b = discs(y), discs(y)
    assert len(a["mrsd"].score_maps) == 3
    assert len(a["mpd"].score_maps) == 5
    assert len(a["msd"].score_maps) == 3
    for family in a:
        for s1, s2 in zip(a[family].score_maps, b[family].score_maps):
            assert torch.isfinite(s1).all()
            torch.testing.assert_close(s1, s2, rtol=0, atol=0)


def test_period_fold():
    assert fold_by_period(torch.zeros(1, 24000), 2).shape == (1, 1, 12000, 2)
    assert fold_by_period(torch.zeros(1, 24001), 2).shape == (1, 1, 12001, 2)


def test_too_short_for_largest_resolution(discs):
    with pytest.raises(InvalidArgumentError):
        discs.mrsd(torch.zeros(1, 1000))
    with pytest.raises(InvalidArgumentError):
        discs.msd(torch.zeros(1000))


# ============================================================================
# Adversarial + reconstruction losses
# ============================================================================


def output(*values):
    maps = [torch.full((1, 4), v) for v in values]
    return DiscriminatorOutput(maps, [[m] for m in maps])


def test_perfect_discriminator_and_fooled_discriminator():
    adv_d, adv_g = adversarial_losses(output(1.0, 1.0), output(0.0, 0.0))
    assert float(adv_d) == 0.0
    assert float(adv_g) == pytest.approx(2.0)
    assert float(generator_adv_loss(output(1.0, 1.0))) == 0.0


def test_least_squares_values():
    assert float(discriminator_adv_loss(output(0.5), output(0.5))) == pytest.approx(0.5)


def test_structure_mismatch():
    with pytest.raises(InvalidArgumentError):
        discriminator_adv_loss(output(1.0), output(1.0, 0.0))
    with pytest.raises(InvalidArgumentError):
        feature_matching({"mpd": output(1.0)}, {"mpd": output(1.0), "msd": output(0.0)})


def test_identical_audio_has_zero_reconstruction_losses(discs):
    y = torch.randn(1, 4800) * 0.1
    assert float(mel_l1(y, y.clone(), AudioConfig())) == 0.0
    with torch.no_grad():
        assert float(feature_matching(discs(y), discs(y))) == 0.0


def test_feature_matching_does_not_train_on_real_side(discs):
    y = torch.randn(1, 4800) * 0.1
    y_hat = (torch.randn(1, 4800) * 0.1).requires_grad_()
    real = discs(y.requires_grad_())
    feature_matching(real, discs(y_hat)).backward()
    assert y_hat.grad is not None and float(y_hat.grad.abs().sum()) > 0
    assert y.grad is None


def test_loss_composition():
    kl, mel, adv, fm = (torch.tensor(v) for v in (0.3, 2.0, 5.0, 7.0))
    only_kl = LossConfig(lambda_kl=1.5, lambda_mel=0.0, lambda_fm=0.0, adversarial=False)
    assert float(compose_generator_loss(kl, mel, adv, fm, only_kl)) == pytest.approx(0.45)
    full = compose_generator_loss(kl, mel, adv, fm, LossConfig())
    assert float(full) == pytest.approx(0.3 + 45 * 2.0 + 5.0 + 2 * 7.0)


def test_mel_l1_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        mel_l1(torch.zeros(1, 480), torch.zeros(1, 960), AudioConfig())


def test_mel_l1_positive_for_different_audio():
    rng = np.random.default_rng(0)
    a, b = (torch.from_numpy(rng.standard_normal((1, 4800)) * 0.1) for _ in range(2))
    assert float(mel_l1(a, b, AudioConfig())) > 0
