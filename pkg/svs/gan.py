"""Discriminators (multi-resolution spectrogram, multi-period, multi-scale) and every loss term.

Waveform inputs are ``B x samples`` tensors. Each family returns a ``DiscriminatorOutput``
holding one score map per sub-discriminator and that sub-discriminator's intermediate
activations (for feature matching).
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import weight_norm

from .config import AudioConfig, LossConfig, ModelConfig
from .dsp import log_mel
from .errors import InvalidArgumentError
from .model import LRELU_SLOPE, GaussianParams

FAMILIES = ("mrsd", "mpd", "msd")


@dataclass
class DiscriminatorOutput:
    score_maps: List[torch.Tensor]
    feature_maps: List[List[torch.Tensor]]


def _padding(kernel_size: int, dilation: int = 1) -> int:
    return (kernel_size * dilation - dilation) // 2


def _widths(base: int, cap: int, n: int, growth: int) -> List[int]:
    return [min(base * growth**i, cap) for i in range(n)]


# ============================================================================
# Multi-resolution spectrogram discriminator
# ============================================================================


class SpectrogramDiscriminator(nn.Module):
    def __init__(self, n_fft: int, channels: int):
        super().__init__()
        self.n_fft = n_fft
        self.hop = n_fft // 4
        self.register_buffer("window", torch.hann_window(n_fft), persistent=False)
        self.convs = nn.ModuleList(
            [
                weight_norm(nn.Conv2d(1, channels, (3, 9), padding=(1, 4))),
                weight_norm(nn.Conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4))),
                weight_norm(nn.Conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4))),
                weight_norm(nn.Conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4))),
                weight_norm(nn.Conv2d(channels, channels, (3, 3), padding=(1, 1))),
            ]
        )
        self.conv_post = weight_norm(nn.Conv2d(channels, 1, (3, 3), padding=(1, 1)))

    def magnitude(self, y: torch.Tensor) -> torch.Tensor:
        spec = torch.stft(
            y,
            self.n_fft,
            hop_length=self.hop,
            window=self.window.to(y.dtype),
            center=True,
            pad_mode="reflect",
            return_complex=True,
        )
        power = torch.view_as_real(spec).pow(2).sum(-1)
        # time on the height axis, frequency on the width axis
        return torch.sqrt(power + 1e-9).transpose(1, 2).unsqueeze(1)

    def forward(self, y: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        x = self.magnitude(y)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        x = self.conv_post(x)
        features.append(x)
        return torch.flatten(x, 1), features


# ============================================================================
# Multi-period discriminator
# ============================================================================


def fold_by_period(y: torch.Tensor, period: int) -> torch.Tensor:
    """``B x T`` -> ``B x 1 x ceil(T/period) x period``, reflect-padding the tail."""
    b, t = y.shape
    if t % period:
        n_pad = period - t % period
        y = F.pad(y.unsqueeze(1), (0, n_pad), "reflect").squeeze(1)
        t += n_pad
    return y.view(b, 1, t // period, period)


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: int, max_channels: int, kernel_size: int = 5, stride: int = 3):
        super().__init__()
        self.period = period
        widths = _widths(channels, max_channels, 4, 4)
        c_in = [1] + widths
        pad = (_padding(kernel_size), 0)
        self.convs = nn.ModuleList(
            [
                weight_norm(nn.Conv2d(c_in[i], widths[i], (kernel_size, 1), (stride, 1), padding=pad))
                for i in range(4)
            ]
            + [weight_norm(nn.Conv2d(widths[-1], widths[-1], (kernel_size, 1), 1, padding=pad))]
        )
        self.conv_post = weight_norm(nn.Conv2d(widths[-1], 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, y: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        x = fold_by_period(y, self.period)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        x = self.conv_post(x)
        features.append(x)
        return torch.flatten(x, 1), features


# ============================================================================
# Multi-scale discriminator
# ============================================================================


class ScaleDiscriminator(nn.Module):
    def __init__(self, channels: int, max_channels: int):
        super().__init__()
        w = _widths(channels, max_channels, 4, 2)
        self.convs = nn.ModuleList(
            [
                weight_norm(nn.Conv1d(1, w[0], 15, 1, padding=7)),
                weight_norm(nn.Conv1d(w[0], w[1], 41, 4, padding=20)),
                weight_norm(nn.Conv1d(w[1], w[2], 41, 4, padding=20)),
                weight_norm(nn.Conv1d(w[2], w[3], 41, 4, padding=20)),
                weight_norm(nn.Conv1d(w[3], w[3], 5, 1, padding=2)),
            ]
        )
        self.conv_post = weight_norm(nn.Conv1d(w[3], 1, 3, 1, padding=1))

    def forward(self, y: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        x = y.unsqueeze(1)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        x = self.conv_post(x)
        features.append(x)
        return torch.flatten(x, 1), features


# ============================================================================
# Bundle
# ============================================================================


class Discriminators(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fft_sizes = tuple(cfg.mrsd_fft_sizes)
        self.spectrogram_discs = nn.ModuleList(
            SpectrogramDiscriminator(n, cfg.disc_channels) for n in cfg.mrsd_fft_sizes
        )
        self.period_discs = nn.ModuleList(
            PeriodDiscriminator(p, cfg.disc_channels, cfg.disc_max_channels) for p in cfg.mpd_periods
        )
        self.scale_discs = nn.ModuleList(
            ScaleDiscriminator(cfg.disc_channels, cfg.disc_max_channels) for _ in range(cfg.msd_scales)
        )
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def min_samples(self) -> int:
        return max(self.fft_sizes + tuple(d.period for d in self.period_discs))

    def _check(self, y: torch.Tensor) -> None:
        if y.dim() != 2:
            raise InvalidArgumentError(f"expected B x samples waveform batch, got {tuple(y.shape)}")
        if y.shape[1] < self.min_samples():
            raise InvalidArgumentError(
                f"{y.shape[1]} samples is shorter than one frame at the largest resolution "
                f"({self.min_samples()})"
            )

    @staticmethod
    def _run(discs, inputs) -> DiscriminatorOutput:
        scores, features = [], []
        for disc, x in zip(discs, inputs):
            s, f = disc(x)
            scores.append(s)
            features.append(f)
        return DiscriminatorOutput(scores, features)

    def mrsd(self, y: torch.Tensor) -> DiscriminatorOutput:
        self._check(y)
        return self._run(self.spectrogram_discs, [y] * len(self.spectrogram_discs))

    def mpd(self, y: torch.Tensor) -> DiscriminatorOutput:
        self._check(y)
        return self._run(self.period_discs, [y] * len(self.period_discs))

    def msd(self, y: torch.Tensor) -> DiscriminatorOutput:
        self._check(y)
        inputs = [y]
        for _ in range(len(self.scale_discs) - 1):
            inputs.append(self.pool(inputs[-1].unsqueeze(1)).squeeze(1))
        return self._run(self.scale_discs, inputs)

    def forward(self, y: torch.Tensor) -> Dict[str, DiscriminatorOutput]:
        return {"mrsd": self.mrsd(y), "mpd": self.mpd(y), "msd": self.msd(y)}


# ============================================================================
# Losses
# ============================================================================


def _check_structure(a: DiscriminatorOutput, b: DiscriminatorOutput) -> None:
    if len(a.score_maps) != len(b.score_maps) or len(a.feature_maps) != len(b.feature_maps):
        raise InvalidArgumentError("discriminator outputs come from different families")
    for fa, fb in zip(a.feature_maps, b.feature_maps):
        if len(fa) != len(fb):
            raise InvalidArgumentError("discriminator outputs have different layer counts")


def _as_list(out) -> List[DiscriminatorOutput]:
    if isinstance(out, dict):
        return [out[k] for k in FAMILIES if k in out]
    if isinstance(out, DiscriminatorOutput):
        return [out]
    return list(out)


def discriminator_adv_loss(real_out, fake_out) -> torch.Tensor:
    real, fake = _as_list(real_out), _as_list(fake_out)
    if len(real) != len(fake):
        raise InvalidArgumentError("real and fake outputs cover different families")
    loss = 0.0
    for r, f in zip(real, fake):
        _check_structure(r, f)
        for sr, sf in zip(r.score_maps, f.score_maps):
            loss = loss + torch.mean((sr - 1) ** 2) + torch.mean(sf**2)
    return loss


def generator_adv_loss(fake_out) -> torch.Tensor:
    loss = 0.0
    for f in _as_list(fake_out):
        for sf in f.score_maps:
            loss = loss + torch.mean((sf - 1) ** 2)
    return loss


def adversarial_losses(real_out, fake_out) -> Tuple[torch.Tensor, torch.Tensor]:
    """Least-squares objectives ``(adv_d, adv_g)``."""
    return discriminator_adv_loss(real_out, fake_out), generator_adv_loss(fake_out)


def feature_matching(real_out, fake_out) -> torch.Tensor:
    """Mean over paired feature maps of the mean absolute difference (real side detached)."""
    real, fake = _as_list(real_out), _as_list(fake_out)
    if len(real) != len(fake):
        raise InvalidArgumentError("real and fake outputs cover different families")
    terms = []
    for r, f in zip(real, fake):
        _check_structure(r, f)
        for fr, ff in zip(r.feature_maps, f.feature_maps):
            for a, b in zip(fr, ff):
                terms.append(torch.mean(torch.abs(a.detach() - b)))
    return torch.stack(terms).mean()


def mel_l1(y_hat: torch.Tensor, y: torch.Tensor, cfg: AudioConfig) -> torch.Tensor:
    if y_hat.shape != y.shape:
        raise InvalidArgumentError(f"waveform shapes differ: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    return torch.mean(torch.abs(log_mel(y_hat, cfg) - log_mel(y, cfg)))


def kl_loss(
    post: GaussianParams, prior: GaussianParams, mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """KL(q_post || q_prior) for diagonal Gaussians.

    Averaged over frames and dims of each utterance (only frames where ``mask`` is set), then
    over the batch.
    """
    if post.mean.shape != prior.mean.shape:
        raise InvalidArgumentError(
            f"posterior {tuple(post.mean.shape)} and prior {tuple(prior.mean.shape)} differ"
        )
    kl = (
        0.5 * (prior.log_var - post.log_var)
        + (torch.exp(post.log_var) + (post.mean - prior.mean) ** 2) / (2 * torch.exp(prior.log_var))
        - 0.5
    )
    if mask is None:
        return kl.mean()
    mask = mask.to(kl.dtype)
    if kl.dim() == 2:
        kl = kl.unsqueeze(0)
        mask = mask.view(1, -1)
    per_item = (kl * mask.unsqueeze(-1)).sum(dim=(1, 2)) / (mask.sum(dim=1) * kl.shape[-1])
    return per_item.mean()


@dataclass
class LossBreakdown:
    kl: float
    mel_l1: float
    adv_g: float
    adv_d: float
    feat_match: float
    total_g: float
    total_d: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "kl": self.kl,
            "mel_l1": self.mel_l1,
            "adv_g": self.adv_g,
            "adv_d": self.adv_d,
            "feat_match": self.feat_match,
            "total_g": self.total_g,
            "total_d": self.total_d,
        }


def compose_generator_loss(
    kl: torch.Tensor,
    mel: torch.Tensor,
    adv_g: torch.Tensor,
    fm: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    total = cfg.lambda_kl * kl + cfg.lambda_mel * mel
    if cfg.adversarial:
        total = total + adv_g + cfg.lambda_fm * fm
    return total

