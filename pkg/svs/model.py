"""Generator: prior encoder, posterior encoder, reparameterization, decoder, synthesis.

Tensors are batch-first: score and latent sequences are ``B x frames x channels``, waveforms
``B x samples``. Convolutions run channels-first internally.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import weight_norm

from .config import AudioConfig, ModelConfig
from .dsp import Waveform
from .errors import InvalidArgumentError
from .score import N_PITCH_CLASSES, REST_PITCH, FrameScore, MusicScore, length_regulate
from .sslfront import LayerWeights

log = logging.getLogger(__name__)

LRELU_SLOPE = 0.1


# ============================================================================
# Domain types
# ============================================================================


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: torch.Tensor  # B x frames x latent_dim
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise InvalidArgumentError(
                f"mean {tuple(self.mean.shape)} and log_var {tuple(self.log_var.shape)} differ"
            )

    @property
    def n_frames(self) -> int:
        return self.mean.shape[-2]


@dataclass(frozen=True, eq=False)
class LatentSequence:
    z: torch.Tensor  # B x frames x latent_dim

    @property
    def n_frames(self) -> int:
        return self.z.shape[-2]


def crop_frames(x: torch.Tensor, start: torch.Tensor, frames: int) -> torch.Tensor:
    """Per-item crop along axis 1: ``x[b, start[b] : start[b] + frames]``."""
    idx = start.view(-1, 1) + torch.arange(frames, device=x.device).view(1, -1)
    idx = idx.view(*idx.shape, *([1] * (x.dim() - 2))).expand(-1, -1, *x.shape[2:])
    return torch.gather(x, 1, idx)


def reparameterize(p: GaussianParams, noise: torch.Tensor) -> LatentSequence:
    if noise.shape != p.mean.shape:
        raise InvalidArgumentError(
            f"noise shape {tuple(noise.shape)} does not match params {tuple(p.mean.shape)}"
        )
    return LatentSequence(p.mean + torch.exp(0.5 * p.log_var) * noise)


def midi_to_hz_tensor(pitch: torch.Tensor) -> torch.Tensor:
    hz = 440.0 * torch.pow(2.0, (pitch.double() - 69.0) / 12.0)
    return torch.where(pitch == REST_PITCH, torch.zeros_like(hz), hz)


# ============================================================================
# Building blocks
# ============================================================================


class SpeakerTable(nn.Module):
    def __init__(self, n_speakers: int, dim: int):
        super().__init__()
        self.n_speakers = n_speakers
        self.embedding = nn.Embedding(n_speakers, dim)

    def forward(self, speakers: torch.Tensor) -> torch.Tensor:
        if speakers.numel() and (int(speakers.min()) < 0 or int(speakers.max()) >= self.n_speakers):
            raise InvalidArgumentError(
                f"speaker id out of range [0, {self.n_speakers}): {speakers.tolist()}"
            )
        return self.embedding(speakers)


class ResidualConvStack(nn.Module):
    """Dilated residual 1-D convolutions; padding frames are re-zeroed after each layer."""

    def __init__(self, channels: int, kernel_size: int, dilations: Sequence[int]):
        super().__init__()
        self.convs = nn.ModuleList(
            weight_norm(
                nn.Conv1d(channels, channels, kernel_size, dilation=d, padding=d * (kernel_size - 1) // 2)
            )
            for d in dilations
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = (x + conv(F.leaky_relu(x, LRELU_SLOPE))) * mask
        return x


class _GaussianHead(nn.Module):
    def __init__(self, hidden: int, latent_dim: int, clamp: float):
        super().__init__()
        self.latent_dim = latent_dim
        self.clamp = clamp
        self.proj = nn.Conv1d(hidden, 2 * latent_dim, 1)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> GaussianParams:
        stats = self.proj(h) * mask
        mean, log_var = torch.split(stats, self.latent_dim, dim=1)
        log_var = torch.clamp(log_var, -self.clamp, self.clamp)
        return GaussianParams(mean.transpose(1, 2), log_var.transpose(1, 2))


def _frame_mask(mask: Optional[torch.Tensor], batch: int, frames: int, like: torch.Tensor) -> torch.Tensor:
    if mask is None:
        return like.new_ones(batch, 1, frames)
    return mask.to(like.dtype).view(batch, 1, frames)


class PriorEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.phoneme_emb = nn.Embedding(cfg.n_phonemes, cfg.hidden_channels)
        self.pitch_emb = nn.Embedding(N_PITCH_CLASSES, cfg.hidden_channels)
        self.speaker_proj = nn.Linear(cfg.speaker_emb_dim, cfg.hidden_channels)
        self.stack = ResidualConvStack(cfg.hidden_channels, cfg.kernel_size, cfg.dilations)
        self.head = _GaussianHead(cfg.hidden_channels, cfg.latent_dim, cfg.log_var_clamp)

    def forward(
        self,
        phonemes: torch.Tensor,
        pitch: torch.Tensor,
        speaker_vec: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> GaussianParams:
        if phonemes.shape != pitch.shape:
            raise InvalidArgumentError("phoneme and pitch sequences must have equal shape")
        if int(phonemes.max()) >= self.phoneme_emb.num_embeddings or int(phonemes.min()) < 0:
            raise InvalidArgumentError(
                f"phoneme id outside inventory of {self.phoneme_emb.num_embeddings}"
            )
        h = self.phoneme_emb(phonemes) + self.pitch_emb(pitch + 1)  # REST (-1) -> index 0
        h = h + self.speaker_proj(speaker_vec).unsqueeze(1)
        h = h.transpose(1, 2)
        m = _frame_mask(mask, h.shape[0], h.shape[2], h)
        return self.head(self.stack(h * m, m), m)


class PosteriorEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, in_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.pre = nn.Conv1d(in_dim, cfg.hidden_channels, 1)
        self.speaker_proj = nn.Linear(cfg.speaker_emb_dim, cfg.hidden_channels)
        self.stack = ResidualConvStack(cfg.hidden_channels, cfg.kernel_size, cfg.dilations)
        self.head = _GaussianHead(cfg.hidden_channels, cfg.latent_dim, cfg.log_var_clamp)

    def forward(
        self, e: torch.Tensor, speaker_vec: torch.Tensor, mask: Optional[torch.Tensor] = None
    ) -> GaussianParams:
        if e.shape[-1] != self.in_dim:
            raise InvalidArgumentError(f"posterior input has dim {e.shape[-1]}, expected {self.in_dim}")
        x = e.transpose(1, 2)
        m = _frame_mask(mask, x.shape[0], x.shape[2], x)
        h = self.pre(x) + self.speaker_proj(speaker_vec).unsqueeze(2)
        return self.head(self.stack(h * m, m), m)


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel_size: int = 3, dilations: Sequence[int] = (1, 3)):
        super().__init__()
        self.convs1 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel_size, dilation=d, padding=d * (kernel_size - 1) // 2))
            for d in dilations
        )
        self.convs2 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel_size, padding=(kernel_size - 1) // 2))
            for _ in dilations
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for c1, c2 in zip(self.convs1, self.convs2):
            xt = c1(F.leaky_relu(x, LRELU_SLOPE))
            x = x + c2(F.leaky_relu(xt, LRELU_SLOPE))
        return x


def _upsample_layer(c_in: int, c_out: int, u: int) -> nn.Module:
    # output length is exactly input * u
    if u % 2 == 0:
        return weight_norm(nn.ConvTranspose1d(c_in, c_out, 2 * u, stride=u, padding=u // 2))
    return weight_norm(nn.ConvTranspose1d(c_in, c_out, u, stride=u))


class Decoder(nn.Module):
    """Transposed-convolution upsampler with a sine excitation injected at every resolution."""

    def __init__(self, cfg: ModelConfig, audio: AudioConfig):
        super().__init__()
        self.hop = cfg.upsample_factor
        self.sample_rate_hz = audio.sample_rate_hz
        self.amplitude = cfg.excitation_amplitude
        ch = cfg.decoder_channels
        self.conv_pre = weight_norm(nn.Conv1d(cfg.latent_dim + cfg.speaker_emb_dim, ch, 7, padding=3))
        self.source_pre = nn.Conv1d(1, ch, self.hop, stride=self.hop)

        self.ups = nn.ModuleList()
        self.sources = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        factor = 1
        for i, u in enumerate(cfg.upsample_rates):
            c_in, c_out = max(ch >> i, 1), max(ch >> (i + 1), 1)
            factor *= u
            stride = self.hop // factor
            self.ups.append(_upsample_layer(c_in, c_out, u))
            self.sources.append(nn.Conv1d(1, c_out, stride, stride=stride))
            self.resblocks.append(ResBlock(c_out))
        self.conv_post = weight_norm(nn.Conv1d(c_out, 1, 7, padding=3))

    def excitation(self, pitch: torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
        """``B x frames`` MIDI pitch -> ``B x 1 x frames*hop`` sine, zero on rests."""
        f0 = torch.repeat_interleave(midi_to_hz_tensor(pitch), self.hop, dim=1)
        phase = torch.remainder(torch.cumsum(f0 / self.sample_rate_hz, dim=1), 1.0)
        sine = self.amplitude * torch.sin(2 * np.pi * phase) * (f0 > 0)
        return sine.to(dtype).unsqueeze(1)

    def forward(self, z: torch.Tensor, speaker_vec: torch.Tensor, pitch: torch.Tensor) -> torch.Tensor:
        if z.shape[:2] != pitch.shape:
            raise InvalidArgumentError(
                f"latent has {z.shape[1]} frames but pitch sequence has {pitch.shape[-1]}"
            )
        frames = z.shape[1]
        spk = speaker_vec.unsqueeze(1).expand(-1, frames, -1)
        x = self.conv_pre(torch.cat([z, spk], dim=-1).transpose(1, 2))
        source = self.excitation(pitch, x.dtype)
        x = x + self.source_pre(source)
        for up, src, block in zip(self.ups, self.sources, self.resblocks):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            x = block(x + src(source))
        x = self.conv_post(F.leaky_relu(x))
        return torch.tanh(x).squeeze(1)


# ============================================================================
# Full generator
# ============================================================================


class SVSModel(nn.Module):
    def __init__(
        self, cfg: ModelConfig, audio: AudioConfig, ssl_layers: int = 1, ssl_dim: int = 0
    ):
        super().__init__()
        if cfg.upsample_factor != audio.hop:
            raise InvalidArgumentError(
                f"upsample factor {cfg.upsample_factor} must equal hop {audio.hop}"
            )
        self.cfg = cfg
        self.audio = audio
        self.fused = cfg.posterior_input == "fused"
        if self.fused and ssl_dim < 1:
            raise InvalidArgumentError("fused posterior input needs the provider dimension D")
        self.speakers = SpeakerTable(cfg.n_speakers, cfg.speaker_emb_dim)
        self.prior = PriorEncoder(cfg)
        self.posterior = PosteriorEncoder(cfg, audio.n_mels + (ssl_dim if self.fused else 0))
        self.decoder = Decoder(cfg, audio)
        self.layer_weights = LayerWeights(ssl_layers) if self.fused else None

    def encode_prior(
        self,
        phonemes: torch.Tensor,
        pitch: torch.Tensor,
        speakers: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> GaussianParams:
        return self.prior(phonemes, pitch, self.speakers(speakers), mask)

    def encode_posterior(
        self, e: torch.Tensor, speakers: torch.Tensor, mask: Optional[torch.Tensor] = None
    ) -> GaussianParams:
        return self.posterior(e, self.speakers(speakers), mask)

    def decode(self, z: torch.Tensor, speakers: torch.Tensor, pitch: torch.Tensor) -> torch.Tensor:
        return self.decoder(z, self.speakers(speakers), pitch)


# ============================================================================
# Single-utterance operations
# ============================================================================


def _frame_tensors(fs: FrameScore):
    phonemes = torch.from_numpy(fs.phoneme_per_frame).long().unsqueeze(0)
    pitch = torch.from_numpy(fs.pitch_per_frame).long().unsqueeze(0)
    return phonemes, pitch


def encode_prior(model: SVSModel, fs: FrameScore, speaker: int) -> GaussianParams:
    phonemes, pitch = _frame_tensors(fs)
    return model.encode_prior(phonemes, pitch, torch.tensor([speaker]))


def synthesize(
    model: SVSModel, score: MusicScore, speaker: int, seed: int, noise_scale: float = 1.0
) -> Waveform:
    """Score -> waveform through the prior path only; bit-identical for a fixed seed."""
    if noise_scale < 0:
        raise InvalidArgumentError(f"noise scale must be >= 0, got {noise_scale}")
    fs = length_regulate(score, model.audio.frame_rate_hz)
    phonemes, pitch = _frame_tensors(fs)
    speakers = torch.tensor([speaker])
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            prior = model.encode_prior(phonemes, pitch, speakers)
            gen = torch.Generator().manual_seed(seed)
            noise = torch.randn(prior.mean.shape, generator=gen, dtype=prior.mean.dtype)
            z = reparameterize(prior, noise * noise_scale)
            audio = model.decode(z.z, speakers, pitch)[0]
    finally:
        model.train(was_training)
    log.debug("synthesized %s: %d frames, %d samples", score.utterance_id, fs.n_frames, audio.shape[0])
    return Waveform(audio.double().numpy(), model.audio.sample_rate_hz)
