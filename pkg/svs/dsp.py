"""Signal-processing primitives: resampling, log-mel analysis, F0 tracking, WAV I/O.

All functions are pure. The torch variants (``resample_tensor``, ``log_mel``) are what the
training losses differentiate through; the ``Waveform``-level operations wrap them in float64.
"""

import functools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import librosa
import numpy as np
import torch
import torch.nn.functional as F
import torchaudio.functional as AF
from scipy.io import wavfile

from .config import AudioConfig
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

MEL_FLOOR = 1e-5
F0_MIN_HZ = 40.0
F0_MAX_HZ = 1200.0
VOICING_THRESHOLD = 0.3
RMS_THRESHOLD = 1e-4
# a peak counts as the period only if it is within this fraction of the strongest peak
PEAK_RATIO = 0.9
RESAMPLE_ZERO_CROSSINGS = 32
RESAMPLE_ROLLOFF = 0.99


# ============================================================================
# Domain types
# ============================================================================


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidArgumentError(f"waveform must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise InvalidArgumentError(f"sample rate must be a positive integer: {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("waveform contains NaN or Inf samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_sec(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    values: np.ndarray  # frames x n_mels, natural log of floored mel power
    frame_rate_hz: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class F0Track:
    f0_hz: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if f0.shape != voiced.shape:
            raise InvalidArgumentError("f0_hz and voiced must have the same length")
        if np.any(voiced != (f0 > 0)):
            raise InvalidArgumentError("voiced[t] must be true exactly where f0_hz[t] > 0")
        if np.any((f0[voiced] < F0_MIN_HZ) | (f0[voiced] > F0_MAX_HZ)):
            raise InvalidArgumentError(f"voiced f0 must lie in [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz")
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "voiced", voiced)

    @property
    def n_frames(self) -> int:
        return self.f0_hz.shape[0]

    @classmethod
    def from_f0(cls, f0_hz: np.ndarray) -> "F0Track":
        f0 = np.asarray(f0_hz, dtype=np.float64)
        return cls(f0, f0 > 0)


# ============================================================================
# Framing
# ============================================================================


def frame_count(n_samples: int, hop: int) -> int:
    return -(-n_samples // hop)


def _reflect_indices(n: int, left: int, right: int) -> np.ndarray:
    # np.pad reflects repeatedly when the pad exceeds the signal; a single sample repeats
    return np.pad(np.arange(n), (left, right), mode="reflect")


def frame_signal(
    x: torch.Tensor, frame_length: int, hop: int, pad_mode: str = "reflect"
) -> torch.Tensor:
    """Cut ``(..., N)`` into ``(..., ceil(N / hop), frame_length)`` frames centred on ``t * hop``.

    Reflect padding mirrors repeatedly, so signals shorter than half a frame still frame;
    ``torch.stft(center=True)`` rejects those.
    """
    n = x.shape[-1]
    frames = frame_count(n, hop)
    if n == 0:
        return x.new_zeros(*x.shape[:-1], 0, frame_length)
    half = frame_length // 2
    if pad_mode == "reflect":
        index = torch.from_numpy(_reflect_indices(n, half, half)).to(x.device)
        padded = x[..., index]
    elif pad_mode == "constant":
        padded = F.pad(x, (half, half))
    else:
        raise InvalidArgumentError(f"unknown pad mode {pad_mode!r}")
    return padded.unfold(-1, frame_length, hop)[..., :frames, :]


def _window(n_fft: int, win_length: int, dtype: torch.dtype, device) -> torch.Tensor:
    window = torch.hann_window(win_length, periodic=True, dtype=dtype, device=device)
    left = (n_fft - win_length) // 2
    return F.pad(window, (left, n_fft - win_length - left))


def power_spectrogram(x: torch.Tensor, n_fft: int, hop: int, win_length: int) -> torch.Tensor:
    frames = frame_signal(x, n_fft, hop, pad_mode="reflect")
    spec = torch.fft.rfft(frames * _window(n_fft, win_length, x.dtype, x.device), dim=-1)
    return spec.real**2 + spec.imag**2


# ============================================================================
# Mel analysis
# ============================================================================


@functools.lru_cache(maxsize=16)
def _mel_basis(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    # HTK mel scale, triangles not area-normalized
    return librosa.filters.mel(
        sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=fmin, fmax=fmax, htk=True, norm=None
    ).astype(np.float64)


def mel_basis(cfg: AudioConfig) -> np.ndarray:
    return _mel_basis(cfg.sample_rate_hz, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)


def log_filterbank(
    x: torch.Tensor, basis: np.ndarray, n_fft: int, hop: int, win_length: int
) -> torch.Tensor:
    """``(..., N)`` samples -> ``(..., frames, bands)`` natural-log filterbank energies."""
    power = power_spectrogram(x, n_fft, hop, win_length)
    fb = torch.as_tensor(basis, dtype=power.dtype, device=power.device)
    return torch.log(torch.clamp(power @ fb.T, min=MEL_FLOOR))


def log_mel(x: torch.Tensor, cfg: AudioConfig) -> torch.Tensor:
    return log_filterbank(x, mel_basis(cfg), cfg.n_fft, cfg.hop, cfg.win_length)


def melspectrogram(w: Waveform, cfg: Optional[AudioConfig] = None) -> MelSpectrogram:
    cfg = cfg or AudioConfig()
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise InvalidArgumentError(
            f"waveform rate {w.sample_rate_hz} Hz does not match config rate {cfg.sample_rate_hz} Hz"
        )
    values = log_mel(torch.from_numpy(w.samples), cfg).numpy()
    return MelSpectrogram(values, cfg.frame_rate_hz)


# ============================================================================
# Resampling (Hann-windowed sinc, polyphase)
# ============================================================================


def resampled_length(n_samples: int, source_rate: int, target_rate: int) -> int:
    # round half up, in integers
    return (2 * n_samples * target_rate + source_rate) // (2 * source_rate)


def resample_tensor(x: torch.Tensor, source_rate: int, target_rate: int) -> torch.Tensor:
    """Resample the last axis of ``x`` from ``source_rate`` to ``target_rate``.

    torchaudio's polyphase sinc filter does the work; its ``ceil`` output length is cut back
    to :func:`resampled_length`.
    """
    if source_rate <= 0 or target_rate <= 0:
        raise InvalidArgumentError(f"rates must be positive, got {source_rate} -> {target_rate}")
    if source_rate == target_rate:
        return x.clone()
    n = x.shape[-1]
    target = resampled_length(n, source_rate, target_rate)
    if n == 0:
        return x.new_zeros(*x.shape[:-1], 0)
    out = AF.resample(
        x,
        source_rate,
        target_rate,
        lowpass_filter_width=RESAMPLE_ZERO_CROSSINGS,
        rolloff=RESAMPLE_ROLLOFF,
        resampling_method="sinc_interp_hann",
    )
    return out[..., :target]


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    if target_rate_hz <= 0:
        raise InvalidArgumentError(f"target rate must be positive, got {target_rate_hz}")
    if target_rate_hz == w.sample_rate_hz:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    out = resample_tensor(torch.from_numpy(w.samples), w.sample_rate_hz, target_rate_hz)
    return Waveform(out.numpy(), target_rate_hz)


# ============================================================================
# F0 tracking (normalized autocorrelation + parabolic interpolation)
# ============================================================================


def _normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    width = frames.shape[-1]
    nfft = 1 << (2 * width - 1).bit_length()
    spec = np.fft.rfft(frames, nfft, axis=-1)
    acf = np.fft.irfft(spec * spec.conj(), nfft, axis=-1)[:, : max_lag + 1]

    lags = np.arange(max_lag + 1)
    prefix = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=-1)], axis=-1
    )  # prefix[:, k] = sum of x[n]^2 for n < k
    head = prefix[:, width - lags]
    tail = prefix[:, -1:] - prefix[:, lags]
    denom = np.sqrt(head * tail)
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, acf / safe, 0.0)


def _pick_period(r: np.ndarray, lag_min: int, lag_max: int) -> Tuple[Optional[float], float]:
    """Return (fractional lag, peak value) of the period peak, or (None, 0) if there is none."""
    core = r[lag_min : lag_max + 1]
    rising = core[1:-1] > core[:-2]
    falling = core[1:-1] >= core[2:]
    peaks = np.flatnonzero(rising & falling) + lag_min + 1
    if peaks.size == 0:
        return None, 0.0
    best = r[peaks].max()
    lag = int(peaks[r[peaks] >= PEAK_RATIO * best][0])
    a, b, c = r[lag - 1], r[lag], r[lag + 1]
    curvature = a - 2 * b + c
    delta = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
    return lag + delta, float(b)


def extract_f0(w: Waveform, cfg: Optional[AudioConfig] = None) -> F0Track:
    cfg = cfg or AudioConfig()
    sr = w.sample_rate_hz
    hop = max(1, round(cfg.hop * sr / cfg.sample_rate_hz))
    frame_length = max(2, round(cfg.win_length * sr / cfg.sample_rate_hz))
    lag_min = max(2, int(math.floor(sr / F0_MAX_HZ)))
    lag_max = min(int(math.ceil(sr / F0_MIN_HZ)), frame_length - 2)

    frames = frame_signal(torch.from_numpy(w.samples), frame_length, hop, pad_mode="constant")
    frames = frames.numpy()
    f0 = np.zeros(frames.shape[0])
    if frames.shape[0] == 0 or lag_max <= lag_min + 1:
        return F0Track.from_f0(f0)

    rms = np.sqrt(np.mean(frames**2, axis=-1))
    nccf = _normalized_autocorrelation(frames, lag_max + 1)
    for t in range(frames.shape[0]):
        if rms[t] < RMS_THRESHOLD:
            continue
        lag, peak = _pick_period(nccf[t], lag_min, lag_max)
        if lag is None or peak < VOICING_THRESHOLD:
            continue
        estimate = sr / lag
        if F0_MIN_HZ <= estimate <= F0_MAX_HZ:
            f0[t] = estimate
    return F0Track.from_f0(f0)


# ============================================================================
# WAV I/O (16-bit PCM mono)
# ============================================================================


def read_wav(path: Union[str, Path]) -> Waveform:
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise InvalidArgumentError(f"{path}: unreadable WAV: {exc}") from None
    if data.ndim != 1:
        raise InvalidArgumentError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype != np.int16:
        raise InvalidArgumentError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0, rate)


def write_wav(path: Union[str, Path], w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), w.sample_rate_hz, pcm)
