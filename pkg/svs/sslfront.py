"""SSL feature front-end: layer stacks, learnable weighted sum, alignment, and mel fusion.

A ``FeatureProvider`` turns a waveform at its required input rate into an ``L x frames x D``
stack of hidden states. ``LayerWeights`` collapses the stack with softmax-normalized learnable
weights, ``align_frames`` puts the result on the mel frame grid, and ``fuse`` concatenates it
with the log-mel matrix to form the posterior-encoder input.

Providers are frozen: stacks are numpy arrays and never carry gradients. Only the layer-weight
logits train.
"""

import abc
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import SSLConfig
from .dsp import MelSpectrogram, Waveform, _mel_basis, log_filterbank, resample
from .errors import FeatureFormatError, InvalidArgumentError, InvariantViolationError

log = logging.getLogger(__name__)

# stacks whose frame counts differ by at most this many frames are truncated, not interpolated
TRUNCATE_TOLERANCE = 2

_HEADER_DTYPE = np.dtype([("L", "<i4"), ("frames", "<i4"), ("D", "<i4"), ("frame_rate", "<f4")])


# ============================================================================
# Domain types
# ============================================================================


@dataclass(frozen=True, eq=False)
class SSLFeatureStack:
    layers: np.ndarray  # L x frames x D
    frame_rate_hz: float
    provider_name: str = ""

    def __post_init__(self):
        layers = np.asarray(self.layers)
        if layers.ndim != 3 or layers.shape[0] < 1:
            raise InvalidArgumentError(f"feature stack must be L x frames x D, got {layers.shape}")
        if not np.all(np.isfinite(layers)):
            raise InvalidArgumentError("feature stack contains NaN or Inf")
        object.__setattr__(self, "layers", layers)

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_frames(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


@dataclass(frozen=True, eq=False)
class AggregatedFeature:
    values: np.ndarray  # frames x D

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class FusedEmbedding:
    values: np.ndarray  # frames x (D + n_mels)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ProviderGeometry:
    n_layers: int
    dim: int
    input_rate_hz: int
    frame_rate_hz: float


# Declared geometry of pretrained extractors whose hidden states are loaded by the external
# adapter: 25 hidden states = CNN/embedding output + 24 transformer layers.
PROVIDER_PRESETS: Dict[str, ProviderGeometry] = {
    "hubert_large": ProviderGeometry(25, 1024, 16000, 50.0),
    "mert_large": ProviderGeometry(25, 1024, 24000, 75.0),
    "cn_hubert_large": ProviderGeometry(25, 1024, 16000, 50.0),
}


# ============================================================================
# Providers
# ============================================================================


class FeatureProvider(abc.ABC):
    name: str = ""

    def __init__(self, n_layers: int, dim: int, input_rate_hz: int, frame_rate_hz: float):
        if n_layers < 1 or dim < 1:
            raise InvalidArgumentError(f"provider needs L >= 1 and D >= 1, got L={n_layers}, D={dim}")
        self.n_layers = n_layers
        self.dim = dim
        self.required_input_rate_hz = input_rate_hz
        self.frame_rate_hz = frame_rate_hz

    @property
    def geometry(self) -> ProviderGeometry:
        return ProviderGeometry(self.n_layers, self.dim, self.required_input_rate_hz, self.frame_rate_hz)

    def extract(self, w: Waveform, utterance_id: Optional[str] = None) -> SSLFeatureStack:
        if w.sample_rate_hz != self.required_input_rate_hz:
            raise InvalidArgumentError(
                f"provider '{self.name}' needs {self.required_input_rate_hz} Hz input, "
                f"got {w.sample_rate_hz} Hz"
            )
        stack = self._extract(w, utterance_id)
        if stack.n_layers != self.n_layers or stack.dim != self.dim:
            raise FeatureFormatError(
                f"provider '{self.name}' declared L={self.n_layers}, D={self.dim} but produced "
                f"L={stack.n_layers}, D={stack.dim}"
            )
        return stack

    def extract_resampled(self, w: Waveform, utterance_id: Optional[str] = None) -> SSLFeatureStack:
        """Resample ``w`` to the provider's input rate, then extract."""
        return self.extract(resample(w, self.required_input_rate_hz), utterance_id)

    @abc.abstractmethod
    def _extract(self, w: Waveform, utterance_id: Optional[str]) -> SSLFeatureStack:
        ...


class SyntheticProvider(FeatureProvider):
    """Deterministic stand-in: seeded affine maps of a 64-band log filterbank at 50 fps."""

    name = "synthetic"
    INPUT_RATE_HZ = 16000
    HOP = 320
    N_FFT = 1024
    N_BANDS = 64

    def __init__(self, seed: int = 0, n_layers: int = 4, dim: int = 8):
        super().__init__(n_layers, dim, self.INPUT_RATE_HZ, self.INPUT_RATE_HZ / self.HOP)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._weights = rng.standard_normal((n_layers, self.N_BANDS, dim)) / np.sqrt(self.N_BANDS)
        self._biases = rng.standard_normal((n_layers, 1, dim))
        self._basis = _mel_basis(self.INPUT_RATE_HZ, self.N_FFT, self.N_BANDS, 0.0, self.INPUT_RATE_HZ / 2)

    def _extract(self, w: Waveform, utterance_id: Optional[str]) -> SSLFeatureStack:
        fbank = log_filterbank(
            torch.from_numpy(w.samples), self._basis, self.N_FFT, self.HOP, self.N_FFT
        ).numpy()
        layers = np.einsum("tb,lbd->ltd", fbank, self._weights) + self._biases
        return SSLFeatureStack(layers, self.frame_rate_hz, self.name)


class ExternalProvider(FeatureProvider):
    """Reads pre-extracted stacks from ``<feature_dir>/<utterance_id>.feat``."""

    name = "external"
    SUFFIX = ".feat"

    def __init__(
        self,
        feature_dir: Union[str, Path],
        n_layers: int,
        dim: int,
        input_rate_hz: int = 16000,
        frame_rate_hz: float = 50.0,
    ):
        super().__init__(n_layers, dim, input_rate_hz, frame_rate_hz)
        self.feature_dir = Path(feature_dir)

    def path_for(self, utterance_id: str) -> Path:
        return self.feature_dir / f"{utterance_id}{self.SUFFIX}"

    def _extract(self, w: Waveform, utterance_id: Optional[str]) -> SSLFeatureStack:
        if not utterance_id:
            raise InvalidArgumentError("external provider needs an utterance id to locate features")
        stack = read_feature_file(self.path_for(utterance_id))
        return SSLFeatureStack(stack.layers, stack.frame_rate_hz, self.name)


class CachedProvider(FeatureProvider):
    """In-memory cache keyed by utterance id; lives as long as the wrapper."""

    def __init__(self, inner: FeatureProvider):
        super().__init__(inner.n_layers, inner.dim, inner.required_input_rate_hz, inner.frame_rate_hz)
        self.inner = inner
        self.name = inner.name
        self._cache: Dict[str, SSLFeatureStack] = {}
        self._lock = threading.Lock()

    def _extract(self, w: Waveform, utterance_id: Optional[str]) -> SSLFeatureStack:
        if utterance_id is None:
            return self.inner.extract(w)
        with self._lock:
            cached = self._cache.get(utterance_id)
        if cached is None:
            cached = self.inner.extract(w, utterance_id)
            with self._lock:
                self._cache[utterance_id] = cached
        return cached

    def __len__(self) -> int:
        return len(self._cache)


def _build_synthetic(cfg: SSLConfig) -> FeatureProvider:
    return SyntheticProvider(cfg.seed, cfg.layers, cfg.dim)


def _build_external(cfg: SSLConfig) -> FeatureProvider:
    if not cfg.feature_dir:
        raise InvalidArgumentError("ssl.feature_dir is required for the external provider")
    geometry = ProviderGeometry(cfg.layers, cfg.dim, cfg.input_rate_hz, cfg.frame_rate_hz)
    if cfg.preset:
        if cfg.preset not in PROVIDER_PRESETS:
            raise InvalidArgumentError(
                f"unknown provider preset {cfg.preset!r}; choose from {sorted(PROVIDER_PRESETS)}"
            )
        geometry = PROVIDER_PRESETS[cfg.preset]
    return ExternalProvider(
        cfg.feature_dir,
        geometry.n_layers,
        geometry.dim,
        geometry.input_rate_hz,
        geometry.frame_rate_hz,
    )


PROVIDERS: Dict[str, Callable[[SSLConfig], FeatureProvider]] = {
    "synthetic": _build_synthetic,
    "external": _build_external,
}


def build_provider(cfg: SSLConfig) -> FeatureProvider:
    if cfg.provider not in PROVIDERS:
        raise InvalidArgumentError(
            f"unknown feature provider {cfg.provider!r}; choose from {sorted(PROVIDERS)}"
        )
    provider = PROVIDERS[cfg.provider](cfg)
    log.debug(
        "provider %s: L=%d D=%d input=%d Hz frames=%g fps",
        provider.name,
        provider.n_layers,
        provider.dim,
        provider.required_input_rate_hz,
        provider.frame_rate_hz,
    )
    return CachedProvider(provider) if cfg.cache else provider


# ============================================================================
# Feature files (also used for the speaker-embedding dump)
# ============================================================================


def write_feature_file(path: Union[str, Path], stack: SSLFeatureStack) -> None:
    header = np.array(
        [(stack.n_layers, stack.n_frames, stack.dim, stack.frame_rate_hz)], dtype=_HEADER_DTYPE
    )
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(stack.layers, dtype="<f4").tobytes())


def read_feature_file(path: Union[str, Path]) -> SSLFeatureStack:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureFormatError(f"cannot read feature file {path}: {exc}") from None
    if len(raw) < _HEADER_DTYPE.itemsize:
        raise FeatureFormatError(f"{path}: truncated header")
    header = np.frombuffer(raw, dtype=_HEADER_DTYPE, count=1)[0]
    n_layers, frames, dim = int(header["L"]), int(header["frames"]), int(header["D"])
    if n_layers < 1 or frames < 0 or dim < 1:
        raise FeatureFormatError(f"{path}: bad header L={n_layers} frames={frames} D={dim}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER_DTYPE.itemsize)
    if body.size != n_layers * frames * dim:
        raise FeatureFormatError(
            f"{path}: expected {n_layers * frames * dim} values, found {body.size}"
        )
    layers = body.reshape(n_layers, frames, dim).astype(np.float64)
    if not np.all(np.isfinite(layers)):
        raise FeatureFormatError(f"{path}: non-finite values")
    return SSLFeatureStack(layers, float(header["frame_rate"]), "file")


# ============================================================================
# Weighted sum
# ============================================================================


class LayerWeights(nn.Module):
    """Learnable per-layer weights; ``alphas = softmax(logits)``."""

    def __init__(self, n_layers: int, logits: Optional[Sequence[float]] = None):
        super().__init__()
        if n_layers < 1:
            raise InvalidArgumentError(f"need at least one layer, got {n_layers}")
        init = torch.zeros(n_layers) if logits is None else torch.as_tensor(logits, dtype=torch.float32)
        if init.shape != (n_layers,):
            raise InvalidArgumentError(f"expected {n_layers} logits, got shape {tuple(init.shape)}")
        self.logits = nn.Parameter(init.clone())

    @property
    def n_layers(self) -> int:
        return self.logits.shape[0]

    def alphas(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=0)

    def forward(self, layers: torch.Tensor) -> torch.Tensor:
        """``(..., L, T, D)`` -> ``(..., T, D)``."""
        if layers.shape[-3] != self.n_layers:
            raise InvalidArgumentError(
                f"stack has {layers.shape[-3]} layers, weights have {self.n_layers}"
            )
        alphas = self.alphas().to(layers.dtype)
        return torch.einsum("l,...ltd->...td", alphas, layers)


def weighted_sum(stack: SSLFeatureStack, weights: LayerWeights) -> AggregatedFeature:
    with torch.no_grad():
        r = weights(torch.from_numpy(np.asarray(stack.layers, dtype=np.float64)))
    return AggregatedFeature(r.numpy())


# ============================================================================
# Alignment + fusion
# ============================================================================


def align_frames_tensor(r: torch.Tensor, target_frames: int) -> torch.Tensor:
    """``(..., T, D)`` onto ``target_frames``; within tolerance only truncates (never pads)."""
    if target_frames < 1:
        raise InvalidArgumentError(f"target frame count must be >= 1, got {target_frames}")
    frames = r.shape[-2]
    if frames == 0:
        raise InvalidArgumentError("cannot align an empty feature sequence")
    if abs(frames - target_frames) <= TRUNCATE_TOLERANCE:
        return r[..., : min(frames, target_frames), :]
    lead = r.shape[:-2]
    flat = r.reshape(-1, frames, r.shape[-1]).transpose(1, 2)
    out = F.interpolate(flat, size=target_frames, mode="linear", align_corners=True)
    return out.transpose(1, 2).reshape(*lead, target_frames, r.shape[-1])


def align_frames(r: AggregatedFeature, target_frames: int) -> AggregatedFeature:
    return AggregatedFeature(align_frames_tensor(torch.from_numpy(r.values), target_frames).numpy())


def fuse_tensor(r: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Align ``r`` (``T_r x D``) to ``m`` (``T_m x n_mels``), truncate both, concatenate."""
    aligned = align_frames_tensor(r, m.shape[-2])
    frames = min(aligned.shape[-2], m.shape[-2])
    if abs(aligned.shape[-2] - m.shape[-2]) > TRUNCATE_TOLERANCE:
        raise InvariantViolationError(
            f"aligned features have {aligned.shape[-2]} frames, mel has {m.shape[-2]}"
        )
    return torch.cat([aligned[..., :frames, :], m[..., :frames, :].to(aligned.dtype)], dim=-1)


def fuse(r: AggregatedFeature, m: MelSpectrogram) -> FusedEmbedding:
    values = fuse_tensor(torch.from_numpy(r.values), torch.from_numpy(m.values))
    return FusedEmbedding(values.numpy())


def fused_batch(
    stacks: List[torch.Tensor], mel: torch.Tensor, lengths: torch.Tensor, weights: LayerWeights
) -> torch.Tensor:
    """Per-utterance weighted sum + fusion, zero-padded back to ``mel``'s frame axis.

    ``stacks[b]`` is ``L x T_b x D``; ``mel`` is ``B x T x n_mels``; ``lengths[b]`` is the true
    mel length of item ``b``. A stack up to two frames short repeats its last frame so every
    item keeps its full length inside the batch.
    """
    if len(stacks) != mel.shape[0]:
        raise InvalidArgumentError(f"{len(stacks)} stacks for a batch of {mel.shape[0]}")
    frames = mel.shape[1]
    rows = []
    for b, stack in enumerate(stacks):
        n = int(lengths[b])
        r = align_frames_tensor(weights(stack.to(mel.dtype)), n)
        short = n - r.shape[0]
        if short > 0:
            r = torch.cat([r, r[-1:].expand(short, -1)], dim=0)
        e = fuse_tensor(r, mel[b, :n])
        if e.shape[0] != n:
            raise InvariantViolationError(
                f"item {b}: fused embedding has {e.shape[0]} frames, expected {n}"
            )
        rows.append(F.pad(e, (0, 0, 0, frames - n)))
    return torch.stack(rows)
