"""Configuration sections, presets and the flat ``section.key = value`` file format.

Defaults are the desk-scale preset. ``ExperimentConfig.full()`` switches to the full-size
setup (200 epochs of 1000 iterations, 512 decoder channels, a 25-layer 1024-dim provider).
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Tuple, Union, get_args, get_origin
from typing import get_type_hints

from .errors import InvalidArgumentError


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidArgumentError(message)


# ============================================================================
# Sections
# ============================================================================


@dataclass
class AudioConfig:
    sample_rate_hz: int = 24000
    hop: int = 480
    n_fft: int = 2048
    win_length: int = 2048
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 12000.0
    ssl_input_rate_hz: int = 16000

    def __post_init__(self):
        _require(self.sample_rate_hz > 0, "audio.sample_rate_hz must be positive")
        _require(self.ssl_input_rate_hz > 0, "audio.ssl_input_rate_hz must be positive")
        _require(
            0 < self.hop <= self.win_length <= self.n_fft,
            f"audio: need 0 < hop <= win_length <= n_fft, got "
            f"{self.hop}, {self.win_length}, {self.n_fft}",
        )
        _require(self.n_mels >= 1, "audio.n_mels must be >= 1")
        _require(
            0 <= self.fmin < self.fmax <= self.sample_rate_hz / 2,
            f"audio: need 0 <= fmin < fmax <= sample_rate/2, got {self.fmin}, {self.fmax}",
        )

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop


@dataclass
class ModelConfig:
    latent_dim: int = 32
    hidden_channels: int = 64
    decoder_channels: int = 128
    speaker_emb_dim: int = 16
    n_speakers: int = 1
    n_phonemes: int = 1
    kernel_size: int = 5
    dilations: Tuple[int, ...] = (1, 2, 4, 8)
    upsample_rates: Tuple[int, ...] = (8, 6, 5, 2)
    # "fused": posterior reads concat(r, m); "mel": posterior reads m only (baseline)
    posterior_input: str = "fused"
    log_var_clamp: float = 14.0
    excitation_amplitude: float = 0.1
    disc_channels: int = 8
    disc_max_channels: int = 32
    mrsd_fft_sizes: Tuple[int, ...] = (512, 1024, 2048)
    mpd_periods: Tuple[int, ...] = (2, 3, 5, 7, 11)
    msd_scales: int = 3

    def __post_init__(self):
        for name in (
            "latent_dim",
            "hidden_channels",
            "decoder_channels",
            "speaker_emb_dim",
            "n_speakers",
            "n_phonemes",
            "kernel_size",
            "disc_channels",
            "disc_max_channels",
            "msd_scales",
        ):
            _require(getattr(self, name) > 0, f"model.{name} must be positive")
        _require(self.kernel_size % 2 == 1, "model.kernel_size must be odd")
        _require(len(self.dilations) > 0, "model.dilations must not be empty")
        _require(all(u > 0 for u in self.upsample_rates), "model.upsample_rates must be positive")
        _require(
            self.posterior_input in ("fused", "mel"),
            f"model.posterior_input must be 'fused' or 'mel', got {self.posterior_input!r}",
        )
        _require(self.log_var_clamp > 0, "model.log_var_clamp must be positive")

    @property
    def upsample_factor(self) -> int:
        factor = 1
        for u in self.upsample_rates:
            factor *= u
        return factor


@dataclass
class SSLConfig:
    provider: str = "synthetic"
    preset: str = ""
    seed: int = 0
    layers: int = 4
    dim: int = 8
    input_rate_hz: int = 16000
    frame_rate_hz: float = 50.0
    feature_dir: str = ""
    cache: bool = False

    def __post_init__(self):
        _require(self.layers >= 1, "ssl.layers must be >= 1")
        _require(self.dim >= 1, "ssl.dim must be >= 1")
        _require(self.input_rate_hz > 0, "ssl.input_rate_hz must be positive")
        _require(self.frame_rate_hz > 0, "ssl.frame_rate_hz must be positive")


@dataclass
class LossConfig:
    lambda_kl: float = 1.0
    lambda_mel: float = 45.0
    lambda_fm: float = 2.0
    adversarial: bool = True

    def __post_init__(self):
        for name in ("lambda_kl", "lambda_mel", "lambda_fm"):
            _require(getattr(self, name) >= 0, f"loss.{name} must be >= 0")


@dataclass
class TrainingConfig:
    lr: float = 2.0e-4
    betas: Tuple[float, ...] = (0.8, 0.99)
    eps: float = 1.0e-9
    weight_decay: float = 0.0
    lr_gamma: float = 0.998
    epochs: int = 5
    iterations_per_epoch: int = 100
    batch_size: int = 2
    segment_frames: int = 32
    seed: int = 1234
    history_size: int = 1000
    inventory: str = ""

    def __post_init__(self):
        _require(self.lr > 0, "train.lr must be positive")
        _require(0 < self.lr_gamma <= 1, "train.lr_gamma must be in (0, 1]")
        _require(
            len(self.betas) == 2 and all(0 < b < 1 for b in self.betas),
            f"train.betas must be two values in (0, 1), got {self.betas}",
        )
        _require(self.eps > 0, "train.eps must be positive")
        _require(self.weight_decay >= 0, "train.weight_decay must be >= 0")
        _require(self.epochs >= 0, "train.epochs must be >= 0")
        _require(self.iterations_per_epoch >= 1, "train.iterations_per_epoch must be >= 1")
        _require(self.batch_size >= 1, "train.batch_size must be >= 1")
        _require(self.segment_frames >= 1, "train.segment_frames must be >= 1")
        _require(self.history_size >= 1, "train.history_size must be >= 1")


# ============================================================================
# Aggregate + presets
# ============================================================================

SECTIONS = ("audio", "model", "ssl", "loss", "train")


@dataclass
class ExperimentConfig:
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        _require(
            self.model.upsample_factor == self.audio.hop,
            f"product of model.upsample_rates ({self.model.upsample_factor}) "
            f"must equal audio.hop ({self.audio.hop})",
        )

    @classmethod
    def desk(cls) -> "ExperimentConfig":
        return cls()

    @classmethod
    def full(cls) -> "ExperimentConfig":
        return cls(
            model=ModelConfig(
                hidden_channels=192,
                decoder_channels=512,
                disc_channels=32,
                disc_max_channels=1024,
            ),
            ssl=SSLConfig(
                provider="external", preset="hubert_large", layers=25, dim=1024
            ),
            train=TrainingConfig(epochs=200, iterations_per_epoch=1000, batch_size=16),
        )

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        presets = {"desk": cls.desk, "full": cls.full}
        if name not in presets:
            raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    # ------------------------------------------------------------------
    # Overrides
    # ------------------------------------------------------------------

    def with_values(self, assignments: Mapping[str, Any]) -> "ExperimentConfig":
        """Return a copy with ``section.key`` assignments applied (strings are parsed)."""
        grouped: Dict[str, Dict[str, Any]] = {}
        for dotted, value in assignments.items():
            section, key = _split_key(dotted)
            hints = get_type_hints(type(getattr(self, section)))
            if key not in hints:
                raise InvalidArgumentError(f"unknown config key '{dotted}'")
            if isinstance(value, str):
                value = parse_value(value, hints[key], dotted)
            grouped.setdefault(section, {})[key] = value
        sections = {
            name: dataclasses.replace(getattr(self, name), **grouped.get(name, {}))
            for name in SECTIONS
        }
        return ExperimentConfig(**sections)

    def to_lines(self) -> List[str]:
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                lines.append(f"{name}.{f.name} = {render_value(getattr(section, f.name))}")
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def from_lines(cls, lines: Iterable[str], source: str = "<config>") -> "ExperimentConfig":
        preset = "desk"
        assignments: Dict[str, str] = {}
        for number, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgumentError(f"{source}:{number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "preset":
                preset = value
                continue
            try:
                _split_key(key)
            except InvalidArgumentError as exc:
                raise InvalidArgumentError(f"{source}:{number}: {exc}") from None
            assignments[key] = value
        base = cls.preset(preset)
        try:
            return base.with_values(assignments)
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"{source}: {exc}") from None


def load_config(
    path: Union[str, Path, None] = None, overrides: Mapping[str, Any] = ()
) -> ExperimentConfig:
    """Read a config file (or start from the desk preset) and apply overrides; overrides win."""
    if path is None:
        config = ExperimentConfig.desk()
    else:
        path = Path(path)
        config = ExperimentConfig.from_lines(
            path.read_text(encoding="utf-8").splitlines(), source=str(path)
        )
    return config.with_values(dict(overrides)) if overrides else config


# ============================================================================
# Value codec
# ============================================================================


def _split_key(dotted: str) -> Tuple[str, str]:
    parts = dotted.split(".")
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise InvalidArgumentError(
            f"config key '{dotted}' must look like section.key with section in {SECTIONS}"
        )
    return parts[0], parts[1]


def parse_value(text: str, annotation: Any, key: str = "") -> Any:
    text = text.strip()
    try:
        if annotation is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        if annotation is str:
            return text
        if get_origin(annotation) is tuple:
            item_type = get_args(annotation)[0]
            items = [item.strip() for item in text.strip("()[] ").split(",") if item.strip()]
            return tuple(item_type(item) for item in items)
    except ValueError:
        raise InvalidArgumentError(f"cannot parse {text!r} for '{key}'") from None
    raise InvalidArgumentError(f"unsupported type for '{key}'")


def render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(render_value(v) for v in value)
    return str(value)
