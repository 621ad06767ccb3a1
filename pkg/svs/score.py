"""Music-score input: phoneme inventory, score files, and frame-level expansion.

Score file: UTF-8, one event per line, ``phoneme<TAB>midi<TAB>duration_sec``. An optional
``phoneme<TAB>midi<TAB>duration`` header and ``#`` comment lines are skipped. Rests use the
``SP`` phoneme and MIDI ``-1`` (``REST`` is accepted too).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateDurationError, InvalidArgumentError, ScoreParseError

REST_PITCH = -1
REST_PHONEME = "SP"
MAX_SCORE_SEC = 30.0
# pitch embedding index: REST -> 0, MIDI m -> m + 1
N_PITCH_CLASSES = 129

_HEADER = ("phoneme", "midi", "duration")


# ============================================================================
# Phoneme inventory
# ============================================================================


class PhonemeInventory:
    """Ordered phoneme symbols; the index of a symbol is its line number (0-based)."""

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if not symbols:
            raise InvalidArgumentError("phoneme inventory is empty")
        if len(set(symbols)) != len(symbols):
            raise InvalidArgumentError("phoneme inventory contains duplicate symbols")
        self.symbols = symbols
        self._index: Dict[str, int] = {s: i for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PhonemeInventory":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line.strip() for line in lines if line.strip()])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")


# ============================================================================
# Domain types
# ============================================================================


@dataclass(frozen=True)
class ScoreEvent:
    phoneme_id: int
    midi_pitch: int
    duration_sec: float

    def __post_init__(self):
        if not self.duration_sec > 0:
            raise InvalidArgumentError(f"duration must be positive, got {self.duration_sec}")
        if self.midi_pitch != REST_PITCH and not 0 <= self.midi_pitch <= 127:
            raise InvalidArgumentError(f"MIDI pitch must be in [0, 127] or REST, got {self.midi_pitch}")
        if self.phoneme_id < 0:
            raise InvalidArgumentError(f"phoneme id must be non-negative, got {self.phoneme_id}")


@dataclass(frozen=True)
class MusicScore:
    utterance_id: str
    events: Tuple[ScoreEvent, ...]
    speaker_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise InvalidArgumentError(f"score '{self.utterance_id}' has no events")
        if self.total_duration_sec > MAX_SCORE_SEC:
            raise InvalidArgumentError(
                f"score '{self.utterance_id}' lasts {self.total_duration_sec:.2f} s "
                f"(limit {MAX_SCORE_SEC:g} s)"
            )

    @property
    def total_duration_sec(self) -> float:
        return float(sum(e.duration_sec for e in self.events))


@dataclass(frozen=True, eq=False)
class FrameScore:
    phoneme_per_frame: np.ndarray
    pitch_per_frame: np.ndarray

    def __post_init__(self):
        if self.phoneme_per_frame.shape != self.pitch_per_frame.shape:
            raise InvalidArgumentError("phoneme and pitch sequences must have equal length")

    @property
    def n_frames(self) -> int:
        return int(self.phoneme_per_frame.shape[0])


# ============================================================================
# Parsing
# ============================================================================


def _parse_pitch(field: str) -> int:
    if field.upper() == "REST":
        return REST_PITCH
    return int(field)


def parse_score(
    text: str,
    inventory: PhonemeInventory,
    utterance_id: str = "",
    speaker_id: int = 0,
) -> MusicScore:
    if not text.strip():
        raise InvalidArgumentError("score file is empty")

    events: List[ScoreEvent] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if not events and tuple(f.lower() for f in fields) in (_HEADER, _HEADER[:2] + ("duration_sec",)):
            continue
        if len(fields) != 3:
            raise ScoreParseError(f"expected 3 tab-separated fields, got {len(fields)}", number)
        symbol, pitch_text, duration_text = fields
        if symbol not in inventory:
            raise ScoreParseError(f"unknown phoneme {symbol!r}", number)
        try:
            pitch = _parse_pitch(pitch_text)
            duration = float(duration_text)
        except ValueError:
            raise ScoreParseError(f"malformed pitch/duration in {line!r}", number) from None
        try:
            events.append(ScoreEvent(inventory.index(symbol), pitch, duration))
        except InvalidArgumentError as exc:
            raise ScoreParseError(str(exc), number) from None

    if not events:
        raise InvalidArgumentError("score file contains no events")
    return MusicScore(utterance_id, tuple(events), speaker_id)


def load_score(
    path: Union[str, Path], inventory: PhonemeInventory, utterance_id: str = "", speaker_id: int = 0
) -> MusicScore:
    path = Path(path)
    return parse_score(
        path.read_text(encoding="utf-8"), inventory, utterance_id or path.stem, speaker_id
    )


def format_score(score: MusicScore, inventory: PhonemeInventory) -> str:
    lines = ["\t".join(_HEADER)]
    for e in score.events:
        pitch = "-1" if e.midi_pitch == REST_PITCH else str(e.midi_pitch)
        lines.append(f"{inventory.symbols[e.phoneme_id]}\t{pitch}\t{e.duration_sec:g}")
    return "\n".join(lines) + "\n"


# ============================================================================
# Length regulation
# ============================================================================


def event_frame_counts(durations_sec: Iterable[float], frame_rate_hz: float) -> np.ndarray:
    """Per-event frame counts from rounded cumulative boundaries; they sum to round(total)."""
    boundaries = np.floor(np.cumsum(np.asarray(list(durations_sec), dtype=np.float64)) * frame_rate_hz + 0.5)
    return np.diff(np.concatenate([[0.0], boundaries])).astype(np.int64)


def length_regulate(score: MusicScore, frame_rate_hz: float) -> FrameScore:
    if frame_rate_hz <= 0:
        raise InvalidArgumentError(f"frame rate must be positive, got {frame_rate_hz}")
    counts = event_frame_counts((e.duration_sec for e in score.events), frame_rate_hz)
    for i, count in enumerate(counts):
        if count <= 0:
            raise DegenerateDurationError(i, score.events[i].duration_sec, frame_rate_hz)
    phonemes = np.repeat([e.phoneme_id for e in score.events], counts).astype(np.int64)
    pitches = np.repeat([e.midi_pitch for e in score.events], counts).astype(np.int64)
    return FrameScore(phonemes, pitches)


def midi_to_hz(midi: np.ndarray) -> np.ndarray:
    """440 * 2^((m - 69) / 12), and 0 for REST."""
    midi = np.asarray(midi)
    hz = 440.0 * np.power(2.0, (midi.astype(np.float64) - 69.0) / 12.0)
    return np.where(midi == REST_PITCH, 0.0, hz)
