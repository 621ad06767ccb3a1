"""Corpus manifests, example loading, deterministic batching, and the synthetic corpus.

Manifest: UTF-8, one utterance per line, ``utt_id<TAB>wav_path<TAB>score_path<TAB>speaker_id``.
Relative paths resolve against the manifest's directory.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
from tqdm import tqdm

from .config import AudioConfig
from .dsp import Waveform, melspectrogram, read_wav, resample, write_wav
from .errors import DataError, SVSError
from .score import (
    REST_PITCH,
    FrameScore,
    MusicScore,
    PhonemeInventory,
    ScoreEvent,
    format_score,
    length_regulate,
    load_score,
)

log = logging.getLogger(__name__)

SYNTHETIC_PHONEMES = ("SP", "a", "i", "u", "e", "o")
# per-speaker relative amplitudes of partials 1..3
_TIMBRES = (
    (1.0, 0.5, 0.25),
    (0.6, 1.0, 0.3),
    (0.8, 0.3, 0.9),
    (1.0, 0.8, 0.6),
)


# ============================================================================
# Manifest
# ============================================================================


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    wav_path: Path
    score_path: Path
    speaker_id: int


def read_manifest(path: Union[str, Path], check_files: bool = True) -> List[Utterance]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    base = path.parent
    utterances: List[Utterance] = []
    seen = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{number}: expected 4 tab-separated fields, got {len(fields)}")
        utt_id, wav, score, speaker = (f.strip() for f in fields)
        try:
            speaker_id = int(speaker)
        except ValueError:
            raise DataError(f"{path}:{number}: speaker id {speaker!r} is not an integer") from None
        if speaker_id < 0:
            raise DataError(f"{path}:{number}: negative speaker id", utt_id)
        if utt_id in seen:
            raise DataError(f"{path}:{number}: duplicate utterance id", utt_id)
        seen.add(utt_id)
        utt = Utterance(utt_id, base / wav, base / score, speaker_id)
        if check_files:
            for p in (utt.wav_path, utt.score_path):
                if not p.is_file():
                    raise DataError(f"missing file {p}", utt_id)
        utterances.append(utt)
    if not utterances:
        raise DataError(f"manifest {path} lists no utterances")
    return utterances


def write_manifest(path: Union[str, Path], utterances: Sequence[Utterance]) -> Path:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for u in utterances:
        wav, score = (_relative(p, base) for p in (u.wav_path, u.score_path))
        lines.append(f"{u.utterance_id}\t{wav}\t{score}\t{u.speaker_id}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _relative(p: Path, base: Path) -> str:
    p = Path(p).resolve()
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


def n_speakers_of(utterances: Sequence[Utterance]) -> int:
    return max(u.speaker_id for u in utterances) + 1


# ============================================================================
# Examples
# ============================================================================


@dataclass(frozen=True, eq=False)
class Example:
    utterance: Utterance
    score: MusicScore
    frames: FrameScore
    waveform: Waveform  # exactly frames.n_frames * hop samples
    mel: np.ndarray  # frames x n_mels

    @property
    def utterance_id(self) -> str:
        return self.utterance.utterance_id

    @property
    def n_frames(self) -> int:
        return self.frames.n_frames


def fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    if samples.shape[0] >= n:
        return samples[:n]
    return np.pad(samples, (0, n - samples.shape[0]))


def load_example(utt: Utterance, inventory: PhonemeInventory, cfg: AudioConfig) -> Example:
    try:
        score = load_score(utt.score_path, inventory, utt.utterance_id, utt.speaker_id)
        frames = length_regulate(score, cfg.frame_rate_hz)
        w = read_wav(utt.wav_path)
        if w.sample_rate_hz != cfg.sample_rate_hz:
            w = resample(w, cfg.sample_rate_hz)
        w = Waveform(fit_length(w.samples, frames.n_frames * cfg.hop), cfg.sample_rate_hz)
        mel = melspectrogram(w, cfg).values
    except (SVSError, OSError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(str(exc), utt.utterance_id) from exc
    return Example(utt, score, frames, w, mel)


def load_corpus(
    utterances: Sequence[Utterance],
    inventory: PhonemeInventory,
    cfg: AudioConfig,
    progress: bool = False,
) -> List[Example]:
    """Load every utterance up front so unreadable data fails before training starts."""
    items = tqdm(utterances, desc="loading corpus", disable=not progress, leave=False)
    examples = [load_example(u, inventory, cfg) for u in items]
    log.info(
        "loaded %d utterances (%.1f s of audio)",
        len(examples),
        sum(e.waveform.duration_sec for e in examples),
    )
    return examples


# ============================================================================
# Batching
# ============================================================================


@dataclass(eq=False)
class Batch:
    examples: List[Example]
    phonemes: torch.Tensor  # B x T, padded with 0
    pitch: torch.Tensor  # B x T, padded with REST
    mel: torch.Tensor  # B x T x n_mels, padded with 0
    audio: torch.Tensor  # B x T*hop, padded with 0
    lengths: torch.Tensor  # B
    speakers: torch.Tensor  # B
    mask: torch.Tensor  # B x T, True on real frames

    @property
    def ids(self) -> List[str]:
        return [e.utterance_id for e in self.examples]

    @property
    def size(self) -> int:
        return len(self.examples)


def collate(examples: Sequence[Example], dtype: torch.dtype = torch.float32) -> Batch:
    if not examples:
        raise DataError("cannot collate an empty batch")
    frames = max(e.n_frames for e in examples)
    hop = examples[0].waveform.samples.shape[0] // examples[0].n_frames
    b = len(examples)
    n_mels = examples[0].mel.shape[1]
    phonemes = torch.zeros(b, frames, dtype=torch.long)
    pitch = torch.full((b, frames), REST_PITCH, dtype=torch.long)
    mel = torch.zeros(b, frames, n_mels, dtype=dtype)
    audio = torch.zeros(b, frames * hop, dtype=dtype)
    for i, e in enumerate(examples):
        n = e.n_frames
        phonemes[i, :n] = torch.from_numpy(e.frames.phoneme_per_frame)
        pitch[i, :n] = torch.from_numpy(e.frames.pitch_per_frame)
        mel[i, :n] = torch.from_numpy(e.mel).to(dtype)
        audio[i, : n * hop] = torch.from_numpy(e.waveform.samples).to(dtype)
    lengths = torch.tensor([e.n_frames for e in examples], dtype=torch.long)
    mask = torch.arange(frames).unsqueeze(0) < lengths.unsqueeze(1)
    speakers = torch.tensor([e.utterance.speaker_id for e in examples], dtype=torch.long)
    return Batch(list(examples), phonemes, pitch, mel, audio, lengths, speakers, mask)


def epoch_order(n: int, seed: int, epoch: int, pass_index: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, epoch, pass_index]).permutation(n)


def batches_per_pass(n_examples: int, batch_size: int) -> int:
    return math.ceil(n_examples / batch_size)


def load_batches(
    examples: Sequence[Example],
    batch_size: int,
    seed: int,
    epoch: int,
    pass_index: int = 0,
    dtype: torch.dtype = torch.float32,
) -> List[Batch]:
    """One shuffled pass over ``examples``; the order depends only on (seed, epoch, pass)."""
    order = epoch_order(len(examples), seed, epoch, pass_index)
    return [
        collate([examples[i] for i in order[start : start + batch_size]], dtype)
        for start in range(0, len(order), batch_size)
    ]


# ============================================================================
# Synthetic corpus
# ============================================================================


def _harmonic_tone(
    f0_per_sample: np.ndarray, amplitudes: Sequence[float], sample_rate: int
) -> np.ndarray:
    phase = 2 * np.pi * np.cumsum(f0_per_sample) / sample_rate
    tone = sum(a * np.sin((k + 1) * phase) for k, a in enumerate(amplitudes))
    return tone / np.max(np.abs(tone))


def make_synthetic_corpus(
    seed: int,
    n_utts: int,
    n_speakers: int,
    out_dir: Union[str, Path],
    sample_rate_hz: int = 24000,
    noise_level: float = 0.003,
) -> Path:
    """Write harmonic-stack "singing" with scores and a manifest; returns the manifest path.

    Each utterance holds 2-4 vowel notes at MIDI 57-72 lasting 0.2-0.4 s (multiples of 20 ms).
    Speakers differ by the relative amplitudes of the three partials.
    """
    if n_utts < 1 or n_speakers < 1:
        raise DataError(f"need n_utts >= 1 and n_speakers >= 1, got {n_utts}, {n_speakers}")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "score").mkdir(parents=True, exist_ok=True)
    inventory = PhonemeInventory(SYNTHETIC_PHONEMES)
    inventory.save(out_dir / "phonemes.txt")

    rng = np.random.default_rng(seed)
    timbres = [_TIMBRES[s % len(_TIMBRES)] for s in range(n_speakers)]
    utterances = []
    for i in range(n_utts):
        speaker = i % n_speakers
        n_events = int(rng.integers(2, 5))
        pitches = rng.integers(57, 73, size=n_events)
        durations = rng.integers(10, 21, size=n_events) * 0.02
        vowels = rng.integers(1, len(SYNTHETIC_PHONEMES), size=n_events)
        utt_id = f"utt{i:03d}"
        events = tuple(
            ScoreEvent(int(v), int(p), float(round(d, 2))) for v, p, d in zip(vowels, pitches, durations)
        )
        score = MusicScore(utt_id, events, speaker)

        counts = np.rint(durations * sample_rate_hz).astype(int)
        f0 = np.repeat(440.0 * 2.0 ** ((pitches - 69) / 12.0), counts)
        samples = 0.5 * _harmonic_tone(f0, timbres[speaker], sample_rate_hz)
        samples = np.clip(samples + noise_level * rng.standard_normal(samples.shape[0]), -1.0, 1.0)

        wav_path = out_dir / "wav" / f"{utt_id}.wav"
        score_path = out_dir / "score" / f"{utt_id}.txt"
        write_wav(wav_path, Waveform(samples, sample_rate_hz))
        score_path.write_text(format_score(score, inventory), encoding="utf-8")
        utterances.append(Utterance(utt_id, wav_path, score_path, speaker))

    manifest = write_manifest(out_dir / "manifest.tsv", utterances)
    log.info("wrote synthetic corpus: %d utterances, %d speakers -> %s", n_utts, n_speakers, out_dir)
    return manifest


def default_inventory_path(manifest: Union[str, Path]) -> Optional[Path]:
    """``phonemes.txt`` next to the manifest, if present."""
    candidate = Path(manifest).parent / "phonemes.txt"
    return candidate if candidate.is_file() else None
