"""Objective evaluation: MCD, log-F0 RMSE, semitone accuracy, SECS, and corpus reports."""

import abc
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import librosa
import numpy as np
import pandas as pd
import torch
from scipy.fft import dct
from tqdm import tqdm

from .config import AudioConfig
from .data import Utterance, read_manifest
from .dsp import F0Track, Waveform, _mel_basis, extract_f0, log_filterbank, log_mel, read_wav, resample
from .errors import (
    DegenerateEmbeddingError,
    FeatureFormatError,
    InvalidArgumentError,
    NoVoicedOverlapError,
    SVSError,
)
from .model import SVSModel, synthesize
from .score import load_score
from .sslfront import SSLFeatureStack, read_feature_file, write_feature_file
from .train import load_checkpoint

log = logging.getLogger(__name__)

N_CEPSTRA = 13
MCD_SCALE = 10.0 / math.log(10.0) * math.sqrt(2.0)


# ============================================================================
# Mel-cepstral distortion
# ============================================================================


def _analysis_config(sample_rate_hz: int, cfg: Optional[AudioConfig]) -> AudioConfig:
    cfg = cfg or AudioConfig()
    if cfg.sample_rate_hz == sample_rate_hz:
        return cfg
    return dataclasses.replace(
        cfg, sample_rate_hz=sample_rate_hz, fmax=min(cfg.fmax, sample_rate_hz / 2)
    )


def _check_pair(a: Waveform, b: Waveform) -> None:
    if a.sample_rate_hz != b.sample_rate_hz:
        raise InvalidArgumentError(
            f"sample rates differ: {a.sample_rate_hz} Hz vs {b.sample_rate_hz} Hz"
        )


def mel_cepstrum(w: Waveform, cfg: Optional[AudioConfig] = None) -> np.ndarray:
    """Orthonormal DCT-II of log-mel frames, coefficients 1..13."""
    cfg = _analysis_config(w.sample_rate_hz, cfg)
    if len(w) < cfg.hop:
        raise InvalidArgumentError(f"signal of {len(w)} samples is shorter than one hop ({cfg.hop})")
    m = log_mel(torch.from_numpy(w.samples), cfg).numpy()
    return dct(m, type=2, norm="ortho", axis=1)[:, 1 : N_CEPSTRA + 1]


def mcd_from_cepstra(c_ref: np.ndarray, c_syn: np.ndarray) -> float:
    _, path = librosa.sequence.dtw(X=c_ref.T, Y=c_syn.T, metric="euclidean")
    dist = np.linalg.norm(c_ref[path[:, 0]] - c_syn[path[:, 1]], axis=1)
    return float(MCD_SCALE * dist.mean())


def mcd(reference: Waveform, synthesized: Waveform, cfg: Optional[AudioConfig] = None) -> float:
    _check_pair(reference, synthesized)
    return mcd_from_cepstra(mel_cepstrum(reference, cfg), mel_cepstrum(synthesized, cfg))


# ============================================================================
# F0 metrics
# ============================================================================


def _mutual_voiced(ref: F0Track, syn: F0Track):
    n = min(ref.n_frames, syn.n_frames)
    both = ref.voiced[:n] & syn.voiced[:n]
    if not both.any():
        raise NoVoicedOverlapError("reference and synthesized F0 tracks share no voiced frame")
    return ref.f0_hz[:n][both], syn.f0_hz[:n][both]


def f0_rmse_from_tracks(ref: F0Track, syn: F0Track) -> float:
    """RMSE of natural-log F0 over mutually voiced frames."""
    a, b = _mutual_voiced(ref, syn)
    return float(np.sqrt(np.mean((np.log(a) - np.log(b)) ** 2)))


def hz_to_semitone(f0_hz: np.ndarray) -> np.ndarray:
    # round half up
    return np.floor(69.0 + 12.0 * np.log2(f0_hz / 440.0) + 0.5).astype(np.int64)


def semitone_accuracy_from_tracks(ref: F0Track, syn: F0Track) -> float:
    a, b = _mutual_voiced(ref, syn)
    return float(np.mean(hz_to_semitone(a) == hz_to_semitone(b)))


def f0_rmse(reference: Waveform, synthesized: Waveform, cfg: Optional[AudioConfig] = None) -> float:
    _check_pair(reference, synthesized)
    cfg = _analysis_config(reference.sample_rate_hz, cfg)
    return f0_rmse_from_tracks(extract_f0(reference, cfg), extract_f0(synthesized, cfg))


def semitone_accuracy(
    reference: Waveform, synthesized: Waveform, cfg: Optional[AudioConfig] = None
) -> float:
    _check_pair(reference, synthesized)
    cfg = _analysis_config(reference.sample_rate_hz, cfg)
    return semitone_accuracy_from_tracks(extract_f0(reference, cfg), extract_f0(synthesized, cfg))


# ============================================================================
# Speaker similarity
# ============================================================================


class SpeakerEmbedder(abc.ABC):
    dim: int

    @abc.abstractmethod
    def embed(self, w: Waveform, utterance_id: Optional[str] = None) -> np.ndarray:
        ...


class MelStatsEmbedder(SpeakerEmbedder):
    """Per-band mean and variance of a 32-band log filterbank, unit-normalized (64 dims)."""

    N_BANDS = 32
    N_FFT = 1024
    HOP = 256

    def __init__(self):
        self.dim = 2 * self.N_BANDS

    def embed(self, w: Waveform, utterance_id: Optional[str] = None) -> np.ndarray:
        basis = _mel_basis(w.sample_rate_hz, self.N_FFT, self.N_BANDS, 0.0, w.sample_rate_hz / 2)
        fb = log_filterbank(torch.from_numpy(w.samples), basis, self.N_FFT, self.HOP, self.N_FFT).numpy()
        if fb.shape[0] == 0:
            raise DegenerateEmbeddingError("cannot embed an empty waveform")
        v = np.concatenate([fb.mean(axis=0), fb.var(axis=0)])
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DegenerateEmbeddingError("speaker embedding has zero norm")
        return v / norm


class ExternalEmbedder(SpeakerEmbedder):
    """Embeddings computed by an outside extractor, one ``<key>.emb`` file each (L=1, one frame).

    Corpus evaluation looks up the recording as ``<utt_id>.emb`` and the synthesized audio as
    ``<utt_id>.syn.emb``; synthesis is bit-identical for a seed, so the latter can be made
    beforehand from ``svs synth`` output.
    """

    def __init__(self, embedding_dir: Union[str, Path], dim: int):
        if dim < 1:
            raise InvalidArgumentError(f"embedding dimension must be positive, got {dim}")
        self.embedding_dir = Path(embedding_dir)
        self.dim = dim

    def embed(self, w: Waveform, utterance_id: Optional[str] = None) -> np.ndarray:
        if not utterance_id:
            raise InvalidArgumentError("external embedder needs an utterance id")
        path = self.embedding_dir / f"{utterance_id}.emb"
        stack = read_feature_file(path)
        if stack.n_layers != 1 or stack.n_frames != 1 or stack.dim != self.dim:
            raise FeatureFormatError(
                f"{path}: expected a 1 x 1 x {self.dim} embedding, got "
                f"{stack.n_layers} x {stack.n_frames} x {stack.dim}"
            )
        return stack.layers.reshape(-1).astype(np.float64)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateEmbeddingError("speaker embedding has zero norm")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def secs(a: Waveform, b: Waveform, embedder: SpeakerEmbedder) -> float:
    return cosine(embedder.embed(a), embedder.embed(b))


# ============================================================================
# Corpus evaluation
# ============================================================================

ROW_COLUMNS = ["utt_id", "speaker", "mcd_db", "f0_rmse", "st_acc", "secs", "error"]


@dataclass
class EvalOptions:
    seed: int = 0
    noise_scale: float = 1.0
    workers: int = 1
    embedding_dump: Optional[Path] = None
    embedder: Optional[SpeakerEmbedder] = None
    progress: bool = False


@dataclass
class MetricsReport:
    mcd_db: float
    f0_rmse: float
    st_acc: float
    secs: Optional[float]
    n_utterances: int
    n_failed: int
    rows: pd.DataFrame

    def summary(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "n_utterances": self.n_utterances,
            "n_failed": self.n_failed,
            "mcd_db": self.mcd_db,
            "f0_rmse": self.f0_rmse,
            "f0_rmse_log_base": "e",
            "st_acc": self.st_acc,
        }
        if self.secs is not None:
            out["secs"] = self.secs
        return out


def _evaluate_one(
    model: SVSModel,
    inventory,
    utt: Utterance,
    options: EvalOptions,
    embedder: SpeakerEmbedder,
    with_secs: bool,
):
    row = {c: np.nan for c in ROW_COLUMNS}
    row.update(utt_id=utt.utterance_id, speaker=utt.speaker_id, error="")
    embedding = None
    try:
        score = load_score(utt.score_path, inventory, utt.utterance_id, utt.speaker_id)
        ref = read_wav(utt.wav_path)
        if ref.sample_rate_hz != model.audio.sample_rate_hz:
            ref = resample(ref, model.audio.sample_rate_hz)
        syn = synthesize(model, score, utt.speaker_id, options.seed, options.noise_scale)
        syn_embedding = embedder.embed(syn, f"{utt.utterance_id}.syn")
        if with_secs:
            row["secs"] = cosine(embedder.embed(ref, utt.utterance_id), syn_embedding)
        row["mcd_db"] = mcd(ref, syn, model.audio)
        ref_f0, syn_f0 = extract_f0(ref, model.audio), extract_f0(syn, model.audio)
        row["f0_rmse"] = f0_rmse_from_tracks(ref_f0, syn_f0)
        row["st_acc"] = semitone_accuracy_from_tracks(ref_f0, syn_f0)
        embedding = syn_embedding
    except (SVSError, OSError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        embedding = None
    return row, embedding


def evaluate_corpus(
    manifest: Union[str, Path],
    checkpoint: Union[str, Path],
    options: Optional[EvalOptions] = None,
) -> MetricsReport:
    """Synthesize every manifest utterance from its score and score it against the recording."""
    options = options or EvalOptions()
    state = load_checkpoint(checkpoint)
    model = state.model.eval()
    inventory = state.phonemes
    utterances = read_manifest(manifest)
    with_secs = len({u.speaker_id for u in utterances}) > 1
    embedder = options.embedder or MelStatsEmbedder()

    def run(utt):
        return _evaluate_one(model, inventory, utt, options, embedder, with_secs)

    with ThreadPoolExecutor(max_workers=max(1, options.workers)) as pool:
        bar = tqdm(
            pool.map(run, utterances),
            total=len(utterances),
            desc="evaluating",
            disable=not options.progress,
            leave=False,
        )
        results = list(bar)

    rows = pd.DataFrame([r for r, _ in results], columns=ROW_COLUMNS)
    ok = rows[rows["error"] == ""]
    n_failed = len(rows) - len(ok)
    for r in rows[rows["error"] != ""].itertuples():
        log.warning("utterance %s failed: %s", r.utt_id, r.error)

    def mean(col):
        return float(ok[col].mean()) if len(ok) else float("nan")

    report = MetricsReport(
        mcd_db=mean("mcd_db"),
        f0_rmse=mean("f0_rmse"),
        st_acc=mean("st_acc"),
        secs=mean("secs") if with_secs else None,
        n_utterances=len(ok),
        n_failed=n_failed,
        rows=rows,
    )

    if options.embedding_dump is not None:
        kept = [(utt, emb) for utt, (_, emb) in zip(utterances, results) if emb is not None]
        write_embedding_dump(options.embedding_dump, kept)
    return report


def write_embedding_dump(path: Union[str, Path], items) -> Path:
    """Binary stack (L=1, one frame per utterance) plus a ``<path>.tsv`` index sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if items:
        values = np.stack([emb for _, emb in items])[None, :, :]
    else:
        values = np.zeros((1, 0, 1))
    write_feature_file(path, SSLFeatureStack(values, 0.0, "embeddings"))
    index = pd.DataFrame(
        [(i, utt.utterance_id, utt.speaker_id) for i, (utt, _) in enumerate(items)],
        columns=["index", "utt_id", "speaker"],
    )
    index.to_csv(path.with_name(path.name + ".tsv"), sep="\t", index=False)
    return path


def write_report(report: MetricsReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"{k}={v}" for k, v in report.summary().items()]
    table = report.rows.to_csv(sep="\t", index=False, float_format="%.6f", na_rep="nan")
    path.write_text("\n".join(header) + "\n\n" + table, encoding="utf-8")
    return path


def read_report(path: Union[str, Path]) -> Dict[str, str]:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            break
        key, _, value = line.partition("=")
        values[key] = value
    return values
