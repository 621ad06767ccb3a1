"""
SVS Package: Singing Voice Synthesis with an SSL-Fused Posterior

A conditional-VAE singing synthesizer trained adversarially. The prior reads a music score
(phonemes, MIDI pitches, durations). The posterior reads the reference mel spectrogram concatenated
with a learned weighted sum of self-supervised (SSL) feature layers. A neural-source decoder turns
latents into a 24 kHz waveform.

CORE CONCEPT
============
The posterior sees richer information than the mel alone: every hidden layer of a frozen
speech/music SSL model, mixed by softmax-normalized learnable weights, is appended to each mel
frame. At inference only the prior and the decoder are used.

PIPELINE
========
1. make_synthetic_corpus(seed, n_utts, n_speakers, out_dir) → manifest.tsv
   Or point read_manifest() at a real corpus (wav + score per utterance)

2. parse_score(text, inventory) → MusicScore;  length_regulate(score, fps) → FrameScore
   Expand note events to frame-level phoneme and pitch tracks

3. build_provider(cfg.ssl).extract_resampled(waveform) → SSLFeatureStack (L × T × D)
   fuse(mel, weighted_sum(stack, weights)) → FusedEmbedding (T × (n_mels + D))

4. run_training(cfg, manifest, out_dir) → final.pt
   KL + 45·mel L1 + adversarial (MRSD, MPD, MSD) + 2·feature matching

5. synthesize(model, score, speaker, seed) → Waveform
   Prior sample → decoder; deterministic for a fixed seed

6. evaluate_corpus(manifest, checkpoint, options) → MetricsReport
   MCD (DTW-aligned), F0 RMSE, semitone accuracy, speaker-embedding cosine

EXAMPLE
=======
from svs import *

cfg = ExperimentConfig.desk()
manifest = make_synthetic_corpus(seed=7, n_utts=4, n_speakers=2, out_dir="runs/corpus")
final = run_training(cfg, manifest, "runs/train")
state = load_checkpoint(final)
score = load_score("song.txt", state.phonemes)
w = synthesize(state.model, score, speaker=0, seed=0)
write_wav("song.wav", w)

Command line: python -m svs --help
"""

# svs package initializer - exposes a clean surface for demo0.py / demo1.py
from .errors import (
    SVSError,
    InvalidArgumentError,
    ScoreParseError,
    DegenerateDurationError,
    NoVoicedOverlapError,
    DegenerateEmbeddingError,
    CheckpointFormatError,
    FeatureFormatError,
    NonFiniteLossError,
    DataError,
    InvariantViolationError,
)
from .config import ExperimentConfig, AudioConfig, ModelConfig, SSLConfig, LossConfig, TrainingConfig, load_config
from .dsp import Waveform, MelSpectrogram, F0Track, melspectrogram, resample, extract_f0, read_wav, write_wav
from .score import PhonemeInventory, MusicScore, ScoreEvent, FrameScore, parse_score, load_score, length_regulate
from .sslfront import (
    SSLFeatureStack,
    FeatureProvider,
    SyntheticProvider,
    ExternalProvider,
    CachedProvider,
    LayerWeights,
    build_provider,
    weighted_sum,
    align_frames,
    fuse,
)
from .model import SVSModel, GaussianParams, encode_prior, synthesize
from .gan import Discriminators, kl_loss, mel_l1, feature_matching, LossBreakdown
from .data import Utterance, read_manifest, write_manifest, load_corpus, collate, load_batches, make_synthetic_corpus
from .train import TrainState, init_state, train_step, save_checkpoint, load_checkpoint, run_training
from .metrics import mcd, f0_rmse, semitone_accuracy, secs, MelStatsEmbedder, EvalOptions, evaluate_corpus
from .experiments import run_overfit_experiment, speaker_separation_experiment
