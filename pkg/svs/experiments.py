"""Desk-scale experiments: overfit smoke run, speaker separation, and their plots."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .config import ExperimentConfig  # noqa: E402
from .data import make_synthetic_corpus, n_speakers_of  # noqa: E402
from .errors import InvalidArgumentError  # noqa: E402
from .metrics import MelStatsEmbedder, SpeakerEmbedder, secs  # noqa: E402
from .model import synthesize  # noqa: E402
from .train import (  # noqa: E402
    BatchSchedule,
    TrainState,
    end_epoch,
    init_state,
    prepare_training,
    save_checkpoint,
    train_step,
)

EARLY_WINDOW = (10, 60)
LATE_WINDOW = (450, 500)


def window_mean(values: Sequence[float], window) -> float:
    """Mean over 1-based steps ``window[0]..window[1]`` inclusive."""
    lo, hi = window
    return float(np.mean(values[lo - 1 : hi]))


# ==============================================================================
# Overfit smoke run
# ==============================================================================


@dataclass
class OverfitResult:
    mel_l1: List[float]
    early_mel: float
    late_mel: float
    logit_shift: float
    checkpoint: Path
    corpus_manifest: Path
    state: TrainState = field(repr=False)

    @property
    def mel_ratio(self) -> float:
        return self.late_mel / self.early_mel

    @property
    def passed(self) -> bool:
        return self.mel_ratio <= 0.5 and self.logit_shift >= 1e-3


def run_overfit_experiment(
    out_dir: Union[str, Path],
    steps: int = 500,
    seed: int = 7,
    n_utts: int = 4,
    n_speakers: int = 2,
    cfg: Optional[ExperimentConfig] = None,
    verbose: bool = True,
) -> OverfitResult:
    """Train on a tiny synthetic corpus and check the mel loss falls and layer weights move."""
    out_dir = Path(out_dir)
    manifest = make_synthetic_corpus(seed, n_utts, n_speakers, out_dir / "corpus")
    cfg = cfg or ExperimentConfig.desk()
    examples, inventory, provider = prepare_training(cfg, manifest)
    state = init_state(
        cfg, inventory, n_speakers_of([e.utterance for e in examples]), provider.geometry, provider.name
    )
    t = state.config.train
    schedule = BatchSchedule(examples, t.batch_size, t.seed)
    initial_logits = state.model.layer_weights.logits.detach().clone()

    if verbose:
        print("\n" + "=" * 70)
        print(f"OVERFIT: {steps} steps on {len(examples)} synthetic utterances (seed {seed})")
        print("=" * 70)

    mel = []
    for step in range(steps):
        epoch, index = divmod(step, t.iterations_per_epoch)
        _, losses = train_step(schedule.batch(epoch, index), state, provider)
        mel.append(losses.mel_l1)
        if index == t.iterations_per_epoch - 1:
            end_epoch(state)
        if verbose and (step + 1) % 50 == 0:
            print(f"  step {step + 1:4d}: mel={losses.mel_l1:.4f} kl={losses.kl:.4f} "
                  f"adv_g={losses.adv_g:.4f} adv_d={losses.adv_d:.4f}")

    shift = float((state.model.layer_weights.logits.detach() - initial_logits).abs().max())
    checkpoint = save_checkpoint(state, out_dir / "overfit.pt")
    early = window_mean(mel, EARLY_WINDOW) if steps >= EARLY_WINDOW[1] else float(np.mean(mel[:10]))
    late = window_mean(mel, LATE_WINDOW) if steps >= LATE_WINDOW[1] else float(np.mean(mel[-10:]))
    result = OverfitResult(mel, early, late, shift, checkpoint, manifest, state)
    plot_loss_curve(mel, out_dir / "overfit_mel_l1.png")

    if verbose:
        status = "✓" if result.passed else "✗"
        print(f"\n  mel early={early:.4f} late={late:.4f} ratio={result.mel_ratio:.3f}")
        print(f"  layer-weight logits moved {shift:.2e} (L-inf) {status}")
    return result


# ==============================================================================
# Speaker separation
# ==============================================================================


@dataclass
class SeparationResult:
    same: List[float]
    cross: List[float]

    @property
    def same_mean(self) -> float:
        return float(np.mean(self.same))

    @property
    def cross_mean(self) -> float:
        return float(np.mean(self.cross))

    @property
    def passed(self) -> bool:
        return self.same_mean > self.cross_mean


def speaker_separation_experiment(
    state: TrainState,
    scores: Sequence,
    n_pairs: int = 4,
    seed: int = 0,
    embedder: Optional[SpeakerEmbedder] = None,
    verbose: bool = True,
) -> SeparationResult:
    """SECS of two different scores sung by one speaker vs. by two different speakers."""
    embedder = embedder or MelStatsEmbedder()
    n_speakers = state.config.model.n_speakers
    if n_speakers < 2:
        raise InvalidArgumentError("speaker separation needs a model with at least two speakers")
    model = state.model
    same, cross = [], []
    for k in range(n_pairs):
        a, b = scores[k % len(scores)], scores[(k + 1) % len(scores)]
        s = k % n_speakers
        other = (s + 1) % n_speakers
        wa = synthesize(model, a, s, seed)
        same.append(secs(wa, synthesize(model, b, s, seed), embedder))
        cross.append(secs(wa, synthesize(model, b, other, seed), embedder))
    result = SeparationResult(same, cross)
    if verbose:
        print("\n" + "=" * 70)
        print("SPEAKER SEPARATION (SECS, desk embedder)")
        print("=" * 70)
        print(pd.DataFrame({"same": same, "cross": cross}).to_string(float_format="%.4f"))
        status = "✓" if result.passed else "✗"
        print(f"\n  mean same={result.same_mean:.4f} cross={result.cross_mean:.4f} {status}")
    return result


# ==============================================================================
# Plots
# ==============================================================================


def plot_loss_curve(values: Sequence[float], path: Union[str, Path]) -> Path:
    steps = np.arange(1, len(values) + 1)
    plt.figure(figsize=(10, 6))
    plt.semilogy(steps, values, color="steelblue", alpha=0.5, label="mel L1")
    if len(values) >= 25:
        smooth = pd.Series(values).rolling(25).mean()
        plt.semilogy(steps, smooth, color="darkred", label="running mean (25)")
    for lo, hi in (EARLY_WINDOW, LATE_WINDOW):
        if hi <= len(values):
            plt.axvspan(lo, hi, color="grey", alpha=0.15)
    plt.xlabel("Step", fontsize=12)
    plt.ylabel("Mel L1", fontsize=12)
    plt.title("Overfit run: mel reconstruction loss", fontsize=14)
    plt.grid(True, alpha=0.3)
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close()
    return Path(path)


def plot_layer_weights(alphas: Sequence[float], path: Union[str, Path]) -> Path:
    alphas = np.asarray(alphas)
    plt.figure(figsize=(10, 6))
    plt.bar(np.arange(len(alphas)), alphas, color="steelblue", alpha=0.7)
    plt.axhline(1.0 / len(alphas), color="darkred", linestyle="--", label="uniform")
    plt.xlabel("Layer", fontsize=12)
    plt.ylabel("Weight (softmax)", fontsize=12)
    plt.title("Learned SSL layer weights", fontsize=14)
    plt.grid(True, alpha=0.3, axis="y")
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close()
    return Path(path)
