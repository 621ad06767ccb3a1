"""Adversarial VAE training: step function, schedule, checkpoints, and the epoch loop.

One ``train_step`` = generator forward, one discriminator update on the detached output, then
one generator update. All randomness inside a step (segment offsets, posterior noise) comes
from a ``torch.Generator`` seeded by ``(seed, iteration)``, so a resumed run replays exactly
what the unbroken run would have done.
"""

import collections
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import AdamW
from torch.optim.lr_scheduler import ExponentialLR
from tqdm import tqdm

from .config import ExperimentConfig
from .data import (
    Batch,
    Example,
    batches_per_pass,
    default_inventory_path,
    load_batches,
    load_corpus,
    n_speakers_of,
    read_manifest,
)
from .errors import CheckpointFormatError, DataError, InvalidArgumentError, NonFiniteLossError
from .gan import (
    Discriminators,
    LossBreakdown,
    compose_generator_loss,
    discriminator_adv_loss,
    feature_matching,
    generator_adv_loss,
    kl_loss,
    mel_l1,
)
from .model import SVSModel, crop_frames, reparameterize
from .score import PhonemeInventory
from .sslfront import FeatureProvider, ProviderGeometry, build_provider, fused_batch

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "V2P1"
CHECKPOINT_VERSION = 1
LOSS_ROLES = ("kl", "mel_l1", "adv_d", "adv_g", "feat_match", "total_g")


# ============================================================================
# State
# ============================================================================


@dataclass
class TrainState:
    config: ExperimentConfig
    model: SVSModel
    discriminators: Discriminators
    opt_g: AdamW
    opt_d: AdamW
    sched_g: ExponentialLR
    sched_d: ExponentialLR
    meta: Dict
    iteration: int = 0
    epoch: int = 0
    history: Deque[Dict[str, float]] = field(default_factory=collections.deque)

    @property
    def lr(self) -> float:
        return self.opt_g.param_groups[0]["lr"]

    @property
    def phonemes(self) -> PhonemeInventory:
        return PhonemeInventory(self.meta["phonemes"])


def _meta(inventory: PhonemeInventory, n_speakers: int, geometry: Optional[ProviderGeometry], name: str) -> Dict:
    provider = {"name": name}
    if geometry is not None:
        provider.update(
            layers=geometry.n_layers,
            dim=geometry.dim,
            input_rate_hz=geometry.input_rate_hz,
            frame_rate_hz=float(geometry.frame_rate_hz),
        )
    return {"phonemes": list(inventory.symbols), "n_speakers": n_speakers, "provider": provider}


def init_state(
    cfg: ExperimentConfig,
    inventory: PhonemeInventory,
    n_speakers: int,
    geometry: Optional[ProviderGeometry] = None,
    provider_name: str = "",
    dtype: torch.dtype = torch.float32,
) -> TrainState:
    """Fresh model, discriminators and optimizers; parameter init is seeded by ``train.seed``."""
    cfg = cfg.with_values({"model.n_phonemes": len(inventory), "model.n_speakers": n_speakers})
    fused = cfg.model.posterior_input == "fused"
    if fused and geometry is None:
        raise InvalidArgumentError("fused posterior input needs the provider geometry")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.train.seed)
        model = SVSModel(
            cfg.model,
            cfg.audio,
            ssl_layers=geometry.n_layers if fused else 1,
            ssl_dim=geometry.dim if fused else 0,
        ).to(dtype)
        discriminators = Discriminators(cfg.model).to(dtype)

    t = cfg.train
    opt_g = AdamW(model.parameters(), t.lr, betas=tuple(t.betas), eps=t.eps, weight_decay=t.weight_decay)
    opt_d = AdamW(
        discriminators.parameters(), t.lr, betas=tuple(t.betas), eps=t.eps, weight_decay=t.weight_decay
    )
    return TrainState(
        config=cfg,
        model=model,
        discriminators=discriminators,
        opt_g=opt_g,
        opt_d=opt_d,
        sched_g=ExponentialLR(opt_g, gamma=t.lr_gamma),
        sched_d=ExponentialLR(opt_d, gamma=t.lr_gamma),
        meta=_meta(inventory, n_speakers, geometry if fused else None, provider_name),
        history=collections.deque(maxlen=t.history_size),
    )


def step_generator(seed: int, iteration: int) -> torch.Generator:
    state = np.random.SeedSequence([seed, iteration]).generate_state(1, dtype=np.uint64)[0]
    return torch.Generator().manual_seed(int(state))


# ============================================================================
# Loss computation
# ============================================================================


def posterior_input(
    model: SVSModel, batch: Batch, provider: Optional[FeatureProvider]
) -> torch.Tensor:
    """Fused ``[r ; m]`` (or ``m`` alone in the mel baseline), ``B x T x dim``."""
    if not model.fused:
        return batch.mel
    if provider is None:
        raise InvalidArgumentError("fused posterior input needs a feature provider")
    stacks = [
        torch.from_numpy(provider.extract_resampled(e.waveform, e.utterance_id).layers)
        for e in batch.examples
    ]
    return fused_batch(stacks, batch.mel, batch.lengths, model.layer_weights)


def segment_offsets(lengths: torch.Tensor, segment_frames: int, gen: torch.Generator) -> Tuple[torch.Tensor, int]:
    seg = min(segment_frames, int(lengths.min()))
    room = (lengths - seg + 1).double()
    start = torch.floor(torch.rand(lengths.shape[0], generator=gen, dtype=torch.float64) * room)
    return start.long(), seg


@dataclass
class GeneratorOutput:
    kl: torch.Tensor
    mel_l1: torch.Tensor
    y_hat: torch.Tensor  # decoded segment
    y: torch.Tensor  # matching target segment


def generator_forward(
    model: SVSModel,
    batch: Batch,
    e: torch.Tensor,
    noise: torch.Tensor,
    start: torch.Tensor,
    seg: int,
    cfg: ExperimentConfig,
) -> GeneratorOutput:
    """Posterior path + decoder on one segment per item; no randomness of its own."""
    hop = cfg.audio.hop
    prior = model.encode_prior(batch.phonemes, batch.pitch, batch.speakers, batch.mask)
    post = model.encode_posterior(e, batch.speakers, batch.mask)
    kl = kl_loss(post, prior, batch.mask)

    z = reparameterize(post, noise)
    y_hat = model.decode(crop_frames(z.z, start, seg), batch.speakers, crop_frames(batch.pitch, start, seg))
    y = crop_frames(batch.audio, start * hop, seg * hop)
    return GeneratorOutput(kl, mel_l1(y_hat, y, cfg.audio), y_hat, y)


def pad_for_discriminators(y: torch.Tensor, discriminators: Discriminators) -> torch.Tensor:
    """Right-pad segments shorter than the largest discriminator frame with zeros."""
    short = discriminators.min_samples() - y.shape[-1]
    return F.pad(y, (0, short)) if short > 0 else y


def generator_terms(
    out: GeneratorOutput, discriminators: Discriminators, cfg: ExperimentConfig
) -> Dict[str, torch.Tensor]:
    adv_g = fm = out.mel_l1.new_zeros(())
    if cfg.loss.adversarial:
        y, y_hat = (pad_for_discriminators(v, discriminators) for v in (out.y, out.y_hat))
        real, fake = discriminators(y), discriminators(y_hat)
        adv_g = generator_adv_loss(fake)
        fm = feature_matching(real, fake)
    total = compose_generator_loss(out.kl, out.mel_l1, adv_g, fm, cfg.loss)
    return {"kl": out.kl, "mel_l1": out.mel_l1, "adv_g": adv_g, "feat_match": fm, "total_g": total}


def generator_loss(
    model: SVSModel,
    discriminators: Discriminators,
    batch: Batch,
    e: torch.Tensor,
    noise: torch.Tensor,
    start: torch.Tensor,
    seg: int,
    cfg: ExperimentConfig,
) -> Dict[str, torch.Tensor]:
    """Every generator loss term as a pure function of parameters and explicit randomness."""
    return generator_terms(generator_forward(model, batch, e, noise, start, seg, cfg), discriminators, cfg)


def _check_finite(values: Dict[str, torch.Tensor], step: int) -> None:
    for role in LOSS_ROLES:
        if role in values and not torch.isfinite(values[role]).all():
            raise NonFiniteLossError(role, step)


def discriminator_step(state: TrainState, y: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    """Update the discriminators only; the generator output is detached."""
    discs = state.discriminators
    y, y_hat = pad_for_discriminators(y, discs), pad_for_discriminators(y_hat.detach(), discs)
    adv_d = discriminator_adv_loss(discs(y), discs(y_hat))
    _check_finite({"adv_d": adv_d}, state.iteration)
    state.opt_d.zero_grad(set_to_none=True)
    adv_d.backward()
    state.opt_d.step()
    return adv_d.detach()


def train_step(
    batch: Batch, state: TrainState, provider: Optional[FeatureProvider] = None
) -> Tuple[TrainState, LossBreakdown]:
    cfg = state.config
    gen = step_generator(cfg.train.seed, state.iteration)
    start, seg = segment_offsets(batch.lengths, cfg.train.segment_frames, gen)
    e = posterior_input(state.model, batch, provider)
    noise = torch.randn(
        (e.shape[0], e.shape[1], cfg.model.latent_dim), generator=gen, dtype=batch.mel.dtype
    )

    out = generator_forward(state.model, batch, e, noise, start, seg, cfg)
    _check_finite({"kl": out.kl, "mel_l1": out.mel_l1}, state.iteration)
    adv_d = out.mel_l1.new_zeros(())
    if cfg.loss.adversarial:
        adv_d = discriminator_step(state, out.y, out.y_hat)
    terms = generator_terms(out, state.discriminators, cfg)
    _check_finite(terms, state.iteration)

    state.opt_g.zero_grad(set_to_none=True)
    terms["total_g"].backward()
    state.opt_g.step()

    losses = LossBreakdown(
        kl=float(terms["kl"]),
        mel_l1=float(terms["mel_l1"]),
        adv_g=float(terms["adv_g"]),
        adv_d=float(adv_d),
        feat_match=float(terms["feat_match"]),
        total_g=float(terms["total_g"]),
        total_d=float(adv_d),
    )
    state.iteration += 1
    state.history.append({"step": state.iteration, **losses.as_dict(), "lr": state.lr})
    return state, losses


def format_log_line(step: int, losses: LossBreakdown, lr: float) -> str:
    return (
        f"step={step} kl={losses.kl:.6g} mel={losses.mel_l1:.6g} adv_g={losses.adv_g:.6g} "
        f"adv_d={losses.adv_d:.6g} fm={losses.feat_match:.6g} lr={lr:.6g}"
    )


def end_epoch(state: TrainState) -> None:
    state.sched_g.step()
    state.sched_d.step()
    state.epoch += 1


# ============================================================================
# Checkpoints
# ============================================================================


def save_checkpoint(state: TrainState, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_lines(),
        "meta": state.meta,
        "generator": state.model.state_dict(),
        "discriminators": state.discriminators.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "sched_g": state.sched_g.state_dict(),
        "sched_d": state.sched_d.state_dict(),
        "iteration": state.iteration,
        "epoch": state.epoch,
        "history": list(state.history),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def _geometry_from_meta(meta: Dict) -> Optional[ProviderGeometry]:
    p = meta.get("provider", {})
    if "layers" not in p:
        return None
    return ProviderGeometry(int(p["layers"]), int(p["dim"]), int(p["input_rate_hz"]), float(p["frame_rate_hz"]))


def load_checkpoint(path: Union[str, Path]) -> TrainState:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointFormatError(f"{path}: not a readable checkpoint ({exc})") from None
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, expected {CHECKPOINT_MAGIC!r}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {payload.get('version')!r}")
    try:
        cfg = ExperimentConfig.from_lines(payload["config"], source=f"{path}[config]")
        meta = payload["meta"]
        state = init_state(
            cfg,
            PhonemeInventory(meta["phonemes"]),
            int(meta["n_speakers"]),
            _geometry_from_meta(meta),
            meta.get("provider", {}).get("name", ""),
        )
        state.model.load_state_dict(payload["generator"])
        state.discriminators.load_state_dict(payload["discriminators"])
        state.opt_g.load_state_dict(payload["opt_g"])
        state.opt_d.load_state_dict(payload["opt_d"])
        state.sched_g.load_state_dict(payload["sched_g"])
        state.sched_d.load_state_dict(payload["sched_d"])
        state.iteration = int(payload["iteration"])
        state.epoch = int(payload["epoch"])
        state.history.extend(payload["history"])
    except (KeyError, RuntimeError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: incomplete or inconsistent checkpoint ({exc})") from None
    return state


# ============================================================================
# Training loop
# ============================================================================


class BatchSchedule:
    """Iteration -> batch; each pass over the data is reshuffled from (seed, epoch, pass)."""

    def __init__(self, examples: Sequence[Example], batch_size: int, seed: int):
        self.examples = list(examples)
        self.batch_size = batch_size
        self.seed = seed
        self.per_pass = batches_per_pass(len(self.examples), batch_size)
        self._key: Optional[Tuple[int, int]] = None
        self._batches: List[Batch] = []

    def batch(self, epoch: int, index: int) -> Batch:
        pass_index, position = divmod(index, self.per_pass)
        if self._key != (epoch, pass_index):
            self._batches = load_batches(self.examples, self.batch_size, self.seed, epoch, pass_index)
            self._key = (epoch, pass_index)
        return self._batches[position]


def prepare_training(
    cfg: ExperimentConfig,
    manifest: Union[str, Path],
    inventory_path: Union[str, Path, None] = None,
    progress: bool = False,
) -> Tuple[List[Example], PhonemeInventory, Optional[FeatureProvider]]:
    """Load and validate everything a run needs; raises before any step is taken."""
    utterances = read_manifest(manifest)
    inventory_path = inventory_path or cfg.train.inventory or default_inventory_path(manifest)
    if not inventory_path:
        raise DataError("no phoneme inventory: set train.inventory or put phonemes.txt next to the manifest")
    inventory = PhonemeInventory.load(inventory_path)
    examples = load_corpus(utterances, inventory, cfg.audio, progress=progress)

    provider = None
    if cfg.model.posterior_input == "fused":
        provider = build_provider(cfg.ssl)
        for ex in tqdm(examples, desc="checking features", disable=not progress, leave=False):
            try:
                provider.extract_resampled(ex.waveform, ex.utterance_id)
            except Exception as exc:
                raise DataError(f"feature extraction failed: {exc}", ex.utterance_id) from exc
    return examples, inventory, provider


def run_training(
    cfg: ExperimentConfig,
    manifest: Union[str, Path],
    out_dir: Union[str, Path],
    resume: Union[str, Path, None] = None,
    inventory_path: Union[str, Path, None] = None,
    progress: bool = False,
) -> Path:
    """Train for ``train.epochs`` epochs; returns the path of the final checkpoint."""
    out_dir = Path(out_dir)
    examples, inventory, provider = prepare_training(cfg, manifest, inventory_path, progress)
    n_speakers = n_speakers_of([e.utterance for e in examples])

    if resume is not None:
        state = load_checkpoint(resume)
        state.config = state.config.with_values({"train.epochs": cfg.train.epochs})
        if n_speakers > state.config.model.n_speakers:
            raise DataError(
                f"manifest uses {n_speakers} speakers, checkpoint has {state.config.model.n_speakers}"
            )
        log.info("resuming from %s at iteration %d (epoch %d)", resume, state.iteration, state.epoch)
    else:
        geometry = provider.geometry if provider is not None else None
        state = init_state(cfg, inventory, n_speakers, geometry, provider.name if provider else "")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(state.config.to_text(), encoding="utf-8")
    t = state.config.train
    schedule = BatchSchedule(examples, t.batch_size, t.seed)

    final = out_dir / "final.pt"
    with open(out_dir / "train.log", "a", encoding="utf-8") as train_log:
        while state.epoch < t.epochs:
            epoch = state.epoch
            first = state.iteration - epoch * t.iterations_per_epoch
            bar = tqdm(
                range(first, t.iterations_per_epoch),
                desc=f"epoch {epoch + 1}/{t.epochs}",
                disable=not progress,
                leave=False,
            )
            t0 = time.perf_counter()
            for index in bar:
                lr = state.lr
                _, losses = train_step(schedule.batch(epoch, index), state, provider)
                line = format_log_line(state.iteration, losses, lr)
                train_log.write(line + "\n")
                log.debug(line)
                bar.set_postfix(mel=f"{losses.mel_l1:.3f}", kl=f"{losses.kl:.3f}")
            end_epoch(state)
            train_log.flush()
            ckpt = save_checkpoint(state, out_dir / f"epoch_{state.epoch:04d}.pt")
            log.info(
                "epoch %d done in %.1fs, lr=%.3g, checkpoint %s",
                state.epoch,
                time.perf_counter() - t0,
                state.lr,
                ckpt.name,
            )
    save_checkpoint(state, final)
    log.info("final checkpoint %s (iteration %d)", final, state.iteration)
    return final
