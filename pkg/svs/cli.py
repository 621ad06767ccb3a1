"""Command-line entry point: ``svs <command> [--flags]``.

Exit status is 0 on success, 1 on a runtime failure (one diagnostic line on stderr) and 2 on a
usage error. Config-file values are overridden by ``--set section.key=value`` and then by the
dedicated flags.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import load_config
from .data import Utterance, default_inventory_path, load_example, read_manifest, write_manifest
from .dsp import read_wav, resample, write_wav
from .errors import DataError, InvalidArgumentError, SVSError
from .metrics import EvalOptions, ExternalEmbedder, evaluate_corpus, write_report
from .model import synthesize
from .score import PhonemeInventory, format_score, load_score
from .train import load_checkpoint, run_training

log = logging.getLogger("svs")


def _overrides(args: argparse.Namespace, flags: Dict[str, str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidArgumentError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    return out


# ============================================================================
# Commands
# ============================================================================


def cmd_prepare_data(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args, {}))
    utterances = read_manifest(args.manifest)
    inventory_path = args.inventory or cfg.train.inventory or default_inventory_path(args.manifest)
    if not inventory_path:
        raise DataError("no phoneme inventory: pass --inventory or put phonemes.txt next to the manifest")
    inventory = PhonemeInventory.load(inventory_path)

    out_dir = Path(args.out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "score").mkdir(parents=True, exist_ok=True)
    inventory.save(out_dir / "phonemes.txt")
    prepared: List[Utterance] = []
    for utt in utterances:
        ex = load_example(utt, inventory, cfg.audio)
        wav_path = out_dir / "wav" / f"{utt.utterance_id}.wav"
        score_path = out_dir / "score" / f"{utt.utterance_id}.txt"
        write_wav(wav_path, ex.waveform)
        score_path.write_text(format_score(ex.score, inventory), encoding="utf-8")
        prepared.append(Utterance(utt.utterance_id, wav_path, score_path, utt.speaker_id))
    manifest = write_manifest(out_dir / "manifest.tsv", prepared)
    log.info("prepared %d utterances", len(prepared))
    print(manifest)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    flags = {
        "epochs": "train.epochs",
        "iterations": "train.iterations_per_epoch",
        "batch_size": "train.batch_size",
        "seed": "train.seed",
        "posterior_input": "model.posterior_input",
    }
    cfg = load_config(args.config, _overrides(args, flags))
    final = run_training(
        cfg,
        args.manifest,
        args.out_dir,
        resume=args.resume,
        inventory_path=args.inventory,
        progress=args.progress,
    )
    print(final)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    score = load_score(args.score, state.phonemes, speaker_id=args.speaker)
    w = synthesize(state.model, score, args.speaker, args.seed, args.noise_scale)
    write_wav(args.out, w)
    log.info("wrote %s (%.2f s)", args.out, w.duration_sec)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dump = Path(args.embeddings) if args.embeddings else Path(str(args.out) + ".emb")
    if (args.embedder_dir is None) != (args.embedder_dim is None):
        raise InvalidArgumentError("--embedder-dir and --embedder-dim go together")
    embedder = None
    if args.embedder_dir is not None:
        embedder = ExternalEmbedder(args.embedder_dir, args.embedder_dim)
    options = EvalOptions(
        seed=args.seed,
        noise_scale=args.noise_scale,
        workers=args.workers,
        embedding_dump=dump,
        embedder=embedder,
        progress=args.progress,
    )
    report = evaluate_corpus(args.manifest, args.checkpoint, options)
    write_report(report, args.out)
    for key, value in report.summary().items():
        print(f"{key}={value}")
    if report.n_failed:
        log.error("%d of %d utterances failed", report.n_failed, report.n_failed + report.n_utterances)
        return 1
    return 0


def layer_weight_rows(alphas: Sequence[float]) -> List[str]:
    order = np.argsort(-np.asarray(alphas), kind="stable")
    return [f"layer={i} alpha={alphas[i]:.6f}" for i in order]


def cmd_inspect_weights(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    if state.model.layer_weights is None:
        raise InvalidArgumentError("checkpoint was trained with the mel-only posterior; no layer weights")
    with torch.no_grad():
        alphas = state.model.layer_weights.alphas().double().numpy()
    for row in layer_weight_rows(alphas):
        print(row)
    if args.plot:
        from .experiments import plot_layer_weights

        plot_layer_weights(alphas, args.plot)
    return 0


def cmd_resample(args: argparse.Namespace) -> int:
    write_wav(args.out, resample(read_wav(args.input), args.rate))
    return 0


def cmd_make_corpus(args: argparse.Namespace) -> int:
    from .data import make_synthetic_corpus

    print(make_synthetic_corpus(args.seed, args.n_utts, args.n_speakers, args.out_dir))
    return 0


# ============================================================================
# Parser
# ============================================================================


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat section.key = value config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svs", description="Singing voice synthesis with SSL-fused posterior")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("prepare-data", help="resample WAVs and validate scores into a clean corpus")
    _add_config_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--inventory")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train a model, writing checkpoints and train.log")
    _add_config_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--inventory")
    p.add_argument("--resume")
    p.add_argument("--epochs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--posterior-input", choices=["fused", "mel"])
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize a score with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--score", required=True)
    p.add_argument("--speaker", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="objective metrics over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", help="embedding dump path (default: <out>.emb)")
    p.add_argument("--embedder-dir", help="directory of <utt_id>.emb and <utt_id>.syn.emb files")
    p.add_argument("--embedder-dim", type=int, help="dimension of the external embeddings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-weights", help="print the learned layer weights, largest first")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--plot", help="also save a bar chart to this PNG")
    p.set_defaults(func=cmd_inspect_weights)

    p = sub.add_parser("resample", help="resample a 16-bit mono WAV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=int, required=True)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("make-corpus", help="write the synthetic harmonic corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-utts", type=int, default=4)
    p.add_argument("--n-speakers", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("svs")
    root.handlers[:] = [handler]
    root.setLevel(args.log_level)
    root.propagate = False

    try:
        return args.func(args)
    except (SVSError, OSError) as exc:
        print(f"svs {args.command}: error: {exc}", file=sys.stderr)
        return 1
