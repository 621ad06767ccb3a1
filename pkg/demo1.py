"""
============================================================
SVS Demo: Overfit Check and Speaker Separation
============================================================

WHAT THIS DEMONSTRATES:
-----------------------
The two desk-scale sanity experiments:

1. Overfit: 500 training steps on 4 synthetic utterances. The mean
   mel L1 over steps 450-500 must be at most half of the mean over
   steps 10-60, and the SSL layer-weight logits must have moved.
2. Speaker separation: synthesize pairs of scores with the same and
   with different speaker ids and compare speaker similarity (SECS).
   Same-speaker pairs should score higher than cross-speaker pairs.

HOW TO RUN:
-----------
    python demo1.py

WHAT YOU'LL SEE:
----------------
- Losses every 50 steps and a PASS/FAIL line for the overfit check
- A table of same/cross SECS values and their means
- overfit_mel_l1.png and layer_weights.png under demo1_out/

CUSTOMIZATION:
--------------
Edit the "PARAMETERS TO CHOOSE" section below to:
- Change the number of steps or the corpus seed
- Change the number of separation pairs

============================================================
"""

import os
import sys
from pathlib import Path

# Add this directory so Python sees svs as a package
this_dir = os.path.dirname(__file__)
sys.path.insert(0, this_dir)

from svs.data import read_manifest  # noqa: E402
from svs.experiments import (  # noqa: E402
    plot_layer_weights,
    run_overfit_experiment,
    speaker_separation_experiment,
)
from svs.score import load_score  # noqa: E402

if __name__ == "__main__":

    # ============================================================
    # PARAMETERS TO CHOOSE
    # ============================================================

    out_dir = Path("demo1_out")
    steps = 500
    seed = 7
    n_pairs = 4

    # ============================================================

    overfit = run_overfit_experiment(out_dir, steps=steps, seed=seed)
    print(f"\nOverfit check: {'PASS' if overfit.passed else 'FAIL'}")

    alphas = overfit.state.model.layer_weights.alphas().detach().double().numpy()
    plot_layer_weights(alphas, out_dir / "layer_weights.png")

    scores = [
        load_score(u.score_path, overfit.state.phonemes, u.utterance_id, u.speaker_id)
        for u in read_manifest(overfit.corpus_manifest)
    ]
    separation = speaker_separation_experiment(overfit.state, scores, n_pairs=n_pairs, seed=seed)
    print(f"\nSpeaker separation: {'PASS' if separation.passed else 'FAIL'}")
