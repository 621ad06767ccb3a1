import numpy as np
import pytest

from svs.data import read_manifest
from svs.dsp import extract_f0
from svs.errors import InvalidArgumentError
from svs.experiments import (
    plot_layer_weights,
    run_overfit_experiment,
    speaker_separation_experiment,
    window_mean,
)
from svs.model import synthesize
from svs.score import (
    REST_PITCH,
    MusicScore,
    PhonemeInventory,
    ScoreEvent,
    event_frame_counts,
    load_score,
)
from svs.train import init_state


def scores():
    return [
        MusicScore("a", (ScoreEvent(1, 60, 0.3), ScoreEvent(2, 64, 0.3))),
        MusicScore("b", (ScoreEvent(2, 67, 0.4), ScoreEvent(0, -1, 0.1), ScoreEvent(1, 62, 0.2))),
    ]


def mel_state(cfg, n_speakers):
    cfg = cfg.with_values({"model.posterior_input": "mel"})
    return init_state(cfg, PhonemeInventory(["SP", "a", "i"]), n_speakers)


def test_window_mean_is_inclusive_and_one_based():
    assert window_mean(list(range(1, 11)), (2, 4)) == pytest.approx(3.0)


def test_short_overfit_run_reports_and_plots(tiny_cfg, tmp_path):
    result = run_overfit_experiment(tmp_path, steps=4, n_utts=2, cfg=tiny_cfg, verbose=False)
    assert len(result.mel_l1) == 4 and all(np.isfinite(result.mel_l1))
    assert result.checkpoint.is_file()
    assert (tmp_path / "overfit_mel_l1.png").is_file()
    assert result.logit_shift > 0
    assert result.state.iteration == 4


def test_separation_needs_two_speakers(tiny_cfg):
    state = mel_state(tiny_cfg, 1)
    with pytest.raises(InvalidArgumentError):
        speaker_separation_experiment(state, scores(), verbose=False)


def test_separation_pairs(tiny_cfg):
    state = mel_state(tiny_cfg, 2)
    result = speaker_separation_experiment(state, scores(), n_pairs=2, verbose=False)
    assert len(result.same) == len(result.cross) == 2
    assert all(-1.0 <= v <= 1.0 for v in result.same + result.cross)


def test_layer_weight_plot(tmp_path):
    path = plot_layer_weights([0.1, 0.2, 0.7], tmp_path / "w.png")
    assert path.stat().st_size > 0


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    return run_overfit_experiment(tmp_path_factory.mktemp("overfit"), verbose=False)


def corpus_scores(result):
    return [
        load_score(u.score_path, result.state.phonemes, u.utterance_id, u.speaker_id)
        for u in read_manifest(result.corpus_manifest)
    ]


@pytest.mark.slow
def test_overfit_desk_run(trained):
    assert trained.mel_ratio <= 0.5
    assert trained.logit_shift >= 1e-3
    assert trained.passed


@pytest.mark.slow
def test_trained_model_separates_speakers(trained):
    result = speaker_separation_experiment(trained.state, corpus_scores(trained), n_pairs=4, verbose=False)
    assert result.same_mean > result.cross_mean


@pytest.mark.slow
def test_trained_model_sings_the_score_pitch(trained):
    model = trained.state.model
    checked = 0
    for score in corpus_scores(trained):
        f0 = extract_f0(synthesize(model, score, score.speaker_id, seed=0), model.audio)
        counts = event_frame_counts([e.duration_sec for e in score.events], model.audio.frame_rate_hz)
        ends = np.cumsum(counts)
        for event, end, count in zip(score.events, ends, counts):
            if event.midi_pitch == REST_PITCH or count < 3:
                continue
            # interior frames only; edges straddle the neighbouring event
            span = slice(end - count + 1, end - 1)
            voiced = f0.f0_hz[span][f0.voiced[span]]
            if voiced.size == 0:
                continue
            sung = 69.0 + 12.0 * np.log2(np.median(voiced) / 440.0)
            assert abs(sung - event.midi_pitch) <= 1.0, (score.utterance_id, event)
            checked += 1
    assert checked > 0
