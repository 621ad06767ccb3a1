import numpy as np
import pytest

from svs.errors import DegenerateDurationError, InvalidArgumentError, ScoreParseError
from svs.score import (
    REST_PITCH,
    MusicScore,
    PhonemeInventory,
    ScoreEvent,
    event_frame_counts,
    format_score,
    length_regulate,
    load_score,
    midi_to_hz,
    parse_score,
)

INVENTORY = PhonemeInventory(["SP", "a", "i", "u"])


def score_of(*durations, pitch=69):
    return MusicScore("u", tuple(ScoreEvent(1, pitch, d) for d in durations))


# ============================================================================
# Parsing
# ============================================================================


def test_single_line():
    score = parse_score("a\t69\t0.5", INVENTORY)
    assert len(score.events) == 1
    e = score.events[0]
    assert INVENTORY.symbols[e.phoneme_id] == "a"
    assert e.midi_pitch == 69 and e.duration_sec == 0.5


def test_header_comments_and_order():
    text = "phoneme\tmidi\tduration\n# verse\na\t60\t0.2\nSP\tREST\t0.1\ni\t62\t0.3\n"
    score = parse_score(text, INVENTORY, "utt", speaker_id=1)
    assert [INVENTORY.symbols[e.phoneme_id] for e in score.events] == ["a", "SP", "i"]
    assert [e.midi_pitch for e in score.events] == [60, REST_PITCH, 62]
    assert score.speaker_id == 1
    assert score.total_duration_sec == pytest.approx(0.6)


@pytest.mark.parametrize(
    "text, line",
    [
        ("a\t69\t-0.1", 1),
        ("a\t69\t0.5\nzz\t60\t0.2", 2),
        ("a\t69", 1),
        ("a\t128\t0.2", 1),
        ("a\tC4\t0.2", 1),
    ],
)
def test_parse_errors_carry_line_number(text, line):
    with pytest.raises(ScoreParseError) as info:
        parse_score(text, INVENTORY)
    assert info.value.line_number == line


def test_empty_file():
    with pytest.raises(InvalidArgumentError):
        parse_score("  \n", INVENTORY)
    with pytest.raises(InvalidArgumentError):
        parse_score("phoneme\tmidi\tduration\n", INVENTORY)


def test_too_long_score():
    with pytest.raises(InvalidArgumentError):
        score_of(20.0, 11.0)


def test_format_then_load(tmp_path):
    score = parse_score("a\t69\t0.5\nSP\t-1\t0.25\n", INVENTORY, "x")
    path = tmp_path / "song.txt"
    path.write_text(format_score(score, INVENTORY), encoding="utf-8")
    again = load_score(path, INVENTORY)
    assert again.events == score.events
    assert again.utterance_id == "song"


def test_inventory_file(tmp_path):
    INVENTORY.save(tmp_path / "phonemes.txt")
    loaded = PhonemeInventory.load(tmp_path / "phonemes.txt")
    assert loaded.symbols == INVENTORY.symbols
    assert loaded.index("u") == 3
    with pytest.raises(InvalidArgumentError):
        PhonemeInventory(["a", "a"])


# ============================================================================
# Length regulation
# ============================================================================


def test_one_event_five_frames():
    fs = length_regulate(score_of(0.1), 50.0)
    assert fs.n_frames == 5
    assert np.all(fs.phoneme_per_frame == 1) and np.all(fs.pitch_per_frame == 69)


def test_cumulative_rounding_preserves_total():
    counts = event_frame_counts([0.03, 0.03, 0.04], 50.0)
    assert counts.sum() == 5
    assert length_regulate(score_of(0.03, 0.03, 0.04), 50.0).n_frames == 5


def test_events_in_order():
    score = MusicScore("u", (ScoreEvent(1, 60, 0.5), ScoreEvent(2, 62, 0.5)))
    fs = length_regulate(score, 50.0)
    assert fs.n_frames == 50
    assert np.all(fs.phoneme_per_frame[:25] == 1) and np.all(fs.phoneme_per_frame[25:] == 2)
    assert np.all(fs.pitch_per_frame[:25] == 60) and np.all(fs.pitch_per_frame[25:] == 62)


def labeled_score(durations):
    # distinct phoneme and pitch per event, so every frame names its event
    return MusicScore("u", tuple(ScoreEvent(i + 1, 40 + i, d) for i, d in enumerate(durations)))


def blocks(labels):
    change = np.flatnonzero(np.diff(labels)) + 1
    return [(int(run[0]), len(run)) for run in np.split(labels, change)]


def test_frame_total_is_rounded_total_duration(rng):
    for _ in range(200):
        ms = rng.integers(20, 800, size=int(rng.integers(1, 12)))
        if ms.sum() % 20 == 10:
            ms[-1] += 1  # keep the total off an exact half frame
        counts = event_frame_counts(ms / 1000.0, 50.0)
        # 50 fps: total frames = round_half_up(sum_ms / 20)
        assert counts.sum() == (ms.sum() + 10) // 20


def test_reversed_events_on_frame_grid_reverse_labels_exactly():
    durations = [0.1, 0.04, 0.3, 0.02, 0.18]
    forward = length_regulate(labeled_score(durations), 50.0)
    backward = length_regulate(labeled_score(durations[::-1]), 50.0)
    relabel = {i + 1: len(durations) - i for i in range(len(durations))}
    flipped = np.array([relabel[p] for p in forward.phoneme_per_frame[::-1]])
    np.testing.assert_array_equal(backward.phoneme_per_frame, flipped)


def test_reversed_events_reverse_blocks(rng):
    for _ in range(50):
        durations = rng.uniform(0.03, 0.6, size=int(rng.integers(2, 9)))
        forward = blocks(length_regulate(labeled_score(durations), 50.0).pitch_per_frame)
        backward = blocks(length_regulate(labeled_score(durations[::-1]), 50.0).pitch_per_frame)
        n = len(durations)
        assert [40 + n - 1 - (p - 40) for p, _ in forward[::-1]] == [p for p, _ in backward]
        # cumulative rounding moves each block by at most one frame
        assert all(abs(a[1] - b[1]) <= 1 for a, b in zip(forward[::-1], backward))


def test_degenerate_event_is_named():
    with pytest.raises(DegenerateDurationError) as info:
        length_regulate(score_of(0.1, 0.001, 0.1), 50.0)
    assert info.value.event_index == 1


def test_midi_to_hz():
    np.testing.assert_allclose(midi_to_hz(np.array([69, 57, REST_PITCH])), [440.0, 220.0, 0.0])
