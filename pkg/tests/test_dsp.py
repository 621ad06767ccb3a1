import numpy as np
import torch
import pytest

from svs.config import AudioConfig
from svs.dsp import (
    MEL_FLOOR,
    F0Track,
    Waveform,
    extract_f0,
    frame_signal,
    melspectrogram,
    read_wav,
    resample,
    resample_tensor,
    resampled_length,
    write_wav,
)
from svs.errors import InvalidArgumentError

from conftest import sine


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


# ============================================================================
# Resampling
# ============================================================================


def test_resample_length_and_rate():
    out = resample(Waveform(np.zeros(24000), 24000), 16000)
    assert len(out) == 16000
    assert out.sample_rate_hz == 16000


def test_resample_identity_is_exact(rng):
    w = Waveform(rng.standard_normal(1234), 24000)
    out = resample(w, 24000)
    np.testing.assert_array_equal(out.samples, w.samples)


def test_resample_empty_and_bad_rate():
    assert len(resample(Waveform(np.zeros(0), 24000), 16000)) == 0
    with pytest.raises(InvalidArgumentError):
        resample(Waveform(np.zeros(10), 24000), 0)


def test_resample_keeps_440hz_peak_and_gain():
    out = resample(sine(440.0), 16000).samples
    spectrum = np.abs(np.fft.rfft(out))
    freqs = np.fft.rfftfreq(out.shape[0], 1 / 16000)
    assert abs(freqs[np.argmax(spectrum)] - 440.0) <= 1.0
    core = out[1000:-1000]
    gain_db = 20 * np.log10(rms(core) / np.sqrt(0.5))
    assert abs(gain_db) < 0.5


def test_resample_suppresses_aliasing():
    out = resample(sine(9000.0), 16000).samples
    attenuation_db = 20 * np.log10(rms(out[500:-500]) / np.sqrt(0.5))
    assert attenuation_db <= -35.0


def test_resample_is_linear(rng):
    w1, w2 = rng.standard_normal(4800), rng.standard_normal(4800)
    a, b = 0.7, -1.3
    lhs = resample(Waveform(a * w1 + b * w2, 24000), 16000).samples
    rhs = a * resample(Waveform(w1, 24000), 16000).samples + b * resample(Waveform(w2, 24000), 16000).samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_resample_length_rounds_half_up_at_odd_rates(rng):
    x = rng.standard_normal(1001)
    out = resample(Waveform(x, 44100), 24000)
    # 1001 * 24000 / 44100 = 544.76
    assert len(out) == resampled_length(1001, 44100, 24000) == 545
    assert resampled_length(3, 2, 1) == 2


def test_resample_tensor_batches_over_leading_axes(rng):
    x = torch.from_numpy(rng.standard_normal((2, 3, 960)))
    out = resample_tensor(x, 24000, 16000)
    assert out.shape == (2, 3, 640) and out.dtype == torch.float64
    torch.testing.assert_close(out[1, 2], resample_tensor(x[1, 2], 24000, 16000))


def test_round_trip_of_band_limited_signal(rng):
    t = np.arange(24000) / 24000
    freqs = [110.0, 523.0, 1234.0, 2500.0, 4100.0, 5500.0]
    x = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in freqs) / len(freqs)
    back = resample(resample(Waveform(x, 24000), 16000), 24000).samples
    assert back.shape == x.shape
    err = back[64:-64] - x[64:-64]
    assert 20 * np.log10(rms(err) / rms(x[64:-64])) <= -35.0


# ============================================================================
# Mel spectrogram
# ============================================================================


def test_one_second_gives_50_by_80():
    mel = melspectrogram(Waveform(np.zeros(24000), 24000))
    assert mel.values.shape == (50, 80)
    assert mel.frame_rate_hz == 50.0
    np.testing.assert_allclose(mel.values, np.log(MEL_FLOOR))


@pytest.mark.parametrize("n", [1, 479, 480, 481, 24000])
def test_frame_count_is_ceil(n, rng):
    w = Waveform(0.1 * rng.standard_normal(n), 24000)
    expected = -(-n // 480)
    assert melspectrogram(w).n_frames == expected
    assert extract_f0(w).n_frames == expected


@pytest.mark.parametrize("n", [1, 5, 9])
def test_reflect_framing_mirrors_repeatedly(n, rng):
    x = rng.standard_normal(n)
    frames = frame_signal(torch.from_numpy(x), 32, 4).numpy()
    padded = np.pad(x, 16, mode="reflect")
    expected = np.stack([padded[t * 4 : t * 4 + 32] for t in range(-(-n // 4))])
    np.testing.assert_array_equal(frames, expected)


def test_sine_peaks_in_nearest_band():
    cfg = AudioConfig()
    mel = melspectrogram(sine(1000.0), cfg).values

    # HTK mel scale, centers of the 80 triangles between fmin and fmax
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    edges = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    centers = 700.0 * (10 ** (edges[1:-1] / 2595.0) - 1.0)
    nearest = int(np.argmin(np.abs(centers - 1000.0)))
    assert np.all(np.argmax(mel, axis=1) == nearest)


def test_rate_mismatch():
    with pytest.raises(InvalidArgumentError):
        melspectrogram(Waveform(np.zeros(1600), 16000))


# ============================================================================
# F0
# ============================================================================


def test_f0_of_sine():
    track = extract_f0(sine(220.0))
    assert track.n_frames == 50
    assert track.voiced.all()
    assert np.max(np.abs(track.f0_hz - 220.0)) <= 2.0


def test_f0_of_silence():
    track = extract_f0(Waveform(np.zeros(24000), 24000))
    assert not track.voiced.any()
    assert np.all(track.f0_hz == 0)


def test_f0_follows_a_pitch_change():
    t = np.arange(12000) / 24000
    # continuous phase across the boundary
    first = np.sin(2 * np.pi * 220.0 * t)
    second = np.sin(2 * np.pi * 330.0 * t + 2 * np.pi * 220.0 * 0.5)
    track = extract_f0(Waveform(np.concatenate([first, second]), 24000))
    halves = track.f0_hz[:25], track.f0_hz[25:]
    assert abs(np.median(halves[0]) - 220.0) <= 2.0
    assert abs(np.median(halves[1]) - 330.0) <= 2.0


def test_f0_track_invariants():
    with pytest.raises(InvalidArgumentError):
        F0Track(np.array([100.0, 0.0]), np.array([True, True]))
    with pytest.raises(InvalidArgumentError):
        F0Track.from_f0(np.array([20.0]))


# ============================================================================
# WAV I/O
# ============================================================================


def test_wav_round_trip_within_quantization(tmp_path):
    w = sine(440.0, 0.1, amplitude=0.5)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate_hz == 24000
    assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768


def test_stereo_wav_rejected(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "st.wav", 24000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(InvalidArgumentError, match="mono"):
        read_wav(tmp_path / "st.wav")


def test_waveform_rejects_nan():
    with pytest.raises(InvalidArgumentError):
        Waveform(np.array([0.0, np.nan]), 24000)


@pytest.mark.parametrize("payload", [b"not a wav file at all", b"RIFF\x10\x00\x00\x00WAVE"])
def test_unreadable_wav_names_the_file(payload, tmp_path):
    path = tmp_path / "broken.wav"
    path.write_bytes(payload)
    with pytest.raises(InvalidArgumentError, match="broken.wav"):
        read_wav(path)
