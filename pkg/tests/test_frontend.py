import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from triplet_forge.errors import ConfigError, DomainMismatchError, InsufficientAudioError
from triplet_forge.frontend import (
    ContextWindow,
    EnergySpectrogram,
    FeatureConfig,
    Waveform,
    hz_to_mel,
    mel_center_frequencies,
    mel_spectrogram,
    read_wav,
    stabilized_log,
    total_energy,
    window_array,
    window_spectrogram,
    write_wav,
)

CFG = FeatureConfig()


def test_default_geometry():
    assert CFG.window_length == 400
    assert CFG.hop_length == 160
    assert CFG.n_fft == 512
    assert CFG.frame_hop_s == pytest.approx(0.01)


def test_zero_waveform_gives_zero_cells():
    s = mel_spectrogram(Waveform(np.zeros(16000)))
    assert s.cells.shape == (64, (16000 - 400) // 160 + 1)
    assert np.all(s.cells == 0)


def test_frame_count():
    for n in (400, 401, 559, 560, 16000, 160000):
        s = mel_spectrogram(Waveform(np.random.default_rng(n).standard_normal(n)))
        assert s.n_frames == (n - 400) // 160 + 1


def test_amplitude_scaling_is_quadratic():
    x = np.random.default_rng(0).standard_normal(8000)
    a = mel_spectrogram(Waveform(x)).cells
    b = mel_spectrogram(Waveform(2 * x)).cells
    np.testing.assert_allclose(b, 4 * a, rtol=1e-12)


def _expected_tone_channel(freq):
    # independent of the filterbank matrix: nearest center on the mel axis
    edges = np.linspace(hz_to_mel(CFG.mel_lo_hz), hz_to_mel(CFG.mel_hi_hz), CFG.n_mels + 2)
    return int(np.argmin(np.abs(edges[1:-1] - 2595.0 * math.log10(1 + freq / 700.0))))


@pytest.mark.parametrize("freq", [1000.0, 440.0, 3000.0])
def test_pure_tone_peaks_at_nearest_channel(freq):
    t = np.arange(16000) / 16000
    s = mel_spectrogram(Waveform(np.sin(2 * np.pi * freq * t)))
    expected = _expected_tone_channel(freq)
    assert np.all(s.cells.argmax(axis=0) == expected)
    centers = mel_center_frequencies(CFG)
    assert expected == int(np.argmin(np.abs(hz_to_mel(centers) - hz_to_mel(freq))))


def test_1khz_channel_value():
    # centers are equally spaced in mel between 125 Hz and 7500 Hz
    lo, hi = 2595 * math.log10(1 + 125 / 700), 2595 * math.log10(1 + 7500 / 700)
    step = (hi - lo) / 65
    k = round((2595 * math.log10(1 + 1000 / 700) - lo) / step) - 1
    assert _expected_tone_channel(1000.0) == k


def test_too_short_waveform():
    with pytest.raises(InsufficientAudioError, match="insufficient audio"):
        mel_spectrogram(Waveform(np.zeros(399)))


def test_non_finite_samples_rejected():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan, 1.0]))


def test_config_validation():
    with pytest.raises(ConfigError):
        FeatureConfig(window_ms=10, hop_ms=10)
    with pytest.raises(ConfigError):
        FeatureConfig(mel_hi_hz=9000)
    with pytest.raises(ConfigError):
        FeatureConfig(log_offset=0)
    with pytest.raises(ConfigError):
        FeatureConfig(n_mels=0)


def test_stabilized_log_values():
    assert stabilized_log(np.array(0.0), 0.01) == pytest.approx(-4.60517, abs=1e-5)
    assert stabilized_log(np.array(math.e - 0.01), 0.01) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        stabilized_log(np.array(1.0), 0.0)
    with pytest.raises(ConfigError):
        stabilized_log(np.array(1.0), -1.0)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_stabilized_log_monotone(a, b):
    if a < b:
        assert stabilized_log(np.array(a)) <= stabilized_log(np.array(b))


def test_stabilized_log_keeps_types():
    s = EnergySpectrogram(np.ones((64, 10)), 0.01)
    out = stabilized_log(s)
    assert isinstance(out, EnergySpectrogram) and out.frame_hop_s == 0.01
    w = stabilized_log(ContextWindow(np.ones((64, 96))))
    assert w.domain == "log"
    with pytest.raises(DomainMismatchError):
        stabilized_log(w)


def test_windowing_ten_second_clip():
    s = EnergySpectrogram(np.random.default_rng(0).random((64, 960)), 0.01)
    windows = window_spectrogram(s, 96)
    assert len(windows) == 10
    np.testing.assert_allclose([w.start_time_s for w in windows], np.arange(10) * 0.96)


def test_windowing_partial_dropped():
    assert window_spectrogram(EnergySpectrogram(np.ones((64, 95)), 0.01), 96) == []


def test_windowing_partition():
    cells = np.random.default_rng(1).random((64, 250))
    windows = window_spectrogram(EnergySpectrogram(cells, 0.01), 96)
    assert len(windows) == 2
    np.testing.assert_array_equal(np.concatenate([w.cells for w in windows], axis=1), cells[:, :192])
    np.testing.assert_array_equal(window_array(cells, 96), np.stack([w.cells for w in windows]))


def test_total_energy():
    assert total_energy(ContextWindow(np.ones((64, 96)))) == 6144
    assert total_energy(ContextWindow(np.zeros((64, 96)))) == 0
    with pytest.raises(DomainMismatchError):
        total_energy(ContextWindow(np.ones((64, 96)), domain="log"))


def test_total_energy_linearity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y = rng.random((2, 64, 96))
        a, b = rng.uniform(0, 10, 2)
        lhs = total_energy(a * x + b * y)
        rhs = a * total_energy(x) + b * total_energy(y)
        assert lhs == pytest.approx(rhs, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(400, 2000), elements=st.floats(-1e3, 1e3)), st.floats(0.01, 100))
def test_energy_nonnegative_and_quadratic(samples, c):
    a = mel_spectrogram(Waveform(samples)).cells
    assert np.all(a >= 0)
    b = mel_spectrogram(Waveform(c * samples)).cells
    np.testing.assert_allclose(b, c * c * a, rtol=1e-5, atol=1e-9 * max(1.0, c * c * a.max()))


def test_wav_round_trip(tmp_path):
    x = np.round(np.sin(np.linspace(0, 100, 16000)) * 0.5 * 32768) / 32768
    write_wav(tmp_path / "a.wav", Waveform(x))
    back = read_wav(tmp_path / "a.wav")
    np.testing.assert_array_equal(back.samples, x)


def test_wav_resampled_on_ingest(tmp_path):
    write_wav(tmp_path / "b.wav", Waveform(np.zeros(8000), 8000))
    back = read_wav(tmp_path / "b.wav")
    assert back.sample_rate == 16000 and len(back.samples) == 16000
