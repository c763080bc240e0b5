"""Mel-energy frontend: waveform -> mel energies -> log -> context windows.

One mel convention is used everywhere in the package: HTK-style
``mel = 2595 * log10(1 + f / 700)`` with triangles that are linear in mel and
peak at 1.0 on their center frequency.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainMismatchError, InsufficientAudioError

ENERGY = "energy"
LOG = "log"


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 64
    fft_size: int | None = None
    mel_lo_hz: float = 125.0
    mel_hi_hz: float = 7500.0
    log_offset: float = 0.01
    context_frames: int = 96

    def __post_init__(self):
        if not self.window_ms > self.hop_ms > 0:
            raise ConfigError("need window_ms > hop_ms > 0")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.mel_hi_hz > self.sample_rate / 2:
            raise ConfigError("mel_hi_hz exceeds the Nyquist frequency")
        if not 0 <= self.mel_lo_hz < self.mel_hi_hz:
            raise ConfigError("need 0 <= mel_lo_hz < mel_hi_hz")
        if self.log_offset <= 0:
            raise ConfigError("log_offset must be > 0")
        if self.context_frames < 1:
            raise ConfigError("context_frames must be >= 1")
        if self.fft_size is not None and self.fft_size < self.window_length:
            raise ConfigError("fft_size shorter than the analysis window")

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))

    @property
    def n_fft(self) -> int:
        if self.fft_size is not None:
            return self.fft_size
        return 1 << (self.window_length - 1).bit_length()

    @property
    def frame_hop_s(self) -> float:
        return self.hop_length / self.sample_rate


@dataclass
class EnergySpectrogram:
    cells: np.ndarray  # (n_mels, n_frames)
    frame_hop_s: float

    @property
    def n_frames(self) -> int:
        return self.cells.shape[1]


@dataclass
class ContextWindow:
    cells: np.ndarray  # (F, T)
    start_time_s: float = 0.0
    recording_id: str = ""
    domain: str = ENERGY


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FeatureConfig) -> np.ndarray:
    """Center frequency in Hz of every mel channel."""
    edges = np.linspace(hz_to_mel(cfg.mel_lo_hz), hz_to_mel(cfg.mel_hi_hz), cfg.n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """(n_fft // 2 + 1, n_mels) matrix of triangular weights."""
    edges = np.linspace(hz_to_mel(cfg.mel_lo_hz), hz_to_mel(cfg.mel_hi_hz), cfg.n_mels + 2)
    bin_mel = hz_to_mel(np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft)
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]
    rising = (bin_mel[:, None] - lo) / (center - lo)
    falling = (hi - bin_mel[:, None]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_spectrogram(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> EnergySpectrogram:
    """Squared-magnitude STFT energies pooled by the mel filterbank."""
    if w.sample_rate != cfg.sample_rate:
        w = resample(w, cfg.sample_rate)
    win, hop = cfg.window_length, cfg.hop_length
    x = w.samples
    if len(x) < win:
        raise InsufficientAudioError(
            f"insufficient audio: {len(x)} samples, need at least one {win}-sample window"
        )
    n_frames = (len(x) - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.fft.rfft(frames * periodic_hann(win), n=cfg.n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    cells = (power @ mel_filterbank(cfg)).T
    return EnergySpectrogram(np.ascontiguousarray(cells), cfg.frame_hop_s)


def stabilized_log(s, offset: float = 0.01):
    """Elementwise ``ln(cell + offset)``.

    Accepts an EnergySpectrogram, a ContextWindow or a bare array and returns
    the same kind of object.
    """
    if offset <= 0:
        raise ConfigError(f"log offset must be > 0, got {offset}")
    if isinstance(s, EnergySpectrogram):
        return EnergySpectrogram(np.log(s.cells + offset), s.frame_hop_s)
    if isinstance(s, ContextWindow):
        if s.domain != ENERGY:
            raise DomainMismatchError("window is already log-domain")
        return ContextWindow(np.log(s.cells + offset), s.start_time_s, s.recording_id, LOG)
    return np.log(np.asarray(s) + offset)


def window_spectrogram(s: EnergySpectrogram, T: int = 96, recording_id: str = "") -> list[ContextWindow]:
    if T < 1:
        raise ConfigError("context length T must be >= 1")
    count = s.n_frames // T
    return [
        ContextWindow(s.cells[:, k * T:(k + 1) * T], k * T * s.frame_hop_s, recording_id, ENERGY)
        for k in range(count)
    ]


def window_array(cells: np.ndarray, T: int = 96) -> np.ndarray:
    """Stack the non-overlapping (F, T) blocks of ``cells`` into (count, F, T)."""
    count = cells.shape[1] // T
    return cells[:, :count * T].reshape(cells.shape[0], count, T).transpose(1, 0, 2).copy()


def total_energy(x) -> float:
    if isinstance(x, ContextWindow):
        if x.domain != ENERGY:
            raise DomainMismatchError("total_energy is defined on energy-domain windows only")
        x = x.cells
    return float(np.sum(x, dtype=np.float64))


def resample(w: Waveform, rate: int) -> Waveform:
    """Linear-interpolation resampling."""
    if rate == w.sample_rate:
        return w
    n_out = int(round(len(w.samples) * rate / w.sample_rate))
    t_out = np.arange(n_out) / rate
    t_in = np.arange(len(w.samples)) / w.sample_rate
    return Waveform(np.interp(t_out, t_in, w.samples), rate)


def read_wav(path, sample_rate: int | None = 16000) -> Waveform:
    """Read a 16-bit PCM WAV; multi-channel input is averaged to mono."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        n_ch = fh.getnchannels()
        rate = fh.getframerate()
        raw = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    samples = raw.reshape(-1, n_ch).mean(axis=1) / 32768.0
    w = Waveform(samples, rate)
    return resample(w, sample_rate) if sample_rate else w


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
