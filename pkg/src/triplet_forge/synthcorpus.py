"""Deterministic synthetic sound-event corpus.

Each recording draws a small pool of related classes from an affinity graph
and scatters jittered events from that pool over white background noise, so
windows close in time tend to share classes while labels stay exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import store
from .errors import ConfigError
from .frontend import Waveform, write_wav

logger = logging.getLogger(__name__)

FAMILIES = ("tone", "chirp-up", "chirp-down", "harmonic-stack", "am-noise-burst", "click-train")

# Eight prototypes; larger K cycles through them with shifted frequencies.
_PROTOTYPES = (
    ("tone", {"f0": 500.0}),
    ("chirp-up", {"f0": 300.0, "octaves_per_s": 1.2}),
    ("chirp-down", {"f0": 4000.0, "octaves_per_s": -1.2}),
    ("harmonic-stack", {"f0": 220.0, "n_harmonics": 6}),
    ("am-noise-burst", {"fc": 2000.0, "bandwidth": 800.0, "mod_hz": 8.0}),
    ("click-train", {"rate_hz": 12.0, "fc": 5000.0}),
    ("tone", {"f0": 2800.0}),
    ("am-noise-burst", {"fc": 700.0, "bandwidth": 300.0, "mod_hz": 4.0}),
)

SPLITS = ("train", "dev", "eval")


@dataclass(frozen=True)
class EventClass:
    class_id: int
    family: str
    parameters: dict

    def key(self):
        return (self.family, tuple(sorted(self.parameters.items())))


@dataclass(frozen=True)
class Event:
    class_id: int
    onset_s: float
    duration_s: float
    gain: float


@dataclass
class RecordingScript:
    recording_id: str
    duration_s: float
    events: list
    background_snr_db: float
    class_pool: list
    path: str = ""
    split: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.recording_id,
            "path": self.path,
            "duration": self.duration_s,
            "events": [asdict(e) for e in self.events],
            "split": self.split,
            "class_pool": list(self.class_pool),
            "background_snr_db": self.background_snr_db,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RecordingScript":
        return cls(
            recording_id=rec["id"],
            duration_s=rec["duration"],
            events=[Event(**e) for e in rec["events"]],
            background_snr_db=rec.get("background_snr_db", 0.0),
            class_pool=rec.get("class_pool", []),
            path=rec.get("path", ""),
            split=rec.get("split", ""),
        )


@dataclass(frozen=True)
class CorpusConfig:
    n_classes: int = 8
    n_recordings: int = 200
    duration_s: float = 10.0
    sample_rate: int = 16000
    pool_size: tuple = (2, 3)
    events_per_recording: tuple = (4, 8)
    event_duration_s: tuple = (0.6, 2.5)
    gain_db: tuple = (-6.0, 0.0)
    snr_db: tuple = (22.0, 22.0)
    frequency_jitter: float = 0.08
    label_overlap: float = 0.5
    window_s: float = 0.96
    affinity: tuple | None = None
    split_ratios: tuple = (0.8, 0.1, 0.1)
    min_segments: int = 5
    amplitude: float = 0.04

    def edges(self):
        if self.affinity is not None:
            return [tuple(e) for e in self.affinity]
        k = self.n_classes
        return [(i, (i + 1) % k) for i in range(k)] if k > 2 else [(0, 1)]


@dataclass
class CorpusManifest:
    classes: list
    recordings: list
    config: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [r for r in self.recordings if r.split == name]

    def window_labels(self, rec: RecordingScript, n_windows: int | None = None) -> list[frozenset]:
        window_s = self.config.get("window_s", 0.96)
        overlap = self.config.get("label_overlap", 0.5)
        if n_windows is None:
            n_windows = int(rec.duration_s // window_s)
        return [window_label_set(rec.events, k * window_s, window_s, overlap) for k in range(n_windows)]

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"config": self.config, "classes": [asdict(c) for c in self.classes]}
        (out_dir / "corpus.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
        store.write_jsonl(out_dir / "manifest.jsonl", [r.to_record() for r in self.recordings])

    @classmethod
    def load(cls, corpus_dir) -> "CorpusManifest":
        corpus_dir = Path(corpus_dir)
        recs = store.read_jsonl(corpus_dir / "manifest.jsonl")
        meta_path = corpus_dir / "corpus.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {"config": {}, "classes": []}
        return cls(
            classes=[EventClass(**c) for c in meta["classes"]],
            recordings=[RecordingScript.from_record(r) for r in recs],
            config=meta["config"],
        )


def _rng(*keys) -> np.random.Generator:
    """Counter-based stream keyed by (seed, recording, event, ...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def default_classes(k: int) -> list[EventClass]:
    classes = []
    for i in range(k):
        family, params = _PROTOTYPES[i % len(_PROTOTYPES)]
        params = dict(params)
        shift = 1.5 ** (i // len(_PROTOTYPES))
        for name in ("f0", "fc"):
            if name in params:
                params[name] = min(params[name] * shift, 6500.0)
        if "rate_hz" in params:
            params["rate_hz"] *= shift
        classes.append(EventClass(i, family, params))
    return classes


def window_label_set(events, start_s: float, window_s: float, overlap: float) -> frozenset:
    """Classes whose events jointly cover at least ``overlap`` of the window."""
    end_s = start_s + window_s
    covered: dict[int, list] = {}
    for e in events:
        lo, hi = max(start_s, e.onset_s), min(end_s, e.onset_s + e.duration_s)
        if hi > lo:
            covered.setdefault(e.class_id, []).append((lo, hi))
    labels = set()
    for cid, spans in covered.items():
        spans.sort()
        total, cur_lo, cur_hi = 0.0, *spans[0]
        for lo, hi in spans[1:]:
            if lo > cur_hi:
                total += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        total += cur_hi - cur_lo
        if total >= overlap * window_s - 1e-12:
            labels.add(cid)
    return frozenset(labels)


def _draw_pool(rng, k, edges, size):
    neighbors = {i: set() for i in range(k)}
    for a, b in edges:
        neighbors[a].add(b)
        neighbors[b].add(a)
    pool = [int(rng.integers(k))]
    while len(pool) < size:
        frontier = sorted(set().union(*(neighbors[c] for c in pool)) - set(pool))
        if not frontier:
            frontier = sorted(set(range(k)) - set(pool))
        pool.append(int(frontier[rng.integers(len(frontier))]))
    return sorted(pool)


def _script(cfg: CorpusConfig, seed: int, index: int) -> RecordingScript:
    rng = _rng(seed, index)
    lo, hi = cfg.pool_size
    pool = _draw_pool(rng, cfg.n_classes, cfg.edges(), min(int(rng.integers(lo, hi + 1)), cfg.n_classes))
    n_events = int(rng.integers(cfg.events_per_recording[0], cfg.events_per_recording[1] + 1))
    events = []
    for _ in range(n_events):
        dur = float(rng.uniform(*cfg.event_duration_s))
        dur = min(dur, cfg.duration_s)
        onset = float(rng.uniform(0.0, cfg.duration_s - dur))
        gain = float(10 ** (rng.uniform(*cfg.gain_db) / 20))
        events.append(Event(int(pool[rng.integers(len(pool))]), onset, dur, gain))
    return RecordingScript(
        recording_id=f"rec{index:05d}",
        duration_s=cfg.duration_s,
        events=events,
        background_snr_db=float(rng.uniform(*cfg.snr_db)),
        class_pool=pool,
    )


def _bandpass_noise(rng, n, sr, fc, bw):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[np.abs(freqs - fc) > bw / 2] = 0.0
    return np.fft.irfft(spec, n)


def synthesize_event(cls: EventClass, n: int, sr: int, rng, jitter: float = 0.08) -> np.ndarray:
    """Unit-RMS signal of ``n`` samples for one event of class ``cls``."""
    t = np.arange(n) / sr
    p = cls.parameters

    def jit(v):
        return v * rng.uniform(1 - jitter, 1 + jitter)

    phase0 = rng.uniform(0, 2 * np.pi)
    if cls.family == "tone":
        x = np.sin(2 * np.pi * jit(p["f0"]) * t + phase0)
    elif cls.family in ("chirp-up", "chirp-down"):
        f0, rate = jit(p["f0"]), jit(p["octaves_per_s"])
        # instantaneous frequency f0 * 2**(rate t)
        phase = 2 * np.pi * f0 * (2 ** (rate * t) - 1) / (rate * np.log(2))
        x = np.sin(phase + phase0)
    elif cls.family == "harmonic-stack":
        f0 = jit(p["f0"])
        x = np.zeros(n)
        for h in range(1, int(p["n_harmonics"]) + 1):
            if h * f0 < sr / 2:
                x += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
    elif cls.family == "am-noise-burst":
        carrier = _bandpass_noise(rng, n, sr, jit(p["fc"]), p["bandwidth"])
        x = carrier * (1 + np.sin(2 * np.pi * jit(p["mod_hz"]) * t + phase0))
    elif cls.family == "click-train":
        period = int(sr / jit(p["rate_hz"]))
        click_len = min(int(0.02 * sr), n)
        click = _bandpass_noise(rng, click_len, sr, jit(p["fc"]), 3000.0) * np.exp(-np.arange(click_len) / (0.003 * sr))
        x = np.zeros(n)
        for start in range(int(rng.integers(period)), n - click_len + 1, period):
            x[start:start + click_len] += click
    else:
        raise ConfigError(f"unknown event family {cls.family!r}")
    fade = min(int(0.01 * sr), n // 2)
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        x[:fade] *= ramp
        x[n - fade:] *= ramp[::-1]
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def render_recording(script: RecordingScript, classes, cfg: CorpusConfig, seed: int, index: int) -> Waveform:
    """Mix the scripted events over background noise and quantize to 16 bit."""
    sr = cfg.sample_rate
    n = int(round(script.duration_s * sr))
    noise_rms = 10 ** (-script.background_snr_db / 20)
    x = _rng(seed, index, 0).standard_normal(n) * noise_rms
    for j, e in enumerate(script.events):
        start = int(round(e.onset_s * sr))
        length = min(int(round(e.duration_s * sr)), n - start)
        if length <= 0:
            continue
        sig = synthesize_event(classes[e.class_id], length, sr, _rng(seed, index, j + 1), cfg.frequency_jitter)
        x[start:start + length] += e.gain * sig
    pcm = np.clip(np.round(x * cfg.amplitude * 32768.0), -32768, 32767)
    return Waveform(pcm / 32768.0, sr)


def generate_corpus(cfg: CorpusConfig = CorpusConfig(), seed: int = 0, out_dir=None):
    """Build the manifest and waveforms for ``cfg``.

    Returns ``(manifest, waveforms)`` where ``waveforms`` maps recording id to
    Waveform. With ``out_dir`` the WAV files and manifest are also written.
    """
    if cfg.n_classes < 2:
        raise ConfigError("need at least 2 classes")
    if cfg.n_recordings < 10:
        raise ConfigError("need at least 10 recordings")
    if cfg.duration_s < 2 * cfg.window_s:
        raise ConfigError("recordings must span at least two context windows")
    classes = default_classes(cfg.n_classes)
    scripts = [_script(cfg, seed, i) for i in range(cfg.n_recordings)]
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
    config["seed"] = int(seed)
    manifest = split_corpus(CorpusManifest(classes, scripts, config), cfg.split_ratios, seed)
    check_min_segments(manifest, cfg.min_segments)

    waveforms = {}
    for i, script in enumerate(manifest.recordings):
        w = render_recording(script, classes, cfg, seed, i)
        waveforms[script.recording_id] = w
        if out_dir is not None:
            script.path = f"wav/{script.recording_id}.wav"
            path = Path(out_dir) / script.path
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wav(path, w)
    if out_dir is not None:
        manifest.save(out_dir)
    return manifest, waveforms


def split_corpus(m: CorpusManifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> CorpusManifest:
    """Partition recordings into train/dev/eval by id (largest-remainder counts)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) != 3 or np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive values summing to 1, got {ratios.tolist()}")
    n = len(m.recordings)
    raw = ratios * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    if np.any(counts == 0):
        empty = [SPLITS[i] for i in np.flatnonzero(counts == 0)]
        raise ConfigError(f"split(s) {empty} would receive zero recordings")
    ids = sorted(r.recording_id for r in m.recordings)
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    bounds = np.cumsum(counts)
    for pos, idx in enumerate(order):
        assignment[ids[idx]] = SPLITS[int(np.searchsorted(bounds, pos, side="right"))]
    recordings = [replace(r, split=assignment[r.recording_id]) for r in m.recordings]
    return CorpusManifest(m.classes, recordings, dict(m.config))


def check_min_segments(m: CorpusManifest, min_segments: int) -> None:
    for split in SPLITS:
        counts = np.zeros(len(m.classes), dtype=int)
        for rec in m.split(split):
            for labels in m.window_labels(rec):
                for c in labels:
                    counts[c] += 1
        for c, count in enumerate(counts):
            if count < min_segments:
                raise ConfigError(
                    f"class {c} ({m.classes[c].family}) has {count} labeled windows in split "
                    f"{split!r}; min_segments={min_segments} is unsatisfiable"
                )
