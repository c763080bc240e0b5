"""Triplet sampling under labeled and class-agnostic constraints.

Triplets hold window references plus the transform parameters actually used;
``Triplet.materialize`` rebuilds the three energy-domain windows
deterministically, so shards never store transformed spectrograms.

Parameter block layout per source (unused slots are 0)::

    LABELED      (class_id, 0, 0, 0)
    NOISE        (sigma, 0, 0, 0)             noise drawn from transform_seed
    TRANSLATION  (time_shift, freq_shift, S, 0)
    MIXING       (alpha, 0, 0, 0)
    PROXIMITY    (delta_t, |time(a) - time(p)|, 0, 0)
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import store
from .dataset import ExampleSet, as_example_set
from .errors import ConfigError

logger = logging.getLogger(__name__)

MAX_MIXING_RETRIES = 100


class TripletSource(enum.IntEnum):
    LABELED = 0
    NOISE = 1
    TRANSLATION = 2
    MIXING = 3
    PROXIMITY = 4

    @classmethod
    def parse(cls, name) -> "TripletSource":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigError(f"unknown triplet source {name!r}") from None


UNSUPERVISED = (TripletSource.NOISE, TripletSource.TRANSLATION, TripletSource.MIXING, TripletSource.PROXIMITY)


def _f32(values) -> tuple:
    vals = list(values) + [0.0] * (4 - len(values))
    return tuple(float(np.float32(v)) for v in vals)


@dataclass(frozen=True)
class Triplet:
    source: TripletSource
    anchor: tuple
    positive: tuple
    negative: tuple
    transform_seed: int = 0
    params: tuple = (0.0, 0.0, 0.0, 0.0)

    def with_negative(self, ref) -> "Triplet":
        return Triplet(self.source, self.anchor, self.positive, tuple(ref), self.transform_seed, self.params)

    def materialize(self, dataset: ExampleSet):
        """Return float64 ``(anchor, positive, negative)`` energy windows."""
        xa = dataset.window(self.anchor).astype(np.float64)
        xn = dataset.window(self.negative).astype(np.float64)
        src = self.source
        if src == TripletSource.NOISE:
            xp = add_multiplicative_noise(xa, self.params[0], self.transform_seed)
        elif src == TripletSource.TRANSLATION:
            xp = translate(xa, int(self.params[0]), int(self.params[1]))
        elif src == TripletSource.MIXING:
            xp = mix(xa, xn, self.params[0])
        else:
            xp = dataset.window(self.positive).astype(np.float64)
        return xa, xp, xn


@dataclass(frozen=True)
class SamplerConfig:
    sigma: float = 0.5
    freq_shift_S: int = 10
    alpha: float = 0.25
    delta_t_s: float = 10.0
    pairs_per_anchor: int = 1
    weights: dict = field(default_factory=lambda: {s: 1.0 for s in UNSUPERVISED})

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.freq_shift_S < 0:
            raise ConfigError("freq_shift_S must be >= 0")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.delta_t_s <= 0:
            raise ConfigError("delta_t_s must be > 0")
        if self.pairs_per_anchor < 1:
            raise ConfigError("pairs_per_anchor must be >= 1")
        w = {TripletSource.parse(k): float(v) for k, v in self.weights.items()}
        if any(v < 0 for v in w.values()) or not any(v > 0 for v in w.values()):
            raise ConfigError("source weights must be nonnegative and not all zero")
        object.__setattr__(self, "weights", w)


# -- transforms --------------------------------------------------------------

def transform_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def add_multiplicative_noise(x, sigma: float, seed: int):
    """``x * (1 + |eps|)`` with ``eps ~ N(0, sigma^2)`` drawn per cell."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    eps = transform_rng(seed).normal(0.0, 1.0, size=np.shape(x)) * sigma
    return x * (1.0 + np.abs(eps))


def translate(x, time_shift: int, freq_shift: int):
    """Circular shift along time, then a zero-filled shift along frequency."""
    out = np.roll(x, time_shift, axis=1)
    if freq_shift == 0:
        return out
    shifted = np.zeros_like(out)
    if freq_shift > 0:
        shifted[freq_shift:] = out[:-freq_shift]
    else:
        shifted[:freq_shift] = out[-freq_shift:]
    return shifted


def mix(anchor, negative, alpha: float):
    """``anchor + alpha * E(anchor) / E(negative) * negative``."""
    e_a = np.sum(anchor, dtype=np.float64)
    e_n = np.sum(negative, dtype=np.float64)
    return anchor + (alpha * e_a / e_n) * negative


# -- samplers ----------------------------------------------------------------

def _seed(rng) -> int:
    return int(rng.integers(0, 2**63))


def _other_row(rng, n, exclude):
    j = int(rng.integers(n - 1))
    return j + 1 if j >= exclude else j


def _check(ds: ExampleSet, n: int):
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if n < 0:
        raise ValueError("n must be >= 0")


def sample_labeled(dataset, n: int, rng) -> list[Triplet]:
    """Anchor and positive share a class c; the negative lacks c."""
    ds = as_example_set(dataset)
    _check(ds, n)
    if not ds.labeled:
        raise ValueError("labeled sampling needs every example to carry a label set")
    members: dict[int, list] = {}
    for i, labels in enumerate(ds.labels):
        for c in labels:
            members.setdefault(c, []).append(i)
    eligible = []
    for c in sorted(members):
        rows = members[c]
        if len(rows) < 2:
            logger.warning("class %d has %d example(s); skipped for labeled triplets", c, len(rows))
        elif len(rows) == len(ds):
            logger.warning("class %d has no counter-example; skipped for labeled triplets", c)
        else:
            eligible.append(c)
    if n == 0:
        return []
    if not eligible:
        raise ValueError("no class has two examples and a counter-example")
    lacking = {c: np.setdiff1d(np.arange(len(ds)), members[c]) for c in eligible}
    out = []
    for _ in range(n):
        c = eligible[int(rng.integers(len(eligible)))]
        rows = members[c]
        a, p = rng.choice(len(rows), size=2, replace=False)
        neg = lacking[c][int(rng.integers(len(lacking[c])))]
        out.append(Triplet(TripletSource.LABELED, ds.ref(rows[a]), ds.ref(rows[p]), ds.ref(neg),
                           _seed(rng), _f32([c])))
    return out


def _anchored(ds, n, rng, pairs_per_anchor, make):
    out = []
    while len(out) < n:
        a = int(rng.integers(len(ds)))
        for _ in range(min(pairs_per_anchor, n - len(out))):
            out.append(make(a))
    return out


def sample_noise(dataset, n: int, sigma: float, rng, pairs_per_anchor: int = 1) -> list[Triplet]:
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    ds = as_example_set(dataset)
    _check(ds, n)
    if len(ds) < 2 and n:
        raise ValueError("need at least two examples")
    params = _f32([sigma])

    def make(a):
        neg = _other_row(rng, len(ds), a)
        return Triplet(TripletSource.NOISE, ds.ref(a), ds.ref(a), ds.ref(neg), _seed(rng), params)

    return _anchored(ds, n, rng, pairs_per_anchor, make)


def sample_translation(dataset, n: int, S: int, rng, pairs_per_anchor: int = 1) -> list[Triplet]:
    ds = as_example_set(dataset)
    _check(ds, n)
    F, T = ds.cells.shape[1:]
    if not 0 <= S <= F - 1:
        raise ConfigError(f"frequency shift range S={S} must lie in [0, {F - 1}]")
    if len(ds) < 2 and n:
        raise ValueError("need at least two examples")

    def make(a):
        t_shift = int(rng.integers(T))
        f_shift = int(rng.integers(-S, S + 1))
        neg = _other_row(rng, len(ds), a)
        return Triplet(TripletSource.TRANSLATION, ds.ref(a), ds.ref(a), ds.ref(neg), _seed(rng),
                       _f32([t_shift, f_shift, S]))

    return _anchored(ds, n, rng, pairs_per_anchor, make)


def sample_mixing(dataset, n: int, alpha: float, rng) -> list[Triplet]:
    if alpha <= 0:
        raise ConfigError("alpha must be > 0")
    ds = as_example_set(dataset)
    _check(ds, n)
    energy = ds.cells.reshape(len(ds), -1).sum(axis=1, dtype=np.float64)
    anchors = np.flatnonzero(energy > 0)
    if n and (len(anchors) == 0 or len(ds) < 2):
        raise ValueError("mixing needs a nonzero-energy anchor and at least two examples")
    params = _f32([alpha])
    out = []
    for _ in range(n):
        a = int(anchors[rng.integers(len(anchors))])
        for _ in range(MAX_MIXING_RETRIES):
            neg = _other_row(rng, len(ds), a)
            if energy[neg] > 0:
                break
        else:
            raise ValueError(f"no nonzero-energy negative found in {MAX_MIXING_RETRIES} draws")
        out.append(Triplet(TripletSource.MIXING, ds.ref(a), ds.ref(a), ds.ref(neg), _seed(rng), params))
    return out


def sample_proximity(dataset, n: int, delta_t: float, rng) -> list[Triplet]:
    """Anchor/positive from one recording less than ``delta_t`` apart, negative elsewhere."""
    if delta_t <= 0:
        raise ConfigError("delta_t must be > 0")
    ds = as_example_set(dataset)
    _check(ds, n)
    recordings = np.unique(ds.rec_index)
    if len(recordings) < 2:
        raise ValueError("proximity sampling needs at least two recordings")
    partners = {}
    for r in recordings:
        rows = np.flatnonzero(ds.rec_index == r)
        t = ds.start_s[rows]
        close = (np.abs(t[:, None] - t[None, :]) < delta_t) & ~np.eye(len(rows), dtype=bool)
        table = {int(rows[i]): rows[np.flatnonzero(close[i])] for i in range(len(rows)) if close[i].any()}
        if table:
            partners[int(r)] = table
    if n and not partners:
        raise ValueError(f"no recording has two windows closer than delta_t={delta_t}")
    qualifying = sorted(partners)
    params_dt = float(np.float32(delta_t))
    out = []
    for _ in range(n):
        r = qualifying[int(rng.integers(len(qualifying)))]
        table = partners[r]
        anchors = sorted(table)
        a = anchors[int(rng.integers(len(anchors)))]
        p = int(table[a][rng.integers(len(table[a]))])
        others = np.flatnonzero(ds.rec_index != r)
        neg = int(others[rng.integers(len(others))])
        gap = abs(ds.start_s[a] - ds.start_s[p])
        out.append(Triplet(TripletSource.PROXIMITY, ds.ref(a), ds.ref(p), ds.ref(neg), _seed(rng),
                           _f32([params_dt, gap])))
    return out


def source_counts(n: int, weights: dict) -> dict:
    """Largest-remainder split of ``n`` proportional to ``weights``."""
    sources = sorted(weights)
    w = np.array([weights[s] for s in sources], dtype=np.float64)
    raw = n * w / w.sum()
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return {s: int(c) for s, c in zip(sources, counts)}


def sample_source(dataset, source, n: int, cfg: SamplerConfig, rng) -> list[Triplet]:
    source = TripletSource.parse(source)
    if source == TripletSource.LABELED:
        return sample_labeled(dataset, n, rng)
    if source == TripletSource.NOISE:
        return sample_noise(dataset, n, cfg.sigma, rng, cfg.pairs_per_anchor)
    if source == TripletSource.TRANSLATION:
        return sample_translation(dataset, n, cfg.freq_shift_S, rng, cfg.pairs_per_anchor)
    if source == TripletSource.MIXING:
        return sample_mixing(dataset, n, cfg.alpha, rng)
    return sample_proximity(dataset, n, cfg.delta_t_s, rng)


def sample_joint(dataset, n: int, weights: dict | None, rng, cfg: SamplerConfig | None = None) -> list[Triplet]:
    """Weighted union of per-source samples, shuffled by ``rng``.

    Each positively weighted source gets its own child generator, seeded from
    ``rng`` in source order, so a source's contribution does not depend on the
    other sources' sizes.
    """
    cfg = cfg or SamplerConfig()
    weights = cfg.weights if weights is None else {TripletSource.parse(k): float(v) for k, v in weights.items()}
    if any(v < 0 for v in weights.values()) or not any(v > 0 for v in weights.values()):
        raise ConfigError("source weights must be nonnegative and not all zero")
    ds = as_example_set(dataset)
    counts = source_counts(n, weights)
    out = []
    for source in sorted(counts):
        if weights[source] <= 0:
            continue
        child = np.random.default_rng(_seed(rng))
        out.extend(sample_source(ds, source, counts[source], cfg, child))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def sample(dataset, method: str, n: int, cfg: SamplerConfig, rng) -> list[Triplet]:
    """Dispatch on a method name: a source name or ``joint``."""
    if method == "joint":
        return sample_joint(dataset, n, None, rng, cfg)
    return sample_source(dataset, method, n, cfg, rng)


def count_by_source(triplets) -> Counter:
    return Counter(t.source for t in triplets)


# -- shards ------------------------------------------------------------------

def triplets_to_records(triplets) -> np.ndarray:
    records = np.zeros(len(triplets), dtype=store.TRIPLET_RECORD)
    for i, t in enumerate(triplets):
        records[i] = (int(t.source), t.transform_seed, t.anchor, t.positive, t.negative, t.params)
    return records


def records_to_triplets(records) -> list[Triplet]:
    return [
        Triplet(TripletSource(int(r["source"])), tuple(int(v) for v in r["anchor"]),
                tuple(int(v) for v in r["positive"]), tuple(int(v) for v in r["negative"]),
                int(r["transform_seed"]), tuple(float(v) for v in r["params"]))
        for r in records
    ]


def write_triplets(path, triplets) -> None:
    store.write_triplet_records(path, triplets_to_records(triplets))


def read_triplets(path) -> list[Triplet]:
    return records_to_triplets(store.read_triplet_records(path))
