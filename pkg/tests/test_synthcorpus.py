import numpy as np
import pytest

from triplet_forge.dataset import ExampleSet, build_example_set, featurize_manifest
from triplet_forge.errors import ConfigError
from triplet_forge.frontend import read_wav
from triplet_forge.synthcorpus import (
    CorpusConfig,
    CorpusManifest,
    Event,
    default_classes,
    generate_corpus,
    split_corpus,
    synthesize_event,
    window_label_set,
)

SMALL = CorpusConfig(n_recordings=30, duration_s=4.0, split_ratios=(0.6, 0.2, 0.2), min_segments=0)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(SMALL, seed=3)


def test_config_echo():
    from triplet_forge.synthcorpus import _script

    cfg = CorpusConfig()
    assert cfg.n_classes == 8 and cfg.n_recordings == 200 and cfg.duration_s == 10.0
    scripts = [_script(cfg, 0, i) for i in range(cfg.n_recordings)]
    assert len({s.recording_id for s in scripts}) == 200
    assert all(set(s.class_pool) <= set(range(8)) for s in scripts)


def test_scripts_respect_pools_and_bounds(small_corpus):
    m, waves = small_corpus
    assert len(m.recordings) == 30
    for rec in m.recordings:
        assert set(rec.class_pool) <= set(range(8))
        assert 2 <= len(rec.class_pool) <= 3
        assert 4 <= len(rec.events) <= 8
        for e in rec.events:
            assert e.class_id in rec.class_pool
            assert 0 <= e.onset_s and e.onset_s + e.duration_s <= rec.duration_s + 1e-9
        w = waves[rec.recording_id]
        assert len(w.samples) == 4 * 16000
        assert np.max(np.abs(w.samples)) < 1.0


def test_generation_is_deterministic(small_corpus):
    m, waves = small_corpus
    m2, waves2 = generate_corpus(SMALL, seed=3)
    assert [r.to_record() for r in m.recordings] == [r.to_record() for r in m2.recordings]
    for k in waves:
        assert waves[k].samples.tobytes() == waves2[k].samples.tobytes()
    m3, _ = generate_corpus(SMALL, seed=4)
    assert [r.to_record() for r in m3.recordings] != [r.to_record() for r in m.recordings]


def test_split_counts_and_disjointness(small_corpus):
    m, _ = small_corpus
    counts = {s: len(m.split(s)) for s in ("train", "dev", "eval")}
    assert counts == {"train": 18, "dev": 6, "eval": 6}
    with pytest.raises(ConfigError):
        split_corpus(m, (1.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        split_corpus(m, (0.5, 0.3, 0.3))


def test_min_segments_error_names_class():
    with pytest.raises(ConfigError, match="class"):
        generate_corpus(CorpusConfig(n_recordings=10, duration_s=2.0, min_segments=1000), seed=0)


def test_window_label_rule():
    events = [Event(0, 0.0, 0.5, 1.0), Event(1, 0.2, 0.3, 1.0), Event(1, 0.6, 0.2, 1.0)]
    assert window_label_set(events, 0.0, 0.96, 0.5) == {0, 1}
    assert window_label_set(events, 0.0, 0.96, 0.6) == set()
    assert window_label_set([Event(2, 0.9, 2.0, 1.0)], 0.96, 0.96, 0.5) == {2}


def test_event_synthesis_unit_rms_and_spectral_placement():
    classes = default_classes(8)
    sr = 16000
    freqs = np.fft.rfftfreq(sr, 1 / sr)
    for cls in classes:
        x = synthesize_event(cls, sr, sr, np.random.default_rng(0), jitter=0.0)
        assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0)
        if cls.family == "tone":
            peak = freqs[np.argmax(np.abs(np.fft.rfft(x)))]
            assert abs(peak - cls.parameters["f0"]) <= 1.0


def test_wav_files_match_waveforms(tmp_path):
    cfg = CorpusConfig(n_recordings=10, duration_s=2.0, min_segments=0)
    m, waves = generate_corpus(cfg, seed=1, out_dir=tmp_path)
    loaded = CorpusManifest.load(tmp_path)
    assert [r.to_record() for r in loaded.recordings] == [r.to_record() for r in m.recordings]
    for rec in m.recordings:
        back = read_wav(tmp_path / rec.path)
        np.testing.assert_array_equal(back.samples, waves[rec.recording_id].samples)


def test_example_set_tables(small_corpus):
    m, waves = small_corpus
    specs = featurize_manifest(m, waves)
    ds = build_example_set(m, specs, "train")
    per_rec = (4.0 * 16000 - 400) // 160 + 1
    assert len(ds) == 18 * (per_rec // 96)
    assert ds.cells.shape[1:] == (64, 96) and ds.cells.dtype == np.float32
    for i in range(len(ds)):
        assert ds.row(ds.ref(i)) == i
    seg = ds.segment_ids(2)
    assert len(np.unique(seg)) == 18 * 2
    assert len(np.unique(ds.segment_ids())) == 18
    back = ExampleSet.from_examples(ds.examples())
    np.testing.assert_array_equal(back.cells, ds.cells)
    assert back.labels == ds.labels
