import csv

import numpy as np
import pytest

from triplet_forge import store
from triplet_forge.cli import main
from triplet_forge.config import RunConfig, format_layers, parse_layers
from triplet_forge.errors import ConfigError
from triplet_forge.nn import DEFAULT_LAYERS

TINY = """
[run]
seed = 5

[corpus]
n_recordings = 16
duration_s = 3.0
min_segments = 0
split_ratios = 0.5, 0.25, 0.25

[sampler]
n_triplets = 64

[model]
layers = conv2d:4:3, relu, maxpool:4, global_avg_pool
embedding_dim = 8

[training]
steps = 3
batch_size = 8
learning_rate = 0.001

[eval]
segment_windows = 1
qbe_per_class = 3
width = 16
max_epochs = 2
light_k = 2
light_trials = 2
light_seeds = 0, 1
"""


# -- config ------------------------------------------------------------------

def test_defaults_round_trip_through_dump():
    cfg = RunConfig()
    again = RunConfig.from_text(cfg.dump())
    assert again.values == cfg.values
    assert again.dump() == cfg.dump()


def test_layers_text_round_trip():
    assert parse_layers(format_layers(DEFAULT_LAYERS)) == tuple(DEFAULT_LAYERS)


def test_unknown_keys_and_sections_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig.from_text("[training]\nstepz = 3\n")
    with pytest.raises(ConfigError, match="section"):
        RunConfig.from_text("[optimizer]\nlr = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[training]\nsteps = many\n")
    with pytest.raises(ConfigError):
        RunConfig().override(["training.steps"])


def test_typed_views_and_policy():
    cfg = RunConfig.from_text(TINY)
    assert cfg.seed == 5
    assert cfg.training("noise").learning_rate == 0.001
    assert not cfg.training("noise").mining and cfg.training("joint").mining
    assert RunConfig().training("mixing").learning_rate == 1e-6
    assert cfg.corpus().n_recordings == 16
    assert cfg.model().embedding_dim == 8
    assert cfg.sampler().weights


def test_overrides_win():
    cfg = RunConfig.from_text(TINY).override(["training.steps=9", "sampler.sigma=0.25"])
    assert cfg["training"]["steps"] == 9 and cfg["sampler"]["sigma"] == 0.25


# -- pipeline ----------------------------------------------------------------

def run(*argv):
    return main(["--threads", "1", *map(str, argv)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    (d / "tiny.ini").write_text(TINY)
    c = d / "tiny.ini"
    assert run("gen-corpus", "--config", c, "--out", d / "corpus") == 0
    assert run("featurize", "--config", c, "--corpus", d / "corpus", "--out", d / "feat") == 0
    return d, c


def _pipeline_outputs(d, c, tag):
    out = d / tag
    assert run("sample-triplets", "--config", c, "--features", d / "feat", "--method", "joint",
               "--out", out / "joint.trip") == 0
    assert run("sample-triplets", "--config", c, "--features", d / "feat", "--method", "labeled",
               "--out", out / "lab.trip") == 0
    assert run("train", "--config", c, "--features", d / "feat", "--triplets", out / "joint.trip",
               "--out", out / "joint.ckpt") == 0
    assert run("train", "--config", c, "--features", d / "feat", "--triplets", out / "lab.trip",
               "--out", out / "lab.ckpt") == 0
    for split in ("train", "dev", "eval"):
        assert run("embed", "--config", c, "--features", d / "feat", "--split", split,
                   "--checkpoint", out / "joint.ckpt", "--out", out / f"joint.{split}.emb") == 0
        assert run("embed", "--config", c, "--features", d / "feat", "--split", split,
                   "--log-mel", "--out", out / f"raw.{split}.emb") == 0
    assert run("embed", "--config", c, "--features", d / "feat", "--checkpoint", out / "lab.ckpt",
               "--out", out / "lab.eval.emb") == 0
    assert run("eval-qbe", "--config", c, "--features", d / "feat",
               "--embeddings", out / "raw.eval.emb", out / "lab.eval.emb", out / "joint.eval.emb",
               "--names", "raw", "lab", "joint", "--out", out / "qbe.csv") == 0
    assert run("light-supervision", "--config", c, "--features", d / "feat",
               "--embeddings", out / "raw", out / "joint", "--names", "raw", "joint",
               "--out", out / "light.csv") == 0
    assert run("eval-classifier", "--config", c, "--features", d / "feat",
               "--embeddings", out / "joint", "--names", "joint", "--out", out / "clf.csv") == 0
    return out


def test_pipeline_runs_and_is_bitwise_reproducible(pipeline):
    d, c = pipeline
    a = _pipeline_outputs(d, c, "a")
    b = _pipeline_outputs(d, c, "b")
    for name in ("qbe.csv", "light.csv", "clf.csv", "joint.ckpt.loss.csv", "lab.ckpt.loss.csv",
                 "joint.ckpt", "joint.eval.emb"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = list(csv.DictReader(open(a / "qbe.csv")))
    assert {r["representation"] for r in rows if r["class_id"] == "mAP"} == {"raw", "lab", "joint"}
    loss = list(csv.reader(open(a / "joint.ckpt.loss.csv")))
    assert loss[0] == ["step", "loss", "active_triplet_fraction"] and len(loss) == 4
    resolved = RunConfig.load(a / "qbe.csv.config.ini")
    assert resolved.values == RunConfig.load(c).values


def test_eval_qbe_with_recovery(pipeline, tmp_path):
    d, c = pipeline
    out = _pipeline_outputs(d, c, "r")
    args = ["eval-qbe", "--config", c, "--features", d / "feat",
            "--embeddings", out / "raw.eval.emb", out / "lab.eval.emb", out / "joint.eval.emb",
            "--names", "raw", "lab", "joint", "--baseline", "raw", "--topline", "lab",
            "--out", tmp_path / "q.csv"]
    code = run(*args)
    summary = {r["representation"]: r for r in csv.DictReader(open(tmp_path / "q.csv")) if r["class_id"] == "mAP"}
    if float(summary["lab"]["ap"]) > float(summary["raw"]["ap"]):
        assert code == 0
        assert float(summary["raw"]["recovery_pct"]) == 0.0
        assert float(summary["lab"]["recovery_pct"]) == 100.0
    else:
        assert code != 0


def test_sweep_grid_rows(pipeline, tmp_path):
    d, c = pipeline
    assert run("sweep", "--config", c, "--features", d / "feat", "--param", "freq-shift",
               "--grid", "0,2,5,10", "--out", tmp_path / "sweep.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [r["value"] for r in rows] == ["0", "2", "5", "10"]


def test_missing_artifact_names_producer(pipeline, tmp_path, capsys):
    d, c = pipeline
    code = run("embed", "--config", c, "--features", d / "feat", "--checkpoint", tmp_path / "none.ckpt",
               "--out", tmp_path / "e.emb")
    assert code == 3
    assert "triplet-forge train" in capsys.readouterr().err
    code = run("featurize", "--config", c, "--corpus", tmp_path / "nocorpus", "--out", tmp_path / "f")
    assert code == 3
    assert "gen-corpus" in capsys.readouterr().err


def test_exit_codes(pipeline, tmp_path, monkeypatch):
    d, c = pipeline
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nwhatever = 1\n")
    assert run("gen-corpus", "--config", bad, "--out", tmp_path / "x") == 2
    # corrupted artifact -> I/O class
    emb = tmp_path / "e.emb"
    store.write_embeddings(emb, np.arange(3), np.ones((3, 4)))
    blob = bytearray(emb.read_bytes())
    blob[-1] ^= 1
    emb.write_bytes(bytes(blob))
    assert run("eval-qbe", "--config", c, "--features", d / "feat", "--embeddings", emb,
               "--out", tmp_path / "q.csv") == 3
    monkeypatch.setenv("TRIPLET_FORGE_THREADS", "0")
    assert main(["gen-corpus", "--config", str(c), "--out", str(tmp_path / "y")]) == 2


def test_config_threads_used_without_flag(tmp_path, monkeypatch):
    monkeypatch.delenv("TRIPLET_FORGE_THREADS", raising=False)
    cfg = tmp_path / "t.ini"
    cfg.write_text(TINY.replace("seed = 5", "seed = 5\nthreads = 0"))
    assert main(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 2
    cfg.write_text(TINY.replace("seed = 5", "seed = 5\nthreads = 1"))
    assert main(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
