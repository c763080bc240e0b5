"""Experiment recipes: representation comparison, hyperparameter sweeps, light supervision."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import ExampleSet, build_example_set, featurize_manifest
from .errors import ConfigError
from .evaluation import gap_recovery, light_supervision_protocol, qbe_evaluate, segment_embeddings
from .frontend import stabilized_log
from .metric import TripletEmbedder
from .synthcorpus import CorpusManifest, generate_corpus

logger = logging.getLogger(__name__)

SINGLE_SOURCES = ("noise", "translation", "mixing", "proximity")

# sweep parameter -> (sampler key, method it drives)
SWEEPS = {
    "sigma": ("sigma", "noise"),
    "freq-shift": ("freq_shift", "translation"),
    "alpha": ("alpha", "mixing"),
    "delta-t": ("delta_t", "proximity"),
}


@dataclass
class Workspace:
    """Featurized corpus split into window tables."""

    manifest: CorpusManifest
    train: ExampleSet
    dev: ExampleSet
    eval: ExampleSet

    @property
    def n_classes(self) -> int:
        return len(self.manifest.classes)


def prepare(cfg: RunConfig, manifest=None, waveforms=None) -> Workspace:
    if manifest is None:
        manifest, waveforms = generate_corpus(cfg.corpus(), cfg.seed)
    feat = cfg.feature()
    specs = featurize_manifest(manifest, waveforms, feat)
    sets = {split: build_example_set(manifest, specs, split, feat.context_frames, feat.frame_hop_s)
            for split in ("train", "dev", "eval")}
    return Workspace(manifest, sets["train"], sets["dev"], sets["eval"])


def unlabeled(ds: ExampleSet) -> ExampleSet:
    return ExampleSet(ds.cells, ds.rec_index, ds.win_index, ds.start_s, None, ds.recording_ids)


def log_mel_features(ds: ExampleSet, log_offset: float) -> np.ndarray:
    """The raw baseline: each log-mel window flattened to one vector."""
    return stabilized_log(ds.cells, log_offset).reshape(len(ds), -1)


def make_embedder(cfg: RunConfig, method: str, **sampler_overrides) -> TripletEmbedder:
    s, t, m = cfg["sampler"], cfg["training"], cfg["model"]
    params = dict(sigma=s["sigma"], freq_shift=s["freq_shift"], alpha=s["alpha"], delta_t=s["delta_t"])
    params.update(sampler_overrides)
    return TripletEmbedder(
        method=method, n_triplets=s["n_triplets"], steps=t["steps"], batch_size=t["batch_size"],
        margin=t["margin"], mining=t["mining"], learning_rate=t["learning_rate"],
        weights=dict(s["weights"]), layers=m["layers"], embedding_dim=m["embedding_dim"],
        log_offset=cfg["feature"]["log_offset"], mining_pool=t["mining_pool"], random_state=cfg.seed,
        **params,
    )


def fit_embedder(cfg: RunConfig, ws: Workspace, method: str, **sampler_overrides) -> TripletEmbedder:
    emb = make_embedder(cfg, method, **sampler_overrides)
    start = time.perf_counter()
    emb.fit(ws.train if method == "labeled" else unlabeled(ws.train))
    logger.info("trained %s in %.1fs", method, time.perf_counter() - start)
    return emb


def qbe_map(cfg: RunConfig, ds: ExampleSet, vectors) -> float:
    e = cfg["eval"]
    segs = segment_embeddings(vectors, ds.segment_ids(e["segment_windows"]), ds.labels)
    return qbe_evaluate(segs, e["qbe_per_class"], e["qbe_seed"]).mean_ap


@dataclass
class Row:
    representation: str
    mean_ap: float
    recovery: float | None = None


@dataclass
class OrderingsReport:
    qbe: list = field(default_factory=list)
    sweep: list = field(default_factory=list)
    light: list = field(default_factory=list)
    loss_traces: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def value(self, table, name) -> float:
        for row in getattr(self, table):
            if row.representation == name:
                return row.mean_ap
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "representation", "mAP", "recovery_pct"])
        for table in ("qbe", "sweep", "light"):
            for row in getattr(self, table):
                w.writerow([table, row.representation, f"{row.mean_ap:.6f}",
                            "" if row.recovery is None else f"{row.recovery:.2f}"])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = []
        for title, table in (("Segment retrieval (QbE)", "qbe"), ("Frequency-shift sweep", "sweep"),
                             ("Light supervision", "light")):
            rows = getattr(self, table)
            if not rows:
                continue
            lines += [f"### {title}", "", "| Representation | mAP | Recovery |", "|---|---|---|"]
            for r in rows:
                rec = "" if r.recovery is None else f"{r.recovery:.0f}%"
                lines.append(f"| {r.representation} | {r.mean_ap:.3f} | {rec} |")
            lines.append("")
        return "\n".join(lines)


def with_recovery(rows, baseline_name="log-mel", topline_name="labeled"):
    values = {r.representation: r.mean_ap for r in rows}
    base, top = values[baseline_name], values[topline_name]
    if top <= base:
        logger.warning("topline %.4f does not exceed baseline %.4f; recovery undefined", top, base)
        return rows
    return [Row(r.representation, r.mean_ap, gap_recovery(base, top, r.mean_ap)) for r in rows]


def light_supervision(cfg: RunConfig, ws: Workspace, train_features, eval_features, dev_features) -> float:
    e = cfg["eval"]
    seg = e["segment_windows"]
    res = light_supervision_protocol(
        train_features, ws.train.labels, ws.train.segment_ids(seg),
        eval_features, ws.eval.labels, ws.eval.segment_ids(seg), ws.n_classes,
        k=e["light_k"], trials=e["light_trials"], seeds=e["light_seeds"],
        val=(dev_features, ws.dev.labels, ws.dev.segment_ids(seg)),
        hidden_layers=1, width=e["width"], learning_rate=e["classifier_lr"],
        batch_size=e["classifier_batch"], max_epochs=e["max_epochs"], patience=e["patience"],
    )
    return res.mean_ap


def compare_representations(cfg: RunConfig, ws: Workspace | None = None, sweep_grid=(0, 10),
                            light: bool = True) -> OrderingsReport:
    """Baseline, topline, single-source and joint embeddings under one model config.

    Also runs a frequency-shift sweep over ``sweep_grid`` and the
    light-supervision comparison of joint embeddings against raw log-mel.
    """
    start = time.perf_counter()
    ws = ws or prepare(cfg)
    offset = cfg["feature"]["log_offset"]
    report = OrderingsReport()
    rows = [Row("log-mel", qbe_map(cfg, ws.eval, log_mel_features(ws.eval, offset)))]
    models = {}
    for method in ("labeled",) + SINGLE_SOURCES + ("joint",):
        models[method] = fit_embedder(cfg, ws, method)
        report.loss_traces[method] = models[method].loss_trace_
        rows.append(Row(method, qbe_map(cfg, ws.eval, models[method].transform(ws.eval.cells))))
        logger.info("%s mAP %.4f", method, rows[-1].mean_ap)
    report.qbe = with_recovery(rows)

    for S in sweep_grid:
        if S == cfg["sampler"]["freq_shift"]:
            value = report.value("qbe", "translation")
        else:
            value = qbe_map(cfg, ws.eval, fit_embedder(cfg, ws, "translation", freq_shift=S).transform(ws.eval.cells))
        report.sweep.append(Row(f"S={S}", value))

    if light:
        joint = models["joint"]
        report.light = [
            Row("log-mel", light_supervision(cfg, ws, log_mel_features(ws.train, offset),
                                             log_mel_features(ws.eval, offset), log_mel_features(ws.dev, offset))),
            Row("joint", light_supervision(cfg, ws, joint.transform(ws.train.cells), joint.transform(ws.eval.cells),
                                           joint.transform(ws.dev.cells))),
        ]
    report.elapsed_s = time.perf_counter() - start
    return report


def sweep(cfg: RunConfig, param: str, grid, ws: Workspace | None = None) -> list[Row]:
    """QbE mAP of the single-source embedding driven by ``param`` at each grid value."""
    if param not in SWEEPS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEPS)}")
    key, method = SWEEPS[param]
    ws = ws or prepare(cfg)
    rows = []
    for value in grid:
        emb = fit_embedder(cfg, ws, method, **{key: value})
        rows.append(Row(f"{param}={value}", qbe_map(cfg, ws.eval, emb.transform(ws.eval.cells))))
    return rows


def load_recipe(path) -> RunConfig:
    path = Path(path)
    if not path.exists() and path.with_suffix(".cfg").exists():
        path = path.with_suffix(".cfg")
    return RunConfig.load(path)
