"""``triplet-forge`` command line entry point."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import store
from .config import RunConfig
from .dataset import ExampleSet, build_example_set
from .errors import ArtifactError, ConfigError, MissingArtifactError, NumericError, TripletForgeError
from .evaluation import (
    eval_classifier,
    gap_recovery,
    light_supervision_protocol,
    qbe_evaluate,
    segment_embeddings,
    train_shallow_classifier,
)
from .experiments import SWEEPS, Workspace, load_recipe, log_mel_features, compare_representations, sweep
from .frontend import read_wav
from .metric import train
from .nn import EmbeddingNet
from .sampler import TripletSource, read_triplets, sample, write_triplets
from .synthcorpus import CorpusManifest, generate_corpus

logger = logging.getLogger("triplet_forge")

THREADS_ENV = "TRIPLET_FORGE_THREADS"


# -- shared helpers ----------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None), getattr(args, "set", None))
    overrides = []
    for flag, key in (("seed", "run.seed"), ("steps", "training.steps"), ("sigma", "sampler.sigma"),
                      ("freq_shift", "sampler.freq_shift"), ("alpha", "sampler.alpha"),
                      ("delta_t", "sampler.delta_t"), ("method", "sampler.method"), ("n", "sampler.n_triplets"),
                      ("segment_windows", "eval.segment_windows"), ("per_class", "eval.qbe_per_class"),
                      ("hidden_layers", "eval.hidden_layers"), ("k", "eval.light_k"),
                      ("trials", "eval.light_trials")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    cfg.override(overrides)
    return cfg


def _emit_config(cfg: RunConfig, out: Path) -> None:
    """Resolved config beside an output file, or inside an output directory."""
    out = Path(out)
    target = out / "resolved_config.ini" if out.is_dir() else out.with_name(out.name + ".config.ini")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(cfg.dump())


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_manifest(corpus_dir) -> CorpusManifest:
    path = Path(corpus_dir) / "manifest.jsonl"
    if not path.exists():
        raise MissingArtifactError(path, "gen-corpus")
    return CorpusManifest.load(corpus_dir)


def _spec_path(features_dir, recording_id) -> Path:
    return Path(features_dir) / "spec" / f"{recording_id}.bin"


def _load_split(cfg: RunConfig, features_dir, split) -> tuple[CorpusManifest, ExampleSet]:
    manifest = _load_manifest(features_dir)
    feat = cfg.feature()
    specs = {}
    for rec in manifest.recordings:
        if rec.split == split:
            cells, hop = store.read_spectrogram(_spec_path(features_dir, rec.recording_id))
            if abs(hop - feat.frame_hop_s) > 1e-12:
                raise ConfigError(f"features use frame hop {hop}s but config expects {feat.frame_hop_s}s")
            specs[rec.recording_id] = cells
    ds = build_example_set(manifest, specs, split, feat.context_frames, feat.frame_hop_s)
    return manifest, ds


def _workspace(cfg, features_dir) -> Workspace:
    manifest, tr = _load_split(cfg, features_dir, "train")
    dev, ev = (_load_split(cfg, features_dir, s)[1] for s in ("dev", "eval"))
    return Workspace(manifest, tr, dev, ev)


def _aligned(ds: ExampleSet, path) -> np.ndarray:
    """Embedding rows reordered to match the dataset's windows."""
    ids, vecs = store.read_embeddings(path)
    index = {int(i): k for k, i in enumerate(ids)}
    try:
        rows = [index[int(w)] for w in ds.window_ids()]
    except KeyError:
        raise ArtifactError(f"{path} does not cover every window of the requested split") from None
    return vecs[rows]


def _method_of(triplets) -> str:
    sources = {t.source for t in triplets}
    if len(sources) == 1:
        return next(iter(sources)).name.lower()
    return "joint"


# -- subcommands -------------------------------------------------------------

def cmd_gen_corpus(args):
    cfg = _config(args)
    out = Path(args.out)
    manifest, _ = generate_corpus(cfg.corpus(), cfg.seed, out)
    _emit_config(cfg, out)
    counts = {s: len(manifest.split(s)) for s in ("train", "dev", "eval")}
    _write_csv(out / "metrics.csv", ["split", "recordings"], sorted(counts.items()))
    print(f"wrote {len(manifest.recordings)} recordings to {out}")


def cmd_featurize(args):
    cfg = _config(args)
    manifest = _load_manifest(args.corpus)
    out = Path(args.out)
    feat = cfg.feature()
    from .frontend import mel_spectrogram

    for rec in manifest.recordings:
        wav = Path(args.corpus) / (rec.path or f"wav/{rec.recording_id}.wav")
        if not wav.exists():
            raise MissingArtifactError(wav, "gen-corpus")
        spec = mel_spectrogram(read_wav(wav, feat.sample_rate), feat)
        store.write_spectrogram(_spec_path(out, rec.recording_id), spec.cells.astype(np.float32), feat.frame_hop_s)
    for name in ("manifest.jsonl", "corpus.json"):
        src = Path(args.corpus) / name
        if src.exists() and src.resolve() != (out / name).resolve():
            shutil.copyfile(src, out / name)
    _emit_config(cfg, out)
    print(f"featurized {len(manifest.recordings)} recordings into {out}")


def cmd_sample_triplets(args):
    cfg = _config(args)
    _, ds = _load_split(cfg, args.features, args.split)
    method = cfg["sampler"]["method"]
    if method != "labeled":
        ds = ExampleSet(ds.cells, ds.rec_index, ds.win_index, ds.start_s, None, ds.recording_ids)
    rng = np.random.default_rng(cfg.seed)
    triplets = sample(ds, method, cfg["sampler"]["n_triplets"], cfg.sampler(), rng)
    write_triplets(args.out, triplets)
    _emit_config(cfg, Path(args.out))
    counts = {s.name.lower(): 0 for s in TripletSource}
    for t in triplets:
        counts[t.source.name.lower()] += 1
    _write_csv(Path(args.out).with_name(Path(args.out).name + ".counts.csv"), ["source", "count"], counts.items())
    print(f"wrote {len(triplets)} {method} triplets to {args.out}")


def cmd_train(args):
    cfg = _config(args)
    triplets = []
    for path in args.triplets:
        triplets.extend(read_triplets(path))
    _, ds = _load_split(cfg, args.features, args.split)
    method = _method_of(triplets)
    model = EmbeddingNet(cfg.model((ds.cells.shape[1], ds.cells.shape[2])))
    loss_path = Path(args.loss_csv or str(args.out) + ".loss.csv")
    try:
        model, trace = train(model, triplets, ds, cfg.training(method), seed=cfg.seed)
    except NumericError as exc:
        trace = getattr(exc, "trace", None) or []
        _write_csv(loss_path, ["step", "loss", "active_triplet_fraction"], _trace_rows(trace))
        if getattr(exc, "model", None) is not None:
            exc.model.save(args.out)
            logger.error("saved last good parameters to %s", args.out)
        raise
    model.save(args.out, getattr(model, "optimizer_", None))
    _write_csv(loss_path, ["step", "loss", "active_triplet_fraction"], _trace_rows(trace))
    _emit_config(cfg, Path(args.out))
    print(f"trained {method} model for {len(trace)} steps -> {args.out}")


def _trace_rows(trace):
    return [(s, f"{l:.9g}", f"{a:.6f}") for s, l, a in trace]


def cmd_embed(args):
    cfg = _config(args)
    _, ds = _load_split(cfg, args.features, args.split)
    if args.log_mel:
        vectors = log_mel_features(ds, cfg["feature"]["log_offset"])
    else:
        if args.checkpoint is None:
            raise ConfigError("embed needs --checkpoint or --log-mel")
        if not Path(args.checkpoint).exists():
            raise MissingArtifactError(args.checkpoint, "train")
        model = EmbeddingNet.load(args.checkpoint)
        from .frontend import stabilized_log

        vectors = model.embed(stabilized_log(ds.cells, cfg["feature"]["log_offset"]).astype(np.float32))
    store.write_embeddings(args.out, ds.window_ids(), vectors)
    _emit_config(cfg, Path(args.out))
    print(f"wrote {len(vectors)} x {vectors.shape[1]} embeddings to {args.out}")


def _names(paths, names):
    if names:
        if len(names) != len(paths):
            raise ConfigError("--names must match the number of embedding files")
        return names
    return [Path(p).stem for p in paths]


def cmd_eval_qbe(args):
    cfg = _config(args)
    _, ds = _load_split(cfg, args.features, args.split)
    e = cfg["eval"]
    seg = ds.segment_ids(e["segment_windows"])
    names = _names(args.embeddings, args.names)
    results = {}
    for name, path in zip(names, args.embeddings):
        segs = segment_embeddings(_aligned(ds, path), seg, ds.labels)
        results[name] = qbe_evaluate(segs, e["qbe_per_class"], e["qbe_seed"])
    _report(args, cfg, results, names)


def _report(args, cfg, results, names):
    maps = {n: (r.mean_ap if hasattr(r, "mean_ap") else r) for n, r in results.items()}
    recovery = {}
    if args.baseline and args.topline:
        for ref in (args.baseline, args.topline):
            if ref not in maps:
                raise ConfigError(f"--baseline/--topline {ref!r} is not one of {names}")
        for n in names:
            try:
                recovery[n] = gap_recovery(maps[args.baseline], maps[args.topline], maps[n])
            except ValueError as exc:
                raise NumericError(f"gap recovery undefined: {exc}") from None
    rows = []
    for n in names:
        r = results[n]
        for c, ap in sorted(getattr(r, "per_class", {}).items()):
            rows.append((n, c, f"{ap:.6f}", ""))
        rows.append((n, "mAP", f"{maps[n]:.6f}", f"{recovery[n]:.2f}" if n in recovery else ""))
    _write_csv(args.out, ["representation", "class_id", "ap", "recovery_pct"], rows)
    _emit_config(cfg, Path(args.out))
    for n in names:
        extra = f"  recovery {recovery[n]:.1f}%" if n in recovery else ""
        print(f"{n}: mAP {maps[n]:.4f}{extra}")


def cmd_eval_classifier(args):
    cfg = _config(args)
    e = cfg["eval"]
    ws = _workspace(cfg, args.features)
    names = _names(args.embeddings, args.names)
    results = {}
    for name, prefix in zip(names, args.embeddings):
        feats = {s: _aligned(getattr(ws, s), f"{prefix}.{s}.emb") for s in ("train", "dev", "eval")}
        clf = train_shallow_classifier(
            feats["train"], ws.train.labels, ws.n_classes, e["hidden_layers"], e["width"], cfg.seed,
            val=(feats["dev"], ws.dev.labels, ws.dev.segment_ids(e["segment_windows"])),
            learning_rate=e["classifier_lr"], batch_size=e["classifier_batch"], max_epochs=e["max_epochs"],
            patience=e["patience"],
        )
        results[name] = eval_classifier(clf, feats["eval"], ws.eval.labels,
                                        ws.eval.segment_ids(e["segment_windows"]), ws.n_classes)
    _report(args, cfg, results, names)


def cmd_light_supervision(args):
    cfg = _config(args)
    e = cfg["eval"]
    ws = _workspace(cfg, args.features)
    seg = e["segment_windows"]
    names = _names(args.embeddings, args.names)
    results = {}
    for name, prefix in zip(names, args.embeddings):
        feats = {s: _aligned(getattr(ws, s), f"{prefix}.{s}.emb") for s in ("train", "dev", "eval")}
        res = light_supervision_protocol(
            feats["train"], ws.train.labels, ws.train.segment_ids(seg), feats["eval"], ws.eval.labels,
            ws.eval.segment_ids(seg), ws.n_classes, k=e["light_k"], trials=e["light_trials"],
            seeds=e["light_seeds"], val=(feats["dev"], ws.dev.labels, ws.dev.segment_ids(seg)),
            hidden_layers=1, width=e["width"], learning_rate=e["classifier_lr"],
            batch_size=e["classifier_batch"], max_epochs=e["max_epochs"], patience=e["patience"],
        )
        results[name] = res.mean_ap
    _report(args, cfg, results, names)


def cmd_sweep(args):
    cfg = _config(args)
    grid = [float(v) if args.param in ("sigma", "alpha", "delta-t") else int(v) for v in args.grid.split(",")]
    ws = _workspace(cfg, args.features) if args.features else None
    rows = sweep(cfg, args.param, grid, ws)
    _write_csv(args.out, ["param", "value", "mAP"],
               [(args.param, v, f"{r.mean_ap:.6f}") for v, r in zip(grid, rows)])
    _emit_config(cfg, Path(args.out))
    for v, r in zip(grid, rows):
        print(f"{args.param}={v}: mAP {r.mean_ap:.4f}")


def cmd_report(args):
    cfg = load_recipe(args.recipe).override(args.set)
    if args.seed is not None:
        cfg.override([f"run.seed={args.seed}"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = compare_representations(cfg)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.md").write_text(report.to_markdown())
    _emit_config(cfg, out)
    print(report.to_markdown())


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="triplet-forge", description="Triplet embeddings for sound event retrieval.")
    p.add_argument("--threads", type=int, default=None, help=f"cap worker threads (env {THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-corpus", cmd_gen_corpus, "synthesize the labeled corpus")
    sp.add_argument("--out", required=True)

    sp = add("featurize", cmd_featurize, "mel-energy spectrograms for every recording")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)

    sp = add("sample-triplets", cmd_sample_triplets, "draw a triplet shard")
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", default="train")
    sp.add_argument("--method", choices=["labeled", "noise", "translation", "mixing", "proximity", "joint"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--freq-shift", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--delta-t", type=float)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train an embedding network on triplet shards")
    sp.add_argument("--triplets", nargs="+", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", default="train")
    sp.add_argument("--model-config", dest="config", help="alias of --config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--loss-csv")
    sp.add_argument("--out", required=True)

    sp = add("embed", cmd_embed, "embed the windows of one split")
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", default="eval")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--log-mel", action="store_true", help="store flattened log-mel windows instead")
    sp.add_argument("--out", required=True)

    for name, fn, text in (("eval-qbe", cmd_eval_qbe, "query-by-example mAP"),
                           ("eval-classifier", cmd_eval_classifier, "shallow classifier mAP"),
                           ("light-supervision", cmd_light_supervision, "k-per-class classifier protocol")):
        sp = add(name, fn, text)
        sp.add_argument("--features", required=True)
        sp.add_argument("--embeddings", nargs="+", required=True,
                        help="embedding files (eval-qbe) or prefixes with .train/.dev/.eval.emb files")
        sp.add_argument("--names", nargs="+")
        sp.add_argument("--baseline", help="representation name used as the recovery baseline")
        sp.add_argument("--topline", help="representation name used as the recovery topline")
        sp.add_argument("--segment-windows", type=int)
        sp.add_argument("--out", required=True)
        if name == "eval-qbe":
            sp.add_argument("--split", default="eval")
            sp.add_argument("--per-class", type=int)
        elif name == "eval-classifier":
            sp.add_argument("--hidden-layers", type=int, choices=[1, 2])
        else:
            sp.add_argument("--k", type=int)
            sp.add_argument("--trials", type=int)

    sp = add("sweep", cmd_sweep, "QbE mAP over a grid of one sampler parameter")
    sp.add_argument("--param", required=True, choices=sorted(SWEEPS))
    sp.add_argument("--grid", required=True, help="comma separated values")
    sp.add_argument("--features", help="featurized corpus; generated from the config when omitted")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("report", help="run an experiment recipe and write the comparison tables")
    sp.add_argument("--recipe", default="experiments/paper-orderings")
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def _threads(args) -> int | None:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    else:
        path = getattr(args, "config", None)
        if path is None and args.command == "report":
            return load_recipe(args.recipe)["run"]["threads"]
        n = RunConfig.load(path)["run"]["threads"] if path else None
        if n is None:
            return None
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        n = _threads(args)
        if n is None:
            args.func(args)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=n):
                args.func(args)
    except TripletForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ArtifactError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
