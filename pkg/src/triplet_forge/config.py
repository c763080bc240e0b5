"""Run configuration: INI files with typed, closed key sets.

Every section has a fixed set of keys; unknown sections or keys are rejected.
CLI overrides use ``section.key=value``. ``RunConfig.dump()`` writes the fully
resolved configuration, which reproduces the run when fed back in.

List values are comma separated. Model layers are written as a comma list of
``conv2d:channels:kernel``, ``residual:channels:kernel``, ``maxpool:kernel``,
``relu``, ``global_avg_pool``, ``flatten`` and ``dense:units``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .errors import ConfigError
from .frontend import FeatureConfig
from .metric import TripletLossConfig, training_policy
from .nn.network import DEFAULT_LAYERS, ModelSpec
from .sampler import SamplerConfig, TripletSource
from .synthcorpus import CorpusConfig


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _auto(conv):
    def parse(text):
        return None if text.strip().lower() == "auto" else conv(text)
    return parse


def _weights(text):
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, _, value = item.partition(":")
        out[TripletSource.parse(name.strip()).name.lower()] = float(value)
    return out


def parse_layers(text) -> tuple:
    layers = []
    for item in text.split(","):
        parts = item.strip().split(":")
        kind, args = parts[0], [int(p) for p in parts[1:]]
        if kind in ("conv2d", "residual"):
            layer = {"type": kind, "channels": args[0], "kernel": args[1] if len(args) > 1 else 3}
            if kind == "conv2d":
                layer["stride"] = 1
        elif kind == "maxpool":
            k = args[0] if args else 2
            layer = {"type": kind, "kernel": k, "stride": k}
        elif kind == "dense":
            layer = {"type": kind, "units": args[0]}
        elif kind in ("relu", "global_avg_pool", "flatten") and not args:
            layer = {"type": kind}
        else:
            raise ValueError(f"bad layer {item.strip()!r}")
        layers.append(layer)
    return tuple(layers)


def format_layers(layers) -> str:
    out = []
    for l in layers:
        kind = l["type"]
        if kind in ("conv2d", "residual"):
            out.append(f"{kind}:{l['channels']}:{l.get('kernel', 3)}")
        elif kind == "maxpool":
            out.append(f"maxpool:{l.get('kernel', 2)}")
        elif kind == "dense":
            out.append(f"dense:{l['units']}")
        else:
            out.append(kind)
    return ",".join(out)


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v!r}" for k, v in value.items())
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "threads": (_auto(int), None),
    },
    "feature": {
        "sample_rate": (int, 16000),
        "window_ms": (float, 25.0),
        "hop_ms": (float, 10.0),
        "n_mels": (int, 64),
        "fft_size": (_auto(int), None),
        "mel_lo_hz": (float, 125.0),
        "mel_hi_hz": (float, 7500.0),
        "log_offset": (float, 0.01),
        "context_frames": (int, 96),
    },
    "corpus": {
        "n_classes": (int, 8),
        "n_recordings": (int, 200),
        "duration_s": (float, 10.0),
        "pool_size": (_ints, (2, 3)),
        "events_per_recording": (_ints, (4, 8)),
        "event_duration_s": (_floats, (0.6, 2.5)),
        "gain_db": (_floats, (-6.0, 0.0)),
        "snr_db": (_floats, (22.0, 22.0)),
        "frequency_jitter": (float, 0.08),
        "label_overlap": (float, 0.5),
        "split_ratios": (_floats, (0.8, 0.1, 0.1)),
        "min_segments": (int, 5),
        "amplitude": (float, 0.04),
    },
    "sampler": {
        "method": (str, "joint"),
        "n_triplets": (int, 4000),
        "sigma": (float, 0.5),
        "freq_shift": (int, 10),
        "alpha": (float, 0.25),
        "delta_t": (float, 10.0),
        "pairs_per_anchor": (int, 1),
        "weights": (_weights, {"noise": 1.0, "translation": 1.0, "mixing": 1.0, "proximity": 1.0}),
    },
    "model": {
        "layers": (parse_layers, DEFAULT_LAYERS),
        "embedding_dim": (int, 128),
    },
    "training": {
        "steps": (int, 100),
        "batch_size": (int, 64),
        "margin": (float, 0.1),
        "mining": (_auto(_bool), None),
        "learning_rate": (_auto(float), None),
        "mining_pool": (str, "negatives"),
    },
    "eval": {
        "segment_windows": (_auto(int), None),
        "qbe_per_class": (int, 100),
        "qbe_seed": (int, 0),
        "hidden_layers": (int, 1),
        "width": (int, 512),
        "classifier_lr": (float, 1e-3),
        "classifier_batch": (int, 32),
        "max_epochs": (int, 30),
        "patience": (int, 5),
        "light_k": (int, 20),
        "light_trials": (int, 3),
        "light_seeds": (_ints, (0, 1, 2)),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()}
                                                  for s, keys in SCHEMA.items()})

    def __getitem__(self, section) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def set(self, section: str, key: str, text: str) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]; known: {', '.join(SCHEMA[section])}")
        parser = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parser(text)
        except (ValueError, IndexError, KeyError) as exc:
            raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from None

    def override(self, assignments) -> "RunConfig":
        """Apply ``section.key=value`` strings."""
        for item in assignments or ():
            lhs, sep, value = item.partition("=")
            section, dot, key = lhs.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            self.set(section, key, value.strip())
        return self

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(section, key, value)
        return cfg

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        if path is None:
            cfg = cls()
        else:
            try:
                with open(path) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            cfg = cls.from_text(text)
        return cfg.override(overrides)

    def dump(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {}
            for key, value in keys.items():
                parser[section][key] = format_layers(value) if key == "layers" else _fmt(value)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def copy(self) -> "RunConfig":
        return RunConfig.from_text(self.dump())

    # -- typed views -----------------------------------------------------

    def feature(self) -> FeatureConfig:
        return FeatureConfig(**self.values["feature"])

    def corpus(self) -> CorpusConfig:
        v = dict(self.values["corpus"])
        v["window_s"] = self.feature().context_frames * self.feature().frame_hop_s
        return CorpusConfig(**v)

    def sampler(self) -> SamplerConfig:
        v = self.values["sampler"]
        return SamplerConfig(sigma=v["sigma"], freq_shift_S=v["freq_shift"], alpha=v["alpha"],
                             delta_t_s=v["delta_t"], pairs_per_anchor=v["pairs_per_anchor"],
                             weights=dict(v["weights"]))

    def model(self, input_shape=None) -> ModelSpec:
        f = self.feature()
        shape = input_shape or (f.n_mels, f.context_frames)
        return ModelSpec(self.values["model"]["layers"], self.values["model"]["embedding_dim"], shape, self.seed)

    def training(self, method=None) -> TripletLossConfig:
        v = self.values["training"]
        mining, lr = training_policy(method or self.values["sampler"]["method"])
        return TripletLossConfig(
            margin=v["margin"], mining=mining if v["mining"] is None else v["mining"],
            batch_size=v["batch_size"], learning_rate=lr if v["learning_rate"] is None else v["learning_rate"],
            steps=v["steps"], log_offset=self.values["feature"]["log_offset"], mining_pool=v["mining_pool"],
        )
