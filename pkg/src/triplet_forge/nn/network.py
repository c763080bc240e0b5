"""Embedding network assembled from a declarative layer list."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import store
from ..errors import ConfigError
from .layers import Conv2D, Dense, Flatten, GlobalAvgPool, L2Normalize, MaxPool2D, ReLU, Residual

DEFAULT_LAYERS = (
    {"type": "conv2d", "kernel": 3, "channels": 16, "stride": 1},
    {"type": "relu"},
    {"type": "maxpool", "kernel": 2, "stride": 2},
    {"type": "conv2d", "kernel": 3, "channels": 32, "stride": 1},
    {"type": "relu"},
    {"type": "maxpool", "kernel": 2, "stride": 2},
    {"type": "conv2d", "kernel": 3, "channels": 64, "stride": 1},
    {"type": "relu"},
    {"type": "global_avg_pool"},
)

LAYER_TYPES = {"conv2d", "maxpool", "relu", "global_avg_pool", "dense", "flatten", "residual"}


@dataclass(frozen=True)
class ModelSpec:
    """Layer list of the trunk; a dense(embedding_dim) + L2 head is always appended."""

    layers: tuple = DEFAULT_LAYERS
    embedding_dim: int = 128
    input_shape: tuple = (64, 96)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        for layer in self.layers:
            if layer.get("type") not in LAYER_TYPES:
                raise ConfigError(f"unknown layer type {layer.get('type')!r}")
        object.__setattr__(self, "layers", tuple(dict(l) for l in self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    def to_dict(self) -> dict:
        return {"layers": [dict(l) for l in self.layers], "embedding_dim": self.embedding_dim,
                "input_shape": list(self.input_shape), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        unknown = set(d) - {"layers", "embedding_dim", "input_shape", "seed"}
        if unknown:
            raise ConfigError(f"unknown model spec keys {sorted(unknown)}")
        return cls(tuple(d.get("layers", DEFAULT_LAYERS)), d.get("embedding_dim", 128),
                   tuple(d.get("input_shape", (64, 96))), d.get("seed", 0))


def _build(spec: ModelSpec, dtype):
    rng = np.random.default_rng(spec.seed)
    shape = (1, *spec.input_shape)
    layers = []
    for conf in spec.layers:
        kind = conf["type"]
        if kind == "conv2d":
            layer = Conv2D(shape[0], conf["channels"], conf.get("kernel", 3), conf.get("stride", 1),
                           conf.get("padding"), rng, dtype)
        elif kind == "residual":
            layer = Residual(shape[0], conf.get("channels", shape[0]), conf.get("kernel", 3), rng, dtype)
        elif kind == "maxpool":
            layer = MaxPool2D(conf.get("kernel", 2), conf.get("stride"))
        elif kind == "relu":
            layer = ReLU()
        elif kind == "global_avg_pool":
            layer = GlobalAvgPool()
        elif kind == "flatten":
            layer = Flatten()
        else:
            if len(shape) > 1:
                layers.append(Flatten())
                shape = layers[-1].output_shape(shape)
            layer = Dense(shape[0], conf["units"], rng, dtype)
        if len(shape) == 1 and kind in ("conv2d", "residual", "maxpool", "global_avg_pool"):
            raise ConfigError(f"{kind} cannot follow a flat layer")
        shape = layer.output_shape(shape)
        if min(shape) < 1:
            raise ConfigError(f"layer {conf} collapses the feature map to {shape}")
        layers.append(layer)
    if len(shape) > 1:
        layers.append(Flatten())
        shape = layers[-1].output_shape(shape)
    layers.append(Dense(shape[0], spec.embedding_dim, rng, dtype))
    layers.append(L2Normalize())
    if layers:
        layers[0].need_input_grad = False
    return layers


def _region_parts(layer):
    if isinstance(layer, ReLU):
        return [layer._mask]
    if isinstance(layer, MaxPool2D):
        return [layer._cache[1]]
    if isinstance(layer, L2Normalize):
        return [layer._cache[2]]
    if isinstance(layer, Residual):
        return [layer.relu1._mask, layer.relu2._mask]
    return []


class EmbeddingNet:
    """Maps (N, F, T) log-domain windows to (N, d) unit-norm embeddings."""

    def __init__(self, spec: ModelSpec = ModelSpec(), dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers = _build(spec, self.dtype)

    @property
    def embedding_dim(self) -> int:
        return self.spec.embedding_dim

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[2:] != self.spec.input_shape:
            raise ConfigError(f"input windows {x.shape[2:]} do not match model input {self.spec.input_shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy):
        dy = np.asarray(dy, dtype=self.dtype)
        expected = (self.embedding_dim,)
        if dy.ndim != 2 or dy.shape[1:] != expected:
            raise ConfigError(f"upstream gradient shape {dy.shape} does not match embeddings (*, {expected[0]})")
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return self.gradients()

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", layer.grads[k]) for i, layer in enumerate(self.layers) for k in layer.params]

    def set_parameters(self, values) -> None:
        values = dict(values)
        for i, layer in enumerate(self.layers):
            for k in list(layer.params):
                name = f"{i}.{k}"
                if values[name].shape != layer.params[k].shape:
                    raise ConfigError(f"parameter {name}: shape {values[name].shape} != {layer.params[k].shape}")
                layer.params[k] = np.array(values[name], dtype=self.dtype)
            if isinstance(layer, Residual):
                for name, child in layer._children().items():
                    for k in child.params:
                        child.params[k] = layer.params[f"{name}.{k}"]

    def n_parameters(self) -> int:
        return sum(v.size for _, v in self.parameters())

    def astype(self, dtype) -> "EmbeddingNet":
        """Copy of the network in another float type (e.g. a float64 shadow)."""
        clone = EmbeddingNet(self.spec, dtype)
        clone.set_parameters(self.parameters())
        return clone

    def embed(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        if len(x) == 0:
            return np.zeros((0, self.embedding_dim), dtype=self.dtype)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def save(self, path, optimizer=None) -> None:
        state = None if optimizer is None else optimizer.state_dict()
        store.write_checkpoint(path, self.spec.to_dict(), self.parameters(), state)

    @classmethod
    def load(cls, path, with_optimizer: bool = False):
        spec, params, opt = store.read_checkpoint(path, load_optimizer=with_optimizer)
        net = cls(ModelSpec.from_dict(spec))
        net.set_parameters(params)
        return (net, opt) if with_optimizer else net
