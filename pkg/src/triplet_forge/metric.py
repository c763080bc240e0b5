"""Triplet loss, within-batch semi-hard negative mining and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_windows
from .dataset import ExampleSet, as_example_set
from .errors import ConfigError, NumericError, TrainingDivergedError
from .frontend import stabilized_log
from .nn import Adam, EmbeddingNet, ModelSpec
from .sampler import SamplerConfig, TripletSource, sample

logger = logging.getLogger(__name__)

MINING_LR = 1e-4
NO_MINING_LR = 1e-6


def training_policy(method) -> tuple[bool, float]:
    """(mining enabled, learning rate) for a sampling method.

    Labeled, proximity and joint triplets train with mining at 1e-4; the
    transform-based sources train without mining at 1e-6.
    """
    name = method.name.lower() if isinstance(method, TripletSource) else str(method).lower()
    if name in ("labeled", "proximity", "joint"):
        return True, MINING_LR
    if name in ("noise", "translation", "mixing"):
        return False, NO_MINING_LR
    raise ConfigError(f"unknown sampling method {method!r}")


@dataclass(frozen=True)
class TripletLossConfig:
    margin: float = 0.1
    mining: bool = True
    batch_size: int = 64
    learning_rate: float = MINING_LR
    steps: int = 100
    log_offset: float = 0.01
    mining_pool: str = "negatives"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.mining_pool not in ("negatives", "all"):
            raise ConfigError("mining_pool must be 'negatives' or 'all'")


def triplet_loss(anchor, positive, negative, margin: float = 0.1):
    """Hinge triplet loss summed over the batch.

    Returns ``(loss, (d_anchor, d_positive, d_negative), active)`` where the
    gradients are w.r.t. the embeddings and ``active`` flags triplets with a
    strictly positive hinge (the kink itself counts as inactive).
    """
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.asarray(negative, dtype=np.float64)
    for name, arr in (("anchor", a), ("positive", p), ("negative", n)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite {name} embedding ({int((~np.isfinite(arr)).sum())} entries)")
    d_ap = np.sum((a - p) ** 2, axis=1)
    d_an = np.sum((a - n) ** 2, axis=1)
    hinge = d_ap - d_an + margin
    active = hinge > 0
    loss = float(np.sum(np.where(active, hinge, 0.0)))
    w = active[:, None].astype(np.float64)
    grad_a = 2 * w * (n - p)
    grad_p = -2 * w * (a - p)
    grad_n = 2 * w * (a - n)
    return loss, (grad_a, grad_p, grad_n), active


def satisfies_margin(anchor, positive, negative, margin: float = 0.1) -> np.ndarray:
    """Per-triplet check of ``d2(a, p) + margin <= d2(a, n)``."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (anchor, positive, negative))
    return np.sum((a - p) ** 2, axis=1) + margin <= np.sum((a - n) ** 2, axis=1)


def semi_hard_mine(anchors, positives, candidates, original=None) -> np.ndarray:
    """Index of the closest candidate still farther from the anchor than the positive.

    Squared distances give the same ordering as distances. Ties go to the
    lowest candidate index; pairs without a qualifying candidate keep
    ``original[i]`` (default: candidate ``i``, the pair's own negative).
    """
    a = np.asarray(anchors, dtype=np.float64)
    p = np.asarray(positives, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    if original is None:
        original = np.arange(len(a))
    d_ap = np.sum((a - p) ** 2, axis=1)
    d_an = np.sum((a[:, None, :] - c[None, :, :]) ** 2, axis=2)
    feasible = d_an > d_ap[:, None]
    masked = np.where(feasible, d_an, np.inf)
    choice = np.argmin(masked, axis=1)
    return np.where(feasible.any(axis=1), choice, np.asarray(original))


def _batches(triplets, batch_size, mining):
    """Group triplets into batches of a single mining regime, preserving order."""
    buffers = {True: [], False: []}
    out = []
    for t in triplets:
        regime = mining and t.source != TripletSource.MIXING
        buffers[regime].append(t)
        if len(buffers[regime]) == batch_size:
            out.append((regime, buffers[regime]))
            buffers[regime] = []
    for regime in (True, False):
        if len(buffers[regime]) >= 2:
            out.append((regime, buffers[regime]))
    return out


def materialize_batch(triplets, dataset: ExampleSet, log_offset: float):
    """(3B, F, T) log-domain stack: anchors, then positives, then negatives."""
    xa, xp, xn = zip(*(t.materialize(dataset) for t in triplets))
    energy = np.stack(xa + xp + xn)
    return stabilized_log(energy, log_offset).astype(np.float32)


def train_step(model: EmbeddingNet, optimizer: Adam, x, batch_size: int, cfg: TripletLossConfig, mine: bool):
    """One optimizer step on a stacked (anchors, positives, negatives) batch."""
    B = batch_size
    emb = model.forward(x).astype(np.float64)
    a, p, n = emb[:B], emb[B:2 * B], emb[2 * B:]
    neg_rows = np.arange(2 * B, 3 * B)
    if mine:
        if cfg.mining_pool == "all":
            pool_rows = np.arange(3 * B)
            own = np.arange(2 * B, 3 * B)
            pool = emb
            idx = semi_hard_mine(a, p, pool, original=own)
            # a pair may not mine its own anchor or positive
            bad = (idx == np.arange(B)) | (idx == np.arange(B) + B)
            idx = np.where(bad, own, idx)
            neg_rows = pool_rows[idx]
        else:
            neg_rows = 2 * B + semi_hard_mine(a, p, n)
    loss, (ga, gp, gn), active = triplet_loss(a, p, emb[neg_rows], cfg.margin)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    grad = np.zeros_like(emb)
    grad[:B] += ga
    grad[B:2 * B] += gp
    np.add.at(grad, neg_rows, gn)
    grad /= B
    grads = [g for _, g in model.backward(grad.astype(model.dtype))]
    optimizer.step(grads)
    return loss / B, float(active.mean())


def train(model: EmbeddingNet, triplets, dataset, cfg: TripletLossConfig = TripletLossConfig(), seed: int = 0):
    """Optimize ``model`` on ``triplets`` for ``cfg.steps`` steps.

    Returns ``(model, trace)`` with trace rows ``(step, loss, active_fraction)``
    where loss is the per-triplet mean. Batches cycle over the triplet list in a
    seed-determined order each epoch.
    """
    dataset = as_example_set(dataset)
    triplets = list(triplets)
    if len(triplets) < 2:
        raise ValueError("need at least two triplets to form a batch")
    optimizer = Adam([p for _, p in model.parameters()], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(seed)
    trace = []
    batches = []
    step = 0
    while step < cfg.steps:
        if not batches:
            order = rng.permutation(len(triplets))
            batches = _batches([triplets[i] for i in order], cfg.batch_size, cfg.mining)
            if not batches:
                raise ValueError("no batch of at least two triplets can be formed")
        regime, batch = batches.pop(0)
        x = materialize_batch(batch, dataset, cfg.log_offset)
        snapshot = [p.copy() for _, p in model.parameters()]
        try:
            loss, active = train_step(model, optimizer, x, len(batch), cfg, regime)
            if not all(np.all(np.isfinite(p)) for _, p in model.parameters()):
                raise NumericError("non-finite parameters after update")
        except NumericError as exc:
            model.set_parameters({name: v for (name, _), v in zip(model.parameters(), snapshot)})
            raise TrainingDivergedError(f"training diverged at step {step}: {exc}", model, trace) from exc
        trace.append((step, loss, active))
        step += 1
    model.optimizer_ = optimizer
    return model, trace


class TripletEmbedder(TransformerMixin, BaseEstimator):
    """Learns a unit-norm embedding of energy-domain context windows.

    ``fit`` samples triplets with ``method`` and trains the network; ``transform``
    maps (n, F, T) energy windows to (n, embedding_dim) embeddings. Mining and
    learning rate follow the per-method policy unless given explicitly.
    """

    def __init__(self, method="joint", n_triplets=4000, steps=100, batch_size=64, margin=0.1,
                 mining=None, learning_rate=None, sigma=0.5, freq_shift=10, alpha=0.25,
                 delta_t=10.0, weights=None, layers=None, embedding_dim=128, log_offset=0.01,
                 mining_pool="negatives", random_state=0):
        self.method = method
        self.n_triplets = n_triplets
        self.steps = steps
        self.batch_size = batch_size
        self.margin = margin
        self.mining = mining
        self.learning_rate = learning_rate
        self.sigma = sigma
        self.freq_shift = freq_shift
        self.alpha = alpha
        self.delta_t = delta_t
        self.weights = weights
        self.layers = layers
        self.embedding_dim = embedding_dim
        self.log_offset = log_offset
        self.mining_pool = mining_pool
        self.random_state = random_state

    def _sampler_config(self):
        kwargs = dict(sigma=self.sigma, freq_shift_S=self.freq_shift, alpha=self.alpha, delta_t_s=self.delta_t)
        if self.weights is not None:
            kwargs["weights"] = self.weights
        return SamplerConfig(**kwargs)

    def loss_config(self) -> TripletLossConfig:
        mining, lr = training_policy(self.method)
        return TripletLossConfig(
            margin=self.margin,
            mining=mining if self.mining is None else bool(self.mining),
            batch_size=self.batch_size,
            learning_rate=lr if self.learning_rate is None else self.learning_rate,
            steps=self.steps,
            log_offset=self.log_offset,
            mining_pool=self.mining_pool,
        )

    def model_spec(self, input_shape) -> ModelSpec:
        kwargs = {} if self.layers is None else {"layers": tuple(self.layers)}
        return ModelSpec(embedding_dim=self.embedding_dim, input_shape=tuple(input_shape),
                         seed=int(self.random_state), **kwargs)

    def fit(self, X, y=None, groups=None, times=None):
        """Fit on energy windows.

        ``X`` is an ExampleSet or an (n, F, T) array; with an array, ``groups``
        gives each window's recording, ``times`` its start time and ``y`` its
        label set (needed only for the labeled method).
        """
        dataset = self._as_dataset(X, y, groups, times)
        rng = np.random.default_rng(self.random_state)
        triplets = sample(dataset, self.method, self.n_triplets, self._sampler_config(), rng)
        return self.fit_triplets(triplets, dataset)

    def fit_triplets(self, triplets, dataset):
        dataset = as_example_set(dataset)
        self.model_ = EmbeddingNet(self.model_spec(dataset.cells.shape[1:]))
        self.model_, self.loss_trace_ = train(self.model_, triplets, dataset, self.loss_config(),
                                              seed=int(self.random_state))
        self.n_features_in_ = int(np.prod(dataset.cells.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_windows(X, self.model_.spec.input_shape)
        return self.model_.embed(stabilized_log(X, self.log_offset).astype(np.float32))

    @staticmethod
    def _as_dataset(X, y, groups, times):
        if isinstance(X, ExampleSet):
            return X
        if isinstance(X, (list, tuple)) and X and hasattr(X[0], "window"):
            return as_example_set(X)
        X = check_windows(X)
        n = len(X)
        groups = np.zeros(n, dtype=np.int64) if groups is None else np.unique(np.asarray(groups), return_inverse=True)[1]
        if times is None:
            times = np.zeros(n)
            for g in np.unique(groups):
                rows = np.flatnonzero(groups == g)
                times[rows] = np.arange(len(rows)) * 0.96
        win_index = np.zeros(n, dtype=np.int64)
        for g in np.unique(groups):
            rows = np.flatnonzero(groups == g)
            win_index[rows] = np.arange(len(rows))
        return ExampleSet(X, groups, win_index, times, y)
