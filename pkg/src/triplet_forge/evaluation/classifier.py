"""Shallow multi-label classifiers on fixed window features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_features, check_multilabel, multi_hot
from ..errors import ConfigError
from ..nn import Adam, Dense, ReLU
from .qbe import average_precision, mean_average_precision

logger = logging.getLogger(__name__)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class ShallowClassifier(ClassifierMixin, BaseEstimator):
    """Fully connected ReLU network with one independent logistic output per class.

    Features are standardized with training statistics. Training minimizes the
    per-class binary cross-entropy with Adam; when validation data is given,
    the epoch with the best validation mAP is kept (early stopping).
    """

    def __init__(self, hidden_layers=1, width=512, learning_rate=1e-3, batch_size=32,
                 max_epochs=30, patience=5, random_state=0):
        self.hidden_layers = hidden_layers
        self.width = width
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _build(self, n_in, n_out, rng):
        if self.hidden_layers not in (1, 2):
            raise ConfigError("hidden_layers must be 1 or 2")
        if self.width < 1:
            raise ConfigError("width must be >= 1")
        layers, size = [], n_in
        for _ in range(self.hidden_layers):
            layers += [Dense(size, self.width, rng), ReLU()]
            size = self.width
        layers.append(Dense(size, n_out, rng))
        layers[0].need_input_grad = False
        return layers

    def _logits(self, X):
        h = ((X - self.mean_) / self.scale_).astype(np.float32)
        for layer in self.layers_:
            h = layer.forward(h)
        return h

    def fit(self, X, Y, X_val=None, Y_val=None, val_groups=None):
        X = check_features(X)
        Y = check_multilabel(Y, len(X))
        rng = np.random.default_rng(self.random_state)
        self.mean_ = X.mean(axis=0, dtype=np.float64)
        self.scale_ = np.maximum(X.std(axis=0, dtype=np.float64), 1e-6)
        self.layers_ = self._build(X.shape[1], Y.shape[1], rng)
        self.classes_ = np.arange(Y.shape[1])
        self.trained_classes_ = np.flatnonzero(Y.sum(axis=0) > 0)
        params = [p for layer in self.layers_ for p in layer.params.values()]
        opt = Adam(params, self.learning_rate)
        best, best_params, stale = -np.inf, None, 0
        self.history_ = []
        for epoch in range(self.max_epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), self.batch_size):
                rows = order[start:start + self.batch_size]
                z = self._logits(X[rows])
                dz = ((_sigmoid(z.astype(np.float64)) - Y[rows]) / len(rows)).astype(np.float32)
                for layer in reversed(self.layers_):
                    dz = layer.backward(dz)
                opt.step([g for layer in self.layers_ for g in (layer.grads[k] for k in layer.params)])
            if X_val is None:
                continue
            score = evaluate_scores(self.predict_proba(X_val), Y_val, val_groups, self.trained_classes_)[1]
            self.history_.append(score)
            if score > best:
                best, stale = score, 0
                best_params = [p.copy() for p in params]
            else:
                stale += 1
                if stale >= self.patience:
                    break
        if best_params is not None:
            for p, b in zip(params, best_params):
                p[...] = b
        self.best_score_ = best
        return self

    def decision_function(self, X):
        check_is_fitted(self, "layers_")
        return self._logits(check_features(X)).astype(np.float64)

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)


def segment_scores(window_scores, groups):
    """Mean window score per segment, segments in first-seen order."""
    window_scores = np.asarray(window_scores, dtype=np.float64)
    groups = np.asarray(groups)
    uniq, first, inverse = np.unique(groups, return_index=True, return_inverse=True)
    sums = np.zeros((len(uniq), window_scores.shape[1]))
    np.add.at(sums, inverse, window_scores)
    means = sums / np.bincount(inverse)[:, None]
    order = np.argsort(first, kind="stable")
    return means[order], inverse, order


def evaluate_scores(window_scores, Y, groups=None, classes=None):
    """Per-class AP and mAP from window scores, optionally pooled per segment.

    A segment is present for a class when any of its windows carries it.
    """
    Y = np.asarray(Y)
    if groups is not None:
        scores, inverse, order = segment_scores(window_scores, groups)
        seg_y = np.zeros((len(order), Y.shape[1]))
        np.maximum.at(seg_y, inverse, Y)
        Y = seg_y[order]
    else:
        scores = np.asarray(window_scores, dtype=np.float64)
    classes = range(Y.shape[1]) if classes is None else classes
    aps = {}
    for c in classes:
        if Y[:, c].any():
            aps[int(c)] = average_precision(-scores[:, c], Y[:, c] > 0)
    return aps, (mean_average_precision(aps.values()) if aps else float("nan"))


@dataclass
class ClassifierReport:
    per_class: dict
    mean_ap: float
    skipped: list = field(default_factory=list)


def train_shallow_classifier(features, labels, n_classes, hidden_layers=1, width=512, seed=0,
                             val=None, **kwargs) -> ShallowClassifier:
    """Fit a ShallowClassifier on window features and label sets.

    ``val`` is an optional ``(features, label_sets, segment_ids)`` triple for
    early stopping on segment-level mAP.
    """
    clf = ShallowClassifier(hidden_layers, width, random_state=seed, **kwargs)
    Y = multi_hot(labels, n_classes)
    if val is None:
        return clf.fit(features, Y)
    return clf.fit(features, Y, val[0], multi_hot(val[1], n_classes), val[2])


def eval_classifier(clf: ShallowClassifier, features, labels, segment_ids, n_classes) -> ClassifierReport:
    """Segment scores are means of window probabilities; AP ranks segments per class."""
    Y = multi_hot(labels, n_classes)
    trained = set(int(c) for c in clf.trained_classes_)
    skipped = [c for c in range(n_classes) if c not in trained]
    if skipped:
        logger.warning("classes %s absent from training data; AP skipped", skipped)
    aps, mean_ap = evaluate_scores(clf.predict_proba(features), Y, segment_ids, sorted(trained))
    return ClassifierReport(aps, mean_ap, skipped)


@dataclass
class LightSupervisionResult:
    mean_ap: float
    trial_maps: list
    n_train_windows: list


def sample_segments_per_class(segment_ids, labels, k, rng):
    """Union of ``k`` random segments per class (all of them when fewer exist)."""
    segment_ids = np.asarray(segment_ids)
    seg_labels: dict = {}
    for sid, lab in zip(segment_ids, labels):
        seg_labels.setdefault(int(sid), set()).update(lab)
    chosen = set()
    for c in sorted(set().union(*seg_labels.values())):
        having = sorted(s for s, lab in seg_labels.items() if c in lab)
        if len(having) < k:
            logger.warning("class %d has %d segments (< %d); using all of them", c, len(having), k)
            chosen.update(having)
        else:
            chosen.update(int(s) for s in rng.choice(having, size=k, replace=False))
    return np.isin(segment_ids, sorted(chosen))


def light_supervision_protocol(train_features, train_labels, train_segments, eval_features, eval_labels,
                               eval_segments, n_classes, k=20, trials=3, seeds=None, val=None,
                               hidden_layers=1, width=512, **kwargs) -> LightSupervisionResult:
    """Average eval mAP over ``trials`` draws of ``k`` labeled segments per class."""
    seeds = list(range(trials)) if seeds is None else list(seeds)[:trials]
    if len(seeds) < trials:
        raise ConfigError(f"need {trials} seeds, got {len(seeds)}")
    train_features = np.asarray(train_features)
    maps, sizes = [], []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        mask = sample_segments_per_class(train_segments, train_labels, k, rng)
        rows = np.flatnonzero(mask)
        clf = train_shallow_classifier(train_features[rows], [train_labels[i] for i in rows], n_classes,
                                       hidden_layers, width, seed, val, **kwargs)
        maps.append(eval_classifier(clf, eval_features, eval_labels, eval_segments, n_classes).mean_ap)
        sizes.append(len(rows))
    return LightSupervisionResult(float(np.mean(maps)), maps, sizes)
