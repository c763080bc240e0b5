"""Central finite-difference checks for layers and networks.

The finite differences may be evaluated on a separate *oracle* copy of the
model, typically a float64 shadow of a float32 network: float32 forward passes
cannot resolve a 1e-3 relative difference quotient at h=1e-3 (rounding noise
is ~1e-7 / 2e-3), while the analytic float32 gradient under test can.

Entries whose +h / -h evaluations land in a different piecewise-linear region
(a ReLU mask flip or a max-pool winner change) are skipped: the function is not
differentiable across that interval, so the difference quotient is no oracle.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .network import _region_parts


@dataclass
class GradCheckResult:
    max_error: float
    checked: int
    skipped: int


def relative_error(analytic, numeric, floor):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _signature(layers):
    parts = []
    for layer in layers:
        for part in _region_parts(layer):
            parts.append(np.packbits(part).tobytes() if part.dtype == bool else part.tobytes())
    return b"".join(parts)


class LayerProbe:
    """Single layer with its input exposed as a perturbable parameter."""

    def __init__(self, layer, x):
        self.layer = layer
        self.x = x

    def forward(self):
        return self.layer.forward(self.x)

    def backward(self, dy):
        dx = self.layer.backward(dy.astype(self.x.dtype))
        grads = [("input", dx)] if dx is not None else []
        return grads + [(k, self.layer.grads[k]) for k in self.layer.params]

    def parameters(self):
        named = [("input", self.x)] if self.layer.need_input_grad else []
        return named + list(self.layer.params.items())

    def region_signature(self):
        return _signature([self.layer])

    def shadow(self, dtype=np.float64):
        return LayerProbe(copy.deepcopy(self.layer).astype(dtype), self.x.astype(dtype))


class NetworkProbe:
    def __init__(self, net, x):
        self.net = net
        self.x = x

    def forward(self):
        return self.net.forward(self.x)

    def backward(self, dy):
        return self.net.backward(dy)

    def parameters(self):
        return self.net.parameters()

    def region_signature(self):
        return _signature(self.net.layers)

    def shadow(self, dtype=np.float64):
        return NetworkProbe(self.net.astype(dtype), np.asarray(self.x, dtype=dtype))


def check_gradients(probe, rng, h, floor_ratio=1e-3, oracle=None, max_entries=None) -> GradCheckResult:
    """Compare ``probe``'s analytic gradients with central differences.

    The scalar test loss is ``sum(output * R)`` for a fixed Gaussian ``R``.
    ``floor_ratio`` sets the relative-error denominator floor as a fraction of
    the largest analytic gradient entry, so entries that are numerically zero
    are judged on an absolute scale.
    """
    oracle = probe if oracle is None else oracle
    y = probe.forward()
    proj = rng.standard_normal(y.shape)
    grads = dict(probe.backward(proj.astype(y.dtype)))
    params = dict(oracle.parameters())
    names = [name for name, _ in probe.parameters()]

    def loss():
        return float(np.sum(oracle.forward().astype(np.float64) * proj))

    oracle.forward()
    base = oracle.region_signature()
    scale = max(float(np.max(np.abs(grads[n]))) for n in names)
    floor = max(floor_ratio * scale, 1e-300)
    worst, checked, skipped = 0.0, 0, 0
    for name in names:
        flat = params[name].reshape(-1)
        analytic = grads[name].reshape(-1)
        idx = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up, sig_up = loss(), oracle.region_signature()
            flat[i] = old - h
            down, sig_down = loss(), oracle.region_signature()
            flat[i] = old
            if sig_up != base or sig_down != base:
                skipped += 1
                continue
            numeric = (up - down) / (2 * h)
            worst = max(worst, float(relative_error(analytic[i], numeric, floor)))
            checked += 1
    return GradCheckResult(worst, checked, skipped)
