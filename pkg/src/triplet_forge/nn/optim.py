"""Adam with bias correction, updating parameter arrays in place."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError


class Adam:
    def __init__(self, params, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.step_count = 0

    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
            bad = ~np.isfinite(g)
            if bad.any():
                raise NumericError(
                    f"non-finite gradient for parameter {i} {p.shape}: {int(bad.sum())} bad entries; step aborted"
                )
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        lr_t = self.learning_rate * np.sqrt(1 - b2 ** t) / (1 - b1 ** t)
        eps_t = self.eps * np.sqrt(1 - b2 ** t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            # same as lr * mhat / (sqrt(vhat) + eps) with the bias terms folded in
            p -= (lr_t * m / (np.sqrt(v) + eps_t)).astype(p.dtype, copy=False)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.learning_rate = float(state["learning_rate"])
        self.beta1, self.beta2, self.eps = state["beta1"], state["beta2"], state["eps"]
        self.m = [np.array(a, dtype=p.dtype) for a, p in zip(state["m"], self.params)]
        self.v = [np.array(a, dtype=p.dtype) for a, p in zip(state["v"], self.params)]
