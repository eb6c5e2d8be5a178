"""First-order optimiser shared by pretraining, overfitting and density fitting."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    """Adaptive per-parameter step; ``beta1 = 0`` drops momentum.

    With ``clip`` set, each tensor's normalised update is scaled down so its RMS
    is at most ``clip`` (Adafactor-style update clipping). Without momentum a
    single gradient spike would otherwise move every weight by up to
    ``lr / sqrt(1 - beta2)``.

    ``step`` updates the given arrays in place.
    """

    def __init__(self, n: int, beta1: float = 0.0, beta2: float = 0.999, eps: float = 1e-8, clip: float | None = 1.0):
        self.beta1, self.beta2, self.eps, self.clip = beta1, beta2, eps, clip
        self.m = [None] * n
        self.v = [None] * n
        self.t = 0

    def step(self, params: list, grads: list, lr: float) -> None:
        self.t += 1
        for k, (p, g) in enumerate(zip(params, grads)):
            if self.v[k] is None:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            u = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.clip is not None and u.size:
                rms = float(np.sqrt(np.mean(u * u)))
                if rms > self.clip:
                    u = u * (self.clip / rms)
            p -= lr * u
