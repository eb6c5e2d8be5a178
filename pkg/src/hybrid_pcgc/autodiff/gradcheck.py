"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, grad, no_grad


def numeric_grad(fn, inputs, h: float = 1e-5) -> list:
    """Central differences of scalar ``fn(*inputs)`` w.r.t. each input array."""
    grads = []
    with no_grad():
        for t in inputs:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn(*inputs).data)
                flat[i] = orig - h
                fm = float(fn(*inputs).data)
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation normalised by the larger gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, arrays, h: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and finite-difference gradients.

    ``fn`` maps tensors to a scalar tensor; ``arrays`` are float64 inputs.
    """
    inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    analytic = grad(fn(*inputs), inputs)
    numeric = numeric_grad(fn, inputs, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
