"""Central finite-difference checks for reverse-mode gradients (float64 reference path)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from xdseg.tensor import Tape, Tensor


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    tape = Tape()
    with tape:
        loss = fn()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def numeric_grads(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3) -> list[np.ndarray]:
    """Central differences, perturbing each element of each parameter in place."""
    out = []
    for p in params:
        g = np.zeros_like(p.data, dtype=np.float64)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """||a - b|| / max(||a||, ||b||, floor).

    The floor turns the ratio into an absolute error for gradients that are
    identically zero (a conv bias followed by normalization, for instance).
    """
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3) -> float:
    """Worst relative error between tape gradients and central differences over ``params``.

    ``params`` must be float64 tensors with ``requires_grad`` set; ``fn`` must
    rebuild the scalar loss from them on every call.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradcheck needs float64 parameters")
        if not p.requires_grad:
            raise ValueError("gradcheck parameters need requires_grad=True")
    ana = analytic_grads(fn, params)
    num = numeric_grads(fn, params, h)
    return max(relative_error(a, n) for a, n in zip(ana, num))
