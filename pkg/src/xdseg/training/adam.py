from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from xdseg.tensor import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam:
    """Adam with bias correction."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def step(self) -> None:
        grads = {}
        for k, p in self.params.items():
            grads[k] = p.grad if p.grad is not None else np.zeros_like(p.data)
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update of ``params`` and ``state``."""
    if state.t < 0:
        raise ValueError("step counter must be >= 0")
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape or state.v[k].shape != p.shape:
            raise ValueError(f"{k}: shape mismatch between parameter, gradient and state")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += eps
        step = m * (lr / c1)
        step /= denom
        p.data = p.data - step.astype(p.data.dtype, copy=False)
