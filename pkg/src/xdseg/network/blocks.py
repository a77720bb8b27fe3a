"""Conv blocks with selectable normalization placement."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Literal, Optional

import numpy as np

from xdseg import tensor as T
from xdseg.tensor import Tensor

Mode = Literal["train", "eval"]


class NormKind(str, Enum):
    BATCH = "batch"
    INSTANCE = "instance"


class Ordering(str, Enum):
    PRE = "pre"
    POST = "post"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower())
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ValueError(f"invalid {cls.__name__} {value!r}; expected one of: {allowed}") from None


@dataclass(frozen=True)
class NormSpec:
    kind: NormKind = NormKind.BATCH
    ordering: Ordering = Ordering.PRE
    epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "kind", _enum(NormKind, self.kind))
        object.__setattr__(self, "ordering", _enum(Ordering, self.ordering))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def label(self) -> str:
        """Short variant name, e.g. ``Pre-BN``."""
        kind = "BN" if self.kind is NormKind.BATCH else "IN"
        return f"{self.ordering.value.capitalize()}-{kind}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "ordering": self.ordering.value, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "NormSpec":
        return cls(d["kind"], d["ordering"], float(d.get("epsilon", 1e-5)))


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class ConvBlock:
    """conv -> norm -> PReLU (post) or norm -> conv -> PReLU (pre).

    Batch-kind blocks keep running statistics for eval mode, updated as
    ``running = momentum * running + (1 - momentum) * batch``. They cover the
    channels actually normalized: the input channels for pre ordering, the
    conv output channels for post ordering.
    """

    def __init__(self, cin: int, cout: int, kernel_size: int, norm: NormSpec,
                 rng: np.random.Generator, dtype=np.float32, momentum: float = 0.9,
                 stride: int = 1):
        self.cin, self.cout, self.k, self.stride = cin, cout, kernel_size, stride
        self.norm = norm
        self.momentum = momentum
        self.weight = Tensor(he_normal(rng, (cout, cin, kernel_size, kernel_size), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.slope = Tensor(np.full(cout, 0.25, dtype=dtype), requires_grad=True)
        nc = cin if norm.ordering is Ordering.PRE else cout
        self.running_mean: Optional[np.ndarray] = None
        self.running_var: Optional[np.ndarray] = None
        self.tracked = 0
        # when a list, train-mode passes append (count, mean, var) instead of updating running stats
        self.calibration: Optional[list] = None
        if norm.kind is NormKind.BATCH:
            self.running_mean = np.zeros(nc, dtype=dtype)
            self.running_var = np.ones(nc, dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias, "slope": self.slope}

    def buffers(self) -> dict[str, np.ndarray]:
        if self.running_mean is None:
            return {}
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _normalize(self, z: Tensor, mode: Mode) -> Tensor:
        eps = self.norm.epsilon
        if self.norm.kind is NormKind.INSTANCE:
            return T.normalize(z, (2, 3), eps)[0]
        if mode == "train":
            out, mu, var = T.normalize(z, (0, 2, 3), eps)
            if self.calibration is not None:
                self.calibration.append((z.shape[0], mu, var))
                return out
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mu).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(self.running_var.dtype)
            self.tracked += 1
            return out
        if mode != "eval":
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if self.tracked == 0:
            raise RuntimeError("batch-norm block has no running statistics; run in train mode first")
        return T.normalize(z, (0, 2, 3), eps, stats=(self.running_mean, self.running_var))[0]

    def finish_calibration(self) -> None:
        """Replace running stats by the exact pooled statistics of the recorded batches."""
        records, self.calibration = self.calibration, None
        if not records:
            return
        n = np.array([r[0] for r in records], dtype=np.float64)
        mus = np.stack([r[1] for r in records]).astype(np.float64)
        second = np.stack([r[2] for r in records]).astype(np.float64) + mus ** 2
        mean = (n[:, None] * mus).sum(0) / n.sum()
        var = (n[:, None] * second).sum(0) / n.sum() - mean ** 2
        self.running_mean = mean.astype(self.running_mean.dtype)
        self.running_var = np.maximum(var, 0.0).astype(self.running_var.dtype)
        self.tracked += 1

    def conv(self, z: Tensor) -> Tensor:
        return T.conv2d(z, self.weight, self.bias, stride=self.stride, padding=self.k // 2)

    def __call__(self, z: Tensor, mode: Mode = "train") -> Tensor:
        if z.shape[1] != self.cin:
            raise T.ShapeError(f"conv block expects {self.cin} input channels, got {z.shape[1]}")
        if self.norm.ordering is Ordering.POST:
            h = self._normalize(self.conv(z), mode)
        else:
            h = self.conv(self._normalize(z, mode))
        return T.prelu(h, self.slope)
