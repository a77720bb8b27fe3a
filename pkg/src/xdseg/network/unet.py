"""Shared-parameter U-Net segmenter and the conditional discriminator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from xdseg import tensor as T
from xdseg.network.blocks import ConvBlock, Mode, NormKind, NormSpec, Ordering, he_normal
from xdseg.tensor import Tensor


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    num_classes: int = 2
    levels: int = 4
    base_channels: int = 16
    kernel_size: int = 3
    norm: NormSpec = field(default_factory=NormSpec)

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.in_channels < 1 or self.in_channels % 2 == 0:
            raise ValueError(f"in_channels (2T+1) must be odd, got {self.in_channels}")
        if isinstance(self.norm, dict):
            object.__setattr__(self, "norm", NormSpec.from_dict(self.norm))

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "num_classes": self.num_classes,
                "levels": self.levels, "base_channels": self.base_channels,
                "kernel_size": self.kernel_size, "norm": self.norm.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        d = dict(d)
        d["norm"] = NormSpec.from_dict(d["norm"])
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 5
    widths: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    norm: NormSpec = field(default_factory=lambda: NormSpec(NormKind.INSTANCE, Ordering.POST))

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if isinstance(self.norm, dict):
            object.__setattr__(self, "norm", NormSpec.from_dict(self.norm))
        if not self.widths:
            raise ValueError("discriminator needs at least one stage")

    @classmethod
    def for_unet(cls, cfg: UNetConfig, **kw) -> "DiscriminatorConfig":
        return cls(in_channels=cfg.in_channels + cfg.num_classes, **kw)

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "widths": list(self.widths),
                "kernel_size": self.kernel_size, "norm": self.norm.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        d["norm"] = NormSpec.from_dict(d["norm"])
        d["widths"] = tuple(d["widths"])
        return cls(**d)


class Conv1x1:
    """Plain 1x1 convolution (no norm, no activation)."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Tensor(he_normal(rng, (cout, cin, 1, 1), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def __call__(self, z: Tensor) -> Tensor:
        return T.conv2d(z, self.weight, self.bias)


class _Module:
    """Name-ordered container of blocks; shared by both networks."""

    modules: dict

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, mod in self.modules.items():
            for pname, p in mod.parameters().items():
                out[f"{name}.{pname}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, mod in self.modules.items():
            for bname, b in mod.buffers().items():
                out[f"{name}.{bname}"] = b
        return out

    def tracked_counts(self) -> dict[str, int]:
        return {name: mod.tracked for name, mod in self.modules.items() if isinstance(mod, ConvBlock)}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        mod_name, attr = name.rsplit(".", 1)
        setattr(self.modules[mod_name], attr, value)

    def conv_blocks(self) -> dict[str, ConvBlock]:
        return {n: m for n, m in self.modules.items() if isinstance(m, ConvBlock)}


class UNet(_Module):
    """Encoder/decoder with summed skip connections.

    Encoder stage ``l``: two conv blocks at ``base * 2**l`` channels, then 2x2
    max pool. Bottleneck: two blocks at ``base * 2**levels``. Decoder stage
    ``l``: nearest x2 upsample, a 1x1 conv block matching the skip width,
    element-wise sum with the skip, two conv blocks. A final plain 1x1 conv
    produces class logits.

    ``forward`` takes only the image: there is no way to pass a domain label.
    """

    def __init__(self, config: UNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        c, k, norm = config, config.kernel_size, config.norm
        widths = [c.base_channels * 2 ** l for l in range(c.levels + 1)]
        mods: dict = {}
        cin = c.in_channels
        for l in range(c.levels):
            mods[f"enc{l}.0"] = ConvBlock(cin, widths[l], k, norm, rng, dtype)
            mods[f"enc{l}.1"] = ConvBlock(widths[l], widths[l], k, norm, rng, dtype)
            cin = widths[l]
        mods["mid.0"] = ConvBlock(cin, widths[-1], k, norm, rng, dtype)
        mods["mid.1"] = ConvBlock(widths[-1], widths[-1], k, norm, rng, dtype)
        for l in reversed(range(c.levels)):
            mods[f"dec{l}.up"] = ConvBlock(widths[l + 1], widths[l], 1, norm, rng, dtype)
            mods[f"dec{l}.0"] = ConvBlock(widths[l], widths[l], k, norm, rng, dtype)
            mods[f"dec{l}.1"] = ConvBlock(widths[l], widths[l], k, norm, rng, dtype)
        mods["head"] = Conv1x1(widths[0], c.num_classes, rng, dtype)
        self.modules = mods

    def __call__(self, x: Tensor, mode: Mode = "train",
                 capture: Optional[dict] = None, skip_scale: Optional[dict] = None) -> Tensor:
        return self.forward(x, mode, capture, skip_scale)

    def forward(self, x: Tensor, mode: Mode = "train",
                capture: Optional[dict] = None, skip_scale: Optional[dict] = None) -> Tensor:
        """Logits (B, C, H, W).

        ``capture`` receives post-PReLU activations per block name.
        ``skip_scale`` maps a level to a multiplier for its skip path (used to
        probe that skips are live).
        """
        c = self.config
        if x.data.ndim != 4 or x.shape[1] != c.in_channels:
            raise T.ShapeError(f"expected (B, {c.in_channels}, H, W) input, got {x.shape}")
        div = 2 ** c.levels
        if x.shape[2] % div or x.shape[3] % div:
            raise T.ShapeError(
                f"spatial extents {x.shape[2]}x{x.shape[3]} must be divisible by {div} (2**levels)")
        m = self.modules

        def run(name, h):
            out = m[name](h, mode)
            if capture is not None:
                capture[name] = out.data
            return out

        skips = []
        h = x
        for l in range(c.levels):
            h = run(f"enc{l}.1", run(f"enc{l}.0", h))
            skips.append(h)
            h = T.downsample2(h)
        h = run("mid.1", run("mid.0", h))
        for l in reversed(range(c.levels)):
            h = run(f"dec{l}.up", T.upsample2(h))
            skip = skips[l]
            if skip_scale is not None and l in skip_scale:
                skip = skip * float(skip_scale[l])
            h = h + skip
            h = run(f"dec{l}.1", run(f"dec{l}.0", h))
        return m["head"](h)


class Discriminator(_Module):
    """Scores (image, label map) pairs; output (B, 1) in (0, 1).

    Each stage is a stride-1 conv block followed by 2x2 max pooling, then a
    1x1 conv to one channel, a global average and a sigmoid.
    """

    def __init__(self, config: DiscriminatorConfig, seed: int = 1, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        mods: dict = {}
        cin = config.in_channels
        for i, w in enumerate(config.widths):
            mods[f"stage{i}"] = ConvBlock(cin, w, config.kernel_size, config.norm, rng, dtype)
            cin = w
        mods["head"] = Conv1x1(cin, 1, rng, dtype)
        self.modules = mods

    def __call__(self, x: Tensor, y: Tensor, mode: Mode = "train") -> Tensor:
        return self.forward(x, y, mode)

    def forward(self, x: Tensor, y: Tensor, mode: Mode = "train") -> Tensor:
        if x.data.ndim != 4 or y.data.ndim != 4:
            raise T.ShapeError("discriminator inputs must be (B, C, H, W)")
        if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
            raise T.ShapeError(f"image {x.shape} and label map {y.shape} disagree on B/H/W")
        if x.shape[1] + y.shape[1] != self.config.in_channels:
            raise T.ShapeError(
                f"discriminator expects {self.config.in_channels} channels after concatenation, "
                f"got {x.shape[1]} + {y.shape[1]}")
        h = T.concat_channels(x, y)
        for i in range(len(self.config.widths)):
            h = T.downsample2(self.modules[f"stage{i}"](h, mode))
        return T.sigmoid(T.global_avg_pool(self.modules["head"](h)))
