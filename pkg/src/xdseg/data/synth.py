"""Synthetic multi-domain phantoms.

Label geometry is drawn from one distribution for every domain; only the
appearance (class intensities, texture, blur, bias field, noise, slice
spacing) depends on the domain. Each foreground class is one connected organ
built from 1-3 overlapping ellipsoids whose boundary is roughened by smooth
noise.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from xdseg.data.preprocess import largest_component
from xdseg.data.volume import Volume


@dataclass(frozen=True)
class SyntheticDomainSpec:
    name: str
    class_means: tuple[float, ...]
    class_stds: tuple[float, ...]
    noise_std: float = 0.02
    blur_sigma: float = 0.5
    anisotropy: float = 1.0
    bias_strength: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "class_means", tuple(float(m) for m in self.class_means))
        object.__setattr__(self, "class_stds", tuple(float(s) for s in self.class_stds))
        if len(self.class_means) != len(self.class_stds):
            raise ValueError(f"{self.name}: class_means and class_stds differ in length")
        if min(self.class_stds) < 0 or self.noise_std < 0 or self.blur_sigma < 0 or self.bias_strength < 0:
            raise ValueError(f"{self.name}: standard deviations and strengths must be >= 0")
        if self.anisotropy <= 0:
            raise ValueError(f"{self.name}: anisotropy must be positive")

    @property
    def num_classes(self) -> int:
        return len(self.class_means)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_means"] = list(self.class_means)
        d["class_stds"] = list(self.class_stds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticDomainSpec":
        return cls(**d)


def default_domains() -> list[SyntheticDomainSpec]:
    """A CT-like and an MR-like domain: inverted contrast, 2x slice spacing, stronger bias/noise."""
    return [
        SyntheticDomainSpec("ct", (0.20, 0.65), (0.02, 0.03), noise_std=0.02,
                            blur_sigma=0.6, anisotropy=1.0, bias_strength=0.05),
        SyntheticDomainSpec("mr", (0.60, 0.30), (0.04, 0.05), noise_std=0.05,
                            blur_sigma=1.0, anisotropy=2.0, bias_strength=0.25),
    ]


@dataclass
class SynthCase:
    intensity: Volume
    label: Volume
    domain_tag: str
    case_id: str = ""


def _smooth_noise(rng: np.random.Generator, shape, sigma) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def _organ(rng: np.random.Generator, shape: tuple[int, int, int], sz: float) -> np.ndarray:
    """Boolean (Z, Y, X) mask of one lobed organ; ``sz`` is slice spacing in mm."""
    Z, Y, X = shape
    zz, yy, xx = np.meshgrid(np.arange(Z) * sz, np.arange(Y), np.arange(X), indexing="ij")
    r_xy = min(X, Y)
    zc = (Z * sz) / 2 + rng.uniform(-0.1, 0.1) * Z * sz
    yc = Y / 2 + rng.uniform(-0.12, 0.12) * Y
    xc = X / 2 + rng.uniform(-0.12, 0.12) * X
    axes = np.array([rng.uniform(0.22, 0.36) * Z, rng.uniform(0.14, 0.25) * r_xy,
                     rng.uniform(0.14, 0.25) * r_xy])
    field_ = ((zz - zc) / axes[0]) ** 2 + ((yy - yc) / axes[1]) ** 2 + ((xx - xc) / axes[2]) ** 2
    for _ in range(int(rng.integers(0, 3))):
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.5, 0.8)
        cy, cx = yc + dist * axes[1] * np.sin(ang), xc + dist * axes[2] * np.cos(ang)
        sub = axes * rng.uniform(0.45, 0.7, size=3)
        lobe = ((zz - zc) / sub[0]) ** 2 + ((yy - cy) / sub[1]) ** 2 + ((xx - cx) / sub[2]) ** 2
        field_ = np.minimum(field_, lobe)
    field_ = field_ + 0.15 * _smooth_noise(rng, shape, (1.0, 3.0, 3.0))
    mask = field_ < 1.0
    if not mask.any():
        mask[int(zc / sz) % Z, int(yc) % Y, int(xc) % X] = True
    return largest_component(mask)


def _appearance(rng: np.random.Generator, labels: np.ndarray, spec: SyntheticDomainSpec) -> np.ndarray:
    means = np.asarray(spec.class_means)
    stds = np.asarray(spec.class_stds)
    idx = labels.astype(np.int64)
    img = means[idx] + stds[idx] * rng.standard_normal(labels.shape)
    if spec.blur_sigma > 0:
        img = ndimage.gaussian_filter(img, (0.0, spec.blur_sigma, spec.blur_sigma))
    if spec.bias_strength > 0:
        Z, Y, X = labels.shape
        yy, xx = np.meshgrid(np.linspace(-1, 1, Y), np.linspace(-1, 1, X), indexing="ij")
        ang = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(ang) * xx + np.sin(ang) * yy
        smooth = _smooth_noise(rng, labels.shape, (2.0, 12.0, 12.0))
        bias = 0.5 * ramp[None] + 0.5 * np.clip(smooth, -2, 2) / 2
        img = img * (1.0 + spec.bias_strength * bias)
    if spec.noise_std > 0:
        img = img + spec.noise_std * rng.standard_normal(labels.shape)
    return img.astype(np.float32)


def synth_generate(specs: list[SyntheticDomainSpec], n_volumes_per_domain: int,
                   extents: tuple[int, int, int] = (64, 64, 16), seed: int = 0,
                   base_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> list[SynthCase]:
    """Generate ``n_volumes_per_domain`` (intensity, label) pairs per domain.

    ``extents`` is (X, Y, Z). Slice spacing of a domain is
    ``base_spacing[2] * anisotropy``; organ geometry is drawn in millimetres so
    coarser domains see the same anatomy over fewer slices.
    """
    if len(specs) < 2:
        raise ValueError("cross-domain data needs at least two domain specs")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate domain names: {names}")
    C = specs[0].num_classes
    if any(s.num_classes != C for s in specs):
        raise ValueError("all domains must define the same number of classes")
    if C < 2:
        raise ValueError("need at least background plus one class")
    for s in specs:
        if len(set(np.round(s.class_means, 6))) != C:
            warnings.warn(f"domain {s.name!r}: class means overlap", stacklevel=2)
    X, Y, Z = extents
    cases = []
    for d, spec in enumerate(specs):
        sz = base_spacing[2] * spec.anisotropy
        for i in range(n_volumes_per_domain):
            rng = np.random.default_rng(np.random.SeedSequence([seed, d, i]))
            labels = np.zeros((Z, Y, X), dtype=np.float32)
            for cls in range(1, C):
                labels[_organ(rng, (Z, Y, X), sz / base_spacing[2])] = cls
            img = _appearance(rng, labels, spec)
            spacing = (base_spacing[0], base_spacing[1], sz)
            cases.append(SynthCase(
                intensity=Volume(img, spacing, "intensity"),
                label=Volume(labels, spacing, "label"),
                domain_tag=spec.name,
                case_id=f"{spec.name}_{i:03d}",
            ))
    return cases
