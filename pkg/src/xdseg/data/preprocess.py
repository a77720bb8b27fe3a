"""Contrast rescaling, slice stacking and connected-component post-filtering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy import ndimage

from xdseg.data.volume import Volume

# 6-connectivity: faces only
SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def rescale_contrast(volume: Volume, lo_pct: float = 1.0, hi_pct: float = 99.0) -> Volume:
    """Clip at the given percentiles and map affinely onto [0, 1].

    A volume whose clipped range is empty (constant input) maps to 0.5.
    """
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ValueError(f"need 0 <= lo_pct < hi_pct <= 100, got {lo_pct}, {hi_pct}")
    v = volume.voxels.astype(np.float64)
    if v.size == 0:
        raise ValueError("cannot rescale an empty volume")
    lo, hi = np.percentile(v, [lo_pct, hi_pct])
    if hi <= lo:
        out = np.full_like(v, 0.5)
    else:
        out = (np.clip(v, lo, hi) - lo) / (hi - lo)
    return volume.with_voxels(out.astype(np.float32))


@dataclass
class SliceSample:
    image: np.ndarray          # (S, H, W)
    label: Optional[np.ndarray]  # (C, H, W) one-hot; None at inference
    domain_tag: str = ""
    source: tuple[str, int] = ("", 0)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, W) integer map -> (C, H, W) float32 one-hot."""
    idx = labels.astype(np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= num_classes:
        raise ValueError(f"label values outside [0, {num_classes})")
    return (np.arange(num_classes)[:, None, None] == idx[None]).astype(np.float32)


def stack_slices(volume: Volume, label_volume: Optional[Volume], T: int, num_classes: int,
                 domain_tag: str = "", volume_id: str = "") -> Iterator[SliceSample]:
    """One sample per z: channels are slices z-T..z+T, indices clamped to the volume.

    Without a label volume (inference) the samples carry ``label=None``.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    if label_volume is not None and volume.voxels.shape != label_volume.voxels.shape:
        raise ValueError("image and label volumes differ in extents")
    Z = volume.voxels.shape[0]
    for z in range(Z):
        idx = np.clip(np.arange(z - T, z + T + 1), 0, Z - 1)
        yield SliceSample(
            image=volume.voxels[idx].copy(),
            label=None if label_volume is None else one_hot(label_volume.voxels[z], num_classes),
            domain_tag=domain_tag,
            source=(volume_id, z),
        )


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 6-connected component of a boolean (Z, Y, X) mask.

    Components are numbered in raster order of their first voxel, so taking the
    first maximum breaks size ties toward the lowest linear index.
    """
    labels, n = ndimage.label(mask, structure=SIX_CONNECTED)
    if n <= 1:
        return mask.copy()
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return labels == keep


def connected_component_filter(label_volume: Volume, foreground_class: int) -> Volume:
    """Erase every voxel of ``foreground_class`` outside its largest component.

    Erased voxels become background (0); other classes are untouched.
    """
    mask = label_volume.voxels == foreground_class
    if not mask.any():
        return label_volume.with_voxels(label_volume.voxels.copy())
    keep = largest_component(mask)
    out = label_volume.voxels.copy()
    out[mask & ~keep] = 0
    return label_volume.with_voxels(out)
