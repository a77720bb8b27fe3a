"""Overlap and surface-distance metrics between a segmentation and a reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from xdseg.data.volume import Volume


class ExtentMismatchError(ValueError):
    pass


class UndefinedDistanceError(ValueError):
    pass


def _mask(v, cls: int | None) -> np.ndarray:
    arr = v.voxels if isinstance(v, Volume) else np.asarray(v)
    if cls is None:
        return arr.astype(bool)
    return arr == cls


def _pair(seg, ref, cls):
    a, b = _mask(seg, cls), _mask(ref, cls)
    if a.shape != b.shape:
        raise ExtentMismatchError(f"extent mismatch: {a.shape[::-1]} vs {b.shape[::-1]}")
    return a, b


def volumetric_overlap(seg, ref, cls: int | None = 1) -> float:
    """100 * |seg & ref| / |seg | ref|; two empty masks count as perfect agreement (100)."""
    a, b = _pair(seg, ref, cls)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 100.0
    return 100.0 * np.count_nonzero(a & b) / union


def relative_volume_difference(seg, ref, cls: int | None = 1) -> float:
    a, b = _pair(seg, ref, cls)
    nref = np.count_nonzero(b)
    if nref == 0:
        raise UndefinedDistanceError("relative volume difference undefined for an empty reference")
    return 100.0 * abs(np.count_nonzero(a) - nref) / nref


def precision_iou(seg, ref, cls: int | None = 1) -> tuple[float, float]:
    """Pixel precision and IoU, both in percent.

    With no predicted voxels precision is 100 if the reference is empty too,
    else 0.
    """
    a, b = _pair(seg, ref, cls)
    tp = np.count_nonzero(a & b)
    npred = np.count_nonzero(a)
    if npred == 0:
        pr = 100.0 if not b.any() else 0.0
    else:
        pr = 100.0 * tp / npred
    return pr, volumetric_overlap(seg, ref, cls)


@dataclass
class SurfaceVoxelSet:
    points: np.ndarray                     # (N, 3) as (x, y, z)
    spacing: tuple[float, float, float]    # spacing the points were scaled by; ones for voxel units

    def __len__(self) -> int:
        return len(self.points)


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background face-neighbour; outside the volume counts as background."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = padded[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return mask & ~interior


def extract_surface(volume, cls: int | None = 1, physical: bool = True,
                    spacing: tuple[float, float, float] | None = None) -> SurfaceVoxelSet:
    mask = _mask(volume, cls)
    if spacing is None:
        spacing = volume.spacing if isinstance(volume, Volume) else (1.0, 1.0, 1.0)
    if not physical:
        spacing = (1.0, 1.0, 1.0)
    zyx = np.argwhere(surface_mask(mask))
    pts = zyx[:, ::-1].astype(np.float64) * np.asarray(spacing, dtype=np.float64)
    return SurfaceVoxelSet(pts, tuple(float(s) for s in spacing))


def point_to_set_distance(x, A: SurfaceVoxelSet) -> float:
    pts = A.points if isinstance(A, SurfaceVoxelSet) else np.asarray(A, dtype=np.float64)
    if len(pts) == 0:
        raise UndefinedDistanceError("distance to an empty set is undefined")
    d = np.sqrt(((pts - np.asarray(x, dtype=np.float64)) ** 2).sum(axis=1))
    return float(d.min())


def directed_distances(S: SurfaceVoxelSet, R: SurfaceVoxelSet) -> np.ndarray:
    """d(x, R) for every x in S (exact nearest neighbour via a k-d tree)."""
    if len(S) == 0 or len(R) == 0:
        raise UndefinedDistanceError("undefined distance: surface is empty")
    d, _ = cKDTree(R.points).query(S.points, k=1)
    return d


def _both(S, R) -> tuple[np.ndarray, np.ndarray]:
    return directed_distances(S, R), directed_distances(R, S)


def assd(seg_surface: SurfaceVoxelSet, ref_surface: SurfaceVoxelSet) -> float:
    a, b = _both(seg_surface, ref_surface)
    return float((a.sum() + b.sum()) / (len(a) + len(b)))


def rmsd(seg_surface: SurfaceVoxelSet, ref_surface: SurfaceVoxelSet) -> float:
    a, b = _both(seg_surface, ref_surface)
    return float(np.sqrt(((a ** 2).sum() + (b ** 2).sum()) / (len(a) + len(b))))


def mssd(seg_surface: SurfaceVoxelSet, ref_surface: SurfaceVoxelSet) -> float:
    """Symmetric Hausdorff distance between the two surfaces."""
    a, b = _both(seg_surface, ref_surface)
    return float(max(a.max(), b.max()))


def surface_distances(seg_surface: SurfaceVoxelSet, ref_surface: SurfaceVoxelSet) -> tuple[float, float, float]:
    """(ASSD, RMSD, MSSD) from a single pair of nearest-neighbour queries."""
    a, b = _both(seg_surface, ref_surface)
    n = len(a) + len(b)
    return (float((a.sum() + b.sum()) / n),
            float(np.sqrt(((a ** 2).sum() + (b ** 2).sum()) / n)),
            float(max(a.max(), b.max())))
