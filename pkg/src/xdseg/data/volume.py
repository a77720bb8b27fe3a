"""3D volumes and their on-disk format.

File layout (all little-endian)::

    b"XDSEGVOL"                 8-byte magic
    uint32                      header length in bytes
    UTF-8 JSON header           {"dtype": "f32", "extents": [X, Y, Z],
                                 "kind": "intensity" | "label", "spacing": [sx, sy, sz]}
    float32 payload             X*Y*Z values, x fastest, then y, then z

In memory voxels are a ``(Z, Y, X)`` C-ordered array, so the payload is just
its raw bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"XDSEGVOL"
KINDS = ("intensity", "label")


class VolumeFormatError(ValueError):
    code = "format"


class BadMagicError(VolumeFormatError):
    code = "bad_magic"


class TruncatedVolumeError(VolumeFormatError):
    code = "truncated"


class SizeMismatchError(VolumeFormatError):
    code = "size_mismatch"


@dataclass
class Volume:
    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = "intensity"

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3 or 0 in self.voxels.shape:
            raise ValueError(f"volume needs three positive extents, got shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "label":
            v = self.voxels
            if np.any(v < 0) or np.any(v != np.round(v)):
                raise ValueError("label volume must hold non-negative integers")

    @property
    def extents(self) -> tuple[int, int, int]:
        """(X, Y, Z)."""
        z, y, x = self.voxels.shape
        return x, y, z

    def mask(self, cls: int) -> np.ndarray:
        return self.voxels == cls

    def with_voxels(self, voxels: np.ndarray, kind: str | None = None) -> "Volume":
        return Volume(voxels, self.spacing, kind or self.kind)


def save_volume(volume: Volume, path) -> None:
    header = {
        "dtype": "f32",
        "extents": list(volume.extents),
        "kind": volume.kind,
        "spacing": list(volume.spacing),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(volume.voxels.astype("<f4", copy=False).tobytes())


def load_volume(path) -> Volume:
    """Read a volume file.

    Raises :class:`BadMagicError`, :class:`TruncatedVolumeError` (file ends
    inside the header or mid-voxel) or :class:`SizeMismatchError` (whole
    voxels present but not as many as the header declares).
    """
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC):
        raise TruncatedVolumeError(f"{path}: file shorter than magic")
    if blob[:8] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 12:
        raise TruncatedVolumeError(f"{path}: missing header length")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise TruncatedVolumeError(f"{path}: header truncated")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        x, y, z = (int(e) for e in header["extents"])
        spacing = tuple(float(s) for s in header["spacing"])
        kind = header["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise VolumeFormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("dtype", "f32") != "f32":
        raise VolumeFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    payload = blob[12 + hlen:]
    if len(payload) % 4:
        raise TruncatedVolumeError(f"{path}: payload ends mid-voxel ({len(payload)} bytes)")
    n = len(payload) // 4
    if n != x * y * z:
        raise SizeMismatchError(f"{path}: header declares {x}x{y}x{z}={x * y * z} voxels, payload has {n}")
    voxels = np.frombuffer(payload, dtype="<f4").reshape(z, y, x).astype(np.float32)
    return Volume(voxels, spacing, kind)
