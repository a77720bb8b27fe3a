"""Checkpoint container for network parameters.

Layout::

    b"XDSEGCKP"                      8-byte magic
    uint64 little-endian             header length in bytes
    UTF-8 JSON header                {"format": 1, "model": ..., "config": ...,
                                      "tracked": {...}, "extra": {...},
                                      "tensors": [{"name", "shape", "offset", "nbytes"}]}
    payload                          little-endian float32 tensors, back to back

Offsets are relative to the start of the payload. The header is written with
sorted keys so equal models give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from xdseg.network.unet import Discriminator, DiscriminatorConfig, UNet, UNetConfig

MAGIC = b"XDSEGCKP"


class CheckpointError(ValueError):
    pass


def _model_kind(model) -> str:
    if isinstance(model, UNet):
        return "unet"
    if isinstance(model, Discriminator):
        return "discriminator"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    arrays = {name: p.data for name, p in model.parameters().items()}
    arrays.update(model.buffers())
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "model": _model_kind(model),
        "config": model.config.to_dict(),
        "tracked": model.tracked_counts(),
        "extra": extra or {},
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def read_header(path) -> tuple[dict, bytes]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(blob) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    return header, blob[16 + hlen:]


def load_checkpoint(path, dtype=np.float32):
    """Rebuild the model stored at ``path``. Returns ``(model, extra)``."""
    header, payload = read_header(path)
    if header["model"] == "unet":
        model = UNet(UNetConfig.from_dict(header["config"]), dtype=dtype)
    elif header["model"] == "discriminator":
        model = Discriminator(DiscriminatorConfig.from_dict(header["config"]), dtype=dtype)
    else:
        raise CheckpointError(f"unknown model kind {header['model']!r}")
    params = model.parameters()
    buffers = model.buffers()
    seen = set()
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arr = np.frombuffer(payload[e["offset"]:end], dtype="<f4").reshape(e["shape"]).astype(dtype)
        name = e["name"]
        if name in params:
            if params[name].shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != model {params[name].shape}")
            params[name].data = arr
        elif name in buffers:
            model.set_buffer(name, arr)
        else:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        seen.add(name)
    missing = (set(params) | set(buffers)) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    for name, n in header.get("tracked", {}).items():
        model.modules[name].tracked = int(n)
    return model, header.get("extra", {})
