"""Dataset manifest: a JSON list of {intensity_path, label_path, domain_tag, split}."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from xdseg.data.preprocess import SliceSample, rescale_contrast, stack_slices
from xdseg.data.volume import load_volume


@dataclass
class ManifestEntry:
    intensity_path: str
    label_path: str
    domain_tag: str = ""
    split: str = "train"

    @property
    def case_id(self) -> str:
        return Path(self.intensity_path).stem.removesuffix("_img")


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    rows = [{"intensity_path": e.intensity_path, "label_path": e.label_path,
             "domain_tag": e.domain_tag, "split": e.split} for e in entries]
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    """Entries with paths resolved against the manifest's directory.

    A missing ``domain_tag`` is read as the empty string.
    """
    root = Path(path).parent
    rows = json.loads(Path(path).read_text())
    if not isinstance(rows, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    out = []
    for r in rows:
        try:
            ip, lp = r["intensity_path"], r["label_path"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: manifest entry lacks paths: {r!r}") from exc
        out.append(ManifestEntry(
            intensity_path=str(root / ip),
            label_path=str(root / lp),
            domain_tag=str(r.get("domain_tag") or ""),
            split=str(r.get("split", "train")),
        ))
    return out


def load_slices(entries: list[ManifestEntry], T: int, num_classes: int,
                lo_pct: float = 1.0, hi_pct: float = 99.0) -> list[SliceSample]:
    """Rescale each volume, then stack it into per-slice samples (manifest order)."""
    samples = []
    for e in entries:
        img = rescale_contrast(load_volume(e.intensity_path), lo_pct, hi_pct)
        lab = load_volume(e.label_path)
        samples.extend(stack_slices(img, lab, T, num_classes, e.domain_tag, e.case_id))
    return samples
