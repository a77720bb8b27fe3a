"""Activation sparsity and per-domain response histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from xdseg.tensor import Tensor


def _arr(a) -> np.ndarray:
    return a.data if isinstance(a, Tensor) else np.asarray(a)


def sparsity_fraction(activations) -> float:
    """Fraction of responses strictly above zero (the share passed on to the next layer)."""
    a = _arr(activations)
    if a.size == 0:
        raise ValueError("sparsity_fraction of an empty tensor")
    return float(np.count_nonzero(a > 0)) / a.size


@dataclass
class Histogram:
    domain_tag: str
    kernel_index: int
    edges: np.ndarray
    counts: np.ndarray
    layer: str = ""

    @property
    def mean(self) -> float:
        centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        return float((centers * self.counts).sum() / max(1, self.counts.sum()))


def _channel(activations, kernel_index: int) -> np.ndarray:
    a = _arr(activations)
    if a.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) activations, got shape {a.shape}")
    if not 0 <= kernel_index < a.shape[1]:
        raise ValueError(f"kernel_index {kernel_index} out of range for {a.shape[1]} channels")
    return a[:, kernel_index]


def response_histogram(activations, domain_tag: str, kernel_index: int, bins: int = 32,
                       edges: np.ndarray | None = None, layer: str = "") -> Histogram:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    vals = _channel(activations, kernel_index).ravel()
    if edges is None:
        counts, edges = np.histogram(vals, bins=bins)
    else:
        counts, edges = np.histogram(vals, bins=edges)
    return Histogram(domain_tag, kernel_index, edges, counts, layer)


def domain_histograms(by_domain: Mapping[str, object], kernel_index: int, bins: int = 32,
                      layer: str = "") -> list[Histogram]:
    """One histogram per domain over shared bin edges spanning all domains."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    chans = {tag: _channel(a, kernel_index) for tag, a in by_domain.items()}
    lo = min(float(c.min()) for c in chans.values())
    hi = max(float(c.max()) for c in chans.values())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    out = []
    for tag in sorted(chans):
        counts, _ = np.histogram(chans[tag].ravel(), bins=edges)
        out.append(Histogram(tag, kernel_index, edges, counts, layer))
    return out


def write_histograms_csv(path, histograms: Iterable[Histogram]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "kernel_index", "domain", "bin_lo", "bin_hi", "count"])
        for h in histograms:
            for lo, hi, n in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow([h.layer, h.kernel_index, h.domain_tag, f"{lo:.9g}", f"{hi:.9g}", int(n)])
