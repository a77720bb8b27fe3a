"""Per-volume metric reports and their conversion to 0-100 scores."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from xdseg.metrics.surface import (
    UndefinedDistanceError,
    extract_surface,
    precision_iou,
    relative_volume_difference,
    surface_distances,
    volumetric_overlap,
)

METRICS = ("vo", "rvd", "assd_mm", "rmsd_mm", "mssd_mm")


@dataclass(frozen=True)
class ScoreScales:
    """Value at which a lower-is-better metric scores 0 (linear in between)."""

    rvd: float = 100.0
    assd_mm: float = 15.0
    rmsd_mm: float = 30.0
    mssd_mm: float = 60.0


@dataclass
class MetricReport:
    vo: float
    rvd: float
    assd_mm: float
    rmsd_mm: float
    mssd_mm: float
    scores: dict[str, float] = field(default_factory=dict)
    overall: float = float("nan")
    pr: dict[int, float] = field(default_factory=dict)
    iou: dict[int, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    def to_dict(self) -> dict:
        def clean(v):
            return v if isinstance(v, float) and math.isfinite(v) else (None if isinstance(v, float) else v)
        d = {m: clean(getattr(self, m)) for m in METRICS}
        d["scores"] = {k: clean(v) for k, v in self.scores.items()}
        d["overall"] = clean(self.overall)
        d["pr"] = {str(k): v for k, v in self.pr.items()}
        d["iou"] = {str(k): v for k, v in self.iou.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# Scores first, in the order of the published results table; raw values follow.
CSV_COLUMNS = ["VO", "RVD", "ASSD", "RMSD", "MSSD", "overall",
               "vo_pct", "rvd_pct", "assd_mm", "rmsd_mm", "mssd_mm"]


def csv_row(report: MetricReport) -> list[str]:
    vals = [report.scores.get(m, float("nan")) for m in METRICS] + [report.overall]
    vals += [report.vo, report.rvd, report.assd_mm, report.rmsd_mm, report.mssd_mm]
    return [f"{v:.6f}" for v in vals]


def to_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerow(csv_row(report))
    return buf.getvalue()


def metric_scores(values: dict[str, float], scales: ScoreScales = ScoreScales()) -> dict[str, float]:
    missing = [m for m in METRICS if values.get(m) is None]
    if missing:
        raise ValueError(f"missing metric values: {missing}")
    out = {"vo": max(0.0, min(100.0, float(values["vo"])))}
    for m in METRICS[1:]:
        v = float(values[m])
        scale = getattr(scales, m)
        out[m] = 0.0 if not math.isfinite(v) else max(0.0, 100.0 * (1.0 - v / scale))
    return out


def score_aggregate(report, scales: ScoreScales = ScoreScales()) -> float:
    """Mean of the five per-metric scores."""
    values = report.values() if isinstance(report, MetricReport) else dict(report)
    scores = metric_scores(values, scales)
    return sum(scores[m] for m in METRICS) / len(METRICS)


def evaluate_volume(seg, ref, cls: int = 1, physical: bool = True,
                    scales: ScoreScales = ScoreScales(), classes: tuple[int, ...] = ()) -> MetricReport:
    """Full report for one class. An empty prediction gets infinite distances and zero distance scores.

    ``classes`` adds PR/IoU for further class indices.
    """
    vo = volumetric_overlap(seg, ref, cls)
    rvd = relative_volume_difference(seg, ref, cls)
    try:
        d = surface_distances(extract_surface(seg, cls, physical), extract_surface(ref, cls, physical))
    except UndefinedDistanceError:
        d = (math.inf, math.inf, math.inf)
    report = MetricReport(vo, rvd, *d)
    report.scores = metric_scores(report.values(), scales)
    report.overall = sum(report.scores.values()) / len(METRICS)
    for c in (cls,) + tuple(c for c in classes if c != cls):
        report.pr[c], report.iou[c] = precision_iou(seg, ref, c)
    return report


def mean_report(reports: list[MetricReport]) -> MetricReport:
    """Metric-wise mean (scores and overall averaged too)."""
    if not reports:
        raise ValueError("no reports to average")
    n = len(reports)
    avg = MetricReport(*[sum(getattr(r, m) for r in reports) / n for m in METRICS])
    avg.scores = {m: sum(r.scores[m] for r in reports) / n for m in METRICS}
    avg.overall = sum(r.overall for r in reports) / n
    keys = set().union(*(r.pr.keys() for r in reports))
    avg.pr = {k: sum(r.pr.get(k, 0.0) for r in reports) / n for k in sorted(keys)}
    avg.iou = {k: sum(r.iou.get(k, 0.0) for r in reports) / n for k in sorted(keys)}
    return avg
