from xdseg.metrics.report import (
    CSV_COLUMNS,
    METRICS,
    MetricReport,
    ScoreScales,
    csv_row,
    evaluate_volume,
    mean_report,
    metric_scores,
    score_aggregate,
    to_csv,
)
from xdseg.metrics.surface import (
    ExtentMismatchError,
    SurfaceVoxelSet,
    UndefinedDistanceError,
    assd,
    directed_distances,
    extract_surface,
    mssd,
    point_to_set_distance,
    precision_iou,
    relative_volume_difference,
    rmsd,
    surface_distances,
    surface_mask,
    volumetric_overlap,
)

__all__ = [
    "CSV_COLUMNS", "METRICS", "MetricReport", "ScoreScales", "csv_row", "evaluate_volume",
    "mean_report", "metric_scores", "score_aggregate", "to_csv",
    "ExtentMismatchError", "SurfaceVoxelSet", "UndefinedDistanceError", "assd",
    "directed_distances", "extract_surface", "mssd", "point_to_set_distance", "precision_iou",
    "relative_volume_difference", "rmsd", "surface_distances", "surface_mask", "volumetric_overlap",
]
