import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xdseg.data import Volume
from xdseg.metrics import (
    ExtentMismatchError,
    MetricReport,
    ScoreScales,
    SurfaceVoxelSet,
    UndefinedDistanceError,
    assd,
    csv_row,
    evaluate_volume,
    extract_surface,
    mssd,
    point_to_set_distance,
    precision_iou,
    relative_volume_difference,
    rmsd,
    score_aggregate,
    surface_distances,
    volumetric_overlap,
)


def brute_surface(mask, spacing=(1.0, 1.0, 1.0)):
    pts = []
    Z, Y, X = mask.shape
    for z, y, x in zip(*np.nonzero(mask)):
        for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            zz, yy, xx = z + dz, y + dy, x + dx
            if not (0 <= zz < Z and 0 <= yy < Y and 0 <= xx < X) or not mask[zz, yy, xx]:
                pts.append((x * spacing[0], y * spacing[1], z * spacing[2]))
                break
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def brute_distances(S, R):
    """O(|S| * |R|) all-pairs oracle: (ASSD, RMSD, MSSD)."""
    d = np.sqrt(((S[:, None, :] - R[None, :, :]) ** 2).sum(axis=2))
    a, b = d.min(axis=1), d.min(axis=0)
    n = len(a) + len(b)
    return (a.sum() + b.sum()) / n, math.sqrt(((a ** 2).sum() + (b ** 2).sum()) / n), max(a.max(), b.max())


def cube(shape, lo, hi):
    m = np.zeros(shape, np.float32)
    m[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]] = 1
    return m


def pts(*p):
    return SurfaceVoxelSet(np.array(p, dtype=np.float64), (1.0, 1.0, 1.0))


# ---- overlap --------------------------------------------------------------------------

def test_vo_examples():
    a = cube((4, 4, 4), (0, 0, 0), (2, 2, 2))
    assert volumetric_overlap(a, a) == 100
    assert volumetric_overlap(a, cube((4, 4, 4), (2, 2, 2), (4, 4, 4))) == 0
    shifted = cube((4, 4, 4), (1, 0, 0), (3, 2, 2))
    assert volumetric_overlap(a, shifted) == pytest.approx(100 / 3)
    z = np.zeros((2, 2, 2))
    assert volumetric_overlap(z, z) == 100
    with pytest.raises(ExtentMismatchError):
        volumetric_overlap(a, np.zeros((4, 4, 5)))


def test_rvd_examples():
    ref = np.zeros((10, 10, 10))
    ref.flat[:100] = 1
    big, small = np.zeros_like(ref), np.zeros_like(ref)
    big.flat[:150] = 1
    small.flat[:50] = 1
    assert relative_volume_difference(ref, ref) == 0
    assert relative_volume_difference(big, ref) == 50
    assert relative_volume_difference(small, ref) == 50
    with pytest.raises(UndefinedDistanceError):
        relative_volume_difference(ref, np.zeros_like(ref))


def test_precision_iou_examples():
    ref = cube((4, 4, 4), (0, 0, 0), (2, 2, 1))
    assert precision_iou(ref, ref) == (100, 100)
    seg = ref + cube((4, 4, 4), (0, 0, 3), (2, 2, 4))
    pr, iou = precision_iou(seg, ref)
    assert pr == 50 and iou == 50
    assert precision_iou(np.zeros_like(ref), ref) == (0, 0)
    assert precision_iou(np.zeros_like(ref), np.zeros_like(ref)) == (100, 100)


# ---- surfaces and distances ------------------------------------------------------------------

def test_surface_examples():
    assert len(extract_surface(cube((5, 5, 5), (1, 1, 1), (4, 4, 4)))) == 26
    one = np.zeros((3, 3, 3))
    one[1, 2, 0] = 1
    assert extract_surface(one, physical=False).points.tolist() == [[0, 2, 1]]
    assert len(extract_surface(np.zeros((3, 3, 3)))) == 0
    full = np.ones((3, 3, 3))
    assert len(extract_surface(full)) == 26  # volume edge counts as boundary


def test_surface_uses_spacing():
    v = Volume(cube((3, 3, 3), (1, 1, 1), (2, 2, 2)), (0.5, 2.0, 3.0), "label")
    assert extract_surface(v).points.tolist() == [[0.5, 2.0, 3.0]]
    assert extract_surface(v, physical=False).points.tolist() == [[1, 1, 1]]


def test_point_to_set_examples():
    assert point_to_set_distance((1, 2, 3), pts((1, 2, 3), (9, 9, 9))) == 0
    assert point_to_set_distance((0, 0, 0), pts((3, 4, 0))) == 5
    assert point_to_set_distance((0, 0, 0), pts((1, 0, 0), (10, 0, 0))) == 1
    with pytest.raises(UndefinedDistanceError):
        point_to_set_distance((0, 0, 0), pts())


def test_distance_examples():
    s = pts((0, 0, 0), (1, 0, 0))
    assert assd(s, s) == rmsd(s, s) == mssd(s, s) == 0
    a, b = pts((0, 0, 0)), pts((0, 3, 0))
    assert assd(a, b) == rmsd(a, b) == mssd(a, b) == 3
    R = pts((0, 0, 0), (1, 0, 0))
    S = pts((0, 0, 0), (1, 0, 0), (7, 0, 0))
    assert mssd(S, R) == mssd(R, S) == 6
    with pytest.raises(UndefinedDistanceError, match="undefined distance"):
        assd(a, pts())


def _random_pair(rng):
    shape = tuple(rng.integers(2, 13, size=3))
    density = rng.uniform(0.05, 0.6)
    a = rng.random(shape) < density
    b = rng.random(shape) < density
    a.flat[rng.integers(a.size)] = True
    b.flat[rng.integers(b.size)] = True
    return a, b


def test_surface_and_distances_match_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        a, b = _random_pair(rng)
        spacing = tuple(rng.uniform(0.5, 3.0, size=3))
        S = extract_surface(a, None, spacing=spacing)
        R = extract_surface(b, None, spacing=spacing)
        bs, br = brute_surface(a, spacing), brute_surface(b, spacing)
        assert sorted(map(tuple, S.points)) == sorted(map(tuple, bs))
        got = surface_distances(S, R)
        np.testing.assert_allclose(got, brute_distances(bs, br), atol=1e-6, rtol=0)
        assert got[0] <= got[1] + 1e-12 and got[1] <= got[2] + 1e-12
        inter, union = np.count_nonzero(a & b), np.count_nonzero(a | b)
        assert volumetric_overlap(a, b, None) == 100.0 * inter / union
        assert relative_volume_difference(a, b, None) == 100.0 * abs(int(a.sum()) - int(b.sum())) / int(b.sum())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.25, 4.0))
def test_symmetry_and_spacing_scaling(seed, c):
    a, b = _random_pair(np.random.default_rng(seed))
    base = (1.0, 1.5, 2.0)
    S, R = extract_surface(a, None, spacing=base), extract_surface(b, None, spacing=base)
    d = surface_distances(S, R)
    assert d == pytest.approx(surface_distances(R, S), abs=1e-12)
    assert volumetric_overlap(a, b, None) == volumetric_overlap(b, a, None)
    scaled = tuple(c * s for s in base)
    ds = surface_distances(extract_surface(a, None, spacing=scaled), extract_surface(b, None, spacing=scaled))
    np.testing.assert_allclose(ds, np.array(d) * c, rtol=1e-12)
    assert volumetric_overlap(a, a, None) == 100 and mssd(S, S) == 0


# ---- scores and reports -------------------------------------------------------------------------

def test_score_aggregate_examples():
    perfect = {"vo": 100, "rvd": 0, "assd_mm": 0, "rmsd_mm": 0, "mssd_mm": 0}
    assert score_aggregate(perfect) == 100
    half = {"vo": 50, "rvd": 50, "assd_mm": 7.5, "rmsd_mm": 15, "mssd_mm": 30}
    assert score_aggregate(half) == 50
    from xdseg.metrics import metric_scores

    assert metric_scores({**perfect, "assd_mm": 15.0})["assd_mm"] == 0
    assert metric_scores({**perfect, "mssd_mm": 600.0})["mssd_mm"] == 0
    assert score_aggregate(half, ScoreScales(rvd=50, assd_mm=7.5, rmsd_mm=15, mssd_mm=30)) == 10
    with pytest.raises(ValueError):
        score_aggregate({"vo": 100})


def test_evaluate_volume_report():
    ref = Volume(cube((6, 6, 6), (1, 1, 1), (4, 4, 4)), (1.0, 1.0, 2.0), "label")
    rep = evaluate_volume(ref, ref)
    assert rep.vo == 100 and rep.overall == 100 and rep.pr[1] == 100
    shifted = ref.with_voxels(cube((6, 6, 6), (2, 1, 1), (5, 4, 4)))
    rep = evaluate_volume(shifted, ref)
    assert 0 <= rep.overall < 100 and rep.assd_mm <= rep.rmsd_mm <= rep.mssd_mm
    assert all(0 <= v <= 100 for v in rep.scores.values())
    row = csv_row(rep)
    assert len(row) == 11 and float(row[0]) == pytest.approx(rep.scores["vo"]) and float(row[5]) == pytest.approx(rep.overall)


def test_empty_prediction_gets_zero_distance_scores():
    ref = cube((4, 4, 4), (0, 0, 0), (2, 2, 2))
    rep = evaluate_volume(np.zeros_like(ref), ref)
    assert math.isinf(rep.assd_mm) and rep.scores["assd_mm"] == 0 and rep.vo == 0
    d = json.loads(rep.to_json())
    assert d["assd_mm"] is None and d["scores"]["assd_mm"] == 0


def test_report_json_shape():
    rep = MetricReport(90.0, 5.0, 1.0, 2.0, 3.0)
    d = rep.to_dict()
    assert set(d) >= {"vo", "rvd", "assd_mm", "rmsd_mm", "mssd_mm", "scores", "overall", "pr", "iou"}
