import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from busmorph.contour import Contour, convex_hull, trace_contour
from busmorph.errors import ContourTooShort, DegenerateRegion, EmptyMask
from busmorph.imgproc import MaskImage
from busmorph.morphometry import (
    CSV_HEADER,
    FEATURE_NAMES,
    CurvaturePoint,
    EllipseFit,
    FeatureVector,
    PointKind,
    analyze,
    cspi,
    csv_row,
    curvature_overlay,
    curvature_points,
    ellipse_perimeter,
    equivalent_ellipse,
    extract_features,
    lobe_areas,
    lobulation_index,
    measurement_polygon,
    skeletonize,
    suppress_points,
    thin,
)
from busmorph.synthkit import ShapeSpec, boundary, fill_polygon, render, rosette_ring

from conftest import padded, zhang_suen_reference

CONVEX, CONCAVE, SMOOTH = PointKind.CONVEX, PointKind.CONCAVE, PointKind.SMOOTH


def _runs(points):
    """Kinds of the maximal cyclic runs of non-smooth points."""
    n = len(points)
    sig = [p for p in points if p.kind is not SMOOTH]
    return [p.kind for i, p in enumerate(sig) if not (sig[i - 1].kind is p.kind and (p.index - sig[i - 1].index) % n == 1)]


def _cp(i, dev, kind):
    return CurvaturePoint(i, dev, kind)


# --- k-curve ------------------------------------------------------------------


def test_square_k1_has_four_right_angle_corners():
    c = trace_contour(MaskImage(np.ones((12, 12), np.uint8)))
    pts = curvature_points(c, k=1, smooth_threshold=40)
    corners = [p for p in pts if p.kind is not SMOOTH]
    assert len(corners) == 4
    assert all(p.kind is CONVEX and p.angle_deviation == pytest.approx(90) for p in corners)
    assert {tuple(c.points[p.index]) for p in corners} == {(0, 0), (11, 0), (11, 11), (0, 11)}


def test_circle_has_no_significant_points():
    c = trace_contour(render(ShapeSpec("disk", radius=50, canvas=(128, 128))))
    assert all(p.kind is SMOOTH for p in curvature_points(c, k=5, smooth_threshold=40))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_plus_has_eight_convex_and_four_concave_corners(k):
    c = trace_contour(render(ShapeSpec("plus", radius=40, arm=20, canvas=(128, 128))))
    runs = _runs(curvature_points(c, k, 40))
    assert runs.count(CONVEX) == 8
    assert runs.count(CONCAVE) == 4


def test_kind_smooth_iff_below_threshold():
    c = trace_contour(render(ShapeSpec("star", radius=40, lobes=6, depth=0.4, canvas=(100, 100))))
    for p in curvature_points(c, 4, 33.0):
        assert 0 <= p.angle_deviation <= 180
        assert (p.kind is SMOOTH) == (p.angle_deviation <= 33.0)


def test_short_contour_raises():
    c = trace_contour(padded(np.ones((2, 2))))
    with pytest.raises(ContourTooShort):
        curvature_points(c, k=2)


# --- suppression --------------------------------------------------------------


def test_alternating_list_is_fixpoint():
    pts = [_cp(0, 50, CONVEX), _cp(3, 60, CONCAVE), _cp(7, 70, CONVEX), _cp(9, 45, CONCAVE)]
    assert suppress_points(pts) == pts


def test_weaker_convex_neighbour_removed():
    pts = [_cp(0, 50, CONCAVE), _cp(4, 80, CONVEX), _cp(5, 60, CONVEX), _cp(9, 55, CONCAVE), _cp(12, 70, CONVEX)]
    out = suppress_points(pts)
    assert [p.index for p in out] == [0, 4, 9, 12]


def test_all_convex_collapses_to_strongest():
    pts = [_cp(i, d, CONVEX) for i, d in enumerate([45, 90, 60, 90, 50])]
    assert suppress_points(pts) == [_cp(1, 90, CONVEX)]


def test_wrapping_run_is_merged():
    pts = [_cp(0, 70, CONVEX), _cp(4, 50, CONCAVE), _cp(8, 60, CONVEX), _cp(9, 80, CONVEX)]
    out = suppress_points(pts)
    assert [(p.index, p.kind) for p in out] == [(4, CONCAVE), (9, CONVEX)]


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 180), st.sampled_from([CONVEX, CONCAVE, SMOOTH])), max_size=40))
def test_suppression_alternates_and_is_idempotent(items):
    pts = [_cp(i, d, k) for i, (d, k) in enumerate(items)]
    out = suppress_points(pts)
    assert suppress_points(out) == out
    kinds = [p.kind for p in out]
    if len(set(kinds)) > 1:
        assert all(kinds[i] is not kinds[i - 1] for i in range(len(kinds)))
    else:
        assert len(kinds) <= 1
    assert cspi(out) % 2 == 0


# --- cspi ---------------------------------------------------------------------


def _cspi_of(mask, k=5):
    return cspi(suppress_points(curvature_points(trace_contour(mask), k, 40)))


def test_cspi_examples():
    assert _cspi_of(render(ShapeSpec("disk", radius=40, canvas=(100, 100)))) == 0
    assert _cspi_of(render(ShapeSpec("star", radius=45, lobes=5, depth=0.55, canvas=(110, 110)))) == 10
    assert _cspi_of(render(ShapeSpec("plus", radius=45, arm=20, canvas=(110, 110)))) == 8


# --- lobulation ---------------------------------------------------------------


def _flower(heights):
    """Square with a triangular bump on each side; returns (contour, corner indices)."""
    corners = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]
    outward = [(0, -1), (1, 0), (0, 1), (-1, 0)]
    pts, idx = [], []
    for i, (a, h) in enumerate(zip(corners, heights)):
        b = corners[(i + 1) % 4]
        idx.append(len(pts))
        pts.append(a)
        mid = ((a[0] + b[0]) / 2 + h * outward[i][0], (a[1] + b[1]) / 2 + h * outward[i][1])
        pts.append(mid)
    return Contour.from_points(pts), idx


def test_li_zero_without_concavities():
    c = trace_contour(render(ShapeSpec("disk", radius=20, canvas=(64, 64))))
    assert lobulation_index(c, []) == 0
    assert lobulation_index(c, [3]) == 0


def test_li_symmetric_lobes_is_zero():
    c, idx = _flower([3, 3, 3, 3])
    assert lobe_areas(c, idx) == pytest.approx([15] * 4)
    assert abs(lobulation_index(c, idx)) < 1e-6


def test_li_one_doubled_lobe():
    c, idx = _flower([3, 3, 6, 3])
    assert lobulation_index(c, idx) == pytest.approx(0.8, abs=1e-12)


def test_li_symmetric_raster_rosette():
    # lobes must bend by more than the smooth threshold over k points
    ring = rosette_ring(4, 8)
    a = analyze(render(ShapeSpec("rosette", radius=ring, lobes=4, lobe_radius=8, canvas=(64, 64))))
    assert a.features.cspi == 8
    assert a.features.lobulation_index < 0.05


# --- skeleton -----------------------------------------------------------------


def test_line_is_its_own_skeleton():
    line = padded(np.ones((1, 20)))
    assert skeletonize(line) == 20


@pytest.mark.parametrize("n", [3, 6, 11, 20])
def test_square_skeleton_matches_reference(n):
    m = padded(np.ones((n, n)))
    ref = zhang_suen_reference(m.pixels)
    assert np.array_equal(thin(m), ref)
    assert skeletonize(m) == int(ref.sum())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_thinning_matches_reference_on_blobs(seed):
    arr = np.random.default_rng(seed).random((12, 12)) < 0.7
    m = padded(arr, 1)
    assert np.array_equal(thin(m), zhang_suen_reference(m.pixels))


def test_disk_skeleton_smaller_than_star_of_equal_area():
    star = render(ShapeSpec("star", radius=55, lobes=6, depth=0.5, canvas=(128, 128)))
    r = math.sqrt(star.count / math.pi)
    disk = render(ShapeSpec("disk", radius=r, canvas=(128, 128)))
    assert abs(disk.count / star.count - 1) < 0.02
    assert skeletonize(disk) < skeletonize(star)


def test_skeleton_of_empty_raises():
    with pytest.raises(EmptyMask):
        skeletonize(MaskImage.zeros(3, 3))


# --- ellipse ------------------------------------------------------------------


def test_disk_ellipse_is_round():
    e = equivalent_ellipse(render(ShapeSpec("disk", radius=20, canvas=(64, 64))))
    assert abs(e.semi_major / e.semi_minor - 1) < 0.02


def test_rect_ellipse_ratio_and_angle():
    m = render(ShapeSpec("rect", axes=(40, 10), canvas=(64, 64)))
    assert m.count == 400
    e = equivalent_ellipse(m)
    assert e.angle == pytest.approx(0, abs=1e-9)
    assert abs(e.semi_major / e.semi_minor / 4 - 1) < 0.05
    assert e.area == pytest.approx(m.count, rel=1e-12)
    r = equivalent_ellipse(render(ShapeSpec("rect", axes=(40, 10), rotation=30, canvas=(64, 64))))
    assert abs(r.angle - 30) < 1


def test_ellipse_area_override():
    m = render(ShapeSpec("ellipse", axes=(20, 9), rotation=70, canvas=(64, 64)))
    e = equivalent_ellipse(m, area=1234.5)
    assert math.pi * e.semi_major * e.semi_minor == pytest.approx(1234.5, rel=1e-6)
    assert e.semi_major >= e.semi_minor > 0


def test_degenerate_ellipses():
    with pytest.raises(DegenerateRegion):
        equivalent_ellipse(padded(np.ones((1, 2))))
    with pytest.raises(DegenerateRegion):
        equivalent_ellipse(padded(np.eye(6)))


def _quadrature_perimeter(a, b):
    e2 = 1 - (b / a) ** 2
    val, _ = integrate.quad(lambda t: math.sqrt(1 - e2 * math.sin(t) ** 2), 0, math.pi / 2)
    return 4 * a * val


def test_ellipse_perimeter_values():
    assert ellipse_perimeter(EllipseFit((0, 0), 7, 7, 0)) == pytest.approx(14 * math.pi, abs=1e-9)
    assert abs(ellipse_perimeter(EllipseFit((0, 0), 5, 3, 0)) - 25.527) < 1e-3
    assert _quadrature_perimeter(5, 3) == pytest.approx(25.5270, abs=1e-4)
    p = ellipse_perimeter(EllipseFit((0, 0), 10, 1, 0))
    assert abs(p / _quadrature_perimeter(10, 1) - 1) < 0.005


# --- full feature vector ------------------------------------------------------


def test_disk_features_hit_targets():
    f = extract_features(render(ShapeSpec("disk", radius=50, canvas=(128, 128))))
    assert 0.95 <= f.form_factor <= 1.01
    assert 0.95 <= f.roundness <= 1.05
    assert f.solidity >= 0.99
    assert f.convexity >= 0.99
    assert 0.97 <= f.enc <= 1.03
    assert 0.76 <= f.extent <= 0.80
    assert f.cspi == 0


def test_square_features():
    f = extract_features(render(ShapeSpec("rect", axes=(64, 64), canvas=(80, 80))))
    assert f.extent >= 0.99
    assert abs(f.form_factor - math.pi / 4) <= 0.02
    assert (f.height, f.width) == (64, 64)


def test_star_against_its_hull():
    spec = ShapeSpec("star", radius=50, lobes=5, depth=0.5, canvas=(128, 128))
    star = render(spec)
    hull_poly = convex_hull(Contour.from_points(boundary(spec))).points
    hull = MaskImage(fill_polygon(hull_poly, 128, 128))
    s, h = extract_features(star), extract_features(hull)
    assert s.solidity < h.solidity
    assert s.convexity < h.convexity
    assert s.form_factor < h.form_factor
    assert s.cspi > h.cspi
    assert s.ens > h.ens


def test_depth_sweep_is_monotone():
    depths = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    feats = [extract_features(render(ShapeSpec("star", radius=50, lobes=5, depth=d, canvas=(128, 128)))) for d in depths]
    cs = [f.cspi for f in feats]
    ff = [f.form_factor for f in feats]
    assert all(a <= b for a, b in zip(cs, cs[1:]))
    assert cs[0] == 0 and cs[-1] == 10
    assert all(a > b for a, b in zip(ff, ff[1:]))


@pytest.mark.parametrize("arr", [np.zeros((5, 5)), padded([[1]]).pixels, padded([[1, 1, 1, 1]]).pixels, padded(np.eye(5)).pixels])
def test_degenerate_regions_give_zero_vector(arr):
    f = extract_features(MaskImage(np.asarray(arr, np.uint8)))
    assert f.degenerate
    assert all(v == 0 for v in f.values())


def test_small_region_skips_curvature_with_note():
    a = analyze(padded(np.ones((3, 3))), k=5)
    assert not a.features.degenerate
    assert a.features.cspi == 0
    assert any("k-curve" in n for n in a.notes)


def test_hull_diameter_option():
    m = render(ShapeSpec("ellipse", axes=(40, 20), canvas=(100, 100)))
    e = extract_features(m)
    h = extract_features(m, roundness_diameter="hull")
    assert e.roundness == pytest.approx(1 / e.ls_ratio, rel=1e-12)
    assert h.roundness < e.roundness
    with pytest.raises(ValueError):
        extract_features(m, roundness_diameter="feret")


shapes = st.one_of(
    st.builds(lambda r, seed: ShapeSpec("disk", radius=r, seed=seed), st.floats(6, 50), st.integers(0, 99)),
    st.builds(
        lambda a, b, rot: ShapeSpec("ellipse", axes=(max(a, b), min(a, b)), rotation=rot),
        st.floats(4, 50), st.floats(3, 50), st.floats(0, 180),
    ),
    st.builds(lambda w, h, rot: ShapeSpec("rect", axes=(w, h), rotation=rot), st.floats(3, 70), st.floats(3, 70), st.floats(0, 90)),
    st.builds(
        lambda n, d, rot: ShapeSpec("star", radius=50, lobes=n, depth=d, rotation=rot),
        st.integers(3, 8), st.floats(0, 0.8), st.floats(0, 120),
    ),
    st.builds(lambda arm, rot: ShapeSpec("plus", radius=45, arm=arm, rotation=rot), st.floats(6, 40), st.floats(0, 90)),
)


@settings(max_examples=60, deadline=None)
@given(shapes)
def test_feature_invariants(spec):
    f = extract_features(render(spec))
    if f.degenerate:
        return
    assert f.cspi % 2 == 0
    assert f.lobulation_index >= 0
    assert f.ls_ratio >= 1
    assert f.ls_ratio == pytest.approx(f.major_axis / f.minor_axis, rel=1e-9)
    for v in (f.convexity, f.solidity, f.extent, f.tca_ratio):
        assert 0 < v <= 1
    assert f.solidity == f.tca_ratio
    assert 0 < f.form_factor <= 1.05
    assert f.ens >= 0


@settings(max_examples=30, deadline=None)
@given(shapes, st.integers(1, 3))
def test_quarter_turn_invariance(spec, k):
    m = render(spec)
    a = extract_features(m)
    b = extract_features(MaskImage(np.ascontiguousarray(np.rot90(m.pixels, k))))
    for name in ("form_factor", "roundness", "solidity", "enc", "ls_ratio", "convexity", "tca_ratio", "lobulation_index"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-9, abs=1e-12), name
    assert b.cspi == a.cspi
    if k % 2 and not a.degenerate:
        assert b.aspect_ratio == pytest.approx(1 / a.aspect_ratio, rel=1e-12)


# --- outputs ------------------------------------------------------------------


def test_csv_header_and_row():
    assert ",".join(CSV_HEADER) == (
        "id,class,perimeter,height,width,area,cspi,li,ens,aspect_ratio,form_factor,roundness,solidity,"
        "major_axis,minor_axis,enc,ls_ratio,convexity,extent,tca_ratio,degenerate"
    )
    assert len(FEATURE_NAMES) == 18
    f = extract_features(render(ShapeSpec("ellipse", axes=(20, 10), canvas=(64, 64))))
    row = csv_row("benign (1)", "benign", f)
    assert len(row) == len(CSV_HEADER)
    assert float(row[2]) == f.perimeter
    assert row[-1] == "false"
    assert csv_row("n", "normal", FeatureVector.degenerate_vector())[-1] == "true"


def test_diagnostics_and_overlay():
    a = analyze(render(ShapeSpec("star", radius=40, lobes=5, depth=0.55, canvas=(100, 100))))
    doc = json.loads(json.dumps(a.diagnostics()))
    kinds = [p["kind"] for p in doc["significant_points"]]
    assert kinds.count("concave") == 5
    assert len(doc["lobe_areas"]) == 5
    img = curvature_overlay(a)
    assert img.shape == (100, 100)
    assert (img == 255).sum() >= 5 and (img == 170).sum() >= 5


def test_measurement_polygon_keeps_vertex_order():
    c = trace_contour(render(ShapeSpec("disk", radius=15, canvas=(40, 40))))
    p = measurement_polygon(c)
    assert len(p.points) == len(c.points)
    assert np.abs(p.points - c.points).max() < 1.5
