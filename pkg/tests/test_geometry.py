from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cml.errors import ConsistencyError, FeasibilityError, RuntimeCapExceeded, UsageError
from cml.geometry import (
    Component,
    ConvexPolygon,
    Partition2D,
    Segment,
    area_factor,
    bounding_rectangle,
    check_center_capture,
    check_polygon_conservation,
    clip_to_cells,
    diameter,
    good_set_check,
    iterate_components,
    component_growth_bound,
    map_component,
    segment_iterate,
    segment_outside_fraction,
    slope_transform,
    strip_area,
    thin_rectangle,
    tube_component_window,
)
from cml.lattice import two_node
from conftest import points_in_polygon, random_polygon_in

P2 = Partition2D(two_node("doubling2", 0.1).map)
P3 = Partition2D(two_node("triple3", 0.1).map)


def test_polygon_validation():
    with pytest.raises(UsageError):
        ConvexPolygon(((0, 0), (0, 1), (1, 0)))  # clockwise
    with pytest.raises(UsageError):
        ConvexPolygon(((0, 0), (1, 0), (0.2, 0.2), (0, 1)))  # reflex vertex
    with pytest.raises(UsageError):
        Segment((0.1, 0.1), (0.1, 0.1))


def test_hull_drops_interior_points():
    poly = ConvexPolygon.hull([(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5), (0.5, 0)])
    assert len(poly.vertices) == 4 and poly.area == pytest.approx(1)


def test_clip_examples():
    comps = clip_to_cells(ConvexPolygon.box(0.1, 0.2, 0.1, 0.2), P2)
    assert [c.cell for c in comps] == [0]
    comps = clip_to_cells(ConvexPolygon.box(0.4, 0.6, 0.4, 0.6), P2)
    assert sorted(c.cell for c in comps) == [0, 1, 2, 3]
    assert all(c.measure == pytest.approx(0.01) for c in comps)
    segs = clip_to_cells(Segment((0.3, 0.7), (0.7, 0.3)), P2)
    assert len(segs) == 2
    assert segs[0].shape.q == pytest.approx((0.5, 0.5)) and segs[1].shape.p == pytest.approx((0.5, 0.5))
    assert sum(s.measure for s in segs) == pytest.approx(0.4 * math.sqrt(2))


def test_cell_numbering_row_major_from_bottom_left():
    assert P2.locate((0.2, 0.2)) == 0 and P2.locate((0.7, 0.2)) == 1
    assert P2.locate((0.2, 0.7)) == 2 and P2.locate((0.7, 0.7)) == 3
    assert P3.locate((0.9, 0.5)) == 5 and P3.n_cells == 9


@pytest.mark.parametrize("partition", [P2, P3])
def test_clip_completeness_random(partition, rng):
    for _ in range(300):
        poly = random_polygon_in(rng, 0, 1, 0, 1)
        slivers = []
        comps = clip_to_cells(poly, partition, slivers=slivers)
        total = math.fsum(c.measure for c in comps) + math.fsum(slivers)
        assert total == pytest.approx(poly.area, rel=1e-9)
        for c in comps:
            col, row = partition.col_row(c.cell)
            (lo1, hi1), (lo2, hi2) = partition.bounds()[col], partition.bounds()[row]
            xs, ys = zip(*c.shape.vertices)
            # cuts such as 1/3 are not floats; vertices on a cut may round by one ulp
            tol = 2.0**-52
            assert min(xs) >= lo1 - tol and max(xs) <= hi1 + tol
            assert min(ys) >= lo2 - tol and max(ys) <= hi2 + tol


def test_map_component_examples():
    lat = two_node("doubling2", 0.1)
    comp = clip_to_cells(ConvexPolygon.box(0, 0.25, 0, 0.25), P2)[0]
    assert map_component(comp, lat).area == pytest.approx(0.2, rel=1e-12)
    seg = clip_to_cells(Segment((0.1, 0.1), (0.3, 0.3)), P2)[0]
    img = map_component(seg, lat)
    assert img.p[0] == img.p[1] and img.q[0] == img.q[1]
    unit = clip_to_cells(ConvexPolygon.box(0, 0.5, 0, 0.5), P2)[0]
    img = map_component(unit, two_node("doubling2", 0.0))
    assert sorted(img.vertices) == [(0, 0), (0, 1), (1, 0), (1, 1)]


@pytest.mark.parametrize("kind", ["doubling2", "triple3", "neg_triple3", "tent2"])
def test_area_scaling_and_convexity(kind, rng):
    for c in (0.0, 0.1, 0.2, 0.3):
        lat = two_node(kind, c)
        part = Partition2D(lat.map)
        for _ in range(50):
            poly = random_polygon_in(rng, 0, 1, 0, 1)
            for comp in clip_to_cells(poly, part):
                img = map_component(comp, lat)  # constructor asserts convexity and orientation
                assert img.area == pytest.approx(area_factor(lat) * comp.measure, rel=1e-9)


def test_forest_counts_and_growth():
    lat = two_node("doubling2", 0.1)
    forest = iterate_components(ConvexPolygon.box(0.1, 0.11, 0.1, 0.11), lat, 1)
    assert forest.counts == [1, 1]
    forest = iterate_components(ConvexPolygon.box(0.2, 0.3, 0.21, 0.33), lat, 6)
    errs = check_polygon_conservation(forest, lat)
    assert max(errs) < 1e-9
    for d in range(1, 7):
        assert forest.measures[d] == pytest.approx(4 * 0.8 * forest.measures[d - 1], rel=1e-9)


def test_forest_export():
    lat = two_node("triple3", 0.1)
    forest = iterate_components(ConvexPolygon.box(0.3, 0.4, 0.3, 0.35), lat, 3)
    lines = forest.to_jsonl().splitlines()
    assert len(lines) == sum(forest.counts)
    row = json.loads(lines[-1])
    assert set(row) == {"depth", "index", "parent", "cell", "kind", "vertices", "measure"}
    summary = forest.summary_rows()
    assert [r["count"] for r in summary] == forest.counts
    for d in range(1, 4):
        for i in forest.descendants(d - 1, 0, 1):
            assert forest.levels[d][i].parent == 0


def test_forest_cap_returns_partial():
    lat = two_node("doubling2", 0.05)
    with pytest.raises(RuntimeCapExceeded) as info:
        iterate_components(ConvexPolygon.box(0.1, 0.4, 0.1, 0.4), lat, 10, cap=20)
    partial = info.value.partial
    assert partial.partial and partial.depth >= 1


def test_forest_matches_monte_carlo_oracle(rng):
    """Depth-k total area equals E[# components containing a uniform point]."""
    for kind, c, k in [("doubling2", 0.1, 3), ("triple3", 0.2, 2), ("doubling2", 0.0, 4)]:
        lat = two_node(kind, c)
        poly = random_polygon_in(rng, 0.05, 0.45, 0.55, 0.95)
        forest = iterate_components(poly, lat, k)
        pts = rng.random((10**6, 2))
        hits = np.zeros(len(pts))
        for comp in forest.levels[k]:
            v = comp.shape.as_array()
            lo, hi = v.min(axis=0), v.max(axis=0)
            box = np.all((pts >= lo) & (pts <= hi), axis=1)
            idx = np.nonzero(box)[0]
            hits[idx] += points_in_polygon(v, pts[idx])
        est, se = hits.mean(), hits.std(ddof=1) / math.sqrt(len(hits))
        assert abs(est - forest.measures[k]) < 3 * se + 1e-12


@pytest.mark.parametrize("k, c, expected", [(1, 0.3, 1), (-1, 0.3, -1), (0, 0.2, 0.25), (math.inf, 0.2, 4.0)])
def test_slope_transform_examples(k, c, expected):
    assert slope_transform(k, c) == pytest.approx(expected)


@given(c=st.floats(0, 0.5, exclude_max=True))
def test_slope_transform_fixed_points(c):
    assert slope_transform(1.0, c) == 1.0
    assert slope_transform(-1.0, c) == -1.0


def test_slope_transform_collapsed_direction():
    assert slope_transform(3.0, 0.5) == 1.0
    with pytest.raises(UsageError):
        slope_transform(-1.0, 0.5)


def test_slope_transform_pole():
    assert slope_transform(-(1 - 0.2) / 0.2, 0.2) == math.inf


@given(k=st.floats(-50, 50), c=st.floats(0.01, 0.49))
def test_slope_transform_matches_matrix(k, c):
    mix = np.array([[1 - c, c], [c, 1 - c]])
    d = mix @ np.array([1.0, k])
    got = slope_transform(k, c)
    if math.isinf(got):
        assert abs(d[0]) < 1e-9
    else:
        assert got == pytest.approx(d[1] / d[0], rel=1e-9, abs=1e-9)


def test_bounding_rectangle_examples():
    r = bounding_rectangle(ConvexPolygon.box(0, 2, 0, 1))
    assert r.length == pytest.approx(math.sqrt(5))
    tri = ConvexPolygon(((0, 0), (1, 0), (0.5, math.sqrt(3) / 2)))
    r = bounding_rectangle(tri)
    assert r.length == pytest.approx(1) and r.width == pytest.approx(math.sqrt(3) / 2)
    thin = ConvexPolygon(((0, 0), (1, 0), (1, 1e-9), (0, 1e-9)))
    r = bounding_rectangle(thin)
    assert r.width < 1e-8 and 0.5 * r.area <= thin.area <= r.area * (1 + 1e-9)


def test_diameter_matches_brute_force_and_sandwich(rng):
    for _ in range(10**4):
        poly = random_polygon_in(rng, 0, 1, 0, 1, npts=int(rng.integers(3, 12)))
        v = poly.as_array()
        brute = max(np.hypot(*(a - b)) for a in v for b in v)
        assert diameter(poly)[2] == pytest.approx(brute, rel=1e-12)
        r = bounding_rectangle(poly)
        assert 0.5 * r.area <= poly.area * (1 + 1e-9) and poly.area <= r.area * (1 + 1e-9)
        corners = ConvexPolygon.hull(r.corners()).as_array()
        assert points_in_polygon(corners, v + (corners.mean(0) - v) * 1e-9).all()


@pytest.mark.parametrize("t", [0.0, 0.1, 0.5, 0.9, 1.0])
def test_strip_area_unit_square(t):
    eps = t / math.sqrt(2)
    if t == 0:
        with pytest.raises(UsageError):
            strip_area(ConvexPolygon.box(0, 1, 0, 1), eps)
        return
    assert strip_area(ConvexPolygon.box(0, 1, 0, 1), eps) == pytest.approx(1 - (1 - t) ** 2, abs=1e-12)


def test_strip_area_extremes():
    assert strip_area(ConvexPolygon.box(0, 1, 0, 1), 1.0) == pytest.approx(1)
    assert strip_area(ConvexPolygon.box(0.8, 0.9, 0.0, 0.1), 0.1) == 0


def test_center_capture_examples():
    lat = two_node("doubling2", 0.0)
    rep = check_center_capture(ConvexPolygon.box(0.1, 0.4, 0.1, 0.4), lat, 0.1)
    assert rep.applicable and rep.captured and rep.ratio >= rep.bound and rep.ok
    rep = check_center_capture(ConvexPolygon.box(0.1, 0.11, 0.1, 0.11), lat, 0.1)
    assert not rep.applicable and rep.ok
    with pytest.raises(UsageError):
        check_center_capture(ConvexPolygon.box(0.4, 0.6, 0.1, 0.2), lat, 0.1)


def test_center_capture_nine_cells():
    lat = two_node("triple3", 0.1)
    rep = check_center_capture(ConvexPolygon.box(0.01, 0.32, 0.01, 0.32), lat, 0.1)
    assert rep.applicable and rep.cells_touched == 9 and rep.ok


def test_segment_iterate_examples():
    lat = two_node("doubling2", 0.2)
    f = segment_iterate(Segment((0.1, 0.1), (0.2, 0.2)), lat, 5)
    for level in f.levels:
        for comp in level:
            assert comp.shape.p[0] == comp.shape.p[1] and comp.shape.q[0] == comp.shape.q[1]
    assert f.measures[1] == pytest.approx(2 * f.measures[0])
    f = segment_iterate(Segment((0.4, 0.6), (0.6, 0.4)), lat, 4)
    for level in f.levels[1:]:
        for comp in level:
            for x1, x2 in comp.shape.vertices:
                assert x1 + x2 == pytest.approx(1, abs=1e-12)


def test_segment_growth_bounds_random(rng):
    for _ in range(200):
        c = float(rng.uniform(0, 0.45))
        lat = two_node(str(rng.choice(["doubling2", "triple3"])), c)
        p, q = rng.random(2), rng.random(2)
        segment_iterate(Segment(tuple(p), tuple(q)), lat, 3)  # raises on violation


@pytest.mark.parametrize(
    "seg, r0, expected",
    [(Segment((0.0, 0.6), (0.2, 0.4)), 0.01, 1.0)],
)
def test_outside_fraction_disjoint(seg, r0, expected):
    assert segment_outside_fraction(seg, r0) == pytest.approx(expected)


def test_outside_fraction_centered_chord():
    r0 = 0.02
    h = 1.5 * r0 / math.sqrt(2)  # half of 3 r0 along each axis
    seg = Segment((0.5 - h, 0.5 + h), (0.5 + h, 0.5 - h))
    assert seg.length == pytest.approx(3 * r0)
    assert segment_outside_fraction(seg, r0) == pytest.approx(1 / 3)


def test_outside_fraction_random_and_preconditions(rng):
    low = 1.0
    for _ in range(10**4):
        r0 = float(rng.uniform(1e-3, 0.05))
        length = float(rng.uniform(3 * r0, 0.5))
        cx, cy = rng.uniform(0.3, 0.7, 2)
        h = length / (2 * math.sqrt(2))
        seg = Segment((cx - h, cy + h), (cx + h, cy - h))
        low = min(low, segment_outside_fraction(seg, r0))
    assert low >= 1 / 3 - 1e-12
    with pytest.raises(UsageError):
        segment_outside_fraction(Segment((0.1, 0.1), (0.3, 0.3)), 0.01)
    with pytest.raises(UsageError):
        segment_outside_fraction(Segment((0.5, 0.5), (0.51, 0.49)), 0.05)


def test_component_growth_bound_value():
    assert component_growth_bound(0.2, 0.1, 3) == pytest.approx(2 * 2 * 4 * 8)


def test_tube_window_example():
    lat = two_node("doubling2", 0.2)
    seg = Segment((0.5002, 0.4998), (0.4998, 0.5002))
    rep = tube_component_window(seg, lat, r0=0.003, theta2=0.001)
    assert rep.window == 7 and rep.ok and len(rep.counts) == 7


def test_tube_window_random_segments(rng):
    lat = two_node("doubling2", 0.2)
    worst = 0
    for _ in range(200):
        x = float(rng.uniform(0.01, 0.99))
        d = float(rng.uniform(-0.002, 0.002))
        half = float(rng.uniform(1e-5, 3e-4))
        seg = Segment((x + d / 2 - half, x - d / 2 + half), (x + d / 2 + half, x - d / 2 - half))
        rep = tube_component_window(seg, lat, r0=0.003, theta2=0.001)
        worst = max(worst, rep.max_count)
    assert worst <= 3


def test_tube_window_infeasible_parameters():
    lat = two_node("doubling2", 0.2)
    seg = Segment((0.5002, 0.4998), (0.4998, 0.5002))
    with pytest.raises(FeasibilityError):
        tube_component_window(seg, lat, r0=0.01, theta2=0.001)
    with pytest.raises(FeasibilityError):
        tube_component_window(seg, two_node("doubling2", 0.3), r0=0.003, theta2=0.001)


def test_good_set_examples():
    lat = two_node("doubling2", 0.1)
    rep = good_set_check(ConvexPolygon.box(0.01, 0.011, 0.01, 0.011), 1.0, 0.25, 1, 1, 2, lat)
    assert rep.good and rep.max_offspring == 1
    rep = good_set_check(ConvexPolygon.box(0.2, 0.2001, 0.3, 0.3001), 1.0, 1e-4, 1, 2, 8, lat)
    assert rep.checked > 0 and rep.max_offspring <= 4
    with pytest.raises(UsageError):
        good_set_check(ConvexPolygon.box(0.4, 0.6, 0.4, 0.6), 1.0, 1.0, 1, 2, 3, lat)


def test_good_set_reports_violation():
    lat = two_node("doubling2", 0.1)
    rep = good_set_check(ConvexPolygon.box(0.15, 0.35, 0.15, 0.35), 1.0, 1.0, 1, 1, 2, lat)
    assert not rep.good and rep.violation["offspring"] > 1


def test_geometry_rejects_n_nodes():
    from cml.lattice import CouplingTopology, build_lattice
    from cml.maps import make_standard_map

    ring = build_lattice(CouplingTopology("ring", 3), 0.1, make_standard_map("doubling2"))
    with pytest.raises(UsageError):
        iterate_components(ConvexPolygon.box(0.1, 0.2, 0.1, 0.2), ring, 1)


def test_conservation_check_detects_tampering():
    lat = two_node("doubling2", 0.1)
    forest = iterate_components(ConvexPolygon.box(0.2, 0.3, 0.2, 0.3), lat, 2)
    forest.levels[2].append(Component(ConvexPolygon.box(0, 0.1, 0, 0.1), 0, 2, 0))
    with pytest.raises(ConsistencyError):
        check_polygon_conservation(forest, lat)


def test_thin_rectangle_dimensions():
    r = thin_rectangle((0.3, 0.2), 0.7, 0.1, 1e-6)
    br = bounding_rectangle(r)
    assert br.length == pytest.approx(math.hypot(0.1, 1e-6)) and r.area == pytest.approx(1e-7)
