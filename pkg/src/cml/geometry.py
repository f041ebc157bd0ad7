"""Convex polygons and segments in [0,1]^2 under the two-node lattice map.

A shape is cut by the branch lines of the map into pieces ("components"),
one per cell of the partition. Each piece is mapped by a single affine
branch, which keeps it convex, and the image is cut again. Repeating this
builds a forest of components whose counts and measures can be checked
against closed-form bounds.

Cells are numbered row-major from the bottom-left: cell = row * m + col,
where col indexes x_1, row indexes x_2 and m is the number of branches.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ConsistencyError, FeasibilityError, RuntimeCapExceeded, UsageError
from .lattice import Lattice
from .maps import PiecewiseLinearMap, branch_index

AREA_SLIVER = 1e-15
LENGTH_SLIVER = 1e-12
DEFAULT_CAP = 1_000_000
CONSERVATION_TOL = 1e-9
SQRT2 = math.sqrt(2.0)

Point = tuple[float, float]


# --------------------------------------------------------------------------
# Shapes


def _shoelace(pts: Sequence[Point]) -> float:
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex polygon given by its vertices."""

    vertices: tuple[Point, ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise UsageError("a polygon needs at least 3 vertices")
        if _shoelace(verts) < 0:
            raise UsageError("polygon vertices must be counter-clockwise")
        scale = max(1.0, max(abs(v) for p in verts for v in p))
        tol = 1e-12 * scale * scale
        n = len(verts)
        for i in range(n):
            if _cross(verts[i], verts[(i + 1) % n], verts[(i + 2) % n]) < -tol:
                raise UsageError("polygon is not convex")

    @property
    def area(self) -> float:
        return _shoelace(self.vertices)

    @property
    def measure(self) -> float:
        return self.area

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices)

    @classmethod
    def box(cls, x0: float, x1: float, y0: float, y1: float) -> ConvexPolygon:
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @classmethod
    def hull(cls, points: Iterable[Sequence[float]]) -> ConvexPolygon:
        """Convex hull (monotone chain), collinear points removed."""
        pts = sorted({(float(p[0]), float(p[1])) for p in points})
        if len(pts) < 3:
            raise UsageError("hull needs at least 3 distinct points")

        def half(seq):
            out: list[Point] = []
            for p in seq:
                while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                    out.pop()
                out.append(p)
            return out

        lower, upper = half(pts), half(reversed(pts))
        ring = lower[:-1] + upper[:-1]
        if len(ring) < 3:
            raise UsageError("points are collinear")
        return cls(tuple(ring))


@dataclass(frozen=True)
class Segment:
    p: Point
    q: Point

    def __post_init__(self):
        p = (float(self.p[0]), float(self.p[1]))
        q = (float(self.q[0]), float(self.q[1]))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p == q:
            raise UsageError("segment endpoints coincide")

    @property
    def vertices(self) -> tuple[Point, Point]:
        return (self.p, self.q)

    @property
    def length(self) -> float:
        return math.hypot(self.q[0] - self.p[0], self.q[1] - self.p[1])

    @property
    def measure(self) -> float:
        return self.length

    @property
    def slope(self) -> float:
        dx = self.q[0] - self.p[0]
        dy = self.q[1] - self.p[1]
        return math.inf if dx == 0 else dy / dx

    def point_at(self, t: float) -> Point:
        return (
            self.p[0] + t * (self.q[0] - self.p[0]),
            self.p[1] + t * (self.q[1] - self.p[1]),
        )


Shape = Union[ConvexPolygon, Segment]


# --------------------------------------------------------------------------
# Partition and clipping


@dataclass(frozen=True)
class Partition2D:
    """Cells cut by the map's breakpoints on both axes."""

    map: PiecewiseLinearMap

    @property
    def cuts(self) -> tuple[Fraction, ...]:
        return self.map.cuts

    @property
    def m(self) -> int:
        return len(self.cuts) + 1

    @property
    def n_cells(self) -> int:
        return self.m * self.m

    def bounds(self) -> list[tuple[Fraction, Fraction]]:
        edges = (Fraction(0), *self.cuts, Fraction(1))
        return list(zip(edges[:-1], edges[1:]))

    def cell_of(self, col: int, row: int) -> int:
        return row * self.m + col

    def col_row(self, cell: int) -> tuple[int, int]:
        return cell % self.m, cell // self.m

    def locate(self, pt: Point) -> int:
        """Cell of a point under the map's endpoint conventions."""
        x, y = (min(max(v, 0.0), 1.0) for v in pt)
        return self.cell_of(branch_index(self.map, x), branch_index(self.map, y))

    def labels(self) -> dict[int, str]:
        return {
            self.cell_of(c, r): f"x1 in [{lo1},{hi1}], x2 in [{lo2},{hi2}]"
            for c, (lo1, hi1) in enumerate(self.bounds())
            for r, (lo2, hi2) in enumerate(self.bounds())
        }


@dataclass
class Component:
    shape: Shape
    cell: int
    depth: int = 0
    parent: int = -1

    @property
    def measure(self) -> float:
        return self.shape.measure


def _clip_halfplane(pts: list[Point], axis: int, value: Fraction, keep_below: bool) -> list[Point]:
    """Sutherland-Hodgman clip against x_axis <= value (or >=).

    Side tests compare floats with the exact rational cut, and new vertices
    are snapped onto the cut line.
    """
    if not pts:
        return pts
    fv = float(value)

    def inside(p):
        return p[axis] <= value if keep_below else p[axis] >= value

    out: list[Point] = []
    n = len(pts)
    for i in range(n):
        cur, nxt = pts[i], pts[(i + 1) % n]
        cin, nin = inside(cur), inside(nxt)
        if cin:
            out.append(cur)
        if cin != nin:
            t = (fv - cur[axis]) / (nxt[axis] - cur[axis])
            other = 1 - axis
            o = cur[other] + t * (nxt[other] - cur[other])
            out.append((fv, o) if axis == 0 else (o, fv))
    return out


def _dedupe(pts: list[Point]) -> list[Point]:
    out: list[Point] = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def _clip_polygon(poly: ConvexPolygon, partition: Partition2D, depth: int, parent: int,
                  slivers: list | None) -> list[Component]:
    xs = [p[0] for p in poly.vertices]
    ys = [p[1] for p in poly.vertices]
    comps = []
    for col, (lo1, hi1) in enumerate(partition.bounds()):
        if max(xs) < lo1 or min(xs) > hi1:
            continue
        strip = list(poly.vertices)
        if col > 0:
            strip = _clip_halfplane(strip, 0, lo1, keep_below=False)
        if col < partition.m - 1:
            strip = _clip_halfplane(strip, 0, hi1, keep_below=True)
        if len(strip) < 3:
            continue
        for row, (lo2, hi2) in enumerate(partition.bounds()):
            if max(ys) < lo2 or min(ys) > hi2:
                continue
            piece = strip
            if row > 0:
                piece = _clip_halfplane(piece, 1, lo2, keep_below=False)
            if row < partition.m - 1:
                piece = _clip_halfplane(piece, 1, hi2, keep_below=True)
            piece = _dedupe(piece)
            a = _shoelace(piece) if len(piece) >= 3 else 0.0
            if a < AREA_SLIVER:
                if a > 0 and slivers is not None:
                    slivers.append(a)
                continue
            try:
                shape = ConvexPolygon(tuple(piece))
            except UsageError:
                shape = ConvexPolygon.hull(piece)
            comps.append(Component(shape, partition.cell_of(col, row), depth, parent))
    return comps


def _clip_segment(seg: Segment, partition: Partition2D, depth: int, parent: int,
                  slivers: list | None) -> list[Component]:
    ts = {0.0, 1.0}
    for axis in (0, 1):
        a, b = seg.p[axis], seg.q[axis]
        if a == b:
            continue
        for cut in partition.cuts:
            t = (float(cut) - a) / (b - a)
            if 0.0 < t < 1.0:
                ts.add(t)
    ts = sorted(ts)
    comps = []
    for t0, t1 in zip(ts[:-1], ts[1:]):
        p, q = seg.point_at(t0), seg.point_at(t1)
        length = math.hypot(q[0] - p[0], q[1] - p[1])
        if length < LENGTH_SLIVER:
            if length > 0 and slivers is not None:
                slivers.append(length)
            continue
        mid = seg.point_at(0.5 * (t0 + t1))
        comps.append(Component(Segment(p, q), partition.locate(mid), depth, parent))
    return comps


def clip_to_cells(
    shape: Shape,
    partition: Partition2D,
    *,
    depth: int = 0,
    parent: int = -1,
    slivers: list | None = None,
) -> list[Component]:
    """Split ``shape`` into one convex piece per cell it meets.

    Pieces below the sliver thresholds are dropped; their measures are
    appended to ``slivers`` when given.
    """
    if isinstance(shape, Segment):
        return _clip_segment(shape, partition, depth, parent, slivers)
    return _clip_polygon(shape, partition, depth, parent, slivers)


# --------------------------------------------------------------------------
# Mapping and forests


def _require_two_node(lat: Lattice) -> None:
    if lat.topology.kind != "two_node":
        raise UsageError("the geometry engine handles the two-node lattice only")


def branch_affine(lat: Lattice, cell: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear part and offset of T restricted to ``cell``."""
    _require_two_node(lat)
    m = len(lat.map.branches)
    col, row = cell % m, cell // m
    b1, b2 = lat.map.branches[col], lat.map.branches[row]
    lin = lat.mix @ np.diag([float(b1.slope), float(b2.slope)])
    off = lat.mix @ np.array([float(b1.intercept), float(b2.intercept)])
    return lin, off


def map_component(comp: Component, lat: Lattice) -> Shape:
    """Image of a one-cell component under the affine branch of T."""
    lin, off = branch_affine(lat, comp.cell)
    (a, b), (c, d) = lin
    e, f = off
    pts = [(a * x + b * y + e, c * x + d * y + f) for x, y in comp.shape.vertices]
    if isinstance(comp.shape, Segment):
        p, q = pts
        if p == q:
            raise ConsistencyError("segment collapsed to a point")
        return Segment(p, q)
    if a * d - b * c < 0:
        pts.reverse()
    pts = _dedupe(pts)
    if len(pts) < 3 or _shoelace(pts) <= 0:
        raise ConsistencyError("polygon image is degenerate")
    return ConvexPolygon(tuple(pts))


def area_factor(lat: Lattice) -> float:
    """|det| of T on any cell: k^2 |det(mix)|."""
    return lat.slope_magnitude**2 * abs(float(np.linalg.det(lat.mix)))


@dataclass
class ComponentForest:
    levels: list[list[Component]]
    slivers: list[float] = field(default_factory=list)
    partial: bool = False

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def counts(self) -> list[int]:
        return [len(level) for level in self.levels]

    @property
    def measures(self) -> list[float]:
        return [math.fsum(c.measure for c in level) for level in self.levels]

    def descendants(self, depth: int, index: int, steps: int) -> list[int]:
        """Indices at ``depth + steps`` descending from component ``index``."""
        current = {index}
        for d in range(depth + 1, depth + steps + 1):
            current = {i for i, c in enumerate(self.levels[d]) if c.parent in current}
        return sorted(current)

    def to_jsonl(self) -> str:
        """One line per component: depth, index, parent, cell, vertices, measure."""
        buf = io.StringIO()
        for d, level in enumerate(self.levels):
            for i, c in enumerate(level):
                row = {
                    "depth": d,
                    "index": i,
                    "parent": c.parent,
                    "cell": c.cell,
                    "kind": "segment" if isinstance(c.shape, Segment) else "polygon",
                    "vertices": [list(p) for p in c.shape.vertices],
                    "measure": c.measure,
                }
                buf.write(json.dumps(row) + "\n")
        return buf.getvalue()

    def summary_rows(self) -> list[dict]:
        dropped = self.slivers + [0.0] * (len(self.levels) - len(self.slivers))
        return [
            {"depth": d, "count": n, "total_measure": m, "sliver_measure": s}
            for d, (n, m, s) in enumerate(zip(self.counts, self.measures, dropped))
        ]


def iterate_components(
    shape: Shape, lat: Lattice, k: int, *, cap: int = DEFAULT_CAP
) -> ComponentForest:
    """Forest of components of shape, T(shape), ..., T^k(shape).

    Raises RuntimeCapExceeded carrying the partial forest when a depth would
    hold more than ``cap`` components.
    """
    _require_two_node(lat)
    if k < 0:
        raise UsageError("k must be >= 0")
    partition = Partition2D(lat.map)
    dropped: list[float] = []
    levels = [clip_to_cells(shape, partition, slivers=dropped)]
    forest = ComponentForest(levels, [math.fsum(dropped)])
    for depth in range(1, k + 1):
        dropped = []
        nxt: list[Component] = []
        for idx, comp in enumerate(levels[-1]):
            image = map_component(comp, lat)
            nxt.extend(clip_to_cells(image, partition, depth=depth, parent=idx, slivers=dropped))
            if len(nxt) > cap:
                forest.partial = True
                raise RuntimeCapExceeded(f"more than {cap} components at depth {depth}", forest)
        levels.append(nxt)
        forest.slivers.append(math.fsum(dropped))
    return forest


def check_polygon_conservation(forest: ComponentForest, lat: Lattice,
                               tol: float = CONSERVATION_TOL) -> list[float]:
    """Relative error of measure(depth i+1) against factor * measure(depth i).

    Also enforces that dropped slivers stay below ``tol`` of the total.
    """
    factor = area_factor(lat)
    meas = forest.measures
    errs = []
    for d in range(1, len(meas)):
        expected = factor * meas[d - 1]
        got = meas[d] + forest.slivers[d]
        err = abs(got - expected) / expected if expected > 0 else abs(got)
        if err > tol or (meas[d] > 0 and forest.slivers[d] > tol * meas[d]):
            raise ConsistencyError(f"measure not conserved at depth {d}: relative error {err:.3e}")
        errs.append(err)
    return errs


def segment_iterate(seg: Segment, lat: Lattice, k: int, *, cap: int = DEFAULT_CAP) -> ComponentForest:
    """Segment forest with per-depth length growth checked against [k(1-2c), k]."""
    if not isinstance(seg, Segment):
        raise UsageError("segment_iterate expects a Segment")
    forest = iterate_components(seg, lat, k, cap=cap)
    lo = lat.slope_magnitude * abs(1 - 2 * lat.c)
    hi = lat.slope_magnitude
    meas = forest.measures
    for d in range(1, len(meas)):
        prev = meas[d - 1]
        got = meas[d] + forest.slivers[d]
        if prev > 0 and not (lo * prev * (1 - 1e-9) <= got <= hi * prev * (1 + 1e-9)):
            raise ConsistencyError(f"length growth {got / prev} outside [{lo}, {hi}] at depth {d}")
    return forest


# --------------------------------------------------------------------------
# Checkable geometric claims


def slope_transform(k: float, c: float) -> float:
    """Slope of the image of a line of slope k under the mix matrix."""
    if math.isinf(k):
        return math.inf if c == 0 else (1 - c) / c
    den = (1 - c) + c * k
    num = c + (1 - c) * k
    if den == 0:
        if num == 0:
            raise UsageError("direction is annihilated by the mix matrix")
        return math.inf
    return num / den


@dataclass(frozen=True)
class Rectangle:
    center: Point
    direction: Point
    length: float
    width: float

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> tuple[Point, ...]:
        ux, uy = self.direction
        nx, ny = -uy, ux
        hl, hw = self.length / 2, self.width / 2
        cx, cy = self.center
        return tuple(
            (cx + s * hl * ux + t * hw * nx, cy + s * hl * uy + t * hw * ny)
            for s, t in ((-1, -1), (1, -1), (1, 1), (-1, 1))
        )


def diameter(poly: ConvexPolygon) -> tuple[Point, Point, float]:
    """Farthest vertex pair by rotating calipers over antipodal pairs."""
    pts = poly.vertices
    n = len(pts)
    best = (pts[0], pts[1], 0.0)

    def dist2(a, b):
        return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2

    j = 1
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        while abs(_cross(a, b, pts[(j + 1) % n])) > abs(_cross(a, b, pts[j])):
            j = (j + 1) % n
        for p in (a, b):
            d = dist2(p, pts[j])
            if d > best[2]:
                best = (p, pts[j], d)
    return best[0], best[1], math.sqrt(best[2])


def bounding_rectangle(poly: ConvexPolygon) -> Rectangle:
    """Rectangle whose long side is parallel to the polygon's diameter.

    The area sandwich 0.5 L W <= area <= L W is asserted.
    """
    p, q, length = diameter(poly)
    if length == 0:
        raise UsageError("degenerate polygon")
    ux, uy = (q[0] - p[0]) / length, (q[1] - p[1]) / length
    along = [x * ux + y * uy for x, y in poly.vertices]
    across = [-x * uy + y * ux for x, y in poly.vertices]
    a0, a1 = min(along), max(along)
    b0, b1 = min(across), max(across)
    ca, cb = (a0 + a1) / 2, (b0 + b1) / 2
    rect = Rectangle((ca * ux - cb * uy, ca * uy + cb * ux), (ux, uy), a1 - a0, b1 - b0)
    area = poly.area
    # projections of coordinates of size ~scale lose ~scale * 2^-52 each
    scale = max(max(abs(x), abs(y)) for x, y in poly.vertices)
    slack = 1e-12 * rect.area + 8 * 2.0**-52 * scale * rect.length
    if not (0.5 * rect.area - slack <= area <= rect.area + slack):
        raise ConsistencyError(f"rectangle sandwich violated: {area} vs {rect.area}")
    return rect


def _strip_clip(pts: list[Point], w: float, sign: int) -> list[Point]:
    """Clip against sign * (x1 - x2) <= w, side test exact in rationals."""
    fw = Fraction(w)

    def g(p):
        return sign * (p[0] - p[1])

    def inside(p):
        v = g(p)
        if abs(v - w) > 1e-9:
            return v <= w
        return sign * (Fraction(p[0]) - Fraction(p[1])) <= fw

    out: list[Point] = []
    n = len(pts)
    for i in range(n):
        cur, nxt = pts[i], pts[(i + 1) % n]
        cin, nin = inside(cur), inside(nxt)
        if cin:
            out.append(cur)
        if cin != nin:
            gc, gn = g(cur), g(nxt)
            t = (w - gc) / (gn - gc)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def strip_area(poly: ConvexPolygon, eps: float) -> float:
    """Area of poly within distance eps of the diagonal."""
    if eps <= 0:
        raise UsageError("eps must be positive")
    w = SQRT2 * eps
    pts = _strip_clip(list(poly.vertices), w, 1)
    pts = _strip_clip(pts, w, -1)
    pts = _dedupe(pts)
    return max(_shoelace(pts), 0.0) if len(pts) >= 3 else 0.0


def contains_point(poly: ConvexPolygon, pt: Point, tol: float = 1e-12) -> bool:
    n = len(poly.vertices)
    return all(
        _cross(poly.vertices[i], poly.vertices[(i + 1) % n], pt) >= -tol for i in range(n)
    )


@dataclass(frozen=True)
class CaptureReport:
    applicable: bool
    captured: bool
    ratio: float
    bound: float
    cells_touched: int

    @property
    def ok(self) -> bool:
        return not self.applicable or (self.captured and self.ratio >= self.bound)


def check_center_capture(omega: ConvexPolygon, lat: Lattice, eps: float) -> CaptureReport:
    """If T(omega) meets every cell, test that it holds (1/2, 1/2) and the strip ratio."""
    _require_two_node(lat)
    partition = Partition2D(lat.map)
    pieces = clip_to_cells(omega, partition)
    if len(pieces) != 1:
        raise UsageError("omega must lie in a single cell")
    image = map_component(pieces[0], lat)
    touched = {c.cell for c in clip_to_cells(image, partition)}
    bound = eps * eps / 2
    if len(touched) < partition.n_cells:
        return CaptureReport(False, False, math.nan, bound, len(touched))
    captured = contains_point(image, (0.5, 0.5))
    ratio = strip_area(image, eps) / image.area
    return CaptureReport(True, captured, ratio, bound, len(touched))


def segment_outside_fraction(seg: Segment, r0: float) -> float:
    """Fraction of a slope -1 segment lying outside the r0-tube of the diagonal.

    Along such a segment x1 - x2 changes by sqrt(2) per unit length, so the
    tube {|x1 - x2| / sqrt(2) <= r0} cuts a chord of length at most 2 r0.
    With length >= 3 r0 the outside fraction is at least 1/3 (asserted).
    """
    if r0 <= 0:
        raise UsageError("r0 must be positive")
    if not math.isclose(seg.slope, -1.0, rel_tol=1e-9):
        raise UsageError("segment must have slope -1")
    length = seg.length
    if length < 3 * r0 * (1 - 1e-12):
        raise UsageError("segment must be at least 3 r0 long")
    g0 = (seg.p[0] - seg.p[1]) / SQRT2
    g1 = (seg.q[0] - seg.q[1]) / SQRT2
    lo, hi = min(g0, g1), max(g0, g1)
    inside = max(0.0, min(hi, r0) - max(lo, -r0))
    # g is affine in arclength with |dg/ds| = 1
    frac = 1.0 - inside / (hi - lo)
    if frac < 1 / 3 - 1e-12:
        raise ConsistencyError(f"outside fraction {frac} below 1/3")
    return frac


def component_growth_bound(d_l: float, eps: float, i: int) -> float:
    """Component bound (2 d_l / eps) (i + 1) 2^i for thin rectangles."""
    return 2 * d_l / eps * (i + 1) * 2**i


def thin_rectangle(center: Point, angle: float, length: float, width: float) -> ConvexPolygon:
    ux, uy = math.cos(angle), math.sin(angle)
    rect = Rectangle(center, (ux, uy), length, width)
    return ConvexPolygon(rect.corners())


def _segment_in_tube(seg: Segment, r: float) -> bool:
    # x1 - x2 is affine along the segment, so compare its range with the tube
    g0 = seg.p[0] - seg.p[1]
    g1 = seg.q[0] - seg.q[1]
    w = SQRT2 * r
    return min(g0, g1) <= w and max(g0, g1) >= -w


@dataclass
class TubeWindowReport:
    window: int
    counts: list[int]
    max_count: int
    ok: bool


def tube_component_window(seg: Segment, lat: Lattice, r0: float, theta2: float) -> TubeWindowReport:
    """Components of T^i(seg) meeting the r0-tube for i = 1..M.

    M = floor(log_{k(1-2c)} 3) + 1. r0 and theta2 are inputs and must satisfy
    (k(1-2c))^i theta2 < 2 r0 < k^-i for i = 1..M; seg must have slope -1,
    lie in the tube and be shorter than theta2. The claim is at most 3
    components in the tube at every depth of the window.
    """
    k = lat.slope_magnitude
    g = k * abs(1 - 2 * lat.c)
    if g <= 1:
        raise FeasibilityError("the window is defined only when |k(1-2c)| > 1")
    window = int(math.floor(math.log(3) / math.log(g))) + 1
    for i in range(1, window + 1):
        if not (g**i * theta2 < 2 * r0 < k ** (-i)):
            raise FeasibilityError(
                f"need (k(1-2c))^i theta2 < 2 r0 < k^-i at i = {i}; got theta2={theta2}, r0={r0}"
            )
    if not math.isclose(seg.slope, -1.0, rel_tol=1e-9):
        raise UsageError("segment must have slope -1")
    if seg.length >= theta2:
        raise UsageError("segment must be shorter than theta2")
    for p in seg.vertices:
        if abs(p[0] - p[1]) / SQRT2 > r0:
            raise UsageError("segment must lie in the r0-tube")
    forest = segment_iterate(seg, lat, window)
    counts = [
        sum(_segment_in_tube(c.shape, r0) for c in forest.levels[d]) for d in range(1, window + 1)
    ]
    worst = max(counts)
    return TubeWindowReport(window, counts, worst, worst <= 3)


@dataclass
class GoodSetReport:
    good: bool
    checked: int
    max_offspring: int
    violation: dict | None
    forest: ComponentForest = field(repr=False)


def good_set_check(
    shape: Shape,
    d_measure: float,
    delta: float,
    m0: int,
    a: int,
    horizon: int,
    lat: Lattice,
    *,
    cap: int = DEFAULT_CAP,
) -> GoodSetReport:
    """Check that every small component up to ``horizon`` spawns at most ``a`` in m0 steps."""
    if m0 < 1 or a < 1 or horizon < 0:
        raise UsageError("need m0 >= 1, a >= 1, horizon >= 0")
    partition = Partition2D(lat.map)
    if len(clip_to_cells(shape, partition)) != 1:
        raise UsageError("shape must lie in a single cell")
    limit = delta * d_measure
    if shape.measure > limit:
        raise UsageError("shape measure exceeds delta * M(D)")
    forest = iterate_components(shape, lat, horizon + m0, cap=cap)
    checked, worst = 0, 0
    for d in range(horizon + 1):
        for i, comp in enumerate(forest.levels[d]):
            if comp.measure > limit:
                continue
            checked += 1
            n = len(forest.descendants(d, i, m0))
            worst = max(worst, n)
            if n > a:
                return GoodSetReport(
                    False, checked, worst,
                    {"depth": d, "index": i, "offspring": n, "measure": comp.measure},
                    forest,
                )
    return GoodSetReport(True, checked, worst, None, forest)
