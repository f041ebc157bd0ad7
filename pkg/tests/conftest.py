from __future__ import annotations

import numpy as np
import pytest

from cml.geometry import ConvexPolygon


def random_polygon_in(rng: np.random.Generator, x0, x1, y0, y1, npts: int = 7) -> ConvexPolygon:
    """Hull of random points in the box [x0, x1] x [y0, y1]."""
    while True:
        pts = np.column_stack([rng.uniform(x0, x1, npts), rng.uniform(y0, y1, npts)])
        try:
            poly = ConvexPolygon.hull(pts)
        except Exception:
            continue
        if poly.area > 1e-8:
            return poly


def points_in_polygon(verts: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorised inclusion test for a counter-clockwise convex polygon."""
    inside = np.ones(len(pts), dtype=bool)
    nxt = np.roll(verts, -1, axis=0)
    for a, b in zip(verts, nxt):
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cross >= 0
    return inside


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
