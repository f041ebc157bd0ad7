from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cml.errors import EmptyPlotError, UsageError
from cml.svg import ABOVE, BELOW, PlotSpec, emit_svg, linear_fit

NS = "{http://www.w3.org/2000/svg}"


def _parse(text):
    return ET.fromstring(text)


def _by_class(root, cls):
    return [e for e in root.iter() if e.get("class") == cls]


def test_empty_table_raises():
    with pytest.raises(EmptyPlotError):
        emit_svg([], PlotSpec("c", ["y"]))


def test_unknown_column_and_kind():
    with pytest.raises(UsageError):
        emit_svg([{"c": 0.1, "y": 1}], PlotSpec("c", ["z"]))
    with pytest.raises(UsageError):
        emit_svg([{"c": 0.1, "y": 1}], PlotSpec("c", ["y"], kind="bar"))


def test_single_row_is_single_marker():
    root = _parse(emit_svg([{"c": 0.1, "y": 2.0}], PlotSpec("c", ["y"])))
    assert len(_by_class(root, "marker")) == 1
    assert not _by_class(root, "series")


def test_line_series_and_thresholds():
    rows = [{"c": c, "y": c * c} for c in np.linspace(0, 0.5, 11)]
    root = _parse(emit_svg(rows, PlotSpec("c", ["y"], thresholds=[0.1, 0.2])))
    series = _by_class(root, "series")
    assert len(series) == 1 and len(series[0].get("points").split()) == 11
    assert len(_by_class(root, "threshold")) == 2


def test_split_colours():
    rows = [{"c": c, "lam": np.log(abs(2 * (1 - 2 * c)))} for c in np.linspace(0, 0.45, 10)]
    root = _parse(emit_svg(rows, PlotSpec("c", ["lam"], kind="scatter", split_at=0.0)))
    fills = [m.get("fill") for m in _by_class(root, "marker")]
    expected = [ABOVE if r["lam"] > 0 else BELOW for r in rows]
    assert fills == expected


def test_fit_coefficients_match_table():
    rng = np.random.default_rng(3)
    x = np.linspace(1, 10, 20)
    y = 2.5 + 0.75 * x + rng.normal(0, 0.1, x.size)
    rows = [{"x": a, "y": b} for a, b in zip(x, y)]
    root = _parse(emit_svg(rows, PlotSpec("x", ["y"], kind="scatter", fit=True)))
    (line,) = _by_class(root, "fit")
    a, b = float(line.get("data-intercept")), float(line.get("data-slope"))
    slope, intercept = np.polyfit(x, y, 1)
    assert a == pytest.approx(intercept, rel=1e-12) and b == pytest.approx(slope, rel=1e-12)


@given(
    a=st.floats(-10, 10), b=st.floats(-10, 10),
    n=st.integers(2, 30),
)
@settings(max_examples=50)
def test_linear_fit_recovers_exact_line(a, b, n):
    x = np.arange(n, dtype=float)
    ia, sb = linear_fit(x, a + b * x)
    assert ia == pytest.approx(a, abs=1e-8) and sb == pytest.approx(b, abs=1e-8)


def test_log_axis_and_nonfinite_values():
    rows = [{"n": 1, "y": 0.0}, {"n": 2, "y": 10.0}, {"n": 3, "y": float("inf")}]
    root = _parse(emit_svg(rows, PlotSpec("n", ["y"], kind="scatter", log_y=True, title="a < b")))
    assert len(_by_class(root, "marker")) == 2
    assert root.tag == NS + "svg"


def test_output_is_deterministic():
    rows = [{"c": c, "y": np.sin(c)} for c in np.linspace(0, 1, 7)]
    spec = PlotSpec("c", ["y"], fit=True)
    assert emit_svg(rows, spec) == emit_svg(rows, spec)
