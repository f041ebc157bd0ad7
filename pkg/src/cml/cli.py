"""Command line entry point: ``cml <experiment> --config <path>``.

Each run writes ``<name>.csv`` (data table), ``<name>.json`` (metadata with
the fully expanded config) and ``<name>.svg`` into the output directory.
Exit codes: 0 success, 2 configuration error, 3 runtime cap exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .diagnostics import (
    INTERMITTENT,
    SYNCHRONIZED,
    RegimeParams,
    classify_regime,
    density_distance,
    empirical_density,
    escape_time,
    inverse_distance_fit,
    lyapunov_analytic,
    trial_rng,
)
from .errors import (
    CMLError,
    ConfigurationError,
    FeasibilityError,
    RuntimeCapExceeded,
    UsageError,
)
from .geometry import (
    ConvexPolygon,
    Partition2D,
    Segment,
    check_polygon_conservation,
    iterate_components,
)
from .lattice import CouplingTopology, lattice_from_spec, orbit, transverse_stability
from .lemma_calc import (
    ExpansionRates,
    LemmaParams,
    critical_coupling,
    expansion_rates,
    iterative_constants,
)
from .precision import Precision
from .svg import PlotSpec, emit_svg

EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 2, 3
EXPERIMENTS = (
    "run-orbit", "sweep", "escape-time", "geometry-trace", "lemma-constants", "density", "stability",
)


# --------------------------------------------------------------------------
# Config schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LatticeSpec(_Strict):
    map: Literal["doubling2", "triple3", "neg_triple3", "tent2"]
    topology: Literal["two_node", "ring", "global"] = "two_node"
    n: int = 2
    c: float


class _Base(_Strict):
    name: Optional[str] = None
    seed: int = Field(0, ge=0)
    precision: Optional[str] = None
    metric: Literal["pairwise_max", "euclidean_to_diagonal"] = "pairwise_max"

    @field_validator("precision")
    @classmethod
    def _check_precision(cls, v):
        if v is not None:
            Precision.parse(v)
        return v


class CGrid(_Strict):
    start: float
    stop: float
    step: float = Field(gt=0)

    def values(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + i * self.step, 12) for i in range(n)]


class RunOrbitConfig(_Base):
    experiment: Literal["run-orbit"] = "run-orbit"
    lattice: LatticeSpec
    s0: Optional[list[float]] = None
    steps: int = Field(10_000, ge=0)
    sample_every: int = Field(1, ge=1)
    dither: bool = False
    threshold: float = 0.05


class SweepConfig(_Base):
    experiment: Literal["sweep"] = "sweep"
    map: Literal["doubling2", "triple3", "neg_triple3", "tent2"]
    topology: Literal["two_node", "ring", "global"] = "two_node"
    n: int = 2
    c: Union[list[float], CGrid]
    starts: int = Field(10, ge=1)
    horizon: int = Field(100_000, ge=2)
    transient: int = Field(1000, ge=0)
    tail: int = Field(100, ge=1)
    eps_enter: float = 1e-3
    r0: float = 0.05
    sync_tol: float = 1e-12
    min_alternations: int = Field(5, ge=1)
    dither: bool = True


class EscapeConfig(_Base):
    experiment: Literal["escape-time"] = "escape-time"
    map: Literal["doubling2", "triple3", "neg_triple3", "tent2"] = "doubling2"
    c: Union[list[float], CGrid]
    inner: float = 1e-12
    outer: float = 1e-6
    trials: int = Field(200, ge=1)
    max_steps: int = Field(10_000_000, ge=1)
    dither: bool = True


class PolygonShape(_Strict):
    kind: Literal["polygon"]
    vertices: list[tuple[float, float]]


class BoxShape(_Strict):
    kind: Literal["box"]
    x: tuple[float, float]
    y: tuple[float, float]


class SegmentShape(_Strict):
    kind: Literal["segment"]
    p: tuple[float, float]
    q: tuple[float, float]


class GeometryConfig(_Base):
    experiment: Literal["geometry-trace"] = "geometry-trace"
    lattice: LatticeSpec
    shape: Annotated[Union[PolygonShape, BoxShape, SegmentShape], Field(discriminator="kind")]
    depth: int = Field(5, ge=0)
    cap: int = Field(1_000_000, ge=1)


class LemmaConfig(_Base):
    experiment: Literal["lemma-constants"] = "lemma-constants"
    slope: Union[float, list[float]] = 2.0
    c: Union[float, list[float]] = 0.0
    set_kind: Literal["measurable", "curve"] = "measurable"
    e_plus: Optional[float] = None
    e_minus: Optional[float] = None
    a: Union[int, list[int]] = 2
    m0: Union[int, list[int]] = 1
    delta1: Union[float, list[float]] = 0.25
    mu: Union[float, list[float]] = 1.5


class DensityConfig(_Base):
    experiment: Literal["density"] = "density"
    lattice: LatticeSpec
    s0: Optional[list[float]] = None
    steps: int = Field(1_000_000, ge=1)
    burn_in: int = Field(1000, ge=0)
    bins: int = Field(64, ge=1)
    compare_seed: Optional[int] = None
    dither: bool = False


class StabilityConfig(_Base):
    experiment: Literal["stability"] = "stability"
    topology: Literal["two_node", "ring", "global"] = "ring"
    n: list[int] = [6]
    slope: float = 2
    c: Union[list[float], CGrid]


CONFIGS = {
    "run-orbit": RunOrbitConfig,
    "sweep": SweepConfig,
    "escape-time": EscapeConfig,
    "geometry-trace": GeometryConfig,
    "lemma-constants": LemmaConfig,
    "density": DensityConfig,
    "stability": StabilityConfig,
}
DEFAULT_PRECISION = {"escape-time": "big:128"}


def _c_values(c) -> list[float]:
    return c.values() if isinstance(c, CGrid) else list(c)


def _random_start(seed: int, trial: int, n: int) -> list[float]:
    return [float(v) for v in trial_rng(seed, trial).random(n)]


# --------------------------------------------------------------------------
# Experiments


class Bundle:
    """Result of one experiment: rows for the CSV, metadata and a plot."""

    def __init__(self, rows: list[dict], meta: dict, plot: PlotSpec | None, *,
                 csv_text: str | None = None, extra: dict | None = None, plot_rows=None):
        self.rows = rows
        self.meta = meta
        self.plot = plot
        self.csv_text = csv_text
        self.extra = extra or {}
        self.plot_rows = plot_rows if plot_rows is not None else rows


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def run_orbit(cfg: RunOrbitConfig, precision: Precision) -> Bundle:
    lat = lattice_from_spec(cfg.lattice.model_dump())
    s0 = cfg.s0 if cfg.s0 is not None else _random_start(cfg.seed, 0, lat.n)
    rec = orbit(lat, s0, cfg.steps, cfg.sample_every, metric=cfg.metric,
                precision=precision, seed=cfg.seed, dither=cfg.dither)
    rows = [{"step": int(t), "dist": float(d)} for t, d in zip(rec.sample_steps, rec.distances)]
    meta = {"s0": list(map(float, s0)), "final_distance": float(rec.distances[-1])}
    plot = PlotSpec("step", ["dist"], title=f"distance to the diagonal, c = {lat.c}",
                    thresholds=[cfg.threshold], split_at=cfg.threshold)
    return Bundle(rows, meta, plot, csv_text=rec.to_csv())


def run_sweep(cfg: SweepConfig, precision: Precision) -> Bundle:
    if precision.extended:
        raise ConfigurationError("sweep runs in f64 (use dither for doubling-type maps)")
    rows = []
    for c in _c_values(cfg.c):
        lat = lattice_from_spec({"map": cfg.map, "topology": cfg.topology, "n": cfg.n, "c": c})
        verdicts, finals, cycles = [], [], []
        for trial in range(cfg.starts):
            params = RegimeParams(
                cfg.eps_enter, cfg.r0, cfg.sync_tol, cfg.transient, cfg.horizon,
                cfg.min_alternations, cfg.tail, cfg.dither, cfg.seed * 1_000_003 + trial,
            )
            res = classify_regime(lat, _random_start(cfg.seed, trial, lat.n), params, cfg.metric)
            verdicts.append(res.verdict)
            finals.append(res.final_distance)
            cycles.append(res.cycles)
        kinds = set(verdicts)
        rows.append({
            "c": c,
            "regime": verdicts[0] if len(kinds) == 1 else "Mixed",
            "n_synchronized": verdicts.count(SYNCHRONIZED),
            "n_intermittent": verdicts.count(INTERMITTENT),
            "n_undetermined": len(verdicts) - verdicts.count(SYNCHRONIZED) - verdicts.count(INTERMITTENT),
            "max_final_distance": max(finals),
            "min_cycles": min(cycles),
            "lambda_perp": lyapunov_analytic(lat.slope_magnitude, c)[1],
        })
    meta = {"critical_coupling": critical_coupling(
        lattice_from_spec({"map": cfg.map, "topology": cfg.topology, "n": cfg.n, "c": 0.0}).slope_magnitude
    )}
    plot_rows = [dict(r, max_final_distance=max(r["max_final_distance"], 1e-18)) for r in rows]
    plot = PlotSpec("c", ["max_final_distance"], kind="scatter", log_y=True,
                    title="final distance after the horizon", thresholds=[cfg.r0])
    return Bundle(rows, meta, plot, plot_rows=plot_rows)


def run_escape(cfg: EscapeConfig, precision: Precision) -> Bundle:
    rows = []
    crit = None
    stats = []
    for c in _c_values(cfg.c):
        lat = lattice_from_spec({"map": cfg.map, "topology": "two_node", "n": 2, "c": c})
        crit = critical_coupling(lat.slope_magnitude)
        s = escape_time(lat, cfg.inner, cfg.outer, cfg.trials, cfg.seed, precision=precision,
                        max_steps=cfg.max_steps, metric=cfg.metric, dither=cfg.dither)
        stats.append(s)
        rows.append(dict(s.row(), inverse_distance=1.0 / abs(c - crit)))
    meta = {"critical_coupling": crit}
    if len(stats) >= 2:
        meta["fit"] = inverse_distance_fit(stats, crit)
    plot = PlotSpec("inverse_distance", ["mean_steps"], kind="scatter", fit=len(stats) >= 2,
                    title="mean escape time against 1/|c - c*|")
    return Bundle(rows, meta, plot)


def _shape(spec) -> ConvexPolygon | Segment:
    try:
        if spec.kind == "segment":
            return Segment(spec.p, spec.q)
        if spec.kind == "box":
            return ConvexPolygon.box(spec.x[0], spec.x[1], spec.y[0], spec.y[1])
        return ConvexPolygon(tuple(spec.vertices))
    except UsageError as exc:
        raise ConfigurationError(str(exc)) from None


def run_geometry(cfg: GeometryConfig, precision: Precision) -> Bundle:
    lat = lattice_from_spec(cfg.lattice.model_dump())
    if lat.topology.kind != "two_node":
        raise ConfigurationError("geometry-trace needs the two_node topology")
    shape = _shape(cfg.shape)
    partial = False
    try:
        forest = iterate_components(shape, lat, cfg.depth, cap=cfg.cap)
    except RuntimeCapExceeded as exc:
        forest, partial = exc.partial, True
    rows = forest.summary_rows()
    meta = {
        "cell_numbering": "row-major from bottom-left: cell = row * m + col",
        "cells": {str(k): v for k, v in Partition2D(lat.map).labels().items()},
        "partial": partial,
    }
    if isinstance(shape, ConvexPolygon) and not partial:
        meta["relative_conservation_error"] = check_polygon_conservation(forest, lat)
    plot = PlotSpec("depth", ["count"], log_y=True, title="components per depth")
    bundle = Bundle(rows, meta, plot, extra={"forest.jsonl": forest.to_jsonl()})
    if partial:
        raise _PartialBundle(bundle)
    return bundle


class _PartialBundle(Exception):
    def __init__(self, bundle: Bundle):
        self.bundle = bundle


def _as_list(v) -> list:
    return list(v) if isinstance(v, list) else [v]


def run_lemma(cfg: LemmaConfig, precision: Precision) -> Bundle:
    grid = list(itertools.product(
        _as_list(cfg.slope), _as_list(cfg.c), _as_list(cfg.a), _as_list(cfg.m0),
        _as_list(cfg.delta1), _as_list(cfg.mu),
    ))
    batch = len(grid) > 1
    rows = []
    report = None
    for slope, c, a, m0, delta1, mu in grid:
        row = {"slope": slope, "c": c, "a": a, "m0": m0, "delta1": delta1, "mu": mu}
        try:
            if cfg.e_plus is not None or cfg.e_minus is not None:
                if cfg.e_plus is None or cfg.e_minus is None:
                    raise ConfigurationError("give both e_plus and e_minus")
                rates = ExpansionRates(cfg.e_plus, cfg.e_minus, cfg.set_kind)
            else:
                rates = expansion_rates(slope, c, cfg.set_kind)
            report = iterative_constants(rates, LemmaParams(a, m0, delta1, mu))
            rep = report.to_dict()
            row.update({k: rep[k] for k in (
                "e_plus", "e_minus", "d", "F", "N0", "N0_clamped", "mu_upper", "c1", "mu_limit_bound"
            )})
            row["error"] = ""
        except (FeasibilityError, UsageError) as exc:
            if not batch:
                raise ConfigurationError(str(exc)) from None
            row.update({k: math.nan for k in ("e_plus", "e_minus", "d", "F")})
            row.update({"N0": -1, "N0_clamped": False, "mu_upper": math.nan, "c1": math.nan,
                        "mu_limit_bound": math.nan, "error": str(exc)})
        rows.append(row)
    meta = {"batch": batch}
    if not batch:
        meta["report"] = report.to_dict()
    plot_rows = [dict(r, index=i) for i, r in enumerate(rows) if not r["error"]]
    plot = PlotSpec("index", ["d"], kind="scatter", title="d per parameter row")
    return Bundle(rows, meta, plot, plot_rows=plot_rows or [{"index": 0, "d": math.nan}])


def run_density(cfg: DensityConfig, precision: Precision) -> Bundle:
    lat = lattice_from_spec(cfg.lattice.model_dump())
    s0 = cfg.s0 if cfg.s0 is not None else _random_start(cfg.seed, 0, lat.n)
    h = empirical_density(lat, s0, cfg.steps, cfg.burn_in, cfg.bins,
                          precision=precision, seed=cfg.seed, dither=cfg.dither)
    meta = {"s0": list(map(float, s0)), "total": h.total}
    if cfg.compare_seed is not None:
        s1 = _random_start(cfg.compare_seed, 0, lat.n)
        h2 = empirical_density(lat, s1, cfg.steps, cfg.burn_in, cfg.bins,
                               precision=precision, seed=cfg.compare_seed, dither=cfg.dither)
        meta["compare_s0"] = s1
        meta["l1_distance"] = density_distance(h, h2)
    diag = h.diagonal_mass()
    rows = [{"cell": i, "diagonal_mass": float(v)} for i, v in enumerate(diag)]
    plot = PlotSpec("cell", ["diagonal_mass"], title="mass in diagonal cells")
    return Bundle(rows, meta, plot, csv_text=h.to_csv(), plot_rows=rows)


def run_stability(cfg: StabilityConfig, precision: Precision) -> Bundle:
    rows, wide = [], {}
    for n in cfg.n:
        topo = CouplingTopology(cfg.topology, n)
        for c in _c_values(cfg.c):
            rep = transverse_stability(topo, c, cfg.slope)
            rows.append({"topology": cfg.topology, "n": n, "c": c,
                         "max_transverse": rep.max_transverse, "sync_possible": rep.sync_possible})
            wide.setdefault(c, {"c": c})[f"n={n}"] = rep.max_transverse
    plot = PlotSpec("c", [f"n={n}" for n in cfg.n], thresholds=[1.0],
                    title="largest transverse multiplier")
    meta = {"sync_possible_anywhere": any(r["sync_possible"] for r in rows)}
    return Bundle(rows, meta, plot, plot_rows=[wide[c] for c in sorted(wide)])


RUNNERS = {
    "run-orbit": run_orbit,
    "sweep": run_sweep,
    "escape-time": run_escape,
    "geometry-trace": run_geometry,
    "lemma-constants": run_lemma,
    "density": run_density,
    "stability": run_stability,
}


# --------------------------------------------------------------------------
# Orchestration


def load_config(experiment: str, data: dict, *, seed: int | None = None,
                precision: str | None = None) -> BaseModel:
    """Validate a raw config, applying command line overrides."""
    if experiment not in CONFIGS:
        raise ConfigurationError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    data = dict(data)
    if data.setdefault("experiment", experiment) != experiment:
        raise ConfigurationError(f"config is for {data['experiment']!r}, not {experiment!r}")
    if seed is not None:
        data["seed"] = seed
    if precision is not None:
        data["precision"] = precision
    try:
        cfg = CONFIGS[experiment].model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from None
    updates = {}
    if cfg.name is None:
        updates["name"] = experiment.replace("-", "_")
    if cfg.precision is None:
        updates["precision"] = DEFAULT_PRECISION.get(experiment, "f64")
    return cfg.model_copy(update=updates)


def run(cfg: BaseModel) -> tuple[Bundle, bool]:
    """Execute a validated config; returns (bundle, partial)."""
    precision = Precision.parse(cfg.precision)
    try:
        bundle = RUNNERS[cfg.experiment](cfg, precision)
        partial = False
    except _PartialBundle as p:
        bundle, partial = p.bundle, True
    bundle.meta = {
        "config": cfg.model_dump(mode="json"),
        "toolkit_version": __version__,
        "metric": cfg.metric,
        "precision": str(precision),
        "partial": partial,
        "results": bundle.meta,
        "table": bundle.rows if len(bundle.rows) <= 200 else f"{len(bundle.rows)} rows in csv",
    }
    return bundle, partial


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def write_bundle(bundle: Bundle, name: str, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{name}.csv", out / f"{name}.json", out / f"{name}.svg"]
    paths[0].write_text(bundle.csv_text if bundle.csv_text is not None else _rows_to_csv(bundle.rows))
    paths[1].write_text(json.dumps(bundle.meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    svg = emit_svg(bundle.plot_rows, bundle.plot) if bundle.plot is not None else ""
    paths[2].write_text(svg)
    for suffix, text in bundle.extra.items():
        p = out / f"{name}.{suffix}"
        p.write_text(text)
        paths.append(p)
    return paths


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cml", description="Coupled map lattice experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, type=Path, help="JSON config file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--precision", default=None, help="f64 or big:<bits>")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        cfg = load_config(args.experiment, raw, seed=args.seed, precision=args.precision)
        bundle, partial = run(cfg)
    except RuntimeCapExceeded as exc:
        print(f"cml: runtime cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigurationError, UsageError, FeasibilityError) as exc:
        print(f"cml: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CMLError as exc:
        print(f"cml: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    paths = write_bundle(bundle, cfg.name, args.out)
    for path in paths:
        print(path)
    if partial:
        print("cml: runtime cap exceeded; partial results written", file=sys.stderr)
        return EXIT_CAP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
