"""Coupling matrices, the lattice map x -> (I + cA) f(x), orbits and spectra."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from . import _kernels
from .errors import ConfigurationError, ConsistencyError, DomainError
from .maps import PiecewiseLinearMap, branch_index, evaluate, make_standard_map
from .precision import F64, Precision, random_unit

TOPOLOGIES = ("two_node", "ring", "global")
CLAMP_TOL = _kernels.CLAMP_TOL


@dataclass(frozen=True)
class CouplingTopology:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.kind!r}; expected one of {TOPOLOGIES}")
        if self.kind == "two_node" and self.n != 2:
            raise ConfigurationError("two_node topology has exactly n = 2")
        if self.kind == "ring" and self.n < 3:
            # the printed ring row (-2, 1, ..., 1) double-counts the neighbour at n = 2
            raise ConfigurationError("ring topology needs n >= 3; use two_node for n = 2")
        if self.kind == "global" and self.n < 2:
            raise ConfigurationError("global topology needs n >= 2")

    @classmethod
    def two_node(cls) -> CouplingTopology:
        return cls("two_node", 2)

    def neighbors(self) -> np.ndarray:
        """(n, degree) neighbour index table; every topology here is regular."""
        n = self.n
        if self.kind == "two_node":
            return np.array([[1], [0]], dtype=np.int64)
        if self.kind == "ring":
            return np.array([[(i - 1) % n, (i + 1) % n] for i in range(n)], dtype=np.int64)
        return np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=np.int64)

    def coupling_matrix(self) -> np.ndarray:
        """The matrix A (symmetric, A e = 0)."""
        n = self.n
        a = np.zeros((n, n))
        for i, row in enumerate(self.neighbors()):
            for j in row:
                a[i, j] += 1.0
            a[i, i] -= len(row)
        return a

    def admissible_range(self) -> tuple[float, float]:
        if self.kind == "two_node":
            return 0.0, 1.0
        if self.kind == "ring":
            return 0.0, 0.5
        return 0.0, 1.0 / (self.n - 1)


@dataclass(frozen=True, eq=False)
class Lattice:
    topology: CouplingTopology
    c: float
    map: PiecewiseLinearMap
    mix: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def slope_magnitude(self) -> int:
        return self.map.slope_magnitude

    def spec(self) -> dict:
        """JSON lattice description {map, topology, n, c}."""
        return {"map": self.map.name, "topology": self.topology.kind, "n": self.n, "c": self.c}

    def kernel_args(self) -> tuple:
        tab = self.map.arrays()
        return (
            float(self.c),
            self.topology.neighbors(),
            tab["lo"],
            tab["hi"],
            tab["lo_closed"],
            tab["hi_closed"],
            tab["slope"],
            tab["intercept"],
        )


def build_lattice(topology: CouplingTopology, c: float, fmap: PiecewiseLinearMap) -> Lattice:
    """Assemble mix = I + cA for the given topology; inadmissible c is an error."""
    lo, hi = topology.admissible_range()
    if not (lo <= c <= hi) or math.isnan(c):
        raise ConfigurationError(
            f"coupling c = {c} outside the admissible range [{lo}, {hi}] for {topology.kind}"
        )
    if topology.kind == "two_node":
        mix = np.array([[1.0 - c, c], [c, 1.0 - c]])
    else:
        mix = np.eye(topology.n) + c * topology.coupling_matrix()
    mix.setflags(write=False)
    return Lattice(topology, float(c), fmap, mix)


def lattice_from_spec(spec: dict) -> Lattice:
    """Build from the JSON form {map, topology, n, c}."""
    try:
        kind = spec["topology"]
        n = int(spec.get("n", 2))
        topo = CouplingTopology(kind, n)
        return build_lattice(topo, float(spec["c"]), make_standard_map(spec["map"]))
    except KeyError as exc:
        raise ConfigurationError(f"lattice spec missing field {exc}") from None


def two_node(kind: str, c: float) -> Lattice:
    return build_lattice(CouplingTopology.two_node(), c, make_standard_map(kind))


def _check_state(lat: Lattice, s) -> None:
    if len(s) != lat.n:
        raise DomainError(f"state has {len(s)} coordinates, lattice has {lat.n}")
    for x in s:
        if not (0 <= x <= 1):
            raise DomainError(f"state coordinate {x} outside [0, 1]")


def _clamp(v):
    if v < 0:
        if v < -CLAMP_TOL:
            raise ConsistencyError(f"coordinate {v} escaped [0, 1]")
        return 0 * v
    if v > 1:
        if v > 1 + CLAMP_TOL:
            raise ConsistencyError(f"coordinate {v} escaped [0, 1]")
        return 0 * v + 1
    return v


def step(lat: Lattice, s: Sequence) -> list:
    """One application of T. Works for floats and for mpmath numbers.

    Computed as f_i + c * sum_j (f_j - f_i) over neighbours so that the
    diagonal is preserved exactly.
    """
    _check_state(lat, s)
    f = [evaluate(lat.map, x) for x in s]
    c = lat.c if isinstance(f[0], float) else mpmath.mpf(lat.c)
    out = []
    for i, row in enumerate(lat.topology.neighbors()):
        acc = 0 * f[i]
        for j in row:
            acc += f[j] - f[i]
        out.append(_clamp(f[i] + c * acc))
    return out


def dither_common(x: list, rng: np.random.Generator, bits: int) -> list:
    """Shift every coordinate by one shared random offset of about 2**-bits.

    Keeps the synchronous component of a finite-mantissa orbit generic
    (see ``_kernels``); differences between coordinates are unchanged up to
    rounding.
    """
    if isinstance(x[0], float):
        eta = (rng.random() - 0.5) * 2.0 ** (1 - bits)
    else:
        eta = (random_unit(rng, 64) - mpmath.mpf(0.5)) * mpmath.ldexp(1, 1 - bits)
    return [min(max(v + eta, 0 * v), 0 * v + 1) for v in x]


def dither_seed(seed: int | None, dither: bool) -> int:
    """Kernel argument: -1 disables dithering."""
    return ((seed or 0) & 0x7FFFFFFF) if dither else -1


def step_array(lat: Lattice, s: np.ndarray) -> np.ndarray:
    """Binary64 ``step`` through the compiled kernel."""
    x = np.asarray(s, dtype=float)
    _check_state(lat, x)
    y = np.empty_like(x)
    err = _kernels._step(
        x, y, np.empty_like(x), np.empty(x.size, dtype=np.int64), *lat.kernel_args()
    )
    if err:
        raise ConsistencyError("iterate escaped [0, 1]")
    return y


@dataclass
class TrajectoryRecord:
    states: np.ndarray
    distances: np.ndarray
    itinerary: np.ndarray | None
    steps: int
    sample_every: int
    seed: int | None = None
    metric: str = "pairwise_max"
    precision: str = "f64"

    @property
    def sample_steps(self) -> np.ndarray:
        return np.arange(len(self.distances)) * self.sample_every

    def to_csv(self) -> str:
        """Rows (step, x_1..x_n, dist)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.states.shape[1]
        w.writerow(["step", *[f"x_{i + 1}" for i in range(n)], "dist"])
        for t, row, d in zip(self.sample_steps, self.states, self.distances):
            w.writerow([int(t), *[repr(float(v)) for v in row], repr(float(d))])
        return buf.getvalue()


def _warn_degenerate(lat: Lattice, precision: Precision) -> None:
    if lat.c == 0 and lat.map.name == "doubling2" and not precision.extended:
        warnings.warn(
            "uncoupled doubling map in binary64 collapses to 0 after ~53 steps; "
            "use extended precision",
            RuntimeWarning,
            stacklevel=3,
        )


def orbit(
    lat: Lattice,
    s0: Sequence[float],
    steps: int,
    sample_every: int = 1,
    *,
    metric: str = "pairwise_max",
    precision: str | Precision = F64,
    seed: int | None = None,
    dither: bool = False,
) -> TrajectoryRecord:
    """Iterate ``steps`` times from ``s0`` and record every ``sample_every``-th state.

    With ``dither`` a seeded common offset of one ulp is added along the
    diagonal after each step, so that doubling-type orbits do not exhaust
    their mantissa (see ``dither_common``).
    """
    from .diagnostics import diagonal_distance, metric_code

    if steps < 0 or sample_every < 1:
        raise ConfigurationError("steps must be >= 0 and sample_every >= 1")
    precision = Precision.parse(precision)
    _check_state(lat, s0)
    _warn_degenerate(lat, precision)
    if not precision.extended:
        x0 = np.asarray(s0, dtype=float)
        states, dists, cells, err = _kernels.orbit_kernel(
            x0, steps, sample_every, *lat.kernel_args(), metric_code(metric),
            dither_seed(seed, dither),
        )
        if err:
            raise ConsistencyError(f"iterate escaped [0, 1] at step {err}")
        return TrajectoryRecord(states, dists, cells, steps, sample_every, seed, metric, str(precision))

    with precision.context():
        x = [mpmath.mpf(v) for v in s0]
        states, dists, cells = [], [], []

        def record(x):
            states.append([float(v) for v in x])
            dists.append(float(diagonal_distance(x, metric)))
            cells.append([branch_index(lat.map, v) for v in x])

        record(x)
        rng = np.random.Generator(np.random.Philox(key=(seed or 0) & (2**64 - 1)))
        for t in range(1, steps + 1):
            x = step(lat, x)
            if dither:
                x = dither_common(x, rng, precision.bits)
            if t % sample_every == 0:
                record(x)
    return TrajectoryRecord(
        np.array(states), np.array(dists), np.array(cells, dtype=np.int64),
        steps, sample_every, seed, metric, str(precision),
    )


def jacobian_at(lat: Lattice, s: Sequence[float]) -> tuple[np.ndarray, bool]:
    """Jacobian mix @ diag(f'(x_i)) and a flag set when a coordinate sits on a breakpoint."""
    _check_state(lat, s)
    cuts = set(lat.map.cuts)
    on_cut = any(x in cuts for x in s)
    slopes = np.array([lat.map.branches[branch_index(lat.map, x)].slope for x in s], dtype=float)
    return lat.mix * slopes[None, :], on_cut


def coupling_eigenvalues(topology: CouplingTopology, c: float, slope_magnitude: float) -> list[float]:
    """Spectrum of slope * (I + cA) from the closed forms; index 0 is along e."""
    k, n = slope_magnitude, topology.n
    if topology.kind == "two_node":
        return [k, k * (1 - 2 * c)]
    if topology.kind == "ring":
        return [k * (1 - 2 * c + 2 * c * math.cos(2 * j * math.pi / n)) for j in range(n)]
    return [k] + [k * (1 - n * c)] * (n - 1)


@dataclass(frozen=True)
class StabilityReport:
    max_transverse: float
    sync_possible: bool
    eigenvalues: tuple[float, ...]


def transverse_stability(topology: CouplingTopology, c: float, slope_magnitude: float) -> StabilityReport:
    lo, hi = topology.admissible_range()
    if not (lo <= c <= hi):
        raise ConfigurationError(f"coupling c = {c} outside [{lo}, {hi}] for {topology.kind}")
    eig = coupling_eigenvalues(topology, c, slope_magnitude)
    worst = max(abs(v) for v in eig[1:])
    return StabilityReport(worst, worst < 1, tuple(eig))
