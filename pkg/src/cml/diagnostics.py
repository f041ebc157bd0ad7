"""Synchronization diagnostics: distance to the diagonal, regime verdicts,
Lyapunov exponents, escape times and occupation densities."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from . import _kernels
from .errors import ConfigurationError, ConsistencyError, UsageError
from .lattice import Lattice, _check_state, _warn_degenerate, dither_common, dither_seed, step
from .maps import derivative
from .precision import F64, Precision, random_unit

METRICS = ("pairwise_max", "euclidean_to_diagonal")

SYNCHRONIZED = "Synchronized"
INTERMITTENT = "Intermittent"
UNDETERMINED = "Undetermined"


def metric_code(metric: str) -> int:
    if metric == "pairwise_max":
        return _kernels.METRIC_PAIRWISE_MAX
    if metric == "euclidean_to_diagonal":
        return _kernels.METRIC_EUCLIDEAN
    raise ConfigurationError(f"unknown metric {metric!r}; expected one of {METRICS}")


def diagonal_distance(s: Sequence, metric: str = "pairwise_max"):
    """Distance of a state to the diagonal x_1 = ... = x_n.

    ``pairwise_max`` is max_i x_i - min_i x_i (|x_1 - x_2| for two nodes);
    ``euclidean_to_diagonal`` is the Euclidean distance to the diagonal line.
    """
    metric_code(metric)
    if metric == "pairwise_max":
        return max(s) - min(s)
    mean = sum(s) / len(s)
    total = sum((x - mean) ** 2 for x in s)
    return mpmath.sqrt(total) if isinstance(total, mpmath.mpf) else math.sqrt(total)


# --------------------------------------------------------------------------
# Lyapunov exponents


def lyapunov_analytic(slope_magnitude: float, c: float) -> tuple[float, float]:
    """(ln k, ln |k (1 - 2c)|); the transverse value is -inf at c = 1/2."""
    par = math.log(slope_magnitude)
    g = abs(slope_magnitude * (1 - 2 * c))
    return par, (math.log(g) if g > 0 else -math.inf)


def lyapunov_empirical(lat: Lattice, s0: Sequence[float], steps: int) -> tuple[float, float]:
    """Time averages of ln|f'| and ln|(1-2c) f'| along the orbit of x_1.

    For constant-slope maps every summand is the same number, so the result
    must agree with :func:`lyapunov_analytic`; a mismatch raises.
    """
    if lat.topology.kind != "two_node":
        raise UsageError("lyapunov_empirical is defined for the two-node lattice")
    if steps < 1000:
        raise UsageError("use at least 10^3 steps")
    _check_state(lat, s0)
    shrink = abs(1 - 2 * lat.c)
    par_terms, perp_terms = [], []
    x = np.asarray(s0, dtype=float)
    from .lattice import step_array

    for _ in range(steps):
        slope = abs(derivative(lat.map, float(x[0])))
        par_terms.append(math.log(slope))
        perp_terms.append(math.log(shrink * slope) if shrink > 0 else -math.inf)
        x = step_array(lat, x)
    par = math.fsum(par_terms) / steps
    perp = math.fsum(perp_terms) / steps if shrink > 0 else -math.inf
    a_par, a_perp = lyapunov_analytic(lat.slope_magnitude, lat.c)
    if abs(par - a_par) > 1e-12 or (math.isfinite(perp) and abs(perp - a_perp) > 1e-12):
        raise ConsistencyError(f"empirical exponents ({par}, {perp}) disagree with ({a_par}, {a_perp})")
    return par, perp


# --------------------------------------------------------------------------
# Regime classification


@dataclass(frozen=True)
class RegimeParams:
    eps_enter: float = 1e-3
    r0: float = 0.05
    sync_tol: float = 1e-12
    transient: int = 1000
    horizon: int = 1_000_000
    min_alternations: int = 5
    tail: int = 100
    dither: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.eps_enter < self.r0 < 1):
            raise ConfigurationError("need 0 < eps_enter < r0 < 1")
        if not (0 < self.sync_tol < self.eps_enter):
            raise ConfigurationError("need 0 < sync_tol < eps_enter")
        if not (0 <= self.transient < self.horizon):
            raise ConfigurationError("transient must be shorter than the horizon")
        if self.tail < 1 or self.tail > self.horizon or self.min_alternations < 1:
            raise ConfigurationError("tail and min_alternations must be positive")


@dataclass
class RegimeResult:
    verdict: str
    cycles: int
    entries: int
    min_distance: float
    max_distance: float
    tail_max_distance: float
    final_distance: float
    transverse_multiplier: float
    metric: str
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def classify_regime(
    lat: Lattice,
    s0: Sequence[float],
    params: RegimeParams = RegimeParams(),
    metric: str = "pairwise_max",
) -> RegimeResult:
    """Label an orbit Synchronized, Intermittent or Undetermined.

    Synchronized: distance below ``sync_tol`` over the last ``tail`` steps of
    the horizon, and the analytic gate |k(1-2c)| < 1 agrees. Intermittent:
    at least ``min_alternations`` completed cycles (enter the eps_enter tube,
    later reach distance >= r0) after the transient.
    """
    _check_state(lat, s0)
    _warn_degenerate(lat, F64)
    x0 = np.asarray(s0, dtype=float)
    cycles, entries, min_d, max_d, tail_max, final_d, err = _kernels.regime_kernel(
        x0, params.horizon, params.transient, params.tail, *lat.kernel_args(),
        metric_code(metric), params.eps_enter, params.r0, dither_seed(params.seed, params.dither),
    )
    if err:
        raise ConsistencyError(f"iterate escaped [0, 1] at step {err}")
    g = lat.slope_magnitude * (1 - 2 * lat.c)
    if lat.topology.kind != "two_node":
        from .lattice import transverse_stability

        g = transverse_stability(lat.topology, lat.c, lat.slope_magnitude).max_transverse
    gate_sync = abs(g) < 1
    note = ""
    if tail_max < params.sync_tol:
        if gate_sync:
            verdict = SYNCHRONIZED
        else:
            verdict = UNDETERMINED
            note = "collapsed onto the diagonal although the diagonal is transversely unstable"
    elif cycles >= params.min_alternations:
        verdict = INTERMITTENT
    else:
        verdict = UNDETERMINED
        note = "neither criterion met within the horizon"
    return RegimeResult(
        verdict, int(cycles), int(entries), float(min_d), float(max_d), float(tail_max),
        float(final_d), float(abs(g)), metric, note,
    )


# --------------------------------------------------------------------------
# Escape times


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream for one trial; independent of execution order."""
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), trial]))


@dataclass
class EscapeStats:
    c: float
    trials: int
    mean_steps: float
    stddev: float
    theoretical: float
    excluded: int = 0
    inner: float = 1e-12
    outer: float = 1e-6
    precision: str = "big:128"
    steps: list[int] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {
            "c": self.c,
            "mean_steps": self.mean_steps,
            "stddev": self.stddev,
            "theoretical": self.theoretical,
            "trials": self.trials,
            "excluded": self.excluded,
        }


def escape_theory(slope_magnitude: float, c: float, inner: float, outer: float) -> float:
    """ln(outer / inner) / lambda_perp."""
    _, perp = lyapunov_analytic(slope_magnitude, c)
    if perp <= 0:
        return math.inf
    return math.log(outer / inner) / perp


def _escape_one(lat, u, delta, outer, max_steps, metric, rng, bits):
    x = [u, u + delta]
    for t in range(1, max_steps + 1):
        x = step(lat, x)
        if rng is not None:
            x = dither_common(x, rng, bits)
        if diagonal_distance(x, metric) > outer:
            return t
    return -1


def escape_time(
    lat: Lattice,
    inner: float = 1e-12,
    outer: float = 1e-6,
    trials: int = 200,
    seed: int = 0,
    *,
    precision: str | Precision = "big:128",
    max_steps: int = 10_000_000,
    metric: str = "pairwise_max",
    dither: bool = True,
) -> EscapeStats:
    """Mean number of steps from (u, u + delta), |delta| = inner, to distance > outer."""
    if lat.topology.kind != "two_node":
        raise UsageError("escape_time is defined for the two-node lattice")
    if not (0 < inner < outer < 0.5):
        raise UsageError("need 0 < inner < outer << 1")
    g = abs(lat.slope_magnitude * (1 - 2 * lat.c))
    if g <= 1:
        raise UsageError(f"|k(1-2c)| = {g} <= 1: the diagonal attracts, nothing escapes")
    precision = Precision.parse(precision)
    n_ok, mean, m2, excluded, counts = 0, 0.0, 0.0, 0, []
    for trial in range(trials):
        rng = trial_rng(seed, trial)
        sign = 1 if rng.integers(0, 2) else -1
        if precision.extended:
            with precision.context():
                u = mpmath.mpf(inner) + random_unit(rng, precision.bits) * (1 - 2 * mpmath.mpf(inner))
                t = _escape_one(
                    lat, u, sign * mpmath.mpf(inner), outer, max_steps, metric,
                    rng if dither else None, precision.bits,
                )
        else:
            u = inner + rng.random() * (1 - 2 * inner)
            x0 = np.array([u, u + sign * inner])
            t = int(_kernels.escape_kernel(
                x0, outer, max_steps, *lat.kernel_args(), metric_code(metric),
                dither_seed(int(rng.integers(0, 2**31)), dither),
            ))
        if t < 0:
            excluded += 1
            continue
        counts.append(t)
        n_ok += 1
        d = t - mean
        mean += d / n_ok
        m2 += d * (t - mean)
    std = math.sqrt(m2 / (n_ok - 1)) if n_ok > 1 else 0.0
    return EscapeStats(
        lat.c, n_ok, mean, std, escape_theory(lat.slope_magnitude, lat.c, inner, outer),
        excluded, inner, outer, str(precision), counts,
    )


def inverse_distance_fit(stats: Sequence[EscapeStats], critical: float) -> dict:
    """Least squares mean_steps ~ a + b / |c - critical|; returns a, b and R^2."""
    x = np.array([1.0 / abs(s.c - critical) for s in stats])
    y = np.array([s.mean_steps for s in stats])
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"intercept": float(a), "slope": float(b), "r2": r2}


# --------------------------------------------------------------------------
# Occupation densities


@dataclass
class DensityHistogram:
    bins_per_axis: int
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise ConsistencyError("histogram counts do not sum to total")

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.total if self.total else np.zeros_like(self.counts, dtype=float)

    def diagonal_mass(self) -> np.ndarray:
        """Counts of the cells (i, i) crossed by the diagonal."""
        return np.diag(self.counts).copy()

    def to_csv(self) -> str:
        """Dense grid, row j is the x_2 bin, column i the x_1 bin."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.counts:
            w.writerow([int(v) for v in row])
        return buf.getvalue()


def _digits(x: float, base: int, count: int) -> list[int]:
    out = []
    v = mpmath.mpf(x)
    for _ in range(count):
        v *= base
        d = int(mpmath.floor(v))
        out.append(min(d, base - 1))
        v -= d
    return out


def _shift_orbit(x0: float, base: int, length: int, rng: np.random.Generator, chunk: int) -> np.ndarray:
    """Exact orbit of x -> base * x mod 1 from a generic point near ``x0``.

    The point's base-``base`` expansion starts with the digits of ``x0`` and
    continues with iid uniform digits; the n-th iterate is the digit string
    read from position n, truncated to binary64.
    """
    width = int(math.ceil(53 / math.log2(base))) + 1
    lead = _digits(x0, base, width)
    tail = rng.integers(0, base, size=length + width, dtype=np.int8)
    digits = np.concatenate([np.array(lead, dtype=np.int8), tail])
    out = np.empty(length)
    weights = float(base) ** -np.arange(1, width + 1)
    for start in range(0, length, chunk):
        stop = min(start + chunk, length)
        acc = np.zeros(stop - start)
        for k in range(width):
            acc += digits[start + k : stop + k] * weights[k]
        out[start:stop] = acc
    return np.minimum(out, np.nextafter(1.0, 0.0))


def empirical_density(
    lat: Lattice,
    s0: Sequence[float],
    steps: int,
    burn_in: int = 1000,
    bins: int = 64,
    *,
    precision: str | Precision = F64,
    seed: int = 0,
    dither: bool = False,
) -> DensityHistogram:
    """Normalised occupation histogram of (x_1, x_2) along one orbit.

    In extended precision an uncoupled lattice of 2x or 3x mod 1 is iterated
    exactly on its digit expansion (``seed`` draws the digits beyond those of
    ``s0``); coupled lattices fall back to mpmath arithmetic.
    """
    if lat.topology.kind != "two_node":
        raise UsageError("empirical_density is defined for the two-node lattice")
    if bins < 1 or steps < 1 or burn_in < 0:
        raise UsageError("bins and steps must be positive")
    _check_state(lat, s0)
    precision = Precision.parse(precision)
    if not precision.extended:
        _warn_degenerate(lat, precision)
        counts, err = _kernels.density_kernel(
            np.asarray(s0, dtype=float), steps, burn_in, bins, *lat.kernel_args(),
            dither_seed(seed, dither),
        )
        if err:
            raise ConsistencyError(f"iterate escaped [0, 1] at step {err}")
        return DensityHistogram(bins, counts, int(counts.sum()))

    shift_base = {"doubling2": 2, "triple3": 3}.get(lat.map.name)
    if lat.c == 0 and shift_base is not None:
        rng = np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))
        with mpmath.workprec(precision.bits):
            xs = [_shift_orbit(float(v), shift_base, steps + burn_in + 1, rng, 1 << 20) for v in s0]
        i = np.minimum((xs[0][burn_in + 1 :] * bins).astype(np.int64), bins - 1)
        j = np.minimum((xs[1][burn_in + 1 :] * bins).astype(np.int64), bins - 1)
        counts = np.bincount(j * bins + i, minlength=bins * bins).reshape(bins, bins)
        return DensityHistogram(bins, counts, int(counts.sum()))

    counts = np.zeros((bins, bins), dtype=np.int64)
    with precision.context():
        x = [mpmath.mpf(v) for v in s0]
        rng = np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))
        for t in range(1, burn_in + steps + 1):
            x = step(lat, x)
            if dither:
                x = dither_common(x, rng, precision.bits)
            if t > burn_in:
                i = min(int(x[0] * bins), bins - 1)
                j = min(int(x[1] * bins), bins - 1)
                counts[j, i] += 1
    return DensityHistogram(bins, counts, int(counts.sum()))


def density_distance(h1: DensityHistogram, h2: DensityHistogram) -> float:
    """L1 distance between normalised histograms, in [0, 2]."""
    if h1.bins_per_axis != h2.bins_per_axis or h1.counts.shape != h2.counts.shape:
        raise UsageError("histograms are on different grids")
    return float(np.abs(h1.normalized - h2.normalized).sum())
