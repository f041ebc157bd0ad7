"""Piecewise linear expanding interval maps on [0, 1].

Four constant-slope maps are provided:

    doubling2     2x mod 1           [0,1/2) [1/2,1]
    triple3       3x mod 1           [0,1/3) [1/3,2/3) [2/3,1]
    neg_triple3   -3x mod 1          [0,1/3] (1/3,2/3] (2/3,1]
    tent2         2x / 2 - 2x        [0,1/2) [1/2,1]

Branch endpoints are stored as exact rationals so that membership at a
breakpoint follows the declared interval convention for floats and for
extended-precision ``mpmath.mpf`` values alike.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DomainError

MAP_KINDS = ("doubling2", "triple3", "neg_triple3", "tent2")

# Rounding slack accepted before clamping an image back into [0, 1].
_CLAMP_ULPS = 4


def _exact(x):
    """Return a value that compares exactly against ``Fraction`` bounds."""
    if isinstance(x, (float, int, Fraction)):
        return x
    if isinstance(x, np.floating):
        return float(x)
    # mpmath.mpf: man * 2**exp is exact
    man, exp = int(x.man), int(x.exp)
    return Fraction(man * 2**exp) if exp >= 0 else Fraction(man, 2 ** (-exp))


@dataclass(frozen=True)
class Branch:
    lo: Fraction
    hi: Fraction
    lo_closed: bool
    hi_closed: bool
    slope: int
    intercept: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"empty branch interval [{self.lo}, {self.hi}]")
        if abs(self.slope) <= 1:
            raise ConfigurationError(f"branch slope {self.slope} is not expanding")
        for end in (self.lo, self.hi):
            y = self.slope * end + self.intercept
            if y < 0 or y > 1:
                raise ConfigurationError(f"branch maps {end} to {y}, outside [0, 1]")

    def contains(self, x) -> bool:
        v = _exact(x)
        above = v > self.lo or (self.lo_closed and v == self.lo)
        below = v < self.hi or (self.hi_closed and v == self.hi)
        return above and below

    def __call__(self, x):
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class PiecewiseLinearMap:
    name: str
    branches: tuple[Branch, ...]

    def __post_init__(self):
        if not self.branches:
            raise ConfigurationError("a map needs at least one branch")
        if self.branches[0].lo != 0 or self.branches[-1].hi != 1:
            raise ConfigurationError("branches must cover [0, 1]")
        for left, right in zip(self.branches, self.branches[1:]):
            if left.hi != right.lo:
                raise ConfigurationError("branches must be contiguous")
            if not (left.hi_closed or right.lo_closed):
                raise ConfigurationError(f"breakpoint {left.hi} belongs to no branch")
        if not (self.branches[0].lo_closed and self.branches[-1].hi_closed):
            raise ConfigurationError("0 and 1 must belong to a branch")
        mags = {abs(b.slope) for b in self.branches}
        if len(mags) != 1:
            raise ConfigurationError("only constant |slope| maps are supported")

    @property
    def slope_magnitude(self) -> int:
        return abs(self.branches[0].slope)

    @property
    def cuts(self) -> tuple[Fraction, ...]:
        """Interior breakpoints in increasing order."""
        return tuple(b.hi for b in self.branches[:-1])

    def branch_index(self, x) -> int:
        return branch_index(self, x)

    def __call__(self, x):
        return evaluate(self, x)

    def arrays(self) -> dict[str, np.ndarray]:
        """Branch table as flat float arrays, for compiled kernels.

        Bounds that are not representable in binary64 (1/3, 2/3) are replaced
        by the nearest float on the inside of the interval and marked closed,
        so float comparisons agree exactly with ``Branch.contains``.
        """
        lo, hi, loc, hic = [], [], [], []
        for b in self.branches:
            l, lc = _float_bound(b.lo, b.lo_closed, inward=math.inf)
            h, hc = _float_bound(b.hi, b.hi_closed, inward=-math.inf)
            lo.append(l)
            hi.append(h)
            loc.append(lc)
            hic.append(hc)
        return {
            "lo": np.array(lo),
            "hi": np.array(hi),
            "lo_closed": np.array(loc),
            "hi_closed": np.array(hic),
            "slope": np.array([float(b.slope) for b in self.branches]),
            "intercept": np.array([float(b.intercept) for b in self.branches]),
        }


def _float_bound(bound: Fraction, closed: bool, inward: float) -> tuple[float, bool]:
    f = float(bound)
    if Fraction(f) == bound:
        return f, closed
    if (Fraction(f) < bound) == (inward > 0):
        f = math.nextafter(f, inward)
    return f, True


def _b(lo, hi, lo_closed, hi_closed, slope, intercept) -> Branch:
    return Branch(Fraction(lo), Fraction(hi), lo_closed, hi_closed, slope, intercept)


def make_standard_map(kind: str) -> PiecewiseLinearMap:
    """Build one of the standard maps by name (see module docstring)."""
    half, third, two_thirds = Fraction(1, 2), Fraction(1, 3), Fraction(2, 3)
    if kind == "doubling2":
        branches = (_b(0, half, True, False, 2, 0), _b(half, 1, True, True, 2, -1))
    elif kind == "triple3":
        branches = (
            _b(0, third, True, False, 3, 0),
            _b(third, two_thirds, True, False, 3, -1),
            _b(two_thirds, 1, True, True, 3, -2),
        )
    elif kind == "neg_triple3":
        branches = (
            _b(0, third, True, True, -3, 1),
            _b(third, two_thirds, False, True, -3, 2),
            _b(two_thirds, 1, False, True, -3, 3),
        )
    elif kind == "tent2":
        branches = (_b(0, half, True, False, 2, 0), _b(half, 1, True, True, -2, 2))
    else:
        raise ConfigurationError(f"unknown map kind {kind!r}; expected one of {MAP_KINDS}")
    return PiecewiseLinearMap(kind, branches)


def _check_domain(x) -> None:
    if not (0 <= x <= 1):
        raise DomainError(f"x = {x} is outside [0, 1]")


def branch_index(fmap: PiecewiseLinearMap, x) -> int:
    """Index of the first branch whose interval contains ``x``."""
    _check_domain(x)
    for i, br in enumerate(fmap.branches):
        if br.contains(x):
            return i
    raise ConsistencyError(f"no branch of {fmap.name} contains {x}")


def evaluate(fmap: PiecewiseLinearMap, x):
    """f(x) with the result clamped into [0, 1] after a small rounding check."""
    br = fmap.branches[branch_index(fmap, x)]
    y = br(x)
    if 0 <= y <= 1:
        return y
    if isinstance(y, float):
        slack = _CLAMP_ULPS * math.ulp(1.0)
    else:
        slack = _CLAMP_ULPS * 2.0 ** (1 - y.context.prec)
    if -slack <= y < 0:
        return 0 * y
    if 1 < y <= 1 + slack:
        return 0 * y + 1
    raise ConsistencyError(f"{fmap.name}({x}) = {y} left [0, 1]")


def derivative(fmap: PiecewiseLinearMap, x) -> int:
    """Slope of the branch containing ``x`` (breakpoints follow branch_index)."""
    return fmap.branches[branch_index(fmap, x)].slope


def evaluate_array(fmap: PiecewiseLinearMap, x: np.ndarray) -> np.ndarray:
    """Vectorised ``evaluate`` for float64 arrays."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("array contains points outside [0, 1]")
    idx = branch_index_array(fmap, x)
    tab = fmap.arrays()
    return np.clip(tab["slope"][idx] * x + tab["intercept"][idx], 0.0, 1.0)


def branch_index_array(fmap: PiecewiseLinearMap, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    tab = fmap.arrays()
    idx = np.full(x.shape, -1, dtype=np.int64)
    for i in range(len(fmap.branches)):
        lo, hi = tab["lo"][i], tab["hi"][i]
        inside = ((x > lo) | ((x == lo) & tab["lo_closed"][i])) & (
            (x < hi) | ((x == hi) & tab["hi_closed"][i])
        )
        idx = np.where((idx < 0) & inside, i, idx)
    return idx
