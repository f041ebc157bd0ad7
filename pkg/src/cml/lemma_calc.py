"""Closed-form constants: expansion rates, iterative-lemma parameters,
critical couplings and the tent-lattice threshold."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import FeasibilityError, UsageError

SET_KINDS = ("measurable", "curve")


def _log(x: float, base: float) -> float:
    return math.log(x) / math.log(base)


@dataclass(frozen=True)
class ExpansionRates:
    e_plus: float
    e_minus: float
    set_kind: str


def expansion_rates(slope_magnitude: float, c: float, set_kind: str = "measurable") -> ExpansionRates:
    """Per-step growth bounds of area (measurable) or length (curve) on one cell."""
    if set_kind not in SET_KINDS:
        raise UsageError(f"set_kind must be one of {SET_KINDS}")
    if slope_magnitude <= 1:
        raise UsageError("slope magnitude must exceed 1")
    k = slope_magnitude
    if set_kind == "measurable":
        e = k * k * abs(1 - 2 * c)
        return ExpansionRates(e, e, set_kind)
    return ExpansionRates(k, k * abs(1 - 2 * c), set_kind)


@dataclass(frozen=True)
class LemmaParams:
    a: int
    m0: int
    delta1: float
    mu: float

    def __post_init__(self):
        if self.a < 1 or self.m0 < 1:
            raise UsageError("a and m0 must be positive integers")
        if not (0 < self.delta1 < 1):
            raise UsageError("delta1 must lie in (0, 1)")
        if not self.mu > 1:
            raise UsageError("mu must exceed 1")


@dataclass
class LemmaReport:
    e_plus: float
    e_minus: float
    a: int
    m0: int
    delta1: float
    mu: float
    log_term: float
    d: float
    F: float
    N0: int
    N0_raw: float
    N0_clamped: bool
    mu_upper: float
    c1: float | None = None
    mu_limit_bound: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _log_term(rates: ExpansionRates, a: int, m0: int) -> float:
    """log_{E+}(E- / a^(1/m0))."""
    if rates.e_plus <= 1:
        raise FeasibilityError(f"E+ = {rates.e_plus} must exceed 1")
    if not a < rates.e_minus**m0:
        raise FeasibilityError(f"need a < E-^m0: a = {a}, E-^m0 = {rates.e_minus**m0}")
    return _log(rates.e_minus / a ** (1 / m0), rates.e_plus)


def mu_upper_bound(rates: ExpansionRates, a: int, m0: int) -> float:
    """(1 - log_{E+}(E- / a^(1/m0)))^-1; +inf when the log term reaches 1."""
    t = _log_term(rates, a, m0)
    den = 1 - t
    return math.inf if den <= 0 else 1 / den


def iterative_constants(rates: ExpansionRates, p: LemmaParams, *, with_product: bool = True) -> LemmaReport:
    """d, F, N0 and the admissible mu range for the iterative lemma."""
    t = _log_term(rates, p.a, p.m0)
    upper = mu_upper_bound(rates, p.a, p.m0)
    if not p.mu < upper:
        raise FeasibilityError(f"need mu < {upper}: got mu = {p.mu}")
    d = 1 - (1 - t) * p.mu
    if d <= 0:
        raise FeasibilityError(f"d = {d} <= 0; mu too large for the bound {upper}")
    base = rates.e_minus / p.a ** (1 / p.m0)
    F = p.a * base ** (1 - _log(p.delta1, rates.e_plus))
    if F <= 1:
        raise FeasibilityError(f"F = {F} <= 1; log2 F is not positive")
    raw = _log(math.log2(F) / d, p.mu)
    n0 = math.floor(raw)
    clamped = n0 < 0
    report = LemmaReport(
        rates.e_plus, rates.e_minus, p.a, p.m0, p.delta1, p.mu, t, d, F,
        max(n0, 0), raw, clamped, upper,
    )
    report.mu_limit_bound = t / F
    if with_product:
        report.c1 = tail_product(d, F, p.mu, max(n0, 0))
    return report


def tail_product(d: float, F: float, mu: float, n0: int, *, tol: float = 1e-16,
                      max_terms: int = 10_000_000) -> float:
    """prod_{j > n0} (1 - F 2^(-d mu^j)), evaluated until the factor is 1 to ``tol``."""
    # last index needed: F 2^(-d mu^j) < tol
    need = math.log((math.log2(F) - math.log2(tol)) / d) / math.log(mu)
    if need - n0 > max_terms:
        raise UsageError(f"product needs about {need - n0:.3g} terms; mu is too close to 1")
    prod = 1.0
    for j in range(n0 + 1, n0 + 3 + max(0, math.ceil(need))):
        term = F * 2.0 ** (-d * mu**j)
        factor = 1 - term
        if factor <= 0:
            raise FeasibilityError(f"product factor at j = {j} is {factor} <= 0")
        prod *= factor
        if term < tol:
            return prod
    raise UsageError("product did not converge")


def k_of_N(measure_ratio: float, rates: ExpansionRates, delta1: float) -> int:
    """floor(-log_{E+}(ratio / delta1)) for ratio = M(Omega)/M(D) <= delta1."""
    if not (0 < measure_ratio <= 1):
        raise UsageError("measure ratio must lie in (0, 1]")
    if measure_ratio > delta1:
        raise UsageError(f"measure ratio {measure_ratio} exceeds delta1 = {delta1}")
    v = -_log(measure_ratio / delta1, rates.e_plus)
    # ratio == delta1 gives -0.0; tiny negative rounding is also zero
    return max(0, math.floor(v + 1e-12))


def critical_coupling(slope_magnitude: float) -> float:
    """The c in [0, 1/2) with |k (1 - 2c)| = 1."""
    if slope_magnitude <= 1:
        raise UsageError("slope magnitude must exceed 1")
    return (1 - 1 / slope_magnitude) / 2


def tent_lattice_threshold(n: int) -> float:
    """1/2 - (2^n - 1)^(1/n) / 4."""
    if n < 2:
        raise UsageError("n must be >= 2")
    return 0.5 - (2.0**n - 1) ** (1 / n) / 4
