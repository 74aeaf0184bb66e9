"""Exact verification of the drift identities of the gap process.

The drift of a state function ``h`` at state ``s`` is

    (1/m) * sum_k h(s + xi_k) - h(s),

with ``xi_1..xi_m`` the equally likely gap increments. ``h(A(n)) + g n`` is
a martingale exactly when the drift is ``-g`` everywhere.

Grid checks never use floating point. Polynomials are scaled by the common
denominator of their coefficients and evaluated in integer arithmetic
(int64 when a magnitude bound proves it cannot overflow, Python ints
otherwise), so a report with no failures is an exact statement about every
grid state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .errors import InvalidParameterError
from .process import step_distribution

Number = Union[int, Fraction]

DEFAULT_GRID = 30
DEFAULT_PHI_GRID = 40
_INT64_SAFE = 2**62


class StatePolynomial:
    """Polynomial with exact rational coefficients in ``nvars`` variables."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms=None):
        self.nvars = nvars
        self.terms: dict[tuple, Fraction] = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars or min(exps, default=0) < 0:
                raise InvalidParameterError(f"bad exponent vector {exps} for {nvars} variables")
            c = Fraction(c)
            if c:
                self.terms[exps] = self.terms.get(exps, Fraction(0)) + c
        self.terms = {e: c for e, c in self.terms.items() if c}

    @classmethod
    def constant(cls, c: Number, nvars: int) -> "StatePolynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, i: int, nvars: int) -> "StatePolynomial":
        """The 0-based coordinate ``i``."""
        exps = [0] * nvars
        exps[i] = 1
        return cls(nvars, {tuple(exps): 1})

    @classmethod
    def gens(cls, nvars: int) -> list["StatePolynomial"]:
        return [cls.variable(i, nvars) for i in range(nvars)]

    def _coerce(self, other) -> "StatePolynomial":
        if isinstance(other, StatePolynomial):
            if other.nvars != self.nvars:
                raise InvalidParameterError("variable counts differ")
            return other
        return StatePolynomial.constant(other, self.nvars)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return StatePolynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return StatePolynomial(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return StatePolynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = StatePolynomial.constant(1, self.nvars)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = StatePolynomial.constant(other, self.nvars)
        if not isinstance(other, StatePolynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for e, c in sorted(self.terms.items(), reverse=True):
            mono = "*".join(f"x{i + 1}^{k}" if k > 1 else f"x{i + 1}"
                            for i, k in enumerate(e) if k)
            parts.append(f"{c}*{mono}" if mono else str(c))
        return " + ".join(parts)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __call__(self, *point) -> Fraction:
        return self.evaluate(point[0] if len(point) == 1 and not isinstance(point[0], (int, Fraction)) else point)

    def evaluate(self, point: Sequence[Number]) -> Fraction:
        if len(point) != self.nvars:
            raise InvalidParameterError(f"expected {self.nvars} coordinates, got {len(point)}")
        total = Fraction(0)
        for e, c in self.terms.items():
            v = c
            for x, k in zip(point, e):
                if k:
                    v *= Fraction(x) ** k
            total += v
        return total

    def shift(self, delta: Sequence[int]) -> "StatePolynomial":
        """The polynomial ``x -> self(x + delta)``, expanded symbolically."""
        out = StatePolynomial(self.nvars)
        for e, c in self.terms.items():
            term = StatePolynomial.constant(c, self.nvars)
            for i, (k, d) in enumerate(zip(e, delta)):
                if k:
                    term = term * (StatePolynomial.variable(i, self.nvars) + d) ** k
            out = out + term
        return out

    def denominator(self) -> int:
        return math.lcm(*(c.denominator for c in self.terms.values())) if self.terms else 1

    def integer_terms(self, scale: int) -> list[tuple[tuple, int]]:
        out = []
        for e, c in self.terms.items():
            v = c * scale
            if v.denominator != 1:
                raise ValueError("scale does not clear denominators")
            out.append((e, int(v)))
        return out


def pair_product(i: int, nvars: int) -> StatePolynomial:
    """A_i * A_{i+1} for 1-based pair index ``i``."""
    return StatePolynomial.variable(i - 1, nvars) * StatePolynomial.variable(i, nvars)


def h_function(i: int, nvars: int) -> StatePolynomial:
    """H = A_i^2 A_{i+1}^2 + (2/3) A_i A_{i+1} (A_i^2 + A_{i+1}^2)."""
    a = StatePolynomial.variable(i - 1, nvars)
    b = StatePolynomial.variable(i, nvars)
    return a**2 * b**2 + Fraction(2, 3) * a * b * (a**2 + b**2)


def time_squared_martingale(i: int, m: int) -> StatePolynomial:
    """H - (4n/m) A_i A_{i+1} - (2/m^2) n^2 + (1/(3m) - 2/m^2) n.

    The last of the ``m`` variables is the time ``n``.
    """
    nv = m
    h = h_function(i, nv)
    n = StatePolynomial.variable(m - 1, nv)
    ab = pair_product(i, nv)
    return (h - Fraction(4, m) * n * ab - Fraction(2, m * m) * n**2
            + (Fraction(1, 3 * m) - Fraction(2, m * m)) * n)


def _steps(m: int, with_time: bool) -> list[tuple[int, ...]]:
    return [d.delta + ((1,) if with_time else ()) for d in step_distribution(m)]


def drift(h: Union[StatePolynomial, Callable], m: int, state: Sequence[int],
          time: Optional[int] = None) -> Fraction:
    """Exact one-step drift of ``h`` at ``state``.

    With ``time`` given, ``h`` takes the time as an extra last argument and
    the successor is evaluated at ``time + 1``.
    """
    state = tuple(int(x) for x in state)
    if len(state) != m - 1:
        raise InvalidParameterError(f"state must have {m - 1} gaps, got {len(state)}")
    if min(state) < 1:
        raise InvalidParameterError(f"drift needs all gaps >= 1, got {state}")
    f = h.evaluate if isinstance(h, StatePolynomial) else h
    point = state + ((time,) if time is not None else ())
    steps = _steps(m, time is not None)
    total = sum((Fraction(f(tuple(x + d for x, d in zip(point, step)))) for step in steps),
                Fraction(0))
    return total / m - Fraction(f(point))


def drift_polynomial(h: StatePolynomial, m: int, with_time: bool = False) -> StatePolynomial:
    """Symbolic drift of a polynomial (independent of any grid)."""
    acc = StatePolynomial(h.nvars)
    for step in _steps(m, with_time):
        acc = acc + h.shift(step)
    return acc * Fraction(1, m) - h


# --- grids ---------------------------------------------------------------

def _ranges(grid, d: int) -> list[tuple[int, int]]:
    if isinstance(grid, int):
        if grid < 1:
            raise InvalidParameterError(f"grid size must be >= 1, got {grid}")
        return [(1, grid)] * d
    ranges = [tuple(int(v) for v in r) for r in grid]
    if len(ranges) != d:
        raise InvalidParameterError(f"need {d} coordinate ranges, got {len(ranges)}")
    for lo, hi in ranges:
        if lo < 1 or hi < lo:
            raise InvalidParameterError(f"bad grid range {(lo, hi)}; coordinates must be >= 1")
    return ranges


def _grid_chunks(ranges: Sequence[tuple[int, int]]) -> Iterator[list[np.ndarray]]:
    """Flattened coordinate arrays, one chunk per value of the first axis."""
    axes = [np.arange(lo, hi + 1, dtype=np.int64) for lo, hi in ranges]
    for first in axes[0]:
        rest = np.meshgrid(*axes[1:], indexing="ij") if len(axes) > 1 else []
        size = int(np.prod([len(a) for a in axes[1:]])) if len(axes) > 1 else 1
        yield [np.full(size, first, dtype=np.int64)] + [r.ravel() for r in rest]


def _poly_bound(terms, maxabs: Sequence[int]) -> int:
    return sum(abs(c) * math.prod(x**k for x, k in zip(maxabs, e)) for e, c in terms)


def _eval_int(terms, coords: Sequence[np.ndarray], dtype) -> np.ndarray:
    n = len(coords[0])
    out = np.zeros(n, dtype=dtype)
    cache: dict = {}
    for e, c in terms:
        v = np.full(n, c, dtype=dtype)
        for i, k in enumerate(e):
            if k:
                key = (i, k)
                if key not in cache:
                    cache[key] = coords[i].astype(dtype) ** k
                v = v * cache[key]
        out = out + v
    return out


@dataclass
class DriftReport:
    suite: str
    m: Optional[int]
    grid_spec: list
    checked: int = 0
    failures: list = field(default_factory=list)
    max_slack_mismatch: Fraction = Fraction(0)
    cases: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def merge(self, other: "DriftReport") -> "DriftReport":
        self.checked += other.checked
        self.failures.extend(other.failures)
        self.max_slack_mismatch = max(self.max_slack_mismatch, other.max_slack_mismatch)
        for k, v in other.cases.items():
            self.cases[k] = self.cases.get(k, 0) + v
        return self

    def normalized(self) -> "DriftReport":
        self.failures.sort(key=lambda f: (str(f.get("identity", "")), tuple(f["state"]),
                                          f.get("n", -1)))
        return self

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "m": self.m,
            "grid": [list(r) for r in self.grid_spec],
            "states_checked": self.checked,
            "failures": [{k: (str(v) if isinstance(v, Fraction) else v) for k, v in f.items()}
                         for f in self.failures],
            "max_slack_mismatch": str(self.max_slack_mismatch),
            "cases": dict(self.cases),
        }


def check_drift_identity(h: StatePolynomial, expected: StatePolynomial, m: int, grid,
                         with_time: bool = False, n_max: int = 0, label: str = "",
                         max_failures: int = 100) -> DriftReport:
    """Assert drift(h) == expected at every grid state (and time 0..n_max).

    Works in integers: both sides are multiplied by ``m * L`` with ``L`` the
    common denominator of the coefficients of ``h`` and ``expected``.
    """
    d = m - 1
    ranges = _ranges(grid, d)
    if with_time:
        ranges = ranges + [(0, n_max)]
    scale = math.lcm(h.denominator(), expected.denominator())
    h_int = h.integer_terms(scale)
    e_int = expected.integer_terms(scale * m)
    steps = _steps(m, with_time)
    maxabs = [hi + 1 for _, hi in ranges]
    bound = (2 * m) * _poly_bound(h_int, maxabs) + _poly_bound(e_int, maxabs)
    dtype = np.int64 if bound < _INT64_SAFE else object
    report = DriftReport(label or "identity", m, ranges)
    denom = m * scale
    for coords in _grid_chunks(ranges):
        base = _eval_int(h_int, coords, dtype)
        acc = -m * base
        for step in steps:
            shifted = [c + s for c, s in zip(coords, step)]
            acc = acc + _eval_int(h_int, shifted, dtype)
        want = _eval_int(e_int, coords, dtype)
        report.checked += len(base)
        bad = np.nonzero(acc != want)[0]
        for j in bad:
            diff = Fraction(int(acc[j]) - int(want[j]), denom)
            report.max_slack_mismatch = max(report.max_slack_mismatch, abs(diff))
            if len(report.failures) < max_failures:
                point = [int(c[j]) for c in coords]
                rec = {"identity": label, "state": point[:d],
                       "expected": Fraction(int(want[j]), denom),
                       "actual": Fraction(int(acc[j]), denom)}
                if with_time:
                    rec["n"] = point[d]
                report.failures.append(rec)
    return report


def _check_pairs(m: int) -> None:
    if m < 3:
        raise InvalidParameterError(f"pair identities need m >= 3, got {m}")


def verify_pair_martingales(m: int, grid=DEFAULT_GRID) -> DriftReport:
    """drift(A_i A_{i+1}) = -1/m for every pair i."""
    _check_pairs(m)
    report = DriftReport("pairs", m, _ranges(grid, m - 1))
    for i in range(1, m - 1):
        r = check_drift_identity(pair_product(i, m - 1),
                                 StatePolynomial.constant(Fraction(-1, m), m - 1),
                                 m, grid, label=f"A{i}A{i + 1}")
        report.merge(r)
    return report.normalized()


def verify_min_supermartingale(m: int, grid=DEFAULT_GRID, max_failures: int = 100) -> DriftReport:
    """E[min_i A_i A_{i+1} after one step] <= min_i A_i A_{i+1} - 1/m.

    ``cases`` counts states where the inequality is an equality.
    """
    _check_pairs(m)
    d = m - 1
    ranges = _ranges(grid, d)
    steps = _steps(m, False)
    report = DriftReport("min", m, ranges)
    maxabs = max(hi for _, hi in ranges) + 1
    dtype = np.int64 if 2 * m * maxabs**2 < _INT64_SAFE else object
    equal = 0
    for coords in _grid_chunks(ranges):
        cur = np.min([coords[i].astype(dtype) * coords[i + 1] for i in range(d - 1)], axis=0)
        total = np.zeros(len(cur), dtype=dtype)
        for step in steps:
            nxt = [c + s for c, s in zip(coords, step)]
            total = total + np.min([nxt[i].astype(dtype) * nxt[i + 1] for i in range(d - 1)], axis=0)
        # m * E[min next] <= m * min now - 1
        slack = (m * cur - 1) - total
        report.checked += len(cur)
        equal += int(np.count_nonzero(slack == 0))
        for j in np.nonzero(slack < 0)[0]:
            report.max_slack_mismatch = max(report.max_slack_mismatch, Fraction(-int(slack[j]), m))
            if len(report.failures) < max_failures:
                report.failures.append({
                    "identity": "min", "state": [int(c[j]) for c in coords],
                    "expected": Fraction(int(m * cur[j] - 1), m),
                    "actual": Fraction(int(total[j]), m)})
    report.cases = {"equality": equal, "strict": report.checked - equal - len(report.failures)}
    return report.normalized()


def moment_identities(i: int, m: int) -> list[tuple[str, StatePolynomial, StatePolynomial]]:
    """(name, h, expected drift) for A^2B^2, A^3B and AB^3 of pair i."""
    nv = m - 1
    a = StatePolynomial.variable(i - 1, nv)
    b = StatePolynomial.variable(i, nv)
    inv = Fraction(1, m)
    return [
        (f"A{i}^2A{i + 1}^2", a**2 * b**2,
         inv * (2 * a**2 + 2 * b**2) + inv * (2 * a - 2 * b - 4 * a * b + 1)),
        (f"A{i}^3A{i + 1}", a**3 * b, inv * 6 * a * b + inv * (-3 * a**2 - 3 * a - 1)),
        (f"A{i}A{i + 1}^3", a * b**3, inv * 6 * a * b + inv * (-3 * b**2 + 3 * b - 1)),
    ]


def verify_moment_identities(m: int, grid=DEFAULT_GRID) -> DriftReport:
    _check_pairs(m)
    report = DriftReport("moments", m, _ranges(grid, m - 1))
    for i in range(1, m - 1):
        for name, h, want in moment_identities(i, m):
            report.merge(check_drift_identity(h, want, m, grid, label=name))
    return report.normalized()


def verify_H_drift(m: int, grid=DEFAULT_GRID) -> DriftReport:
    """drift(H_{i,i+1}) = (4/m) A_i A_{i+1} - 1/(3m)."""
    _check_pairs(m)
    report = DriftReport("H", m, _ranges(grid, m - 1))
    for i in range(1, m - 1):
        want = Fraction(4, m) * pair_product(i, m - 1) - Fraction(1, 3 * m)
        report.merge(check_drift_identity(h_function(i, m - 1), want, m, grid, label=f"H{i}{i + 1}"))
    return report.normalized()


def verify_time_squared_martingale(m: int, grid=DEFAULT_GRID, n_max: int = 10) -> DriftReport:
    """M_{i,i+1}(n) has zero drift at every grid state and every n <= n_max."""
    _check_pairs(m)
    if n_max < 1:
        raise InvalidParameterError(f"n_max must be >= 1, got {n_max}")
    report = DriftReport("time2", m, _ranges(grid, m - 1) + [(0, n_max)])
    zero = StatePolynomial(m)
    for i in range(1, m - 1):
        report.merge(check_drift_identity(time_squared_martingale(i, m), zero, m, grid,
                                          with_time=True, n_max=n_max, label=f"M{i}{i + 1}"))
    return report.normalized()


# --- the m = 4 phi supermartingale --------------------------------------

@dataclass(frozen=True)
class PhiValue:
    x: int
    y: int
    value: Fraction


def phi(x: int, y: int) -> PhiValue:
    """max(x, y) off the diagonal, 2x^2 / (2x - 1) on it."""
    if x < 1 or y < 1:
        raise InvalidParameterError(f"phi needs positive arguments, got ({x}, {y})")
    value = Fraction(max(x, y)) if x != y else Fraction(2 * x * x, 2 * x - 1)
    return PhiValue(x, y, value)


def _ratio(num: int, x: int, z: int) -> Fraction:
    # num / phi(x, z) with the zero-numerator convention: phi is never
    # evaluated when the prefactor vanishes.
    if num == 0:
        return Fraction(0)
    return num / phi(x, z).value


def phi_martingale_value(state: Sequence[int]) -> Fraction:
    """A B C / phi(A, C), defined as 0 when the product vanishes."""
    a, b, c = state
    return _ratio(a * b * c, a, c)


def phi_case(x: int, z: int) -> int:
    if x == z:
        return 1
    if x == z + 1:
        return 2
    if x == z - 1:
        return 3
    if x >= z + 2:
        return 4
    return 5


def phi_inequality_sides(x: int, y: int, z: int) -> tuple[Fraction, Fraction]:
    """Left and right side of the one-step inequality for ABC/phi(A, C)."""
    left = 4 * _ratio(x * y * z, x, z) - 1
    right = (_ratio((x - 1) * y * z, x - 1, z)
             + _ratio((x + 1) * (y - 1) * z, x + 1, z)
             + _ratio(x * (y + 1) * (z - 1), x, z - 1)
             + _ratio(x * y * (z + 1), x, z + 1))
    return left, right


def verify_phi_supermartingale(grid=DEFAULT_PHI_GRID, max_failures: int = 100) -> DriftReport:
    """Exact casework for the inequality on a grid of (x, y, z).

    Cases 1, 4, 5 must be equalities; in cases 2 and 3 the slack must be
    exactly y.
    """
    ranges = _ranges(grid, 3)
    report = DriftReport("phi", 4, ranges)
    counts = {f"case{c}": 0 for c in range(1, 6)}
    (x0, x1), (y0, y1), (z0, z1) = ranges
    for x, y, z in itertools.product(range(x0, x1 + 1), range(y0, y1 + 1), range(z0, z1 + 1)):
        case = phi_case(x, z)
        counts[f"case{case}"] += 1
        left, right = phi_inequality_sides(x, y, z)
        slack = left - right
        want = Fraction(y) if case in (2, 3) else Fraction(0)
        report.checked += 1
        if slack != want:
            report.max_slack_mismatch = max(report.max_slack_mismatch, abs(slack - want))
            if len(report.failures) < max_failures:
                report.failures.append({"identity": f"case{case}", "state": [x, y, z],
                                        "expected": want, "actual": slack})
    report.cases = counts
    return report.normalized()


SUITES = {
    "pairs": verify_pair_martingales,
    "min": verify_min_supermartingale,
    "moments": verify_moment_identities,
    "H": verify_H_drift,
    "time2": verify_time_squared_martingale,
}


def run_suite(suite: str, m: int, grid=DEFAULT_GRID, n_max: int = 10,
              phi_grid=None) -> list[DriftReport]:
    """Run one named suite, or every suite for ``suite == "all"``."""
    names = list(SUITES) + ["phi"] if suite == "all" else [suite]
    out = []
    for name in names:
        if name == "phi":
            out.append(verify_phi_supermartingale(phi_grid if phi_grid is not None else grid))
        elif name == "time2":
            out.append(verify_time_squared_martingale(m, grid, n_max))
        elif name in SUITES:
            out.append(SUITES[name](m, grid))
        else:
            raise InvalidParameterError(f"unknown suite {name!r}")
    return out
