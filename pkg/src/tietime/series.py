"""Truncated multivariate power series and the generalized convolutions.

Substituting ``x_k -> x_k / (1 +- x_k)`` in a power series acts on its
coefficient array as a convolution against the coefficients of
``1 / (1 +- x)^i``. This module implements that action (``apply_S``), the
residual of the functional equation a perfect time martingale generator
must satisfy in the variables ``u_i``, and exact elimination over the
coefficient systems those residuals induce.

All arithmetic is over ``Fraction``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import linalg
from .errors import InvalidParameterError, UnsupportedAnsatzError

Rational = Union[int, Fraction]
DEFAULT_DEGREE = 8


def _sign(sign) -> int:
    if sign in ("+", 1, +1):
        return 1
    if sign in ("-", "−", -1):
        return -1
    raise InvalidParameterError(f"sign must be '+' or '-', got {sign!r}")


@lru_cache(maxsize=None)
def _phi_int(s: int, i: int, k: int) -> int:
    if k == 0:
        return 1
    if i == 0:
        return 0
    # (1 + s x) rho_i = rho_{i-1}  =>  phi(i, k) = phi(i-1, k) - s phi(i, k-1)
    return _phi_int(s, i - 1, k) - s * _phi_int(s, i, k - 1)


def phi_coeff(sign, i: int, k: int) -> Fraction:
    """Coefficient of ``x^k`` in ``1 / (1 + x)^i`` (sign '+') or ``1 / (1 - x)^i``.

    >>> phi_coeff("-", 2, 3), phi_coeff("+", 2, 3)
    (Fraction(4, 1), Fraction(-4, 1))
    """
    if i < 0 or k < 0:
        raise InvalidParameterError(f"phi_coeff needs i, k >= 0, got ({i}, {k})")
    s = _sign(sign)
    # iterate up from small k so the recursion depth stays bounded
    for j in range(0, k, 256):
        _phi_int(s, i, j)
    return Fraction(_phi_int(s, i, k))


@dataclass(frozen=True)
class PhiTable:
    sign: str
    entries: tuple  # entries[i][k]

    @classmethod
    def build(cls, sign, max_i: int, max_k: int) -> "PhiTable":
        s = "+" if _sign(sign) > 0 else "-"
        return cls(s, tuple(tuple(phi_coeff(s, i, k) for k in range(max_k + 1))
                            for i in range(max_i + 1)))

    def __getitem__(self, ik):
        i, k = ik
        return self.entries[i][k]


def _monomials(k: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors of total degree <= degree, graded then lexicographic."""
    out = []
    for d in range(degree + 1):
        for c in itertools.combinations_with_replacement(range(k), d):
            e = [0] * k
            for j in c:
                e[j] += 1
            out.append(tuple(e))
    return sorted(set(out), key=lambda e: (sum(e), tuple(-x for x in e)))


class MultiSeries:
    """Power series in ``var_count`` variables truncated at total degree D."""

    __slots__ = ("var_count", "max_degree", "coeffs")

    def __init__(self, var_count: int, max_degree: int, coeffs: Optional[Mapping] = None):
        if var_count < 1:
            raise InvalidParameterError(f"need at least one variable, got {var_count}")
        if max_degree < 0:
            raise InvalidParameterError(f"degree must be >= 0, got {max_degree}")
        self.var_count = var_count
        self.max_degree = max_degree
        self.coeffs: dict[tuple, Fraction] = {}
        for e, c in (coeffs or {}).items():
            e = tuple(int(x) for x in e)
            if len(e) != var_count or min(e) < 0:
                raise InvalidParameterError(f"bad exponent vector {e}")
            c = Fraction(c)
            if c and sum(e) <= max_degree:
                c = self.coeffs.get(e, 0) + c
                if c:
                    self.coeffs[e] = c
                else:
                    self.coeffs.pop(e, None)

    # constructors
    @classmethod
    def zero(cls, k: int, degree: int) -> "MultiSeries":
        return cls(k, degree)

    @classmethod
    def constant(cls, k: int, degree: int, c: Rational = 1) -> "MultiSeries":
        return cls(k, degree, {(0,) * k: c})

    @classmethod
    def monomial(cls, k: int, degree: int, exps: Sequence[int], c: Rational = 1) -> "MultiSeries":
        return cls(k, degree, {tuple(exps): c})

    @classmethod
    def variable(cls, k: int, degree: int, slot: int) -> "MultiSeries":
        """The 1-based variable ``u_slot``."""
        e = [0] * k
        e[slot - 1] = 1
        return cls(k, degree, {tuple(e): 1})

    def with_degree(self, degree: int) -> "MultiSeries":
        """Same coefficients viewed at another truncation degree."""
        return MultiSeries(self.var_count, degree, self.coeffs)

    def truncate(self, degree: int) -> "MultiSeries":
        return self.with_degree(min(degree, self.max_degree))

    # arithmetic
    def _coerce(self, other) -> "MultiSeries":
        if isinstance(other, MultiSeries):
            if other.var_count != self.var_count:
                raise InvalidParameterError("variable counts differ")
            return other
        return MultiSeries.constant(self.var_count, self.max_degree, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = MultiSeries(self.var_count, min(self.max_degree, other.max_degree), self.coeffs)
        return MultiSeries(out.var_count, out.max_degree, _merge(out.coeffs, other.coeffs, 1))

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        other = self._coerce(other)
        return self + other.scale(-1)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, c: Rational) -> "MultiSeries":
        c = Fraction(c)
        return MultiSeries(self.var_count, self.max_degree,
                           {e: v * c for e, v in self.coeffs.items()})

    def __mul__(self, other):
        if not isinstance(other, MultiSeries):
            return self.scale(other)
        other = self._coerce(other)
        degree = min(self.max_degree, other.max_degree)
        out: dict = {}
        for e1, c1 in self.coeffs.items():
            d1 = sum(e1)
            for e2, c2 in other.coeffs.items():
                if d1 + sum(e2) > degree:
                    continue
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return MultiSeries(self.var_count, degree, out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, MultiSeries):
            return NotImplemented
        return (self.var_count == other.var_count and self.max_degree == other.max_degree
                and self.coeffs == other.coeffs)

    def __repr__(self):
        return f"MultiSeries(k={self.var_count}, D={self.max_degree}, {self.coeffs})"

    def coeff(self, exps: Sequence[int]) -> Fraction:
        return self.coeffs.get(tuple(exps), Fraction(0))

    def is_zero(self) -> bool:
        return not self.coeffs

    def is_monomial(self) -> bool:
        return len(self.coeffs) == 1

    # serialization
    def to_json(self) -> list[dict]:
        return [{"exponents": list(e), "coeff": _fmt(c)} for e, c in sorted(self.coeffs.items())]

    @classmethod
    def from_json(cls, data, degree: Optional[int] = None) -> "MultiSeries":
        if not isinstance(data, list) or not data:
            raise InvalidParameterError("series JSON must be a non-empty array of terms")
        try:
            k = len(data[0]["exponents"])
            terms = {}
            for t in data:
                e = tuple(int(x) for x in t["exponents"])
                terms[e] = terms.get(e, 0) + Fraction(str(t["coeff"]))
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise InvalidParameterError(f"malformed series term: {exc}") from exc
        if degree is None:
            degree = max(sum(e) for e in terms)
        return cls(k, degree, terms)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path, degree: Optional[int] = None) -> "MultiSeries":
        return cls.from_json(json.loads(Path(path).read_text()), degree)


def _merge(a: Mapping, b: Mapping, s) -> dict:
    out = dict(a)
    for e, c in b.items():
        v = out.get(e, 0) + s * c
        if v:
            out[e] = v
        else:
            out.pop(e, None)
    return out


def _fmt(q: Fraction) -> str:
    q = Fraction(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def apply_S(sign, k: int, series: MultiSeries) -> MultiSeries:
    """Coefficients of ``f`` with ``u_k`` replaced by ``u_k / (1 +- u_k)``.

    beta(theta) = sum_{i <= theta_k} alpha(theta with slot k set to i)
    * phi(i, theta_k - i), so each output coefficient only involves input
    coefficients of no larger degree and truncation is exact.
    """
    if not 1 <= k <= series.var_count:
        raise InvalidParameterError(f"slot must be in 1..{series.var_count}, got {k}")
    s = _sign(sign)
    slot = k - 1
    D = series.max_degree
    out: dict = {}
    for e, c in series.coeffs.items():
        i = e[slot]
        room = D - sum(e)
        for ell in range(room + 1):
            w = _phi_int(s, i, ell) if ell < 256 else int(phi_coeff(s, i, ell))
            if not w:
                continue
            t = list(e)
            t[slot] = i + ell
            t = tuple(t)
            out[t] = out.get(t, 0) + c * w
    return MultiSeries(series.var_count, D, out)


def check_commutativity(sign1, sign2, k1: int, k2: int, series: MultiSeries) -> bool:
    """Whether S_{k1} S_{k2} f == S_{k2} S_{k1} f through the truncation degree."""
    if k1 == k2:
        raise InvalidParameterError("commutativity check needs two different slots")
    left = apply_S(sign1, k1, apply_S(sign2, k2, series))
    right = apply_S(sign2, k2, apply_S(sign1, k1, series))
    return left == right


def _poly(k: int, degree: int, terms: Mapping) -> MultiSeries:
    return MultiSeries(k, degree, terms)


def _one_plus(k: int, degree: int, slot: int, s: int) -> MultiSeries:
    """1 + s u_slot (1-based slot)."""
    e = [0] * k
    e[slot - 1] = 1
    return _poly(k, degree, {(0,) * k: 1, tuple(e): s})


def perfect_operator(f: MultiSeries) -> MultiSeries:
    """(1/(k+1)) [(1-u_1) S_1^- f + sum (1+u_i)(1-u_{i+1}) S_i^+ S_{i+1}^- f + (1+u_k) S_k^+ f]."""
    k, D = f.var_count, f.max_degree
    acc = _one_plus(k, D, 1, -1) * apply_S("-", 1, f)
    for i in range(1, k):
        pref = _one_plus(k, D, i, 1) * _one_plus(k, D, i + 1, -1)
        acc = acc + pref * apply_S("+", i, apply_S("-", i + 1, f))
    acc = acc + _one_plus(k, D, k, 1) * apply_S("+", k, f)
    return acc.scale(Fraction(1, k + 1))


def residual_perfect(f: MultiSeries, gamma: Rational, k: Optional[int] = None,
                     D: Optional[int] = None) -> MultiSeries:
    """f - gamma u_1...u_k - perfect_operator(f) for polynomial f of degree <= D.

    Coefficients of f above D are dropped and the residual is computed and
    returned through the working degree D + 2, the most the (1 +- u)
    prefactors can add. On a degree-d monomial the degree-d part of the
    operator cancels, so residual coefficients of degree d + 1 already
    depend only on coefficients of f up to degree d.
    """
    if k is not None and k != f.var_count:
        raise InvalidParameterError(f"series has {f.var_count} variables, expected {k}")
    k = f.var_count
    D = f.max_degree if D is None else D
    f = f.truncate(D).with_degree(D + 2)
    top = MultiSeries.monomial(k, D + 2, (1,) * k, gamma)
    return f - top - perfect_operator(f)


@dataclass
class LinearFamilyResult:
    status: str  # "solved" | "inconsistent"
    k: int
    degree: int
    normalization: Fraction
    solution: Optional[tuple] = None  # (MultiSeries f, Fraction gamma)
    certificate: Optional[list] = None  # [(equation label, weight)]
    residual_norm: float = 0.0
    nullspace: list = field(default_factory=list)  # [(MultiSeries, Fraction)]
    equations: int = 0
    unknowns: int = 0

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "k": self.k,
            "degree": self.degree,
            "normalization": _fmt(self.normalization),
            "equations": self.equations,
            "unknowns": self.unknowns,
            "residual_norm": self.residual_norm,
        }
        if self.solution is not None:
            f, g = self.solution
            out["solution"] = {"f": f.to_json(), "gamma": _fmt(g)}
            out["nullspace"] = [{"f": b.to_json(), "gamma": _fmt(c)} for b, c in self.nullspace]
        if self.certificate is not None:
            out["certificate"] = [{"equation": lab, "weight": _fmt(w)} for lab, w in self.certificate]
        return out


def _label(e: tuple, names: str = "u") -> str:
    if not any(e):
        return "1"
    return "*".join(f"{names}{i + 1}^{x}" if x > 1 else f"{names}{i + 1}"
                    for i, x in enumerate(e) if x)


def _solve_family(columns: list[MultiSeries], gamma_column: MultiSeries, k: int,
                  unknown_monomials: list[tuple], eq_degree: int, c: Fraction,
                  label_names: str = "u") -> tuple:
    """Exact solve of sum_j x_j columns[j] + gamma * gamma_column == 0.

    With ``c != 0`` the unknown of the constant monomial is pinned to c.
    Returns (LinearSolution, rows, rhs, labels, column count).
    """
    n = len(unknown_monomials)
    eq_monos = _monomials(k, eq_degree)
    index = {e: r for r, e in enumerate(eq_monos)}
    rows = [dict() for _ in eq_monos]
    for j, col in enumerate(columns + [gamma_column]):
        for e, v in col.coeffs.items():
            r = index.get(e)
            if r is not None:
                rows[r][j] = v
    rhs = [Fraction(0)] * len(rows)
    labels = [f"coeff[{_label(e, label_names)}]" for e in eq_monos]
    if c != 0:
        rows.append({unknown_monomials.index((0,) * k): Fraction(1)})
        rhs.append(c)
        labels.append("normalization")
    return linalg.solve(rows, rhs, n + 1), rows, rhs, labels, n + 1


def _least_squares(rows: list[dict], rhs: list, ncols: int) -> float:
    a = np.zeros((len(rows), ncols))
    for r, row in enumerate(rows):
        for j, v in row.items():
            a[r, j] = float(v)
    b = np.array([float(v) for v in rhs])
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return float(np.sum((a @ x - b) ** 2))


def _family_result(sol, rows, rhs, labels, ncols, monos, k, D, c,
                   build) -> LinearFamilyResult:
    res = LinearFamilyResult("solved" if sol.consistent else "inconsistent", k, D, c,
                             residual_norm=_least_squares(rows, rhs, ncols),
                             equations=len(rows), unknowns=ncols)
    n = len(monos)
    if sol.consistent:
        res.solution = build(sol.solution[:n], sol.solution[n])
        res.nullspace = [build(v[:n], v[n]) for v in sol.nullspace()]
    else:
        weights = sorted(sol.certificate.items())
        total = linalg.check_certificate(rows, rhs, dict(weights))
        if total == 0:
            raise AssertionError("inconsistency certificate does not certify")
        res.certificate = [(labels[r], w) for r, w in weights]
    return res


def solve_linear_family(k: int, D: int, normalization: Rational = 1,
                        equation_degree: Optional[int] = None) -> LinearFamilyResult:
    """Find polynomial f (degree <= D) and gamma with zero residual.

    Every coefficient of f and gamma is an unknown; each residual coefficient
    through ``equation_degree`` (default D + 2) is one linear equation. With
    ``equation_degree = D + 1`` the equations involve no coefficient above
    D, so an inconsistency there rules out every power series f. A nonzero ``normalization`` pins
    f(0) to that value; zero drops the constraint. When solvable, the
    returned solution sets free unknowns to 0 and ``nullspace`` spans the
    homogeneous solutions.
    """
    if k < 1 or D < 1:
        raise InvalidParameterError(f"need k >= 1 and D >= 1, got k={k}, D={D}")
    c = Fraction(normalization)
    monos = _monomials(k, D)
    columns = [residual_perfect(MultiSeries.monomial(k, D, e), 0) for e in monos]
    gamma_col = MultiSeries.monomial(k, D + 2, (1,) * k, -1)
    sol, rows, rhs, labels, ncols = _solve_family(columns, gamma_col, k, monos,
                                                  equation_degree or D + 2, c)

    def build(xs, g):
        return MultiSeries(k, D, dict(zip(monos, xs))), Fraction(g)

    return _family_result(sol, rows, rhs, labels, ncols, monos, k, D, c, build)


def solution_space_contains(k: int, D: int, f: MultiSeries, gamma: Rational) -> bool:
    """Membership of (f, gamma) in the (normalization-free) solution space."""
    return residual_perfect(f, gamma, D=D).is_zero()


# --- the Gamma form (m = 4, F = G / (x + z)) ----------------------------

def _uvw(D: int) -> tuple[MultiSeries, MultiSeries, MultiSeries]:
    return (MultiSeries.variable(3, D, 1), MultiSeries.variable(3, D, 2),
            MultiSeries.variable(3, D, 3))


def _gamma_operator(G: MultiSeries) -> MultiSeries:
    """Gamma + Gamma_0 + ... + Gamma_3 (the gamma-free part), at G's degree."""
    D = G.max_degree
    u, v, w = _uvw(D)
    one = MultiSeries.constant(3, D, 1)
    s = u + w
    plus = s + u * w
    minus = s - u * w
    g_total = (plus * minus * G).scale(-4)
    g0 = s * plus * (one - u) * apply_S("-", 1, G)
    g1 = s * minus * (one + u) * (one - v) * apply_S("+", 1, apply_S("-", 2, G))
    g2 = s * plus * (one + v) * (one - w) * apply_S("+", 2, apply_S("-", 3, G))
    g3 = s * minus * (one + w) * apply_S("+", 3, G)
    return g_total + g0 + g1 + g2 + g3


def _gamma_term(D: int) -> MultiSeries:
    u, v, w = _uvw(D)
    s = u + w
    return (v * s * (s + u * w) * (s - u * w)).scale(4)


def residual_gamma_form(G: MultiSeries, gamma: Rational, D: Optional[int] = None) -> MultiSeries:
    """Left side of the Gamma equation for polynomial G of degree <= D.

    G is treated as a polynomial (coefficients above D dropped) and the
    residual is computed through degree D + 4, the largest degree reached
    by the polynomial prefactors.
    """
    if G.var_count != 3:
        raise InvalidParameterError(f"the Gamma form needs 3 variables, got {G.var_count}")
    D = G.max_degree if D is None else D
    G = G.truncate(D).with_degree(D + 4)
    return _gamma_operator(G) + _gamma_term(D + 4).scale(gamma)


def solve_gamma_family(D: int, normalization: Rational = 1) -> LinearFamilyResult:
    """Polynomial G of degree <= D and gamma solving the Gamma equation.

    Equations are the residual coefficients through degree D + 4. A nonzero
    normalization pins G(0, 0, 0); without it G = 0, gamma = 0 is a trivial
    solution.
    """
    if D < 0:
        raise InvalidParameterError(f"degree must be >= 0, got {D}")
    c = Fraction(normalization)
    W = D + 4
    monos = _monomials(3, D)
    columns = [_gamma_operator(MultiSeries.monomial(3, W, e)) for e in monos]
    gamma_col = _gamma_term(W)
    sol, rows, rhs, labels, ncols = _solve_family(columns, gamma_col, 3, monos, W, c,
                                                  label_names="w")

    def build(xs, g):
        return MultiSeries(3, D, dict(zip(monos, xs))), Fraction(g)

    return _family_result(sol, rows, rhs, labels, ncols, monos, 3, D, c, build)


# --- link to the drift oracle -------------------------------------------

def generator_from_monomial(f: MultiSeries):
    """H = x_1...x_k f(1/x) for a monomial f = c u^theta, as a StatePolynomial."""
    from .martingale import StatePolynomial

    if not f.is_monomial():
        raise UnsupportedAnsatzError("cross-check needs a single-term series")
    (theta, c), = f.coeffs.items()
    if max(theta) > 1:
        raise UnsupportedAnsatzError(
            f"u^{list(theta)} gives negative exponents in H; only exponents 0/1 are supported")
    k = f.var_count
    return StatePolynomial(k, {tuple(1 - t for t in theta): c})


def crosscheck_with_drift(f: MultiSeries, gamma: Rational, k: int,
                          test_states: Iterable[Sequence[int]], D: Optional[int] = None) -> bool:
    """Whether the series verdict and the drift oracle agree for monomial f.

    The series side asks if residual_perfect(f, gamma) vanishes; the drift
    side asks if H = x_1...x_k f(1/x) has drift exactly -gamma at every test
    state of the (k+1)-team process.
    """
    from .martingale import drift

    if f.var_count != k:
        raise InvalidParameterError(f"series has {f.var_count} variables, expected {k}")
    h = generator_from_monomial(f)
    series_ok = residual_perfect(f, gamma, D=D).is_zero()
    states = [tuple(s) for s in test_states]
    if not states:
        raise InvalidParameterError("need at least one test state")
    drift_ok = all(drift(h, k + 1, s) == -Fraction(gamma) for s in states)
    return series_ok == drift_ok


def random_series(rng: np.random.Generator, k: int, D: int, density: float = 0.5,
                  max_num: int = 9, max_den: int = 5) -> MultiSeries:
    """Random rational series for property checks."""
    terms = {}
    for e in _monomials(k, D):
        if rng.random() < density:
            terms[e] = Fraction(int(rng.integers(-max_num, max_num + 1)),
                                int(rng.integers(1, max_den + 1)))
    return MultiSeries(k, D, terms)
