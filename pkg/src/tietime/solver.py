"""Expected tie times on a bounded lattice of gap vectors.

Interior states are the gap vectors in [1..R]^{m-1}. A successor with a zero
coordinate is absorbing (value 0); a successor with a coordinate R + 1 is
exterior and receives its value from the boundary policy:

``zero``
    0, which under-estimates tau (the recurrence is monotone in its data).
``upper_bound``
    m * min_i a_i a_{i+1}, an upper bound on tau for m >= 3, so the solve
    over-estimates.
``closed_form``
    3ab, the exact value for m = 3.
custom
    a callable on the state tuple or a mapping from state tuples to values.

Float solves use lexicographic Gauss-Seidel sweeps, or for m <= 3 a sparse
direct factorization followed by Gauss-Seidel polishing; ``method="exact"`` solves the rational
system exactly by marching the recurrence along the last coordinate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels, linalg
from .errors import ConvergenceError, InvalidParameterError
from .process import step_distribution

DEFAULT_TOL = 1e-10
EXACT_MAX_INTERIOR = 20_000
EXACT_MAX_LAYER = 256
DEFAULT_MAX_SWEEPS = 200_000
BUILTIN_POLICIES = ("zero", "upper_bound", "closed_form")

Policy = Union[str, Callable, Mapping]


def closed_form_m3(a: int, b: int) -> int:
    """tau(a, b) = 3ab for three teams.

    >>> closed_form_m3(2, 3)
    18
    """
    a, b = int(a), int(b)
    if a < 0 or b < 0:
        raise InvalidParameterError(f"gaps must be >= 0, got ({a}, {b})")
    return 3 * a * b


def upper_bound_value(gaps: Sequence[int]) -> int:
    """m * min_i a_i a_{i+1}."""
    m = len(gaps) + 1
    if m < 3:
        raise InvalidParameterError("the product upper bound needs m >= 3")
    return m * min(gaps[i] * gaps[i + 1] for i in range(m - 2))


class SolverGrid:
    """Interior lattice [1..radius]^{m-1} with successor classification."""

    def __init__(self, m: int, radius: int, boundary_policy: Policy = "zero"):
        if m < 2:
            raise InvalidParameterError(f"team count m must be >= 2, got {m}")
        if radius < 1:
            raise InvalidParameterError(f"radius must be >= 1, got {radius}")
        if isinstance(boundary_policy, str):
            if boundary_policy not in BUILTIN_POLICIES:
                raise InvalidParameterError(
                    f"unknown boundary policy {boundary_policy!r}; choose from {BUILTIN_POLICIES}")
            if boundary_policy == "upper_bound" and m < 3:
                raise InvalidParameterError("the upper_bound policy needs m >= 3")
            if boundary_policy == "closed_form" and m != 3:
                raise InvalidParameterError("the closed_form policy is only known for m = 3")
        elif not (callable(boundary_policy) or isinstance(boundary_policy, Mapping)):
            raise InvalidParameterError("boundary policy must be a name, callable or mapping")
        self.m = m
        self.radius = radius
        self.policy = boundary_policy
        self.dim = m - 1
        self.shape = (radius,) * self.dim
        self.size = radius**self.dim
        self._built = False

    @property
    def policy_name(self) -> str:
        return self.policy if isinstance(self.policy, str) else "custom"

    def index(self, state: Sequence[int]) -> int:
        state = tuple(int(x) for x in state)
        if len(state) != self.dim or not all(1 <= x <= self.radius for x in state):
            raise InvalidParameterError(
                f"state {state} is not interior to the radius-{self.radius} grid")
        return int(np.ravel_multi_index(tuple(x - 1 for x in state), self.shape))

    def _build(self) -> None:
        if self._built:
            return
        d, R = self.dim, self.radius
        coords = np.indices(self.shape, dtype=np.int64).reshape(d, -1).T + 1
        steps = [np.array(s.delta, dtype=np.int64) for s in step_distribution(self.m)]
        nbr = np.full((self.size, self.m), -1, dtype=np.int64)
        exterior = np.zeros((self.size, self.m), dtype=bool)
        for k, delta in enumerate(steps):
            y = coords + delta
            absorbing = (y == 0).any(axis=1)
            outside = (y == R + 1).any(axis=1) & ~absorbing
            inside = ~absorbing & ~outside
            nbr[inside, k] = np.ravel_multi_index(tuple((y[inside] - 1).T), self.shape)
            exterior[:, k] = outside
        self.coords = coords
        self.steps = steps
        self.nbr = nbr
        self.exterior = exterior
        self.boundary = exterior.any(axis=1)
        self._built = True

    def exterior_points(self, k: int) -> np.ndarray:
        self._build()
        return self.coords[self.exterior[:, k]] + self.steps[k]

    def _policy_values(self, points: np.ndarray, exact: bool) -> list:
        if len(points) == 0:
            return []
        pol = self.policy
        if pol == "zero":
            return [0] * len(points)
        if pol == "upper_bound":
            prods = points[:, :-1] * points[:, 1:]
            return [int(v) for v in self.m * prods.min(axis=1)]
        if pol == "closed_form":
            return [3 * int(a) * int(b) for a, b in points]
        out = []
        for p in points:
            key = tuple(int(x) for x in p)
            try:
                val = pol(key) if callable(pol) else pol[key]
            except KeyError as exc:
                raise InvalidParameterError(f"custom boundary data has no value at {key}") from exc
            out.append(Fraction(val) if exact else float(val))
        return out

    def exterior_data(self, exact: bool = False) -> np.ndarray:
        """(size, m) array of exterior values; 0 where the successor is not exterior."""
        self._build()
        out = np.zeros((self.size, self.m), dtype=object if exact else np.float64)
        if exact:
            out[:] = 0
        for k in range(self.m):
            mask = self.exterior[:, k]
            if mask.any():
                vals = self._policy_values(self.exterior_points(k), exact)
                out[mask, k] = vals if exact else np.asarray(vals, dtype=np.float64)
        return out

    def describe(self) -> dict:
        return {"m": self.m, "radius": self.radius, "policy": self.policy_name,
                "interior_states": self.size}


@dataclass
class SolveResult:
    grid: SolverGrid
    values: np.ndarray  # shape (R,)*(m-1); entry [a_1-1, ..., a_{m-1}-1]
    residual: Union[float, Fraction]
    iterations: int
    method: str
    tol: float
    exact: bool = False
    notes: list = field(default_factory=list)

    def value(self, state: Sequence[int]):
        state = tuple(int(x) for x in state)
        if any(x == 0 for x in state):
            return Fraction(0) if self.exact else 0.0
        if len(state) != self.grid.dim or max(state) > self.grid.radius:
            raise InvalidParameterError(f"state {state} is outside the solved grid")
        return self.values[tuple(x - 1 for x in state)]

    def __getitem__(self, state):
        return self.value(state)

    def metadata(self) -> dict:
        return {
            **self.grid.describe(),
            "method": self.method,
            "tolerance": self.tol,
            "iterations": self.iterations,
            "residual": str(self.residual) if self.exact else float(self.residual),
            "exact": self.exact,
            "notes": list(self.notes),
        }


def _check_tol(tol: float) -> None:
    if not tol > 0:
        raise InvalidParameterError(f"tolerance must be > 0, got {tol}")


def _float_system(grid: SolverGrid, rhs: np.ndarray):
    grid._build()
    const = grid.exterior_data(False).sum(axis=1)
    return grid.nbr, const, rhs


def _direct(grid: SolverGrid, const: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(grid.nbr >= 0)
    data = np.full(len(rows), -1.0 / grid.m)
    a = sp.identity(grid.size, format="csr") + sp.csr_matrix(
        (data, (rows, grid.nbr[rows, cols])), shape=(grid.size, grid.size))
    return np.asarray(spla.spsolve(a.tocsc(), rhs + const / grid.m), dtype=np.float64)


def _solve_float(grid: SolverGrid, rhs: np.ndarray, tol: float, method: str,
                 omega: float, max_sweeps: int) -> SolveResult:
    nbr, const, rhs = _float_system(grid, rhs)
    m = float(grid.m)
    notes = []
    if method == "auto":
        # direct factorization is cheap on 1-D and 2-D lattices; fill-in makes
        # it slower than plain sweeps from three dimensions on
        method = "direct" if grid.dim <= 2 else "gauss_seidel"
    if method == "gauss_seidel":
        v = np.zeros(grid.size)
        check = max(1, min(100, grid.radius))
        sweeps, res = _kernels.gauss_seidel(v, nbr, const, rhs, m, omega, max_sweeps, tol, check)
    else:
        v = _direct(grid, const, rhs)
        # a few polishing sweeps remove the factorization's rounding error
        sweeps, res = _kernels.gauss_seidel(v, nbr, const, rhs, m, omega, max_sweeps, tol, 1)
        notes.append("sparse direct solve with Gauss-Seidel polishing")
    scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
    if not res <= tol * scale:
        raise ConvergenceError(
            f"lattice solve did not reach tolerance {tol} (relative) after {sweeps} sweeps; "
            f"residual {res:.3e}", residual=float(res), iterations=int(sweeps))
    return SolveResult(grid, v.reshape(grid.shape), float(res), int(sweeps), method, tol,
                       notes=notes)


def _solve_exact(grid: SolverGrid, rhs: Sequence[Fraction], tol: float) -> SolveResult:
    """Exact solve by marching along the last coordinate.

    Each state's equation determines the value one step up in the last
    coordinate, so all values are affine in the values of the first layer
    (last coordinate 1). The exterior data on layer R + 1 pins those unknowns
    through a dense exact system of size R^{m-2}.
    """
    R, m, d = grid.radius, grid.m, grid.dim
    layer = R ** (d - 1)
    if grid.size > EXACT_MAX_INTERIOR or layer > EXACT_MAX_LAYER:
        raise InvalidParameterError(
            f"exact mode supports at most {EXACT_MAX_INTERIOR} interior states and layers of "
            f"{EXACT_MAX_LAYER} states; grid has {grid.size} (layer {layer})")
    grid._build()
    ext = grid.exterior_data(True)
    rhs = [Fraction(x) for x in rhs]
    scale = math.lcm(*(x.denominator for x in rhs),
                     *(Fraction(x).denominator for x in ext.ravel()))
    ext_s = np.array([[int(Fraction(x) * scale) for x in row] for row in ext], dtype=object)
    rhs_s = np.array([int(x * scale) for x in rhs], dtype=object)
    up = m - 1  # step index of the last winner: +1 on the last coordinate
    nbr = grid.nbr

    # states of layer c (last coordinate c) are idx = p * R + (c - 1)
    base = np.arange(layer, dtype=np.int64) * R
    coef = np.zeros((grid.size, layer + 1), dtype=object)
    coef[:] = 0
    coef[base, np.arange(layer)] = 1

    def known(j_idx):
        # m * v_j - m * rhs_j - sum over the other successors, as affine rows
        acc = m * coef[j_idx]
        acc[:, layer] -= m * rhs_s[j_idx]
        for k in range(m):
            if k == up:
                continue
            t = nbr[j_idx, k]
            inside = t >= 0
            acc[inside] -= coef[t[inside]]
            acc[:, layer] -= ext_s[j_idx, k]
        return acc

    for c in range(1, R):
        coef[base + c] = known(base + c - 1)
    final = known(base + R - 1)
    target = ext_s[base + R - 1, up]
    sol = linalg.solve_dense([list(r) for r in final[:, :layer]],
                             [Fraction(int(t) - int(f)) for t, f in zip(target, final[:, layer])])
    q = math.lcm(*(x.denominator for x in sol))
    num = np.array([int(x * q) for x in sol] + [q], dtype=object)
    scaled = coef.dot(num)  # value * scale * q, an integer by construction
    # exact residual: m * v_j == m * rhs_j + sum of successor values
    check = m * scaled - m * q * rhs_s
    for k in range(m):
        t = nbr[:, k]
        inside = t >= 0
        check[inside] -= scaled[t[inside]]
        check -= q * ext_s[:, k]
    if any(int(x) != 0 for x in check):
        raise ConvergenceError("exact solve failed its residual check", residual=None)
    denom = scale * q
    vals = np.array([Fraction(int(x), denom) for x in scaled], dtype=object)
    return SolveResult(grid, vals.reshape(grid.shape), Fraction(0), 0, "exact", tol, exact=True,
                       notes=["exact rational solve; residual verified to be 0"])


_METHODS = ("auto", "direct", "gauss_seidel", "exact")


def solve_expected_T(grid: SolverGrid, tol: float = DEFAULT_TOL, method: str = "auto",
                     omega: float = 1.0, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SolveResult:
    """Solve tau = 1 + (1/m) sum_k tau(s + xi_k) on the grid.

    Success means max residual <= tol * max(1, max|tau|). ``method="exact"``
    returns Fractions and a residual of exactly 0.
    """
    _check_tol(tol)
    if method not in _METHODS:
        raise InvalidParameterError(f"unknown method {method!r}; choose from {_METHODS}")
    if not 0 < omega < 2:
        raise InvalidParameterError(f"relaxation factor must be in (0, 2), got {omega}")
    if method == "exact":
        return _solve_exact(grid, [Fraction(1)] * grid.size, tol)
    return _solve_float(grid, np.ones(grid.size), tol, method, omega, max_sweeps)


def solve_second_moment_truncated(grid: SolverGrid, expected_T_field: SolveResult,
                                  tol: float = DEFAULT_TOL, method: str = "auto",
                                  max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SolveResult:
    """Lower bound for E[T^2] from S = 1 + (1/m) sum_k [2 tau(s') + S(s')].

    Both tau (zero policy) and S use zero exterior data, so S under-estimates
    the second moment of the tie time.
    """
    _check_tol(tol)
    if grid.policy_name != "zero":
        raise InvalidParameterError("the second-moment solve needs the zero policy")
    src = expected_T_field.grid
    if (src.m, src.radius, src.policy_name) != (grid.m, grid.radius, "zero"):
        raise InvalidParameterError("expected_T_field must come from a zero-policy solve "
                                    "on the same grid")
    grid._build()
    tau = expected_T_field.values.ravel()
    exact = method == "exact"
    if exact and not expected_T_field.exact:
        raise InvalidParameterError("exact second-moment solve needs an exact tau field")
    total = np.zeros(grid.size, dtype=object if exact else np.float64)
    for k in range(grid.m):
        t = grid.nbr[:, k]
        inside = t >= 0
        total[inside] = total[inside] + tau[t[inside]]
    if exact:
        rhs = [1 + Fraction(2, grid.m) * Fraction(x) for x in total]
        return _solve_exact(grid, rhs, tol)
    rhs = 1.0 + (2.0 / grid.m) * np.asarray(total, dtype=np.float64)
    return _solve_float(grid, rhs, tol, "gauss_seidel" if method == "gauss_seidel" else "auto",
                        1.0, max_sweeps)


def bracket_grid(m: int, radius: int, tol: float = DEFAULT_TOL,
                 method: str = "auto") -> tuple[SolveResult, SolveResult]:
    """Zero-policy and upper-bound-policy solves on the same grid."""
    lower = solve_expected_T(SolverGrid(m, radius, "zero"), tol, method)
    upper = solve_expected_T(SolverGrid(m, radius, "upper_bound"), tol, method)
    return lower, upper


def bracket_expected_T(m: int, gaps: Sequence[int], radius: int,
                       tol: float = DEFAULT_TOL, method: str = "auto") -> tuple:
    """(lower, upper) bracket for tau(gaps) from the two boundary policies."""
    gaps = tuple(int(g) for g in gaps)
    if len(gaps) != m - 1:
        raise InvalidParameterError(f"expected {m - 1} gaps for m={m}, got {len(gaps)}")
    if any(g < 0 for g in gaps) or max(gaps) > radius:
        raise InvalidParameterError(f"gaps {gaps} must lie within radius {radius}")
    lower, upper = bracket_grid(m, radius, tol, method)
    return lower.value(gaps), upper.value(gaps)


def export_bracket_csv(path, lower: SolveResult, upper: SolveResult) -> None:
    """Rows ``a1,...,a_{m-1},tau_lower,tau_upper`` in lexicographic order."""
    grid = lower.grid
    lo = lower.values.ravel()
    hi = upper.values.ravel()
    grid._build()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"a{i + 1}" for i in range(grid.dim)] + ["tau_lower", "tau_upper"])
        for j, coords in enumerate(grid.coords):
            w.writerow([int(x) for x in coords] + [_num(lo[j]), _num(hi[j])])


def bracket_metadata(lower: SolveResult, upper: SolveResult) -> dict:
    return {"radius": lower.grid.radius, "m": lower.grid.m, "tolerance": lower.tol,
            "lower": lower.metadata(), "upper": upper.metadata()}


def write_metadata(path, meta: dict) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _num(x):
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else str(x.numerator)
    return repr(float(x))
