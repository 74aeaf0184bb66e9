import csv
import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tietime import solver as sv
from tietime.errors import ConvergenceError, InvalidParameterError
from tietime.montecarlo import estimate_expected_T
from tietime.process import GapState, apply_step


def _dense_oracle(m, radius, exterior):
    """Dense float solve built from single-step dynamics, independent of SolverGrid."""
    states = list(itertools.product(range(1, radius + 1), repeat=m - 1))
    pos = {s: j for j, s in enumerate(states)}
    A = np.eye(len(states))
    b = np.ones(len(states))
    for s in states:
        for w in range(1, m + 1):
            t = apply_step(GapState(m, s), w).gaps
            if 0 in t:
                continue
            if max(t) > radius:
                b[pos[s]] += exterior(t) / m
            else:
                A[pos[s], pos[t]] -= 1.0 / m
    return dict(zip(states, np.linalg.solve(A, b)))


# --- closed form ---------------------------------------------------------------

@pytest.mark.parametrize("a, b, v", [(2, 3, 18), (1, 1, 3), (0, 5, 0)])
def test_closed_form_examples(a, b, v):
    assert sv.closed_form_m3(a, b) == v


def test_closed_form_rejects_negative():
    with pytest.raises(InvalidParameterError):
        sv.closed_form_m3(-1, 2)


def test_closed_form_is_discretely_harmonic():
    for a in range(1, 60):
        for b in range(1, 60):
            rhs = 1 + Fraction(1, 3) * (sv.closed_form_m3(a - 1, b) + sv.closed_form_m3(a + 1, b - 1)
                                        + sv.closed_form_m3(a, b + 1))
            assert rhs == sv.closed_form_m3(a, b)


# --- float solves ----------------------------------------------------------------

def test_closed_form_exterior_reproduces_3ab():
    res = sv.solve_expected_T(sv.SolverGrid(3, 60, "closed_form"))
    assert abs(res.value((5, 7)) - 105) < 1e-8
    assert res.residual <= 1e-10 * max(1, np.abs(res.values).max())


def test_zero_exterior_underestimates():
    res = sv.solve_expected_T(sv.SolverGrid(3, 60, "zero"))
    assert res.value((5, 7)) <= 105


@pytest.mark.parametrize("m, radius, policy", [(2, 9, "zero"), (3, 7, "zero"),
                                               (3, 7, "upper_bound"), (4, 4, "upper_bound")])
def test_solver_matches_dense_oracle(m, radius, policy):
    ext = {"zero": lambda t: 0.0, "upper_bound": lambda t: float(sv.upper_bound_value(t))}[policy]
    oracle = _dense_oracle(m, radius, ext)
    for method in ("direct", "gauss_seidel"):
        res = sv.solve_expected_T(sv.SolverGrid(m, radius, policy), tol=1e-12, method=method)
        for s, v in oracle.items():
            assert res.value(s) == pytest.approx(v, rel=1e-9)


def test_two_teams_gamblers_ruin():
    # walk on [0, R+1] killed at both ends: tau(a) = a (R + 1 - a)
    res = sv.solve_expected_T(sv.SolverGrid(2, 15, "zero"), method="exact")
    assert [res.value((a,)) for a in range(1, 16)] == [a * (16 - a) for a in range(1, 16)]


def test_custom_policies_agree():
    f = lambda s: 3 * s[0] * s[1]
    grid = sv.SolverGrid(3, 6)
    grid._build()
    table = {tuple(int(x) for x in p): f(p) for k in range(3) for p in grid.exterior_points(k)}
    a = sv.solve_expected_T(sv.SolverGrid(3, 6, f), method="exact")
    b = sv.solve_expected_T(sv.SolverGrid(3, 6, table), method="exact")
    assert np.array_equal(a.values, b.values)
    assert a.value((2, 3)) == 18


def test_custom_mapping_must_cover_exterior():
    with pytest.raises(InvalidParameterError, match="no value"):
        sv.solve_expected_T(sv.SolverGrid(3, 4, {}))


def test_policy_monotonicity():
    lower, upper = sv.bracket_grid(4, 12)
    assert np.all(lower.values <= upper.values + 1e-9)


def test_bracket_three_teams_contains_closed_form():
    lo, hi = sv.bracket_expected_T(3, (2, 3), 60)
    assert lo <= 18 <= hi + 1e-9
    # for three teams the upper data is 3ab itself, so the upper end is exact
    lo, hi = sv.bracket_expected_T(3, (2, 3), 12, method="exact")
    assert lo < hi == 18


def test_bracket_four_teams():
    lower, upper = sv.bracket_grid(4, 40)
    lo, hi = lower.value((1, 1, 1)), upper.value((1, 1, 1))
    assert lo <= hi <= 2 + 1e-6
    lo2, hi2 = lower.value((2, 2, 2)), upper.value((2, 2, 2))
    assert 0 <= lo2 <= hi2 <= 12
    est = estimate_expected_T(GapState.of((2, 2, 2)), 20_000, 7)
    assert lo2 - 4 * est.half_width <= est.mean <= hi2 + 4 * est.half_width


def test_bracket_shrinks_with_radius():
    widths = []
    for radius in (10, 20):
        lo, hi = sv.bracket_expected_T(4, (1, 1, 1), radius)
        widths.append(hi - lo)
    assert widths[1] < widths[0]


def test_bracket_validates_gaps():
    with pytest.raises(InvalidParameterError):
        sv.bracket_expected_T(4, (1, 1), 10)
    with pytest.raises(InvalidParameterError):
        sv.bracket_expected_T(3, (1, 11), 10)


# --- exact mode ----------------------------------------------------------------------

def test_exact_closed_form_is_exact():
    res = sv.solve_expected_T(sv.SolverGrid(3, 20, "closed_form"), method="exact")
    assert res.exact and res.residual == 0
    assert all(res.value((a, b)) == 3 * a * b for a in range(1, 21) for b in range(1, 21))


@pytest.mark.parametrize("m, radius, policy", [(3, 12, "zero"), (3, 12, "upper_bound"),
                                               (4, 6, "zero"), (4, 6, "upper_bound")])
def test_exact_and_iterative_agree(m, radius, policy):
    grid = sv.SolverGrid(m, radius, policy)
    exact = sv.solve_expected_T(grid, method="exact")
    approx = sv.solve_expected_T(grid, tol=1e-12, method="gauss_seidel")
    scale = max(1.0, float(np.abs(approx.values).max()))
    diff = max(abs(float(x) - y) for x, y in zip(exact.values.ravel(), approx.values.ravel()))
    assert diff <= 1e-9 * scale


def test_exact_residual_is_exact():
    grid = sv.SolverGrid(3, 8, "zero")
    res = sv.solve_expected_T(grid, method="exact")
    grid._build()
    tau = res.values.ravel()
    for j in range(grid.size):
        nb = sum((tau[t] for t in grid.nbr[j] if t >= 0), Fraction(0))
        assert tau[j] == 1 + nb / 3


def test_exact_size_cap():
    with pytest.raises(InvalidParameterError):
        sv.solve_expected_T(sv.SolverGrid(3, 150), method="exact")


# --- second moment ---------------------------------------------------------------------

def test_second_moment_grows_with_radius():
    values = []
    for radius in (50, 100):
        grid = sv.SolverGrid(3, radius)
        values.append(sv.solve_second_moment_truncated(grid, sv.solve_expected_T(grid)).value((1, 1)))
    assert values[1] >= 1.05 * values[0]


def test_second_moment_exact_matches_float_and_is_zero_when_absorbed():
    grid = sv.SolverGrid(3, 10)
    tau_exact = sv.solve_expected_T(grid, method="exact")
    s_exact = sv.solve_second_moment_truncated(grid, tau_exact, method="exact")
    s_float = sv.solve_second_moment_truncated(grid, sv.solve_expected_T(grid))
    assert s_exact.value((0, 4)) == 0 and s_float.value((3, 0)) == 0
    assert float(s_exact.value((2, 3))) == pytest.approx(s_float.value((2, 3)), rel=1e-10)
    # S >= tau^2 pointwise (Jensen)
    assert all(s_exact.values.ravel()[j] >= tau_exact.values.ravel()[j] ** 2 for j in range(grid.size))


def test_second_moment_requires_matching_zero_field():
    grid = sv.SolverGrid(3, 10)
    other = sv.solve_expected_T(sv.SolverGrid(3, 12))
    with pytest.raises(InvalidParameterError):
        sv.solve_second_moment_truncated(grid, other)
    with pytest.raises(InvalidParameterError):
        ub = sv.SolverGrid(3, 10, "upper_bound")
        sv.solve_second_moment_truncated(ub, sv.solve_expected_T(ub))


# --- errors ---------------------------------------------------------------------------

@pytest.mark.parametrize("m, radius, policy", [(1, 5, "zero"), (3, 0, "zero"), (3, 5, "nope"),
                                               (2, 5, "upper_bound"), (4, 5, "closed_form"),
                                               (3, 5, 42)])
def test_grid_validation(m, radius, policy):
    with pytest.raises(InvalidParameterError):
        sv.SolverGrid(m, radius, policy)


@pytest.mark.parametrize("kw", [dict(tol=0), dict(tol=-1e-3), dict(method="magic"), dict(omega=2.5)])
def test_solve_validation(kw):
    with pytest.raises(InvalidParameterError):
        sv.solve_expected_T(sv.SolverGrid(3, 5), **kw)


def test_non_convergence_reports_residual():
    with pytest.raises(ConvergenceError) as info:
        sv.solve_expected_T(sv.SolverGrid(3, 30), method="gauss_seidel", max_sweeps=3)
    assert info.value.residual > 0 and info.value.iterations >= 3


def test_value_outside_grid():
    res = sv.solve_expected_T(sv.SolverGrid(3, 5))
    with pytest.raises(InvalidParameterError):
        res.value((6, 1))


@given(st.integers(1, 6), st.integers(1, 6))
def test_grid_index_round_trip(a, b):
    grid = sv.SolverGrid(3, 6)
    grid._build()
    assert tuple(grid.coords[grid.index((a, b))]) == (a, b)


# --- export ------------------------------------------------------------------------------

def test_bracket_csv_and_metadata(tmp_path):
    lower, upper = sv.bracket_grid(3, 5, method="exact")
    path = tmp_path / "b.csv"
    sv.export_bracket_csv(path, lower, upper)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["a1", "a2", "tau_lower", "tau_upper"]
    assert len(rows) == 26
    for r in rows[1:]:
        a, b = int(r[0]), int(r[1])
        assert Fraction(r[2]) == lower.value((a, b)) and Fraction(r[3]) == upper.value((a, b))
    meta = sv.bracket_metadata(lower, upper)
    sv.write_metadata(tmp_path / "m.json", meta)
    back = json.loads((tmp_path / "m.json").read_text())
    assert back["radius"] == 5 and back["lower"]["residual"] == "0"
    assert {"iterations", "tolerance", "residual"} <= set(back["upper"])
