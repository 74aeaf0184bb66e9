import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from tietime import series as se
from tietime.errors import InvalidParameterError, UnsupportedAnsatzError
from tietime.martingale import StatePolynomial, drift
from tietime.series import MultiSeries as M


def _geometric(sign, k, D, slot):
    """u_slot / (1 -+ u_slot) as a truncated series, built by plain multiplication."""
    s = -1 if sign == "+" else 1
    terms = {}
    for n in range(1, D + 1):
        e = [0] * k
        e[slot - 1] = n
        terms[tuple(e)] = Fraction(s) ** (n - 1)
    return M(k, D, terms)


def _substitute(sign, slot, f):
    """Brute-force composition: replace u_slot by u_slot/(1 -+ u_slot) term by term."""
    k, D = f.var_count, f.max_degree
    g = _geometric(sign, k, D, slot)
    out = M.zero(k, D)
    for e, c in f.coeffs.items():
        rest = list(e)
        rest[slot - 1] = 0
        term = M.monomial(k, D, rest, c)
        for _ in range(e[slot - 1]):
            term = term * g
        out = out + term
    return out


series_st = st.integers(1, 3).flatmap(lambda k: st.builds(
    lambda seed, D: (k, se.random_series(np.random.default_rng(seed), k, D)),
    st.integers(0, 2**32 - 1), st.integers(0, 7)))


# --- phi coefficients ------------------------------------------------------------------

@pytest.mark.parametrize("sign, i, k, value", [("-", 2, 3, 4), ("+", 2, 3, -4),
                                               ("-", 0, 0, 1), ("+", 0, 5, 0), ("-", 3, 0, 1)])
def test_phi_examples(sign, i, k, value):
    assert se.phi_coeff(sign, i, k) == value


def test_phi_is_binomial():
    # 1/(1 - x)^i = sum C(i + k - 1, k) x^k
    from math import comb
    for i in range(1, 9):
        for k in range(12):
            assert se.phi_coeff("-", i, k) == comb(i + k - 1, k)
            assert se.phi_coeff("+", i, k) == (-1) ** k * comb(i + k - 1, k)


def test_phi_convolution_identity():
    for sign in "+-":
        for i1, i2 in itertools.product(range(7), repeat=2):
            for k in range(11):
                conv = sum(se.phi_coeff(sign, i1, j) * se.phi_coeff(sign, i2, k - j)
                           for j in range(k + 1))
                assert conv == se.phi_coeff(sign, i1 + i2, k)


def test_phi_table():
    t = se.PhiTable.build("-", 4, 6)
    assert t[2, 3] == 4 and all(t[i, k] >= 0 for i in range(5) for k in range(7))


def test_phi_rejects_bad_sign():
    with pytest.raises(InvalidParameterError):
        se.phi_coeff("*", 1, 1)


# --- series arithmetic and I/O -------------------------------------------------------------

def test_truncated_multiplication():
    u = M.variable(1, 4, 1)
    geo = M(1, 4, {(n,): 1 for n in range(5)})
    assert (geo * (1 - u)) == M.constant(1, 4)
    assert (u * u * u * u * u).is_zero()


@settings(max_examples=30)
@given(series_st)
def test_json_round_trip(case):
    k, f = case
    assume(not f.is_zero())
    assert M.from_json(json.loads(json.dumps(f.to_json())), f.max_degree) == f


def test_empty_json_is_rejected():
    # an empty array does not say how many variables the series has
    with pytest.raises(InvalidParameterError):
        M.from_json([])


def test_json_file_format(tmp_path):
    f = M(2, 3, {(1, 0): Fraction(1, 4), (0, 2): -3})
    path = tmp_path / "f.json"
    f.dump(path)
    data = json.loads(path.read_text())
    assert {"exponents": [1, 0], "coeff": "1/4"} in data
    assert {"exponents": [0, 2], "coeff": "-3"} in data
    assert M.load(path, 3) == f


# --- substitution operators ------------------------------------------------------------------

def test_S_minus_of_u_is_geometric():
    out = se.apply_S("-", 1, M.variable(1, 8, 1))
    assert [out.coeff((n,)) for n in range(9)] == [0] + [1] * 8


@pytest.mark.parametrize("sign", "+-")
def test_S_fixes_constants(sign):
    f = M.constant(3, 6, Fraction(5, 2))
    assert se.apply_S(sign, 2, f) == f


def test_S_plus_on_product():
    out = se.apply_S("+", 1, M.monomial(2, 8, (1, 1)))
    for a in range(1, 8):
        assert out.coeff((a, 1)) == (-1) ** (a - 1)
    assert all(e[1] == 1 for e in out.coeffs)


@settings(max_examples=40, deadline=None)
@given(series_st, st.sampled_from("+-"), st.integers(1, 3))
def test_S_matches_brute_force_composition(case, sign, slot):
    k, f = case
    slot = min(slot, k)
    assert se.apply_S(sign, slot, f) == _substitute(sign, slot, f)


@settings(max_examples=30, deadline=None)
@given(series_st, st.sampled_from("+-"), st.data())
def test_S_is_lower_triangular(case, sign, data):
    k, f = case
    slot = data.draw(st.integers(1, k))
    theta = data.draw(st.sampled_from(se._monomials(k, f.max_degree)))
    # perturb a coefficient that theta must not depend on
    cand = [e for e in se._monomials(k, f.max_degree)
            if e[slot - 1] > theta[slot - 1]
            or any(a != b for j, (a, b) in enumerate(zip(e, theta)) if j != slot - 1)]
    if not cand:
        return
    e = data.draw(st.sampled_from(cand))
    g = f + M.monomial(k, f.max_degree, e, 7)
    assert se.apply_S(sign, slot, f).coeff(theta) == se.apply_S(sign, slot, g).coeff(theta)


def test_S_validates_slot():
    with pytest.raises(InvalidParameterError):
        se.apply_S("+", 3, M.constant(2, 3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from("+-"), st.sampled_from("+-"),
       st.sampled_from([(1, 2), (1, 3), (2, 3), (3, 1)]))
def test_commutativity(seed, s1, s2, slots):
    f = se.random_series(np.random.default_rng(seed), 3, 8)
    assert se.check_commutativity(s1, s2, *slots, f)


def test_commutativity_on_delta_series_and_same_slot():
    delta = M.monomial(3, 8, (1, 1, 0))
    assert se.check_commutativity("+", "-", 1, 2, delta)
    with pytest.raises(InvalidParameterError):
        se.check_commutativity("+", "-", 2, 2, delta)


# --- perfect-martingale residuals -------------------------------------------------------------

@pytest.mark.parametrize("f, gamma", [
    (M.constant(2, 8), Fraction(1, 3)),
    (M.monomial(3, 8, (1, 0, 0)), Fraction(1, 4)),
    (M.monomial(3, 8, (0, 0, 1)), Fraction(1, 4)),
    (M.monomial(3, 8, (1, 1, 1)), 0),
])
def test_known_solutions(f, gamma):
    assert se.residual_perfect(f, gamma).is_zero()


def test_wrong_gamma_leaves_residual():
    r = se.residual_perfect(M.constant(2, 6), Fraction(1, 4))
    assert r.coeffs == {(1, 1): Fraction(1, 12)}


def test_residual_degree_and_variable_count():
    r = se.residual_perfect(M.constant(2, 5), 0)
    assert r.max_degree == 7
    with pytest.raises(InvalidParameterError):
        se.residual_perfect(M.constant(2, 5), 0, k=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.fractions(max_denominator=7))
def test_three_variable_residual_forces_zero_constant_term(seed, gamma):
    # the u1 u2 coefficient of the residual is f(0)/4 for every f and gamma
    f = se.random_series(np.random.default_rng(seed), 3, 5)
    assert se.residual_perfect(f, gamma).coeff((1, 1, 0)) == f.coeff((0, 0, 0)) / 4


# --- linear families ----------------------------------------------------------------------------

def test_two_variable_family_solves():
    res = se.solve_linear_family(2, 6, 1)
    assert res.status == "solved"
    f, gamma = res.solution
    assert f == M.constant(2, 6) and gamma == Fraction(1, 3)
    assert se.residual_perfect(f, gamma).is_zero()
    for g, c in res.nullspace:
        assert se.residual_perfect(g, c).is_zero()
    assert {tuple(g.coeffs) for g, _ in res.nullspace} == {((1, 0),), ((0, 1),), ((1, 1),)}


def test_three_variable_family_is_inconsistent():
    res = se.solve_linear_family(3, 6, 1)
    assert res.status == "inconsistent" and res.solution is None
    assert res.certificate == [("coeff[u1*u2]", -4), ("normalization", 1)]
    assert res.residual_norm > 0.1
    d = res.to_dict()
    assert d["certificate"][0] == {"equation": "coeff[u1*u2]", "weight": "-4"}


def test_three_variable_family_without_normalization():
    res = se.solve_linear_family(3, 6, 0)
    assert res.status == "solved"
    for g, c in res.nullspace:
        assert se.residual_perfect(g, c).is_zero()
    for f in (M.monomial(3, 6, (1, 0, 0)), M.monomial(3, 6, (0, 0, 1))):
        assert se.solution_space_contains(3, 6, f, Fraction(1, 4))
    # u1 and u3 are in the span of the reported basis
    basis = {tuple(sorted(g.coeffs.items())): c for g, c in res.nullspace}
    u1 = ((1, 0, 0), Fraction(4)),
    assert basis[u1] == 1
    assert basis[(((0, 0, 1), Fraction(1)), ((1, 0, 0), Fraction(-1)))] == 0


def test_family_validates():
    with pytest.raises(InvalidParameterError):
        se.solve_linear_family(0, 3)


def test_gamma_form_examples():
    assert se.residual_gamma_form(M.zero(3, 4), 0).is_zero()
    assert not se.residual_gamma_form(M.constant(3, 4), 0).is_zero()
    u, v, w = (M.variable(3, 4, j) for j in (1, 2, 3))
    assert se.residual_gamma_form(u + w, 0).is_zero()
    assert se.residual_gamma_form(u * v + v * w, 0).is_zero()


def test_gamma_family_is_inconsistent():
    res = se.solve_gamma_family(6, 1)
    assert res.status == "inconsistent" and res.certificate
    assert res.to_dict()["certificate"][-1]["equation"] == "normalization"


def test_gamma_family_without_normalization():
    res = se.solve_gamma_family(4, 0)
    assert res.status == "solved" and res.solution[0].is_zero()
    for g, c in res.nullspace:
        assert se.residual_gamma_form(g, c, 4).is_zero()


# --- link to the drift oracle -------------------------------------------------------------------

@pytest.mark.parametrize("f, gamma, k", [
    (M.monomial(3, 6, (1, 0, 0)), Fraction(1, 4), 3),
    (M.constant(2, 6), Fraction(1, 3), 2),
    (M.monomial(3, 6, (1, 1, 1)), 0, 3),
    (M.constant(2, 6), Fraction(1, 5), 2),  # both sides reject
    (M.monomial(3, 6, (0, 1, 0)), 0, 3),
])
def test_crosscheck_agrees(f, gamma, k):
    states = list(itertools.product(range(1, 5), repeat=k))
    assert se.crosscheck_with_drift(f, gamma, k, states)


def test_generator_from_monomial():
    h = se.generator_from_monomial(M.monomial(3, 4, (1, 0, 0), 2))
    assert h == 2 * StatePolynomial.variable(1, 3) * StatePolynomial.variable(2, 3)


@pytest.mark.parametrize("f", [M.monomial(2, 4, (2, 0)), M.variable(2, 4, 1) + M.variable(2, 4, 2)])
def test_crosscheck_rejects_unsupported(f):
    with pytest.raises(UnsupportedAnsatzError):
        se.crosscheck_with_drift(f, 0, 2, [(1, 1)])


@pytest.mark.parametrize("m", [3, 4, 5])
def test_squares_and_pair_products_have_constant_drift(m):
    for i in range(1, m - 1):
        a = StatePolynomial.variable(i - 1, m - 1)
        b = StatePolynomial.variable(i, m - 1)
        for state in itertools.product(range(1, 5), repeat=m - 1):
            assert drift(a * a, m, state) == Fraction(2, m)
            assert drift(a * b, m, state) == Fraction(-1, m)
