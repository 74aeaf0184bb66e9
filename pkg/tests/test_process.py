import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tietime import _kernels
from tietime.errors import AlreadyTiedError, InvalidParameterError
from tietime.montecarlo import simulate
from tietime.process import (GapState, apply_step, gaps_from_scores, is_tied, run_winners,
                             sample_T, sample_T_pair, step_distribution, winner_at)


# --- Philox known-answer vectors (Random123 kat_vectors, philox4x32 10 rounds)

@pytest.mark.parametrize("ctr, key, expected", [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
])
def test_philox_known_answers(ctr, key, expected):
    out = _kernels.philox4x32(*(np.uint64(c) for c in ctr), *(np.uint64(k) for k in key))
    assert tuple(int(x) for x in out) == expected


@pytest.mark.parametrize("m", [2, 3, 5, 7])
def test_winner_draws_are_uniform(m):
    from scipy.stats import chi2

    draws = np.array([winner_at(99, t, 0, m) for t in range(20_000)])
    counts = np.bincount(draws, minlength=m + 1)[1:]
    stat = float(np.sum((counts - len(draws) / m) ** 2 / (len(draws) / m)))
    assert set(np.unique(draws)) == set(range(1, m + 1))
    assert stat < chi2.ppf(1 - 1e-6, m - 1)


def test_winner_is_a_pure_function_of_its_counter():
    a = [winner_at(5, 17, n, 4) for n in range(50)]
    b = [winner_at(5, 17, n, 4) for n in range(50)]
    assert a == b
    assert a != [winner_at(6, 17, n, 4) for n in range(50)]
    assert a != [winner_at(5, 18, n, 4) for n in range(50)]


# --- step distribution -------------------------------------------------

@pytest.mark.parametrize("m, expected", [
    (2, [(-1,), (1,)]),
    (3, [(-1, 0), (1, -1), (0, 1)]),
    (4, [(-1, 0, 0), (1, -1, 0), (0, 1, -1), (0, 0, 1)]),
])
def test_step_distribution_examples(m, expected):
    steps = step_distribution(m)
    assert [s.delta for s in steps] == expected
    assert [s.winner for s in steps] == list(range(1, m + 1))


@given(st.integers(2, 12))
def test_step_deltas_sum_to_zero_and_are_sparse(m):
    deltas = np.array([s.delta for s in step_distribution(m)])
    assert deltas.shape == (m, m - 1)
    assert not deltas.sum(axis=0).any()
    for row in deltas:
        nz = row[row != 0]
        assert len(nz) <= 2 and set(nz) <= {-1, 1}
        if len(nz) == 2:
            assert sorted(nz) == [-1, 1]


def test_step_distribution_rejects_small_m():
    with pytest.raises(InvalidParameterError):
        step_distribution(1)


# --- scores, ties, single steps ----------------------------------------

@pytest.mark.parametrize("scores, gaps", [((5, 2, 9), (3, 4)), ((0, 1), (1,))])
def test_gaps_from_scores(scores, gaps):
    state = gaps_from_scores(scores)
    assert state.m == len(scores) and state.gaps == gaps


def test_gaps_from_scores_rejects_ties():
    with pytest.raises(AlreadyTiedError):
        gaps_from_scores((10, 7, 7, 1))


@pytest.mark.parametrize("gaps, tied", [((0, 5), True), ((2, 3), False), ((1, 0, 4), True)])
def test_is_tied(gaps, tied):
    assert is_tied(GapState.of(gaps)) is tied
    assert is_tied(gaps) is tied


@pytest.mark.parametrize("gaps, winner, after", [
    ((2, 3), 2, (3, 2)),
    ((1, 1, 1), 4, (1, 1, 2)),
    ((1, 1), 1, (0, 1)),
])
def test_apply_step_examples(gaps, winner, after):
    assert apply_step(GapState.of(gaps), winner).gaps == after


@pytest.mark.parametrize("winner", [0, 4])
def test_apply_step_rejects_bad_winner(winner):
    with pytest.raises(InvalidParameterError):
        apply_step(GapState.of((2, 3)), winner)


def test_gap_state_validates_length():
    with pytest.raises(InvalidParameterError):
        GapState(4, (1, 2))


# --- forced sequences ----------------------------------------------------

def test_forced_first_winner_ties_immediately():
    s = run_winners(GapState.of((1, 1)), [1])
    assert (s.steps, s.absorbed, s.hit_index) == (1, True, 1)


def test_forced_sequence_without_tie_is_reported_unabsorbed():
    s = run_winners(GapState.of((1, 1)), [3, 3, 3])
    assert (s.steps, s.absorbed, s.hit_index) == (3, False, None)


@settings(max_examples=200)
@given(st.integers(2, 6).flatmap(lambda m: st.tuples(
    st.just(m),
    st.lists(st.integers(1, 4), min_size=m - 1, max_size=m - 1),
    st.lists(st.integers(1, m), min_size=1, max_size=60))))
def test_absorption_leaves_exactly_one_zero_gap(case):
    m, gaps, winners = case
    state = GapState(m, tuple(gaps))
    sample = run_winners(state, winners)
    for w in winners[:sample.steps]:
        state = apply_step(state, w)
    zeros = [i + 1 for i, g in enumerate(state.gaps) if g == 0]
    if sample.absorbed:
        assert zeros == [sample.hit_index]
    else:
        assert zeros == [] and min(state.gaps) >= 1


# --- seeded sampling -------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(lambda m: st.tuples(
    st.lists(st.integers(1, 5), min_size=m - 1, max_size=m - 1),
    st.integers(0, 2**64 - 1), st.integers(0, 10**9))))
def test_kernel_matches_python_replay_of_the_same_winners(case):
    gaps, seed, trial = case
    state = GapState.of(gaps)
    horizon = 400
    s = sample_T(state, seed, trial, horizon)
    replay = run_winners(state, (winner_at(seed, trial, n, state.m) for n in range(horizon)))
    assert (s.steps, s.absorbed, s.hit_index) == (replay.steps, replay.absorbed, replay.hit_index)
    assert s.seed_record == (seed, trial)


def test_sample_T_is_deterministic():
    state = GapState.of((2, 3, 1))
    assert sample_T(state, 11, 42) == sample_T(state, 11, 42)


def test_horizon_truncation_is_reported():
    s = sample_T(GapState.of((40, 40)), 1, 0, horizon=5)
    assert (s.steps, s.absorbed, s.hit_index) == (5, False, None)


@pytest.mark.parametrize("bad", [dict(horizon=0), dict(seed=-1), dict(seed=2**64)])
def test_sample_T_rejects_bad_arguments(bad):
    kw = dict(seed=1, trial_index=0, horizon=10) | bad
    with pytest.raises(InvalidParameterError):
        sample_T(GapState.of((1, 1)), **kw)


def test_sample_T_rejects_tied_start():
    with pytest.raises(InvalidParameterError):
        sample_T(GapState.of((0, 2)), 1, 0)


def test_workers_do_not_change_output():
    state = GapState.of((2, 2, 3))
    one = simulate(state, 5000, 3, workers=1)
    four = simulate(state, 5000, 3, workers=4)
    for field in ("steps", "absorbed", "hit_index", "final_gaps"):
        assert np.array_equal(getattr(one, field), getattr(four, field))


def test_batch_agrees_with_single_samples():
    state = GapState.of((3, 1))
    batch = simulate(state, 50, 8, trial_start=1000)
    for j in range(50):
        s = sample_T(state, 8, 1000 + j)
        assert s.steps == batch.steps[j] and s.hit_index == batch.hit_index[j]


def _four_sigma(p, n):
    return 4 * np.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("gaps, p", [((1, 1), 2 / 3), ((1, 1, 1), 3 / 4)])
def test_probability_of_immediate_tie(gaps, p):
    batch = simulate(GapState.of(gaps), 100_000, 21)
    assert abs(np.mean(batch.steps == 1) - p) < _four_sigma(p, 100_000)


def test_pair_probability_of_immediate_stop():
    # only winners 1 and 2 can zero one of the two watched gaps
    batch = simulate(GapState.of((1, 1, 6)), 100_000, 21, pair=1)
    assert abs(np.mean(batch.steps == 1) - 0.5) < _four_sigma(0.5, 100_000)


def test_pair_time_equals_T_for_three_teams():
    state = GapState.of((2, 3))
    for t in range(200):
        a, b = sample_T(state, 4, t), sample_T_pair(state, 1, 4, t)
        assert (a.steps, a.hit_index) == (b.steps, b.hit_index)


def test_pair_time_ignores_other_gaps():
    # same winners drive the pair whatever a_1 is
    for t in range(200):
        a = sample_T_pair(GapState.of((1, 2, 3, 4)), 2, 9, t)
        b = sample_T_pair(GapState.of((7, 2, 3, 4)), 2, 9, t)
        assert (a.steps, a.hit_index) == (b.steps, b.hit_index)


def test_pair_index_is_validated():
    with pytest.raises(InvalidParameterError):
        sample_T_pair(GapState.of((1, 1, 1)), 3, 1, 0)


def test_two_teams_is_a_simple_random_walk():
    # hitting time of 0 from 1: P(T = 1) = 1/2, P(T = 3) = 1/8
    batch = simulate(GapState.of((1,)), 100_000, 2, horizon=10_000)
    assert abs(np.mean(batch.steps == 1) - 0.5) < _four_sigma(0.5, 100_000)
    assert abs(np.mean(batch.steps == 3) - 0.125) < _four_sigma(0.125, 100_000)
    assert np.all(batch.steps[batch.absorbed] % 2 == 1)


@pytest.mark.parametrize("seed", [2**63 - 1, 2**63, 2**64 - 1])
def test_full_64_bit_seed_range(seed):
    state = GapState.of((2, 2))
    s = sample_T(state, seed, 3, 500)
    assert 1 <= winner_at(seed, 3, 0, 3) <= 3
    batch = simulate(state, 4, seed, horizon=500, trial_start=3)
    assert batch.steps[0] == s.steps
