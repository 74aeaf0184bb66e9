"""Gap-process dynamics for the m-team random competition.

Teams are ranked by score; ``gaps[i]`` is the difference between the
(i+2)-th and (i+1)-th smallest score. Each round one team chosen uniformly at
random wins a point, which moves the gap vector by one of ``m`` fixed step
vectors. The tie time ``T`` is the first round at which some gap is zero.

Winners are 1-based throughout the public API (winner ``k`` is the team in
sorted position ``k``); gap indices in ``StoppingSample.hit_index`` are also
1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import AlreadyTiedError, InvalidParameterError

DEFAULT_HORIZON = 10**8


@dataclass(frozen=True)
class GapState:
    m: int
    gaps: tuple[int, ...]

    def __post_init__(self):
        if self.m < 2:
            raise InvalidParameterError(f"team count m must be >= 2, got {self.m}")
        gaps = tuple(int(g) for g in self.gaps)
        if len(gaps) != self.m - 1:
            raise InvalidParameterError(
                f"expected {self.m - 1} gaps for m={self.m}, got {len(gaps)}")
        object.__setattr__(self, "gaps", gaps)

    @classmethod
    def of(cls, gaps: Sequence[int]) -> "GapState":
        return cls(len(gaps) + 1, tuple(gaps))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.gaps, dtype=np.int64)


@dataclass(frozen=True)
class StepDelta:
    winner: int
    delta: tuple[int, ...]


@dataclass(frozen=True)
class StoppingSample:
    steps: int
    absorbed: bool
    hit_index: Optional[int]
    seed_record: tuple[int, int]


def step_distribution(m: int) -> list[StepDelta]:
    """The ``m`` equally likely gap increments, one per winning team.

    >>> [d.delta for d in step_distribution(3)]
    [(-1, 0), (1, -1), (0, 1)]
    """
    if m < 2:
        raise InvalidParameterError(f"team count m must be >= 2, got {m}")
    out = []
    for k in range(1, m + 1):
        delta = [0] * (m - 1)
        if k >= 2:
            delta[k - 2] += 1
        if k <= m - 1:
            delta[k - 1] -= 1
        out.append(StepDelta(k, tuple(delta)))
    return out


def gaps_from_scores(scores: Sequence[int]) -> GapState:
    ordered = sorted(int(s) for s in scores)
    if len(ordered) < 2:
        raise InvalidParameterError("need at least two teams")
    gaps = tuple(b - a for a, b in zip(ordered, ordered[1:]))
    if 0 in gaps:
        raise AlreadyTiedError(f"duplicate scores in {tuple(scores)}: T would be 0")
    return GapState(len(ordered), gaps)


def is_tied(state: GapState | Sequence[int]) -> bool:
    gaps = state.gaps if isinstance(state, GapState) else state
    return any(g == 0 for g in gaps)


def apply_step(state: GapState, winner: int) -> GapState:
    if not 1 <= winner <= state.m:
        raise InvalidParameterError(f"winner must be in 1..{state.m}, got {winner}")
    if is_tied(state):
        raise InvalidParameterError(f"state {state.gaps} is already tied")
    delta = step_distribution(state.m)[winner - 1].delta
    return GapState(state.m, tuple(g + d for g, d in zip(state.gaps, delta)))


def winner_at(seed: int, trial_index: int, step: int, m: int) -> int:
    """1-based winner of round ``step + 1`` in trial ``trial_index``."""
    _check_seed(seed, trial_index)
    return int(_kernels.draw_winner(np.uint64(seed), trial_index, step, m)) + 1


def run_winners(state: GapState, winners: Iterable[int],
                pair: Optional[int] = None) -> StoppingSample:
    """Drive the chain with an explicit winner sequence (testing aid).

    Stops at the first tie (or the first zero of gap ``pair``/``pair + 1``
    when ``pair`` is given); otherwise the sample is reported unabsorbed
    after the sequence is exhausted.
    """
    watched = range(state.m - 1) if pair is None else (pair - 1, pair)
    gaps = list(state.gaps)
    n = 0
    for w in winners:
        if not 1 <= w <= state.m:
            raise InvalidParameterError(f"winner must be in 1..{state.m}, got {w}")
        n += 1
        if w >= 2:
            gaps[w - 2] += 1
        if w <= state.m - 1:
            gaps[w - 1] -= 1
            if gaps[w - 1] == 0 and (w - 1) in watched:
                return StoppingSample(n, True, w, (-1, -1))
    return StoppingSample(n, False, None, (-1, -1))


def _check_start(state: GapState, horizon: int, watched) -> None:
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    if any(state.gaps[i] <= 0 for i in watched):
        raise InvalidParameterError(f"state {state.gaps} is tied or has a nonpositive gap")


def _check_seed(seed: int, trial_index: int) -> None:
    if not 0 <= seed < 2**64:
        raise InvalidParameterError(f"seed must be in [0, 2**64), got {seed}")
    if not 0 <= trial_index < 2**63:
        raise InvalidParameterError(f"trial index out of range: {trial_index}")


def sample_T(state: GapState, seed: int, trial_index: int,
             horizon: int = DEFAULT_HORIZON) -> StoppingSample:
    """One realisation of the tie time; a pure function of the arguments."""
    _check_start(state, horizon, range(state.m - 1))
    _check_seed(seed, trial_index)
    steps, absorbed, hit, _ = _kernels.simulate_trials(
        state.as_array(), state.m, np.uint64(seed), trial_index, 1, horizon, -1)
    return _to_sample(steps[0], absorbed[0], hit[0], seed, trial_index)


def sample_T_pair(state: GapState, i: int, seed: int, trial_index: int,
                  horizon: int = DEFAULT_HORIZON) -> StoppingSample:
    """One realisation of the first time gap ``i`` or ``i + 1`` hits zero.

    Other gaps are ignored and may become negative; the pair's motion only
    depends on the winner index.
    """
    if not 1 <= i <= state.m - 2:
        raise InvalidParameterError(f"pair index must be in 1..{state.m - 2}, got {i}")
    _check_start(state, horizon, (i - 1, i))
    _check_seed(seed, trial_index)
    steps, absorbed, hit, _ = _kernels.simulate_trials(
        state.as_array(), state.m, np.uint64(seed), trial_index, 1, horizon, i - 1)
    return _to_sample(steps[0], absorbed[0], hit[0], seed, trial_index)


def _to_sample(steps, absorbed, hit, seed, trial_index) -> StoppingSample:
    absorbed = bool(absorbed)
    return StoppingSample(int(steps), absorbed, int(hit) + 1 if absorbed else None,
                          (int(seed), int(trial_index)))
