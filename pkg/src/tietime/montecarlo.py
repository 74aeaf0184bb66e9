"""Monte Carlo estimators for tie times.

T has finite mean but infinite variance for m = 3, so every interval here is
built from block means (median-of-means style) rather than a CLT standard
error.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidParameterError
from .process import DEFAULT_HORIZON, GapState

# ceil(8 * ln(1 / 0.05)): the usual median-of-means block count for 95 %.
DEFAULT_BLOCKS = 24
DEFAULT_HILL_FRACTION = 0.01
_HILL_CURVE_FRACTIONS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2)
_MIN_HILL_K = 10


class InfiniteMeanWarning(UserWarning):
    """E[T] is infinite (m = 2); a sample mean does not estimate anything."""


@dataclass
class SimulationBatch:
    trial_start: int
    steps: np.ndarray
    absorbed: np.ndarray
    hit_index: np.ndarray  # 1-based, 0 when not absorbed
    final_gaps: np.ndarray

    @property
    def truncated(self) -> int:
        return int(np.count_nonzero(~self.absorbed))


@dataclass
class EstimateSummary:
    trials: int
    truncated: int
    mean: float
    mom_ci_low: float
    mom_ci_high: float
    block_count: int
    horizon: int
    median_of_means: float = math.nan
    reference: Optional[float] = None
    warnings: list = field(default_factory=list)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.mom_ci_high - self.mom_ci_low)

    @property
    def biased_low(self) -> bool:
        return self.truncated > 0

    def consistent_with(self, value: float, widths: float = 4.0) -> bool:
        return abs(self.mean - value) <= widths * self.half_width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["half_width"] = self.half_width
        d["biased_low"] = self.biased_low
        return d


@dataclass
class TailCurve:
    thresholds: list
    survival: list
    hill_index: Optional[float]
    hill_fraction: float
    hill_k: int = 0
    hill_curve: list = field(default_factory=list)
    trials: int = 0
    truncated: int = 0
    diagnostic: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LimitRow:
    far_value: int
    gaps: tuple
    estimate: EstimateSummary


@dataclass
class LimitTable:
    m: int
    i: int
    limit: float
    rows: list

    def to_dict(self) -> dict:
        return {
            "m": self.m, "i": self.i, "limit": self.limit,
            "rows": [{"far_value": r.far_value, "gaps": list(r.gaps),
                      **r.estimate.to_dict()} for r in self.rows],
        }


@dataclass
class StoppedProduct:
    n: int
    estimate: float
    survival: float
    bound: float


@dataclass
class GapWaiting:
    m: int
    trials: int
    mean_gap: float
    expected_mean_gap: float
    second_moments: dict  # N -> (empirical, exact)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "trials": self.trials, "mean_gap": self.mean_gap,
            "expected_mean_gap": self.expected_mean_gap,
            "second_moments": [{"N": n, "empirical": e, "exact": x}
                               for n, (e, x) in sorted(self.second_moments.items())],
        }


def _chunks(trials: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, trials))
    edges = np.linspace(0, trials, workers + 1).astype(np.int64)
    return [(int(a), int(b - a)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def simulate(state: GapState, trials: int, seed: int, horizon: int = DEFAULT_HORIZON,
             pair: Optional[int] = None, workers: int = 1, trial_start: int = 0) -> SimulationBatch:
    """Run trials ``trial_start .. trial_start + trials - 1``.

    Output is identical for any ``workers``: each trial only depends on its
    own index.
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    if not 0 <= seed < 2**64:
        raise InvalidParameterError(f"seed must be in [0, 2**64), got {seed}")
    if pair is None:
        watched, p = range(state.m - 1), -1
    else:
        if not 1 <= pair <= state.m - 2:
            raise InvalidParameterError(f"pair index must be in 1..{state.m - 2}, got {pair}")
        watched, p = (pair - 1, pair), pair - 1
    if any(state.gaps[i] <= 0 for i in watched):
        raise InvalidParameterError(f"state {state.gaps} is tied")

    gaps = state.as_array()

    def run(chunk):
        start, count = chunk
        return _kernels.simulate_trials(gaps, state.m, np.uint64(seed), trial_start + start,
                                        count, horizon, p)

    chunks = _chunks(trials, workers)
    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    steps = np.concatenate([q[0] for q in parts])
    absorbed = np.concatenate([q[1] for q in parts])
    hit = np.concatenate([q[2] for q in parts]) + 1
    final = np.concatenate([q[3] for q in parts])
    return SimulationBatch(trial_start, steps, absorbed, hit, final)


def _median_interval_ranks(blocks: int, level: float = 0.95) -> tuple[int, int]:
    """1-based ranks (j, k) with P(Y_(j) <= median <= Y_(k)) >= level."""
    alpha = (1.0 - level) / 2.0
    cdf = 0.0
    j = 0
    for r in range(blocks + 1):
        cdf += math.comb(blocks, r) / 2.0**blocks
        if cdf > alpha:
            break
        j = r + 1
    if j < 1:
        return 1, blocks
    return j, blocks - j + 1


def median_of_means(x: np.ndarray, blocks: int, level: float = 0.95):
    """Return (median of block means, interval half-width).

    Blocks are contiguous in trial order. The half-width is half the spread
    between the block-mean order statistics that bracket the block-mean
    median at ``level`` (distribution-free binomial ranks).
    """
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= blocks <= len(x):
        raise InvalidParameterError(f"need 1 <= blocks <= trials, got {blocks} for {len(x)}")
    means = np.sort(np.array([b.mean() for b in np.array_split(x, blocks)]))
    j, k = _median_interval_ranks(blocks, level)
    return float(np.median(means)), 0.5 * float(means[k - 1] - means[j - 1])


def summarize(x: np.ndarray, truncated: int, horizon: int, blocks: int,
              reference: Optional[float] = None, notes=()) -> EstimateSummary:
    mean = float(np.mean(x))
    mom, hw = median_of_means(x, blocks)
    notes = list(notes)
    if truncated:
        notes.append(f"{truncated} trials hit the horizon {horizon}; mean is biased low")
    return EstimateSummary(len(x), truncated, mean, mean - hw, mean + hw, blocks,
                           horizon, mom, reference, notes)


def expected_T_upper_bound(gaps: Sequence[int]) -> int:
    """m * min_i a_i a_{i+1}: exact for m = 3, an upper bound for m >= 4."""
    m = len(gaps) + 1
    if m < 3:
        raise InvalidParameterError("no finite bound for m = 2")
    return m * min(a * b for a, b in zip(gaps, gaps[1:]))


def estimate_expected_T(state: GapState, trials: int, seed: int,
                        horizon: int = DEFAULT_HORIZON, blocks: int = DEFAULT_BLOCKS,
                        workers: int = 1, batch: Optional[SimulationBatch] = None) -> EstimateSummary:
    if trials < blocks:
        raise InvalidParameterError(f"trials ({trials}) must be >= blocks ({blocks})")
    notes = []
    if state.m == 2:
        msg = "E[T] is infinite for m = 2; the sample mean is meaningless, use the tail estimator"
        warnings.warn(msg, InfiniteMeanWarning, stacklevel=2)
        notes.append(msg)
        reference = None
    else:
        reference = 3.0 * state.gaps[0] * state.gaps[1] if state.m == 3 else None
    if batch is None:
        batch = simulate(state, trials, seed, horizon, workers=workers)
    return summarize(batch.steps, batch.truncated, horizon, blocks, reference, notes)


def estimate_expected_T_pair(state: GapState, i: int, trials: int, seed: int,
                             horizon: int = DEFAULT_HORIZON, blocks: int = DEFAULT_BLOCKS,
                             workers: int = 1) -> EstimateSummary:
    """Estimate E[T_{i,i+1}]; ``reference`` carries m * a_i * a_{i+1}."""
    if trials < blocks:
        raise InvalidParameterError(f"trials ({trials}) must be >= blocks ({blocks})")
    batch = simulate(state, trials, seed, horizon, pair=i, workers=workers)
    reference = float(state.m * state.gaps[i - 1] * state.gaps[i])
    return summarize(batch.steps, batch.truncated, horizon, blocks, reference)


def check_limit_theorem(m: int, i: int, fixed_pair: tuple[int, int],
                        far_values: Sequence[int], trials: int, seed: int,
                        horizon: int = DEFAULT_HORIZON, blocks: int = DEFAULT_BLOCKS,
                        workers: int = 1) -> LimitTable:
    """E[T] with gaps i, i+1 held at ``fixed_pair`` and every other gap at v."""
    if m < 4:
        raise InvalidParameterError(f"limit check needs m >= 4, got {m}")
    if not 1 <= i <= m - 2:
        raise InvalidParameterError(f"pair index must be in 1..{m - 2}, got {i}")
    limit = float(m * fixed_pair[0] * fixed_pair[1])
    rows = []
    for v in far_values:
        gaps = [int(v)] * (m - 1)
        gaps[i - 1], gaps[i] = fixed_pair
        est = estimate_expected_T(GapState(m, tuple(gaps)), trials, seed, horizon,
                                  blocks, workers)
        est.reference = limit
        rows.append(LimitRow(int(v), tuple(gaps), est))
    return LimitTable(m, i, limit, rows)


def hill_estimator(x: np.ndarray, k: int) -> Optional[float]:
    """Hill tail index from the ``k`` largest values of ``x``.

    Returns None if the threshold order statistic is not positive or the top
    ``k + 1`` values are all equal.
    """
    if not 1 <= k < len(x):
        return None
    top = np.sort(np.asarray(x, dtype=np.float64))[::-1][: k + 1]
    if top[k] <= 0:
        return None
    s = float(np.sum(np.log(top[:k] / top[k])))
    if s <= 0.0:
        return None
    return k / s


def estimate_tail(state: GapState, thresholds: Sequence[int], trials: int, seed: int,
                  hill_fraction: float = DEFAULT_HILL_FRACTION,
                  horizon: int = DEFAULT_HORIZON, workers: int = 1,
                  batch: Optional[SimulationBatch] = None) -> TailCurve:
    thresholds = [int(t) for t in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidParameterError("thresholds must be strictly increasing")
    if not 0.0 < hill_fraction <= 0.2:
        raise InvalidParameterError(f"hill_fraction must be in (0, 0.2], got {hill_fraction}")
    if batch is None:
        batch = simulate(state, trials, seed, horizon, workers=workers)
    steps = batch.steps
    n = len(steps)
    ordered = np.sort(steps)
    survival = [float(n - np.searchsorted(ordered, t, side="right")) / n for t in thresholds]

    diagnostic = None
    k = int(hill_fraction * n)
    index = None
    if k < _MIN_HILL_K:
        diagnostic = f"only {k} exceedances in the top {hill_fraction:.3g} fraction; Hill index omitted"
    else:
        index = hill_estimator(steps, k)
        if index is None:
            diagnostic = "degenerate top order statistics; Hill index omitted"
        elif batch.truncated:
            # censored values sit at the horizon, i.e. at the very top
            diagnostic = (f"{batch.truncated} censored values at the horizon lie in the "
                          "Hill window; index is biased high")
    curve = []
    for f in _HILL_CURVE_FRACTIONS:
        kk = int(f * n)
        if kk >= _MIN_HILL_K:
            curve.append((kk, hill_estimator(steps, kk)))
    return TailCurve(thresholds, survival, index, hill_fraction, k, curve, n,
                     batch.truncated, diagnostic)


def estimate_stopped_product(state: GapState, n_list: Sequence[int], trials: int,
                             seed: int, workers: int = 1) -> list[StoppedProduct]:
    """E[A(T_n) B(T_n)] with T_n = min(T, n), for each n (m = 3 only).

    Every n reuses the same trial indices, so the estimates come from the
    same set of paths stopped at different times.
    """
    if state.m != 3:
        raise InvalidParameterError(f"stopped product is defined for m = 3, got m = {state.m}")
    a, b = state.gaps
    scale = (a * b * (a + b)) ** (4.0 / 3.0)
    out = []
    for n in n_list:
        n = int(n)
        if n == 0:
            out.append(StoppedProduct(0, float(a * b), 1.0, scale))
            continue
        batch = simulate(state, trials, seed, horizon=n, workers=workers)
        prod = batch.final_gaps[:, 0] * batch.final_gaps[:, 1]
        prod[batch.absorbed] = 0
        surv = float(np.mean(~batch.absorbed))
        out.append(StoppedProduct(n, float(np.mean(prod)), surv, scale * surv ** (1.0 / 3.0)))
    return out


def negative_binomial_second_moment(m: int, n_gaps: int) -> float:
    return m * n_gaps * (m * n_gaps + m - 3) / 9.0


def estimate_gap_waiting(m: int, trials: int, seed: int, n_values: Sequence[int] = (1, 2, 5),
                         pair: int = 1, workers: int = 1) -> GapWaiting:
    """Waiting times between moves of the pair (A_i, A_{i+1}).

    For each N, ``trials`` independent sums G_1 + ... + G_N are drawn (the
    trial counter is offset per N so the streams do not overlap).
    """
    if m < 4:
        raise InvalidParameterError(f"pair waiting times need m >= 4, got {m}")
    if not 1 <= pair <= m - 2:
        raise InvalidParameterError(f"pair index must be in 1..{m - 2}, got {pair}")
    if not 0 <= seed < 2**64:
        raise InvalidParameterError(f"seed must be in [0, 2**64), got {seed}")
    n_values = sorted(set(int(n) for n in n_values) | {1})

    def sums(n_gaps, offset):
        chunks = _chunks(trials, workers)

        def run(chunk):
            start, count = chunk
            return _kernels.pair_waiting_sums(m, pair - 1, n_gaps, np.uint64(seed), offset + start,
                                              count)

        if len(chunks) == 1:
            return run(chunks[0])
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            return np.concatenate(list(pool.map(run, chunks)))

    second = {}
    mean_gap = math.nan
    for q, n_gaps in enumerate(n_values):
        s = sums(n_gaps, q * trials).astype(np.float64)
        if n_gaps == 1:
            mean_gap = float(s.mean())
        second[n_gaps] = (float(np.mean(s * s)), negative_binomial_second_moment(m, n_gaps))
    return GapWaiting(m, trials, mean_gap, m / 3.0, second)


def write_samples_csv(path, batch: SimulationBatch) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "T", "absorbed", "hit_index"])
        for j in range(len(batch.steps)):
            ok = bool(batch.absorbed[j])
            w.writerow([batch.trial_start + j, int(batch.steps[j]), int(ok),
                        int(batch.hit_index[j]) if ok else ""])
