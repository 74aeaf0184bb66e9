"""Exact rational Gauss-Jordan elimination on sparse rows.

Rows are dicts ``{column: Fraction}``. Elimination is incremental: each new
row is reduced against the pivot rows found so far, and pivot rows are kept
fully reduced against each other. Every row carries the combination of
original equations that produced it, so an inconsistent system yields a
certificate ``y`` with ``y^T A = 0`` and ``y^T b != 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence


@dataclass
class LinearSolution:
    consistent: bool
    ncols: int
    solution: Optional[list] = None  # free variables set to 0
    pivots: dict = field(default_factory=dict)  # column -> reduced row
    free: list = field(default_factory=list)
    certificate: Optional[dict] = None  # equation index -> weight
    rank: int = 0

    def nullspace(self) -> list[list[Fraction]]:
        basis = []
        for j in self.free:
            v = [Fraction(0)] * self.ncols
            v[j] = Fraction(1)
            for c, (row, _, _) in self.pivots.items():
                coef = row.get(j)
                if coef:
                    v[c] = -coef
            basis.append(v)
        return basis


def _axpy(target: dict, scale, source: Mapping) -> None:
    # target += scale * source, dropping exact zeros
    for k, v in source.items():
        nv = target.get(k, 0) + scale * v
        if nv:
            target[k] = nv
        else:
            target.pop(k, None)


def solve(rows: Sequence[Mapping[int, Fraction]], rhs: Sequence, ncols: int,
          certificate: bool = True) -> LinearSolution:
    """Solve ``A x = b`` exactly; ``rows[r]`` is the sparse r-th row of A."""
    if len(rows) != len(rhs):
        raise ValueError("row count and rhs length differ")
    pivots: dict[int, tuple[dict, Fraction, dict]] = {}
    for r, (src, b) in enumerate(zip(rows, rhs)):
        row = {c: Fraction(v) for c, v in src.items() if v}
        b = Fraction(b)
        combo = {r: Fraction(1)} if certificate else {}
        for c in [c for c in row if c in pivots]:
            f = row.get(c)
            if not f:
                continue
            prow, pb, pcombo = pivots[c]
            _axpy(row, -f, prow)
            b -= f * pb
            if certificate:
                _axpy(combo, -f, pcombo)
        if not row:
            if b != 0:
                return LinearSolution(False, ncols, certificate=combo if certificate else None,
                                      pivots=pivots, rank=len(pivots))
            continue
        c = min(row)
        inv = 1 / row[c]
        row = {k: v * inv for k, v in row.items()}
        b *= inv
        if certificate:
            combo = {k: v * inv for k, v in combo.items()}
        for pc, (prow, pb, pcombo) in list(pivots.items()):
            f = prow.get(c)
            if f:
                _axpy(prow, -f, row)
                pb -= f * b
                if certificate:
                    _axpy(pcombo, -f, combo)
                pivots[pc] = (prow, pb, pcombo)
        pivots[c] = (row, b, combo)
    x = [Fraction(0)] * ncols
    for c, (_, b, _) in pivots.items():
        x[c] = b
    free = [j for j in range(ncols) if j not in pivots]
    return LinearSolution(True, ncols, x, pivots, free, None, len(pivots))


def check_certificate(rows: Sequence[Mapping[int, Fraction]], rhs: Sequence,
                      weights: Mapping[int, Fraction]) -> Fraction:
    """Return y^T b after asserting y^T A == 0 exactly."""
    acc: dict = {}
    for r, w in weights.items():
        _axpy(acc, Fraction(w), rows[r])
    if acc:
        raise AssertionError(f"certificate leaves nonzero columns {sorted(acc)[:5]}")
    return sum((Fraction(w) * Fraction(rhs[r]) for r, w in weights.items()), Fraction(0))


def solve_dense(a: Sequence[Sequence], b: Sequence) -> list[Fraction]:
    """Unique solution of a square nonsingular system."""
    rows = [{j: v for j, v in enumerate(r) if v} for r in a]
    sol = solve(rows, b, len(a), certificate=False)
    if not sol.consistent or sol.free:
        raise ValueError("system is singular")
    return sol.solution
