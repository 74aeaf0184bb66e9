"""Tie times of a random competition among m teams.

Each round one of ``m`` teams, chosen uniformly, scores a point. The package
simulates the first time two scores coincide, solves the expected tie time
on bounded lattices, verifies the martingale identities behind the known
bounds in exact arithmetic, and manipulates the power series that a perfect
time martingale would have to solve.
"""

from .errors import (AlreadyTiedError, ConvergenceError, InvalidParameterError,
                     TieTimeError, UnsupportedAnsatzError)
from .martingale import (DriftReport, PhiValue, StatePolynomial, drift, drift_polynomial, phi,
                         verify_H_drift, verify_min_supermartingale, verify_moment_identities,
                         verify_pair_martingales, verify_phi_supermartingale,
                         verify_time_squared_martingale)
from .montecarlo import (EstimateSummary, TailCurve, check_limit_theorem, estimate_expected_T,
                         estimate_expected_T_pair, estimate_gap_waiting,
                         estimate_stopped_product, estimate_tail, hill_estimator,
                         median_of_means, simulate)
from .process import (GapState, StepDelta, StoppingSample, apply_step, gaps_from_scores,
                      sample_T, sample_T_pair, step_distribution)
from .series import (LinearFamilyResult, MultiSeries, PhiTable, apply_S, check_commutativity,
                     crosscheck_with_drift, phi_coeff, residual_gamma_form, residual_perfect,
                     solve_gamma_family, solve_linear_family)
from .solver import (SolveResult, SolverGrid, bracket_expected_T, closed_form_m3,
                     solve_expected_T, solve_second_moment_truncated)

__version__ = "0.1.0"
