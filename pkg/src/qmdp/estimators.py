"""scikit-learn style wrappers around the solvers.

``fit`` takes an ``MdpSpec``; ``predict`` takes rows of ``(state index, tau)``
and returns the optimal value at period 0.  Fitted attributes end with an
underscore, so ``sklearn.utils.validation.check_is_fitted`` applies.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import solve_exp_utility, solve_expectation, solve_qbdp
from .cvar import GRID_SIZE, CvarPolicy, cvar_solve
from .distributions import eval_curve
from .dp import DEFAULT_VI_CAP, QuantilePolicy, SolveOptions, backward_solve, value_iterate
from .exceptions import DomainError
from .validation import check_mdp, check_queries


class QuantileMDP(BaseEstimator):
    """Optimal tau-quantile of cumulative reward, for every tau at once.

    Parameters
    ----------
    breakpoint_cap : int or None
        Compress value curves with more pieces than this (rounding down).
    vi_epsilon, vi_max_iters :
        Value-iteration controls for discounted models.
    n_jobs : int
        Threads per backward stage.
    """

    def __init__(self, breakpoint_cap=None, vi_epsilon=1e-6, vi_max_iters=10_000, n_jobs=1):
        self.breakpoint_cap = breakpoint_cap
        self.vi_epsilon = vi_epsilon
        self.vi_max_iters = vi_max_iters
        self.n_jobs = n_jobs

    def fit(self, spec, y=None):
        check_mdp(spec)
        opts = SolveOptions(self.breakpoint_cap, self.vi_epsilon, self.vi_max_iters, self.n_jobs)
        self.spec_ = spec
        self.table_ = backward_solve(spec, opts) if spec.is_finite else value_iterate(spec, opts)
        self.n_iter_ = len(self.table_.residuals)
        return self

    def predict(self, X):
        """v_0(s, tau) for each row of ``X``."""
        check_is_fitted(self, "table_")
        states, taus = check_queries(X, self.spec_.n_states)
        return np.array([eval_curve(self.table_.curve(0, s), t) for s, t in zip(states, taus)])

    def transform(self, X):
        """Per-action values at period 0; NaN where an action is not admissible."""
        check_is_fitted(self, "table_")
        states, taus = check_queries(X, self.spec_.n_states)
        out = np.full((states.size, self.spec_.n_actions), np.nan)
        for i, (s, t) in enumerate(zip(states, taus)):
            for a in self.table_.actions_at(0, s):
                out[i, a] = eval_curve(self.table_.action_curve(0, s, a), t)
        return out

    def frontier(self, state, taus):
        check_is_fitted(self, "table_")
        return eval_curve(self.table_.curve(0, self.spec_.state_index(state)), np.asarray(taus, float))

    def policy(self):
        check_is_fitted(self, "table_")
        return QuantilePolicy(self.table_, self.spec_)


class CvarMDP(BaseEstimator):
    """Optimal upper-tail CVaR of cumulative reward on a tau grid."""

    def __init__(self, grid_size=GRID_SIZE, method="exact"):
        self.grid_size = grid_size
        self.method = method

    def fit(self, spec, y=None):
        check_mdp(spec, horizon="finite")
        self.spec_ = spec
        self.table_ = cvar_solve(spec, self.grid_size, self.method)
        return self

    def predict(self, X):
        check_is_fitted(self, "table_")
        states, taus = check_queries(X, self.spec_.n_states, open_interval=True)
        return np.array([self.table_.value(s, t) for s, t in zip(states, taus)])

    def policy(self):
        check_is_fitted(self, "table_")
        return CvarPolicy(self.table_, self.spec_)


class _ScalarBaseline(BaseEstimator):
    def _solve(self, spec):
        raise NotImplementedError

    def fit(self, spec, y=None):
        check_mdp(spec)
        self.spec_ = spec
        self.solution_ = self._solve(spec)
        self.values_ = self.solution_.values
        return self

    def predict(self, states):
        """Period-0 values for an array of state indices."""
        check_is_fitted(self, "solution_")
        states = np.asarray(states).ravel()
        if states.size and (states.min() < 0 or states.max() >= self.spec_.n_states):
            raise DomainError("state index out of range")
        return self.values_[0, states.astype(int)]

    def policy(self):
        check_is_fitted(self, "solution_")
        return self.solution_.policy


class ExpectationMDP(_ScalarBaseline):
    """Risk-neutral optimum (expected cumulative reward)."""

    def _solve(self, spec):
        return solve_expectation(spec)


class NestedQuantileMDP(_ScalarBaseline):
    """Nested per-stage tau-quantile dynamic program."""

    def __init__(self, tau=0.5):
        self.tau = tau

    def _solve(self, spec):
        return solve_qbdp(spec, self.tau)


class ExpUtilityMDP(_ScalarBaseline):
    """Exponential-utility certainty equivalent; ``gamma_u > 0`` is risk averse."""

    def __init__(self, gamma_u=0.5):
        self.gamma_u = gamma_u

    def _solve(self, spec):
        return solve_exp_utility(spec, self.gamma_u)


__all__ = ["QuantileMDP", "CvarMDP", "ExpectationMDP", "NestedQuantileMDP", "ExpUtilityMDP", "DEFAULT_VI_CAP"]
