"""Risk-neutral, nested-quantile and exponential-utility baseline solvers.

Each returns scalar values per (period, state) and a deterministic Markov
policy, which the simulator can run alongside augmented-state policies.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .distributions import DiscreteDistribution, quantile_of
from .exceptions import ConvergenceError, DomainError
from .validation import check_mdp, check_tau


class MarkovPolicy:
    """``actions[k, s]`` with ``k`` the period (a single row for stationary policies)."""

    augmented = False

    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=int)

    def action(self, t, s, tau=None):
        k = min(t, self.actions.shape[0] - 1)
        return int(self.actions[k, s])

    def next_tau(self, t, s, tau, a, s2, reward):
        return tau

    def __call__(self, t, s):
        return self.action(t, s)


@dataclass
class BaselineSolution:
    values: np.ndarray
    policy: MarkovPolicy
    name: str

    def value(self, s, t=0):
        return float(self.values[min(t, self.values.shape[0] - 1), s])


def _outcomes(spec, t, s, a):
    """Arrays (probs, successors, rewards) over (successor, reward outcome) pairs."""
    row = spec.row(t, s, a)
    p, nxt, r = [], [], []
    for s2 in np.flatnonzero(row > 0):
        for x, q in spec.reward_dist(t, s, a, s2).atoms:
            p.append(row[s2] * q)
            nxt.append(s2)
            r.append(x)
    return np.array(p), np.array(nxt, dtype=int), np.array(r)


def _argmax_first(vals, tol=1e-12):
    vals = np.asarray(vals)
    return int(np.argmax(vals >= vals.max() - tol * (1.0 + abs(vals.max()))))


def _backward(spec, stage_value):
    """Generic backward induction with ``stage_value(p, rewards, next_values) -> float``."""
    T, S = spec.T, spec.n_states
    V = np.zeros((T + 1, S))
    V[T] = spec.terminal
    pol = np.zeros((T, S), dtype=int)
    for t in range(T - 1, -1, -1):
        for s in range(S):
            acts = spec.allowed(t, s)
            vals = []
            for a in acts:
                p, nxt, r = _outcomes(spec, t, s, a)
                vals.append(stage_value(p, r, V[t + 1, nxt]))
            j = _argmax_first(vals)
            pol[t, s] = acts[j]
            V[t, s] = vals[j]
    return V, pol


def _fixed_point(spec, stage_value, tol, max_iters):
    gamma, S = float(spec.gamma), spec.n_states
    V = np.zeros(S)
    for _ in range(max_iters):
        new = np.empty(S)
        pol = np.zeros(S, dtype=int)
        for s in range(S):
            acts = spec.allowed(0, s)
            vals = []
            for a in acts:
                p, nxt, r = _outcomes(spec, 0, s, a)
                vals.append(stage_value(p, r, gamma * V[nxt]))
            j = _argmax_first(vals)
            pol[s], new[s] = acts[j], vals[j]
        residual = np.abs(new - V).max()
        V = new
        if residual <= tol * (1 - gamma) / (2 * gamma):
            return V[None, :], pol[None, :]
    raise ConvergenceError("baseline value iteration did not converge", residual)


def _solve(spec, stage_value, name, tol=1e-9, max_iters=100_000):
    check_mdp(spec)
    if spec.is_finite:
        V, pol = _backward(spec, stage_value)
    else:
        V, pol = _fixed_point(spec, stage_value, tol, max_iters)
    return BaselineSolution(V, MarkovPolicy(pol), name)


def solve_expectation(spec, tol=1e-9):
    """Risk-neutral optimum by backward induction (or value iteration when discounted)."""
    return _solve(spec, lambda p, r, v: float(np.dot(p, r + v)), "mdp", tol)


def solve_qbdp(spec, tau, tol=1e-9):
    """Nested per-stage tau-quantile dynamic program.

    Terminal rewards sit inside the innermost quantile.
    """
    tau = check_tau(tau, open_interval=True)

    def stage(p, r, v):
        return quantile_of(DiscreteDistribution(r + v, p / p.sum()), tau)

    return _solve(spec, stage, f"qbdp_{tau:g}", tol)


def solve_exp_utility(spec, gamma_u):
    """Exponential-utility dynamic program on certainty equivalents.

    ``CE_t(s) = max_a -(1/g) log E[exp(-g (r + CE_{t+1}(s')))]``; ``g > 0`` is
    risk averse and ``g < 0`` risk seeking.
    """
    gamma_u = float(gamma_u)
    if gamma_u == 0.0 or not np.isfinite(gamma_u):
        raise DomainError("gamma_u must be a non-zero finite number")
    check_mdp(spec, horizon="finite")

    def stage(p, r, v):
        ce = -logsumexp(-gamma_u * (r + v), b=p) / gamma_u
        if not np.isfinite(ce):
            raise DomainError("exponential utility overflowed; rescale the rewards or reduce |gamma_u|")
        return float(ce)

    return _solve(spec, stage, f"util_{gamma_u:g}")
