"""The budget-allocation problem behind quantiles of mixtures.

Given branches ``(p_i, g_i)`` with step curves ``g_i``, the problem is

    max_q  min_{i : q_i != 1}  g_i(q_i)   subject to  sum_i p_i q_i <= tau,

solved for every ``tau`` at once by a greedy sweep: repeatedly advance the
branch(es) whose current piece is lowest and record the running minimum on
the budget interval consumed.  When every ``g_i`` is the quantile function of
some ``X_i`` the result is the quantile function of the mixture.
"""

import bisect
from dataclasses import dataclass

import numpy as np

from .distributions import PROB_TOL, VALUE_TOL, StepCurve, eval_curve
from .exceptions import DomainError
from .validation import check_tau, check_tau_array


class OptInstance:
    """Branch probabilities and curves of one allocation problem.

    Branches with zero probability are kept for indexing but ignored by the
    solver; they always receive ``q_i = 1``.
    """

    def __init__(self, branches, labels=None):
        branches = list(branches)
        self.labels = None if labels is None else tuple(labels)
        if not branches:
            raise DomainError("an allocation problem needs at least one branch")
        probs = np.array([float(p) for p, _ in branches])
        curves = [g for _, g in branches]
        if not all(isinstance(g, StepCurve) for g in curves):
            raise DomainError("branch curves must be StepCurve instances")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError("branch probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > PROB_TOL * max(1, probs.size):
            raise DomainError(f"branch probabilities must sum to 1, got {probs.sum()!r}")
        probs.setflags(write=False)
        self.probs = probs
        self.curves = tuple(curves)
        self.active = np.flatnonzero(probs > 0)
        self._sweep = None

    @property
    def n(self):
        return len(self.curves)

    @property
    def is_monotone(self):
        return all(self.curves[i].is_monotone for i in self.active)

    def sweep(self):
        if self._sweep is None:
            self._sweep = _Sweep(self.probs[self.active], [self.curves[i] for i in self.active])
        return self._sweep


@dataclass(frozen=True)
class Allocation:
    """Per-branch quantile levels ``q`` and the objective value they secure."""

    q: np.ndarray
    achieved_value: float


class _Sweep:
    """Full trace of the greedy sweep.

    Row ``r`` describes iteration ``r``: the running minimum ``u[r]`` is assigned
    on ``(tau_lo[r], tau_hi[r]]``; ``pos[r]`` are the branch positions before
    the iteration (1 for exhausted branches), ``nxt[r]`` the next breakpoint
    of each branch, and ``ties[r]`` marks the branches advanced.
    """

    def __init__(self, probs, curves):
        n = len(curves)
        breaks = [c.breaks.tolist() for c in curves]
        values = [c.values.tolist() for c in curves]
        sizes = [len(b) for b in breaks]
        k = [0] * n
        cur = [values[i][0] for i in range(n)]
        pos = [0.0] * n
        live = list(range(n))
        tau_tmp = 0.0
        lo, hi, us, pos_rows, nxt_rows, tie_rows = [], [], [], [], [], []
        while live:
            u = min(cur[i] for i in live)
            ties = [i for i in live if cur[i] <= u + VALUE_TOL]
            nxt = [breaks[i][k[i] + 1] if i in live and k[i] + 1 < sizes[i] else 1.0 for i in range(n)]
            pos_rows.append(list(pos))
            nxt_rows.append(nxt)
            mask = [False] * n
            tau_new = tau_tmp
            for i in ties:
                mask[i] = True
                tau_new += probs[i] * (nxt[i] - breaks[i][k[i]])
                pos[i] = nxt[i]
                if k[i] + 1 == sizes[i]:
                    live.remove(i)
                else:
                    k[i] += 1
                    cur[i] = values[i][k[i]]
            tie_rows.append(mask)
            lo.append(tau_tmp)
            hi.append(tau_new)
            us.append(u)
            tau_tmp = tau_new
        self.probs = np.asarray(probs, dtype=float)
        self.tau_lo = np.array(lo)
        self.tau_hi = np.array(hi)
        self.u = np.array(us)
        self.pos = np.array(pos_rows)
        self.nxt = np.array(nxt_rows)
        self.ties = np.array(tie_rows, dtype=bool)

    def curve(self):
        return StepCurve(self.tau_lo, self.u)

    def rows_for(self, taus):
        hi = self.tau_hi.tolist()
        return np.array([min(bisect.bisect_left(hi, t - PROB_TOL), len(hi) - 1) for t in np.atleast_1d(taus)])


def _merge_monotone(probs, curves):
    # With non-decreasing branches the sweep visits pieces in value order, so it
    # reduces to a stable sort of all pieces by value.
    values = np.concatenate([c.values for c in curves])
    mass = np.concatenate([p * c.widths for p, c in zip(probs, curves)])
    order = np.argsort(values, kind="stable")
    breaks = np.concatenate(([0.0], np.cumsum(mass[order])[:-1]))
    return StepCurve(breaks, values[order])


def solve_opt_full(inst, method="auto"):
    """Optimal value of the allocation problem as a step curve in ``tau``.

    ``method="sweep"`` runs the greedy sweep literally and handles arbitrary
    curves; ``method="merge"`` requires non-decreasing curves and sorts all
    pieces at once.  ``"auto"`` picks ``merge`` whenever it applies.
    """
    if not isinstance(inst, OptInstance):
        raise DomainError("solve_opt_full needs an OptInstance")
    probs = inst.probs[inst.active]
    curves = [inst.curves[i] for i in inst.active]
    if len(curves) == 1:
        return curves[0]
    if method == "auto":
        method = "merge" if inst.is_monotone else "sweep"
    if method == "merge":
        if not inst.is_monotone:
            raise DomainError("the merge method needs non-decreasing branch curves")
        return _merge_monotone(probs, curves)
    if method == "sweep":
        return inst.sweep().curve()
    raise ValueError(f"unknown method {method!r}")


def allocation_matrix(inst, taus, mode="equal"):
    """Allocations for many budgets at once; returns (q matrix, achieved values).

    ``mode="equal"`` spreads the leftover budget equally over all live branches,
    placing every live branch strictly inside its current piece.
    ``mode="ties"`` spends the leftover budget only on the branches sitting at
    the running minimum, in proportion to their piece masses, so that
    ``sum_i p_i q_i`` equals the budget exactly.
    """
    taus = check_tau_array(taus)
    sw = inst.sweep()
    rows = sw.rows_for(taus)
    pos = sw.pos[rows]
    nxt = sw.nxt[rows]
    probs = sw.probs
    eps = np.clip(taus - sw.tau_lo[rows], 0.0, None)[:, None]
    live = pos < 1.0
    if mode == "equal":
        n_live = np.maximum(live.sum(axis=1, keepdims=True), 1)
        step = eps / (n_live * probs[None, :])
        q = np.where(live, np.minimum(np.minimum(pos + step, nxt), 1.0), 1.0)
    elif mode == "ties":
        ties = sw.ties[rows]
        mass = np.where(ties, probs[None, :] * (nxt - pos), 0.0)
        total = mass.sum(axis=1, keepdims=True)
        theta = np.where(total > 0, np.minimum(eps / np.where(total > 0, total, 1.0), 1.0), 0.0)
        q = np.where(ties, pos + theta * (nxt - pos), pos)
    else:
        raise ValueError(f"unknown allocation mode {mode!r}")
    top = taus >= 1.0 - PROB_TOL
    q[top] = 1.0
    full = np.ones((taus.size, inst.n))
    full[:, inst.active] = np.clip(q, 0.0, 1.0)
    f = solve_opt_full(inst)
    return full, eval_curve(f, taus)


def extract_allocation(inst, tau, mode="equal"):
    """Optimal allocation ``q*`` at budget ``tau`` for the allocation problem.

    The sweep is replayed up to the iteration whose budget interval contains
    ``tau``; live branches sit at their current breakpoints and exhausted ones
    at 1, and the leftover budget is then distributed according to ``mode``
    (see :func:`allocation_matrix`).
    """
    tau = check_tau(tau)
    q, values = allocation_matrix(inst, [tau], mode=mode)
    return Allocation(q=q[0], achieved_value=float(values[0]))
