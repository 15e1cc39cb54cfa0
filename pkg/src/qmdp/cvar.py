"""Dynamic programming for the upper-tail CVaR objective.

Write ``H(tau) = (1 - tau) * CVaR_tau(X) = int_tau^1 Q_q(X) dq`` for the tail
integral.  For a mixture over successors the tail of mass ``1 - tau`` is
assembled from branch tails, so

    H_t(s, tau) = max_a  max_{sum_i p_i q_i = tau}  sum_i p_i [H_{t+1}(s_i, q_i) + (1 - q_i) r_i].

Two solvers are offered.

``method="exact"`` (default) keeps, per (t, s), the return distributions that
are on the upper envelope of the tail integrals somewhere in [0, 1].  Each is
concave in ``tau`` and the inner maximisation for a fixed choice per branch is
a sort-merge, so composing branches reduces to combining these candidate sets
and pruning the ones that never reach the envelope.

``method="greedy"`` runs the companion-quantile recursion: the allocation is
read off the allocation problem built from the companion curves ``u'`` and the
next-stage ``u`` is linearly interpolated on the grid.  It is cheap but only
exact while every ``H_{t+1}`` stays concave; action switches can break that.
"""

import csv
import io
import json
from collections import namedtuple

import numpy as np

from .distributions import (
    PROB_TOL,
    VALUE_TOL,
    DiscreteDistribution,
    StepCurve,
    dist_to_curve,
    eval_curve,
    eval_right,
)
from .exceptions import DomainError
from .opt import OptInstance, allocation_matrix, extract_allocation, solve_opt_full
from .validation import check_mdp, check_tau

GRID_SIZE = 999

Component = namedtuple("Component", "dist action children")
Branch = namedtuple("Branch", "prob successor reward")


def tau_grid(grid_size=GRID_SIZE):
    """Interior grid ``(j + 1) / (G + 1)``, j = 0..G-1."""
    if int(grid_size) < 2:
        raise DomainError(f"grid size must be at least 2, got {grid_size}")
    G = int(grid_size)
    return (np.arange(G) + 1.0) / (G + 1.0)


def tail_integral(dist, tau):
    """``int_tau^1 Q_q(X) dq`` for ``X ~ dist``; vectorised over ``tau``."""
    lo = np.concatenate(([0.0], dist.cdf[:-1]))
    t = np.asarray(tau, dtype=float)[..., None]
    w = np.clip(dist.cdf - np.maximum(t, lo), 0.0, None)
    return (w * dist.values).sum(axis=-1)


def expanded_branches(spec, t, s, a):
    """One branch per (successor, reward outcome) with positive probability."""
    out = []
    row = spec.row(t, s, a)
    for s2 in np.flatnonzero(row > 0):
        w = spec.reward_dist(t, s, a, s2)
        for x, p in w.atoms:
            out.append(Branch(row[s2] * p, int(s2), x))
    total = sum(b.prob for b in out)
    return [Branch(b.prob / total, b.successor, b.reward) for b in out]


# -- envelope of tail integrals -----------------------------------------------------


def _canon_measure(v, m):
    order = np.argsort(v, kind="stable")
    v, m = v[order], m[order]
    if v.size > 1:
        starts = np.flatnonzero(np.concatenate(([True], np.diff(v) > VALUE_TOL)))
        v, m = v[starts], np.add.reduceat(m, starts)
    keep = m > PROB_TOL
    return v[keep], m[keep]


def _top_knots(v, m):
    # Tail integral as a function of the top mass x: concave, through (0, 0).
    v, m = v[::-1], m[::-1]
    return np.concatenate(([0.0], np.cumsum(m))), np.concatenate(([0.0], np.cumsum(v * m)))


def _envelope_keep(measures, total):
    """Indices of measures whose top-mass integral is on the upper envelope.

    A measure is kept when it attains the envelope on an interval of positive
    length; ties go to the larger slope, then to the lower index.
    """
    if len(measures) == 1:
        return [0]
    knots = [_top_knots(v, m) for v, m in measures]
    xs = np.unique(np.concatenate([k[0] for k in knots] + [[0.0, total]]))
    xs = xs[xs <= total + PROB_TOL]
    vals = np.array([np.interp(xs, X, Y) for X, Y in knots])
    scale = 1.0 + np.abs(vals).max()
    vtol = 1e-10 * scale
    keep = np.zeros(len(measures), dtype=bool)
    for j in range(xs.size - 1):
        h = xs[j + 1] - xs[j]
        if h <= PROB_TOL:
            continue
        a = vals[:, j]
        slope = (vals[:, j + 1] - a) / h
        cand = np.flatnonzero(a >= a.max() - vtol)
        cur = cand[np.lexsort((cand, -slope[cand]))[0]]
        z = 0.0
        while True:
            steeper = np.flatnonzero(slope > slope[cur] + vtol / h)
            if steeper.size:
                cross = (a[cur] - a[steeper]) / (slope[steeper] - slope[cur])
                cross = np.maximum(cross, z)
                zmin = cross.min()
            if not steeper.size or zmin >= h - PROB_TOL:
                if h - z > PROB_TOL:
                    keep[cur] = True
                break
            if zmin - z > PROB_TOL:
                keep[cur] = True
            nxt = steeper[cross <= zmin + PROB_TOL]
            cur = nxt[np.lexsort((nxt, -slope[nxt]))[0]]
            z = zmin
    return np.flatnonzero(keep).tolist()


def _combine(branches, successor_sets):
    """Candidate (values, masses, children) for one action, pruned stage by stage."""
    combos = [(np.zeros(0), np.zeros(0), ())]
    mass = 0.0
    for b in branches:
        mass += b.prob
        seen = {}
        for v, m, ch in combos:
            for k, comp in enumerate(successor_sets[b.successor]):
                nv, nm = _canon_measure(
                    np.concatenate((v, comp.dist.values + b.reward)),
                    np.concatenate((m, b.prob * comp.dist.probs)),
                )
                key = (tuple(np.round(nv, 9)), tuple(np.round(nm, 12)))
                if key not in seen:
                    seen[key] = (nv, nm, ch + (k,))
        items = list(seen.values())
        combos = [items[i] for i in _envelope_keep([(v, m) for v, m, _ in items], mass)]
    return combos


def _prune_components(comps):
    measures = [(c.dist.values, c.dist.probs) for c in comps]
    return [comps[i] for i in _envelope_keep(measures, 1.0)]


def _best_component(comps, tau):
    h = np.array([tail_integral(c.dist, tau) for c in comps])
    return int(np.argmax(h >= h.max() - 1e-10 * (1.0 + abs(h.max()))))


def _envelope_value(comps, taus):
    h = np.array([tail_integral(c.dist, taus) for c in comps])
    return h.max(axis=0)


def _splice(cell_curves, edges):
    """Step curve equal to ``cell_curves[j]`` on ``(edges[j], edges[j + 1]]``."""
    breaks, values = [], []
    for g, lo, hi in zip(cell_curves, edges[:-1], edges[1:]):
        breaks.append(lo)
        values.append(eval_right(g, lo) if lo > 0 else eval_curve(g, 0.0))
        inner = (g.breaks > lo + PROB_TOL) & (g.breaks < hi - PROB_TOL)
        breaks.extend(g.breaks[inner].tolist())
        values.extend(g.values[inner].tolist())
    return StepCurve(breaks, values)


class CvarTable:
    """CVaR values ``u`` on the interior grid and companion quantile curves ``u'``.

    ``u[(t, s)]`` and ``u_action[(t, s, a)]`` are arrays over ``grid``;
    ``u_quant`` and ``u_quant_action`` are step curves.
    """

    def __init__(self, spec, grid, method):
        self.states = spec.states
        self.actions = spec.actions
        self.T = spec.T
        self.grid = grid
        self.method = method
        self.u, self.u_quant = {}, {}
        self.u_action, self.u_quant_action = {}, {}
        self.branches = {}
        # exact method
        self.components, self.components_action = {}, {}
        # greedy method
        self.knots = np.concatenate(([0.0], grid, [1.0]))
        self.H, self.H_action, self.instances = {}, {}, {}

    def value(self, s, tau, t=0):
        """u_t(s, tau) for tau in (0, 1)."""
        tau = check_tau(tau, open_interval=True)
        if t == self.T:
            return float(self.u_quant[(t, s)].values[0])
        if self.method == "exact":
            return float(_envelope_value(self.components[(t, s)], tau)) / (1.0 - tau)
        return float(np.interp(tau, self.knots, self.H[(t, s)])) / (1.0 - tau)

    def quantile_value(self, s, tau, t=0):
        return eval_curve(self.u_quant[(t, s)], tau)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "state", "tau", "u", "u_quant"])
        for (t, s) in sorted(self.u):
            uq = eval_curve(self.u_quant[(t, s)], self.grid)
            for tau, u, q in zip(self.grid, self.u[(t, s)], uq):
                w.writerow([t, self.states[s], repr(float(tau)), repr(float(u)), repr(float(q))])
        return buf.getvalue()

    def to_dict(self):
        uq = {k: eval_curve(c, self.grid) for k, c in self.u_quant.items()}
        return {
            "kind": "cvar",
            "method": self.method,
            "states": list(self.states),
            "T": self.T,
            "grid": self.grid.tolist(),
            "u": [{"t": t, "s": self.states[s], "values": v.tolist()} for (t, s), v in sorted(self.u.items())],
            "u_quant": [{"t": t, "s": self.states[s], "values": v.tolist()} for (t, s), v in sorted(uq.items())],
        }

    def save(self, path, fmt="csv"):
        with open(path, "w", newline="") as fh:
            if fmt == "json":
                json.dump(self.to_dict(), fh, indent=1)
                fh.write("\n")
            else:
                fh.write(self.to_csv())


def cvar_solve(spec, grid_size=GRID_SIZE, method="exact"):
    """Optimal CVaR values for a finite-horizon model."""
    check_mdp(spec, horizon="finite")
    grid = tau_grid(grid_size)
    if method not in ("exact", "greedy"):
        raise ValueError(f"unknown method {method!r}")
    table = CvarTable(spec, grid, method)
    T, S = spec.T, spec.n_states
    edges = np.concatenate(([0.0], grid[:-1], [1.0]))
    for s in range(S):
        r = float(spec.terminal[s])
        table.u[(T, s)] = np.full(grid.size, r)
        table.u_quant[(T, s)] = StepCurve.constant(r)
        table.components[(T, s)] = [Component(DiscreteDistribution.point_mass(r), None, ())]
        table.H[(T, s)] = (1.0 - table.knots) * r
    for t in range(T - 1, -1, -1):
        for s in range(S):
            acts = spec.allowed(t, s).tolist()
            for a in acts:
                table.branches[(t, s, a)] = expanded_branches(spec, t, s, a)
            if method == "exact":
                _exact_state(table, t, s, acts, edges)
            else:
                _greedy_state(table, t, s, acts, edges)
    return table


def _exact_state(table, t, s, acts, edges):
    grid = table.grid
    nxt = {s2: table.components[(t + 1, s2)] for s2 in range(len(table.states))}
    union = []
    for a in acts:
        combos = _combine(table.branches[(t, s, a)], nxt)
        comps = [Component(DiscreteDistribution(v, m / m.sum()), a, ch) for v, m, ch in combos]
        table.components_action[(t, s, a)] = comps
        table.u_action[(t, s, a)] = _envelope_value(comps, grid) / (1.0 - grid)
        table.u_quant_action[(t, s, a)] = _companion(comps, grid, edges)
        union.extend(comps)
    seen, unique = [], []
    for c in union:
        if not any(c.dist == d for d in seen):
            seen.append(c.dist)
            unique.append(c)
    comps = _prune_components(unique)
    table.components[(t, s)] = comps
    table.u[(t, s)] = _envelope_value(comps, grid) / (1.0 - grid)
    table.u_quant[(t, s)] = _companion(comps, grid, edges)


def _companion(comps, grid, edges):
    best = [_best_component(comps, tau) for tau in grid]
    return _splice([dist_to_curve(comps[j].dist) for j in best], edges)


def _greedy_state(table, t, s, acts, edges):
    knots = table.knots
    taus = knots[:-1]  # 0 and the interior grid
    per_action = {}
    for a in acts:
        br = table.branches[(t, s, a)]
        inst = OptInstance([(b.prob, table.u_quant[(t + 1, b.successor)].shift(b.reward)) for b in br])
        table.instances[(t, s, a)] = inst
        q, _ = allocation_matrix(inst, taus, mode="ties")
        H = np.zeros(knots.size)
        for i, b in enumerate(br):
            qi = q[:, i]
            H[:-1] += b.prob * (np.interp(qi, knots, table.H[(t + 1, b.successor)]) + (1.0 - qi) * b.reward)
        table.H_action[(t, s, a)] = H
        table.u_action[(t, s, a)] = H[1:-1] / (1.0 - table.grid)
        table.u_quant_action[(t, s, a)] = solve_opt_full(inst)
        per_action[a] = H
    stack = np.array([per_action[a] for a in acts])
    tol = 1e-10 * (1.0 + np.abs(stack).max())
    best = np.argmax(stack >= stack.max(axis=0) - tol, axis=0)
    table.H[(t, s)] = stack[best, np.arange(knots.size)]
    table.u[(t, s)] = table.H[(t, s)][1:-1] / (1.0 - table.grid)
    cells = [table.u_quant_action[(t, s, acts[j])] for j in best[1:-1]]
    table.u_quant[(t, s)] = _splice(cells, edges)


# -- execution ----------------------------------------------------------------------


def cvar_act(table, aug, t):
    """Action of the CVaR-optimal policy at augmented state ``aug``."""
    s, tau = aug.state, check_tau(aug.tau)
    if table.method == "exact":
        comps = table.components[(t, s)]
        return comps[_best_component(comps, tau)].action
    best_a, best_h = None, -np.inf
    for (tt, ss, a), H in sorted(table.H_action.items()):
        if tt == t and ss == s:
            h = float(np.interp(tau, table.knots, H))
            if h > best_h + 1e-10 * (1.0 + abs(h)):
                best_a, best_h = a, h
    return best_a


def cvar_step(table, spec, t, aug, action, successor, reward=None):
    """Quantile level carried into ``successor`` (and realised ``reward``)."""
    s, tau = aug.state, check_tau(aug.tau)
    br = table.branches[(t, s, action)]
    match = [i for i, b in enumerate(br) if b.successor == successor
             and (reward is None or abs(b.reward - reward) <= VALUE_TOL)]
    if not match:
        raise DomainError(f"successor {successor} has zero probability under (t={t}, s={s}, a={action})")
    if tau >= 1.0 - PROB_TOL:
        return 1.0
    if table.method == "exact":
        comps = table.components[(t, s)]
        comp = comps[_best_component(comps, tau)]
        if comp.action != action:
            comps = table.components_action[(t, s, action)]
            comp = comps[_best_component(comps, tau)]
        curves = [
            dist_to_curve(table.components[(t + 1, b.successor)][k].dist.shift(b.reward))
            for b, k in zip(br, comp.children)
        ]
        inst = OptInstance([(b.prob, c) for b, c in zip(br, curves)])
    else:
        inst = table.instances[(t, s, action)]
    q = extract_allocation(inst, tau, mode="ties").q
    return float(min(max(q[match[0]], 0.0), 1.0))


class CvarPolicy:
    """Augmented-state policy driven by a ``CvarTable``."""

    augmented = True

    def __init__(self, table, spec):
        self.table, self.spec = table, spec
        self._cache = {}

    def action(self, t, s, tau):
        from .dp import AugmentedState

        key = ("a", t, s, tau)
        if key not in self._cache:
            self._cache[key] = cvar_act(self.table, AugmentedState(s, tau), t)
        return self._cache[key]

    def next_tau(self, t, s, tau, a, s2, reward):
        from .dp import AugmentedState

        key = ("q", t, s, tau, a, s2, reward)
        if key not in self._cache:
            self._cache[key] = cvar_step(self.table, self.spec, t, AugmentedState(s, tau), a, s2, reward)
        return self._cache[key]
