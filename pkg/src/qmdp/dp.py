"""Quantile-objective dynamic programming over the quantile-augmented state.

``backward_solve`` computes, for every period and state, the whole optimal
value curve ``tau -> v_t(s, tau)``; ``value_iterate`` does the same for a
discounted stationary model.  Executing the optimal policy carries the pair
(state, tau) forward: the action maximises the per-action curve at the current
level, and after the transition tau is replaced by the allocation level of the
realised successor.
"""

import json
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .distributions import (
    PROB_TOL,
    VALUE_TOL,
    StepCurve,
    compress,
    convolve,
    curve_to_dist,
    dist_to_curve,
    eval_curve,
    pointwise_max,
    sup_distance,
)
from .exceptions import ConvergenceError, DomainError
from .model import DeterministicRewards
from .opt import OptInstance, extract_allocation, solve_opt_full
from .validation import check_mdp, check_tau

DEFAULT_VI_CAP = 1024

Step = namedtuple("Step", "t state action tau reward")


@dataclass(frozen=True)
class SolveOptions:
    """Solver knobs.

    breakpoint_cap : int or None
        In backward induction a value curve with more than ``breakpoint_cap``
        pieces is rounded down onto ``breakpoint_cap`` uniform breakpoints and
        smaller curves stay exact.  Value iteration rounds every curve, every
        sweep.  ``None`` never compresses (value iteration then falls back to
        ``DEFAULT_VI_CAP``).
    vi_epsilon : float
        Target sup-norm distance to the fixed point for value iteration.
    vi_max_iters : int
    n_jobs : int
        Threads used to evaluate the states of one stage.
    """

    breakpoint_cap: int = None
    vi_epsilon: float = 1e-6
    vi_max_iters: int = 10_000
    n_jobs: int = 1

    def __post_init__(self):
        if self.breakpoint_cap is not None and int(self.breakpoint_cap) < 2:
            raise DomainError("breakpoint_cap must be at least 2")
        if not self.vi_epsilon > 0:
            raise DomainError("vi_epsilon must be positive")
        if self.vi_max_iters < 1:
            raise DomainError("vi_max_iters must be positive")
        if self.n_jobs < 1:
            raise DomainError("n_jobs must be positive")


@dataclass(frozen=True)
class AugmentedState:
    state: int
    tau: float

    def __post_init__(self):
        check_tau(self.tau)


class ValueTable:
    """Optimal value curves ``v[(t, s)]`` and per-action curves ``v_action[(t, s, a)]``.

    For discounted models there is a single stage and ``t`` is always 0.
    """

    def __init__(self, spec_info, v, v_action, residuals=None, breakpoint_cap=None):
        self.states = tuple(spec_info["states"])
        self.actions = tuple(spec_info["actions"])
        self.T = spec_info.get("T")
        self.gamma = spec_info.get("gamma")
        self.v = dict(v)
        self.v_action = dict(v_action)
        self.residuals = list(residuals or [])
        self.breakpoint_cap = breakpoint_cap
        self._instances = {}
        self._allocs = {}
        self._next = {}
        self._acts = {}
        for t, s, a in sorted(self.v_action):
            self._acts.setdefault((t, s), []).append(a)

    @property
    def is_finite(self):
        return self.T is not None

    def stage(self, t):
        return t if self.is_finite else 0

    def curve(self, t, s):
        return self.v[(self.stage(t), s)]

    def action_curve(self, t, s, a):
        return self.v_action[(self.stage(t), s, a)]

    def value(self, s, tau, t=0):
        return eval_curve(self.curve(t, s), tau)

    def actions_at(self, t, s):
        return self._acts.get((self.stage(t), s), [])

    def next_curves(self, t):
        """Curves fed to the stage-``t`` allocation problems."""
        t = self.stage(t)
        out = self._next.get(t)
        if out is None:
            S = range(len(self.states))
            if self.is_finite:
                out = [self.v[(t + 1, s)] for s in S]
            else:
                out = [self.v[(0, s)].scale(self.gamma) for s in S]
            self._next[t] = out
        return out

    # -- persistence ----------------------------------------------------------

    def to_dict(self):
        def enc(c):
            return [[float(b), float(v)] for b, v in zip(c.breaks, c.values)]

        return {
            "kind": "quantile",
            "states": list(self.states),
            "actions": list(self.actions),
            "T": self.T,
            "gamma": self.gamma,
            "breakpoint_cap": self.breakpoint_cap,
            "residuals": self.residuals,
            "v": [{"t": t, "s": self.states[s], "curve": enc(c)} for (t, s), c in sorted(self.v.items())],
            "v_action": [
                {"t": t, "s": self.states[s], "a": self.actions[a], "curve": enc(c)}
                for (t, s, a), c in sorted(self.v_action.items())
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind") != "quantile":
            raise DomainError("not a quantile value table")
        s_idx = {s: i for i, s in enumerate(doc["states"])}
        a_idx = {a: i for i, a in enumerate(doc["actions"])}

        def dec(pairs):
            b, v = zip(*pairs)
            return StepCurve(b, v)

        v = {(e["t"], s_idx[e["s"]]): dec(e["curve"]) for e in doc["v"]}
        va = {(e["t"], s_idx[e["s"]], a_idx[e["a"]]): dec(e["curve"]) for e in doc["v_action"]}
        info = {"states": doc["states"], "actions": doc["actions"], "T": doc["T"], "gamma": doc["gamma"]}
        return cls(info, v, va, doc.get("residuals"), doc.get("breakpoint_cap"))

    def to_csv(self):
        """Rows ``t,state,action,tau_start,value``; ``action`` is empty for the optimal curve."""
        lines = ["t,state,action,tau_start,value"]
        for (t, s), c in sorted(self.v.items()):
            lines += [f"{t},{self.states[s]},,{b!r},{v!r}" for b, v in zip(c.breaks.tolist(), c.values.tolist())]
        for (t, s, a), c in sorted(self.v_action.items()):
            lines += [
                f"{t},{self.states[s]},{self.actions[a]},{b!r},{v!r}"
                for b, v in zip(c.breaks.tolist(), c.values.tolist())
            ]
        return "\n".join(lines) + "\n"

    def save(self, path, fmt="json"):
        with open(path, "w") as fh:
            if fmt == "csv":
                fh.write(self.to_csv())
            else:
                json.dump(self.to_dict(), fh, indent=1)
                fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _spec_info(spec):
    return {
        "states": spec.states,
        "actions": spec.actions,
        "T": spec.T,
        "gamma": None if spec.is_finite else float(spec.gamma),
    }


def stage_inputs(v_next, t, s, a, spec):
    """Allocation problem whose solution is the per-action curve at (t, s, a).

    One branch per successor with positive probability; the branch curve is
    the quantile function of (stage reward + continuation value) given that
    successor.  Branch labels are the successor state indices.
    """
    row = spec.row(t, s, a)
    succ = np.flatnonzero(row > 0)
    branches = []
    for s2 in succ:
        cont = v_next[s2]
        if isinstance(spec.rewards, DeterministicRewards):
            r = spec.rewards.table[spec.period(t), s, a, s2]
            if np.isnan(r):
                raise DomainError(f"missing reward on edge t={t}, s={s}, a={a}, next={s2}")
            curve = cont.shift(r)
        else:
            w = spec.reward_dist(t, s, a, s2)
            if len(w) == 1:
                curve = cont.shift(w.values[0])
            else:
                curve = dist_to_curve(convolve(curve_to_dist(cont), w))
        branches.append((row[s2], curve))
    probs = np.array([p for p, _ in branches])
    # Rows are validated to sum to 1 within tolerance; renormalise exactly.
    branches = [(p / probs.sum(), c) for p, c in branches]
    return OptInstance(branches, labels=succ.tolist())


def _solve_state(v_next, t, s, spec, cap, always=False):
    per_action = {
        int(a): solve_opt_full(stage_inputs(v_next, t, s, a, spec)) for a in spec.allowed(t, s)
    }
    acts = sorted(per_action)
    best, _ = pointwise_max([per_action[a] for a in acts])
    if cap is not None and (always or any(c.n_pieces > cap for c in [best, *per_action.values()])):
        # Compress every action on the same grid so that v stays the pointwise max.
        per_action = {a: compress(c, cap) for a, c in per_action.items()}
        best = compress(best, cap)
    return best, per_action


def _bellman(v_next, t, spec, cap, n_jobs, always=False):
    S = spec.n_states
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda s: _solve_state(v_next, t, s, spec, cap, always), range(S)))
    else:
        results = [_solve_state(v_next, t, s, spec, cap, always) for s in range(S)]
    return results


def backward_solve(spec, opts=None):
    """Optimal quantile value curves for a finite-horizon model."""
    opts = opts or SolveOptions()
    check_mdp(spec, horizon="finite")
    T = spec.T
    v = {(T, s): StepCurve.constant(spec.terminal[s]) for s in range(spec.n_states)}
    v_action = {}
    for t in range(T - 1, -1, -1):
        v_next = [v[(t + 1, s)] for s in range(spec.n_states)]
        for s, (best, per_action) in enumerate(_bellman(v_next, t, spec, opts.breakpoint_cap, opts.n_jobs)):
            v[(t, s)] = best
            for a, c in per_action.items():
                v_action[(t, s, a)] = c
    return ValueTable(_spec_info(spec), v, v_action, breakpoint_cap=opts.breakpoint_cap)


def bellman_operator(spec, curves, cap=None):
    """One application of v -> max_a OPT(s, ., a, gamma * v) for a discounted model.

    With a ``cap`` every output curve is compressed onto the same uniform grid,
    which keeps the operator a gamma-contraction.  Returns the new per-state
    curves and the per-action curves.
    """
    scaled = [c.scale(spec.gamma) for c in curves]
    results = _bellman(scaled, 0, spec, cap, 1, always=True)
    return [r[0] for r in results], [r[1] for r in results]


def value_iterate(spec, opts=None):
    """Value iteration for a discounted model, started from v = 0.

    Stops once successive iterates are within ``eps (1 - gamma) / (2 gamma)``
    in sup norm, which puts the last iterate within ``eps`` of the fixed point.
    Every sweep compresses onto the cap grid: compressing only the curves that
    overflow would switch operators between sweeps and can cycle.
    """
    opts = opts or SolveOptions()
    check_mdp(spec, horizon="discounted")
    gamma = float(spec.gamma)
    cap = opts.breakpoint_cap or DEFAULT_VI_CAP
    threshold = opts.vi_epsilon * (1 - gamma) / (2 * gamma)
    curves = [StepCurve.constant(0.0) for _ in range(spec.n_states)]
    residuals = []
    for _ in range(opts.vi_max_iters):
        scaled = [c.scale(gamma) for c in curves]
        results = _bellman(scaled, 0, spec, cap, opts.n_jobs, always=True)
        new = [r[0] for r in results]
        residual = max(sup_distance(a, b) for a, b in zip(new, curves))
        residuals.append(residual)
        curves = new
        if residual <= threshold:
            v = {(0, s): c for s, c in enumerate(curves)}
            v_action = {(0, s, a): c for s, r in enumerate(results) for a, c in r[1].items()}
            return ValueTable(_spec_info(spec), v, v_action, residuals, breakpoint_cap=cap)
    raise ConvergenceError(f"value iteration did not converge in {opts.vi_max_iters} sweeps", residuals[-1])


def vi_iteration_bound(gamma, epsilon, reward_bound):
    """Sweeps sufficient for the stopping rule of ``value_iterate`` to trigger."""
    if reward_bound <= 0:
        return 1
    return int(np.ceil(np.log(epsilon * (1 - gamma) ** 2 / (2 * gamma * reward_bound)) / np.log(gamma)))


# -- policy execution ------------------------------------------------------------


def act(table, aug, t=0):
    """Action maximising the per-action curve at ``aug.tau``; ties go to the lowest index."""
    s, tau = aug.state, aug.tau
    best_a, best_v = None, -np.inf
    for a in table.actions_at(t, s):
        val = eval_curve(table.action_curve(t, s, a), tau)
        if val > best_v + VALUE_TOL:
            best_a, best_v = a, val
    return best_a


def _stage_instance(table, spec, t, s, a):
    key = (table.stage(t), s, a)
    inst = table._instances.get(key)
    if inst is None:
        inst = stage_inputs(table.next_curves(table.stage(t)), t, s, a, spec)
        table._instances[key] = inst
    return inst


def _snap(q, curve):
    q = min(max(q, 0.0), 1.0)
    near = np.abs(curve.breaks - q) <= PROB_TOL
    if near.any():
        return float(curve.breaks[np.argmax(near)])
    if abs(q - 1.0) <= PROB_TOL:
        return 1.0
    return q


def step_quantile(table, spec, t, aug, action, successor, reward=None):
    """Quantile level carried into ``successor`` after taking ``action``.

    For models with random rewards, passing the realised ``reward`` splits the
    successor's level further over the reward outcomes; without it the level
    for the combined (reward + continuation) variable is returned.
    """
    s, tau = aug.state, aug.tau
    inst = _stage_instance(table, spec, t, s, action)
    if successor not in inst.labels:
        raise DomainError(f"successor {successor} has zero probability under (t={t}, s={s}, a={action})")
    if tau >= 1.0 - PROB_TOL:
        return 1.0
    key = (table.stage(t), s, action, tau)
    q = table._allocs.get(key)
    if q is None:
        q = extract_allocation(inst, tau).q
        table._allocs[key] = q
    level = float(q[inst.labels.index(successor)])
    cont = table.next_curves(table.stage(t))[successor]
    if reward is not None and not isinstance(spec.rewards, DeterministicRewards):
        w = spec.reward_dist(t, s, action, successor)
        if len(w) > 1:
            hits = np.flatnonzero(np.abs(w.values - reward) <= VALUE_TOL)
            if hits.size == 0:
                raise DomainError(f"reward {reward} is not a possible outcome on this edge")
            sub = OptInstance([(p, cont.shift(x)) for x, p in w.atoms])
            if level < 1.0 - PROB_TOL:
                level = float(extract_allocation(sub, level).q[hits[0]])
    return _snap(level, cont)


def _sample(cdf, u):
    return int(min(np.searchsorted(cdf, u, side="right"), cdf.size - 1))


def sample_transition(spec, t, s, a, rng):
    """Draw (successor, reward) for one step using two uniforms from ``rng``."""
    row = spec.row(t, s, a)
    cdf = np.cumsum(row)
    u_next, u_reward = rng.random(), rng.random()
    s2 = _sample(cdf / cdf[-1], u_next)
    while row[s2] <= 0:
        s2 -= 1
    w = spec.reward_dist(t, s, a, s2)
    reward = float(w.values[_sample(w.cdf, u_reward)])
    return s2, reward


def run_episode(table, spec, s0, tau0, rng_seed, n_steps=None):
    """Simulate the augmented-state policy from ``(s0, tau0)``.

    Returns the list of ``Step`` records and the cumulative (discounted, for
    infinite-horizon models) reward including any terminal reward.
    ``n_steps`` is required for discounted models.
    """
    rng = np.random.default_rng(rng_seed)
    s = spec.state_index(s0)
    tau = check_tau(tau0)
    if spec.is_finite:
        horizon, discount = spec.T, 1.0
    else:
        if n_steps is None:
            raise DomainError("n_steps is required for discounted models")
        horizon, discount = int(n_steps), float(spec.gamma)
    total, weight, trajectory = 0.0, 1.0, []
    for t in range(horizon):
        aug = AugmentedState(s, tau)
        a = act(table, aug, t)
        s2, reward = sample_transition(spec, t, s, a, rng)
        trajectory.append(Step(t, s, a, tau, reward))
        total += weight * reward
        tau = step_quantile(table, spec, t, aug, a, s2, reward=reward)
        s = s2
        weight *= discount
    if spec.is_finite:
        total += spec.terminal[s]
    return trajectory, total


def episodes_to_csv(episodes, spec):
    """CSV rows ``episode,t,state,action,tau,reward`` for a list of trajectories."""
    lines = ["episode,t,state,action,tau,reward"]
    for e, traj in enumerate(episodes):
        for st in traj:
            lines.append(f"{e},{st.t},{spec.states[st.state]},{spec.actions[st.action]},{st.tau!r},{st.reward!r}")
    return "\n".join(lines) + "\n"


class QuantilePolicy:
    """Augmented-state policy driven by a quantile ``ValueTable``, for ``simulate_policy``."""

    augmented = True

    def __init__(self, table, spec):
        self.table, self.spec = table, spec
        self._act = {}
        self._next = {}

    def action(self, t, s, tau):
        key = (self.table.stage(t), s, tau)
        a = self._act.get(key)
        if a is None:
            a = self._act[key] = act(self.table, AugmentedState(s, tau), t)
        return a

    def next_tau(self, t, s, tau, a, s2, reward):
        key = (t, s, tau, a, s2, reward)
        q = self._next.get(key)
        if q is None:
            q = self._next[key] = step_quantile(self.table, self.spec, t, AugmentedState(s, tau), a, s2, reward=reward)
        return q
