"""MDP model container and structural validation."""

from dataclasses import dataclass

import numpy as np

from .distributions import DiscreteDistribution
from .exceptions import DomainError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Finite:
    T: int


@dataclass(frozen=True)
class Discounted:
    gamma: float


class DeterministicRewards:
    """Reward ``r_t(s, a, s')`` fixed by the transition; NaN marks an undefined edge."""

    kind = "deterministic"

    def __init__(self, table):
        table = np.array(table, dtype=float)
        table.setflags(write=False)
        self.table = table

    def __eq__(self, other):
        return isinstance(other, DeterministicRewards) and np.array_equal(
            self.table, other.table, equal_nan=True
        )


class DistributionalRewards:
    """Random reward per transition: ``{(k, s, a, s'): DiscreteDistribution}``.

    ``k`` is the period index, or 0 for stationary models.
    """

    kind = "distributional"

    def __init__(self, dists):
        self.dists = dict(dists)
        for key, d in self.dists.items():
            if not isinstance(d, DiscreteDistribution):
                raise DomainError(f"reward for {key} is not a DiscreteDistribution")

    def __eq__(self, other):
        return isinstance(other, DistributionalRewards) and self.dists == other.dists


class MdpSpec:
    """A finite MDP with time-indexed (or stationary) dynamics.

    Parameters
    ----------
    states, actions : sequence of str
        Names; indices follow declaration order.
    transitions : array (K, S, A, S)
        ``transitions[k, s, a]`` is the successor distribution; K is the
        number of periods, or 1 for stationary models.
    admissible : array (K, S, A) of bool
    rewards : DeterministicRewards or DistributionalRewards
    horizon : Finite or Discounted
    terminal : array (S,), optional
        Terminal reward per state, default 0.
    """

    def __init__(self, states, actions, transitions, admissible, rewards, horizon,
                 terminal=None, declared_integer_rewards=None):
        self.states = tuple(str(s) for s in states)
        self.actions = tuple(str(a) for a in actions)
        P = np.array(transitions, dtype=float)
        adm = np.array(admissible, dtype=bool)
        P.setflags(write=False)
        adm.setflags(write=False)
        self.transitions = P
        self.admissible = adm
        self.rewards = rewards
        self.horizon = horizon
        term = np.zeros(len(self.states)) if terminal is None else np.array(terminal, dtype=float)
        term.setflags(write=False)
        self.terminal = term
        self.declared_integer_rewards = declared_integer_rewards

    # -- shape helpers --------------------------------------------------------

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_actions(self):
        return len(self.actions)

    @property
    def is_finite(self):
        return isinstance(self.horizon, Finite)

    @property
    def stationary(self):
        return self.transitions.shape[0] == 1

    @property
    def T(self):
        return self.horizon.T if self.is_finite else None

    @property
    def gamma(self):
        return self.horizon.gamma if not self.is_finite else 1.0

    def period(self, t):
        """Index into the time axis for period ``t``."""
        return 0 if self.transitions.shape[0] == 1 else t

    def state_index(self, name):
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self.states.index(str(name))
        except ValueError:
            raise DomainError(f"unknown state {name!r}") from None

    def action_index(self, name):
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self.actions.index(str(name))
        except ValueError:
            raise DomainError(f"unknown action {name!r}") from None

    def row(self, t, s, a):
        return self.transitions[self.period(t), s, a]

    def allowed(self, t, s):
        return np.flatnonzero(self.admissible[self.period(t), s])

    def successors(self, t, s, a):
        return np.flatnonzero(self.row(t, s, a) > 0)

    def reward_dist(self, t, s, a, s2):
        """Reward on edge (s, a, s2) at period ``t`` as a distribution."""
        k = self.period(t)
        if isinstance(self.rewards, DeterministicRewards):
            r = self.rewards.table[k, s, a, s2]
            if np.isnan(r):
                raise DomainError(f"no reward defined for t={t}, s={self.states[s]}, a={self.actions[a]}")
            return DiscreteDistribution.point_mass(r)
        try:
            return self.rewards.dists[(k, s, a, s2)]
        except KeyError:
            raise DomainError(
                f"no reward distribution for t={t}, s={self.states[s]}, "
                f"a={self.actions[a]}, next={self.states[s2]}"
            ) from None

    def reachable_edges(self):
        """Yield ``(k, s, a, s2)`` for every admissible positive-probability edge."""
        K, S, A, _ = self.transitions.shape
        for k, s, a in zip(*np.nonzero(self.admissible)):
            if k >= K or a >= A or s >= S:
                continue
            for s2 in np.flatnonzero(self.transitions[k, s, a] > 0):
                yield int(k), int(s), int(a), int(s2)

    def reward_values(self):
        """All rewards reachable through admissible positive-probability edges."""
        if isinstance(self.rewards, DeterministicRewards):
            mask = self.admissible[..., None] & (self.transitions > 0)
            vals = self.rewards.table[mask]
            return vals[~np.isnan(vals)]
        vals = [self.rewards.dists[e].values for e in self.reachable_edges() if e in self.rewards.dists]
        return np.concatenate(vals) if vals else np.zeros(0)

    @property
    def integer_rewards(self):
        vals = np.concatenate([self.reward_values(), self.terminal])
        return bool(np.all(vals == np.round(vals)))

    @property
    def max_abs_reward(self):
        vals = self.reward_values()
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def __eq__(self, other):
        if not isinstance(other, MdpSpec):
            return NotImplemented
        return (
            self.states == other.states
            and self.actions == other.actions
            and self.horizon == other.horizon
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.admissible, other.admissible)
            and np.array_equal(self.terminal, other.terminal)
            and self.rewards == other.rewards
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"MdpSpec(states={self.n_states}, actions={self.n_actions}, "
            f"horizon={self.horizon}, rewards={self.rewards.kind})"
        )


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str
    t: int = None
    state: str = None
    action: str = None

    def __str__(self):
        where = [f"{k}={v}" for k, v in (("t", self.t), ("s", self.state), ("a", self.action)) if v is not None]
        loc = f" [{', '.join(where)}]" if where else ""
        return f"{self.rule}{loc}: {self.detail}"


def validate(spec):
    """Structural diagnostics for ``spec``; an empty list means it is well formed."""
    out = []
    S, A = spec.n_states, spec.n_actions
    P, adm = spec.transitions, spec.admissible
    h = spec.horizon

    if isinstance(h, Finite):
        if not isinstance(h.T, (int, np.integer)) or h.T < 1:
            out.append(Violation("horizon", f"finite horizon needs T >= 1, got {h.T!r}"))
    elif isinstance(h, Discounted):
        if not (0.0 < float(h.gamma) < 1.0):
            out.append(Violation("horizon", f"discount factor must lie in (0, 1), got {h.gamma!r}"))
        if P.shape[0] != 1:
            out.append(Violation("horizon", "discounted models need stationary transitions and rewards"))
    else:
        out.append(Violation("horizon", f"unknown horizon {h!r}"))

    if P.ndim != 4 or P.shape[1:] != (S, A, S):
        out.append(Violation("shape", f"transitions have shape {P.shape}, expected (K, {S}, {A}, {S})"))
        return out
    K = P.shape[0]
    if isinstance(h, Finite) and K not in (1, h.T):
        out.append(Violation("shape", f"transitions cover {K} periods, expected 1 or {h.T}"))
    if adm.shape != (K, S, A):
        out.append(Violation("shape", f"admissible has shape {adm.shape}, expected {(K, S, A)}"))
        return out
    if spec.terminal.shape != (S,) or not np.all(np.isfinite(spec.terminal)):
        out.append(Violation("terminal", "terminal rewards must be one finite value per state"))
    if isinstance(spec.rewards, DeterministicRewards) and spec.rewards.table.shape != P.shape:
        out.append(Violation("shape", f"reward table has shape {spec.rewards.table.shape}, expected {P.shape}"))
        return out

    for k in range(K):
        for s in range(S):
            if not adm[k, s].any():
                out.append(Violation("admissible-empty", "no admissible action", k, spec.states[s]))
            for a in np.flatnonzero(adm[k, s]):
                row = P[k, s, a]
                where = dict(t=k, state=spec.states[s], action=spec.actions[a])
                if not np.all(np.isfinite(row)) or np.any(row < 0):
                    out.append(Violation("negative-prob", "transition probabilities must be finite and >= 0", **where))
                    continue
                total = row.sum()
                if abs(total - 1.0) > ROW_SUM_TOL:
                    out.append(Violation("row-sum", f"transition row sums to {total!r}", **where))
                for s2 in np.flatnonzero(row > 0):
                    if isinstance(spec.rewards, DeterministicRewards):
                        r = spec.rewards.table[k, s, a, s2]
                        missing = not np.isfinite(r)
                    else:
                        missing = (k, s, a, int(s2)) not in spec.rewards.dists
                    if missing:
                        out.append(Violation("missing-reward", f"no reward for successor {spec.states[s2]}", **where))

    if spec.declared_integer_rewards is not None and not out:
        if bool(spec.declared_integer_rewards) != spec.integer_rewards:
            out.append(Violation(
                "integer-flag",
                f"integer_rewards declared {spec.declared_integer_rewards} but rewards say {spec.integer_rewards}",
            ))
    return out
