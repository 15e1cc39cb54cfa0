"""Monte-Carlo evaluation of Markov and augmented-state policies."""

import numpy as np

from .distributions import PROB_TOL
from .exceptions import DomainError
from .validation import check_tau


class EmpiricalCdf:
    """Empirical distribution of ``M`` samples stored as sorted values with counts."""

    def __init__(self, values, counts):
        self.values = np.asarray(values, dtype=float)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.M = int(self.counts.sum())
        self._cdf = np.cumsum(self.counts) / self.M

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            raise DomainError("an empirical CDF needs at least one sample")
        values, counts = np.unique(samples, return_counts=True)
        return cls(values, counts)

    def cdf_at(self, x):
        """Fraction of samples <= x."""
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float), side="right")
        out = np.where(idx > 0, self._cdf[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def quantile(self, tau):
        """inf{x : F(x) >= tau}, with the sample minimum at tau = 0."""
        taus = np.asarray(tau, dtype=float)
        idx = np.searchsorted(self._cdf, taus - PROB_TOL, side="left")
        out = self.values[np.minimum(idx, self.values.size - 1)]
        return float(out) if np.ndim(tau) == 0 else out

    def mean(self):
        return float(np.dot(self.values, self.counts) / self.M)

    def __eq__(self, other):
        return (
            isinstance(other, EmpiricalCdf)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"EmpiricalCdf(M={self.M}, atoms={self.values.size})"


def _groups(*cols):
    keys = np.stack(cols, axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return uniq, inv.ravel()


def simulate_policy(spec, policy, s0, M, seed, tau0=0.0, n_steps=None):
    """Cumulative rewards of ``M`` episodes of ``policy`` started at ``s0``.

    ``policy`` exposes ``action(t, s, tau)`` and ``next_tau(t, s, tau, a, s2, reward)``;
    Markov policies ignore ``tau``.  Episodes advance in lockstep and every
    distinct (state, tau) pair is resolved once per period.  Discounted models
    need ``n_steps``.
    """
    if int(M) < 1:
        raise DomainError("M must be at least 1")
    M = int(M)
    rng = np.random.default_rng(seed)
    tau0 = check_tau(tau0)
    if spec.is_finite:
        horizon, discount = spec.T, 1.0
    else:
        if n_steps is None:
            raise DomainError("n_steps is required for discounted models")
        horizon, discount = int(n_steps), float(spec.gamma)
    states = np.full(M, spec.state_index(s0), dtype=np.int64)
    taus = np.full(M, tau0)
    totals = np.zeros(M)
    weight = 1.0
    augmented = getattr(policy, "augmented", True)
    for t in range(horizon):
        u_next = rng.random(M)
        u_reward = rng.random(M)
        if augmented:
            uniq, inv = _groups(states, taus)
            acts = np.array([policy.action(t, int(s), float(tau)) for s, tau in uniq])[inv]
        else:
            uniq, inv = np.unique(states, return_inverse=True)
            acts = np.array([policy.action(t, int(s)) for s in uniq])[inv]
        nxt = np.empty(M, dtype=np.int64)
        rewards = np.empty(M)
        uniq, inv = _groups(states, acts)
        for g, (s, a) in enumerate(uniq):
            idx = np.flatnonzero(inv == g)
            row = spec.row(t, s, a)
            cdf = np.cumsum(row)
            succ = np.minimum(np.searchsorted(cdf / cdf[-1], u_next[idx], side="right"), row.size - 1)
            # Guard against landing on a trailing zero-probability column.
            support = np.flatnonzero(row > 0)
            succ = support[np.minimum(np.searchsorted(support, succ), support.size - 1)]
            nxt[idx] = succ
            for s2 in np.unique(succ):
                sub = idx[succ == s2]
                w = spec.reward_dist(t, s, a, s2)
                k = np.minimum(np.searchsorted(w.cdf, u_reward[sub], side="right"), len(w) - 1)
                rewards[sub] = w.values[k]
        if augmented:
            uniq, inv = _groups(states, taus, acts, nxt, rewards)
            new = np.array([
                policy.next_tau(t, int(s), float(tau), int(a), int(s2), float(r))
                for s, tau, a, s2, r in uniq
            ])
            taus = new[inv]
        totals += weight * rewards
        states = nxt
        weight *= discount
    if spec.is_finite:
        totals += spec.terminal[states]
    return EmpiricalCdf.from_samples(totals)
