"""Independent reference computations used by the tests.

Nothing here calls the allocation solver.  Distributions are dicts
``{value: Fraction}`` and every policy class is enumerated explicitly.
"""

from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np

from qmdp.distributions import DiscreteDistribution
from qmdp.model import DeterministicRewards, DistributionalRewards, Finite, MdpSpec


def frac(x):
    return Fraction(float(x))


def random_mdp(rng, n_states, n_actions, T, r_lo=-3, r_hi=3, denom=8, terminal=False,
               distributional=False, max_succ=None):
    """Random non-stationary finite-horizon model with probabilities in multiples of 1/denom."""
    S, A = n_states, n_actions
    P = np.zeros((T, S, A, S))
    adm = np.zeros((T, S, A), dtype=bool)
    table = np.full((T, S, A, S), np.nan)
    dists = {}
    for t in range(T):
        for s in range(S):
            k = rng.integers(1, A + 1)
            for a in rng.choice(A, size=k, replace=False):
                adm[t, s, a] = True
                n_succ = rng.integers(1, (max_succ or S) + 1)
                succ = rng.choice(S, size=min(n_succ, S), replace=False)
                cuts = np.sort(rng.integers(0, denom + 1, size=len(succ) - 1))
                w = np.diff(np.concatenate(([0], cuts, [denom])))
                if w.sum() == 0 or not (w > 0).any():
                    w = np.zeros(len(succ), dtype=int)
                    w[0] = denom
                for s2, wi in zip(succ, w):
                    P[t, s, a, s2] = wi / denom
                for s2 in np.flatnonzero(P[t, s, a] > 0):
                    if distributional:
                        vals = rng.integers(r_lo, r_hi + 1, size=2)
                        pw = rng.integers(1, denom) / denom
                        dists[(t, s, int(a), int(s2))] = DiscreteDistribution(vals, [pw, 1 - pw])
                    else:
                        table[t, s, a, s2] = rng.integers(r_lo, r_hi + 1)
    term = rng.integers(r_lo, r_hi + 1, size=S).astype(float) if terminal else None
    rewards = DistributionalRewards(dists) if distributional else DeterministicRewards(table)
    return MdpSpec([f"s{i}" for i in range(S)], [f"a{i}" for i in range(A)], P, adm, rewards,
                   Finite(T), terminal=term)


def _edge_outcomes(spec, t, s, a):
    """List of (prob, successor, reward) as Fractions."""
    out = []
    row = spec.row(t, s, a)
    k = spec.period(t)
    for s2 in range(spec.n_states):
        if row[s2] <= 0:
            continue
        if isinstance(spec.rewards, DeterministicRewards):
            out.append((frac(row[s2]), s2, frac(spec.rewards.table[k, s, a, s2])))
        else:
            d = spec.rewards.dists[(k, s, a, s2)]
            for v, p in zip(d.values, d.probs):
                out.append((frac(row[s2]) * frac(p), s2, frac(v)))
    return out


def _key(d):
    return tuple(sorted(d.items()))


def _cdf_points(d):
    xs = sorted(d)
    acc, out = Fraction(0), []
    for x in xs:
        acc += d[x]
        out.append((x, acc))
    return out


def _dominates(d1, d2):
    """First-order stochastic dominance of d1 over d2."""
    xs = sorted(set(d1) | set(d2))
    c1 = c2 = Fraction(0)
    for x in xs:
        c1 += d1.get(x, 0)
        c2 += d2.get(x, 0)
        if c1 > c2:
            return False
    return True


def _prune(dists):
    uniq = {_key(d): d for d in dists}
    items = list(uniq.values())
    keep = []
    for i, d in enumerate(items):
        if not any(j != i and _dominates(e, d) and _key(e) != _key(d) for j, e in enumerate(items)):
            keep.append(d)
    return keep


def achievable(spec):
    """Function (t, s) -> non-dominated return distributions over history-dependent policies.

    Policies may condition on the full history, so each (successor, reward)
    outcome picks its continuation independently.  Dominated distributions are
    dropped, which leaves every quantile and tail mean maximum unchanged.
    """

    @lru_cache(maxsize=None)
    def D(t, s):
        if t == spec.T:
            return (((frac(spec.terminal[s]), Fraction(1)),),)
        found = []
        for a in spec.allowed(t, s):
            outs = _edge_outcomes(spec, t, s, int(a))
            choices = [D(t + 1, s2) for _, s2, _ in outs]
            for pick in product(*choices):
                mix = {}
                for (p, _, r), cont in zip(outs, pick):
                    for v, q in cont:
                        mix[v + r] = mix.get(v + r, 0) + p * q
                found.append(mix)
        return tuple(_key(d) for d in _prune(found))

    return lambda t, s: [dict(k) for k in D(t, s)]


def quantile(d, tau):
    tau = Fraction(tau)
    for x, c in _cdf_points(d):
        if c >= tau:
            return x
    return max(d)


def cvar(d, tau):
    tau = Fraction(tau)
    q = quantile(d, tau)
    excess = sum(p * (x - q) for x, p in d.items() if x > q)
    return q + excess / (1 - tau)


def mean(d):
    return sum(x * p for x, p in d.items())


_ACH = {}


def achievable_cached(spec):
    key = id(spec)
    if key not in _ACH:
        _ACH[key] = (spec, achievable(spec))
    return _ACH[key][1]


def best_quantile(spec, s, tau, t=0):
    return max(quantile(d, tau) for d in achievable_cached(spec)(t, s))


def best_cvar(spec, s, tau, t=0):
    return max(cvar(d, tau) for d in achievable_cached(spec)(t, s))


def policy_distribution(spec, policy, s0, t0=0):
    """Exact return distribution of a Markov policy ``policy(t, s) -> action``."""
    # Track joint (cumulative reward, state).
    joint = {(Fraction(0), s0): Fraction(1)}
    for t in range(t0, spec.T):
        nxt = {}
        for (acc, s), p in joint.items():
            a = policy(t, s)
            for q, s2, r in _edge_outcomes(spec, t, s, a):
                key = (acc + r, s2)
                nxt[key] = nxt.get(key, 0) + p * q
        joint = nxt
    out = {}
    for (acc, s), p in joint.items():
        v = acc + frac(spec.terminal[s])
        out[v] = out.get(v, 0) + p
    return out


def expectation_optimum(spec, s, t=0):
    """max over Markov policies of the mean, by backward induction in Fractions."""
    V = [frac(x) for x in spec.terminal]
    for tt in range(spec.T - 1, t - 1, -1):
        V = [
            max(sum(p * (r + V[s2]) for p, s2, r in _edge_outcomes(spec, tt, ss, int(a)))
                for a in spec.allowed(tt, ss))
            for ss in range(spec.n_states)
        ]
    return V[s]
