"""Small model builders shared by the tests."""

import numpy as np

from qmdp.distributions import DiscreteDistribution
from qmdp.model import DeterministicRewards, Discounted, DistributionalRewards, Finite, MdpSpec


def det_spec(n_states, n_actions, T, edges, terminal=None, stationary=True, admissible=None):
    """Build a deterministic-reward model from ``{(s, a): [(prob, s2, reward), ...]}``.

    Pairs missing from ``edges`` are not admissible.
    """
    K = 1 if stationary else T
    P = np.zeros((K, n_states, n_actions, n_states))
    r = np.full(P.shape, np.nan)
    adm = np.zeros((K, n_states, n_actions), dtype=bool)
    for (s, a), outs in edges.items():
        for k in range(K):
            adm[k, s, a] = True
            for p, s2, x in outs:
                P[k, s, a, s2] += p
                r[k, s, a, s2] = x
    horizon = Finite(T) if T is not None else None
    return MdpSpec([f"s{i}" for i in range(n_states)], [f"a{i}" for i in range(n_actions)],
                   P, adm, DeterministicRewards(r), horizon, terminal=terminal)


def discounted_spec(n_states, n_actions, gamma, edges):
    spec = det_spec(n_states, n_actions, 1, edges)
    return MdpSpec(spec.states, spec.actions, spec.transitions, spec.admissible, spec.rewards,
                   Discounted(gamma))


def coin_spec(values=(0.0, 10.0), T=1):
    """One state, one action, reward a fair coin over ``values``."""
    P = np.ones((1, 1, 1, 1))
    d = DiscreteDistribution(list(values), [0.5, 0.5])
    return MdpSpec(["s"], ["a"], P, np.ones((1, 1, 1), bool), DistributionalRewards({(0, 0, 0, 0): d}),
                   Finite(T))


def line_spec(rewards, T=None):
    """Deterministic single path through states 0..n-1 collecting ``rewards``."""
    n = len(rewards) + 1
    edges = {(i, 0): [(1.0, i + 1, rewards[i])] for i in range(n - 1)}
    edges[(n - 1, 0)] = [(1.0, n - 1, 0.0)]
    return det_spec(n, 1, T or len(rewards), edges)
