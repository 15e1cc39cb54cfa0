"""Synthetic stay-or-move chain.

States ``1..n`` sit on a line.  Stay keeps the player in place and pays the
state's reward; Move goes to a neighbour, left or right with a probability
drawn per state from the seed (end states have a single neighbour).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .model import DeterministicRewards, Finite, MdpSpec

STAY, MOVE = 0, 1


@dataclass(frozen=True)
class ChainParams:
    n: int = 20
    T: int = 10
    r_max: int = 10
    seed: int = 0
    reward_on_occupancy: bool = False
    """Pay ``R_i`` whenever the player is in state ``i``, not only under Stay."""

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"chain needs n >= 2, got {self.n}")
        if self.T < 1:
            raise DomainError(f"chain needs T >= 1, got {self.T}")
        if self.r_max < 1:
            raise DomainError(f"chain needs r_max >= 1, got {self.r_max}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")


def gen_chain(params):
    """Build the chain model for ``params``; bitwise reproducible from the seed."""
    n = params.n
    rng = np.random.default_rng(int(params.seed))
    R = rng.integers(0, params.r_max + 1, size=n)
    left = rng.random(n)

    P = np.zeros((1, n, 2, n))
    r = np.full((1, n, 2, n), np.nan)
    for i in range(n):
        P[0, i, STAY, i] = 1.0
        r[0, i, STAY, i] = R[i]
        if i == 0:
            P[0, i, MOVE, 1] = 1.0
        elif i == n - 1:
            P[0, i, MOVE, n - 2] = 1.0
        else:
            P[0, i, MOVE, i - 1] = left[i]
            P[0, i, MOVE, i + 1] = 1.0 - left[i]
        for j in np.flatnonzero(P[0, i, MOVE]):
            r[0, i, MOVE, j] = R[i] if params.reward_on_occupancy else 0.0
    adm = np.ones((1, n, 2), dtype=bool)
    states = [str(i + 1) for i in range(n)]
    return MdpSpec(states, ["Stay", "Move"], P, adm, DeterministicRewards(r), Finite(params.T),
                   declared_integer_rewards=True)
