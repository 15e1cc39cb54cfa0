"""Step-function quantile curves and finite discrete distributions.

Both types are immutable and canonical: construction sorts, merges and drops
degenerate pieces so that two objects describing the same function compare
equal.  Probabilities and breakpoints are matched with an absolute tolerance
of ``PROB_TOL``; reward values with ``VALUE_TOL`` (which is exact for integer
rewards, since distinct integers never fall within it).
"""

import numpy as np

from .exceptions import DomainError
from .validation import check_tau, check_tau_array

PROB_TOL = 1e-12
VALUE_TOL = 1e-9


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


class StepCurve:
    """Left-continuous piecewise-constant function on [0, 1].

    Piece ``k`` starts at ``breaks[k]`` and holds ``values[k]`` on
    ``(breaks[k], breaks[k+1]]``; the first piece also covers 0.  The last
    piece ends at the implicit breakpoint 1.
    """

    __slots__ = ("breaks", "values")

    def __init__(self, breaks, values):
        b = np.asarray(breaks, dtype=float).ravel()
        v = np.asarray(values, dtype=float).ravel()
        if b.size == 0 or b.size != v.size:
            raise DomainError("a curve needs matching, non-empty breaks and values")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise DomainError("curve breaks and values must be finite")
        if abs(b[0]) > PROB_TOL:
            raise DomainError(f"first breakpoint must be 0, got {b[0]}")
        if np.any(np.diff(b) < -PROB_TOL):
            raise DomainError("curve breakpoints must be increasing")
        if b[-1] > 1.0 + PROB_TOL:
            raise DomainError("curve breakpoints must lie in [0, 1)")
        b, v = _canonical_pieces(b, v)
        object.__setattr__(self, "breaks", _frozen(b))
        object.__setattr__(self, "values", _frozen(v))

    def __setattr__(self, name, value):
        raise AttributeError("StepCurve is immutable")

    @classmethod
    def constant(cls, value):
        return cls([0.0], [value])

    @classmethod
    def _trusted(cls, breaks, values):
        # Skip validation for arrays already known to be canonical.
        obj = object.__new__(cls)
        object.__setattr__(obj, "breaks", _frozen(breaks))
        object.__setattr__(obj, "values", _frozen(values))
        return obj

    @property
    def n_pieces(self):
        return int(self.breaks.size)

    @property
    def widths(self):
        return np.diff(np.append(self.breaks, 1.0))

    @property
    def pieces(self):
        return list(zip(self.breaks.tolist(), self.values.tolist()))

    @property
    def is_monotone(self):
        return bool(np.all(np.diff(self.values) >= -VALUE_TOL))

    def __call__(self, tau):
        return eval_curve(self, tau)

    def shift(self, c):
        return StepCurve._trusted(self.breaks, self.values + c)

    def scale(self, factor):
        if factor < 0:
            raise DomainError("curves may only be scaled by a non-negative factor")
        if factor == 0:
            return StepCurve.constant(0.0)
        return StepCurve(self.breaks, self.values * factor)

    def __eq__(self, other):
        if not isinstance(other, StepCurve):
            return NotImplemented
        return (
            self.n_pieces == other.n_pieces
            and bool(np.all(np.abs(self.breaks - other.breaks) <= PROB_TOL))
            and bool(np.all(np.abs(self.values - other.values) <= VALUE_TOL))
        )

    __hash__ = None

    def __repr__(self):
        shown = ", ".join(f"({b:.6g}, {v:.6g})" for b, v in self.pieces[:6])
        more = ", ..." if self.n_pieces > 6 else ""
        return f"StepCurve([{shown}{more}])"


def _canonical_pieces(b, v):
    b = np.maximum.accumulate(b)
    b[0] = 0.0
    widths = np.diff(np.append(b, 1.0))
    keep = widths > PROB_TOL
    if not keep.any():
        # Everything collapsed onto 1; the last value is the only one left.
        return np.array([0.0]), v[-1:].copy()
    b, v = b[keep], v[keep]
    b[0] = 0.0
    if v.size > 1:
        new_run = np.concatenate(([True], np.abs(np.diff(v)) > VALUE_TOL))
        b, v = b[new_run], v[new_run]
    return b, v


def _piece_index(curve, tau):
    # tau within PROB_TOL above a breakpoint still belongs to the piece on the left.
    idx = np.searchsorted(curve.breaks, np.asarray(tau) - PROB_TOL, side="left") - 1
    return np.maximum(idx, 0)


def _right_index(curve, tau):
    """Index of the piece just to the right of ``tau``."""
    return np.searchsorted(curve.breaks, np.asarray(tau) + PROB_TOL, side="right") - 1


def eval_curve(curve, tau):
    """Evaluate ``curve`` at ``tau`` (scalar or array) under the left-continuous convention."""
    if np.ndim(tau) == 0:
        tau = check_tau(tau)
        return float(curve.values[_piece_index(curve, tau)])
    taus = check_tau_array(tau)
    return curve.values[_piece_index(curve, taus)]


def eval_right(curve, tau):
    """Value of ``curve`` just right of ``tau`` (the limit from above)."""
    return curve.values[_right_index(curve, tau)]


class DiscreteDistribution:
    """Finite distribution given by (value, probability) atoms.

    Atoms are sorted by value, equal values are merged, zero-probability
    atoms are dropped and probabilities renormalised to sum to exactly 1.
    """

    __slots__ = ("values", "probs", "cdf")

    def __init__(self, values, probs):
        x = np.asarray(values, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        if x.size == 0 or x.size != p.size:
            raise DomainError("a distribution needs matching, non-empty values and probs")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise DomainError("distribution atoms must be finite")
        if np.any(p < -PROB_TOL):
            raise DomainError("probabilities must be non-negative")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL * max(1, x.size):
            raise DomainError(f"probabilities must sum to 1, got {total!r}")
        x, p = _canonical_atoms(x, p)
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        object.__setattr__(self, "values", _frozen(x))
        object.__setattr__(self, "probs", _frozen(p))
        object.__setattr__(self, "cdf", _frozen(cdf))

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteDistribution is immutable")

    @classmethod
    def point_mass(cls, value):
        return cls([value], [1.0])

    @classmethod
    def from_pairs(cls, pairs):
        """Build from ``(value, prob)`` pairs."""
        pairs = list(pairs)
        if not pairs:
            raise DomainError("empty distribution")
        values, probs = zip(*pairs)
        return cls(values, probs)

    def __len__(self):
        return int(self.values.size)

    @property
    def atoms(self):
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def mean(self):
        return float(np.dot(self.values, self.probs))

    def cdf_at(self, x):
        """P(X <= x)."""
        idx = np.searchsorted(self.values, np.asarray(x) + VALUE_TOL, side="right")
        out = np.where(idx > 0, self.cdf[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def shift(self, c):
        return DiscreteDistribution(self.values + c, self.probs)

    def sample(self, rng, size=None):
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(self.cdf, u, side="right"), len(self) - 1)
        return self.values[idx]

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return (
            len(self) == len(other)
            and bool(np.all(np.abs(self.values - other.values) <= VALUE_TOL))
            and bool(np.all(np.abs(self.probs - other.probs) <= PROB_TOL))
        )

    __hash__ = None

    def __repr__(self):
        shown = ", ".join(f"({x:.6g}, {p:.6g})" for x, p in self.atoms[:6])
        more = ", ..." if len(self) > 6 else ""
        return f"DiscreteDistribution([{shown}{more}])"


def _canonical_atoms(x, p):
    order = np.argsort(x, kind="stable")
    x, p = x[order], np.clip(p[order], 0.0, None)
    if x.size > 1:
        starts = np.flatnonzero(np.concatenate(([True], np.diff(x) > VALUE_TOL)))
        x = x[starts]
        p = np.add.reduceat(p, starts)
    keep = p > PROB_TOL
    if not keep.any():
        raise DomainError("distribution has no atom with positive probability")
    x, p = x[keep], p[keep]
    return x, p / p.sum()


def quantile_of(dist, tau):
    """inf{x : P(X <= x) >= tau}; the minimum atom at 0 and the maximum at 1."""
    if not isinstance(dist, DiscreteDistribution) or len(dist) == 0:
        raise DomainError("quantile_of needs a non-empty DiscreteDistribution")
    if np.ndim(tau) == 0:
        tau = check_tau(tau)
    else:
        tau = check_tau_array(tau)
    idx = np.searchsorted(dist.cdf, np.asarray(tau) - PROB_TOL, side="left")
    idx = np.minimum(idx, len(dist) - 1)
    out = dist.values[idx]
    return float(out) if np.ndim(tau) == 0 else out


def cvar_of(dist, tau):
    """Upper-tail conditional value at risk: Q + E[(X - Q)+] / (1 - tau)."""
    tau = check_tau(tau, open_interval=True)
    q = quantile_of(dist, tau)
    excess = np.dot(np.clip(dist.values - q, 0.0, None), dist.probs)
    return float(q + excess / (1.0 - tau))


def dist_to_curve(dist):
    """The quantile function of ``dist`` as a monotone step curve."""
    breaks = np.concatenate(([0.0], dist.cdf[:-1]))
    return StepCurve(breaks, dist.values)


def curve_to_dist(curve):
    """The distribution whose quantile function is ``curve``."""
    if not curve.is_monotone:
        raise DomainError("only a non-decreasing curve is the quantile function of a distribution")
    return DiscreteDistribution(curve.values, curve.widths)


def convolve(d1, d2):
    """Distribution of X1 + X2 for independent X1 ~ d1, X2 ~ d2.

    Every value pair is enumerated and pairs with equal sums are merged, so
    the result has at most ``len(d1) * len(d2)`` atoms.
    """
    values = np.add.outer(d1.values, d2.values).ravel()
    probs = np.multiply.outer(d1.probs, d2.probs).ravel()
    return DiscreteDistribution(values, probs)


def _check_branch_weights(weights):
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise DomainError("at least one branch is required")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("branch probabilities must be non-negative")
    if abs(w.sum() - 1.0) > PROB_TOL * max(1, w.size):
        raise DomainError(f"branch probabilities must sum to 1, got {w.sum()!r}")
    return w


def mixture_quantile(branches, tau):
    """tau-quantile of sum_i X_i Y_i where branch i is taken with probability p_i.

    ``branches`` is a sequence of ``(p_i, DiscreteDistribution)``.  The mixture
    CDF is assembled as P(sum <= C) = sum_i p_i P(X_i <= C) over every
    candidate C in the union of supports.  ``tau`` may be an array.
    """
    tau = check_tau(tau) if np.ndim(tau) == 0 else check_tau_array(tau)
    weights = _check_branch_weights([p for p, _ in branches])
    dists = [d for (_, d), w in zip(branches, weights) if w > 0]
    weights = weights[weights > 0]
    support = np.unique(np.concatenate([d.values for d in dists]))
    cdf = np.zeros(support.size)
    for w, d in zip(weights, dists):
        cdf += w * d.cdf_at(support)
    probs = np.diff(np.concatenate(([0.0], cdf)))
    return quantile_of(DiscreteDistribution(support, probs / cdf[-1]), tau)


# -- curve algebra used by the solvers ------------------------------------------


def union_breaks(curves):
    b = np.unique(np.concatenate([c.breaks for c in curves]))
    if b.size > 1:
        b = b[np.concatenate(([True], np.diff(b) > PROB_TOL))]
    return b


def pointwise_max(curves):
    """Pointwise maximum of several curves, plus the index of the winning curve per piece.

    Ties go to the lowest index.
    """
    curves = list(curves)
    if len(curves) == 1:
        c = curves[0]
        return c, np.zeros(c.n_pieces, dtype=int)
    b = union_breaks(curves)
    stacked = np.vstack([c.values[_right_index(c, b)] for c in curves])
    best = stacked.max(axis=0)
    winner = np.argmax(stacked >= best - VALUE_TOL, axis=0)
    return StepCurve(b, best), winner


def sup_distance(c1, c2):
    """sup over [0, 1] of |c1 - c2|."""
    b = union_breaks([c1, c2])
    return float(np.max(np.abs(c1.values[_right_index(c1, b)] - c2.values[_right_index(c2, b)])))


def compress(curve, n_breaks):
    """Round ``curve`` down onto the uniform grid j / n_breaks.

    On each cell (j/N, (j+1)/N] the compressed curve takes the value just right
    of j/N, which for a non-decreasing curve is its smallest value on the cell,
    so compression never overstates a guarantee.
    """
    if n_breaks < 2:
        raise DomainError("breakpoint cap must be at least 2")
    grid = np.arange(n_breaks, dtype=float) / n_breaks
    return StepCurve(grid, curve.values[_right_index(curve, grid)])
