"""Risk frontier report: optimal quantiles against baseline policies' empirical quantiles."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .baselines import solve_expectation, solve_exp_utility, solve_qbdp
from .dp import QuantilePolicy, SolveOptions, backward_solve
from .distributions import eval_curve
from .exceptions import DomainError
from .simulate import simulate_policy
from .validation import check_mdp

QBDP_TAUS = (0.2, 0.5, 0.8)
UTILITY_GAMMAS = (-0.5, 0.5)


@dataclass
class RiskReport:
    """Frontier ``tau -> v_0(s0, tau)`` and baseline empirical quantile curves on a grid."""

    taus: np.ndarray
    frontier: np.ndarray
    curves: dict
    cdfs: dict = field(default_factory=dict)
    M: int = 0

    @property
    def gap(self):
        """Frontier minus the risk-neutral policy's empirical quantile."""
        return self.frontier - self.curves["mdp_cdf_quantile"]

    def sigma(self):
        return np.sqrt(self.taus * (1 - self.taus) / self.M)

    def dominance_violations(self, k=3.0):
        """Grid points where a baseline beats the frontier by more than ``k`` standard errors.

        The frontier dominates at ``tau`` when the baseline puts at least
        ``tau - k sigma`` of its mass at or below the frontier value.
        Returns ``{column: [tau, ...]}`` with only failing columns present.
        """
        out = {}
        slack = k * self.sigma()
        for name, cdf in self.cdfs.items():
            hit = cdf.cdf_at(self.frontier) < self.taus - slack - 1e-12
            if hit.any():
                out[name] = self.taus[hit].tolist()
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.curves)
        w.writerow(["tau", "qmdp_frontier", *names, "gap"])
        gap = self.gap
        for i, tau in enumerate(self.taus):
            row = [repr(float(tau)), repr(float(self.frontier[i]))]
            row += [repr(float(self.curves[n][i])) for n in names]
            row.append(repr(float(gap[i])))
            w.writerow(row)
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def report_grid(k):
    if int(k) < 2:
        raise DomainError("the tau grid needs at least 2 points")
    return np.arange(int(k)) / (int(k) - 1)


def build_report(spec, s0, tau_grid=101, M=20_000, seed=0, table=None, opts=None,
                 qbdp_taus=QBDP_TAUS, utility_gammas=UTILITY_GAMMAS):
    """Solve once for the frontier and simulate every baseline policy from ``s0``.

    ``tau_grid`` is either a point count ``k`` (grid ``j / (k - 1)``) or an
    explicit array of levels.
    """
    check_mdp(spec, horizon="finite")
    s = spec.state_index(s0)
    taus = report_grid(tau_grid) if np.ndim(tau_grid) == 0 else np.asarray(tau_grid, dtype=float)
    if table is None:
        table = backward_solve(spec, opts or SolveOptions())
    frontier = eval_curve(table.curve(0, s), taus)

    baselines = [("mdp_cdf_quantile", solve_expectation(spec))]
    baselines += [(f"qbdp_{t:g}_quantile", solve_qbdp(spec, t)) for t in qbdp_taus]
    baselines += [(f"util_{g:g}_quantile", solve_exp_utility(spec, g)) for g in utility_gammas]
    curves, cdfs = {}, {}
    for i, (name, sol) in enumerate(baselines):
        cdf = simulate_policy(spec, sol.policy, s, M, [int(seed), i])
        cdfs[name] = cdf
        curves[name] = cdf.quantile(taus)
    return RiskReport(taus, frontier, curves, cdfs, int(M))


def qmdp_empirical(spec, table, s0, tau, M, seed):
    """Empirical return distribution of the quantile-optimal policy started at ``tau``."""
    return simulate_policy(spec, QuantilePolicy(table, spec), spec.state_index(s0), M, seed, tau0=tau)
