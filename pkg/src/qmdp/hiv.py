"""HIV treatment-initiation model.

A patient is described by a CD4 bin, ART duration and age; each half-year
they either wait (W) or start treatment (Rx), after which treatment continues.
Age advances with the period index, so the model is non-stationary with one
period per half-year from ``start_age`` to ``terminal_age``.

States are ``(cd4 bin, duration)`` plus an absorbing ``Death``.  Duration 0
means off ART; duration ``k >= 1`` counts completed half-years on ART, with
the last value standing for "more than 42 months".
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .exceptions import DomainError
from .model import DeterministicRewards, Finite, MdpSpec

W, RX = 0, 1

CD4_BINS = ("0-50", "50-100", "100-200", "200-300", "300-400", "400-500", ">500")
CD4_WIDTHS = (50.0, 50.0, 100.0, 100.0, 100.0, 100.0, 100.0)
CD4_DRIFT_OFF_ART = -35.25
CD4_GAIN_ON_ART = (100.0, 50.0, 40.0, 40.0, 25.0, 20.0, 20.0, 0.0)
HIV_DEATH_OFF = (0.1618, 0.0692, 0.0549, 0.0428, 0.0348, 0.0295, 0.0186)
HIV_DEATH_ON = (0.1356, 0.0472, 0.0201, 0.0103, 0.0076, 0.0076, 0.0045)
UTILITY_OFF = (0.82, 0.83, 0.84, 0.85, 0.86, 0.87, 0.88)
UTILITY_ON = (0.72, 0.75, 0.78, 0.81, 0.84, 0.87, 0.90)


def load_mortality(path=None):
    """Read ``age,annual_death_prob`` rows; the bundled placeholder when ``path`` is None."""
    if path is None:
        text = resources.files("qmdp.data").joinpath("mortality_placeholder.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    if not rows or set(rows[0]) != {"age", "annual_death_prob"}:
        raise DomainError("mortality table needs the header 'age,annual_death_prob'")
    table = []
    for i, row in enumerate(rows, start=2):
        try:
            age, p = int(row["age"]), float(row["annual_death_prob"])
        except (TypeError, ValueError):
            raise DomainError(f"mortality table line {i}: bad row {row}") from None
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"mortality table line {i}: probability {p} outside [0, 1]")
        table.append((age, p))
    table.sort()
    ages = [a for a, _ in table]
    if len(set(ages)) != len(ages):
        raise DomainError("mortality table has duplicate ages")
    return tuple(table)


@dataclass(frozen=True)
class HivParams:
    cd4_bins: tuple = CD4_BINS
    cd4_widths: tuple = CD4_WIDTHS
    start_age: float = 20.0
    terminal_age: float = 90.0
    period: float = 0.5
    cd4_drift_off_art: float = CD4_DRIFT_OFF_ART
    cd4_gain_on_art: tuple = CD4_GAIN_ON_ART
    hiv_death_prob_off: tuple = HIV_DEATH_OFF
    hiv_death_prob_on: tuple = HIV_DEATH_ON
    utilities_off: tuple = UTILITY_OFF
    utilities_on: tuple = UTILITY_ON
    cardiac_mortality_multiplier: float = 2.0
    background_mortality: tuple = field(default=None, repr=False)
    annual_discount: float = 0.03
    reward_grid: float = 0.005
    cohort_tail_mass: float = 1e-6
    cohort_max_years: float = 60.0

    def __post_init__(self):
        L = len(self.cd4_bins)
        for name in ("cd4_widths", "hiv_death_prob_off", "hiv_death_prob_on", "utilities_off", "utilities_on"):
            if len(getattr(self, name)) != L:
                raise DomainError(f"{name} needs one entry per CD4 bin ({L})")
        for name in ("hiv_death_prob_off", "hiv_death_prob_on", "utilities_off", "utilities_on"):
            if not all(0.0 <= x <= 1.0 for x in getattr(self, name)):
                raise DomainError(f"{name} entries must lie in [0, 1]")
        if len(self.cd4_gain_on_art) < 1:
            raise DomainError("cd4_gain_on_art needs at least one duration bracket")
        if not all(w > 0 for w in self.cd4_widths):
            raise DomainError("CD4 bin widths must be positive")
        if not (self.period > 0 and self.terminal_age > self.start_age):
            raise DomainError("need period > 0 and terminal_age > start_age")
        steps = (self.terminal_age - self.start_age) / self.period
        if abs(steps - round(steps)) > 1e-9:
            raise DomainError("terminal_age - start_age must be a whole number of periods")
        if self.cardiac_mortality_multiplier < 0 or not 0 <= self.annual_discount < 1:
            raise DomainError("bad cardiac multiplier or discount rate")
        if self.reward_grid is not None and self.reward_grid <= 0:
            raise DomainError("reward_grid must be positive")
        if self.background_mortality is None:
            object.__setattr__(self, "background_mortality", load_mortality())

    @property
    def n_periods(self):
        return int(round((self.terminal_age - self.start_age) / self.period))

    @property
    def n_durations(self):
        # Off ART plus one value per gain bracket.
        return len(self.cd4_gain_on_art) + 1

    @property
    def period_discount(self):
        return (1.0 / (1.0 + self.annual_discount)) ** self.period

    def to_dict(self):
        d = asdict(self)
        d["background_mortality"] = [list(x) for x in self.background_mortality]
        return d

    @classmethod
    def from_json(cls, path, mortality=None):
        """Parameters from a JSON object of overrides; unknown keys are rejected."""
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise DomainError("HIV parameter file must hold a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise DomainError(f"unknown HIV parameters: {sorted(unknown)}")
        for k, v in doc.items():
            if isinstance(v, list):
                doc[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        if mortality is not None:
            doc["background_mortality"] = load_mortality(mortality)
        return cls(**doc)


def _annual_rate(params, age, strict=True):
    table = params.background_mortality
    ages = [a for a, _ in table]
    a = int(np.floor(age + 1e-9))
    if a in ages:
        return table[ages.index(a)][1]
    if strict:
        raise DomainError(f"background mortality table does not cover age {a}")
    return table[-1][1] if a > ages[-1] else table[0][1]


def _death_prob(params, age, bin_, on_art, strict=True):
    bg = 1.0 - (1.0 - _annual_rate(params, age, strict)) ** params.period
    hiv = params.hiv_death_prob_on[bin_] if on_art else params.hiv_death_prob_off[bin_]
    if on_art:
        bg = min(1.0, bg * params.cardiac_mortality_multiplier)
    return 1.0 - (1.0 - hiv) * (1.0 - bg)


def _cd4_moves(params, bin_, cells):
    """Successor bins and probabilities for a CD4 change of ``cells`` from ``bin_``.

    The change is measured in units of the current bin's width; the fractional
    part becomes the probability of one extra bin, so the expected bin move
    matches the drift.
    """
    L = len(params.cd4_bins)
    steps = abs(cells) / params.cd4_widths[bin_]
    base = int(np.floor(steps))
    frac = steps - base
    sign = 1 if cells >= 0 else -1
    out = {}
    for k, p in ((base, 1.0 - frac), (base + 1, frac)):
        if p <= 0:
            continue
        b = min(max(bin_ + sign * k, 0), L - 1)
        out[b] = out.get(b, 0.0) + p
    return out


def _quantise(x, grid):
    return x if grid is None else float(np.round(x / grid) * grid)


def _dynamics(params, age, bin_, dur, action, strict=True):
    """(death prob, {(bin, dur): prob among survivors}, utility) for one period."""
    on = action == RX
    if on:
        gain = params.cd4_gain_on_art[min(dur, len(params.cd4_gain_on_art) - 1)]
        moves = _cd4_moves(params, bin_, gain)
        nxt_dur = min(dur + 1, params.n_durations - 1)
        util = params.utilities_on[bin_]
    else:
        moves = _cd4_moves(params, bin_, params.cd4_drift_off_art)
        nxt_dur = 0
        util = params.utilities_off[bin_]
    pd = _death_prob(params, age, bin_, on, strict)
    return pd, {(b, nxt_dur): p for b, p in moves.items()}, util


def state_names(params):
    names = [f"cd4={c}|dur={d}" for c in params.cd4_bins for d in range(params.n_durations)]
    return names + ["Death"]


def _index(params, bin_, dur):
    return bin_ * params.n_durations + dur


def cohort_terminal_reward(params):
    """Expected discounted QALYs beyond the terminal age, per state, valued at the terminal age.

    Patients keep their treatment status (off ART stays off, on ART continues)
    and the same transition and utility model is iterated until the surviving
    mass drops below ``cohort_tail_mass`` or ``cohort_max_years`` elapse.
    Ages beyond the mortality table reuse its last row.
    """
    L, D = len(params.cd4_bins), params.n_durations
    S = L * D
    n_steps = int(round(params.cohort_max_years / params.period))
    delta = params.period_discount
    # Stage-by-stage expectation recursion, from the far end backwards.
    P = np.zeros((n_steps, S, S))
    R = np.zeros((n_steps, S))
    for k in range(n_steps):
        age = params.terminal_age + k * params.period
        for b in range(L):
            for d in range(D):
                i = _index(params, b, d)
                action = RX if d > 0 else W
                pd, moves, util = _dynamics(params, age, b, d, action, strict=False)
                q = util * params.period
                R[k, i] = (1 - pd) * q + pd * 0.5 * q
                for (b2, d2), p in moves.items():
                    P[k, i, _index(params, b2, d2)] += (1 - pd) * p
    # Stop once every starting state has shed all but the tail mass.
    alive = np.ones(S)
    M = np.eye(S)
    horizon = n_steps
    for k in range(n_steps):
        M = M @ P[k]
        alive = M.sum(axis=1)
        if alive.max() < params.cohort_tail_mass:
            horizon = k + 1
            break
    V = np.zeros(S)
    for k in range(horizon - 1, -1, -1):
        V = R[k] + delta * P[k] @ V
    out = np.zeros(S + 1)
    out[:S] = V
    return out


def gen_hiv(params=None):
    """Build the treatment-initiation model; rewards are discounted to period 0."""
    params = params or HivParams()
    L, D = len(params.cd4_bins), params.n_durations
    S = L * D + 1
    death = S - 1
    T = params.n_periods
    ages = [a for a, _ in params.background_mortality]
    if ages[0] > params.start_age or ages[-1] < params.terminal_age - params.period:
        raise DomainError(
            f"background mortality covers ages {ages[0]}..{ages[-1]}, "
            f"need {params.start_age}..{params.terminal_age}"
        )
    delta = params.period_discount
    P = np.zeros((T, S, 2, S))
    r = np.full((T, S, 2, S), np.nan)
    adm = np.zeros((T, S, 2), dtype=bool)
    for t in range(T):
        age = params.start_age + t * params.period
        disc = delta ** t
        adm[t, death, W] = True
        P[t, death, W, death] = 1.0
        r[t, death, W, death] = 0.0
        for b in range(L):
            for d in range(D):
                i = _index(params, b, d)
                for action in ((W, RX) if d == 0 else (RX,)):
                    adm[t, i, action] = True
                    pd, moves, util = _dynamics(params, age, b, d, action)
                    q = util * params.period * disc
                    for (b2, d2), p in moves.items():
                        j = _index(params, b2, d2)
                        P[t, i, action, j] += (1 - pd) * p
                        r[t, i, action, j] = _quantise(q, params.reward_grid)
                    if pd > 0:
                        P[t, i, action, death] += pd
                        r[t, i, action, death] = _quantise(0.5 * q, params.reward_grid)
                    # Absorb rounding so rows sum to 1 within tolerance.
                    row = P[t, i, action]
                    row /= row.sum()
    terminal = cohort_terminal_reward(params) * delta ** T
    terminal = np.array([_quantise(x, params.reward_grid) for x in terminal])
    return MdpSpec(state_names(params), ["W", "Rx"], P, adm, DeterministicRewards(r), Finite(T),
                   terminal=terminal)


def hiv_state(params, cd4_bin, duration=0):
    """Index of the state for a CD4 bin (index or label) and ART duration."""
    if isinstance(cd4_bin, str):
        cd4_bin = list(params.cd4_bins).index(cd4_bin)
    return _index(params, int(cd4_bin), int(duration))


def policy_diagnostic(params, table, taus=(0.2, 0.5, 0.8), ages=None):
    """Rows ``(tau, age, cd4 bin, action)`` for off-ART patients under the quantile policy.

    Shows where each risk level starts treatment; it is a diagnostic, no
    monotonicity is claimed.
    """
    from .dp import AugmentedState, act

    T = params.n_periods
    if ages is None:
        ages = [params.start_age + 10 * k for k in range(int((params.terminal_age - params.start_age) // 10))]
    rows = []
    for tau in taus:
        for age in ages:
            t = int(round((age - params.start_age) / params.period))
            if not 0 <= t < T:
                continue
            for b, label in enumerate(params.cd4_bins):
                a = act(table, AugmentedState(_index(params, b, 0), tau), t)
                rows.append((tau, age, label, "W" if a == W else "Rx"))
    return rows


def policy_diagnostic_csv(rows):
    lines = ["tau,age,cd4_bin,action"]
    lines += [f"{tau!r},{age:g},{label},{a}" for tau, age, label, a in rows]
    return "\n".join(lines) + "\n"


__all__ = [
    "HivParams", "gen_hiv", "cohort_terminal_reward", "load_mortality", "hiv_state",
    "policy_diagnostic", "policy_diagnostic_csv", "state_names",
]
