"""JSON persistence for models.

Probabilities are written as decimal strings (``repr`` of the float, which
round-trips exactly); rewards are plain JSON numbers.
"""

import json
from pathlib import Path

import numpy as np

from .distributions import DiscreteDistribution
from .exceptions import DomainError, ModelFormatError, ModelValidationError
from .model import DeterministicRewards, Discounted, DistributionalRewards, Finite, MdpSpec, validate

FORMAT = "qmdp-model"
VERSION = 1


def _prob_str(p):
    return repr(float(p))


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2**53 else x


def spec_to_dict(spec):
    K = spec.transitions.shape[0]
    stationary = spec.stationary and not (spec.is_finite and spec.T == 1)

    def key(k, s, a=None):
        d = {} if stationary else {"t": int(k)}
        d["s"] = spec.states[s]
        if a is not None:
            d["a"] = spec.actions[a]
        return d

    admissible, transitions, reward_rows, reward_entries = [], [], [], []
    for k in range(K):
        for s in range(spec.n_states):
            acts = np.flatnonzero(spec.admissible[k, s])
            admissible.append({**key(k, s), "actions": [spec.actions[a] for a in acts]})
            for a in acts:
                row = spec.transitions[k, s, a]
                transitions.append({**key(k, s, a), "p": [_prob_str(p) for p in row]})
                if isinstance(spec.rewards, DeterministicRewards):
                    r = spec.rewards.table[k, s, a]
                    reward_rows.append({**key(k, s, a), "r": [None if np.isnan(x) else _num(x) for x in r]})
    if isinstance(spec.rewards, DistributionalRewards):
        for (k, s, a, s2), d in sorted(spec.rewards.dists.items()):
            reward_entries.append({
                **key(k, s, a),
                "next": spec.states[s2],
                "dist": [[_num(v), _prob_str(p)] for v, p in d.atoms],
            })
        rewards = {"kind": "distributional", "entries": reward_entries}
    else:
        rewards = {"kind": "deterministic", "rows": reward_rows}

    if spec.is_finite:
        horizon = {"finite": int(spec.T)}
    else:
        horizon = {"discounted": _prob_str(spec.gamma)}
    return {
        "format": FORMAT,
        "version": VERSION,
        "states": list(spec.states),
        "actions": list(spec.actions),
        "horizon": horizon,
        "stationary": stationary,
        "admissible": admissible,
        "transitions": transitions,
        "rewards": rewards,
        "terminal": {s: _num(v) for s, v in zip(spec.states, spec.terminal)},
        "integer_rewards": spec.integer_rewards,
    }


def save(spec, path):
    text = json.dumps(spec_to_dict(spec), indent=1)
    Path(path).write_text(text + "\n")


def _field(doc, name, kind=None):
    if name not in doc:
        raise ModelFormatError("missing required field", field=name)
    value = doc[name]
    if kind is not None and not isinstance(value, kind):
        raise ModelFormatError(f"expected {kind.__name__ if isinstance(kind, type) else kind}", field=name)
    return value


def _prob(value, field):
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise ModelFormatError(f"not a probability: {value!r}", field=field) from None
    return p


def spec_from_dict(doc):
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    if doc.get("format", FORMAT) != FORMAT:
        raise ModelFormatError(f"unsupported format {doc.get('format')!r}", field="format")
    states = [str(s) for s in _field(doc, "states", list)]
    actions = [str(a) for a in _field(doc, "actions", list)]
    if len(set(states)) != len(states) or not states:
        raise ModelFormatError("state names must be unique and non-empty", field="states")
    if len(set(actions)) != len(actions) or not actions:
        raise ModelFormatError("action names must be unique and non-empty", field="actions")
    s_idx = {s: i for i, s in enumerate(states)}
    a_idx = {a: i for i, a in enumerate(actions)}

    hdoc = _field(doc, "horizon", dict)
    if "finite" in hdoc:
        T = hdoc["finite"]
        if not isinstance(T, int) or isinstance(T, bool):
            raise ModelFormatError("finite horizon must be an integer", field="horizon.finite")
        horizon = Finite(T)
    elif "discounted" in hdoc:
        horizon = Discounted(_prob(hdoc["discounted"], "horizon.discounted"))
    else:
        raise ModelFormatError("expected 'finite' or 'discounted'", field="horizon")

    stationary = bool(doc.get("stationary", False)) or not isinstance(horizon, Finite)
    K = 1 if stationary else max(int(horizon.T), 1)
    S, A = len(states), len(actions)

    def locate(entry, where):
        if not isinstance(entry, dict):
            raise ModelFormatError("expected an object", field=where)
        if stationary:
            k = 0
        else:
            k = entry.get("t")
            if not isinstance(k, int) or not 0 <= k < K:
                raise ModelFormatError(f"period t must be an integer in [0, {K})", field=f"{where}.t")
        name = entry.get("s")
        if name not in s_idx:
            raise ModelFormatError(f"unknown state {name!r}", field=f"{where}.s")
        a = None
        if "a" in entry:
            if entry["a"] not in a_idx:
                raise ModelFormatError(f"unknown action {entry['a']!r}", field=f"{where}.a")
            a = a_idx[entry["a"]]
        return k, s_idx[name], a

    adm = np.zeros((K, S, A), dtype=bool)
    for i, entry in enumerate(_field(doc, "admissible", list)):
        where = f"admissible[{i}]"
        k, s, _ = locate(entry, where)
        for j, name in enumerate(entry.get("actions", [])):
            if name not in a_idx:
                raise ModelFormatError(f"unknown action {name!r}", field=f"{where}.actions[{j}]")
            adm[k, s, a_idx[name]] = True

    P = np.zeros((K, S, A, S))
    for i, entry in enumerate(_field(doc, "transitions", list)):
        where = f"transitions[{i}]"
        k, s, a = locate(entry, where)
        if a is None:
            raise ModelFormatError("missing action", field=f"{where}.a")
        row = entry.get("p")
        if not isinstance(row, list) or len(row) != S:
            raise ModelFormatError(f"expected a dense row of {S} probabilities", field=f"{where}.p")
        P[k, s, a] = [_prob(x, f"{where}.p[{j}]") for j, x in enumerate(row)]

    rdoc = _field(doc, "rewards", dict)
    kind = rdoc.get("kind")
    if kind == "deterministic":
        table = np.full((K, S, A, S), np.nan)
        for i, entry in enumerate(rdoc.get("rows", [])):
            where = f"rewards.rows[{i}]"
            k, s, a = locate(entry, where)
            if a is None:
                raise ModelFormatError("missing action", field=f"{where}.a")
            row = entry.get("r")
            if not isinstance(row, list) or len(row) != S:
                raise ModelFormatError(f"expected a dense row of {S} rewards", field=f"{where}.r")
            try:
                table[k, s, a] = [np.nan if x is None else float(x) for x in row]
            except (TypeError, ValueError):
                raise ModelFormatError("rewards must be numbers or null", field=f"{where}.r") from None
        rewards = DeterministicRewards(table)
    elif kind == "distributional":
        dists = {}
        for i, entry in enumerate(rdoc.get("entries", [])):
            where = f"rewards.entries[{i}]"
            k, s, a = locate(entry, where)
            nxt = entry.get("next")
            if a is None:
                raise ModelFormatError("missing action", field=f"{where}.a")
            if nxt not in s_idx:
                raise ModelFormatError(f"unknown state {nxt!r}", field=f"{where}.next")
            try:
                pairs = [(float(v), _prob(p, f"{where}.dist")) for v, p in entry["dist"]]
                dists[(k, s, a, s_idx[nxt])] = DiscreteDistribution.from_pairs(pairs)
            except (KeyError, TypeError, ValueError, DomainError) as exc:
                raise ModelFormatError(f"bad reward distribution ({exc})", field=f"{where}.dist") from None
        rewards = DistributionalRewards(dists)
    else:
        raise ModelFormatError(f"unknown reward kind {kind!r}", field="rewards.kind")

    terminal = np.zeros(S)
    for name, value in (doc.get("terminal") or {}).items():
        if name not in s_idx:
            raise ModelFormatError(f"unknown state {name!r}", field=f"terminal.{name}")
        terminal[s_idx[name]] = float(value)

    declared = doc.get("integer_rewards")
    return MdpSpec(states, actions, P, adm, rewards, horizon, terminal,
                   declared_integer_rewards=None if declared is None else bool(declared))


def load(path, check=True):
    """Read a model file; with ``check=True`` raise if the model does not validate."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(exc.msg, line=exc.lineno) from None
    spec = spec_from_dict(doc)
    if check:
        violations = validate(spec)
        if violations:
            raise ModelValidationError(violations)
    return spec
