import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmdp.distributions import (
    DiscreteDistribution,
    StepCurve,
    dist_to_curve,
    eval_curve,
    mixture_quantile,
    pointwise_max,
)
from qmdp.exceptions import DomainError
from qmdp.opt import OptInstance, allocation_matrix, extract_allocation, solve_opt_full

TAUS = np.linspace(0, 1, 101)


def golden_instance():
    g1 = StepCurve([0, 0.5], [10, 11])
    g2 = StepCurve([0, 0.4], [8, 12])
    g3 = StepCurve.constant(10)
    return OptInstance([(0.25, g1), (0.5, g2), (0.25, g3)])


@st.composite
def instances(draw, monotone=True):
    n = draw(st.integers(1, 4))
    w = np.array(draw(st.lists(st.integers(1, 8), min_size=n, max_size=n)), float)
    w /= w.sum()
    branches = []
    for p in w:
        k = draw(st.integers(1, 4))
        vals = draw(st.lists(st.integers(-5, 5), min_size=k, max_size=k))
        if monotone:
            atoms = draw(st.lists(st.integers(1, 8), min_size=k, max_size=k))
            d = DiscreteDistribution(vals, np.array(atoms, float) / sum(atoms))
            branches.append((p, d))
        else:
            cuts = sorted(set(draw(st.lists(st.integers(1, 15), min_size=k - 1, max_size=k - 1))))
            branches.append((p, StepCurve([0.0] + [c / 16 for c in cuts], vals[: len(cuts) + 1])))
    return branches


def test_golden_instance_walkthrough():
    f = solve_opt_full(golden_instance())
    assert eval_curve(f, 0.0) == 8
    assert np.all(eval_curve(f, np.linspace(0, 0.2, 41)) == 8)
    assert eval_curve(f, 0.2 + 1e-9) == 10
    assert f == StepCurve([0, 0.2, 0.575, 0.7], [8, 10, 11, 12])


def test_sweep_and_merge_agree_on_golden_instance():
    inst = golden_instance()
    assert solve_opt_full(inst, "sweep") == solve_opt_full(inst, "merge")


def test_single_branch():
    inst = OptInstance([(1.0, StepCurve.constant(5))])
    assert solve_opt_full(inst) == StepCurve.constant(5)
    g = StepCurve([0, 0.5], [1, 2])
    a = extract_allocation(OptInstance([(1.0, g)]), 0.3)
    assert a.q.tolist() == [0.3]
    assert a.achieved_value == eval_curve(g, 0.3)


def test_two_point_masses():
    inst = OptInstance([(0.5, StepCurve.constant(0)), (0.5, StepCurve.constant(10))])
    assert solve_opt_full(inst) == StepCurve([0, 0.5], [0, 10])
    # The quantile inf{x : F(x) >= tau} at exactly 0.5 is the lower atom.
    assert eval_curve(solve_opt_full(inst), 0.5) == 0
    a = extract_allocation(inst, 0.75)
    assert a.q[0] == 1.0 and 0 < a.q[1] <= 0.5
    assert a.achieved_value == 10


def test_tau_one_is_sup():
    inst = golden_instance()
    a = extract_allocation(inst, 1.0)
    assert np.all(a.q == 1.0)
    assert a.achieved_value == 12


def test_zero_probability_branch_ignored():
    inst = OptInstance([(0.0, StepCurve.constant(-100)), (1.0, StepCurve([0, 0.5], [1, 2]))])
    assert solve_opt_full(inst) == StepCurve([0, 0.5], [1, 2])
    assert extract_allocation(inst, 0.3).q[0] == 1.0


def test_errors():
    with pytest.raises(DomainError):
        OptInstance([])
    with pytest.raises(DomainError):
        OptInstance([(0.7, StepCurve.constant(1))])
    with pytest.raises(DomainError):
        extract_allocation(golden_instance(), 1.2)
    non_mono = OptInstance([(0.5, StepCurve([0, 0.5], [2, 1])), (0.5, StepCurve.constant(0))])
    with pytest.raises(DomainError):
        solve_opt_full(non_mono, "merge")


@given(instances())
@settings(max_examples=150, deadline=None)
def test_matches_mixture_quantile(branches):
    inst = OptInstance([(p, dist_to_curve(d)) for p, d in branches])
    f = solve_opt_full(inst)
    for tau in np.concatenate((TAUS, f.breaks)):
        assert eval_curve(f, tau) == mixture_quantile(branches, tau)


@given(instances(), instances())
@settings(max_examples=100, deadline=None)
def test_dominating_inputs_give_dominating_output(branches, other):
    curves = [(p, dist_to_curve(d)) for p, d in branches]
    # Raise every branch to the pointwise max with some other quantile function.
    bumps = [dist_to_curve(d) for _, d in other]
    raised = [(p, pointwise_max([g, bumps[i % len(bumps)]])[0]) for i, (p, g) in enumerate(curves)]
    low = eval_curve(solve_opt_full(OptInstance(curves)), TAUS)
    high = eval_curve(solve_opt_full(OptInstance(raised)), TAUS)
    assert np.all(high >= low)


@given(instances(), st.integers(-5, 5), st.sampled_from([0.5, 2.0, 3.0]))
@settings(max_examples=80, deadline=None)
def test_shift_and_scale_equivariance(branches, c, lam):
    curves = [(p, dist_to_curve(d)) for p, d in branches]
    f = solve_opt_full(OptInstance(curves))
    shifted = solve_opt_full(OptInstance([(p, g.shift(c)) for p, g in curves]))
    scaled = solve_opt_full(OptInstance([(p, g.scale(lam)) for p, g in curves]))
    assert np.array_equal(eval_curve(shifted, TAUS), eval_curve(f, TAUS) + c)
    assert np.array_equal(eval_curve(scaled, TAUS), eval_curve(f, TAUS) * lam)


@given(instances(monotone=False), st.sampled_from(["equal", "ties"]))
@settings(max_examples=100, deadline=None)
def test_allocation_feasible_and_secures_value(branches, mode):
    inst = OptInstance(branches)
    q, values = allocation_matrix(inst, TAUS, mode=mode)
    probs = inst.probs
    assert np.all((q >= 0) & (q <= 1))
    assert np.all(q @ probs <= TAUS + 1e-12)
    if mode == "equal":
        # Every branch left in the min sits strictly inside a piece worth at least f(tau).
        for row, tau, v in zip(q, TAUS, values):
            live = [eval_curve(g, qi) for (p, g), qi in zip(branches, row) if qi < 1 and p > 0]
            if live and tau < 1:
                assert min(live) >= v - 1e-9
    else:
        assert np.allclose(q @ probs, TAUS, atol=1e-12)


@given(instances(monotone=False))
@settings(max_examples=60, deadline=None)
def test_sweep_value_equals_mixture_quantile_of_sorted_branches(branches):
    # A non-monotone branch contributes its pieces in sweep order, which the
    # merge path cannot see; it still agrees with the merge of monotone rearrangements
    # whenever the branches are monotone.
    mono = [(p, StepCurve(g.breaks, np.sort(g.values))) for p, g in branches]
    inst = OptInstance(mono)
    assert solve_opt_full(inst, "sweep") == solve_opt_full(inst, "merge")
