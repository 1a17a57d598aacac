import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargesite.errors import ConfigError, DimensionMismatch, DomainError, NonConvergence, QLimitViolation, SingularBranch
from chargesite.power_grid import (
    Branch,
    Bus,
    Generator,
    PowerSystem,
    branch_losses,
    build_admittance,
    dispatch_with_ev,
    impact_metric,
    load_case,
    solve_power_flow,
    with_participation,
)
from oracles import mismatch_trig, two_bus_bisection

# Reference solution of the IEEE 14-bus case from an established solver.
CASE14_VM = [1.06, 1.045, 1.01, 1.01767085, 1.01951386, 1.07, 1.06151953, 1.09, 1.05593172, 1.05098462,
             1.05690652, 1.05518856, 1.05038171, 1.03552995]
CASE14_VA_DEG = [0, -4.98258914, -12.72509994, -10.31290109, -8.7738539, -14.22094646, -13.35962737,
                 -13.35962737, -14.9385213, -15.09728846, -14.79062203, -15.07558452, -15.15627634, -16.03364453]
CASE14_GEN = [[232.39327236, -16.54930054], [40, 43.55710014], [0, 25.0753485], [0, 12.73094441], [0, 17.62345137]]


def two_bus(p=50.0, q=20.0, x=0.1, b=0.0):
    return PowerSystem(
        buses=[Bus(1, "slack", vm=1.0), Bus(2, "PQ", pd=p, qd=q)],
        branches=[Branch(1, 2, 0.0, x, b)],
        generators=[Generator(1, vg=1.0)],
    )


@pytest.fixture(scope="module")
def case14():
    return load_case("ieee14")


@pytest.fixture(scope="module")
def case118():
    return load_case("ieee118")


# ---------------------------------------------------------------- admittance

def test_admittance_no_branches():
    sys = PowerSystem([Bus(1, "slack")], [], [Generator(1)])
    assert not build_admittance(sys).any()


def test_admittance_single_branch():
    y = build_admittance(two_bus(b=0.2))
    assert y[0, 1] == pytest.approx(10j)
    assert y[1, 0] == pytest.approx(10j)
    assert y[0, 0] == pytest.approx(-10j + 0.1j)
    assert y[1, 1] == pytest.approx(-10j + 0.1j)


def test_admittance_parallel_branches_double():
    one = build_admittance(two_bus())
    sys = two_bus()
    sys2 = PowerSystem(sys.buses, sys.branches * 2, sys.generators)
    np.testing.assert_allclose(build_admittance(sys2), 2 * one)


def test_admittance_zero_impedance():
    sys = PowerSystem([Bus(1, "slack"), Bus(2, "PQ")], [Branch(1, 2, 0.0, 0.0)], [Generator(1)])
    with pytest.raises(SingularBranch):
        build_admittance(sys)


def test_admittance_symmetry_and_row_sums(case14):
    y = build_admittance(case14)
    taps = {(case14.index(b.f), case14.index(b.t)) for b in case14.branches if b.tap != 1.0}
    mask = np.ones_like(y, dtype=bool)
    for f, t in taps:
        mask[f, t] = mask[t, f] = False
    np.testing.assert_allclose(y[mask], y.T[mask], atol=1e-12)
    # untapped network: row sums are the shunt terms (line charging + bus shunts)
    plain = PowerSystem(case14.buses, [replace(b, tap=1.0) for b in case14.branches], case14.generators)
    yp = build_admittance(plain)
    shunt = np.array([complex(b.gs, b.bs) / 100.0 for b in plain.buses])
    for br in plain.branches:
        shunt[plain.index(br.f)] += 0.5j * br.b
        shunt[plain.index(br.t)] += 0.5j * br.b
    np.testing.assert_allclose(yp.sum(axis=1), shunt, atol=1e-10)


# ---------------------------------------------------------------- power flow

def test_flat_case_needs_no_iterations():
    sys = PowerSystem(
        buses=[Bus(1, "slack"), Bus(2, "PV"), Bus(3, "PQ")],
        branches=[Branch(1, 2, 0.01, 0.1, 0.0), Branch(2, 3, 0.02, 0.2, 0.0)],
        generators=[Generator(1, vg=1.0), Generator(2, vg=1.0)],
    )
    sol = solve_power_flow(sys)
    assert sol.iterations == 0
    np.testing.assert_array_equal(sol.vm, 1.0)
    np.testing.assert_array_equal(sol.va, 0.0)


@pytest.mark.parametrize("p,q,x", [(50.0, 20.0, 0.1), (80.0, -10.0, 0.2), (10.0, 30.0, 0.05)])
def test_two_bus_matches_bisection(p, q, x):
    sol = solve_power_flow(two_bus(p, q, x))
    v, delta = two_bus_bisection(p / 100, q / 100, x)
    assert sol.vm[1] == pytest.approx(v, abs=1e-8)
    assert sol.va[1] == pytest.approx(delta, abs=1e-8)


def test_two_bus_overload_does_not_converge():
    with pytest.raises(NonConvergence):
        solve_power_flow(two_bus(p=2000.0, q=500.0))


def test_case14_reference_solution(case14):
    sol = solve_power_flow(case14)
    assert sol.iterations <= 10
    assert sol.mismatch <= 1e-8
    np.testing.assert_allclose(sol.vm, CASE14_VM, atol=1e-7)
    np.testing.assert_allclose(np.degrees(sol.va), CASE14_VA_DEG, atol=1e-6)
    np.testing.assert_allclose(np.c_[sol.pg, sol.qg], CASE14_GEN, atol=1e-5)
    assert sol.losses_mw == pytest.approx(13.393, abs=1e-3)


def test_case14_mismatch_reevaluated(case14):
    sol = solve_power_flow(case14)
    y = build_admittance(case14)
    p_spec = np.zeros(case14.n_bus)
    q_spec = np.zeros(case14.n_bus)
    for g, pg, qg in zip(case14.generators, sol.pg, sol.qg):
        p_spec[case14.index(g.bus)] += pg
        q_spec[case14.index(g.bus)] += qg
    p_spec -= [b.pd for b in case14.buses]
    q_spec -= [b.qd for b in case14.buses]
    dp, dq = mismatch_trig(y, sol.vm, sol.va, p_spec / 100, q_spec / 100)
    assert np.max(np.abs(dp)) <= 1e-8
    assert np.max(np.abs(dq)) <= 1e-8


@pytest.mark.parametrize("name", ["case14", "case118"])
def test_generation_equals_load_plus_losses(name, request):
    sys = request.getfixturevalue(name)
    sol = solve_power_flow(sys)
    losses = branch_losses(sys, sol)
    shunt_p = sum(b.gs * v**2 for b, v in zip(sys.buses, sol.vm))
    balance = sol.pg.sum() - sum(b.pd for b in sys.buses) - shunt_p - losses
    assert abs(balance) / sys.base_mva <= 1e-6
    assert sol.losses_mw == pytest.approx(losses, abs=1e-6)


def test_case118(case118):
    sol = solve_power_flow(case118)
    assert sol.iterations <= 12
    assert sol.mismatch <= 1e-8
    assert sol.va[case118.slack_index] == 0.0
    assert sol.losses_mw == pytest.approx(132.863, abs=1e-3)


def test_determinism(case14):
    a = solve_power_flow(case14, {9: 5.0})
    b = solve_power_flow(case14, {9: 5.0})
    assert a.vm.tobytes() == b.vm.tobytes()
    assert a.pg.tobytes() == b.pg.tobytes()


def test_q_limits(case14):
    gens = [replace(g, qmax=10.0) if g.bus == 8 else g for g in case14.generators]
    tight = PowerSystem(case14.buses, case14.branches, gens, case14.base_mva)
    sol = solve_power_flow(tight)
    assert sol.q_violations == [4]
    with pytest.raises(QLimitViolation):
        solve_power_flow(tight, strict_q_limits=True)
    held = solve_power_flow(tight, enforce_q_limits=True)
    assert held.qg[4] == pytest.approx(10.0)
    assert held.vm[tight.index(8)] < 1.09
    assert held.mismatch <= 1e-8


def test_system_validation():
    with pytest.raises(ConfigError):
        PowerSystem([Bus(1, "PQ")], [], [])
    with pytest.raises(ConfigError):
        PowerSystem([Bus(1, "slack"), Bus(2, "slack")], [], [Generator(1), Generator(2)])
    with pytest.raises(ConfigError):
        PowerSystem([Bus(1, "slack")], [], [Generator(1, participation=0.5)])


# ---------------------------------------------------------------- EV dispatch and impact

def test_zero_ev_load_identical(case14):
    base, ev = dispatch_with_ev(case14, {})
    assert impact_metric(base, ev).value == 0.0
    base, ev = dispatch_with_ev(case14, {9: 0.0})
    np.testing.assert_array_equal(base.pg, ev.pg)


def test_slack_participation_keeps_pv_outputs(case14):
    factors = [1.0 if g.bus == 1 else 0.0 for g in case14.generators]
    sys = with_participation(case14, factors)
    base, ev = dispatch_with_ev(sys, {9: 10.0})
    np.testing.assert_array_equal(base.pg[1:], ev.pg[1:])
    assert ev.pg[0] > base.pg[0] + 10.0


def test_ev_energy_balance(case14):
    base, ev = dispatch_with_ev(case14, {9: 10.0})
    delta = ev.pg.sum() - base.pg.sum()
    d_loss = branch_losses(case14, ev) - branch_losses(case14, base)
    assert delta == pytest.approx(10.0 + d_loss, abs=1e-6)
    # uniform participation over the four non-slack units
    np.testing.assert_allclose(ev.pg[1:] - base.pg[1:], 2.5)
    assert ev.qg.sum() > base.qg.sum()


def test_ev_load_validation(case14):
    with pytest.raises(DomainError):
        dispatch_with_ev(case14, {2: 1.0})
    with pytest.raises(DomainError):
        dispatch_with_ev(case14, {9: -1.0})


def test_impact_examples():
    assert impact_metric(([1.0, 2.0], [3.0, 4.0]), ([1.0, 2.0], [3.0, 4.0])).value == 0.0
    assert impact_metric(([0.0], [0.0]), ([1.0], [0.0])).value == 1.0
    assert impact_metric(([0.0, 0.0], [0.0, 0.0]), ([1.0, 2.0], [0.0, 2.0])).value == 9.0
    assert impact_metric(([0.0], [0.0]), ([100.0], [0.0]), per_unit=True).value == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        impact_metric(([0.0], [0.0]), ([1.0, 2.0], [0.0, 0.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-10**6, 10**6), min_size=4, max_size=4), st.lists(st.integers(-10**6, 10**6), min_size=4, max_size=4))
def test_impact_non_negative(a, b):
    a, b = [x / 1000 for x in a], [x / 1000 for x in b]
    r = impact_metric((a[:2], a[2:]), (b[:2], b[2:]))
    assert r.value >= 0.0
    assert (r.value == 0.0) == (a == b)


def test_impact_monotone_in_small_load(case14):
    values = []
    for mw in (0.5, 1.0, 2.0, 4.0, 8.0):
        base, ev = dispatch_with_ev(case14, {b: mw for b in (4, 5, 9, 14)})
        values.append(impact_metric(base, ev).value)
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_ev_reactive_power(case14):
    base, ev = dispatch_with_ev(case14, {9: 10.0}, power_factor=1.0)
    base2, ev2 = dispatch_with_ev(case14, {9: 10.0}, power_factor=0.9)
    q_extra = 10.0 * math.tan(math.acos(0.9))
    assert ev2.qg.sum() - ev.qg.sum() > 0.9 * q_extra
