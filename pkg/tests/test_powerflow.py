import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import bisect

from gridscreen.grid import GridCase, bus_partition, build_ybus, load_case
from gridscreen.powerflow import Injections, mismatch, solve_nr
from gridscreen.topology import enumerate_contingencies

from support import injection_oracle, path_case


def two_bus_oracle():
    # P2 = 10 V sin(th) = -0.1 and Q2 = 10 V^2 - 10 V cos(th) = 0  =>  V = cos(th)
    th = bisect(lambda a: 10 * np.cos(a) * np.sin(a) + 0.1, -0.5, 0.0, xtol=1e-15)
    return np.cos(th), th


def test_two_bus_against_bisection(toy):
    vm, va = two_bus_oracle()
    sol = solve_nr(toy)
    assert sol.converged
    assert sol.Vm[1] == pytest.approx(vm, abs=1e-9)
    assert sol.Va[1] == pytest.approx(va, abs=1e-9)
    assert sol.Vm[1] == pytest.approx(0.99995, abs=1e-5)
    assert sol.Va[1] == pytest.approx(-0.01000, abs=1e-5)


def test_two_bus_derived_point_has_tiny_mismatch(toy):
    vm, va = two_bus_oracle()
    dp, dq = mismatch(toy, build_ybus(toy), np.array([1.0, vm]), np.array([0.0, va]),
                      Injections.nominal(toy).bus_power(toy))
    assert abs(dp[1]) < 1e-10 and abs(dq[1]) < 1e-10


def test_flat_zero_network_balanced_in_one_iteration(case14):
    bus = case14.bus.copy()
    bus[:, 2:6] = 0
    bus[:, 7] = 1.0
    gen = case14.gen.copy()
    gen[:, 1] = 0
    gen[:, 5] = 1.0
    br = case14.branch.copy()
    br[:, 4] = 0
    br[:, 8:10] = 0
    flat = GridCase("flat", 100.0, bus, gen, br)
    dp, dq = mismatch(flat, build_ybus(flat), np.ones(14), np.zeros(14), np.zeros(14))
    assert np.abs(dp).max() < 1e-12 and np.abs(dq).max() < 1e-12
    sol = solve_nr(flat)
    assert sol.converged and sol.iterations == 1
    np.testing.assert_array_equal(sol.Vm, 1.0)
    np.testing.assert_array_equal(sol.Va, 0.0)


@pytest.mark.parametrize("name", ["case14", "case30", "case57", "case118"])
def test_nominal_solution_satisfies_independent_balance(name):
    case = load_case(name)
    sol = solve_nr(case)
    assert sol.converged and sol.max_mismatch <= 1e-8
    slack, pv, pq = bus_partition(case)
    S = injection_oracle(case, sol.Vm, sol.Va)
    sched = Injections(case.Pd, case.Qd, sol.Pg).bus_power(case) + 1j * sol.bus_Qg(case)
    np.testing.assert_allclose(S, sched, atol=1e-8)
    np.testing.assert_allclose(sol.Vm[np.r_[slack, pv]], case.Vm_set[np.r_[slack, pv]])
    assert sol.Va[slack[0]] == 0


def test_case14_iteration_bound(case14):
    sol = solve_nr(case14)
    assert sol.converged and sol.iterations <= 6 and sol.max_mismatch <= 1e-8


def test_bus_permutation_invariance(case14):
    rng = np.random.default_rng(3)
    perm = rng.permutation(case14.n_bus)
    shuffled = GridCase("perm", case14.base_mva, case14.bus[perm].copy(), case14.gen.copy(),
                        case14.branch.copy())
    a, b = solve_nr(case14), solve_nr(shuffled)
    np.testing.assert_allclose(b.Vm, a.Vm[perm], atol=1e-10)
    np.testing.assert_allclose(b.Va, a.Va[perm], atol=1e-10)
    np.testing.assert_allclose(b.Qg, a.Qg, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 18), st.floats(-0.05, 0.05), st.integers(0, 2**31))
def test_perturbed_start_reaches_same_n1_solution(e, amp, seed):
    case = load_case("case14")
    topo = enumerate_contingencies(case, 1)[e]
    ref = solve_nr(case, topo)
    rng = np.random.default_rng(seed)
    V0 = ref.V * (1 + amp * rng.uniform(-1, 1, case.n_bus))
    sol = solve_nr(case, topo, V0=V0)
    assert sol.converged
    np.testing.assert_allclose(sol.Vm, ref.Vm, atol=1e-7)
    np.testing.assert_allclose(sol.Va, ref.Va, atol=1e-7)


def test_nonconvergence_reported_not_raised():
    case = path_case(6, load=400.0)
    sol = solve_nr(case, max_iter=10)
    assert not sol.converged
    assert sol.message


def test_batched_mismatch_matches_single(case14):
    sol = solve_nr(case14)
    S = Injections.nominal(case14).bus_power(case14) + 1j * sol.bus_Qg(case14)
    Vm = np.stack([sol.Vm, sol.Vm])
    Va = np.stack([sol.Va, sol.Va])
    dp, dq = mismatch(case14, build_ybus(case14), Vm, Va, S)
    single = mismatch(case14, build_ybus(case14), sol.Vm, sol.Va, S)
    np.testing.assert_allclose(dp[1], single[0])
    np.testing.assert_allclose(dq[0], single[1])
