import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridscreen.evaluate import (Thresholds, benchmark, compute_metrics, confusion, line_flows,
                                 metrics_csv, oracle_screen, plot_data, screen, to_json)
from gridscreen.grid import GridCase, load_case
from gridscreen.models import GDNN, BusMasks
from gridscreen.powerflow import Injections, solve_nr
from gridscreen.topology import REFERENCE, enumerate_contingencies


def test_flat_voltage_zero_shunt_no_flow(case14):
    br = case14.branch.copy()
    br[:, 4] = 0
    br[:, 8:10] = 0
    bus = case14.bus.copy()
    bus[:, 4:6] = 0
    flat = GridCase("flat", 100.0, bus, case14.gen.copy(), br)
    sf, st_, sel = line_flows(np.ones(14), np.zeros(14), flat)
    assert len(sel) == 20
    assert np.abs(sf).max() < 1e-12 and np.abs(st_).max() < 1e-12


def test_two_bus_flow_closed_form(toy):
    sol = solve_nr(toy)
    sf, st_, _ = line_flows(sol.Vm, sol.Va, toy)
    loss = 0.1 * 0.01 / sol.Vm[1] ** 2  # x |I|^2 with |I| = |S_21| / |V_2|
    assert sf[0] == pytest.approx(0.1 + 1j * loss, abs=1e-10)
    assert st_[0] == pytest.approx(-0.1 + 0j, abs=1e-10)


def test_kcl_on_every_14_bus_topology(case14):
    topos = [REFERENCE] + enumerate_contingencies(case14, 1) + enumerate_contingencies(case14, 2)
    solved = 0
    for t in topos:
        sol = solve_nr(case14, t)
        if not sol.converged:
            continue  # KCL only holds on exact solutions
        solved += 1
        sf, st_, sel = line_flows(sol.Vm, sol.Va, case14, t)
        f, tt = case14.f[sel], case14.t[sel]
        net = np.zeros(14, complex)
        np.add.at(net, f, sf)
        np.add.at(net, tt, st_)
        net += sol.Vm ** 2 * (case14.Gs - 1j * case14.Bs)
        inj = Injections(case14.Pd, case14.Qd, sol.Pg).bus_power(case14) + 1j * sol.bus_Qg(case14)
        np.testing.assert_allclose(net, inj, atol=1e-8, err_msg=t.id)
    assert solved >= 0.95 * len(topos)


def test_flows_reject_out_of_service_branch(case14):
    with pytest.raises(ValueError):
        line_flows(np.ones(14), np.zeros(14), case14, [3], branches=[3])


def test_perfect_prediction_zero_metrics(case14, small14):
    rep = compute_metrics(small14.y, small14.y, case14, small14.sample_topologies())
    assert rep.mse == rep.var == rep.mae_v == rep.mae_v_all == rep.mae_s == 0
    assert rep.n == len(small14)
    assert set(rep.per_k) == {"0", "1"}


def test_vm_offset_gives_mae_v(case14, small14):
    pred = small14.y.copy()
    pred[:, :, 0] += 0.01
    rep = compute_metrics(pred, small14.y, case14, small14.sample_topologies())
    assert rep.mae_v == pytest.approx(0.01, abs=1e-15)


def test_variance_two_samples(case14, small14):
    y = small14.y[:2]
    pred = y.copy()
    pred[0, :, 1] += 0.1
    pred[1, :, 1] += 0.3
    rep = compute_metrics(pred, y, case14, small14.sample_topologies()[:2])
    a, b = rep.per_sample_mse
    m = (a + b) / 2
    assert rep.var == pytest.approx(((a - m) ** 2 + (b - m) ** 2) / 2, rel=1e-12)
    assert rep.mse == pytest.approx(m, rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_permutation_invariant(seed):
    case = load_case("case14")
    rng = np.random.default_rng(seed)
    topos = [REFERENCE] + enumerate_contingencies(case, 1)[:4]
    per = [topos[i] for i in rng.integers(5, size=12)]
    truth = np.stack([np.stack([1 + 0.02 * rng.normal(size=14), 0.1 * rng.normal(size=14),
                                rng.normal(size=14)], axis=1) for _ in range(12)])
    pred = truth + 0.01 * rng.normal(size=truth.shape)
    a = compute_metrics(pred, truth, case, per)
    p = rng.permutation(12)
    b = compute_metrics(pred[p], truth[p], case, [per[i] for i in p])
    for k in ("mse", "var", "mae_v", "mae_v_all", "mae_s"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-12, abs=1e-18)
    assert a.per_topology.keys() == b.per_topology.keys()


def test_metrics_misaligned(case14, small14):
    with pytest.raises(ValueError):
        compute_metrics(small14.y[:3], small14.y[:4], case14, small14.sample_topologies()[:3])


def test_plot_and_csv_outputs(case14, small14):
    rep = compute_metrics(small14.y + 0.001, small14.y, case14, small14.sample_topologies())
    files = plot_data(rep, small14.sample_topologies())
    assert set(files) == {"histogram.csv", "boxplot.csv"}
    assert metrics_csv(rep).count("\n") >= 2
    json.loads(to_json(rep.to_dict()))


def test_loose_thresholds_flag_nothing(case14, small14):
    model = GDNN(case14)
    th = Thresholds(vmin=-10, vmax=10, rate_scale=1e9)
    verdicts, ranked = screen(model, case14, small14.x, small14.sample_topologies(), th)
    assert len(verdicts) == len(small14) and ranked == []


def test_oracle_flags_low_voltage(case14, small14):
    b = 9
    vmin = float(small14.y[:, b, 0].min()) + 1e-6
    th = Thresholds(vmin=vmin, vmax=10, rate_scale=1e9)
    verdicts, ranked = oracle_screen(case14, small14.y, small14.sample_topologies(), th)
    low = int(np.argmin(small14.y[:, b, 0]))
    assert verdicts[low].flagged and b in verdicts[low].undervoltage
    assert ranked and all(r.flagged for r in ranked)
    sev = [r.severity for r in ranked]
    assert sev == sorted(sev, reverse=True)


def test_screen_deterministic_and_checks_case(case14, small14):
    model = GDNN(case14, seed=1)
    topos = small14.sample_topologies()
    a, _ = screen(model, case14, small14.x, topos)
    b, _ = screen(model, case14, small14.x, topos)
    assert a == b
    with pytest.raises(ValueError):
        screen(model, load_case("case30"), small14.x, topos)


def test_confusion_counts(case14, small14):
    topos = small14.sample_topologies()
    nr, _ = oracle_screen(case14, small14.y, topos)
    c = confusion(nr, nr)
    assert c["fp"] == c["fn"] == 0
    assert c["tp"] + c["tn"] == len(small14)


def test_single_scenario_benchmark_insignificant(case14, small14):
    rep = benchmark(case14, small14.x[:1], small14.sample_topologies()[:1], GDNN(case14), workers=1)
    assert rep["scenarios"] == 1 and rep["significant"] is False
    assert rep["speedup"] > 0 and rep["nr_converged"] == 1
    assert "machine" in rep["hardware"]
