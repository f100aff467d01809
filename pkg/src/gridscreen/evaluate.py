"""Line flows, accuracy metrics, contingency screening and NR-vs-surrogate timing."""
from __future__ import annotations

import io
import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import GridCase, build_ybus
from .models.physics import BusMasks
from .powerflow import Injections, solve_nr
from .topology import Topology

METRIC_NOTES = {
    "mse": "mean over samples of the per-sample mean squared error over supervised outputs "
           "(Vm at PQ buses, Va at non-slack buses, Q_g at generator buses)",
    "var": "population variance of the per-sample MSE",
    "mae_v": "mean |Vm error| over PQ buses",
    "mae_v_all": "mean |Vm error| over all buses after setpoint substitution",
    "mae_s": "mean | |S_ij| error | at the sending end of in-service branches",
}


# -- flows -----------------------------------------------------------------

def line_flows(Vm, Va, case: GridCase, topo=(), branches=None):
    """Complex branch flows ``(S_ij, S_ji)`` in p.u.

    ``Vm``/``Va`` are (V,) or (N, V). Flows are returned for every in-service
    branch in index order, or for ``branches`` if given (all of which must be
    in service). Returns arrays of shape (..., n_selected) and the selected
    branch indices.
    """
    Y = topo if hasattr(topo, "yff") else build_ybus(case, topo)
    if branches is None:
        sel = np.flatnonzero(Y.in_service)
    else:
        sel = np.asarray(branches, dtype=int)
        off = sel[~Y.in_service[sel]]
        if off.size:
            raise ValueError(f"branches {off.tolist()} are out of service in this topology")
    V = np.asarray(Vm) * np.exp(1j * np.asarray(Va))
    vf = V[..., Y.f[sel]]
    vt = V[..., Y.t[sel]]
    i_f = Y.yff[sel] * vf + Y.yft[sel] * vt
    i_t = Y.ytf[sel] * vf + Y.ytt[sel] * vt
    return vf * np.conj(i_f), vt * np.conj(i_t), sel


def complete_state(pred, masks: BusMasks):
    """Replace known quantities: Vm at PV/slack -> setpoint, Va[slack] -> 0."""
    Vm = np.where(masks.pq_mask > 0, pred[..., 0], masks.Vset)
    Va = pred[..., 1] * masks.nonslack
    return Vm, Va


def _group(topologies):
    groups: dict = {}
    for i, t in enumerate(topologies):
        groups.setdefault(t, []).append(i)
    return {t: np.asarray(r) for t, r in groups.items()}


# -- metrics ---------------------------------------------------------------

@dataclass
class MetricsReport:
    n: int
    mse: float
    var: float
    mae_v: float
    mae_v_all: float
    mae_s: float
    per_topology: dict = field(default_factory=dict)
    per_k: dict = field(default_factory=dict)
    per_sample_mse: np.ndarray | None = field(default=None, repr=False)
    notes: dict = field(default_factory=lambda: dict(METRIC_NOTES))

    def to_dict(self, with_samples=False):
        d = asdict(self)
        d["per_sample_mse"] = self.per_sample_mse.tolist() if with_samples else None
        return d


def _summ(mse_i, ae_v, ae_v_all, ae_s):
    return {"n": int(len(mse_i)), "mse": float(np.mean(mse_i)), "var": float(np.var(mse_i)),
            "mae_v": float(np.mean(ae_v)), "mae_v_all": float(np.mean(ae_v_all)),
            "mae_s": float(np.mean(ae_s)) if ae_s.size else 0.0}


def compute_metrics(pred, truth, case: GridCase, topologies) -> MetricsReport:
    """Accuracy of ``pred`` against ``truth`` (both (N, V, 3)).

    ``topologies`` gives the topology of every sample. All statistics are
    invariant under a joint permutation of the samples.
    """
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    topologies = list(topologies)
    if pred.shape != truth.shape or len(topologies) != len(pred):
        raise ValueError(f"misaligned inputs: pred {pred.shape}, truth {truth.shape}, "
                         f"{len(topologies)} topologies")
    if pred.shape[1:] != (case.n_bus, 3):
        raise ValueError(f"expected (N, {case.n_bus}, 3) arrays, got {pred.shape}")
    masks = BusMasks(case)
    sel = masks.target > 0
    err = (pred - truth)[:, sel]
    mse_i = np.mean(err ** 2, axis=1)
    vm_p, va_p = complete_state(pred, masks)
    vm_t, va_t = complete_state(truth, masks)
    ae_v = np.abs(vm_p - vm_t)[:, masks.pq_mask > 0].mean(axis=1)
    ae_v_all = np.abs(vm_p - vm_t).mean(axis=1)
    ae_s = np.zeros(len(pred))
    for t, rows in _group(topologies).items():
        Y = build_ybus(case, t)
        sp_, _, _ = line_flows(vm_p[rows], va_p[rows], case, Y)
        st_, _, _ = line_flows(vm_t[rows], va_t[rows], case, Y)
        ae_s[rows] = np.abs(np.abs(sp_) - np.abs(st_)).mean(axis=1)

    per_topo, per_k = {}, {}
    ks = np.array([t.k for t in topologies])
    for t, rows in sorted(_group(topologies).items(), key=lambda kv: (kv[0].k, kv[0].out_branches)):
        per_topo[t.id] = _summ(mse_i[rows], ae_v[rows], ae_v_all[rows], ae_s[rows])
    for k in sorted(set(ks.tolist())):
        r = ks == k
        per_k[str(k)] = _summ(mse_i[r], ae_v[r], ae_v_all[r], ae_s[r])
    overall = _summ(mse_i, ae_v, ae_v_all, ae_s)
    return MetricsReport(per_topology=per_topo, per_k=per_k, per_sample_mse=mse_i, **overall)


def plot_data(report: MetricsReport, topologies, bins=30) -> dict:
    """CSV strings for an error histogram and per-k box-plot quantiles."""
    mse = report.per_sample_mse
    ks = np.array([t.k for t in topologies])
    lo = max(mse.min(), 1e-16)
    edges = np.logspace(np.log10(lo), np.log10(max(mse.max(), lo * 10)), bins + 1)
    hist_rows = []
    for k in sorted(set(ks.tolist())):
        counts, _ = np.histogram(mse[ks == k], bins=edges)
        hist_rows += [(k, edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)]
    box_rows = []
    for k in sorted(set(ks.tolist())):
        q = np.quantile(mse[ks == k], [0, 0.25, 0.5, 0.75, 1])
        box_rows.append((k, *q))
    return {
        "histogram.csv": _csv(["k", "lo", "hi", "count"], hist_rows),
        "boxplot.csv": _csv(["k", "min", "q1", "median", "q3", "max"], box_rows),
    }


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_csv(report: MetricsReport) -> str:
    cols = ["n", "mse", "var", "mae_v", "mae_v_all", "mae_s"]
    rows = [(tid, *(v[c] for c in cols)) for tid, v in report.per_topology.items()]
    return _csv(["topology", *cols], rows)


# -- screening -------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    """Screening limits. ``None`` voltage limits mean the per-bus case limits;
    branch limits are ``rate_scale * rate_a`` (rate_a = 0 means unlimited)."""

    vmin: float | None = None
    vmax: float | None = None
    rate_scale: float = 1.0

    def bounds(self, case: GridCase):
        vmin = case.Vmin if self.vmin is None else np.full(case.n_bus, float(self.vmin))
        vmax = case.Vmax if self.vmax is None else np.full(case.n_bus, float(self.vmax))
        rate = np.where(case.rate_a > 0, case.rate_a * self.rate_scale, np.inf)
        return vmin, vmax, rate


@dataclass
class ScreeningVerdict:
    scenario: int
    topology: str
    undervoltage: list
    overvoltage: list
    congested: list
    severity: float

    @property
    def flagged(self) -> bool:
        return bool(self.undervoltage or self.overvoltage or self.congested)


def _verdicts(Vm, Va, case, topologies, thresholds: Thresholds):
    vmin, vmax, rate = thresholds.bounds(case)
    out = [None] * len(Vm)
    for t, rows in _group(topologies).items():
        Sf, _, br = line_flows(Vm[rows], Va[rows], case, t)
        load = np.abs(Sf)
        for j, r in enumerate(rows):
            under = vmin - Vm[r]
            over = Vm[r] - vmax
            cong = load[j] - rate[br]
            sev = under[under > 0].sum() + over[over > 0].sum() + cong[cong > 0].sum()
            out[r] = ScreeningVerdict(int(r), t.id, np.flatnonzero(under > 0).tolist(),
                                      np.flatnonzero(over > 0).tolist(),
                                      br[cong > 0].tolist(), float(sev))
    return out


def screen(model, case: GridCase, x, topologies, thresholds: Thresholds | None = None):
    """Flag voltage and loading violations from surrogate predictions.

    Returns ``(verdicts, ranked)``: one verdict per scenario and the flagged
    scenarios sorted by decreasing severity.
    """
    thresholds = thresholds or Thresholds()
    if model.n_bus != case.n_bus:
        raise ValueError(f"model expects {model.n_bus} buses but case {case.name} has {case.n_bus}")
    topologies = list(topologies)
    pred = model.predict(x, topologies)
    Vm, Va = complete_state(pred, BusMasks(case))
    verdicts = _verdicts(Vm, Va, case, topologies, thresholds)
    return verdicts, rank(verdicts)


def oracle_screen(case: GridCase, y_true, topologies, thresholds: Thresholds | None = None):
    """Reference screen on NR voltages (e.g. dataset labels)."""
    thresholds = thresholds or Thresholds()
    y_true = np.asarray(y_true)
    verdicts = _verdicts(y_true[..., 0], y_true[..., 1], case, list(topologies), thresholds)
    return verdicts, rank(verdicts)


def rank(verdicts):
    return sorted((v for v in verdicts if v.flagged), key=lambda v: (-v.severity, v.scenario))


def confusion(nn_verdicts, nr_verdicts) -> dict:
    """Scenario-level confusion of the surrogate screen against the NR screen."""
    if len(nn_verdicts) != len(nr_verdicts):
        raise ValueError("verdict lists differ in length")
    a = np.array([v.flagged for v in nn_verdicts])
    b = np.array([v.flagged for v in nr_verdicts])
    tp, fp = int((a & b).sum()), int((a & ~b).sum())
    fn, tn = int((~a & b).sum()), int((~a & ~b).sum())
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "recall": tp / (tp + fn) if tp + fn else float("nan"),
            "precision": tp / (tp + fp) if tp + fp else float("nan")}


# -- timing ----------------------------------------------------------------

def injections_from_features(case: GridCase, x) -> Injections:
    """Invert the feature map: bus P_g is shared equally by the bus's generators."""
    x = np.asarray(x)
    per_bus = np.bincount(case.gen_bus, minlength=case.n_bus)
    Pg = x[case.gen_bus, 2] / per_bus[case.gen_bus]
    return Injections(x[:, 0].copy(), x[:, 1].copy(), Pg)


def _nr_chunk(args):
    case, xs, topo_ids = args
    ok = 0
    for x, tid in zip(xs, topo_ids):
        ok += solve_nr(case, Topology.from_id(tid), injections_from_features(case, x)).converged
    return ok


def hardware_note() -> dict:
    return {"machine": platform.machine(), "processor": platform.processor() or "unknown",
            "python": platform.python_version(), "numpy": np.__version__,
            "cpu_count": os.cpu_count(), "platform": platform.platform()}


def benchmark(case: GridCase, x, topologies, model, *, workers=None, min_significant=30,
              repeats=3) -> dict:
    """Wall-clock NR over every scenario vs one batched surrogate pass.

    NR runs serially (Ybus rebuilt per scenario, as a screening
    loop would) and, when ``workers`` > 1, again across processes. The
    surrogate time is the best of ``repeats`` batched passes.
    """
    x = np.asarray(x)
    topologies = list(topologies)
    n = len(x)
    # warm-up
    solve_nr(case, topologies[0], injections_from_features(case, x[0]))
    model.predict(x[:1], topologies[:1])

    t0 = time.perf_counter()
    converged = 0
    for xi, t in zip(x, topologies):
        converged += solve_nr(case, t, injections_from_features(case, xi)).converged
    t_nr = time.perf_counter() - t0

    t_par = None
    if workers and workers > 1:
        chunks = np.array_split(np.arange(n), workers)
        jobs = [(case, x[c], [topologies[i].id for i in c]) for c in chunks if len(c)]
        t0 = time.perf_counter()
        with ProcessPoolExecutor(workers) as ex:
            list(ex.map(_nr_chunk, jobs))
        t_par = time.perf_counter() - t0

    t_nn = np.inf
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        model.predict(x, topologies)
        t_nn = min(t_nn, time.perf_counter() - t0)
    return {
        "scenarios": n,
        "topologies": len(set(topologies)),
        "nr_converged": int(converged),
        "nr_serial_s": t_nr,
        "nr_parallel_s": t_par,
        "nr_workers": workers or 1,
        "nn_batched_s": t_nn,
        "speedup": t_nr / t_nn if t_nn > 0 else float("inf"),
        "speedup_vs_parallel": (t_par / t_nn) if (t_par and t_nn > 0) else None,
        "significant": n >= min_significant,
        "hardware": hardware_note(),
    }


def to_json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(f"cannot serialize {type(o).__name__}")
    return json.dumps(obj, default=default, indent=2)
