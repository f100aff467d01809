"""Polar Newton-Raphson AC power flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import AdmittanceMatrix, GridCase, build_ybus, bus_partition

DENSE_LIMIT = 200


@dataclass(frozen=True)
class Injections:
    """Operating point: bus loads and generator active power (all p.u.).

    ``Pg`` is per generator; the slack generator's entry is only used as an
    input feature, the solver overwrites it.
    """

    Pd: np.ndarray
    Qd: np.ndarray
    Pg: np.ndarray

    @classmethod
    def nominal(cls, case: GridCase) -> "Injections":
        return cls(case.Pd, case.Qd, case.Pg)

    def bus_power(self, case: GridCase) -> np.ndarray:
        """Scheduled complex injection S = Pg - Pd - jQd per bus (Qg excluded)."""
        pg_bus = np.bincount(case.gen_bus, weights=self.Pg, minlength=case.n_bus)
        return pg_bus - self.Pd - 1j * self.Qd


@dataclass(frozen=True)
class PFSolution:
    Vm: np.ndarray
    Va: np.ndarray
    Pg: np.ndarray
    Qg: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    message: str = ""

    @property
    def V(self) -> np.ndarray:
        return self.Vm * np.exp(1j * self.Va)

    def bus_Qg(self, case: GridCase) -> np.ndarray:
        return np.bincount(case.gen_bus, weights=self.Qg, minlength=case.n_bus)


def _as_ybus(case, topo):
    return topo if isinstance(topo, AdmittanceMatrix) else build_ybus(case, topo)


def mismatch(case: GridCase, ybus, Vm, Va, S_inj) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus (dP, dQ) = injection minus V * conj(Y V).

    ``S_inj`` is the complex net injection at every bus (generation minus
    load). Works on single vectors or on batches shaped (..., n_bus).
    """
    ybus = _as_ybus(case, ybus)
    V = np.asarray(Vm) * np.exp(1j * np.asarray(Va))
    I = (ybus.Y @ V.T).T if V.ndim > 1 else ybus.Y @ V
    d = np.asarray(S_inj) - V * np.conj(I)
    return d.real, d.imag


def _dS_dV(Y, V):
    """Partial derivatives of bus injections w.r.t. angle and magnitude (polar)."""
    I = Y @ V
    diagV = np.diag(V) if isinstance(Y, np.ndarray) else sp.diags(V)
    diagI = np.diag(I) if isinstance(Y, np.ndarray) else sp.diags(I)
    diagVn = np.diag(V / np.abs(V)) if isinstance(Y, np.ndarray) else sp.diags(V / np.abs(V))
    dS_dVm = diagV @ (Y @ diagVn).conj() + diagI.conj() @ diagVn
    dS_dVa = 1j * diagV @ (diagI - Y @ diagV).conj()
    return dS_dVa, dS_dVm


def solve_nr(case: GridCase, topo=(), injections: Injections | None = None, *,
             tol: float = 1e-8, max_iter: int = 20, V0=None) -> PFSolution:
    """Solve the AC power flow by Newton's method in polar coordinates.

    Unknowns are the angles at non-slack buses and magnitudes at PQ buses.
    PV buses hold |V| at the generator setpoint and reactive limits are not
    enforced. ``iterations`` counts mismatch evaluations, so a flat start that
    is already balanced reports 1.

    A singular Jacobian or ``max_iter`` exhaustion returns ``converged=False``
    with the last iterate instead of raising.
    """
    ybus = _as_ybus(case, topo)
    inj = injections if injections is not None else Injections.nominal(case)
    slack, pv, pq = bus_partition(case)
    pvpq = np.r_[pv, pq]
    nb = case.n_bus
    dense = nb <= DENSE_LIMIT
    Y = ybus.dense() if dense else ybus.Y.tocsc()

    if V0 is None:
        Vm = case.Vm_set.copy()
        Vm[pq] = 1.0
        Va = np.zeros(nb)
    else:
        V0 = np.asarray(V0)
        Vm, Va = np.abs(V0).astype(float), np.angle(V0)
        Vm[slack], Vm[pv] = case.Vm_set[slack], case.Vm_set[pv]
        Va[slack] = 0.0
    Sbus = inj.bus_power(case)
    V = Vm * np.exp(1j * Va)

    def _mis(V):
        d = Sbus - V * np.conj(Y @ V)
        F = np.r_[d.real[pvpq], d.imag[pq]]
        return F, (np.max(np.abs(F)) if F.size else 0.0)

    F, norm = _mis(V)
    it, message = 1, ""
    converged = norm <= tol
    n_pvpq = len(pvpq)
    while not converged and it < max_iter:
        dS_dVa, dS_dVm = _dS_dV(Y, V)
        if dense:
            J = np.block([
                [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
                [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
            ])
            try:
                dx = np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                message = "singular Jacobian"
                break
        else:
            dS_dVa, dS_dVm = dS_dVa.tocsr(), dS_dVm.tocsr()
            J = sp.bmat([
                [dS_dVa[pvpq][:, pvpq].real, dS_dVm[pvpq][:, pq].real],
                [dS_dVa[pq][:, pvpq].imag, dS_dVm[pq][:, pq].imag],
            ], format="csc")
            dx = spla.spsolve(J, F)
            if not np.all(np.isfinite(dx)):
                message = "singular Jacobian"
                break
        Va[pvpq] += dx[:n_pvpq]
        Vm[pq] += dx[n_pvpq:]
        V = Vm * np.exp(1j * Va)
        F, norm = _mis(V)
        it += 1
        if not np.isfinite(norm):
            message = "diverged"
            break
        converged = norm <= tol
    if not converged and not message:
        message = f"no convergence in {max_iter} iterations"

    # generator outputs from the final injections
    S = V * np.conj(Y @ V)
    Pg = np.asarray(inj.Pg, dtype=float).copy()
    Qg = np.zeros(case.n_gen)
    gbus = case.gen_bus
    on_slack = np.flatnonzero(gbus == slack[0])
    if on_slack.size:
        others = np.setdiff1d(np.arange(case.n_gen), on_slack[:1])
        p_other = Pg[others][gbus[others] == slack[0]].sum()
        Pg[on_slack[0]] = S.real[slack[0]] + inj.Pd[slack[0]] - p_other
    Qbus = S.imag + inj.Qd
    for b in np.unique(gbus):
        g = np.flatnonzero(gbus == b)
        span = case.Qmax[g] - case.Qmin[g]
        w = span / span.sum() if len(g) > 1 and span.sum() > 0 else np.full(len(g), 1.0 / len(g))
        Qg[g] = Qbus[b] * w
    return PFSolution(Vm.copy(), Va.copy(), Pg, Qg, bool(converged), it, float(norm), message)
