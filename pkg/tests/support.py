"""Shared test helpers: toy cases, independent oracles, finite differences."""
from __future__ import annotations

import numpy as np

from gridscreen.grid import parse_matpower

BUS_ROW = "\t{i}\t{typ}\t{pd}\t{qd}\t0\t0\t1\t1\t0\t100\t1\t1.1\t0.9;"

TWO_BUS = """function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t100\t1\t1.1\t0.9;
\t2\t1\t10\t0\t0\t0\t1\t1\t0\t100\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t10\t0\t100\t-100\t1\t100\t1\t100\t0;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
"""


def two_bus():
    """Slack at bus 1 (V=1), 0.1 p.u. load at bus 2, lossless x=0.1 line."""
    return parse_matpower(TWO_BUS)


def path_case(n: int, load=5.0, x=0.1):
    """n buses in a line, slack at bus 1, every other bus a PQ load."""
    buses = [BUS_ROW.format(i=1, typ=3, pd=0, qd=0)]
    buses += [BUS_ROW.format(i=i, typ=1, pd=load, qd=load / 5) for i in range(2, n + 1)]
    branches = [f"\t{i}\t{i + 1}\t0.01\t{x}\t0.02\t0\t0\t0\t0\t0\t1\t-360\t360;" for i in range(1, n)]
    text = "\n".join([
        f"function mpc = path{n}", "mpc.baseMVA = 100;",
        "mpc.bus = [", *buses, "];",
        "mpc.gen = [", "\t1\t0\t0\t300\t-300\t1\t100\t1\t300\t0;", "];",
        "mpc.branch = [", *branches, "];",
    ])
    return parse_matpower(text)


def ybus_oracle(case, out=()):
    """Dense Ybus assembled branch by branch from the textbook pi model."""
    n = case.n_bus
    Y = np.zeros((n, n), complex)
    out = set(out)
    for e in range(case.n_branch):
        if e in out:
            continue
        i, j = case.f[e], case.t[e]
        ys = 1 / complex(case.r[e], case.x[e])
        bc = 1j * case.b_ch[e] / 2
        a = case.tap[e] * np.exp(1j * case.shift[e])
        Y[i, i] += (ys + bc) / abs(a) ** 2
        Y[i, j] += -ys / np.conj(a)
        Y[j, i] += -ys / a
        Y[j, j] += ys + bc
    for i in range(n):
        Y[i, i] += complex(case.Gs[i], case.Bs[i])
    return Y


def injection_oracle(case, Vm, Va, out=()):
    """Complex bus injection S = V conj(Y V) from the dense oracle Ybus."""
    V = Vm * np.exp(1j * Va)
    return V * np.conj(ybus_oracle(case, out) @ V)


def central_diff(f, p, idx, h=1e-6):
    """Central and both one-sided finite differences of scalar f in p.data[idx]."""
    o = p.data[idx]
    f0 = f()
    p.data[idx] = o + h
    fp = f()
    p.data[idx] = o - h
    fm = f()
    p.data[idx] = o
    return (fp - fm) / (2 * h), (fp - f0) / h, (f0 - fm) / h


def rel_err(a, b, floor=1e-10):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(f, params: dict, grads: dict, rng, per_param=6, h=1e-6, tol=1e-4, allowed=None):
    """Spot-check analytic ``grads`` against central differences of ``f``.

    Coordinates sitting on a kink (one-sided slopes disagree) are skipped;
    returns (worst relative error, coordinates checked, coordinates skipped).
    """
    worst, checked, skipped = 0.0, 0, 0
    for name, p in params.items():
        cand = np.argwhere(allowed[name]) if allowed and name in allowed else None
        for _ in range(per_param):
            if cand is not None:
                idx = tuple(cand[rng.integers(len(cand))])
            else:
                idx = tuple(int(rng.integers(s)) for s in p.shape)
            fd, fwd, bwd = central_diff(f, p, idx, h)
            if rel_err(fwd, bwd, 1e-6) > 1e-3 and abs(fwd - bwd) > 1e-7:
                skipped += 1
                continue
            worst = max(worst, rel_err(fd, grads[name][idx], 1e-8))
            checked += 1
    return worst, checked, skipped
