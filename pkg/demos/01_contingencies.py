"""Walk through the outage sets a screening study has to cover.

For every bundled case we count the N-1 and N-2 outage sets that keep the
grid in one piece, then look at how a single outage shows up in the two
topology encodings the surrogates consume.

    python3 demos/01_contingencies.py
"""
import numpy as np

from gridscreen import load_case
from gridscreen.grid import build_ybus
from gridscreen.topology import (REFERENCE, Topology, enumerate_contingencies, gso_support,
                                 is_connected, structural_vector)

print(f"{'case':8s} {'buses':>5s} {'branches':>8s} {'N-1':>6s} {'N-2':>7s}")
for name in ("case14", "case30", "case57", "case118"):
    case = load_case(name)
    n1 = len(enumerate_contingencies(case, 1))
    n2 = len(enumerate_contingencies(case, 2))
    print(f"{name:8s} {case.n_bus:5d} {case.n_branch:8d} {n1:6d} {n2:7d}")

case = load_case("case14")
leaf = [e for e in range(case.n_branch) if not is_connected(case, [e])]
b = leaf[0]
print(f"\n14-bus: only branch {b} ({case.bus_ids[case.f[b]]}-{case.bus_ids[case.t[b]]}) "
      "islands a bus when tripped, so it never appears in an outage set.")

topo = Topology((3, 17))
tau = structural_vector(topo, 56, 2, case.n_branch)
print(f"\nGuided-dropout mask for {topo.id}: {int(tau.sum())} of {tau.size} neurons active "
      f"(56 always-on plus 2 per tripped branch)")
print("conditional part:", tau[56:].astype(int))

S0, S = gso_support(case, REFERENCE), gso_support(case, topo)
print(f"\nGraph-filter support shrinks from {S0.sum()} to {S.sum()} entries; removed pairs:")
for i, j in zip(*np.nonzero(S0 & ~S)):
    if i < j:
        print(f"  bus {case.bus_ids[i]} - bus {case.bus_ids[j]}")

Y0, Y = build_ybus(case).dense(), build_ybus(case, topo).dense()
print(f"Ybus non-zeros: {np.count_nonzero(Y0)} -> {np.count_nonzero(Y)}")
