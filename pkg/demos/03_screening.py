"""Screen every 14-bus double outage for voltage problems and compare with NR.

A surrogate is trained briefly, then asked which N-2 scenarios push any PQ
bus below a voltage floor. The same question is answered from the
Newton-Raphson labels; the confusion matrix shows what the fast screen
misses, and the timing shows what it saves.

    python3 demos/03_screening.py [epochs]
"""
import sys

import numpy as np

from gridscreen import load_case
from gridscreen.dataset import generate_dataset
from gridscreen.evaluate import Thresholds, benchmark, confusion, oracle_screen, screen
from gridscreen.models import build_model, train
from gridscreen.topology import REFERENCE, enumerate_contingencies

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
case = load_case("case14")
train_ds, _ = generate_dataset(case, [REFERENCE] + enumerate_contingencies(case, 1), 400, seed=0)
model = build_model("gdnn", case, seed=0)
train(model, train_ds, case, epochs=epochs, standardize=True)

n2 = enumerate_contingencies(case, 2)
scen, _ = generate_dataset(case, n2, 10, seed=3)
topos = scen.sample_topologies()

# pick a floor that roughly 10 % of NR scenarios violate
floor = float(np.quantile(scen.y[:, :, 0].min(axis=1), 0.1))
th = Thresholds(vmin=floor, vmax=2.0, rate_scale=1e9)
nn, ranked = screen(model, case, scen.x, topos, th)
nr, _ = oracle_screen(case, scen.y, topos, th)
c = confusion(nn, nr)
print(f"{len(scen)} N-2 scenarios, voltage floor {floor:.4f} p.u.")
print(f"NR flags {c['tp'] + c['fn']}, surrogate flags {c['tp'] + c['fp']}; "
      f"recall {c['recall']:.2f}, precision {c['precision']:.2f}")
print("most severe (surrogate):")
for v in ranked[:5]:
    buses = [int(case.bus_ids[b]) for b in v.undervoltage]
    print(f"  scenario {v.scenario:4d}  outage {v.topology:10s}  buses {buses}  severity {v.severity:.4f}")

rep = benchmark(case, scen.x, topos, model, workers=1)
print(f"\nNR {rep['nr_serial_s']:.2f} s vs batched surrogate {rep['nn_batched_s'] * 1e3:.1f} ms "
      f"-> {rep['speedup']:.0f}x on {rep['hardware']['machine']}")
