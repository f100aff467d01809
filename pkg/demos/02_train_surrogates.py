"""Train both surrogates on the 14-bus N-0/N-1 family and test on unseen N-2 grids.

A short run (default 40 epochs, 300 samples per topology) is enough to see
the behaviour: small error on the outages seen in training, larger error on
double outages the models never saw. Pass larger numbers to approach the
acceptance-level accuracy (1000 samples, 250 epochs).

    python3 demos/02_train_surrogates.py [samples] [epochs]
"""
import sys
import time

from gridscreen import load_case
from gridscreen.dataset import generate_dataset
from gridscreen.evaluate import compute_metrics
from gridscreen.models import build_model, train
from gridscreen.topology import REFERENCE, enumerate_contingencies, sample_topologies

samples = int(sys.argv[1]) if len(sys.argv) > 1 else 300
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 40

case = load_case("case14")
t0 = time.perf_counter()
train_ds, skipped = generate_dataset(case, [REFERENCE] + enumerate_contingencies(case, 1), samples, seed=0)
n2 = sample_topologies(enumerate_contingencies(case, 2), 30, seed=1)
n2_ds, _ = generate_dataset(case, n2, max(samples // 2, 1), seed=1)
print(f"labelled {len(train_ds) + len(n2_ds)} operating points with Newton-Raphson "
      f"in {time.perf_counter() - t0:.1f} s ({skipped} draws skipped)")

test = train_ds.test_split()
for kind in ("gdnn", "evgnn"):
    model = build_model(kind, case, seed=0)
    t0 = time.perf_counter()

    def progress(ep, m, hist):
        if ep % 10 == 0 or ep == epochs:
            print(f"  [{kind}] epoch {ep:3d}  train {hist.train_loss[-1]:.2e}  val {hist.val_loss[-1]:.2e}")

    train(model, train_ds, case, epochs=epochs, batch=64, standardize=True, callback=progress)
    print(f"{kind}: {model.num_parameters()} parameters, trained in {time.perf_counter() - t0:.0f} s")
    for label, ds in (("seen N-0/N-1", test), ("unseen N-2", n2_ds)):
        topos = ds.sample_topologies()
        rep = compute_metrics(model.predict(ds.x, topos), ds.y, case, topos)
        print(f"  {label:13s} MSE {rep.mse:.2e}  MAE_V {rep.mae_v:.2e} p.u.  MAE_S {rep.mae_s:.2e} p.u.")
