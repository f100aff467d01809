"""Mini-batch Adam training of the surrogates on the composite loss."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import ndiff as nd
from ..grid import GridCase, build_ybus
from .evgnn import EVGNN
from .gdnn import GDNN
from .physics import BusMasks, LossWeights, composite_loss, physics_residuals

log = logging.getLogger(__name__)

MODEL_KINDS = {"gdnn": GDNN, "evgnn": EVGNN}


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``model`` holds the last finite parameters."""

    def __init__(self, msg, model=None, history=None):
        super().__init__(msg)
        self.model = model
        self.history = history


def build_model(kind: str, case: GridCase, seed: int = 0, **hyper):
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(case, seed=seed, **hyper)


@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, epoch, train, val, sec):
        self.epoch.append(epoch)
        self.train_loss.append(train)
        self.val_loss.append(val)
        self.seconds.append(sec)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss,seconds"]
        rows += [f"{e},{t!r},{v!r},{s:.3f}" for e, t, v, s in
                 zip(self.epoch, self.train_loss, self.val_loss, self.seconds)]
        return "\n".join(rows) + "\n"


class _TopologyContext:
    """Per-topology constants: model conditioning and dense G, B for the physics term."""

    def __init__(self, model, case, topologies):
        self.cond, self.G, self.B = [], [], []
        for t in topologies:
            self.cond.append(model.condition(t))
            Y = build_ybus(case, t)
            self.G.append(Y.G.toarray())
            self.B.append(Y.B.toarray())


def batch_loss(model, x, y, ctx, ti, masks, weights):
    yhat = model.forward(x, ctx.cond[ti])
    res = None
    if weights.eps > 0:
        res = physics_residuals(yhat, x, masks, ctx.G[ti], ctx.B[ti], weights.gamma)
    return composite_loss(yhat, y, res, weights, masks)


def _batches(ds, idx, batch, rng):
    """Shuffled mini-batches, each drawn from a single topology."""
    out = []
    ti_all = ds.topo_index[idx]
    for ti in np.unique(ti_all):
        rows = idx[ti_all == ti]
        rows = rows[rng.permutation(len(rows))]
        out += [(int(ti), rows[s:s + batch]) for s in range(0, len(rows), batch)]
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def evaluate_loss(model, ds, case, weights: LossWeights, idx=None, ctx=None, masks=None, chunk=2048):
    """Composite loss averaged over samples ``idx`` (default: all)."""
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    if len(idx) == 0:
        return float("nan")
    ctx = ctx or _TopologyContext(model, case, ds.topologies)
    masks = masks or BusMasks(case)
    total = 0.0
    with nd.no_grad():
        for ti in np.unique(ds.topo_index[idx]):
            rows = idx[ds.topo_index[idx] == ti]
            for s in range(0, len(rows), chunk):
                r = rows[s:s + chunk]
                total += batch_loss(model, ds.x[r], ds.y[r], ctx, int(ti), masks, weights).item() * len(r)
    return total / len(idx)


def train(model, dataset, case: GridCase, *, epochs=100, batch=64, lr=1e-3,
          weights: LossWeights | None = None, seed=0, standardize=False,
          init_output_bias=True, callback=None):
    """Fit ``model`` on the training split of ``dataset``.

    Mini-batches never mix topologies. Validation loss is measured on the
    test split after every epoch. With ``epochs=0`` the model is returned
    untouched. A non-finite loss restores the last finite parameters and
    raises :class:`TrainingDiverged`.

    Returns ``(model, history)``.
    """
    weights = weights or LossWeights()
    if dataset.n_bus != case.n_bus or model.n_bus != case.n_bus:
        raise ValueError("dataset, model and case disagree on the number of buses")
    history = History()
    if epochs <= 0:
        return model, history
    rng = np.random.default_rng(seed)
    masks = BusMasks(case)
    tr = np.flatnonzero(dataset.train)
    te = np.flatnonzero(~dataset.train)
    if len(tr) == 0:
        raise ValueError("dataset has no training samples")

    last_good = model.state()
    if standardize:
        xt = dataset.x[tr].reshape(-1, 3)
        model.set_normalization(xt.mean(axis=0), xt.std(axis=0))
    if init_output_bias:
        # start the decoder at the mean label
        model.output_bias().data = dataset.y[tr].mean(axis=0).reshape(-1).copy()

    ctx = _TopologyContext(model, case, dataset.topologies)
    opt = nd.Adam(model.params, lr=lr, masks=model.masks())
    for ep in range(1, epochs + 1):
        t0 = time.perf_counter()
        running, seen = 0.0, 0
        for ti, rows in _batches(dataset, tr, batch, rng):
            opt.zero_grad()
            loss = batch_loss(model, dataset.x[rows], dataset.y[rows], ctx, ti, masks, weights)
            val = loss.item()
            if not math.isfinite(val):
                model.load_state(last_good)
                raise TrainingDiverged(f"non-finite loss at epoch {ep}", model, history)
            loss.backward()
            opt.step()
            running += val * len(rows)
            seen += len(rows)
        last_good = model.state()
        v = evaluate_loss(model, dataset, case, weights, te, ctx, masks) if len(te) else float("nan")
        history.append(ep, running / seen, v, time.perf_counter() - t0)
        log.info("epoch %d train %.3e val %.3e", ep, running / seen, v)
        if callback is not None:
            callback(ep, model, history)
    return model, history
