from __future__ import annotations

import numpy as np

from .. import ndiff as nd
from ..grid import GridCase
from ..topology import Topology


def he_init(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))


class SurrogateModel:
    """Common plumbing for the topology-aware power-flow surrogates.

    Subclasses define ``kind``, build ``params`` and implement
    ``forward(x, cond)`` where ``cond`` is the per-batch topology encoding
    returned by ``condition``.
    """

    kind = ""

    def __init__(self, case: GridCase, hyper: dict, seed: int = 0):
        self.case_name = case.name
        self.n_bus = case.n_bus
        self.n_branch = case.n_branch
        self.hyper = dict(hyper)
        self.seed = int(seed)
        self.params: dict[str, nd.Tensor] = {}
        self.x_mean = np.zeros(3)
        self.x_std = np.ones(3)
        self._case = case

    # parameter bookkeeping
    def masks(self) -> dict:
        return {}

    def num_parameters(self) -> int:
        masks = self.masks()
        return int(sum(masks[k].sum() if k in masks else p.data.size for k, p in self.params.items()))

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64).reshape(self.params[k].shape)

    def set_normalization(self, mean, std):
        std = np.asarray(std, dtype=float).copy()
        std[std < 1e-12] = 1.0
        self.x_mean, self.x_std = np.asarray(mean, dtype=float), std

    def normalize(self, x):
        return (nd.as_tensor(x) - self.x_mean) * (1.0 / self.x_std)

    # topology conditioning
    def condition(self, topo):
        raise NotImplementedError

    def forward(self, x, cond):
        raise NotImplementedError

    def _prepare(self, topologies):
        return np.stack([self.condition(t) for t in topologies])

    def _infer(self, x, ctx, inv):
        return self.forward(x, ctx[inv]).data

    def predict(self, x, topologies, chunk=256) -> np.ndarray:
        """Inference on raw features ``x`` (N, V, 3) without recording a graph.

        ``topologies`` is one :class:`Topology` for the whole batch or a
        sequence with one entry per sample. Each distinct topology is encoded
        once; samples are then pushed through in stacked chunks regardless of
        how topologies are mixed.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (self.n_bus, 3):
            raise ValueError(f"expected features of shape (N, {self.n_bus}, 3), got {x.shape}")
        if isinstance(topologies, Topology):
            topologies = [topologies] * len(x)
        topologies = list(topologies)
        if len(topologies) != len(x):
            raise ValueError(f"{len(topologies)} topologies for {len(x)} samples")
        uniq: dict = {}
        inv = np.array([uniq.setdefault(t, len(uniq)) for t in topologies], dtype=int)
        out = np.empty_like(x)
        with nd.no_grad():
            ctx = self._prepare(list(uniq))
            for s in range(0, len(x), chunk):
                sl = slice(s, s + chunk)
                out[sl] = self._infer(x[sl], ctx, inv[sl])
        return out
