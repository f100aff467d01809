"""Guided-dropout network: dense encoder, masked hidden layers, affine decoder."""
from __future__ import annotations

import numpy as np

from .. import ndiff as nd
from ..topology import structural_vector
from .base import SurrogateModel, he_init


def default_static_width(n_bus: int) -> int:
    """4 neurons per bus, rounded up to a multiple of 8."""
    return int(-(-4 * n_bus // 8) * 8)


class GDNN(SurrogateModel):
    """Guided-dropout surrogate.

    Each guided layer computes ``relu((z @ W) * tau + b)``: the structural
    vector ``tau`` masks the pre-activation, so a dropped neuron emits only
    ``relu(b)``. With ``mask_input=True`` the mask is applied to the layer's
    input instead (``relu((z * tau) @ W + b)``).
    """

    kind = "gdnn"

    def __init__(self, case, *, n_static=None, alpha=2, n_guided=3, encoder=None,
                 decoder=(), mask_input=False, seed=0):
        n_static = default_static_width(case.n_bus) if n_static is None else int(n_static)
        width = n_static + alpha * case.n_branch
        encoder = [width] if encoder is None else list(encoder)
        hyper = dict(n_static=n_static, alpha=int(alpha), n_guided=int(n_guided), width=width,
                     encoder=encoder, decoder=list(decoder), mask_input=bool(mask_input))
        super().__init__(case, hyper, seed)
        rng = np.random.default_rng(seed)
        n_in = n_out = 3 * case.n_bus
        sizes = [n_in, *encoder]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._dense(f"enc{i}", rng, a, b)
        prev = sizes[-1]
        for i in range(n_guided):
            self._dense(f"gd{i}", rng, prev, width)
            prev = width
        sizes = [prev, *decoder, n_out]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._dense(f"dec{i}", rng, a, b)

    def _dense(self, name, rng, fan_in, fan_out):
        self.params[f"{name}.W"] = nd.Tensor(he_init(rng, fan_in, fan_out), requires_grad=True)
        self.params[f"{name}.b"] = nd.Tensor(np.zeros(fan_out), requires_grad=True)

    def condition(self, topo):
        h = self.hyper
        return structural_vector(topo, h["n_static"], h["alpha"], self.n_branch)

    def _names(self, prefix):
        n = sum(1 for k in self.params if k.startswith(prefix) and k.endswith(".W"))
        return [(f"{prefix}{i}.W", f"{prefix}{i}.b") for i in range(n)]

    def _layers(self, prefix):
        return [(self.params[w], self.params[b]) for w, b in self._names(prefix)]

    def forward(self, x, tau):
        """``x``: (B, V, 3) raw features; ``tau``: (N_l,) or (B, N_l). Returns (B, V, 3)."""
        B = x.shape[0]
        z = nd.reshape(self.normalize(x), (B, 3 * self.n_bus))
        for W, b in self._layers("enc"):
            z = nd.relu(z @ W + b)
        if np.shape(tau)[-1] != self.hyper["width"]:
            raise ValueError(f"structural vector length {np.shape(tau)[-1]} != {self.hyper['width']}")
        for W, b in self._layers("gd"):
            if self.hyper["mask_input"] and W.shape[0] == self.hyper["width"]:
                z = nd.relu((z * tau) @ W + b)
            else:
                z = nd.relu((z @ W) * tau + b)
        dec = self._layers("dec")
        for W, b in dec[:-1]:
            z = nd.relu(z @ W + b)
        W, b = dec[-1]
        return nd.reshape(z @ W + b, (B, self.n_bus, 3))

    def _infer(self, x, taus, inv):
        P = {k: p.data for k, p in self.params.items()}
        B = x.shape[0]
        z = ((x - self.x_mean) / self.x_std).reshape(B, -1)
        tau = taus[inv]
        for w, b in self._names("enc"):
            z = np.maximum(z @ P[w] + P[b], 0.0)
        for w, b in self._names("gd"):
            if self.hyper["mask_input"] and P[w].shape[0] == self.hyper["width"]:
                z = np.maximum((z * tau) @ P[w] + P[b], 0.0)
            else:
                z = np.maximum((z @ P[w]) * tau + P[b], 0.0)
        dec = self._names("dec")
        for w, b in dec[:-1]:
            z = np.maximum(z @ P[w] + P[b], 0.0)
        w, b = dec[-1]
        return (z @ P[w] + P[b]).reshape(B, self.n_bus, 3)

    def output_bias(self):
        return self.params[f"dec{len(self._layers('dec')) - 1}.b"]

    def conditional_rows(self, layer: int, branch: int):
        """Columns of guided layer ``layer``'s weight feeding ``branch``'s conditional neurons."""
        h = self.hyper
        start = h["n_static"] + h["alpha"] * branch
        return slice(start, start + h["alpha"])
