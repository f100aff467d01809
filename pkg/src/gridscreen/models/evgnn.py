"""Edge-varying graph neural network surrogate."""
from __future__ import annotations

import numpy as np

from .. import ndiff as nd
from ..topology import REFERENCE, gso_support
from .base import SurrogateModel, he_init


class EVGNN(SurrogateModel):
    """Per-node encoder, edge-varying graph filter layers, dense readout.

    Layer ``l`` computes ``relu(sum_k Phi(k)...Phi(0) Z W_lk + b_l)`` where
    every ``Phi(k)`` is a trainable V x V matrix restricted to the support
    ``A + I`` of the current topology. Filter entries outside the reference
    support are kept at exactly zero.
    """

    kind = "evgnn"

    def __init__(self, case, *, K=2, n_layers=2, features=32, encoder=None, seed=0):
        encoder = [features] if encoder is None else list(encoder)
        hyper = dict(K=int(K), n_layers=int(n_layers), features=int(features), encoder=encoder)
        super().__init__(case, hyper, seed)
        rng = np.random.default_rng(seed)
        V = case.n_bus
        self.support = gso_support(case, REFERENCE).astype(float)
        sizes = [3, *encoder]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._dense(f"enc{i}", rng, a, b)
        deg_max = self.support.sum(axis=1).max()
        bound = 1.0 / np.sqrt(deg_max)
        f_in = sizes[-1]
        for l in range(n_layers):
            phi = rng.uniform(-bound, bound, (K + 1, V, V)) * self.support
            self.params[f"ev{l}.phi"] = nd.Tensor(phi, requires_grad=True)
            W = np.stack([he_init(rng, f_in, features) for _ in range(K + 1)])
            self.params[f"ev{l}.W"] = nd.Tensor(W, requires_grad=True)
            self.params[f"ev{l}.b"] = nd.Tensor(np.zeros(features), requires_grad=True)
            f_in = features
        self._dense("out", rng, V * f_in, 3 * V)

    def _dense(self, name, rng, fan_in, fan_out):
        self.params[f"{name}.W"] = nd.Tensor(he_init(rng, fan_in, fan_out), requires_grad=True)
        self.params[f"{name}.b"] = nd.Tensor(np.zeros(fan_out), requires_grad=True)

    def masks(self):
        K = self.hyper["K"]
        m = np.broadcast_to(self.support, (K + 1, *self.support.shape)).copy()
        return {f"ev{l}.phi": m for l in range(self.hyper["n_layers"])}

    def condition(self, topo):
        return gso_support(self._case, topo).astype(float)

    def node_features(self, x, support):
        """Hidden node features after the graph layers, shape (B, V, F)."""
        support = np.asarray(support, dtype=float)
        V = self.n_bus
        if support.shape[-2:] != (V, V):
            raise ValueError(f"support shape {support.shape} does not match {V} buses")
        z = self.normalize(x)
        i = 0
        while f"enc{i}.W" in self.params:
            z = nd.relu(z @ self.params[f"enc{i}.W"] + self.params[f"enc{i}.b"])
            i += 1
        if support.ndim == 3:
            support = support[:, None]
        for l in range(self.hyper["n_layers"]):
            phi, W, b = (self.params[f"ev{l}.{n}"] for n in ("phi", "W", "b"))
            # (B?, K+1, V, V) filters restricted to this topology
            phi_t = phi * support
            h, acc = z, None
            for k in range(self.hyper["K"] + 1):
                pk = phi_t[:, k] if support.ndim == 4 else phi_t[k]
                h = pk @ h
                term = h @ W[k]
                acc = term if acc is None else acc + term
            z = nd.relu(acc + b)
        return z

    def forward(self, x, support):
        """``x``: (B, V, 3); ``support``: (V, V) or (B, V, V). Returns (B, V, 3)."""
        B = x.shape[0]
        z = self.node_features(x, support)
        flat = nd.reshape(z, (B, -1))
        out = flat @ self.params["out.W"] + self.params["out.b"]
        return nd.reshape(out, (B, self.n_bus, 3))

    def _prepare(self, topologies):
        """Filter entries each topology removes from the reference support.

        Returns padded (U, m) arrays of rows, columns and a scatter round per
        entry (-1 marks padding); entries sharing a row get distinct rounds.
        """
        f, t_ = self._case.f, self._case.t
        V = self.n_bus
        key = np.minimum(f, t_) * V + np.maximum(f, t_)
        mult = np.bincount(key, minlength=V * V)
        pairs = []
        for topo in topologies:
            out = np.asarray(topo.out_branches, dtype=int)
            k, cnt = np.unique(key[out], return_counts=True)
            k = k[cnt == mult[k]]  # parallel circuits keep the edge alive
            a, b = k // V, k % V
            pairs.append((np.r_[a, b], np.r_[b, a]))
        m = max((len(r) for r, _ in pairs), default=0)
        R, C, Q = (np.full((len(pairs), m), -1) for _ in range(3))
        for u, (r, c) in enumerate(pairs):
            R[u, :len(r)] = r
            C[u, :len(c)] = c
            seen: dict = {}
            for i, row in enumerate(r):
                Q[u, i] = seen[row] = seen.get(row, -1) + 1
        return R, C, Q

    def _infer(self, x, removed, inv):
        """Batched inference without the autodiff graph.

        Node features are laid out (V, B, F) so every filter tap is one
        product with the reference filter for the whole batch; the entries a
        sample's topology removes are then subtracted by gather/scatter.
        """
        P = {k: p.data for k, p in self.params.items()}
        B, V, K = x.shape[0], self.n_bus, self.hyper["K"]
        # node-major input; normalisation folded into the first encoder layer
        z = np.ascontiguousarray(x.transpose(1, 0, 2))
        W0, b0 = P["enc0.W"], P["enc0.b"]
        z = np.maximum(z @ (W0 / self.x_std[:, None]) + (b0 - (self.x_mean / self.x_std) @ W0), 0.0)
        i = 1
        while f"enc{i}.W" in P:
            z = np.maximum(z @ P[f"enc{i}.W"] + P[f"enc{i}.b"], 0.0)
            i += 1

        R, C, Q = (a[inv] for a in removed)
        ok = R >= 0
        smp = np.broadcast_to(np.arange(B)[:, None], R.shape)[ok]
        rows, cols, rnd = R[ok], C[ok], Q[ok]
        dst, src = rows * B + smp, cols * B + smp
        rounds = [np.flatnonzero(rnd == j) for j in range(rnd.max() + 1 if rnd.size else 0)]

        for l in range(self.hyper["n_layers"]):
            phi, W, bias = P[f"ev{l}.phi"], P[f"ev{l}.W"], P[f"ev{l}.b"]
            F = z.shape[2]
            taps = np.empty((K + 1, V, B * F))
            h = z.reshape(V, B * F)
            for k in range(K + 1):
                np.matmul(phi[k], h, out=taps[k])
                if dst.size:
                    hv, ov = h.reshape(V * B, F), taps[k].reshape(V * B, F)
                    vals = phi[k][rows, cols][:, None] * hv[src]
                    for sel in rounds:
                        ov[dst[sel]] -= vals[sel]
                h = taps[k]
            acc = taps[0].reshape(V * B, F) @ W[0]
            for k in range(1, K + 1):
                acc += taps[k].reshape(V * B, F) @ W[k]
            acc += bias
            z = np.maximum(acc, 0.0, out=acc).reshape(V, B, -1)
        flat = z.transpose(1, 0, 2).reshape(B, -1)
        return (flat @ P["out.W"] + P["out.b"]).reshape(B, V, 3)

    def output_bias(self):
        return self.params["out.b"]
