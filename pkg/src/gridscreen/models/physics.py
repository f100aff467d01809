"""Power-balance residuals and the physics-informed composite loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import ndiff as nd
from ..grid import GridCase, bus_partition


@dataclass(frozen=True)
class LossWeights:
    v: float = 1.0
    delta: float = 1.0
    q: float = 1.0
    eps: float = 0.1
    gamma: float = 1e-3

    def __post_init__(self):
        for k, val in asdict(self).items():
            if not val >= 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {val}")

    def to_dict(self):
        return asdict(self)


class BusMasks:
    """Per-bus 0/1 vectors describing which quantities are known, predicted or enforced."""

    def __init__(self, case: GridCase):
        slack, pv, pq = bus_partition(case)
        V = case.n_bus
        self.n_bus = V
        self.slack, self.pv, self.pq = slack, pv, pq
        self.pq_mask = np.zeros(V)
        self.pq_mask[pq] = 1.0
        self.nonslack = np.ones(V)
        self.nonslack[slack] = 0.0
        self.gen = np.zeros(V)
        self.gen[case.gen_bus] = 1.0
        self.Vset = case.Vm_set
        cg = case.gen_incidence()
        self.Qmax = cg @ case.Qmax
        self.Qmin = cg @ case.Qmin
        # supervised channels: Vm at PQ, Va at non-slack, Q_g at generator buses
        self.target = np.stack([self.pq_mask, self.nonslack, self.gen], axis=1)

    def output_index(self):
        """Flat (bus, channel) indices of the supervised outputs, channel-major."""
        return [np.flatnonzero(self.target[:, c]) for c in range(3)]


def _bus_product(M, v):
    """``M @ v`` for a batch of bus vectors ``v`` (B, V); ``M`` is (V, V) or (B, V, V)."""
    if M.ndim == 2:
        return nd.matmul(v, M.T)
    B, V = v.shape
    return nd.reshape(nd.matmul(M, nd.reshape(v, (B, V, 1))), (B, V))


def power_balance(yhat, x, masks: BusMasks, G, B):
    """Balance residuals ``f_P, f_Q`` (B, V) of the predicted state.

    Slack angle is pinned to 0 and magnitudes at PV/slack buses to their
    setpoints before evaluating S = V conj(Y V) in rectangular form.
    """
    yhat, x = nd.as_tensor(yhat), nd.as_tensor(x)
    Vm = yhat[:, :, 0] * masks.pq_mask + (1.0 - masks.pq_mask) * masks.Vset
    Va = yhat[:, :, 1] * masks.nonslack
    Qg = yhat[:, :, 2] * masks.gen
    vre = Vm * nd.cos(Va)
    vim = Vm * nd.sin(Va)
    ire = _bus_product(G, vre) - _bus_product(B, vim)
    iim = _bus_product(B, vre) + _bus_product(G, vim)
    p_calc = vre * ire + vim * iim
    q_calc = vim * ire - vre * iim
    f_p = p_calc - (x[:, :, 2] - x[:, :, 0])
    f_q = q_calc - (Qg - x[:, :, 1])
    return f_p, f_q


def physics_residuals(yhat, x, masks: BusMasks, G, B, gamma: float):
    """Hinge residuals ``(eps_P, eps_Q, eps_Qlim)``, each (B, V).

    Balance hinges are zero inside the tolerance ``gamma`` and at the slack
    bus; the reactive-limit hinge measures how far Q_g lies outside
    ``[Qmin, Qmax]`` at generator buses.
    """
    f_p, f_q = power_balance(yhat, x, masks, G, B)
    eps_p = nd.maximum(nd.tabs(f_p) - gamma, 0.0) * masks.nonslack
    eps_q = nd.maximum(nd.tabs(f_q) - gamma, 0.0) * masks.nonslack
    qg = nd.as_tensor(yhat)[:, :, 2]
    over = nd.maximum(qg - masks.Qmax, masks.Qmin - qg)
    eps_lim = nd.maximum(over, 0.0) * masks.gen
    return eps_p, eps_q, eps_lim


def _masked_mean_sq(t, mask):
    """Per-sample mean of t**2 over buses where mask is 1, shape (B,)."""
    n = max(float(mask.sum()), 1.0)
    return nd.tsum(nd.square(t) * mask, axis=1) * (1.0 / n)


def residual_energy(residuals, masks: BusMasks):
    eps_p, eps_q, eps_lim = residuals
    return (_masked_mean_sq(eps_p, masks.nonslack) + _masked_mean_sq(eps_q, masks.nonslack)
            + _masked_mean_sq(eps_lim, masks.gen))


def composite_loss(yhat, y, residuals, weights: LossWeights, masks: BusMasks,
                   colloc_residuals=None):
    """Supervised weighted MSE plus the weighted physics penalty.

    ``yhat``/``y`` cover the labelled samples; ``colloc_residuals`` (optional)
    are hinge residuals of unlabelled collocation inputs and only enter the
    physics term, which is averaged over labelled plus collocation samples.
    """
    yhat, y = nd.as_tensor(yhat), nd.as_tensor(y)
    err = yhat - y
    per_sample = (
        _masked_mean_sq(err[:, :, 0], masks.target[:, 0]) * weights.v
        + _masked_mean_sq(err[:, :, 1], masks.target[:, 1]) * weights.delta
        + _masked_mean_sq(err[:, :, 2], masks.target[:, 2]) * weights.q
    )
    n_t = y.shape[0]
    loss = nd.mean(per_sample)
    if weights.eps == 0:
        return loss
    phys = nd.tsum(residual_energy(residuals, masks))
    n_c = 0
    if colloc_residuals is not None:
        n_c = colloc_residuals[0].shape[0]
        phys = phys + nd.tsum(residual_energy(colloc_residuals, masks))
    return loss + phys * (weights.eps / (n_t + n_c))
