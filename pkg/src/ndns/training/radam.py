"""Rectified Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch

log = logging.getLogger(__name__)

# the variance rectification only switches on once the SMA length exceeds this
RHO_THRESHOLD = 5.0


@dataclass
class RAdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)
    skipped: int = 0


def _rho(step: int, beta2: float) -> tuple[float, float]:
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**step
    return rho_inf, rho_inf - 2.0 * step * b2t / (1.0 - b2t)


def radam_step(params, grads, state: RAdamState, lr: float = 1e-3, betas=(0.9, 0.999),
               eps: float = 1e-8) -> bool:
    """Update ``params`` in place. Returns False (and skips) on a non-finite gradient.

    While the rectification term is undefined (early steps) the update is
    the bias-corrected first moment times ``lr``, with no second-moment
    scaling.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g is not None and g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
    if any(g is not None and not bool(torch.isfinite(g).all()) for g in grads):
        state.skipped += 1
        log.warning("non-finite gradient at step %d; update skipped", state.step + 1)
        return False

    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    beta1, beta2 = betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    rho_inf, rho_t = _rho(t, beta2)
    rect = None
    if rho_t > RHO_THRESHOLD:
        rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))

    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
            if g is None:
                g = torch.zeros_like(p)
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / bc1
            if rect is None:
                p.sub_(lr * m_hat)
            else:
                adaptive = math.sqrt(bc2) / (v.sqrt() + eps)
                p.sub_(lr * rect * m_hat * adaptive)
    return True
