"""Hard-concrete gates: a stretched, clamped sigmoid relaxation of Bernoulli masks.

All functions broadcast over numpy arrays.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class GateParams:
    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma < 0 and self.zeta > 1):
            raise ValueError(f"need beta > 0, gamma < 0 < 1 < zeta; got {self}")


DEFAULT_GATES = GateParams()


def _check_u(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    return u


def _stretched(logit, u, gp):
    s = expit((np.log(u) - np.log1p(-u) + logit) / gp.beta)
    return s, s * (gp.zeta - gp.gamma) + gp.gamma


def sample_gate(logit, u, gp=DEFAULT_GATES):
    u = _check_u(u)
    _, s_bar = _stretched(np.asarray(logit, dtype=np.float64), u, gp)
    return np.clip(s_bar, 0.0, 1.0)


def prob_nonzero(logit, gp=DEFAULT_GATES):
    """P(gate != 0) in closed form."""
    return expit(np.asarray(logit, dtype=np.float64) - gp.beta * np.log(-gp.gamma / gp.zeta))


def prob_nonzero_grad(logit, gp=DEFAULT_GATES):
    p = prob_nonzero(logit, gp)
    return p * (1.0 - p)


def gate_grad_logit(logit, u, gp=DEFAULT_GATES):
    """Derivative of :func:`sample_gate` w.r.t. the logit; zero where the clamp is active."""
    u = _check_u(u)
    s, s_bar = _stretched(np.asarray(logit, dtype=np.float64), u, gp)
    inside = (s_bar > 0.0) & (s_bar < 1.0)
    return np.where(inside, (gp.zeta - gp.gamma) / gp.beta * s * (1.0 - s), 0.0)


def sample_and_grad(logit, u, gp=DEFAULT_GATES):
    """Gate values and their logit derivatives in one pass."""
    s, s_bar = _stretched(logit, u, gp)
    inside = (s_bar > 0.0) & (s_bar < 1.0)
    return np.clip(s_bar, 0.0, 1.0), np.where(inside, (gp.zeta - gp.gamma) / gp.beta * s * (1.0 - s), 0.0)
