"""Per-agent control law: virtual springs + joint damping + disturbance compensation.

    u_i = -Kp J_i^T e_hat_i - Kd xi_i + g_i(q_i) + u_d_i

Every input is local to agent i: its own joint state, Jacobian and
compensator output, and ``e_hat_i`` which only involves relative positions
of its graph neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ControllerGains:
    kp: float
    kd: float

    def __post_init__(self):
        if not (math.isfinite(self.kp) and self.kp > 0):
            raise ValueError("invariant violated: kp > 0")
        if not (math.isfinite(self.kd) and self.kd > 0):
            raise ValueError("invariant violated: kd > 0")


PAPER_GAINS = ControllerGains(kp=800.0, kd=600.0)


def formation_torque(gains: ControllerGains, J, e_hat_i) -> np.ndarray:
    """Virtual-spring force mapped to the joints: ``-Kp J^T e_hat_i``."""
    return -gains.kp * (np.asarray(J, dtype=float).T @ np.asarray(e_hat_i, dtype=float))


def damping_torque(gains: ControllerGains, g_q, xi) -> np.ndarray:
    """Joint damping plus gravity compensation: ``-Kd xi + g(q)``."""
    return -gains.kd * np.asarray(xi, dtype=float) + np.asarray(g_q, dtype=float)


def total_control(gains: ControllerGains, J, e_hat_i, g_q, xi, u_d) -> np.ndarray:
    return (formation_torque(gains, J, e_hat_i) + damping_torque(gains, g_q, xi)
            + np.asarray(u_d, dtype=float))
