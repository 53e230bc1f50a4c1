"""Closed-form dynamics and kinematics of a planar two-link arm.

The model is the usual rigid two-link arm

    H(q) qdd + C(q, qd) qd + g(q) = u + d

parameterised through the three inertia constants a1, a2, a3 (see
:meth:`ManipulatorParams.coefficients`).  All functions are pure and return
fresh numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Determinant threshold for the direct 2x2 solve.
DET_EPS = 1e-12


class SingularInertiaError(ArithmeticError):
    """Raised when the inertia matrix is not numerically positive definite."""


@dataclass(frozen=True)
class ManipulatorParams:
    """Physical constants of one arm.

    ``gravity`` is the gravitational acceleration acting along -y of the arm
    plane; it is zero for arms moving in a horizontal plane.
    """

    m1: float
    m2: float
    Ic1: float
    Ic2: float
    l1: float
    l2: float
    lc1: float
    lc2: float
    base: tuple[float, float] = (0.0, 0.0)
    gravity: float = 0.0

    def __post_init__(self):
        for name in ("m1", "m2", "Ic1", "Ic2", "l1", "l2", "lc1", "lc2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"invariant violated: {name} > 0")
        if self.lc1 > self.l1:
            raise ValueError("invariant violated: lc1 <= l1")
        if self.lc2 > self.l2:
            raise ValueError("invariant violated: lc2 <= l2")
        if len(self.base) != 2 or not all(math.isfinite(b) for b in self.base):
            raise ValueError("invariant violated: base is a finite 2-vector")
        if not math.isfinite(self.gravity):
            raise ValueError("invariant violated: gravity is finite")
        object.__setattr__(self, "base", (float(self.base[0]), float(self.base[1])))

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """Return ``(a1, a2, a3)`` of the inertia matrix."""
        a1 = (self.Ic1 + self.Ic2 + self.m1 * self.lc1**2
              + self.m2 * (self.l1**2 + self.lc2**2))
        a2 = self.Ic2 + self.m2 * self.lc2**2
        a3 = self.m2 * self.l1 * self.lc2
        return a1, a2, a3

    def with_base(self, base) -> "ManipulatorParams":
        return ManipulatorParams(self.m1, self.m2, self.Ic1, self.Ic2, self.l1,
                                 self.l2, self.lc1, self.lc2, tuple(base), self.gravity)


# Link values used in the four-arm square experiment.
TABLE_I = ManipulatorParams(m1=1.2, m2=1.0, Ic1=0.2250, Ic2=0.1875,
                            l1=1.5, l2=1.5, lc1=0.75, lc2=0.75)


@dataclass
class JointState:
    """Joint angles ``q`` and joint velocities ``qdot`` of one arm."""

    q: np.ndarray
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(2)
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(2)
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("invariant violated: joint state is finite")


def inertia_matrix(p: ManipulatorParams, q) -> np.ndarray:
    a1, a2, a3 = p.coefficients
    c2 = math.cos(q[1])
    h12 = a2 + a3 * c2
    return np.array([[a1 + 2.0 * a3 * c2, h12], [h12, a2]])


def coriolis_matrix(p: ManipulatorParams, q, qdot) -> np.ndarray:
    """Coriolis/centrifugal matrix chosen so that ``dH/dt = C + C^T``."""
    h = p.coefficients[2] * math.sin(q[1])
    return np.array([[-h * qdot[1], -h * (qdot[0] + qdot[1])],
                     [h * qdot[0], 0.0]])


def gravity_vector(p: ManipulatorParams, q) -> np.ndarray:
    if p.gravity == 0.0:
        return np.zeros(2)
    c1 = math.cos(q[0])
    c12 = math.cos(q[0] + q[1])
    g2 = p.m2 * p.lc2 * p.gravity * c12
    g1 = (p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * c1 + g2
    return np.array([g1, g2])


def forward_kinematics(p: ManipulatorParams, q) -> np.ndarray:
    """End-effector position in the world frame."""
    q12 = q[0] + q[1]
    return np.array([p.l1 * math.cos(q[0]) + p.l2 * math.cos(q12) + p.base[0],
                     p.l1 * math.sin(q[0]) + p.l2 * math.sin(q12) + p.base[1]])


def jacobian(p: ManipulatorParams, q) -> np.ndarray:
    q12 = q[0] + q[1]
    s12 = p.l2 * math.sin(q12)
    c12 = p.l2 * math.cos(q12)
    return np.array([[-p.l1 * math.sin(q[0]) - s12, -s12],
                     [p.l1 * math.cos(q[0]) + c12, c12]])


def singularity_margin(p: ManipulatorParams, q) -> float:
    """``|det J(q)|``; zero at the stretched and folded poses."""
    J = jacobian(p, q)
    return abs(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])


def solve2(M, b) -> np.ndarray:
    """Solve the 2x2 system ``M x = b`` directly (Cramer's rule)."""
    det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    if abs(det) <= DET_EPS:
        raise SingularInertiaError(f"2x2 system is singular (det={det:.3e})")
    return np.array([(M[1][1] * b[0] - M[0][1] * b[1]) / det,
                     (M[0][0] * b[1] - M[1][0] * b[0]) / det])


def joint_acceleration(p: ManipulatorParams, s: JointState, u, d) -> np.ndarray:
    """Solve the arm dynamics for ``qdd`` given control ``u`` and disturbance ``d``."""
    H = inertia_matrix(p, s.q)
    if not (H[0, 0] > 0 and H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0] > DET_EPS):
        raise SingularInertiaError("inertia matrix is not positive definite")
    rhs = (np.asarray(u, dtype=float) + np.asarray(d, dtype=float)
           - coriolis_matrix(p, s.q, s.qdot) @ s.qdot - gravity_vector(p, s.q))
    return solve2(H, rhs)
