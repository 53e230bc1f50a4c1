"""Exosystem disturbances and internal-model compensators.

A disturbance channel is a finite sum of terms ``a * sin(w t + phi)`` (and
steps for ``w = 0``), generated by a neutrally stable exosystem
``v' = S v, d = G v``.  Each arm carries two compensators,

    eta'  = A_M eta  - Gamma_M^T xi          (input torques)
    zeta' = A_E zeta - Gamma_E^T J(q) xi     (end-effector forces)

with output ``u_d = Gamma_M eta + J^T Gamma_E zeta``.  ``Gamma`` is stored as
the output map (channels x states).  When the regulator equations

    Sigma S = A Sigma,   Gamma Sigma + G = 0

have a solution, ``u_d`` converges to ``-d`` and the error coordinates
``chi - Sigma v`` form a lossless system from ``xi`` to ``u_d + d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

SKEW_TOL = 1e-12
REGULATOR_TOL = 1e-10


class RegulatorError(ValueError):
    """The internal model cannot reproduce the exosystem signal."""


def _as_matrix(a, name) -> np.ndarray:
    a = np.array(a, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    return a


def is_skew(M, tol: float = SKEW_TOL) -> bool:
    M = np.asarray(M, dtype=float)
    return M.shape[0] == M.shape[1] and bool(np.all(np.abs(M + M.T) <= tol))


def observability_matrix(A, C) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def is_observable(A, C) -> bool:
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return True
    return np.linalg.matrix_rank(observability_matrix(A, C)) == A.shape[0]


def rotation_block(omega: float) -> np.ndarray:
    """Generator of a sinusoid of frequency ``omega``; ``[[0]]`` for a step."""
    if omega == 0.0:
        return np.zeros((1, 1))
    return np.array([[0.0, omega], [-omega, 0.0]])


def _block_diag(blocks) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def _rotation_structure(S):
    """Split S into diagonal 1x1 zero / 2x2 rotation blocks, or return None."""
    n = S.shape[0]
    blocks = []
    i = 0
    while i < n:
        if i + 1 < n and S[i, i + 1] != 0.0:
            w = S[i, i + 1]
            if not (S[i + 1, i] == -w and S[i, i] == 0.0 and S[i + 1, i + 1] == 0.0):
                return None
            blocks.append((i, w))
            i += 2
        elif S[i, i] == 0.0:
            blocks.append((i, 0.0))
            i += 1
        else:
            return None
    mask = np.zeros_like(S, dtype=bool)
    for start, w in blocks:
        k = 2 if w != 0.0 else 1
        mask[start:start + k, start:start + k] = True
    if np.any(S[~mask] != 0.0):
        return None
    return blocks


@dataclass(frozen=True, eq=False)
class DisturbanceTerm:
    """``amplitude * sin(frequency * t + phase)`` on one channel (0-based).

    A zero frequency is a step of height ``amplitude``; the phase is then
    ignored.
    """

    channel: int
    amplitude: float
    frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.channel < 0:
            raise ValueError("invariant violated: channel >= 0")
        for name in ("amplitude", "frequency", "phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"invariant violated: {name} is finite")
        if self.frequency < 0:
            raise ValueError("invariant violated: frequency >= 0")

    def _key(self):
        return (self.channel, self.amplitude, self.frequency, self.phase)

    def __eq__(self, other):
        return isinstance(other, DisturbanceTerm) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def value(self, t: float) -> float:
        if self.frequency == 0.0:
            return self.amplitude
        return self.amplitude * math.sin(self.frequency * t + self.phase)


@dataclass(frozen=True, eq=False)
class Exosystem:
    """Neutrally stable signal generator ``v' = S v, d = G v, v(0) = v0``."""

    S: np.ndarray
    G: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        S = _as_matrix(self.S, "S")
        v0 = np.asarray(self.v0, dtype=float).reshape(-1)
        G = np.array(self.G, dtype=float).reshape(-1, S.shape[0]) if S.size else \
            np.zeros((np.asarray(self.G).shape[0], 0))
        if S.shape[0] != S.shape[1] or v0.shape[0] != S.shape[0]:
            raise ValueError("invariant violated: exosystem dimensions are consistent")
        if not is_skew(S):
            raise ValueError("invariant violated: S + S^T = 0")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "_blocks", _rotation_structure(S))

    def __eq__(self, other):
        return (isinstance(other, Exosystem) and np.array_equal(self.S, other.S)
                and np.array_equal(self.G, other.G) and np.array_equal(self.v0, other.v0))

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.S.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.G.shape[0]

    def state(self, t: float) -> np.ndarray:
        """Exact ``exp(S t) v0``; rotation blocks are evaluated in closed form."""
        if self._blocks is None:
            return expm(self.S * t) @ self.v0
        v = self.v0.copy()
        for i, w in self._blocks:
            if w != 0.0:
                c, s = math.cos(w * t), math.sin(w * t)
                a, b = self.v0[i], self.v0[i + 1]
                v[i] = c * a + s * b
                v[i + 1] = -s * a + c * b
        return v

    def output(self, t: float) -> np.ndarray:
        return self.G @ self.state(t)


def exosystem_from_terms(terms, n_channels: int = 2) -> Exosystem:
    """Minimal realisation of a list of :class:`DisturbanceTerm` (one block per term)."""
    blocks, g_cols, v0 = [], [], []
    for term in terms:
        if term.channel >= n_channels:
            raise ValueError(f"invariant violated: channel {term.channel + 1} <= {n_channels}")
        blocks.append(rotation_block(term.frequency))
        col = np.zeros(n_channels)
        col[term.channel] = 1.0
        g_cols.append(col)
        if term.frequency == 0.0:
            v0.append(term.amplitude)
        else:
            g_cols.append(np.zeros(n_channels))
            v0.extend([term.amplitude * math.sin(term.phase),
                       term.amplitude * math.cos(term.phase)])
    S = _block_diag(blocks)
    G = np.array(g_cols).T if g_cols else np.zeros((n_channels, 0))
    return Exosystem(S, G, np.array(v0))


@dataclass(frozen=True, eq=False)
class InternalModelSpec:
    """Compensator generator ``A`` and output map ``Gamma`` (channels x states).

    Construction only checks shapes; skew symmetry and observability are
    reported by :func:`check_internal_model` so that broken models can still be
    loaded and diagnosed.
    """

    A: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise ValueError("invariant violated: A is square")
        Gamma = np.array(self.Gamma, dtype=float)
        if Gamma.ndim == 1:
            Gamma = Gamma.reshape(1, -1)
        if Gamma.shape[1] != A.shape[0]:
            raise ValueError("invariant violated: Gamma has one column per state of A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Gamma", Gamma)

    def __eq__(self, other):
        return (isinstance(other, InternalModelSpec) and np.array_equal(self.A, other.A)
                and np.array_equal(self.Gamma, other.Gamma))

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def check_internal_model(spec: InternalModelSpec, name: str = "A") -> list[str]:
    """Return a list of violated invariants (empty when the model is valid)."""
    problems = []
    if not is_skew(spec.A):
        problems.append(f"{name} is not skew-symmetric")
    if not is_observable(spec.A, spec.Gamma):
        problems.append(f"({name}, Gamma) is not observable")
    return problems


def internal_model_from_frequencies(frequencies, n_channels: int = 2) -> InternalModelSpec:
    """Per channel, one oscillator per frequency; Gamma reads each block's first state.

    With ``frequencies = (1,)`` and two channels this is
    ``A = blockdiag([0 1; -1 0], [0 1; -1 0])``, ``Gamma = blockdiag([1 0], [1 0])``.
    """
    freqs = sorted(set(float(w) for w in frequencies))
    blocks, rows = [], []
    for c in range(n_channels):
        for w in freqs:
            b = rotation_block(w)
            blocks.append(b)
            rows.extend([c] + [None] * (b.shape[0] - 1))
    A = _block_diag(blocks)
    Gamma = np.zeros((n_channels, A.shape[0]))
    for j, c in enumerate(rows):
        if c is not None:
            Gamma[c, j] = 1.0
    return InternalModelSpec(A, Gamma)


@dataclass
class InternalModelState:
    """Compensator states ``eta`` (torque) and ``zeta`` (force)."""

    eta: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).reshape(-1)
        self.zeta = np.asarray(self.zeta, dtype=float).reshape(-1)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.eta, self.zeta])

    @classmethod
    def from_array(cls, chi, n_eta: int) -> "InternalModelState":
        chi = np.asarray(chi, dtype=float)
        return cls(chi[:n_eta], chi[n_eta:])

    @classmethod
    def zeros(cls, spec_M, spec_E) -> "InternalModelState":
        return cls(np.zeros(_dim(spec_M)), np.zeros(_dim(spec_E)))


def _dim(spec) -> int:
    return 0 if spec is None else spec.dim


def disturbance_at(t: float, exo_M: Exosystem | None, exo_E: Exosystem | None, J):
    """Return ``(d_M, d_E, d)`` with ``d = d_M + J^T d_E``."""
    J = np.asarray(J, dtype=float)
    d_M = exo_M.output(t) if exo_M is not None else np.zeros(J.shape[1])
    d_E = exo_E.output(t) if exo_E is not None else np.zeros(J.shape[0])
    return d_M, d_E, d_M + J.T @ d_E


def internal_model_derivative(spec_M, spec_E, chi: InternalModelState, J, xi) -> InternalModelState:
    xi = np.asarray(xi, dtype=float)
    J = np.asarray(J, dtype=float)
    if spec_M is None:
        eta_dot = np.zeros(0)
    else:
        eta_dot = spec_M.A @ chi.eta - spec_M.Gamma.T @ xi
    if spec_E is None:
        zeta_dot = np.zeros(0)
    else:
        zeta_dot = spec_E.A @ chi.zeta - spec_E.Gamma.T @ (J @ xi)
    return InternalModelState(eta_dot, zeta_dot)


def compensator_output(spec_M, spec_E, chi: InternalModelState, J) -> np.ndarray:
    """``u_d = Gamma_M eta + J^T Gamma_E zeta``."""
    J = np.asarray(J, dtype=float)
    u = np.zeros(J.shape[1])
    if spec_M is not None:
        u = u + spec_M.Gamma @ chi.eta
    if spec_E is not None:
        u = u + J.T @ (spec_E.Gamma @ chi.zeta)
    return u


def stacked_gamma(spec_M, spec_E, J) -> np.ndarray:
    """``Gamma(q) = [Gamma_M, J^T Gamma_E]`` (channels x (l_M + l_E))."""
    J = np.asarray(J, dtype=float)
    parts = [np.zeros((J.shape[1], 0))]
    if spec_M is not None:
        parts.append(spec_M.Gamma)
    if spec_E is not None:
        parts.append(J.T @ spec_E.Gamma)
    return np.hstack(parts)


def regulator_residuals(Sigma, exo: Exosystem, spec: InternalModelSpec) -> tuple[float, float]:
    """Max-norm residuals of ``Sigma S - A Sigma`` and ``Gamma Sigma + G``."""
    r1 = Sigma @ exo.S - spec.A @ Sigma
    r2 = spec.Gamma @ Sigma + exo.G
    m1 = float(np.max(np.abs(r1))) if r1.size else 0.0
    m2 = float(np.max(np.abs(r2))) if r2.size else 0.0
    return m1, m2


def solve_regulator(exo: Exosystem, spec: InternalModelSpec, tol: float = REGULATOR_TOL) -> np.ndarray:
    """Solve ``Sigma S = A Sigma``, ``Gamma Sigma + G = 0`` for ``Sigma``.

    Both conditions are linear in the entries of Sigma; they are stacked
    (column-major vec) and solved in the least-squares sense.  The solution is
    accepted only when both residuals are below ``tol``.
    """
    l, r = spec.dim, exo.dim
    if spec.Gamma.shape[0] != exo.n_outputs:
        raise ValueError("internal model and exosystem drive different channel counts")
    if r == 0:
        return np.zeros((l, 0))
    # vec(Sigma S) = (S^T kron I) vec(Sigma), vec(A Sigma) = (I kron A) vec(Sigma)
    M1 = np.kron(exo.S.T, np.eye(l)) - np.kron(np.eye(r), spec.A)
    M2 = np.kron(np.eye(r), spec.Gamma)
    M = np.vstack([M1, M2])
    rhs = np.concatenate([np.zeros(l * r), -exo.G.reshape(-1, order="F")])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    Sigma = sol.reshape((l, r), order="F")
    if max(regulator_residuals(Sigma, exo, spec)) > tol:
        raise RegulatorError("frequency not modeled")
    return Sigma


def losslessness_power(chi_tilde: InternalModelState, J, xi, spec_M, spec_E) -> tuple[float, float]:
    """Storage rate ``d/dt 0.5 |chi~|^2`` and supplied power ``-xi . u~_d``.

    In error coordinates the compensator reads ``chi~' = A chi~ - Gamma^T(q) xi``,
    ``u~_d = Gamma(q) chi~``; skew ``A`` makes the two numbers equal.
    """
    xi = np.asarray(xi, dtype=float)
    d = internal_model_derivative(spec_M, spec_E, chi_tilde, J, xi)
    dV = float(chi_tilde.as_array() @ d.as_array())
    u_tilde = compensator_output(spec_M, spec_E, chi_tilde, J)
    return dV, float(-xi @ u_tilde)


# Compensator parameters of the four-arm experiment.
PAPER_TORQUE_MODEL = InternalModelSpec(
    A=_block_diag([rotation_block(1.0), rotation_block(1.0)]),
    Gamma=np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]),
)
PAPER_FORCE_MODEL = InternalModelSpec(
    A=_block_diag([rotation_block(math.pi / 2), rotation_block(math.pi / 2)]),
    Gamma=np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]),
)
PAPER_TORQUE_TERMS = (DisturbanceTerm(0, 1.0, 1.0), DisturbanceTerm(1, 1.0, 1.0))
PAPER_FORCE_TERMS = (DisturbanceTerm(0, 0.5, math.pi / 2), DisturbanceTerm(1, 0.5, math.pi / 2))
