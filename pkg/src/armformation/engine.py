"""Closed-loop simulation of N arms under the distributed formation law.

State layout (agent-major): for each agent ``(q1, q2, xi1, xi2, eta..., zeta...)``.
The loop is integrated in the original coordinates with the disturbances
evaluated in closed form; compensator errors and the Lyapunov value are
diagnostics computed from the logged state.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import formation as fm
from .controller import ControllerGains, total_control
from .disturbance import (
    DisturbanceTerm,
    Exosystem,
    InternalModelSpec,
    InternalModelState,
    RegulatorError,
    compensator_output,
    disturbance_at,
    exosystem_from_terms,
    internal_model_derivative,
    solve_regulator,
)
from .manipulator import (
    DET_EPS,
    ManipulatorParams,
    SingularInertiaError,
    JointState,
    forward_kinematics,
    gravity_vector,
    jacobian,
    joint_acceleration,
)

log = logging.getLogger(__name__)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

WARN_MARGIN = 1e-3
ABORT_MARGIN = 1e-6


class SimulationError(RuntimeError):
    """Simulation aborted; ``t`` is the time of failure."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.6g} s")
        self.reason = message
        self.t = t


@dataclass(frozen=True)
class AgentSpec:
    params: ManipulatorParams
    q0: tuple[float, float]
    qdot0: tuple[float, float] = (0.0, 0.0)
    torque_terms: tuple[DisturbanceTerm, ...] = ()
    force_terms: tuple[DisturbanceTerm, ...] = ()
    torque_model: InternalModelSpec | None = None
    force_model: InternalModelSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "q0", tuple(float(v) for v in self.q0))
        object.__setattr__(self, "qdot0", tuple(float(v) for v in self.qdot0))
        object.__setattr__(self, "torque_terms", tuple(self.torque_terms))
        object.__setattr__(self, "force_terms", tuple(self.force_terms))
        JointState(self.q0, self.qdot0)
        for name in ("torque_model", "force_model"):
            model = getattr(self, name)
            if model is not None and model.Gamma.shape[0] != 2:
                raise ValueError(f"invariant violated: {name} drives 2 channels")

    @property
    def exo_torque(self) -> Exosystem:
        return exosystem_from_terms(self.torque_terms, 2)

    @property
    def exo_force(self) -> Exosystem:
        return exosystem_from_terms(self.force_terms, 2)

    @property
    def n_eta(self) -> int:
        return 0 if self.torque_model is None else self.torque_model.dim

    @property
    def n_zeta(self) -> int:
        return 0 if self.force_model is None else self.force_model.dim

    @property
    def state_size(self) -> int:
        return 4 + self.n_eta + self.n_zeta


@dataclass(frozen=True)
class Scenario:
    agents: tuple[AgentSpec, ...]
    graph: fm.FormationGraph
    gains: ControllerGains
    duration: float
    dt: float = 1e-3
    log_stride: int = 10

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("invariant violated: dt > 0")
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValueError("invariant violated: duration >= 0")
        if int(self.log_stride) != self.log_stride or self.log_stride < 1:
            raise ValueError("invariant violated: log_stride >= 1")
        if len(self.agents) != self.graph.n_vertices:
            raise ValueError("invariant violated: agent count = graph vertex count")
        if self.graph.m != 2:
            raise ValueError("invariant violated: planar (m = 2) formation")

    @property
    def n_steps(self) -> int:
        # Round so that e.g. 30 / 1e-3 is not truncated to 29999.
        return int(math.floor(self.duration / self.dt + 1e-9))

    def replace(self, **changes) -> "Scenario":
        fields_ = dict(agents=self.agents, graph=self.graph, gains=self.gains,
                       duration=self.duration, dt=self.dt, log_stride=self.log_stride)
        fields_.update(changes)
        return Scenario(**fields_)

    def offsets(self) -> list[int]:
        out, o = [], 0
        for a in self.agents:
            out.append(o)
            o += a.state_size
        return out

    def initial_state(self) -> np.ndarray:
        parts = []
        for a in self.agents:
            parts += [a.q0, a.qdot0, np.zeros(a.n_eta + a.n_zeta)]
        return np.concatenate(parts)


@dataclass
class SimLog:
    """Logged trajectory.  Arrays are indexed ``[row, agent, component]``."""

    t: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    u: np.ndarray
    ud: np.ndarray
    d: np.ndarray
    e: np.ndarray
    V: np.ndarray
    U: np.ndarray
    margin: np.ndarray
    strategy: str = fm.DISTANCE
    final_state: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_agents(self) -> int:
        return self.q.shape[1]

    @property
    def n_edges(self) -> int:
        return self.e.shape[1]

    def columns(self) -> list[str]:
        cols = ["t"]
        for i in range(1, self.n_agents + 1):
            cols += [f"a{i}_{c}" for c in ("q1", "q2", "xi1", "xi2", "x", "y",
                                            "u1", "u2", "ud1", "ud2", "d1", "d2")]
        for k in range(1, self.n_edges + 1):
            if self.e.ndim == 2:
                cols.append(f"e{k}")
            else:
                cols += [f"e{k}_x", f"e{k}_y"]
        return cols + ["V", "U", "margin"]

    def table(self) -> np.ndarray:
        R = len(self.t)
        per_agent = np.concatenate([self.q, self.xi, self.x, self.u, self.ud, self.d], axis=2)
        return np.column_stack([self.t, per_agent.reshape(R, -1), self.e.reshape(R, -1),
                                self.V, self.U, self.margin])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns()) + "\n")
        for row in self.table():
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SimLog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
        data = data.reshape(-1, len(header))
        n_agents = sum(1 for c in header if c.endswith("_q1"))
        edge_cols = [c for c in header if c.startswith("e") and c[1:2].isdigit()]
        displacement = any(c.endswith("_x") for c in edge_cols)
        R = data.shape[0]
        agent_block = data[:, 1:1 + 12 * n_agents].reshape(R, n_agents, 12)
        j = 1 + 12 * n_agents
        n_edge_cols = len(edge_cols)
        e = data[:, j:j + n_edge_cols]
        if displacement:
            e = e.reshape(R, n_edge_cols // 2, 2)
        j += n_edge_cols
        return cls(t=data[:, 0], q=agent_block[:, :, 0:2], xi=agent_block[:, :, 2:4],
                   x=agent_block[:, :, 4:6], u=agent_block[:, :, 6:8],
                   ud=agent_block[:, :, 8:10], d=agent_block[:, :, 10:12], e=e,
                   V=data[:, j], U=data[:, j + 1], margin=data[:, j + 2],
                   strategy=fm.DISPLACEMENT if displacement else fm.DISTANCE)


def _sparse(M, transpose=False):
    M = np.asarray(M, dtype=float)
    if transpose:
        M = M.T
    return [(int(r), int(c), float(M[r, c])) for r, c in zip(*np.nonzero(M))]


def _signal(terms, t):
    out = [0.0, 0.0]
    for ch, amp, w, ph in terms:
        out[ch] += amp if w == 0.0 else amp * math.sin(w * t + ph)
    return out


class _ArmKernel:
    """Scalar right-hand side of one arm; mirrors the numpy public operations."""

    def __init__(self, agent: AgentSpec, gains: ControllerGains):
        p = agent.params
        self.l1, self.l2 = p.l1, p.l2
        self.bx, self.by = p.base
        self.a1, self.a2, self.a3 = p.coefficients
        self.g_a = (p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity
        self.g_b = p.m2 * p.lc2 * p.gravity
        self.kp, self.kd = gains.kp, gains.kd
        self.torque = tuple((d.channel, d.amplitude, d.frequency, d.phase) for d in agent.torque_terms)
        self.force = tuple((d.channel, d.amplitude, d.frequency, d.phase) for d in agent.force_terms)
        self.nM, self.nE = agent.n_eta, agent.n_zeta
        M, E = agent.torque_model, agent.force_model
        self.AM = _sparse(M.A) if M is not None else []
        self.GM = _sparse(M.Gamma) if M is not None else []
        self.AE = _sparse(E.A) if E is not None else []
        self.GE = _sparse(E.Gamma) if E is not None else []

    def margin(self, q2):
        """``|det J|``, which only depends on the elbow angle."""
        return abs(self.l1 * self.l2 * math.sin(q2))

    def kinematics(self, q1, q2):
        s1, c1 = math.sin(q1), math.cos(q1)
        s12, c12 = math.sin(q1 + q2), math.cos(q1 + q2)
        x = self.l1 * c1 + self.l2 * c12 + self.bx
        y = self.l1 * s1 + self.l2 * s12 + self.by
        J11 = -self.l1 * s1 - self.l2 * s12
        J12 = -self.l2 * s12
        J21 = self.l1 * c1 + self.l2 * c12
        J22 = self.l2 * c12
        return x, y, (J11, J12, J21, J22), c1, c12

    def rhs(self, t, s, kin, eh, signals):
        """Return ``(derivative, u, u_d, d)`` for the local state list ``s``.

        ``signals`` maps a tuple of disturbance terms to its value at ``t``.
        """
        q2, w1, w2 = s[1], s[2], s[3]
        J11, J12, J21, J22 = kin[2]
        nM = self.nM
        eta = s[4:4 + nM]
        zeta = s[4 + nM:]

        dM = signals[self.torque]
        dE = signals[self.force]
        d1 = dM[0] + J11 * dE[0] + J21 * dE[1]
        d2 = dM[1] + J12 * dE[0] + J22 * dE[1]

        # u_d = Gamma_M eta + J^T Gamma_E zeta
        tm = [0.0, 0.0]
        for r, c, v in self.GM:
            tm[r] += v * eta[c]
        fe = [0.0, 0.0]
        for r, c, v in self.GE:
            fe[r] += v * zeta[c]
        ud1 = tm[0] + J11 * fe[0] + J21 * fe[1]
        ud2 = tm[1] + J12 * fe[0] + J22 * fe[1]

        c2 = math.cos(q2)
        g2 = self.g_b * kin[4]
        g1 = self.g_a * kin[3] + g2
        u1 = -self.kp * (J11 * eh[0] + J21 * eh[1]) - self.kd * w1 + g1 + ud1
        u2 = -self.kp * (J12 * eh[0] + J22 * eh[1]) - self.kd * w2 + g2 + ud2

        h = self.a3 * math.sin(q2)
        H11 = self.a1 + 2.0 * self.a3 * c2
        H12 = self.a2 + self.a3 * c2
        H22 = self.a2
        r1 = u1 + d1 - (-h * w2 * w1 - h * (w1 + w2) * w2) - g1
        r2 = u2 + d2 - (h * w1 * w1) - g2
        det = H11 * H22 - H12 * H12
        if not (H11 > 0 and det > DET_EPS):
            raise SingularInertiaError("inertia matrix is not positive definite")
        a1 = (H22 * r1 - H12 * r2) / det
        a2 = (H11 * r2 - H12 * r1) / det

        # eta' = A_M eta - Gamma_M^T xi ; zeta' = A_E zeta - Gamma_E^T J xi
        deta = [0.0] * nM
        for r, c, v in self.AM:
            deta[r] += v * eta[c]
        for r, c, v in self.GM:
            deta[c] -= v * (w1 if r == 0 else w2)
        vx = J11 * w1 + J12 * w2
        vy = J21 * w1 + J22 * w2
        dzeta = [0.0] * self.nE
        for r, c, v in self.AE:
            dzeta[r] += v * zeta[c]
        for r, c, v in self.GE:
            dzeta[c] -= v * (vx if r == 0 else vy)
        return [w1, w2, a1, a2] + deta + dzeta, (u1, u2), (ud1, ud2), (d1, d2)


class ClosedLoop:
    """Compiled closed-loop vector field for a :class:`Scenario`.

    ``workers > 1`` evaluates the per-agent part on a thread pool; results are
    gathered in agent order, so the output does not depend on ``workers``.
    """

    def __init__(self, scenario: Scenario, workers: int = 1):
        self.scenario = scenario
        self.graph = scenario.graph
        self.gains = scenario.gains
        self.agents = scenario.agents
        self.offsets = scenario.offsets()
        self.size = sum(a.state_size for a in self.agents)
        self.exo_M = [a.exo_torque if a.torque_terms else None for a in self.agents]
        self.exo_E = [a.exo_force if a.force_terms else None for a in self.agents]
        self.kernels = [_ArmKernel(a, scenario.gains) for a in self.agents]
        self._term_sets = sorted({k.torque for k in self.kernels} | {k.force for k in self.kernels})
        self._bounds = [(o, o + a.state_size) for a, o in zip(self.agents, self.offsets)]
        self._tails = [a for a, _ in self.graph.edges]
        self._heads = [b for _, b in self.graph.edges]
        self._distance = self.graph.strategy == fm.DISTANCE
        self._targets = ([t * t for t in self.graph.targets] if self._distance
                         else list(self.graph.targets))
        self.workers = int(workers)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._sigma = None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def split(self, y, i):
        a = self.agents[i]
        o = self.offsets[i]
        return (y[o:o + 2], y[o + 2:o + 4],
                InternalModelState(y[o + 4:o + 4 + a.n_eta], y[o + 4 + a.n_eta:o + a.state_size]))

    def positions(self, y) -> np.ndarray:
        return np.array([forward_kinematics(a.params, y[o:o + 2])
                         for a, o in zip(self.agents, self.offsets)])

    def formation_terms(self, y):
        x = self.positions(y)
        z = fm.edge_vectors(self.graph, x)
        e = fm.edge_errors(self.graph, z)
        e_hat = fm.agent_gradients(self.graph, z, e)
        return x, e, e_hat

    def _evaluate(self, t, y):
        yl = y.tolist()
        locals_ = [yl[a:b] for a, b in self._bounds]
        kins = [k.kinematics(s[0], s[1]) for k, s in zip(self.kernels, locals_)]
        eh = [[0.0, 0.0] for _ in kins]
        errors = []
        for k, (a, b) in enumerate(zip(self._tails, self._heads)):
            zx = kins[a][0] - kins[b][0]
            zy = kins[a][1] - kins[b][1]
            if self._distance:
                ek = zx * zx + zy * zy - self._targets[k]
                fx, fy = 2.0 * zx * ek, 2.0 * zy * ek
                errors.append(ek)
            else:
                fx, fy = zx - self._targets[k][0], zy - self._targets[k][1]
                errors.append((fx, fy))
            eh[a][0] += fx
            eh[a][1] += fy
            eh[b][0] -= fx
            eh[b][1] -= fy
        signals = {terms: _signal(terms, t) for terms in self._term_sets}
        jobs = list(zip(self.kernels, locals_, kins, eh))
        if self._pool is None:
            res = [k.rhs(t, s, kin, e, signals) for k, s, kin, e in jobs]
        else:
            res = list(self._pool.map(lambda job: job[0].rhs(t, *job[1:], signals), jobs))
        return kins, errors, res

    def derivative(self, t: float, y: np.ndarray) -> np.ndarray:
        _, _, res = self._evaluate(t, y)
        out = []
        for r in res:
            out += r[0]
        return np.array(out)

    def reference_derivative(self, t: float, y: np.ndarray) -> np.ndarray:
        """Same vector field assembled from the numpy public operations."""
        _, _, e_hat = self.formation_terms(y)
        parts = []
        for i, a in enumerate(self.agents):
            p = a.params
            q, xi, chi = self.split(y, i)
            J = jacobian(p, q)
            _, _, d = disturbance_at(t, self.exo_M[i], self.exo_E[i], J)
            u_d = compensator_output(a.torque_model, a.force_model, chi, J)
            u = total_control(self.gains, J, e_hat[i], gravity_vector(p, q), xi, u_d)
            xi_dot = joint_acceleration(p, JointState(q, xi), u, d)
            chi_dot = internal_model_derivative(a.torque_model, a.force_model, chi, J, xi)
            parts.append(np.concatenate([xi, xi_dot, chi_dot.eta, chi_dot.zeta]))
        return np.concatenate(parts)

    def signals(self, t: float, y: np.ndarray):
        """Logged quantities at one instant: x, u, u_d, d, e, V, min margin."""
        kins, errors, res = self._evaluate(t, y)
        x = np.array([k[:2] for k in kins])
        u = np.array([r[1] for r in res])
        ud = np.array([r[2] for r in res])
        d = np.array([r[3] for r in res])
        e = np.array(errors)
        margins = [abs(J[0] * J[3] - J[1] * J[2]) for J in (k[2] for k in kins)]
        return x, u, ud, d, e, fm.potential(e), min(margins)

    def regulator_solutions(self):
        """Per agent ``(Sigma_M, Sigma_E)``, or None if some model cannot cancel."""
        if self._sigma is None:
            sigmas = []
            try:
                for a, exo_M, exo_E in zip(self.agents, self.exo_M, self.exo_E):
                    sigmas.append((_sigma(exo_M, a.torque_model), _sigma(exo_E, a.force_model)))
            except RegulatorError:
                sigmas = None
            self._sigma = sigmas if sigmas is not None else False
        return self._sigma or None

    def _chi_tilde(self, t, y, i) -> np.ndarray:
        a, o = self.agents[i], self.offsets[i]
        S_M, S_E = self._sigma[i]
        chi = y[o + 4:o + a.state_size].copy()
        if S_M is not None and S_M.size:
            chi[:a.n_eta] -= S_M @ self.exo_M[i].state(t)
        if S_E is not None and S_E.size:
            chi[a.n_eta:] -= S_E @ self.exo_E[i].state(t)
        return chi

    def compensator_error(self, t: float, y: np.ndarray, i: int) -> InternalModelState | None:
        """``chi~ = chi - Sigma v(t)`` for agent ``i``."""
        if self.regulator_solutions() is None:
            return None
        return InternalModelState.from_array(self._chi_tilde(t, y, i), self.agents[i].n_eta)

    def lyapunov(self, t: float, y: np.ndarray, V: float | None = None) -> float:
        """``U = 0.5 |chi~|^2 + 0.5 Kp |e|^2 + 0.5 xi^T H(q) xi`` (NaN if undefined).

        ``V`` may pass in an already computed formation potential at ``y``.
        """
        sigmas = self.regulator_solutions()
        if sigmas is None:
            return math.nan
        if V is None:
            _, e, _ = self.formation_terms(y)
            V = fm.potential(e)
        total = self.gains.kp * V
        for i, a in enumerate(self.agents):
            o = self.offsets[i]
            q2, w1, w2 = float(y[o + 1]), float(y[o + 2]), float(y[o + 3])
            chi_t = self._chi_tilde(t, y, i)
            k = self.kernels[i]
            c2 = math.cos(q2)
            # xi^T H xi with H = [[a1 + 2 a3 c2, a2 + a3 c2], [a2 + a3 c2, a2]]
            kinetic = ((k.a1 + 2.0 * k.a3 * c2) * w1 * w1 + 2.0 * (k.a2 + k.a3 * c2) * w1 * w2
                       + k.a2 * w2 * w2)
            total += 0.5 * float(chi_t @ chi_t) + 0.5 * kinetic
        return total


def _sigma(exo, model):
    if exo is None:
        return None if model is None else np.zeros((model.dim, 0))
    if model is None:
        raise RegulatorError("frequency not modeled")
    return solve_regulator(exo, model)


def closed_loop_derivative(scenario: Scenario, t: float, state) -> np.ndarray:
    return ClosedLoop(scenario).derivative(t, np.asarray(state, dtype=float))


def rk4_step(f, t: float, y, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step; raises on a non-finite result."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    h2 = 0.5 * dt
    k1 = f(t, y)
    k2 = f(t + h2, y + h2 * k1)
    k3 = f(t + h2, y + h2 * k2)
    k4 = f(t + dt, y + dt * k3)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite state", t + dt)
    return out


def lyapunov_value(scenario: Scenario, state, t: float) -> float:
    return ClosedLoop(scenario).lyapunov(t, np.asarray(state, dtype=float))


def simulate(scenario: Scenario, workers: int = 1) -> SimLog:
    """Integrate from 0 to ``duration`` with fixed-step RK4 and log every ``log_stride`` steps."""
    with ClosedLoop(scenario, workers) as loop:
        n_steps = scenario.n_steps
        stride = int(scenario.log_stride)
        rows = n_steps // stride + 1
        n = len(scenario.agents)
        E = scenario.graph.n_edges
        e_shape = (rows, E) if scenario.graph.strategy == fm.DISTANCE else (rows, E, 2)
        out = SimLog(t=np.zeros(rows), q=np.zeros((rows, n, 2)), xi=np.zeros((rows, n, 2)),
                     x=np.zeros((rows, n, 2)), u=np.zeros((rows, n, 2)),
                     ud=np.zeros((rows, n, 2)), d=np.zeros((rows, n, 2)),
                     e=np.zeros(e_shape), V=np.zeros(rows), U=np.zeros(rows),
                     margin=np.zeros(rows), strategy=scenario.graph.strategy)

        q_idx = np.array([[o, o + 1] for o in loop.offsets])

        def record(r, t, y):
            x, u, ud, d, e, V, margin = loop.signals(t, y)
            out.t[r] = t
            out.q[r] = y[q_idx]
            out.xi[r] = y[q_idx + 2]
            out.x[r], out.u[r], out.ud[r], out.d[r], out.e[r] = x, u, ud, d, e
            out.V[r] = V
            out.U[r] = loop.lyapunov(t, y, V)
            out.margin[r] = margin

        y = scenario.initial_state()
        _check_margin(scenario, y, 0.0, loop)
        record(0, 0.0, y)
        warned = False
        for k in range(n_steps):
            t = k * scenario.dt
            y = rk4_step(loop.derivative, t, y, scenario.dt)
            t_next = (k + 1) * scenario.dt
            warned = _check_margin(scenario, y, t_next, loop, warned)
            if (k + 1) % stride == 0:
                record((k + 1) // stride, t_next, y)
        out.final_state = y
        return out


def _check_margin(scenario, y, t, loop, warned=False) -> bool:
    for i, (k, o) in enumerate(zip(loop.kernels, loop.offsets)):
        m = k.margin(float(y[o + 1]))
        if m < ABORT_MARGIN:
            raise SimulationError(f"singular configuration (agent {i + 1})", t)
        if m < WARN_MARGIN and not warned:
            log.warning("agent %d close to a singular configuration at t=%.4f s "
                        "(margin %.3e)", i + 1, t, m)
            warned = True
    return warned


@dataclass
class ConvergenceMetrics:
    max_edge_error_tail: float
    max_joint_velocity_tail: float
    residual_tail_mean: float
    disturbance_tail_mean: float
    residual_ratio: float
    final_potential: float
    min_margin: float

    def as_text(self) -> str:
        return "".join(f"{k}={format(v, '.17g')}\n" for k, v in self.__dict__.items())


def _time_average(t, f) -> float:
    if len(t) < 2 or t[-1] == t[0]:
        return float(np.mean(f)) if len(f) else 0.0
    return float(_trapezoid(f, t) / (t[-1] - t[0]))


def convergence_metrics(log_: SimLog, tail: float = 5.0) -> ConvergenceMetrics:
    """Tail-window convergence figures of a run.

    The compensation residual is ``||u_d + d||``: the part of the disturbance
    left uncancelled by the compensator.
    """
    t_end = log_.t[-1]
    mask = log_.t >= t_end - tail - 1e-9
    e = np.abs(log_.e[mask])
    xi = np.linalg.norm(log_.xi[mask], axis=2)
    res = np.linalg.norm(log_.ud[mask] + log_.d[mask], axis=2).mean(axis=1)
    dist = np.linalg.norm(log_.d[mask], axis=2).mean(axis=1)
    t = log_.t[mask]
    res_mean = _time_average(t, res)
    dist_mean = _time_average(t, dist)
    return ConvergenceMetrics(
        max_edge_error_tail=float(e.max()) if e.size else 0.0,
        max_joint_velocity_tail=float(xi.max()) if xi.size else 0.0,
        residual_tail_mean=res_mean,
        disturbance_tail_mean=dist_mean,
        residual_ratio=res_mean / dist_mean if dist_mean > 0 else 0.0,
        final_potential=float(log_.V[-1]),
        min_margin=float(log_.margin.min()),
    )
