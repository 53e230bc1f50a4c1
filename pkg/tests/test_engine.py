import logging
import math

import numpy as np
import pytest

from armformation import formation as fm
from armformation.controller import PAPER_GAINS, ControllerGains
from armformation.disturbance import (
    PAPER_FORCE_MODEL,
    PAPER_FORCE_TERMS,
    PAPER_TORQUE_MODEL,
    PAPER_TORQUE_TERMS,
    InternalModelSpec,
    solve_regulator,
    stacked_gamma,
)
from armformation.engine import (
    AgentSpec,
    ClosedLoop,
    Scenario,
    SimLog,
    SimulationError,
    closed_loop_derivative,
    convergence_metrics,
    lyapunov_value,
    rk4_step,
    simulate,
)
from armformation.manipulator import TABLE_I, ManipulatorParams, forward_kinematics, jacobian
from armformation.presets import BASES, INITIAL_Q, paper_scenario


def at_rest_scenario(disturbed=False, strategy=fm.DISTANCE, duration=2.0):
    """Paper arms with the graph targets taken from their initial end-effector positions."""
    agents = tuple(AgentSpec(TABLE_I.with_base(b), q,
                             torque_terms=PAPER_TORQUE_TERMS if disturbed else (),
                             force_terms=PAPER_FORCE_TERMS if disturbed else (),
                             torque_model=PAPER_TORQUE_MODEL if disturbed else None,
                             force_model=PAPER_FORCE_MODEL if disturbed else None)
                   for b, q in zip(BASES, INITIAL_Q))
    x0 = [forward_kinematics(a.params, a.q0) for a in agents]
    graph = fm.FormationGraph.from_reference(4, fm.SQUARE_EDGES, strategy, x0)
    return Scenario(agents, graph, PAPER_GAINS, duration)


def pair_scenario(**kw):
    agents = (AgentSpec(TABLE_I, (0.0, math.pi / 2)),
              AgentSpec(TABLE_I.with_base((0.5, 0.0)), (0.0, math.pi / 2)))
    graph = fm.FormationGraph(2, ((0, 1),), fm.DISTANCE, (0.4,))
    return Scenario(agents, graph, PAPER_GAINS, kw.pop("duration", 1.0), **kw)


# -- scenario -----------------------------------------------------------------------------

def test_scenario_invariants():
    s = paper_scenario()
    with pytest.raises(ValueError, match="dt > 0"):
        s.replace(dt=-1.0)
    with pytest.raises(ValueError, match="log_stride"):
        s.replace(log_stride=0)
    with pytest.raises(ValueError, match="vertex count"):
        s.replace(agents=s.agents[:3])


def test_state_layout():
    s = paper_scenario()
    assert s.offsets() == [0, 12, 24, 36]
    y = s.initial_state()
    assert y.shape == (48,)
    np.testing.assert_allclose(y[12:14], INITIAL_Q[1])
    np.testing.assert_array_equal(y[14:24], 0.0)


# -- vector field ---------------------------------------------------------------------------

def test_derivative_length():
    s = paper_scenario()
    assert closed_loop_derivative(s, 0.0, s.initial_state()).shape == (48,)


@pytest.mark.parametrize("strategy", fm.STRATEGIES)
def test_fast_path_matches_reference(strategy):
    s = paper_scenario(strategy)
    loop = ClosedLoop(s)
    rng = np.random.default_rng(15)
    for _ in range(100):
        y = rng.normal(size=48)
        t = rng.uniform(0, 30)
        fast, ref = loop.derivative(t, y), loop.reference_derivative(t, y)
        np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-9)


def test_fast_path_matches_reference_with_gravity_and_odd_models():
    p = ManipulatorParams(0.8, 1.3, 0.1, 0.2, 1.1, 0.9, 0.5, 0.3, gravity=9.81)
    A = np.array([[0, 2.0, 0], [-2.0, 0, 0], [0, 0, 0]])
    spec = InternalModelSpec(A, np.array([[1.0, 0, 1.0], [0.5, 0, 0]]))
    agents = tuple(AgentSpec(p.with_base((i, 0.0)), (0.3 * i, 1.0 + 0.1 * i),
                             torque_model=spec if i % 2 else None,
                             force_model=PAPER_FORCE_MODEL, force_terms=PAPER_FORCE_TERMS)
                   for i in range(3))
    graph = fm.FormationGraph(3, ((0, 1), (1, 2), (2, 0)), fm.DISTANCE, (1.0, 1.0, 1.0))
    loop = ClosedLoop(Scenario(agents, graph, ControllerGains(3.0, 2.0), 1.0))
    y = np.random.default_rng(16).normal(size=loop.size)
    np.testing.assert_allclose(loop.derivative(0.7, y), loop.reference_derivative(0.7, y),
                               rtol=1e-12, atol=1e-10)


def test_undisturbed_equilibrium_derivative_is_zero():
    s = at_rest_scenario()
    d = closed_loop_derivative(s, 0.0, s.initial_state())
    np.testing.assert_allclose(d, 0.0, atol=1e-9)


def test_disturbed_equilibrium_only_compensator_moves():
    s = at_rest_scenario(disturbed=True)
    y = s.initial_state()
    t = 0.0
    for a, o in zip(s.agents, s.offsets()):
        y[o + 4:o + 8] = solve_regulator(a.exo_torque, a.torque_model) @ a.exo_torque.state(t)
        y[o + 8:o + 12] = solve_regulator(a.exo_force, a.force_model) @ a.exo_force.state(t)
    d = closed_loop_derivative(s, t, y).reshape(4, 12)
    np.testing.assert_allclose(d[:, :4], 0.0, atol=1e-9)
    assert np.max(np.abs(d[:, 4:])) > 0.1


# -- integrator -------------------------------------------------------------------------------

def test_rk4_zero_field():
    y = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(rk4_step(lambda t, y: np.zeros_like(y), 0.0, y, 0.1), y)


def test_rk4_single_step_value():
    y1 = rk4_step(lambda t, y: -y, 0.0, np.array([1.0]), 0.1)
    # 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
    assert y1[0] == pytest.approx(0.9048375, abs=1e-7)
    assert y1[0] == pytest.approx(1 - 0.1 + 0.005 - 0.1**3 / 6 + 0.1**4 / 24, abs=1e-15)


def test_rk4_global_error():
    y = np.array([1.0])
    for k in range(1000):
        y = rk4_step(lambda t, y: -y, k * 1e-3, y, 1e-3)
    assert abs(y[0] - math.exp(-1)) <= 1e-11


def test_rk4_rejects_blow_up_and_bad_step():
    with np.errstate(over="ignore"), pytest.raises(SimulationError, match="non-finite state") as info:
        rk4_step(lambda t, y: y * 1e308, 2.0, np.array([1e308]), 0.5)
    assert info.value.t == 2.5
    with pytest.raises(ValueError):
        rk4_step(lambda t, y: y, 0.0, np.ones(1), 0.0)


# -- simulate -----------------------------------------------------------------------------------

def test_equilibrium_preserved():
    log = simulate(at_rest_scenario())
    assert np.max(np.abs(log.e)) <= 1e-9
    assert np.max(np.abs(log.xi)) <= 1e-9


def test_duration_zero_gives_single_row():
    s = paper_scenario(duration=0.0)
    log = simulate(s)
    assert len(log.t) == 1
    np.testing.assert_allclose(log.q[0], INITIAL_Q)
    np.testing.assert_array_equal(log.xi[0], 0.0)


def test_row_count_and_time_column():
    s = paper_scenario(duration=0.537, log_stride=7)
    log = simulate(s)
    assert len(log.t) == math.floor(0.537 / (1e-3 * 7)) + 1
    assert np.all(np.diff(log.t) > 0)


def test_workers_do_not_change_results():
    s = paper_scenario(duration=1.0)
    assert simulate(s).to_csv() == simulate(s, workers=3).to_csv()


def test_singular_start_aborts():
    s = paper_scenario(duration=0.1)
    agents = list(s.agents)
    agents[0] = AgentSpec(agents[0].params, (0.0, 0.0))
    with pytest.raises(SimulationError, match="singular configuration \\(agent 1\\)"):
        simulate(s.replace(agents=tuple(agents)))


def test_near_singular_start_warns(caplog):
    s = paper_scenario(duration=0.002)
    agents = list(s.agents)
    agents[2] = AgentSpec(agents[2].params, (math.pi, 1e-4))
    with caplog.at_level(logging.WARNING, logger="armformation.engine"):
        simulate(s.replace(agents=tuple(agents)))
    assert "agent 3 close to a singular configuration" in caplog.text


# -- log ----------------------------------------------------------------------------------------

@pytest.mark.parametrize("strategy", fm.STRATEGIES)
def test_csv_round_trip(strategy):
    log = simulate(paper_scenario(strategy, duration=0.2))
    back = SimLog.from_csv(log.to_csv())
    for name in ("t", "q", "xi", "x", "u", "ud", "d", "e", "V", "U", "margin"):
        np.testing.assert_array_equal(getattr(back, name), getattr(log, name))
    assert back.strategy == strategy
    assert back.to_csv() == log.to_csv()


def test_csv_header():
    log = simulate(paper_scenario(duration=0.0))
    header = log.to_csv().splitlines()[0].split(",")
    assert header[:13] == ["t", "a1_q1", "a1_q2", "a1_xi1", "a1_xi2", "a1_x", "a1_y", "a1_u1", "a1_u2",
                           "a1_ud1", "a1_ud2", "a1_d1", "a1_d2"]
    assert header[-8:] == ["e1", "e2", "e3", "e4", "e5", "V", "U", "margin"]
    disp = simulate(paper_scenario(fm.DISPLACEMENT, duration=0.0)).columns()
    assert disp[-5:] == ["e5_x", "e5_y", "V", "U", "margin"]
    assert len(disp) == 1 + 4 * 12 + 10 + 3


# -- Lyapunov -----------------------------------------------------------------------------------

def test_lyapunov_pair_example():
    s = pair_scenario()
    assert lyapunov_value(s, s.initial_state(), 0.0) == pytest.approx(3.24, abs=1e-12)


def test_lyapunov_zero_at_equilibrium():
    s = at_rest_scenario(disturbed=True)
    y = s.initial_state()
    t = 1.3
    for a, o in zip(s.agents, s.offsets()):
        y[o + 4:o + 8] = solve_regulator(a.exo_torque, a.torque_model) @ a.exo_torque.state(t)
        y[o + 8:o + 12] = solve_regulator(a.exo_force, a.force_model) @ a.exo_force.state(t)
    assert lyapunov_value(s, y, t) == pytest.approx(0.0, abs=1e-12)


def test_lyapunov_undefined_without_internal_model():
    s = paper_scenario(internal_models=False)
    assert math.isnan(lyapunov_value(s, s.initial_state(), 0.0))


def test_lyapunov_non_negative_and_decreasing_short_run():
    log = simulate(paper_scenario(duration=2.0, log_stride=1))
    assert np.all(log.U >= 0)
    assert np.max(np.diff(log.U)) <= 1e-8


# -- metrics ------------------------------------------------------------------------------------

def test_metrics_of_zero_log():
    n = 11
    z = np.zeros((n, 2, 2))
    log = SimLog(t=np.linspace(0, 1, n), q=z, xi=z, x=z, u=z, ud=z, d=z, e=np.zeros((n, 1)),
                 V=np.zeros(n), U=np.zeros(n), margin=np.zeros(n))
    m = convergence_metrics(log, tail=0.5)
    assert all(v == 0.0 for v in m.__dict__.values())


def test_metrics_text_format():
    text = convergence_metrics(simulate(paper_scenario(duration=0.1)), tail=0.05).as_text()
    keys = [line.split("=")[0] for line in text.splitlines()]
    assert keys == ["max_edge_error_tail", "max_joint_velocity_tail", "residual_tail_mean",
                    "disturbance_tail_mean", "residual_ratio", "final_potential", "min_margin"]


@pytest.mark.slow
def test_metrics_invariant_to_log_stride(square_run):
    fine = simulate(square_run.scenario.replace(log_stride=1))
    a, b = convergence_metrics(square_run.log), convergence_metrics(fine)
    for key, value in a.__dict__.items():
        assert abs(value - getattr(b, key)) <= 1e-6, key
    assert np.array_equal(fine.final_state, square_run.log.final_state)


@pytest.mark.slow
def test_invariant_set_reached(square_run):
    """At the end of the four-arm run ||Gamma(q) chi~|| <= 1e-2 for every arm."""
    s = square_run.scenario
    y = square_run.log.final_state
    t = square_run.log.t[-1]
    loop = ClosedLoop(s)
    worst = 0.0
    for i, a in enumerate(s.agents):
        q = loop.split(y, i)[0]
        chi_t = loop.compensator_error(t, y, i).as_array()
        worst = max(worst, float(np.linalg.norm(
            stacked_gamma(a.torque_model, a.force_model, jacobian(a.params, q)) @ chi_t)))
    assert worst <= 1e-2, f"max ||Gamma(q) chi~|| = {worst:.3g}"


@pytest.mark.slow
def test_compensator_cancels_disturbance_with_soft_springs():
    """With a soft formation spring the internal model converges within the run.

    Kp = 1, Kd = 20 and output gains scaled by 10 move the slow compensator
    modes to time constants of a few seconds.
    """
    def scaled(spec):
        return InternalModelSpec(spec.A, 10.0 * spec.Gamma)

    base = paper_scenario(duration=40.0)
    agents = tuple(AgentSpec(a.params, a.q0, a.qdot0, a.torque_terms, a.force_terms,
                             scaled(a.torque_model), scaled(a.force_model)) for a in base.agents)
    log = simulate(base.replace(agents=agents, gains=ControllerGains(1.0, 20.0)))
    m = convergence_metrics(log)
    assert m.residual_ratio <= 0.05
    assert np.nanmax(np.diff(log.U)) <= 1e-8
