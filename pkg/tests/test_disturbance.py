import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from armformation.disturbance import (
    PAPER_FORCE_MODEL,
    PAPER_FORCE_TERMS,
    PAPER_TORQUE_MODEL,
    PAPER_TORQUE_TERMS,
    DisturbanceTerm,
    Exosystem,
    InternalModelSpec,
    InternalModelState,
    RegulatorError,
    check_internal_model,
    compensator_output,
    disturbance_at,
    exosystem_from_terms,
    internal_model_derivative,
    internal_model_from_frequencies,
    is_observable,
    is_skew,
    losslessness_power,
    regulator_residuals,
    solve_regulator,
    stacked_gamma,
)

EXO_M = exosystem_from_terms(PAPER_TORQUE_TERMS)
EXO_E = exosystem_from_terms(PAPER_FORCE_TERMS)


def rk4_linear(S, v0, dt, n):
    """Oracle: plain RK4 on v' = S v."""
    v = np.array(v0, dtype=float)
    for _ in range(n):
        k1 = S @ v
        k2 = S @ (v + 0.5 * dt * k1)
        k3 = S @ (v + 0.5 * dt * k2)
        k4 = S @ (v + dt * k3)
        v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return v


# -- exosystems ------------------------------------------------------------------------

def test_paper_disturbance_values():
    J = np.eye(2)
    d_M, _, _ = disturbance_at(math.pi / 2, EXO_M, EXO_E, J)
    np.testing.assert_allclose(d_M, (1.0, 1.0), atol=1e-15)
    _, d_E, _ = disturbance_at(1.0, EXO_M, EXO_E, J)
    np.testing.assert_allclose(d_E, (0.5, 0.5), atol=1e-15)
    d_M, d_E, d = disturbance_at(0.0, EXO_M, EXO_E, J)
    np.testing.assert_array_equal(np.concatenate([d_M, d_E, d]), 0.0)


def test_joint_disturbance_maps_force_through_jacobian():
    J = np.array([[-1.5, -1.5], [1.5, 0.0]])
    t = 0.7
    d_M, d_E, d = disturbance_at(t, EXO_M, EXO_E, J)
    np.testing.assert_allclose(d_M, [math.sin(t)] * 2, atol=1e-15)
    np.testing.assert_allclose(d_E, [0.5 * math.sin(math.pi * t / 2)] * 2, atol=1e-15)
    np.testing.assert_allclose(d, d_M + J.T @ d_E, atol=1e-15)


def test_paper_realisation():
    np.testing.assert_array_equal(EXO_M.S, PAPER_TORQUE_MODEL.A)
    np.testing.assert_array_equal(EXO_M.v0, [0.0, 1.0, 0.0, 1.0])
    np.testing.assert_array_equal(EXO_M.G, [[1, 0, 0, 0], [0, 0, 1, 0]])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(-3, 3), st.floats(0, 5), st.floats(-4, 4)),
                min_size=1, max_size=4),
       st.floats(0, 100))
def test_exosystem_output_matches_terms(raw, t):
    terms = [DisturbanceTerm(*r) for r in raw]
    exo = exosystem_from_terms(terms)
    expected = np.zeros(2)
    for term in terms:
        expected[term.channel] += (term.amplitude if term.frequency == 0
                                   else term.amplitude * math.sin(term.frequency * t + term.phase))
    np.testing.assert_allclose(exo.output(t), expected, atol=1e-9)


def test_closed_form_state_matches_matrix_exponential():
    for t in (0.3, 7.0, 29.9):
        np.testing.assert_allclose(EXO_E.state(t), expm(EXO_E.S * t) @ EXO_E.v0, atol=1e-12)


def test_closed_form_state_matches_rk4_over_30s():
    for exo in (EXO_M, EXO_E):
        np.testing.assert_allclose(exo.state(30.0), rk4_linear(exo.S, exo.v0, 1e-3, 30000), atol=1e-8)


def test_step_disturbance():
    exo = exosystem_from_terms([DisturbanceTerm(1, 2.5, 0.0, phase=1.0)])
    np.testing.assert_array_equal(exo.S, [[0.0]])
    for t in (0.0, 3.0, 40.0):
        np.testing.assert_allclose(exo.output(t), (0.0, 2.5))


def test_non_skew_generator_rejected():
    with pytest.raises(ValueError, match="S \\+ S\\^T = 0"):
        Exosystem(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[1.0, 0.0]]), np.zeros(2))


def test_general_skew_generator_uses_exponential():
    S = np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 0.5], [-2.0, -0.5, 0.0]])
    exo = Exosystem(S, np.eye(3)[:1], np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(exo.state(2.0), expm(2.0 * S) @ exo.v0, atol=1e-12)


# -- internal models -----------------------------------------------------------------------

def test_paper_models_skew_and_observable():
    for spec in (PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL):
        assert np.array_equal(spec.A + spec.A.T, np.zeros((4, 4)))
        assert is_observable(spec.A, spec.Gamma)
        assert check_internal_model(spec) == []


def test_paper_models_from_frequencies():
    assert internal_model_from_frequencies([1.0]) == PAPER_TORQUE_MODEL
    assert internal_model_from_frequencies([math.pi / 2]) == PAPER_FORCE_MODEL


def test_broken_model_reported():
    bad = InternalModelSpec(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[0.0, 0.0]]))
    problems = check_internal_model(bad, "A_M")
    assert "A_M is not skew-symmetric" in problems
    assert "(A_M, Gamma) is not observable" in problems
    assert not is_skew(bad.A)


def test_derivative_zero_at_rest():
    chi = InternalModelState.zeros(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL)
    d = internal_model_derivative(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, chi, np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(d.as_array(), 0.0)


def test_derivative_hand_expansion():
    chi = InternalModelState.zeros(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL)
    d = internal_model_derivative(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, chi, np.eye(2), (1.0, 0.0))
    # Gamma^T (1, 0): only the first state of the first block is driven
    np.testing.assert_array_equal(d.eta, [-1.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(d.zeta, [-1.0, 0.0, 0.0, 0.0])


def test_norm_conserved_without_velocity():
    A = np.zeros((8, 8))
    A[:4, :4] = PAPER_TORQUE_MODEL.A
    A[4:, 4:] = PAPER_FORCE_MODEL.A
    chi0 = np.random.default_rng(8).normal(size=8)
    chi = rk4_linear(A, chi0, 1e-3, 30000)
    assert abs(np.linalg.norm(chi) - np.linalg.norm(chi0)) <= 1e-8
    state = InternalModelState.from_array(chi0, 4)
    d = internal_model_derivative(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, state, np.eye(2), np.zeros(2))
    assert abs(chi0 @ d.as_array()) <= 1e-14


def test_compensator_output_examples():
    chi = InternalModelState.zeros(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL)
    np.testing.assert_array_equal(compensator_output(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, chi, np.eye(2)), 0.0)
    chi = InternalModelState([1.0, 0.0, 0.0, 0.0], np.zeros(4))
    np.testing.assert_array_equal(compensator_output(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, chi, np.eye(2)),
                                  [1.0, 0.0])


def test_stacked_gamma_matches_output():
    J = np.array([[0.3, -1.2], [2.0, 0.4]])
    chi = InternalModelState(*np.split(np.random.default_rng(9).normal(size=8), 2))
    G = stacked_gamma(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, J)
    np.testing.assert_allclose(G @ chi.as_array(),
                               compensator_output(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, chi, J), atol=1e-14)


# -- regulator equations --------------------------------------------------------------------

def test_identity_intertwining():
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])
    exo = Exosystem(S, -np.array([[1.0, 0.0]]), np.array([0.0, 1.0]))
    Sigma = solve_regulator(exo, InternalModelSpec(S, np.array([[1.0, 0.0]])))
    np.testing.assert_allclose(Sigma, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("exo, spec", [(EXO_M, PAPER_TORQUE_MODEL), (EXO_E, PAPER_FORCE_MODEL)])
def test_paper_regulator_residuals(exo, spec):
    Sigma = solve_regulator(exo, spec)
    r1, r2 = regulator_residuals(Sigma, exo, spec)
    assert r1 <= 1e-10 and r2 <= 1e-10
    # independent residual check
    assert np.max(np.abs(Sigma @ exo.S - spec.A @ Sigma)) <= 1e-10
    assert np.max(np.abs(spec.Gamma @ Sigma + exo.G)) <= 1e-10


def test_mismatched_frequency_rejected():
    with pytest.raises(RegulatorError, match="frequency not modeled"):
        solve_regulator(EXO_M, PAPER_FORCE_MODEL)


def test_regulator_solution_cancels_disturbance():
    S_M = solve_regulator(EXO_M, PAPER_TORQUE_MODEL)
    S_E = solve_regulator(EXO_E, PAPER_FORCE_MODEL)
    rng = np.random.default_rng(10)
    for _ in range(50):
        t = rng.uniform(0, 50)
        J = rng.normal(size=(2, 2))
        chi = InternalModelState(S_M @ EXO_M.state(t), S_E @ EXO_E.state(t))
        u_d = compensator_output(PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL, chi, J)
        _, _, d = disturbance_at(t, EXO_M, EXO_E, J)
        np.testing.assert_allclose(u_d, -d, atol=1e-12)


def test_regulator_random_frequency_sets():
    rng = np.random.default_rng(11)
    for _ in range(100):
        freqs = list(rng.choice([0.0, 0.5, 1.0, math.pi / 2, 2.0, 3.3], size=rng.integers(1, 4), replace=False))
        terms = [DisturbanceTerm(int(rng.integers(0, 2)), rng.uniform(-2, 2), w, rng.uniform(-3, 3))
                 for w in freqs]
        exo = exosystem_from_terms(terms)
        spec = internal_model_from_frequencies(freqs + [7.0])
        assert max(regulator_residuals(solve_regulator(exo, spec), exo, spec)) <= 1e-10


# -- losslessness ----------------------------------------------------------------------------

def test_losslessness_identity_random():
    rng = np.random.default_rng(12)
    for _ in range(200):
        chi = InternalModelState(rng.normal(size=4), rng.normal(size=4))
        J = rng.normal(size=(2, 2))
        xi = rng.normal(size=2)
        dV, power = losslessness_power(chi, J, xi, PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL)
        assert abs(dV - power) <= 1e-10


def test_losslessness_trivial_cases():
    chi = InternalModelState(np.ones(4), np.ones(4))
    assert losslessness_power(chi, np.eye(2), np.zeros(2), PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL) == (0.0, 0.0)
    zero = InternalModelState(np.zeros(4), np.zeros(4))
    dV, p = losslessness_power(zero, np.eye(2), np.ones(2), PAPER_TORQUE_MODEL, PAPER_FORCE_MODEL)
    assert dV == 0.0 and p == 0.0
