"""Distributed formation control of planar two-link arms with disturbance rejection."""
from .controller import ControllerGains, PAPER_GAINS
from .disturbance import (
    DisturbanceTerm,
    Exosystem,
    InternalModelSpec,
    RegulatorError,
    exosystem_from_terms,
    internal_model_from_frequencies,
    solve_regulator,
)
from .engine import (
    AgentSpec,
    ClosedLoop,
    ConvergenceMetrics,
    Scenario,
    SimLog,
    SimulationError,
    convergence_metrics,
    rk4_step,
    simulate,
)
from .formation import DISPLACEMENT, DISTANCE, FormationGraph, square_graph
from .manipulator import TABLE_I, JointState, ManipulatorParams
from .presets import paper_scenario
from .scenario import ScenarioError, bundled_scenario, dump_scenario, parse_scenario

__version__ = "0.1.0"
__all__ = [
    "AgentSpec", "ClosedLoop", "ControllerGains", "ConvergenceMetrics", "DISPLACEMENT",
    "DISTANCE", "DisturbanceTerm", "Exosystem", "FormationGraph", "InternalModelSpec",
    "JointState", "ManipulatorParams", "PAPER_GAINS", "RegulatorError", "Scenario",
    "ScenarioError", "SimLog", "SimulationError", "TABLE_I", "bundled_scenario",
    "convergence_metrics", "dump_scenario", "exosystem_from_terms",
    "internal_model_from_frequencies", "paper_scenario", "parse_scenario", "rk4_step",
    "simulate", "solve_regulator", "square_graph",
]
