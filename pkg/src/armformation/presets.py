"""The four-arm square experiment as a ready-made :class:`Scenario`."""
from __future__ import annotations

import math

from . import formation as fm
from .controller import PAPER_GAINS
from .disturbance import (
    PAPER_FORCE_MODEL,
    PAPER_FORCE_TERMS,
    PAPER_TORQUE_MODEL,
    PAPER_TORQUE_TERMS,
)
from .engine import AgentSpec, Scenario
from .manipulator import TABLE_I

BASES = ((0.0, 0.0), (5.0, 0.0), (5.0, 3.0), (0.0, 3.0))
INITIAL_Q = ((0.0, math.pi / 3), (2 * math.pi / 3, math.pi / 3),
             (math.pi, math.pi / 3), (0.0, -math.pi / 3))


def paper_scenario(strategy: str = fm.DISTANCE, internal_models: bool = True,
                   disturbances: bool = True, duration: float = 30.0,
                   dt: float = 1e-3, log_stride: int = 10) -> Scenario:
    agents = []
    for base, q0 in zip(BASES, INITIAL_Q):
        agents.append(AgentSpec(
            params=TABLE_I.with_base(base),
            q0=q0,
            torque_terms=PAPER_TORQUE_TERMS if disturbances else (),
            force_terms=PAPER_FORCE_TERMS if disturbances else (),
            torque_model=PAPER_TORQUE_MODEL if internal_models else None,
            force_model=PAPER_FORCE_MODEL if internal_models else None,
        ))
    return Scenario(tuple(agents), fm.square_graph(strategy), PAPER_GAINS,
                    duration, dt, log_stride)
