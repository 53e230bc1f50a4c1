"""Command-line front end.

    armformation run --scenario FILE [--out DIR] [--duration S] [--dt S]
                     [--strategy distance|displacement] [--plots on|off]
                     [--tail S] [--workers N]
    armformation verify [--scenario FILE]

Exit codes: 0 success, 1 scenario or argument error, 2 simulation abort,
3 failed verification check.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import formation as fm
from .disturbance import RegulatorError, is_observable, is_skew, solve_regulator
from .engine import SimulationError, convergence_metrics, simulate
from .manipulator import coriolis_matrix, inertia_matrix, jacobian, forward_kinematics
from .plots import write_plots
from .scenario import ScenarioError, bundled_scenario, parse_scenario, with_strategy

EXIT_OK, EXIT_SCENARIO, EXIT_ABORT, EXIT_CHECK = 0, 1, 2, 3
CHECK_CASES = 100
CHECK_SEED = 12345
FD_STEP = 1e-6
FD_TOL = 1e-6


def _error(msg: str) -> None:
    print(f"armformation: {msg}", file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="armformation",
                                 description="Distributed formation control of planar two-link arms.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write log, metrics and plots")
    run.add_argument("--scenario", required=True, help="scenario file")
    run.add_argument("--out", default="./out", help="output directory (default ./out)")
    run.add_argument("--duration", type=float, help="override sim.duration [s]")
    run.add_argument("--dt", type=float, help="override sim.dt [s]")
    run.add_argument("--strategy", choices=fm.STRATEGIES, help="override graph.strategy")
    run.add_argument("--plots", choices=("on", "off"), default="on")
    run.add_argument("--tail", type=float, default=5.0, help="metrics window [s] (default 5)")
    run.add_argument("--workers", type=int, default=1,
                     help="threads for per-arm evaluation (results do not depend on it)")

    ver = sub.add_parser("verify", help="check internal models, regulator equations and kinematics")
    ver.add_argument("--scenario", help="scenario file (default: bundled four-arm experiment)")
    return ap


def run_command(args) -> int:
    try:
        scenario = parse_scenario(args.scenario)
        changes = {}
        if args.duration is not None:
            changes["duration"] = args.duration
        if args.dt is not None:
            changes["dt"] = args.dt
        if changes:
            scenario = scenario.replace(**changes)
        if args.strategy is not None:
            scenario = with_strategy(scenario, args.strategy)
        if not args.tail > 0:
            raise ValueError("--tail must be positive")
        if args.workers < 1:
            raise ValueError("--workers must be at least 1")
    except (ScenarioError, ValueError) as exc:
        _error(str(exc))
        return EXIT_SCENARIO

    try:
        log_ = simulate(scenario, workers=args.workers)
    except SimulationError as exc:
        _error(f"simulation aborted at t={exc.t:.6g} s: {exc.reason}")
        return EXIT_ABORT

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_.write_csv(out / "log.csv")
    metrics = convergence_metrics(log_, tail=args.tail)
    (out / "metrics.txt").write_text(metrics.as_text())
    if args.plots == "on":
        write_plots(log_, out)
    print(metrics.as_text(), end="")
    return EXIT_OK


# -- verification ----------------------------------------------------------

def _p2_residual(params, rng, cases) -> float:
    """Max ``|N + N^T|`` with ``N = dH/dt - 2C`` and ``dH/dt`` by central differences."""
    worst = 0.0
    for _ in range(cases):
        q = rng.uniform(-np.pi, np.pi, 2)
        qd = rng.uniform(-2.0, 2.0, 2)
        Hdot = (inertia_matrix(params, q + FD_STEP * qd)
                - inertia_matrix(params, q - FD_STEP * qd)) / (2 * FD_STEP)
        N = Hdot - 2.0 * coriolis_matrix(params, q, qd)
        worst = max(worst, float(np.max(np.abs(N + N.T))))
    return worst


def _jacobian_residual(params, rng, cases) -> float:
    worst = 0.0
    for _ in range(cases):
        q = rng.uniform(-np.pi, np.pi, 2)
        fd = np.column_stack([
            (forward_kinematics(params, q + FD_STEP * ej) - forward_kinematics(params, q - FD_STEP * ej))
            / (2 * FD_STEP) for ej in np.eye(2)])
        worst = max(worst, float(np.max(np.abs(fd - jacobian(params, q)))))
    return worst


def verification_checks(scenario) -> list[tuple[str, bool, str]]:
    """Every check as ``(name, passed, detail)``."""
    rows = []
    rng = np.random.default_rng(CHECK_SEED)
    for i, a in enumerate(scenario.agents, start=1):
        for kind, sym, model, exo, terms in (
                ("torque", "A_M", a.torque_model, a.exo_torque, a.torque_terms),
                ("force", "A_E", a.force_model, a.exo_force, a.force_terms)):
            tag = f"agent {i} {kind}"
            if model is not None:
                skew = is_skew(model.A)
                rows.append((f"{tag}: {sym} skew-symmetric", skew,
                             "" if skew else f"{sym} is not skew-symmetric"))
                obs = is_observable(model.A, model.Gamma)
                rows.append((f"{tag}: ({sym}, Gamma) observable", obs,
                             "" if obs else f"({sym}, Gamma) is not observable"))
            if not terms:
                continue
            if model is None:
                rows.append((f"{tag}: regulator equations", False,
                             "frequency not modeled (no internal model)"))
                continue
            try:
                solve_regulator(exo, model)
                rows.append((f"{tag}: regulator equations", True, ""))
            except (RegulatorError, ValueError) as exc:
                rows.append((f"{tag}: regulator equations", False, str(exc)))
        p2 = _p2_residual(a.params, rng, CHECK_CASES)
        rows.append((f"agent {i}: dH/dt - 2C skew-symmetric", p2 <= FD_TOL, f"residual {p2:.2e}"))
        jr = _jacobian_residual(a.params, rng, CHECK_CASES)
        rows.append((f"agent {i}: Jacobian vs finite differences", jr <= FD_TOL, f"residual {jr:.2e}"))
    return rows


def verify_command(args) -> int:
    path = args.scenario or bundled_scenario()
    try:
        scenario = parse_scenario(path, strict=False)
    except ScenarioError as exc:
        _error(str(exc))
        return EXIT_SCENARIO
    rows = verification_checks(scenario)
    width = max(len(name) for name, _, _ in rows)
    for name, ok, detail in rows:
        line = f"{'PASS' if ok else 'FAIL'}  {name:<{width}}"
        print(f"{line}  {detail}".rstrip())
    failed = [r for r in rows if not r[1]]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    if failed:
        for name, _, detail in failed:
            _error(f"{name}: {detail}")
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="armformation: %(message)s")
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return run_command(args)
    return verify_command(args)


if __name__ == "__main__":
    sys.exit(main())
