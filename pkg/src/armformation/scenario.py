"""Reading and writing ``*.scenario`` files (TOML).

Layout::

    [sim]            duration, dt, log_stride
    [gains]          kp, kd
    [graph]          strategy, edges = [{tail, head, target}, ...], reference (optional)
    [agents.params]  shared link constants m1 m2 Ic1 Ic2 l1 l2 lc1 lc2 [gravity]
    [[agents.arm]]   base, q0, [qdot0], [params], [internal_model]
    [[disturbances.torque]] / [[disturbances.force]]
                     channel, amplitude, [frequency], [phase], [agents]
    [internal_model] [enabled], [torque], [force]

Vertices, channels and agents are 1-based in files.  Any number may be
written as a string expression over ``pi``, ``sqrt``, ``+ - * / **`` (for
example ``"pi/3"``).  Unknown keys are rejected.
"""
from __future__ import annotations

import ast
import math
import operator
import re
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import formation as fm
from .controller import ControllerGains
from .disturbance import (
    DisturbanceTerm,
    InternalModelSpec,
    check_internal_model,
    internal_model_from_frequencies,
)
from .engine import AgentSpec, Scenario
from .manipulator import ManipulatorParams

PARAM_KEYS = ("m1", "m2", "Ic1", "Ic2", "l1", "l2", "lc1", "lc2")
BUNDLED = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    pass


def bundled_scenario(name: str = "paper_sec5.scenario") -> Path:
    return BUNDLED / name


# -- expression evaluation -------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi}
_FUNCS = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos}


def _eval_node(node):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval_node(node.operand))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
        return _FUNCS[node.func.id](_eval_node(node.args[0]))
    raise ValueError("unsupported expression")


class _Reader:
    """Walks the parsed document, keeping key paths for error messages."""

    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source

    def fail(self, message: str, path: str, key: str | None = None):
        line = self._line_of(key or path.rsplit(".", 1)[-1].split("[")[0])
        where = f"{self.source}:{line}: " if line else f"{self.source}: "
        raise ScenarioError(f"{where}{message} ({path})")

    def _line_of(self, key: str):
        pat = re.compile(rf'(^|[\s{{,\[.])"?{re.escape(key)}"?\s*(=|\])')
        for n, line in enumerate(self.lines, 1):
            if pat.search(line.split("#", 1)[0]):
                return n
        return None

    def table(self, obj, path, required=(), optional=()):
        if not isinstance(obj, dict):
            self.fail("expected a table", path)
        for key in obj:
            if key not in required and key not in optional:
                self.fail(f"unknown key '{key}'", f"{path}.{key}" if path else key, key)
        for key in required:
            if key not in obj:
                self.fail(f"missing key '{key}'", f"{path}.{key}" if path else key,
                          path.rsplit(".", 1)[-1] if path else key)
        return obj

    def number(self, value, path) -> float:
        if isinstance(value, bool):
            self.fail("expected a number", path)
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(_eval_node(ast.parse(value, mode="eval")))
            except (SyntaxError, ValueError, ZeroDivisionError, OverflowError):
                self.fail(f"cannot evaluate expression '{value}'", path)
        self.fail("expected a number", path)

    def integer(self, value, path) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail("expected an integer", path)
        return value

    def vector(self, value, path, n=None) -> tuple[float, ...]:
        if not isinstance(value, list):
            self.fail("expected a list of numbers", path)
        if n is not None and len(value) != n:
            self.fail(f"expected {n} numbers", path)
        return tuple(self.number(v, f"{path}[{i}]") for i, v in enumerate(value))

    def matrix(self, value, path) -> np.ndarray:
        if not isinstance(value, list) or not value:
            self.fail("expected a matrix (list of rows)", path)
        rows = [self.vector(r, f"{path}[{i}]") for i, r in enumerate(value)]
        if len({len(r) for r in rows}) != 1:
            self.fail("matrix rows have different lengths", path)
        return np.array(rows, dtype=float)

    def invariant(self, fn, path, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValueError as exc:
            self.fail(str(exc), path)


def parse_scenario(path, strict: bool = True) -> Scenario:
    """Parse and validate a scenario file.

    With ``strict=False`` internal models are accepted even if they are not
    skew-symmetric or not observable (used by the verifier to report them).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read file ({exc.strerror})") from exc
    return parse_scenario_text(text, str(path), strict)


def parse_scenario_text(text: str, source: str = "<scenario>", strict: bool = True) -> Scenario:
    r = _Reader(text, source)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    r.table(doc, "", required=("sim", "gains", "graph", "agents"),
            optional=("disturbances", "internal_model"))

    sim = r.table(doc["sim"], "sim", required=("duration", "dt"), optional=("log_stride",))
    duration = r.number(sim["duration"], "sim.duration")
    dt = r.number(sim["dt"], "sim.dt")
    stride = r.integer(sim.get("log_stride", 10), "sim.log_stride")

    gains_t = r.table(doc["gains"], "gains", required=("kp", "kd"))
    gains = r.invariant(ControllerGains, "gains", r.number(gains_t["kp"], "gains.kp"),
                        r.number(gains_t["kd"], "gains.kd"))

    agents_t = r.table(doc["agents"], "agents", required=("arm",), optional=("params",))
    shared = r.table(agents_t.get("params", {}), "agents.params", optional=PARAM_KEYS + ("gravity",))
    arms = agents_t["arm"]
    if not isinstance(arms, list) or not arms:
        r.fail("expected at least one [[agents.arm]] entry", "agents.arm")
    n = len(arms)

    graph = _parse_graph(r, doc["graph"], n)
    torque_terms, force_terms = _parse_disturbances(r, doc.get("disturbances", {}), n)
    im = r.table(doc.get("internal_model", {}), "internal_model",
                 optional=("enabled", "torque", "force"))
    enabled = im.get("enabled", True)
    if not isinstance(enabled, bool):
        r.fail("expected true or false", "internal_model.enabled")

    agents = []
    for i, arm in enumerate(arms):
        p = f"agents.arm[{i + 1}]"
        r.table(arm, p, required=("base", "q0"),
                optional=("qdot0", "params", "internal_model"))
        own = r.table(arm.get("params", {}), f"{p}.params", optional=PARAM_KEYS + ("gravity",))
        merged = {**shared, **own}
        for key in PARAM_KEYS:
            if key not in merged:
                r.fail(f"missing key '{key}'", f"{p}.params.{key}", "params")
        values = {k: r.number(v, f"{p}.params.{k}") for k, v in merged.items()}
        params = r.invariant(ManipulatorParams, f"{p}.params",
                             base=r.vector(arm["base"], f"{p}.base", 2), **values)
        q0 = r.vector(arm["q0"], f"{p}.q0", 2)
        qdot0 = r.vector(arm.get("qdot0", [0.0, 0.0]), f"{p}.qdot0", 2)
        own_im = r.table(arm.get("internal_model", {}), f"{p}.internal_model",
                         optional=("torque", "force"))
        models = {}
        for kind, terms in (("torque", torque_terms[i]), ("force", force_terms[i])):
            source = own_im.get(kind, im.get(kind))
            where = f"{p}.internal_model.{kind}" if kind in own_im else f"internal_model.{kind}"
            models[kind] = _parse_model(r, source, where, terms, enabled, strict)
        agents.append(r.invariant(AgentSpec, p, params=params, q0=q0, qdot0=qdot0,
                                  torque_terms=torque_terms[i], force_terms=force_terms[i],
                                  torque_model=models["torque"], force_model=models["force"]))

    return r.invariant(Scenario, "sim", tuple(agents), graph, gains, duration, dt, stride)


def _parse_graph(r: _Reader, g, n) -> fm.FormationGraph:
    r.table(g, "graph", required=("strategy", "edges"), optional=("reference",))
    strategy = g["strategy"]
    if strategy not in fm.STRATEGIES:
        r.fail(f"strategy must be one of {', '.join(fm.STRATEGIES)}", "graph.strategy")
    if not isinstance(g["edges"], list) or not g["edges"]:
        r.fail("expected a list of edges", "graph.edges")
    edges, targets = [], []
    for k, edge in enumerate(g["edges"]):
        p = f"graph.edges[{k + 1}]"
        r.table(edge, p, required=("tail", "head"), optional=("target",))
        tail = r.integer(edge["tail"], f"{p}.tail")
        head = r.integer(edge["head"], f"{p}.head")
        if not (1 <= tail <= n and 1 <= head <= n):
            r.fail(f"invariant violated: edge {k + 1} ({tail}, {head}) references a "
                   f"vertex outside 1..{n}", p, "edges")
        edges.append((tail - 1, head - 1))
        if "target" in edge:
            if strategy == fm.DISTANCE:
                targets.append(r.number(edge["target"], f"{p}.target"))
            else:
                targets.append(r.vector(edge["target"], f"{p}.target", 2))
        else:
            targets.append(None)
    reference = None
    if "reference" in g:
        ref = g["reference"]
        if not isinstance(ref, list) or len(ref) != n:
            r.fail(f"expected {n} reference points", "graph.reference")
        reference = [r.vector(pt, f"graph.reference[{i + 1}]", 2) for i, pt in enumerate(ref)]
    if any(t is None for t in targets):
        if reference is None:
            r.fail("edges without 'target' need graph.reference", "graph.edges", "edges")
        derived = r.invariant(fm.FormationGraph.from_reference, "graph", n, edges, strategy,
                              reference).targets
        targets = [d if t is None else t for t, d in zip(targets, derived)]
    graph = r.invariant(fm.FormationGraph, "graph", n, tuple(edges), strategy, tuple(targets),
                        reference=reference)
    if reference is not None:
        derived = fm.FormationGraph.from_reference(n, edges, strategy, reference)
        if not np.allclose(derived.target_array, graph.target_array, rtol=0, atol=1e-9):
            r.fail("invariant violated: edge targets agree with graph.reference",
                   "graph.reference")
    return graph


def _parse_disturbances(r: _Reader, d, n):
    r.table(d, "disturbances", optional=("torque", "force"))
    out = {}
    for kind in ("torque", "force"):
        per_agent = [[] for _ in range(n)]
        items = d.get(kind, [])
        if not isinstance(items, list):
            r.fail("expected an array of tables", f"disturbances.{kind}")
        for k, item in enumerate(items):
            p = f"disturbances.{kind}[{k + 1}]"
            r.table(item, p, required=("channel", "amplitude"),
                    optional=("frequency", "phase", "agents"))
            channel = r.integer(item["channel"], f"{p}.channel")
            if channel not in (1, 2):
                r.fail("invariant violated: channel in {1, 2}", f"{p}.channel")
            term = r.invariant(DisturbanceTerm, p, channel - 1,
                               r.number(item["amplitude"], f"{p}.amplitude"),
                               r.number(item.get("frequency", 0.0), f"{p}.frequency"),
                               r.number(item.get("phase", 0.0), f"{p}.phase"))
            targets = item.get("agents", list(range(1, n + 1)))
            if not isinstance(targets, list):
                r.fail("expected a list of agent numbers", f"{p}.agents")
            for a in targets:
                a = r.integer(a, f"{p}.agents")
                if not 1 <= a <= n:
                    r.fail(f"invariant violated: agent {a} outside 1..{n}", f"{p}.agents")
                per_agent[a - 1].append(term)
        out[kind] = [tuple(t) for t in per_agent]
    return out["torque"], out["force"]


def _parse_model(r: _Reader, source, path, terms, enabled, strict):
    """Internal model for one disturbance kind of one agent."""
    if not enabled:
        return None
    if source is None:
        if not terms:
            return None
        return internal_model_from_frequencies([t.frequency for t in terms])
    r.table(source, path, optional=("enabled", "frequencies", "A", "Gamma"))
    if source.get("enabled", True) is False:
        return None
    if "frequencies" in source:
        if "A" in source or "Gamma" in source:
            r.fail("give either 'frequencies' or 'A' and 'Gamma'", path)
        freqs = r.vector(source["frequencies"], f"{path}.frequencies")
        if any(w < 0 for w in freqs):
            r.fail("invariant violated: frequencies >= 0", f"{path}.frequencies")
        return internal_model_from_frequencies(freqs)
    for key in ("A", "Gamma"):
        if key not in source:
            r.fail(f"missing key '{key}'", f"{path}.{key}", path.rsplit(".", 1)[-1])
    spec = r.invariant(InternalModelSpec, path, r.matrix(source["A"], f"{path}.A"),
                       r.matrix(source["Gamma"], f"{path}.Gamma"))
    if spec.Gamma.shape[0] != 2:
        r.fail("invariant violated: Gamma has 2 rows (one per channel)", f"{path}.Gamma")
    if strict:
        problems = check_internal_model(spec, f"{path}.A")
        if problems:
            r.fail(f"invariant violated: {problems[0]}", f"{path}.A", "A")
    return spec


# -- writing -----------------------------------------------------------------

def _matrix(M) -> list:
    return [[float(v) for v in row] for row in np.asarray(M)]


def scenario_to_dict(s: Scenario) -> dict:
    g = s.graph
    if g.strategy == fm.DISTANCE:
        edges = [{"tail": a + 1, "head": b + 1, "target": float(t)}
                 for (a, b), t in zip(g.edges, g.targets)]
    else:
        edges = [{"tail": a + 1, "head": b + 1, "target": [float(c) for c in t]}
                 for (a, b), t in zip(g.edges, g.targets)]
    doc = {
        "sim": {"duration": float(s.duration), "dt": float(s.dt), "log_stride": int(s.log_stride)},
        "gains": {"kp": float(s.gains.kp), "kd": float(s.gains.kd)},
        "graph": {"strategy": g.strategy, "edges": edges},
        "agents": {"arm": []},
        "disturbances": {"torque": [], "force": []},
        "internal_model": {"enabled": True},
    }
    if g.reference is not None:
        doc["graph"]["reference"] = [list(pt) for pt in g.reference]
    for i, a in enumerate(s.agents):
        p = a.params
        params = {k: float(getattr(p, k)) for k in PARAM_KEYS}
        if p.gravity:
            params["gravity"] = float(p.gravity)
        arm = {"base": list(p.base), "q0": list(a.q0), "qdot0": list(a.qdot0),
               "params": params, "internal_model": {}}
        for kind, model in (("torque", a.torque_model), ("force", a.force_model)):
            arm["internal_model"][kind] = ({"enabled": False} if model is None else
                                           {"A": _matrix(model.A), "Gamma": _matrix(model.Gamma)})
        doc["agents"]["arm"].append(arm)
        for kind, terms in (("torque", a.torque_terms), ("force", a.force_terms)):
            for t in terms:
                doc["disturbances"][kind].append(
                    {"agents": [i + 1], "channel": t.channel + 1, "amplitude": float(t.amplitude),
                     "frequency": float(t.frequency), "phase": float(t.phase)})
    for kind in ("torque", "force"):
        if not doc["disturbances"][kind]:
            del doc["disturbances"][kind]
    return doc


def dump_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))


def write_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(s))


def with_strategy(s: Scenario, strategy: str) -> Scenario:
    """Switch the formation strategy, deriving targets where possible."""
    g = s.graph
    if strategy == g.strategy:
        return s
    reference = g.reference
    if reference is not None:
        graph = fm.FormationGraph.from_reference(g.n_vertices, g.edges, strategy, reference)
    elif strategy == fm.DISTANCE:
        graph = fm.FormationGraph(g.n_vertices, g.edges, strategy,
                                  tuple(float(np.hypot(*t)) for t in g.targets))
    else:
        raise ScenarioError("switching to the displacement strategy needs graph.reference "
                            "in the scenario file")
    return s.replace(graph=graph)
