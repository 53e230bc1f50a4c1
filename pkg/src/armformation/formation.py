"""Formation graphs, edge errors and virtual-spring gradients.

Positions are handled as ``(N, m)`` arrays (one row per agent) and relative
positions as ``(E, m)`` arrays (one row per edge).  Stacked column vectors as
used in the control literature are just ``x.ravel()``.

Edge ``k = (tail, head)`` has relative position ``z_k = x_tail - x_head``,
which matches an incidence matrix with ``+1`` at the tail and ``-1`` at the
head, so ``z = (B kron I_m)^T x``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

DISTANCE = "distance"
DISPLACEMENT = "displacement"
STRATEGIES = (DISTANCE, DISPLACEMENT)


@dataclass(frozen=True)
class FormationGraph:
    """Undirected formation graph with an edge orientation and per-edge targets.

    Vertices are 0-based.  ``targets`` holds one float per edge for the
    distance strategy (desired length ``||z_k*||``) and one m-tuple per edge
    for the displacement strategy (desired ``z_k*``).  ``reference`` is an
    optional configuration ``x*`` realising the targets; it lets the other
    strategy be derived from the same graph.
    """

    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    strategy: str
    targets: tuple
    m: int = 2
    reference: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"invariant violated: strategy in {STRATEGIES}")
        if self.n_vertices < 2:
            raise ValueError("invariant violated: at least two vertices")
        if len(self.targets) != len(edges):
            raise ValueError("invariant violated: one target per edge")
        for k, (a, b) in enumerate(edges):
            if not (0 <= a < self.n_vertices and 0 <= b < self.n_vertices):
                raise ValueError(f"invariant violated: edge {k + 1} ({a + 1}, {b + 1}) "
                                 f"references a vertex outside 1..{self.n_vertices}")
            if a == b:
                raise ValueError(f"invariant violated: edge {k + 1} is a self-loop")
        if self.strategy == DISTANCE:
            targets = tuple(float(t) for t in self.targets)
            if not all(t > 0 and np.isfinite(t) for t in targets):
                raise ValueError("invariant violated: distance targets > 0")
            if len(edges) < 2 * self.n_vertices - 3:
                raise ValueError("invariant violated: distance strategy needs "
                                 "|E| >= 2N - 3 edges")
        else:
            targets = tuple(tuple(float(c) for c in t) for t in self.targets)
            if not all(len(t) == self.m and np.all(np.isfinite(t)) for t in targets):
                raise ValueError(f"invariant violated: displacement targets are "
                                 f"finite {self.m}-vectors")
        object.__setattr__(self, "targets", targets)
        if self.reference is not None:
            ref = tuple(tuple(float(c) for c in pt) for pt in self.reference)
            if len(ref) != self.n_vertices or any(len(pt) != self.m for pt in ref):
                raise ValueError("invariant violated: one reference point per vertex")
            object.__setattr__(self, "reference", ref)
        if not _connected(self.n_vertices, edges):
            raise ValueError("invariant violated: graph is connected")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def incidence(self) -> np.ndarray:
        B = np.zeros((self.n_vertices, self.n_edges))
        for k, (tail, head) in enumerate(self.edges):
            B[tail, k] = 1.0
            B[head, k] = -1.0
        return B

    @property
    def target_array(self) -> np.ndarray:
        return np.asarray(self.targets, dtype=float)

    def neighbors(self, i: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(set(out))

    @classmethod
    def from_reference(cls, n_vertices, edges, strategy, reference, m=2):
        """Build the targets from a reference configuration ``x*``."""
        ref = np.asarray(reference, dtype=float).reshape(n_vertices, m)
        z = np.array([ref[a] - ref[b] for a, b in edges])
        if strategy == DISTANCE:
            targets = tuple(float(v) for v in np.linalg.norm(z, axis=1))
        else:
            targets = tuple(tuple(float(c) for c in row) for row in z)
        return cls(n_vertices, tuple(edges), strategy, targets, m, reference=ref)


def _connected(n, edges) -> bool:
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    todo = deque([0])
    while todo:
        for j in adj[todo.popleft()]:
            if j not in seen:
                seen.add(j)
                todo.append(j)
    return len(seen) == n


def _positions(g: FormationGraph, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size != g.n_vertices * g.m:
        raise ValueError(f"expected {g.n_vertices * g.m} position entries, got {x.size}")
    return x.reshape(g.n_vertices, g.m)


def edge_vectors(g: FormationGraph, x) -> np.ndarray:
    """Relative positions ``z_k = x_tail - x_head`` as an ``(E, m)`` array."""
    x = _positions(g, x)
    tails = [a for a, _ in g.edges]
    heads = [b for _, b in g.edges]
    return x[tails] - x[heads]


def edge_errors(g: FormationGraph, z) -> np.ndarray:
    """Per-edge errors: shape ``(E,)`` for distance, ``(E, m)`` for displacement."""
    z = np.asarray(z, dtype=float).reshape(g.n_edges, g.m)
    if g.strategy == DISTANCE:
        return np.sum(z * z, axis=1) - g.target_array**2
    return z - g.target_array


def edge_gain_matrix(g: FormationGraph, z) -> np.ndarray:
    """Block-diagonal ``D(z)`` with blocks ``dfe/dz_k``.

    Distance: ``(m E, E)`` with m x 1 blocks ``2 z_k``.
    Displacement: ``(m E, m E)`` identity.
    """
    z = np.asarray(z, dtype=float).reshape(g.n_edges, g.m)
    E, m = g.n_edges, g.m
    if g.strategy == DISPLACEMENT:
        return np.eye(m * E)
    D = np.zeros((m * E, E))
    for k in range(E):
        D[k * m:(k + 1) * m, k] = 2.0 * z[k]
    return D


def edge_forces(g: FormationGraph, z, e) -> np.ndarray:
    """``D_k(z_k) e_k`` for every edge, as an ``(E, m)`` array."""
    z = np.asarray(z, dtype=float).reshape(g.n_edges, g.m)
    if g.strategy == DISTANCE:
        return 2.0 * z * np.asarray(e, dtype=float).reshape(g.n_edges, 1)
    return np.asarray(e, dtype=float).reshape(g.n_edges, g.m)


def agent_gradients(g: FormationGraph, z, e) -> np.ndarray:
    """Agent-wise gradient ``e_hat_i = sum_k b_ik D_k(z_k) e_k`` as ``(N, m)``."""
    f = edge_forces(g, z, e)
    out = np.zeros((g.n_vertices, g.m))
    for k, (tail, head) in enumerate(g.edges):
        out[tail] += f[k]
        out[head] -= f[k]
    return out


def potential(e) -> float:
    """Total virtual-spring energy ``0.5 * sum_k ||e_k||^2``."""
    e = np.asarray(e, dtype=float)
    return 0.5 * float(np.sum(e * e))


def formation_potential(g: FormationGraph, x) -> float:
    return potential(edge_errors(g, edge_vectors(g, x)))


def action_antisymmetry_check(g: FormationGraph, x, tol: float = 1e-12) -> bool:
    """Check ``grad_{x_tail} V_k = -grad_{x_head} V_k`` for every edge."""
    z = edge_vectors(g, x)
    e = edge_errors(g, z)
    for k, (tail, head) in enumerate(g.edges):
        ek = np.zeros_like(e)
        ek[k] = e[k]
        grads = agent_gradients(g, z, ek)
        if np.max(np.abs(grads[tail] + grads[head])) > tol:
            return False
        others = np.delete(grads, [tail, head], axis=0)
        if others.size and np.max(np.abs(others)) > tol:
            return False
    return True


# Square of side 0.4 m used in the four-arm experiment: edges read off the
# printed incidence matrix column by column (1-based: (1,2) (2,3) (3,4) (4,1) (1,3)).
SQUARE_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0), (0, 2))
SQUARE_SIDE = 0.4
SQUARE_REFERENCE = ((0.0, 0.0), (SQUARE_SIDE, 0.0), (SQUARE_SIDE, SQUARE_SIDE), (0.0, SQUARE_SIDE))


def square_graph(strategy: str = DISTANCE) -> FormationGraph:
    return FormationGraph.from_reference(4, SQUARE_EDGES, strategy, SQUARE_REFERENCE)
