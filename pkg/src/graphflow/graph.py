"""Metric-graph data model and the weighted line-graph coupling matrix.

A metric graph here is a finite directed graph whose edges are
parametrized over [0, 1]; material travels from parameter 1 toward
parameter 0 at unit speed. The m x m matrix B couples edge outflows to
edge inflows: B[i, j] may be nonzero only when edge j exits at the
vertex where edge i enters (endpoint0 of j equals endpoint1 of i), and
every column of B sums to one, so vertex redistribution conserves mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ColumnNotStochastic,
    NoConvergence,
    SourceOrSink,
    SparsityViolation,
    ValidationError,
)

COLUMN_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Edge:
    """Directed edge with explicit parameter endpoints.

    endpoint0 is the vertex reached at parameter 0 (where material
    exits), endpoint1 the vertex at parameter 1 (where material enters).
    """

    endpoint0: int
    endpoint1: int


@dataclass(frozen=True)
class MetricGraph:
    n: int
    m: int
    edges: tuple[Edge, ...]
    B: np.ndarray

    def __post_init__(self):
        self.B.setflags(write=False)


def build_graph(
    edges: list[tuple[int, int]],
    weights: list[tuple[int, int, float]],
    n_vertices: int | None = None,
) -> MetricGraph:
    """Assemble and validate a MetricGraph.

    `edges` lists (endpoint0, endpoint1) vertex ids (0-based).
    `weights` lists sparse entries (i, j, w) of B, meaning: a fraction w
    of the material leaving edge j is routed into edge i. Entries are
    only legal on adjacent pairs, and each column must sum to exactly 1
    (within 1e-12).
    """
    if not edges:
        raise ValidationError("graph needs at least one edge")
    m = len(edges)
    edge_objs = tuple(Edge(int(e0), int(e1)) for e0, e1 in edges)

    referenced = {e.endpoint0 for e in edge_objs} | {e.endpoint1 for e in edge_objs}
    n = int(n_vertices) if n_vertices is not None else max(referenced) + 1
    for e in edge_objs:
        if not (0 <= e.endpoint0 < n and 0 <= e.endpoint1 < n):
            raise ValidationError(f"edge endpoints {e} outside vertex range 0..{n - 1}")

    # No sources, no sinks: every vertex must both emit and absorb flow.
    has_exit = np.zeros(n, dtype=bool)   # some edge exits into the vertex
    has_entry = np.zeros(n, dtype=bool)  # some edge draws from the vertex
    for e in edge_objs:
        has_exit[e.endpoint0] = True
        has_entry[e.endpoint1] = True
    for v in range(n):
        if not (has_exit[v] and has_entry[v]):
            raise SourceOrSink(v)

    B = np.zeros((m, m))
    for i, j, w in weights:
        i, j, w = int(i), int(j), float(w)
        if not (0 <= i < m and 0 <= j < m):
            raise ValidationError(f"weight index ({i}, {j}) outside edge range 0..{m - 1}")
        if w < 0.0:
            raise ValidationError(f"negative weight {w!r} on ({i + 1}, {j + 1})")
        if edge_objs[j].endpoint0 != edge_objs[i].endpoint1:
            raise SparsityViolation(i, j)
        B[i, j] += w

    sums = B.sum(axis=0)
    for j in range(m):
        if abs(sums[j] - 1.0) > COLUMN_SUM_TOL:
            raise ColumnNotStochastic(j, float(sums[j]))

    return MetricGraph(n=n, m=m, edges=edge_objs, B=B)


def spectral_radius_b(
    graph: MetricGraph, tol: float = 1e-12, max_iter: int = 10**5
) -> float:
    """Spectral radius of B by power iteration from the all-ones vector.

    Uses l1 norms; on a column-stochastic matrix the iteration is exact
    after one step because the l1 norm of nonnegative vectors is
    preserved.
    """
    B = graph.B
    v = np.ones(graph.m)
    estimate = None
    for _ in range(max_iter):
        w = B @ v
        nw = float(np.abs(w).sum())
        if nw == 0.0:
            return 0.0
        new_estimate = nw / float(np.abs(v).sum())
        v = w / nw
        if estimate is not None and abs(new_estimate - estimate) <= tol:
            return new_estimate
        estimate = new_estimate
    raise NoConvergence(f"power iteration did not reach tol={tol} in {max_iter} steps")


def graph_from_json(obj: dict) -> MetricGraph:
    """Parse the JSON graph block; all indices in the file are 1-based."""
    try:
        n = int(obj["vertices"])
        edges = [(int(e["e0"]) - 1, int(e["e1"]) - 1) for e in obj["edges"]]
        weights = [
            (int(w["i"]) - 1, int(w["j"]) - 1, float(w["w"])) for w in obj["weights"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"graph block malformed: {exc}") from exc
    return build_graph(edges, weights, n_vertices=n)


def graph_to_json(graph: MetricGraph) -> dict:
    weights = []
    for j in range(graph.m):
        for i in range(graph.m):
            if graph.B[i, j] != 0.0:
                weights.append({"i": i + 1, "j": j + 1, "w": float(graph.B[i, j])})
    return {
        "vertices": graph.n,
        "edges": [{"e0": e.endpoint0 + 1, "e1": e.endpoint1 + 1} for e in graph.edges],
        "weights": weights,
    }


def loop_graph() -> MetricGraph:
    """One vertex, one self-edge; the canonical test case."""
    return build_graph([(0, 0)], [(0, 0, 1.0)])


def two_cycle_graph() -> MetricGraph:
    """Two vertices joined by two opposite edges; B is the swap matrix."""
    return build_graph([(1, 0), (0, 1)], [(1, 0, 1.0), (0, 1, 1.0)])
