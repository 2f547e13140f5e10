"""Problem graphs: nodes carrying objectives, weighted undirected edges.

Topology is stored as flat arrays so the solver can sweep all edges with
vectorized numpy operations. Per-solve mutable state (node iterates, edge
copies and scaled duals) lives in :class:`ADMMState`, not on the graph.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .objectives import NodeObjective, ZeroObjective


class GraphError(ValueError):
    """Invalid graph construction input."""


class DuplicateEdgeError(GraphError):
    pass


class GraphParseError(GraphError):
    """Malformed edge-list text; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class NodeRecord(NamedTuple):
    id: int
    objective: NodeObjective
    x: np.ndarray


class EdgeRecord(NamedTuple):
    index: int
    j: int
    k: int
    weight: float


@dataclass(frozen=True, eq=False)
class ProblemGraph:
    """Immutable undirected weighted graph with one objective per node.

    Attributes
    ----------
    p : int
        Dimension of every node variable.
    edges : ndarray of shape (n, 2)
        Canonical endpoints with ``j < k``, sorted lexicographically.
    weights : ndarray of shape (n,)
        Non-negative finite edge weights.
    objectives : tuple of NodeObjective
        One objective per node, indexed ``0..m-1``.
    """

    p: int
    edges: np.ndarray
    weights: np.ndarray
    objectives: tuple
    _incidence: tuple = field(default=None, repr=False)
    _groups: list = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.objectives)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.m)

    def incidence(self):
        """Sparse (m, n) matrices mapping edge halves onto endpoint nodes."""
        if self._incidence is None:
            cols = np.arange(self.n)
            ones = np.ones(self.n)
            bj = sp.csr_matrix((ones, (self.edges[:, 0], cols)), shape=(self.m, self.n))
            bk = sp.csr_matrix((ones, (self.edges[:, 1], cols)), shape=(self.m, self.n))
            object.__setattr__(self, "_incidence", (bj, bk))
        return self._incidence

    def groups(self):
        """Nodes bucketed by objective batch key: list of (class, indices, objectives)."""
        if self._groups is None:
            buckets = {}
            for i, obj in enumerate(self.objectives):
                buckets.setdefault(obj.batch_key(), []).append(i)
            out = []
            for idx in buckets.values():
                idx = np.asarray(idx)
                objs = [self.objectives[i] for i in idx]
                out.append((type(objs[0]), idx, objs))
            object.__setattr__(self, "_groups", out)
        return self._groups

    def edge(self, e: int) -> EdgeRecord:
        j, k = self.edges[e]
        return EdgeRecord(e, int(j), int(k), float(self.weights[e]))

    def with_objectives(self, objectives: Sequence[NodeObjective]) -> "ProblemGraph":
        """Same topology, different node objectives."""
        objectives = tuple(objectives)
        if len(objectives) != self.m:
            raise GraphError(f"expected {self.m} objectives, got {len(objectives)}")
        return ProblemGraph(self.p, self.edges, self.weights, objectives, self._incidence)

    def with_weights(self, weights) -> "ProblemGraph":
        weights = np.asarray(weights, dtype=float)
        if weights.shape != self.weights.shape:
            raise GraphError("weight vector shape mismatch")
        _check_weights(weights)
        return ProblemGraph(self.p, self.edges, weights, self.objectives, self._incidence)


@dataclass
class ADMMState:
    """Iterates of one solve: node values plus the two halves of every edge.

    ``z[:, 0]``/``u[:, 0]`` belong to the lower endpoint ``j`` (z_jk, u_jk);
    ``z[:, 1]``/``u[:, 1]`` to the upper endpoint ``k`` (z_kj, u_kj).
    """

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray

    @classmethod
    def zeros(cls, g: ProblemGraph) -> "ADMMState":
        return cls(
            x=np.zeros((g.m, g.p)),
            z=np.zeros((g.n, 2, g.p)),
            u=np.zeros((g.n, 2, g.p)),
        )

    def copy(self) -> "ADMMState":
        return ADMMState(self.x.copy(), self.z.copy(), self.u.copy())

    def check(self, g: ProblemGraph):
        if self.x.shape != (g.m, g.p) or self.z.shape != (g.n, 2, g.p) or self.u.shape != self.z.shape:
            raise GraphError("state shape does not match graph")


def _check_weights(weights):
    if not np.all(np.isfinite(weights)):
        raise GraphError("edge weights must be finite")
    if np.any(weights < 0):
        raise GraphError("edge weights must be non-negative")


def build_graph(node_count, p, edges, objectives=None) -> ProblemGraph:
    """Validate and canonicalize an edge list into a :class:`ProblemGraph`.

    Parameters
    ----------
    node_count : int
        Number of nodes ``m >= 1``.
    p : int
        Variable dimension shared by all nodes.
    edges : iterable of (j, k, w)
        Undirected edges; each unordered pair may appear once.
    objectives : sequence of NodeObjective, optional
        Defaults to :class:`ZeroObjective` everywhere.
    """
    if int(node_count) != node_count or node_count < 1:
        raise GraphError("node_count must be a positive integer")
    if int(p) != p or p < 1:
        raise GraphError("p must be a positive integer")
    node_count, p = int(node_count), int(p)

    edges = list(edges)
    if edges:
        arr = np.asarray([(e[0], e[1]) for e in edges])
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.mod(arr, 1) == 0):
                raise GraphError("edge endpoints must be integers")
            arr = arr.astype(np.int64)
        w = np.asarray([e[2] for e in edges], dtype=float)
    else:
        arr = np.zeros((0, 2), dtype=np.int64)
        w = np.zeros(0)
    if arr.size and (arr.min() < 0 or arr.max() >= node_count):
        raise GraphError("edge endpoint out of range")
    if np.any(arr[:, 0] == arr[:, 1]):
        bad = int(np.flatnonzero(arr[:, 0] == arr[:, 1])[0])
        raise GraphError(f"self-loop at node {arr[bad, 0]}")
    _check_weights(w)

    canon = np.sort(arr, axis=1).astype(np.int64)
    order = np.lexsort((canon[:, 1], canon[:, 0]))
    canon, w = canon[order], w[order]
    if len(canon) > 1:
        dup = np.all(canon[1:] == canon[:-1], axis=1)
        if dup.any():
            j, k = canon[1:][dup][0]
            raise DuplicateEdgeError(f"duplicate edge ({j}, {k})")

    if objectives is None:
        objectives = (ZeroObjective(p),) * node_count
    objectives = tuple(objectives)
    if len(objectives) != node_count:
        raise GraphError(f"expected {node_count} objectives, got {len(objectives)}")
    for i, obj in enumerate(objectives):
        if obj.dim != p:
            raise GraphError(f"objective at node {i} has dimension {obj.dim}, expected {p}")
    canon.setflags(write=False)
    w.setflags(write=False)
    return ProblemGraph(p, canon, w, objectives)


def neighbors(g: ProblemGraph, i: int):
    """Incident edges of node ``i`` as ``(neighbor, weight, edge_index)``,
    ascending by neighbor index."""
    if not 0 <= i < g.m:
        raise GraphError(f"node {i} out of range")
    lo = np.flatnonzero(g.edges[:, 0] == i)
    hi = np.flatnonzero(g.edges[:, 1] == i)
    out = [(int(g.edges[e, 1]), float(g.weights[e]), int(e)) for e in lo]
    out += [(int(g.edges[e, 0]), float(g.weights[e]), int(e)) for e in hi]
    out.sort()
    return out


def nodes(g: ProblemGraph, state: ADMMState | None = None):
    x = state.x if state is not None else np.zeros((g.m, g.p))
    return [NodeRecord(i, g.objectives[i], x[i]) for i in range(g.m)]


# -- edge-list text format --------------------------------------------------

def parse_edge_list(text):
    """Parse ``NODES m DIM p`` header plus ``j<TAB>k<TAB>w`` lines.

    Returns ``(m, p, edges)``; raises :class:`GraphParseError` with the
    offending line number.
    """
    if hasattr(text, "read"):
        text = text.read()
    header = None
    edges = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 4 or parts[0] != "NODES" or parts[2] != "DIM":
                raise GraphParseError("expected header 'NODES m DIM p'", lineno)
            try:
                header = (int(parts[1]), int(parts[3]))
            except ValueError:
                raise GraphParseError("non-integer node count or dimension", lineno) from None
            continue
        if len(parts) != 3:
            raise GraphParseError(f"expected 3 fields, got {len(parts)}", lineno)
        try:
            j, k, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise GraphParseError(f"could not parse edge {line!r}", lineno) from None
        edges.append((j, k, w))
    if header is None:
        raise GraphParseError("missing 'NODES m DIM p' header")
    return header[0], header[1], edges


def read_edge_list(path, objectives=None) -> ProblemGraph:
    with open(path) as fh:
        m, p, edges = parse_edge_list(fh)
    return build_graph(m, p, edges, objectives)


def format_edge_list(g: ProblemGraph) -> str:
    lines = [f"NODES {g.m} DIM {g.p}"]
    for (j, k), w in zip(g.edges, g.weights):
        lines.append(f"{j}\t{k}\t{float(w)!r}")
    return "\n".join(lines) + "\n"


def write_edge_list(g: ProblemGraph, path):
    with open(path, "w") as fh:
        fh.write(format_edge_list(g))
