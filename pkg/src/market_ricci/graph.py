"""Weighted undirected graphs, shortest paths and component bookkeeping.

Graphs are small (a few hundred nodes) and start out complete, so they are
stored as a dense symmetric weight matrix where ``0`` marks a missing edge.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components as _cc
from scipy.sparse.csgraph import dijkstra

from .errors import DisconnectedGraphError, FormatError, GraphError

Node = Hashable
Edge = tuple  # (u, v) with u before v in node order


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Node-labelled undirected graph with strictly positive edge weights."""

    nodes: tuple
    weights: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        w = np.asarray(self.weights, dtype=float)
        n = len(nodes)
        if len(set(nodes)) != n:
            raise GraphError("duplicate node labels")
        if w.shape != (n, n):
            raise GraphError(f"weight matrix shape {w.shape} does not match {n} nodes")
        if not np.all(np.isfinite(w)):
            raise GraphError("edge weights must be finite")
        if np.any(w < 0):
            raise GraphError("edge weights must be positive")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed")
        if not np.array_equal(w, w.T):
            raise GraphError("weight matrix must be symmetric")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(nodes)})

    # construction -----------------------------------------------------

    @classmethod
    def from_edges(cls, nodes: Iterable[Node], edges: Iterable[tuple]) -> "WeightedGraph":
        """Build from ``(u, v, w)`` triples; ``w`` must be > 0."""
        nodes = tuple(nodes)
        idx = {u: i for i, u in enumerate(nodes)}
        w = np.zeros((len(nodes), len(nodes)))
        for u, v, wt in edges:
            if u == v:
                raise GraphError(f"self-loop on {u!r}")
            if not wt > 0:
                raise GraphError(f"edge ({u!r}, {v!r}) has non-positive weight {wt}")
            try:
                i, j = idx[u], idx[v]
            except KeyError as exc:
                raise GraphError(f"edge references unknown node {exc.args[0]!r}") from None
            w[i, j] = w[j, i] = float(wt)
        return cls(nodes, w)

    @classmethod
    def complete(cls, nodes: Sequence[Node], weights: np.ndarray) -> "WeightedGraph":
        """Complete graph; every off-diagonal entry of ``weights`` must be > 0."""
        w = np.array(weights, dtype=float)
        off = ~np.eye(len(nodes), dtype=bool)
        if np.any(w[off] <= 0):
            raise GraphError("complete graph needs strictly positive off-diagonal weights")
        np.fill_diagonal(w, 0.0)
        return cls(tuple(nodes), w)

    def with_weights(self, weights: np.ndarray) -> "WeightedGraph":
        """Same nodes, new weight matrix (edge set may only shrink)."""
        return WeightedGraph(self.nodes, weights)

    # queries ----------------------------------------------------------

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return node in self._index

    def index(self, node: Node) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise GraphError(f"unknown node {node!r}") from None

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights > 0

    def edge_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major ``(i, j)`` index arrays of edges with ``i < j``."""
        i, j = np.nonzero(np.triu(self.weights, 1))
        return i, j

    def edges(self) -> list[Edge]:
        i, j = self.edge_indices()
        return [(self.nodes[a], self.nodes[b]) for a, b in zip(i, j)]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    def degree(self, node: Node) -> int:
        return int(np.count_nonzero(self.weights[self.index(node)]))

    def degrees(self) -> np.ndarray:
        return np.count_nonzero(self.weights, axis=1)

    def neighbors(self, node: Node) -> list[Node]:
        return [self.nodes[j] for j in np.nonzero(self.weights[self.index(node)])[0]]

    def has_edge(self, u: Node, v: Node) -> bool:
        return u in self and v in self and self.weights[self.index(u), self.index(v)] > 0

    def weight(self, u: Node, v: Node) -> float:
        w = self.weights[self.index(u), self.index(v)]
        if w <= 0:
            raise GraphError(f"no edge ({u!r}, {v!r})")
        return float(w)

    def canonical(self, u: Node, v: Node) -> Edge:
        """Orient an edge so that its endpoints follow node order."""
        return (u, v) if self.index(u) < self.index(v) else (v, u)

    # serialization ----------------------------------------------------

    def to_dict(self, curvature: dict | None = None) -> dict:
        """JSON edge list ``{nodes, edges: [{i, j, w[, kappa]}]}``.

        ``curvature`` maps canonical edges to values and is attached per edge.
        """
        out = []
        for (a, b) in zip(*self.edge_indices()):
            u, v = self.nodes[a], self.nodes[b]
            rec = {"i": u, "j": v, "w": float(self.weights[a, b])}
            if curvature is not None:
                rec["kappa"] = float(curvature[(u, v)])
            out.append(rec)
        return {"nodes": list(self.nodes), "edges": out}

    @classmethod
    def from_dict(cls, data: dict) -> "WeightedGraph":
        try:
            nodes = data["nodes"]
            edges = [(e["i"], e["j"], e["w"]) for e in data["edges"]]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"graph JSON is missing field {exc}") from None
        return cls.from_edges(nodes, edges)

    def to_json(self, curvature: dict | None = None) -> str:
        return json.dumps(self.to_dict(curvature), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "WeightedGraph":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid graph JSON: {exc.msg}", row=exc.lineno) from None
        return cls.from_dict(data)

    def to_csv(self) -> str:
        """Edge-list CSV with header ``i,j,w``."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["i", "j", "w"])
        for (a, b) in zip(*self.edge_indices()):
            wr.writerow([self.nodes[a], self.nodes[b], repr(float(self.weights[a, b]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "WeightedGraph":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0][:3]] != ["i", "j", "w"]:
            raise FormatError("edge CSV must start with header i,j,w", row=1)
        nodes: dict = {}
        edges = []
        for r, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) < 3:
                raise FormatError("expected 3 fields", row=r)
            u, v = row[0], row[1]
            try:
                w = float(row[2])
            except ValueError:
                raise FormatError(f"bad weight {row[2]!r}", row=r, column="w") from None
            nodes.setdefault(u, None)
            nodes.setdefault(v, None)
            edges.append((u, v, w))
        return cls.from_edges(list(nodes), edges)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Dense shortest-path distances indexed by node label."""

    nodes: tuple
    d: np.ndarray
    _idx: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "d", _freeze(self.d))
        object.__setattr__(self, "_idx", {u: i for i, u in enumerate(self.nodes)})

    def __getitem__(self, pair) -> float:
        u, v = pair
        return float(self.d[self._idx[u], self._idx[v]])


def connected_components(g: WeightedGraph) -> list[frozenset]:
    """Node sets ordered by decreasing size, ties by smallest node (node order)."""
    if len(g) == 0:
        return []
    _, labels = _cc(g.adjacency, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    ordered = sorted(groups.values(), key=lambda ix: (-len(ix), min(ix)))
    return [frozenset(g.nodes[i] for i in ix) for ix in ordered]


def all_pairs_shortest(g: WeightedGraph) -> DistanceMatrix:
    """Exact shortest-path distances (Dijkstra from every source).

    Raises
    ------
    DisconnectedGraphError
        If ``g`` has more than one component.
    """
    comps = connected_components(g)
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)
    d = dijkstra(g.weights, directed=False)
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(g.nodes, d)


def remove_edges(g: WeightedGraph, cut: Iterable[tuple]) -> WeightedGraph:
    w = np.array(g.weights)
    for u, v in cut:
        if not g.has_edge(u, v):
            raise GraphError(f"cannot remove missing edge ({u!r}, {v!r})")
        i, j = g.index(u), g.index(v)
        w[i, j] = w[j, i] = 0.0
    return g.with_weights(w)


def induced_subgraph(
    g: WeightedGraph,
    nodes: Iterable[Node],
    weights: str = "current",
    original: WeightedGraph | None = None,
) -> WeightedGraph:
    """Subgraph on ``nodes`` (kept in ``g`` order).

    ``weights="original"`` takes edge weights from ``original`` (the pre-flow
    empirical graph) instead of ``g``; the edge set still follows ``g``.
    """
    keep = set(nodes)
    if not keep:
        raise GraphError("induced subgraph of an empty node set")
    missing = keep.difference(g.nodes)
    if missing:
        raise GraphError(f"nodes not in graph: {sorted(map(str, missing))}")
    order = [u for u in g.nodes if u in keep]
    ix = np.array([g.index(u) for u in order])
    sub = g.weights[np.ix_(ix, ix)]
    if weights == "original":
        if original is None:
            raise GraphError("original weights requested but no original graph given")
        ox = np.array([original.index(u) for u in order])
        src = original.weights[np.ix_(ox, ox)]
        sub = np.where(sub > 0, src, 0.0)
        if np.any((sub == 0) & (g.weights[np.ix_(ix, ix)] > 0)):
            raise GraphError("original graph lacks an edge present in the current graph")
    elif weights != "current":
        raise GraphError(f"unknown weight source {weights!r}")
    return WeightedGraph(tuple(order), sub)
