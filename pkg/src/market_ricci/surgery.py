"""Surgery along flat neck links and the recursive cluster hierarchy."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from math import comb
from typing import Iterable, Optional

import numpy as np

from .curvature import CurvatureField, FlowConfig, FlowHistory, Snapshot, run_flow
from .errors import ConfigError, InputError
from .graph import WeightedGraph, connected_components, induced_subgraph, remove_edges

log = logging.getLogger(__name__)

LEAF_MIN_SIZE = "min size"
LEAF_MAX_DEPTH = "max depth"
LEAF_NO_FLAT = "no flat links"
LEAF_COLLAPSE = "flow collapse"
LEAF_BLOWUP = "weight blow-up"


@dataclass(frozen=True)
class SurgeryConfig:
    """Cut-selection and recursion settings.

    A candidate cut edge is flat (``|kappa| <= epsilon``) and long (weight at
    or above the ``weight_quantile`` quantile of current weights). ``epsilon``
    starts at ``epsilon_flat`` and is multiplied by ``escalation_factor`` up
    to ``max_escalations`` times until the candidates disconnect the graph.
    A disconnecting cut is accepted only when its shortest edge is longer than
    ``neck_ratio`` times the longest surviving edge (0 disables the check).
    """

    epsilon_flat: float = 0.05
    weight_quantile: float = 0.25
    escalation_factor: float = 2.0
    max_escalations: int = 2
    cut_iteration: int = 10
    early_surgery: bool = True
    neck_ratio: float = 1.0
    min_component_size: int = 5
    max_depth: int = 6
    restart_weights: str = "original"

    def __post_init__(self):
        if not self.epsilon_flat > 0:
            raise ConfigError("epsilon_flat must be > 0")
        if not 0.0 <= self.weight_quantile < 1.0:
            raise ConfigError("weight_quantile must lie in [0, 1)")
        if not self.escalation_factor >= 1.0:
            raise ConfigError("escalation_factor must be >= 1")
        if self.max_escalations < 0:
            raise ConfigError("max_escalations must be >= 0")
        if self.cut_iteration < 1:
            raise ConfigError("cut_iteration must be >= 1")
        if self.neck_ratio < 0:
            raise ConfigError("neck_ratio must be >= 0")
        if self.min_component_size < 1:
            raise ConfigError("min_component_size must be >= 1")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.restart_weights not in ("original", "current"):
            raise ConfigError("restart_weights must be 'original' or 'current'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CutSelection:
    edges: list
    epsilon_used: float
    weight_threshold: float
    iteration: int

    def __bool__(self):
        return bool(self.edges)


@dataclass
class SurgeryReport:
    cuts: list  # [(u, v, w, kappa)]
    components: list
    epsilon_used: Optional[float] = None
    weight_threshold: Optional[float] = None
    iteration: Optional[int] = None

    @property
    def disconnected(self) -> bool:
        return len(self.components) > 1

    def to_dict(self) -> dict:
        return {
            "cuts": [{"i": u, "j": v, "w": w, "kappa": k} for u, v, w, k in self.cuts],
            "epsilon_used": self.epsilon_used,
            "weight_threshold": self.weight_threshold,
            "iteration": self.iteration,
            "disconnected": self.disconnected,
            "components": [list(c) for c in self.components],
        }


# -- cut selection ------------------------------------------------------------

def _escalation(cfg: SurgeryConfig):
    eps = cfg.epsilon_flat
    for _ in range(cfg.max_escalations + 1):
        yield eps
        eps *= cfg.escalation_factor


def select_on_snapshot(snap: Snapshot, cfg: SurgeryConfig) -> CutSelection:
    """Flat, long edges of one snapshot whose removal splits it at a neck."""
    g = snap.graph
    ii, jj = g.edge_indices()
    w = g.weights[ii, jj]
    kappa = snap.curvature.kappa
    threshold = float(np.quantile(w, cfg.weight_quantile)) if len(w) else 0.0
    long_ = w >= threshold
    eps_used = cfg.epsilon_flat
    for eps in _escalation(cfg):
        eps_used = eps
        cand = long_ & (np.abs(kappa) <= eps)
        if not cand.any() or cand.all():
            continue
        survivors = w[~cand]
        if cfg.neck_ratio > 0 and not w[cand].min() > cfg.neck_ratio * survivors.max():
            continue
        kept = np.array(g.weights)
        kept[ii[cand], jj[cand]] = 0.0
        kept[jj[cand], ii[cand]] = 0.0
        if len(connected_components(g.with_weights(kept))) > 1:
            edges = [(g.nodes[a], g.nodes[b]) for a, b in zip(ii[cand], jj[cand])]
            return CutSelection(edges, eps, threshold, snap.iteration)
    return CutSelection([], eps_used, threshold, snap.iteration)


def select_cut_edges(history: FlowHistory, cfg: SurgeryConfig) -> CutSelection:
    """Cut set from the snapshot at ``cfg.cut_iteration`` (or the last one)."""
    if not history.snapshots:
        raise InputError("flow history has no snapshots")
    idx = min(cfg.cut_iteration, len(history.snapshots) - 1)
    return select_on_snapshot(history.snapshots[idx], cfg)


def surgery(
    g: WeightedGraph,
    cut: Iterable[tuple],
    curvature: Optional[CurvatureField] = None,
    selection: Optional[CutSelection] = None,
) -> tuple[list, SurgeryReport]:
    """Remove ``cut`` from ``g`` and split into connected components."""
    cut = [g.canonical(u, v) for u, v in cut]
    pruned = remove_edges(g, cut)
    comps = connected_components(pruned)
    ordered = [[u for u in g.nodes if u in c] for c in comps]
    rows = []
    for u, v in cut:
        k = curvature[(u, v)] if curvature is not None else None
        rows.append((u, v, g.weight(u, v), k))
    report = SurgeryReport(
        rows,
        ordered,
        selection.epsilon_used if selection else None,
        selection.weight_threshold if selection else None,
        selection.iteration if selection else None,
    )
    if not report.disconnected:
        log.info("surgery did not disconnect the graph (%d cut edges)", len(cut))
    return ordered, report


# -- hierarchy ---------------------------------------------------------------

@dataclass
class ClusterTree:
    nodes: list
    depth: int
    stop_reason: Optional[str] = None
    surgery: Optional[SurgeryReport] = None
    flow: Optional[dict] = None
    children: list = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list:
        if self.is_leaf:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def level(self, depth: int) -> list:
        """Node sets at ``depth``; shallower leaves are carried down unchanged."""
        if self.depth == depth or self.is_leaf:
            return [list(self.nodes)]
        return [s for c in self.children for s in c.level(depth)]

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def to_dict(self) -> dict:
        out = {"nodes": list(self.nodes), "depth": self.depth, "stop_reason": self.stop_reason}
        if self.surgery is not None:
            s = self.surgery.to_dict()
            out["surgery"] = {"cuts": s["cuts"], "epsilon_used": s["epsilon_used"],
                              "weight_threshold": s["weight_threshold"], "iteration": s["iteration"]}
        else:
            out["surgery"] = None
        out["flow"] = self.flow
        out["children"] = [c.to_dict() for c in self.children]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterTree":
        s = data.get("surgery")
        rep = None
        if s is not None:
            rep = SurgeryReport(
                [(c["i"], c["j"], c["w"], c["kappa"]) for c in s["cuts"]],
                [list(ch["nodes"]) for ch in data["children"]],
                s.get("epsilon_used"), s.get("weight_threshold"), s.get("iteration"),
            )
        return cls(
            list(data["nodes"]), data["depth"], data.get("stop_reason"), rep, data.get("flow"),
            [cls.from_dict(c) for c in data.get("children", [])],
        )


def _flow_summary(history: FlowHistory) -> dict:
    last = history.last
    k = last.curvature.kappa
    return {
        "iterations": last.iteration,
        "termination": history.termination,
        "kappa_min": float(k.min()) if len(k) else None,
        "kappa_max": float(k.max()) if len(k) else None,
    }


def build_hierarchy(
    g: WeightedGraph,
    flow_cfg: FlowConfig = FlowConfig(),
    surg_cfg: SurgeryConfig = SurgeryConfig(),
) -> ClusterTree:
    """Recursive flow + surgery down to atomic clusters.

    Each level flows for ``min(max_iterations, cut_iteration)`` steps; with
    ``early_surgery`` the flow stops at the first checkpoint whose snapshot
    already admits a valid cut. Components are re-flowed from the original
    weights unless ``restart_weights == "current"``.
    """
    steps = min(flow_cfg.max_iterations, surg_cfg.cut_iteration)
    level_cfg = replace(flow_cfg, max_iterations=steps)
    stop = (lambda snap: bool(select_on_snapshot(snap, surg_cfg))) if surg_cfg.early_surgery else None
    return _grow(g, g, 0, level_cfg, surg_cfg, stop)


def _grow(g, original, depth, flow_cfg, surg_cfg, stop) -> ClusterTree:
    node = ClusterTree(list(g.nodes), depth)
    if len(g) < max(surg_cfg.min_component_size, 3):
        node.stop_reason = LEAF_MIN_SIZE
        return node
    if depth >= surg_cfg.max_depth:
        node.stop_reason = LEAF_MAX_DEPTH
        return node

    history = run_flow(g, flow_cfg, stop)
    node.flow = _flow_summary(history)
    selection = select_cut_edges(history, surg_cfg)
    if not selection:
        node.stop_reason = {"collapse": LEAF_COLLAPSE, "weight blow-up": LEAF_BLOWUP}.get(
            history.termination, LEAF_NO_FLAT)
        return node

    snap = history.snapshots[min(surg_cfg.cut_iteration, len(history.snapshots) - 1)]
    comps, report = surgery(snap.graph, selection.edges, snap.curvature, selection)
    node.surgery = report
    source = remove_edges(snap.graph, selection.edges)
    for comp in comps:
        if surg_cfg.restart_weights == "original":
            sub = induced_subgraph(original, comp)
        else:
            sub = induced_subgraph(source, comp)
        node.children.append(_grow(sub, original, depth + 1, flow_cfg, surg_cfg, stop))
    return node


# -- partition comparison ----------------------------------------------------

def _labels(partition, universe):
    lab = {}
    for k, block in enumerate(partition):
        for u in block:
            if u in lab:
                raise InputError(f"node {u!r} appears in more than one block")
            lab[u] = k
    if set(lab) != universe:
        raise InputError("partitions cover different node sets")
    return lab


def compare_partitions(found, reference) -> float:
    """Adjusted Rand index between two partitions of the same node set."""
    universe = {u for b in found for u in b}
    if universe != {u for b in reference for u in b}:
        missing = universe.symmetric_difference({u for b in reference for u in b})
        raise InputError(f"partitions cover different node sets (differ on {len(missing)} nodes)")
    la, lb = _labels(found, universe), _labels(reference, universe)
    n = len(universe)
    table: dict = {}
    for u in universe:
        key = (la[u], lb[u])
        table[key] = table.get(key, 0) + 1
    rows: dict = {}
    cols: dict = {}
    for (a, b), c in table.items():
        rows[a] = rows.get(a, 0) + c
        cols[b] = cols.get(b, 0) + c
    index = sum(comb(c, 2) for c in table.values())
    sum_a = sum(comb(c, 2) for c in rows.values())
    sum_b = sum(comb(c, 2) for c in cols.values())
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def load_partition(text: str) -> list:
    """Reference partition from JSON: a list of blocks or ``{name: [nodes]}``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid partition JSON: {exc.msg}") from None
    if isinstance(data, dict):
        data = data.get("clusters", data)
        blocks = list(data.values()) if isinstance(data, dict) else data
    else:
        blocks = data
    if not all(isinstance(b, list) for b in blocks):
        raise InputError("partition blocks must be lists of node labels")
    return blocks
