"""Ollivier-Ricci curvature, curvature bounds and the discrete Ricci flow."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, GraphError, NumericalError
from .graph import DistanceMatrix, WeightedGraph, all_pairs_shortest
from .transport import MEASURES, measure_vector, w1_vectors

log = logging.getLogger(__name__)

# kappa <= 1 holds exactly in exact arithmetic; allow rounding slack
KAPPA_SLACK = 1e-12


@dataclass(frozen=True)
class FlowConfig:
    alpha: float = 0.5
    max_iterations: int = 20
    weight_floor: float = 1e-8
    weight_ceiling: float = 1e6
    snapshot_every: int = 5
    measure: str = "inverse"
    measure_power: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must satisfy 0 <= alpha < 1, got {self.alpha}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if not self.weight_floor > 0:
            raise ConfigError("weight_floor must be > 0")
        if not self.weight_ceiling > self.weight_floor:
            raise ConfigError("weight_ceiling must exceed weight_floor")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if self.measure not in MEASURES:
            raise ConfigError(f"measure must be one of {MEASURES}, got {self.measure!r}")
        if not self.measure_power > 0:
            raise ConfigError("measure_power must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """Per-edge curvature for one snapshot, in ``g.edges()`` order."""

    edges: list
    kappa: np.ndarray
    iteration: int = 0
    alpha: float = 0.5

    def __getitem__(self, edge) -> float:
        return float(self.kappa[self._lookup()[edge]])

    def _lookup(self):
        lut = self.__dict__.get("_lut")
        if lut is None:
            lut = {}
            for k, (u, v) in enumerate(self.edges):
                lut[(u, v)] = k
                lut[(v, u)] = k
            object.__setattr__(self, "_lut", lut)
        return lut

    def as_dict(self) -> dict:
        return {e: float(k) for e, k in zip(self.edges, self.kappa)}

    def __len__(self):
        return len(self.edges)


@dataclass(eq=False)
class Snapshot:
    iteration: int
    graph: WeightedGraph
    distances: DistanceMatrix
    curvature: CurvatureField
    collapsed: list = field(default_factory=list)


@dataclass(eq=False)
class FlowHistory:
    config: FlowConfig
    snapshots: list
    termination: str = "max iterations"

    @property
    def last(self) -> Snapshot:
        return self.snapshots[-1]

    def __len__(self):
        return len(self.snapshots)


# -- curvature ---------------------------------------------------------------

def _measures(weights, alpha, measure, power):
    return np.array([measure_vector(weights, x, alpha, measure, power) for x in range(len(weights))])


def _wasserstein_edges(weights, d, ii, jj, alpha, measure, power, workers):
    """W1 between the endpoint measures of every edge ``(ii[k], jj[k])``."""
    ms = _measures(weights, alpha, measure, power)
    out = np.empty(len(ii))

    def run(lo, hi):
        for k in range(lo, hi):
            out[k] = w1_vectors(ms[ii[k]], ms[jj[k]], d)

    if workers <= 1 or len(ii) < 2 * workers:
        run(0, len(ii))
    else:
        bounds = np.linspace(0, len(ii), workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for f in [pool.submit(run, a, b) for a, b in zip(bounds[:-1], bounds[1:])]:
                f.result()
    return out


def _kappa_from(wass, dist):
    if np.any(dist <= 0):
        raise NumericalError("edge with non-positive distance; merge coincident nodes first")
    kappa = 1.0 - wass / dist
    if np.any(kappa > 1.0 + KAPPA_SLACK):
        raise NumericalError("curvature above 1; distance matrix inconsistent with graph")
    return kappa


def edge_curvature(
    g: WeightedGraph,
    d: DistanceMatrix,
    edge: tuple,
    alpha: float = 0.5,
    measure: str = "inverse",
    power: float = 1.0,
) -> float:
    """Ollivier-Ricci curvature ``1 - W(m_i, m_j) / d(i, j)`` of one edge."""
    u, v = edge
    if not g.has_edge(u, v):
        raise GraphError(f"no edge ({u!r}, {v!r})")
    i, j = g.index(u), g.index(v)
    dij = d.d[i, j]
    if not dij > 0:
        raise NumericalError(f"d({u!r}, {v!r}) = {dij}; merge coincident nodes first")
    mi = measure_vector(g.weights, i, alpha, measure, power)
    mj = measure_vector(g.weights, j, alpha, measure, power)
    return float(_kappa_from(np.array([w1_vectors(mi, mj, d.d)]), np.array([dij]))[0])


def curvature_field(
    g: WeightedGraph,
    alpha: float = 0.5,
    measure: str = "inverse",
    power: float = 1.0,
    workers: int = 1,
    distances: Optional[DistanceMatrix] = None,
    iteration: int = 0,
) -> CurvatureField:
    """Curvature of every edge against the graph's own shortest-path metric."""
    d = distances if distances is not None else all_pairs_shortest(g)
    ii, jj = g.edge_indices()
    wass = _wasserstein_edges(g.weights, d.d, ii, jj, alpha, measure, power, workers)
    kappa = _kappa_from(wass, d.d[ii, jj])
    return CurvatureField(g.edges(), kappa, iteration, alpha)


# -- bounds ------------------------------------------------------------------

def lin_yau_lower_bound(g: WeightedGraph, edge: tuple) -> float:
    """``2/d_i + 2/d_j - 2`` from combinatorial degrees."""
    u, v = edge
    if not g.has_edge(u, v):
        raise GraphError(f"no edge ({u!r}, {v!r})")
    return 2.0 / g.degree(u) + 2.0 / g.degree(v) - 2.0


def lin_yau_violations(g: WeightedGraph, field_: CurvatureField, tol: float = 1e-9) -> list:
    """Edges whose curvature falls below the Lin-Yau bound (diagnostic only)."""
    deg = dict(zip(g.nodes, g.degrees()))
    out = []
    for (u, v), k in zip(field_.edges, field_.kappa):
        bound = 2.0 / deg[u] + 2.0 / deg[v] - 2.0
        if k < bound - tol:
            out.append(((u, v), float(k), bound))
    return out


@dataclass(frozen=True)
class LLYEstimate:
    value: float
    samples: dict  # alpha -> kappa_alpha / (1 - alpha)


def lly_limit_curvature(
    g: WeightedGraph,
    edge: tuple,
    alpha_hi: float = 0.99,
    measure: str = "inverse",
    power: float = 1.0,
) -> LLYEstimate:
    """Idleness-free curvature ``lim kappa_alpha / (1 - alpha)`` as alpha -> 1.

    Sampled at ``alpha_hi`` and ``alpha_hi - 0.09`` and extrapolated linearly
    to ``alpha = 1``.
    """
    a_hi = float(alpha_hi)
    a_lo = a_hi - 0.09
    if not 0.0 <= a_lo < a_hi < 1.0:
        raise ConfigError(f"alpha_hi must lie in [0.09, 1), got {alpha_hi}")
    d = all_pairs_shortest(g)
    samples = {}
    for a in (a_lo, a_hi):
        samples[a] = edge_curvature(g, d, edge, a, measure, power) / (1.0 - a)
    slope = (samples[a_hi] - samples[a_lo]) / (a_hi - a_lo)
    return LLYEstimate(samples[a_hi] + slope * (1.0 - a_hi), samples)


# -- flow --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepResult:
    graph: WeightedGraph
    collapsed: list
    blown_up: list


def _next_weights(g: WeightedGraph, d: DistanceMatrix, cfg: FlowConfig):
    ii, jj = g.edge_indices()
    wass = _wasserstein_edges(g.weights, d.d, ii, jj, cfg.alpha, cfg.measure, cfg.measure_power, cfg.workers)
    kappa = _kappa_from(wass, d.d[ii, jj])
    return ii, jj, wass, kappa


def _apply(g, ii, jj, wass, cfg):
    new = np.where(wass < cfg.weight_floor, cfg.weight_floor, wass)
    w = np.zeros_like(g.weights)
    w[ii, jj] = new
    w[jj, ii] = new
    collapsed = [(g.nodes[a], g.nodes[b]) for a, b, x in zip(ii, jj, wass) if x < cfg.weight_floor]
    blown = [(g.nodes[a], g.nodes[b]) for a, b, x in zip(ii, jj, wass) if x > cfg.weight_ceiling]
    return StepResult(g.with_weights(w), collapsed, blown)


def flow_step(g: WeightedGraph, cfg: FlowConfig, distances: Optional[DistanceMatrix] = None) -> StepResult:
    """One simultaneous update ``w_ij <- (1 - kappa_ij) d(i, j)``.

    The new weight is the Wasserstein distance between the endpoint measures.
    Weights below ``cfg.weight_floor`` are clamped and reported as collapsed;
    weights above ``cfg.weight_ceiling`` are reported in ``blown_up``.
    """
    d = distances if distances is not None else all_pairs_shortest(g)
    ii, jj, wass, _ = _next_weights(g, d, cfg)
    return _apply(g, ii, jj, wass, cfg)


def run_flow(
    g: WeightedGraph,
    cfg: FlowConfig = FlowConfig(),
    stop: Optional[Callable[[Snapshot], bool]] = None,
) -> FlowHistory:
    """Iterate the discrete Ricci flow for up to ``cfg.max_iterations`` steps.

    Snapshot ``l`` holds ``w^(l)``, ``d^(l)`` and ``kappa^(l)``. ``stop`` is
    consulted on every ``cfg.snapshot_every``-th snapshot (never on 0) and
    ends the flow early when it returns True.
    """
    if len(g) < 3:
        raise GraphError(f"flow needs at least 3 nodes, got {len(g)}")
    d = all_pairs_shortest(g)
    ii, jj = g.edge_indices()
    wass = _wasserstein_edges(g.weights, d.d, ii, jj, cfg.alpha, cfg.measure, cfg.measure_power, cfg.workers)
    snap = Snapshot(0, g, d, CurvatureField(g.edges(), _kappa_from(wass, d.d[ii, jj]), 0, cfg.alpha))
    history = FlowHistory(cfg, [snap])
    for it in range(1, cfg.max_iterations + 1):
        step = _apply(snap.graph, ii, jj, wass, cfg)
        if step.blown_up:
            history.termination = "weight blow-up"
            log.warning("flow stopped at iteration %d: %d edges above ceiling", it, len(step.blown_up))
            break
        ng = step.graph
        d = all_pairs_shortest(ng)
        wass = _wasserstein_edges(ng.weights, d.d, ii, jj, cfg.alpha, cfg.measure, cfg.measure_power, cfg.workers)
        snap = Snapshot(it, ng, d, CurvatureField(ng.edges(), _kappa_from(wass, d.d[ii, jj]), it, cfg.alpha), step.collapsed)
        history.snapshots.append(snap)
        if np.all(ng.weights[ii, jj] <= cfg.weight_floor):
            history.termination = "collapse"
            break
        if stop is not None and it % cfg.snapshot_every == 0 and stop(snap):
            history.termination = "early stop"
            break
    return history
