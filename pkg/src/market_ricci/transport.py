"""Lazy random-walk measures and exact Wasserstein-1 transport."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Mapping

import numpy as np

from ._simplex import transport_simplex
from .errors import GraphError, NumericalError, RicciError
from .graph import DistanceMatrix, WeightedGraph

MASS_TOL = 1e-12
MISMATCH_TOL = 1e-9
REDUCED_COST_TOL = 1e-13

MEASURES = ("uniform", "inverse")


@dataclass(frozen=True)
class ProbabilityMeasure:
    """Sparse node -> mass map with total mass one."""

    masses: Mapping[Hashable, float]

    def __post_init__(self):
        m = {u: float(v) for u, v in self.masses.items() if v != 0}
        if any(v < 0 for v in m.values()):
            raise RicciError("probability masses must be non-negative")
        total = math.fsum(m.values())
        if abs(total - 1.0) > MASS_TOL * max(1, len(m)):
            raise RicciError(f"measure has total mass {total!r}, expected 1")
        object.__setattr__(self, "masses", m)

    @property
    def support(self) -> list:
        return list(self.masses)

    def __getitem__(self, node) -> float:
        return self.masses.get(node, 0.0)


@dataclass(frozen=True)
class TransportPlan:
    flows: dict
    cost: float

    def marginals(self) -> tuple[dict, dict]:
        src: dict = {}
        dst: dict = {}
        for (u, v), f in self.flows.items():
            src[u] = src.get(u, 0.0) + f
            dst[v] = dst.get(v, 0.0) + f
        return src, dst


# -- measures ---------------------------------------------------------------

def _check_alpha(alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise RicciError(f"idleness must lie in [0, 1], got {alpha}")


def measure_vector(weights: np.ndarray, x: int, alpha: float, kind: str = "inverse", power: float = 1.0) -> np.ndarray:
    """Dense lazy-walk measure at node index ``x``.

    ``uniform`` spreads ``1 - alpha`` evenly over the neighbours (combinatorial
    degree). ``inverse`` spreads it proportionally to ``w_xv ** -power``, which
    is scale-free and reduces to ``uniform`` when incident weights are equal.
    """
    row = weights[x]
    nbr = np.nonzero(row)[0]
    m = np.zeros(len(row))
    if alpha < 1.0:
        if len(nbr) == 0:
            raise GraphError(f"node at index {x} is isolated; lazy walk needs a neighbour")
        if kind == "uniform":
            m[nbr] = (1.0 - alpha) / len(nbr)
        elif kind == "inverse":
            # rescale by the shortest incident edge so tiny flowed weights do not overflow
            rel = row[nbr] / row[nbr].min()
            share = rel ** -power
            m[nbr] = (1.0 - alpha) * share / share.sum()
        else:
            raise RicciError(f"unknown measure {kind!r}; choose from {MEASURES}")
    m[x] = alpha
    return m


def lazy_measure(g: WeightedGraph, x, alpha: float) -> ProbabilityMeasure:
    """Mass ``alpha`` at ``x`` and ``(1 - alpha) / deg(x)`` on each neighbour."""
    _check_alpha(alpha)
    v = measure_vector(g.weights, g.index(x), alpha, "uniform")
    return ProbabilityMeasure({g.nodes[i]: v[i] for i in np.nonzero(v)[0]})


def inverse_weight_measure(g: WeightedGraph, x, alpha: float, power: float = 1.0) -> ProbabilityMeasure:
    """Lazy measure whose neighbour share is proportional to ``w ** -power``."""
    _check_alpha(alpha)
    v = measure_vector(g.weights, g.index(x), alpha, "inverse", power)
    return ProbabilityMeasure({g.nodes[i]: v[i] for i in np.nonzero(v)[0]})


# -- exact transport --------------------------------------------------------

def solve_transport(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact transportation problem on dense arrays; returns ``(cost, plan)``."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    cost = np.ascontiguousarray(cost, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return 0.0, np.zeros((len(a), len(b)))
    bi, bj, f, status = transport_simplex(a, b, cost, REDUCED_COST_TOL)
    if status != 0:
        raise NumericalError("transportation simplex exceeded its pivot budget")
    f = np.maximum(f, 0.0)
    plan = np.zeros(cost.shape)
    np.add.at(plan, (bi, bj), f)
    total = 0.0
    for t in range(len(f)):
        total += f[t] * cost[bi[t], bj[t]]
    return total, plan


def w1_vectors(mx: np.ndarray, my: np.ndarray, d: np.ndarray) -> float:
    """W1 between dense measures over the same node indexing.

    Mass shared by both measures stays put at zero cost, so only the
    positive and negative parts of ``mx - my`` are transported; this is exact
    whenever ``d`` is a metric.
    """
    common = np.minimum(mx, my)
    p = mx - common
    q = my - common
    src = np.nonzero(p > 0)[0]
    dst = np.nonzero(q > 0)[0]
    if len(src) == 0 or len(dst) == 0:
        return 0.0
    cost, _ = solve_transport(p[src], q[dst], d[np.ix_(src, dst)])
    return cost


def wasserstein(m_a: ProbabilityMeasure, m_b: ProbabilityMeasure, d: DistanceMatrix) -> TransportPlan:
    """Optimal plan and cost for moving ``m_a`` onto ``m_b`` under metric ``d``."""
    ta = math.fsum(m_a.masses.values())
    tb = math.fsum(m_b.masses.values())
    if abs(ta - tb) > MISMATCH_TOL:
        raise RicciError(f"mass mismatch: {ta!r} vs {tb!r}")
    nodes = list(dict.fromkeys([*m_a.support, *m_b.support]))
    try:
        ix = np.array([d._idx[u] for u in nodes])
    except KeyError as exc:
        raise RicciError(f"distance matrix does not cover node {exc.args[0]!r}") from None
    mx = np.array([m_a[u] for u in nodes])
    my = np.array([m_b[u] for u in nodes])
    sub = d.d[np.ix_(ix, ix)]

    common = np.minimum(mx, my)
    p, q = mx - common, my - common
    src = np.nonzero(p > 0)[0]
    dst = np.nonzero(q > 0)[0]
    flows = {}
    for i in np.nonzero(common > 0)[0]:
        flows[(nodes[i], nodes[i])] = float(common[i])
    cost = 0.0
    if len(src) and len(dst):
        cost, plan = solve_transport(p[src], q[dst], sub[np.ix_(src, dst)])
        for r, c in zip(*np.nonzero(plan)):
            key = (nodes[src[r]], nodes[dst[c]])
            flows[key] = flows.get(key, 0.0) + float(plan[r, c])
    return TransportPlan(flows, float(cost))


# -- brute-force oracle -----------------------------------------------------

ORACLE_MAX_SUPPORT = 8
ORACLE_MAX_DENOMINATOR = 64


def _as_fractions(masses, max_den):
    out = []
    for v in masses:
        f = Fraction(v).limit_denominator(max_den)
        if abs(float(f) - v) > 1e-12:
            raise RicciError(f"mass {v!r} is not rational with denominator <= {max_den}")
        out.append(f)
    return out


def _integer_tables(rows, cols):
    """Yield every non-negative integer matrix with the given margins."""
    m, k = len(rows), len(cols)
    table = [[0] * k for _ in range(m)]

    def fill(i, j, row_left, cols_left):
        if i == m:
            yield table
            return
        if j == k - 1:
            x = row_left
            if x > cols_left[j]:
                return
            table[i][j] = x
            cols_left[j] -= x
            yield from fill(i + 1, 0, rows[i + 1] if i + 1 < m else 0, cols_left)
            cols_left[j] += x
            return
        for x in range(min(row_left, cols_left[j]) + 1):
            table[i][j] = x
            cols_left[j] -= x
            yield from fill(i, j + 1, row_left - x, cols_left)
            cols_left[j] += x

    yield from fill(0, 0, rows[0], list(cols))


def wasserstein_oracle(m_a: ProbabilityMeasure, m_b: ProbabilityMeasure, d: DistanceMatrix) -> float:
    """Optimal cost by exhaustive search over integer-scaled transport plans.

    Transportation polytopes with integer margins have integer vertices, so
    scaling the masses to a common denominator and enumerating every integer
    plan finds the exact optimum. Test-only: combined support must be at most
    8 nodes and masses rational with denominator at most 64.
    """
    sa, sb = m_a.support, m_b.support
    if len(set(sa) | set(sb)) > ORACLE_MAX_SUPPORT:
        raise RicciError(f"oracle supports at most {ORACLE_MAX_SUPPORT} nodes")
    fa = _as_fractions([m_a[u] for u in sa], ORACLE_MAX_DENOMINATOR)
    fb = _as_fractions([m_b[u] for u in sb], ORACLE_MAX_DENOMINATOR)
    if sum(fa) != sum(fb):
        raise RicciError("mass mismatch")
    den = math.lcm(*(f.denominator for f in itertools.chain(fa, fb)))
    rows = [int(f * den) for f in fa]
    cols = [int(f * den) for f in fb]
    cost = [[d[u, v] for v in sb] for u in sa]
    best = math.inf
    for t in _integer_tables(rows, cols):
        c = math.fsum(t[i][j] * cost[i][j] for i in range(len(rows)) for j in range(len(cols)) if t[i][j])
        if c < best:
            best = c
    return best / den
