"""Transportation simplex kernel (u-v / MODI method on a spanning-tree basis).

The basis is kept as exactly ``m + k - 1`` cells that form a spanning tree of
the bipartite row/column graph; degenerate (zero-flow) basic cells are kept
explicitly so the tree never breaks.
"""

import numpy as np
from numba import njit

MAX_PIVOTS_FACTOR = 50


@njit(cache=True, nogil=True)
def _least_cost(a, b, cost, bi, bj, flow):
    """Matrix-minimum start: fill cheapest cells first, crossing out one line per cell."""
    m = a.shape[0]
    k = b.shape[0]
    s = a.copy()
    d = b.copy()
    row_on = np.ones(m, np.bool_)
    col_on = np.ones(k, np.bool_)
    rows_left = m
    cols_left = k
    order = np.argsort(cost.ravel(), kind="mergesort")
    t = 0
    for c in order:
        i = c // k
        j = c % k
        if not (row_on[i] and col_on[j]):
            continue
        x = min(s[i], d[j])
        if x < 0.0:
            x = 0.0
        bi[t] = i
        bj[t] = j
        flow[t] = x
        t += 1
        s[i] -= x
        d[j] -= x
        if t == m + k - 1:
            break
        if (s[i] <= d[j] and rows_left > 1) or cols_left == 1:
            row_on[i] = False
            rows_left -= 1
        else:
            col_on[j] = False
            cols_left -= 1


@njit(cache=True, nogil=True)
def transport_simplex(a, b, cost, rel_tol):
    """Solve min <cost, P> s.t. P 1 = a, P^T 1 = b, P >= 0.

    Returns ``(rows, cols, flows, status)`` for the final basis; ``status`` is
    0 on optimality and 1 when the pivot budget ran out.
    """
    m = a.shape[0]
    k = b.shape[0]
    nn = m + k
    nb = nn - 1
    bi = np.empty(nb, np.int64)
    bj = np.empty(nb, np.int64)
    flow = np.empty(nb, np.float64)
    _least_cost(a, b, cost, bi, bj, flow)
    if m == 1 or k == 1:
        return bi, bj, flow, 0

    scale = 0.0
    for i in range(m):
        for j in range(k):
            if abs(cost[i, j]) > scale:
                scale = abs(cost[i, j])
    tol = rel_tol * scale

    deg = np.empty(nn, np.int64)
    off = np.empty(nn + 1, np.int64)
    fill = np.empty(nn, np.int64)
    nbr = np.empty(2 * nb, np.int64)
    nbe = np.empty(2 * nb, np.int64)
    parent = np.empty(nn, np.int64)
    pedge = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    pot = np.empty(nn, np.float64)
    queue = np.empty(nn, np.int64)
    path_a = np.empty(nn, np.int64)
    path_b = np.empty(nn, np.int64)
    cyc = np.empty(nn, np.int64)

    max_pivots = MAX_PIVOTS_FACTOR * nn * nn
    for _ in range(max_pivots):
        # adjacency of the basis tree (rows 0..m-1, columns m..m+k-1)
        deg[:] = 0
        for t in range(nb):
            deg[bi[t]] += 1
            deg[m + bj[t]] += 1
        off[0] = 0
        for v in range(nn):
            off[v + 1] = off[v] + deg[v]
            fill[v] = off[v]
        for t in range(nb):
            r = bi[t]
            c = m + bj[t]
            nbr[fill[r]] = c
            nbe[fill[r]] = t
            fill[r] += 1
            nbr[fill[c]] = r
            nbe[fill[c]] = t
            fill[c] += 1

        # potentials u (rows) and v (columns) with u_0 = 0
        parent[:] = -2
        parent[0] = -1
        pedge[0] = -1
        depth[0] = 0
        pot[0] = 0.0
        queue[0] = 0
        head = 0
        tail = 1
        while head < tail:
            v = queue[head]
            head += 1
            for p in range(off[v], off[v + 1]):
                w = nbr[p]
                if parent[w] != -2:
                    continue
                t = nbe[p]
                parent[w] = v
                pedge[w] = t
                depth[w] = depth[v] + 1
                pot[w] = cost[bi[t], bj[t]] - pot[v]
                queue[tail] = w
                tail += 1

        # entering cell: most negative reduced cost, first in row-major order
        best = -tol
        ei = -1
        ej = -1
        for i in range(m):
            ui = pot[i]
            for j in range(k):
                r = cost[i, j] - ui - pot[m + j]
                if r < best:
                    best = r
                    ei = i
                    ej = j
        if ei < 0:
            return bi, bj, flow, 0

        # cycle: tree path from column ej to row ei, closed by the entering cell
        p = ei
        q = m + ej
        na = 0
        nb_ = 0
        while depth[p] > depth[q]:
            path_a[na] = pedge[p]
            na += 1
            p = parent[p]
        while depth[q] > depth[p]:
            path_b[nb_] = pedge[q]
            nb_ += 1
            q = parent[q]
        while p != q:
            path_a[na] = pedge[p]
            na += 1
            p = parent[p]
            path_b[nb_] = pedge[q]
            nb_ += 1
            q = parent[q]
        L = 0
        for s in range(nb_):
            cyc[L] = path_b[s]
            L += 1
        for s in range(na - 1, -1, -1):
            cyc[L] = path_a[s]
            L += 1

        # even cycle positions lose mass, odd ones gain
        theta = np.inf
        leave = -1
        for s in range(0, L, 2):
            t = cyc[s]
            if flow[t] < theta:
                theta = flow[t]
                leave = t
        for s in range(L):
            t = cyc[s]
            if s % 2 == 0:
                flow[t] -= theta
            else:
                flow[t] += theta
        bi[leave] = ei
        bj[leave] = ej
        flow[leave] = theta
    return bi, bj, flow, 1
