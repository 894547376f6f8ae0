"""Exact s-t minimum cut on 4-connected grid graphs.

The solver is an augmenting-path max-flow with search-tree reuse in the style
of Boykov and Kolmogorov: two search trees grow from the terminals, paths are
augmented where they touch, and orphaned subtrees are re-adopted rather than
rebuilt. Capacities are doubles.

Binary energies are encoded with the usual convention: a node on the source
side takes label 0, a node on the sink side label 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

# arc directions from a node: left, right, up, down; opposite is d ^ 1
_TERMINAL = 4
_NONE = -1


class SubmodularityError(ValueError):
    pass


@dataclass
class FlowNetwork:
    """Terminal and neighbor capacities on an ``H x W`` grid.

    ``horiz[y, x]`` holds the (forward, backward) capacities of the edge
    between ``(x, y)`` and ``(x + 1, y)``; ``vert[y, x]`` those between
    ``(x, y)`` and ``(x, y + 1)``.
    """

    source_cap: np.ndarray
    sink_cap: np.ndarray
    horiz: np.ndarray
    vert: np.ndarray

    def __post_init__(self):
        h, w = self.source_cap.shape
        assert self.sink_cap.shape == (h, w)
        assert self.horiz.shape == (h, w - 1, 2) and self.vert.shape == (h - 1, w, 2)
        for a in (self.source_cap, self.sink_cap, self.horiz, self.vert):
            if np.any(a < 0) or np.any(np.isnan(a)):
                raise ValueError("capacities must be non-negative")
        if np.any(np.isinf(self.source_cap) & np.isinf(self.sink_cap)):
            raise ValueError("a node cannot have infinite capacity to both terminals")

    @property
    def shape(self):
        return self.source_cap.shape

    @classmethod
    def zeros(cls, h: int, w: int) -> "FlowNetwork":
        return cls(np.zeros((h, w)), np.zeros((h, w)),
                   np.zeros((h, w - 1, 2)), np.zeros((h - 1, w, 2)))


@numba.njit(cache=True)
def _neighbors(h, w):
    n = h * w
    nbr = np.full((n, 4), -1, np.int64)
    for y in range(h):
        for x in range(w):
            i = y * w + x
            if x > 0:
                nbr[i, 0] = i - 1
            if x < w - 1:
                nbr[i, 1] = i + 1
            if y > 0:
                nbr[i, 2] = i - w
            if y < h - 1:
                nbr[i, 3] = i + w
    return nbr


@numba.njit(cache=True, nogil=True)
def _bk_maxflow(cap, tr, nbr, tol):
    """Max-flow on residual arrays, modified in place.

    cap[i, d] is the residual capacity of arc i -> nbr[i, d]; tr[i] > 0 is
    residual source -> i, tr[i] < 0 residual i -> sink. Residuals that drop
    to ``tol`` or below are snapped to zero; without this, rounding leaves
    dust on nearly-saturated arcs and the solver crawls through
    augmentations of ~1e-14 each.
    """
    n = tr.shape[0]
    tree = np.zeros(n, np.int8)          # 0 free, 1 source tree, 2 sink tree
    parent = np.full(n, -1, np.int8)     # direction towards parent, 4 = terminal
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)
    active = np.empty(n, np.int64)
    in_active = np.zeros(n, np.bool_)
    a_head = 0
    a_count = 0
    orphans = np.empty(n, np.int64)
    o_head = 0
    o_count = 0
    big = np.int64(1) << 60
    flow = 0.0

    for i in range(n):
        if tr[i] > 0:
            tree[i] = 1
        elif tr[i] < 0:
            tree[i] = 2
        else:
            continue
        parent[i] = _TERMINAL
        dist[i] = 1
        active[(a_head + a_count) % n] = i
        a_count += 1
        in_active[i] = True

    time = 0
    current = -1
    while True:
        if current >= 0 and tree[current] == 0:
            current = -1
        if current < 0:
            while a_count > 0:
                c = active[a_head]
                a_head = (a_head + 1) % n
                a_count -= 1
                in_active[c] = False
                if tree[c] != 0:
                    current = c
                    break
            if current < 0:
                break
        i = current
        si = -1
        ti = -1
        dmid = -1
        if tree[i] == 1:
            for d in range(4):
                j = nbr[i, d]
                if j < 0 or cap[i, d] <= 0:
                    continue
                if tree[j] == 0:
                    tree[j] = 1
                    parent[j] = d ^ 1
                    ts[j] = ts[i]
                    dist[j] = dist[i] + 1
                    if not in_active[j]:
                        active[(a_head + a_count) % n] = j
                        a_count += 1
                        in_active[j] = True
                elif tree[j] == 2:
                    si = i
                    ti = j
                    dmid = d
                    break
                elif ts[j] <= ts[i] and dist[j] > dist[i]:
                    parent[j] = d ^ 1
                    ts[j] = ts[i]
                    dist[j] = dist[i] + 1
        else:
            for d in range(4):
                j = nbr[i, d]
                if j < 0 or cap[j, d ^ 1] <= 0:
                    continue
                if tree[j] == 0:
                    tree[j] = 2
                    parent[j] = d ^ 1
                    ts[j] = ts[i]
                    dist[j] = dist[i] + 1
                    if not in_active[j]:
                        active[(a_head + a_count) % n] = j
                        a_count += 1
                        in_active[j] = True
                elif tree[j] == 1:
                    si = j
                    ti = i
                    dmid = d ^ 1
                    break
                elif ts[j] <= ts[i] and dist[j] > dist[i]:
                    parent[j] = d ^ 1
                    ts[j] = ts[i]
                    dist[j] = dist[i] + 1
        time += 1
        if si < 0:
            current = -1
            continue

        # bottleneck along source tree, middle arc and sink tree
        b = cap[si, dmid]
        j = si
        while True:
            d = parent[j]
            if d == _TERMINAL:
                if tr[j] < b:
                    b = tr[j]
                break
            p = nbr[j, d]
            if cap[p, d ^ 1] < b:
                b = cap[p, d ^ 1]
            j = p
        j = ti
        while True:
            d = parent[j]
            if d == _TERMINAL:
                if -tr[j] < b:
                    b = -tr[j]
                break
            if cap[j, d] < b:
                b = cap[j, d]
            j = nbr[j, d]

        cap[si, dmid] -= b
        if cap[si, dmid] <= tol:
            cap[si, dmid] = 0.0
        cap[ti, dmid ^ 1] += b
        j = si
        while True:
            d = parent[j]
            if d == _TERMINAL:
                tr[j] -= b
                if tr[j] <= tol:
                    tr[j] = 0.0
                    parent[j] = _NONE
                    orphans[(o_head + o_count) % n] = j
                    o_count += 1
                break
            p = nbr[j, d]
            cap[j, d] += b
            cap[p, d ^ 1] -= b
            if cap[p, d ^ 1] <= tol:
                cap[p, d ^ 1] = 0.0
                parent[j] = _NONE
                orphans[(o_head + o_count) % n] = j
                o_count += 1
            j = p
        j = ti
        while True:
            d = parent[j]
            if d == _TERMINAL:
                tr[j] += b
                if tr[j] >= -tol:
                    tr[j] = 0.0
                    parent[j] = _NONE
                    orphans[(o_head + o_count) % n] = j
                    o_count += 1
                break
            p = nbr[j, d]
            cap[p, d ^ 1] += b
            cap[j, d] -= b
            if cap[j, d] <= tol:
                cap[j, d] = 0.0
                parent[j] = _NONE
                orphans[(o_head + o_count) % n] = j
                o_count += 1
            j = p
        flow += b
        time += 1

        # adoption
        while o_count > 0:
            j = orphans[o_head]
            o_head = (o_head + 1) % n
            o_count -= 1
            t = tree[j]
            d_min = big
            best = -1
            for d in range(4):
                p = nbr[j, d]
                if p < 0 or tree[p] != t or parent[p] == _NONE:
                    continue
                if t == 1:
                    ok = cap[p, d ^ 1] > 0
                else:
                    ok = cap[j, d] > 0
                if not ok:
                    continue
                k = p
                dd = 0
                while True:
                    if ts[k] == time:
                        dd += dist[k]
                        break
                    pd = parent[k]
                    dd += 1
                    if pd == _TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if pd == _NONE:
                        dd = big
                        break
                    k = nbr[k, pd]
                if dd < big:
                    if dd < d_min:
                        d_min = dd
                        best = d
                    k = p
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = dd
                        dd -= 1
                        k = nbr[k, parent[k]]
            if best >= 0:
                parent[j] = best
                ts[j] = time
                dist[j] = d_min + 1
                continue
            for d in range(4):
                p = nbr[j, d]
                # orphaned neighbors are activated too: they may be re-adopted
                if p < 0 or tree[p] != t:
                    continue
                if t == 1:
                    ok = cap[p, d ^ 1] > 0
                else:
                    ok = cap[j, d] > 0
                if ok and not in_active[p]:
                    active[(a_head + a_count) % n] = p
                    a_count += 1
                    in_active[p] = True
                pp = parent[p]
                if 0 <= pp < _TERMINAL and nbr[p, pp] == j:
                    parent[p] = _NONE
                    orphans[(o_head + o_count) % n] = p
                    o_count += 1
            tree[j] = 0
            parent[j] = _NONE

    # source side = nodes reachable from the source in the residual graph
    side = np.ones(n, np.uint8)
    stack = np.empty(n, np.int64)
    top = 0
    for i in range(n):
        if tr[i] > 0:
            side[i] = 0
            stack[top] = i
            top += 1
    while top > 0:
        top -= 1
        i = stack[top]
        for d in range(4):
            j = nbr[i, d]
            if j >= 0 and side[j] == 1 and cap[i, d] > 0:
                side[j] = 0
                stack[top] = j
                top += 1
    return flow, side


def _residual_arrays(net: FlowNetwork):
    h, w = net.shape
    cap = np.zeros((h, w, 4))
    cap[:, :-1, 1] = net.horiz[..., 0]
    cap[:, 1:, 0] = net.horiz[..., 1]
    cap[:-1, :, 3] = net.vert[..., 0]
    cap[1:, :, 2] = net.vert[..., 1]
    s = net.source_cap.ravel()
    t = net.sink_cap.ravel()
    direct = np.minimum(s, t)
    base = float(direct[np.isfinite(direct)].sum())
    with np.errstate(invalid="ignore"):
        tr = np.where(np.isinf(s), np.inf, np.where(np.isinf(t), -np.inf, s - t))
    return cap.reshape(h * w, 4), tr, base


def solve_maxflow(net: FlowNetwork):
    """Return ``(min_cut_value, side)`` with ``side`` an ``H x W`` uint8 array.

    Nodes reachable from the source in the final residual graph get side 0,
    every other node side 1.
    """
    h, w = net.shape
    cap, tr, base = _residual_arrays(net)
    finite = np.concatenate([cap.ravel(), np.abs(tr)])
    finite = finite[np.isfinite(finite)]
    tol = 1e-12 * float(finite.max()) if finite.size else 0.0
    # node caps assembled from several edge terms carry rounding dust
    cap[cap <= tol] = 0.0
    tr[np.abs(tr) <= tol] = 0.0
    flow, side = _bk_maxflow(cap, tr, _neighbors(h, w), tol)
    return base + flow, side.reshape(h, w)


def cut_capacity(net: FlowNetwork, side: np.ndarray) -> float:
    """Capacity of the cut induced by ``side`` (0 = source side)."""
    s0 = side == 0
    total = net.source_cap[~s0].sum() + net.sink_cap[s0].sum()
    total += net.horiz[..., 0][s0[:, :-1] & ~s0[:, 1:]].sum()
    total += net.horiz[..., 1][~s0[:, :-1] & s0[:, 1:]].sum()
    total += net.vert[..., 0][s0[:-1] & ~s0[1:]].sum()
    total += net.vert[..., 1][~s0[:-1] & s0[1:]].sum()
    return float(total)


def build_grid_network(mask: np.ndarray, unary: np.ndarray, horiz_tables: np.ndarray,
                       vert_tables: np.ndarray, tol: float = 1e-9):
    """Encode a binary pairwise energy on a grid as a flow network.

    ``unary[y, x] = (E(0), E(1))``; ``horiz_tables[y, x]`` and
    ``vert_tables[y, x]`` are 2x2 tables ``E[x_p, x_q]`` for the edges to the
    right and downward neighbor. Only the label-1 unary cost may be ``inf``
    (it pins a node to label 0). Edges touching an invalid pixel are dropped.

    Returns ``(network, constant)`` such that for every labeling
    ``energy = cut capacity + constant``.
    """
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    unary = np.asarray(unary, np.float64)
    if np.any(np.isinf(unary[..., 0])):
        raise ValueError("label-0 unary cost must be finite")
    lin = np.where(mask, unary[..., 1] - unary[..., 0], 0.0)
    const = float(np.where(mask, unary[..., 0], 0.0).sum())
    pair = []
    for tables, (sl_p, sl_q), name in (
            (horiz_tables, ((slice(None), slice(None, -1)), (slice(None), slice(1, None))), "horizontal"),
            (vert_tables, ((slice(None, -1), slice(None)), (slice(1, None), slice(None))), "vertical")):
        tables = np.asarray(tables, np.float64)
        valid = mask[sl_p] & mask[sl_q]
        a, b, c, d = tables[..., 0, 0], tables[..., 0, 1], tables[..., 1, 0], tables[..., 1, 1]
        wgt = b + c - a - d
        bad = valid & (wgt < -tol * (1 + np.abs(a) + np.abs(d)))
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise SubmodularityError(
                f"{name} edge at (x={x}, y={y}) is not submodular: "
                f"E00+E11={a[y, x] + d[y, x]:.6g} > E01+E10={b[y, x] + c[y, x]:.6g}")
        const += float(a[valid].sum())
        # Split the coupling wgt between both arc directions (beta on q->p,
        # wgt - beta on p->q) so that the t-links come out as small as
        # possible; for tables with E00 == E11 and E01, E10 >= E00 no t-link
        # is needed at all. Few t-links keep the augmenting paths short.
        wgt = np.maximum(wgt, 0.0)
        beta = np.clip(0.5 * (c - b + wgt), 0.0, wgt)
        lin[sl_p] += np.where(valid, c - a - beta, 0.0)
        lin[sl_q] += np.where(valid, b - a - (wgt - beta), 0.0)
        pair.append(np.stack([np.where(valid, wgt - beta, 0.0),
                              np.where(valid, beta, 0.0)], axis=-1))
    src = np.where(lin > 0, lin, 0.0)
    snk = np.where(lin < 0, -lin, 0.0)
    const += float(lin[lin < 0].sum())
    return FlowNetwork(src, snk, pair[0], pair[1]), const


def binary_energy(mask, unary, horiz_tables, vert_tables, labels) -> float:
    """Evaluate the binary energy of ``labels`` directly from the tables."""
    mask = np.asarray(mask, bool)
    x = np.asarray(labels, np.int64)
    e = np.where(mask, np.take_along_axis(unary, x[..., None], -1)[..., 0], 0.0).sum()
    hv = mask[:, :-1] & mask[:, 1:]
    e += np.asarray(horiz_tables)[hv, x[:, :-1][hv], x[:, 1:][hv]].sum()
    vv = mask[:-1] & mask[1:]
    e += np.asarray(vert_tables)[vv, x[:-1][vv], x[1:][vv]].sum()
    return float(e)
