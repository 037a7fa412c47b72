"""Hot inner loops, each with a numba and a vectorised numpy implementation.

The public wrappers at the bottom of each section dispatch on
``_accel.USE_NUMBA``.  Both implementations evaluate the same floating-point
expressions in the same order, so the collision kernels agree to rounding and
the sampling kernels agree bit for bit.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

# status codes shared by the flight kernels
OK = 0
NO_HIT = 1
TANGENCY = 2

_CHUNK = 4096


# ---------------------------------------------------------------------------
# ray / circle flights
# ---------------------------------------------------------------------------
#
# Geometry arrays (built by ``table.FlightGeometry``):
#   radius[i]            radius of scatterer i
#   cand_x, cand_y[i,m]  centre of candidate m relative to the centre of i
#   cand_r[i,m]          its radius
#   cand_disk[i,m]       which scatterer it is a translate of
#   n_cand[i]            number of valid candidates for source i
#
# Phase points are (disk, r, phi) with r clockwise from the +x axis, so the
# boundary angle is theta = -r / radius.  The outgoing velocity is
# cos(phi) * normal + sin(phi) * tangent, tangent being d/dr of the boundary.


@njit
def _collide_nb(disk, r, phi, radius, cand_x, cand_y, cand_r, cand_disk, n_cand, tol):
    n = disk.shape[0]
    out_disk = np.empty(n, np.int64)
    out_r = np.empty(n)
    out_phi = np.empty(n)
    out_tau = np.empty(n)
    out_addr = np.empty(n, np.int64)
    status = np.zeros(n, np.int64)
    clear = np.zeros(n)
    for k in range(n):
        i = disk[k]
        rho = radius[i]
        th = -r[k] / rho
        nx = math.cos(th)
        ny = math.sin(th)
        cp = math.cos(phi[k])
        sp = math.sin(phi[k])
        vx = cp * nx + sp * ny
        vy = cp * ny - sp * nx
        px = rho * nx
        py = rho * ny
        best = np.inf
        bm = -1
        for m in range(n_cand[i]):
            wx = cand_x[i, m] - px
            wy = cand_y[i, m] - py
            b = wx * vx + wy * vy
            if b <= 0.0:
                continue
            R = cand_r[i, m]
            perp = abs(wx * vy - wy * vx)
            if perp - R > 0.0:
                continue
            t = b - math.sqrt((R - perp) * (R + perp))
            if t < best:
                best = t
                bm = m
        amb = False
        cl = np.inf
        for m in range(n_cand[i]):
            wx = cand_x[i, m] - px
            wy = cand_y[i, m] - py
            b = wx * vx + wy * vy
            if b <= 0.0:
                continue
            R = cand_r[i, m]
            perp = abs(wx * vy - wy * vx)
            miss = perp - R
            if abs(miss) <= tol and b < best + tol:
                amb = True
            if m != bm and miss <= 0.0:
                t = b - math.sqrt((R - perp) * (R + perp))
                if t - best <= tol:
                    amb = True
            if b - R < best:
                cl = min(cl, abs(miss) / (1.0 + math.sqrt(wx * wx + wy * wy)))
        clear[k] = cl if bm >= 0 else 0.0
        if bm < 0:
            status[k] = NO_HIT
            out_disk[k] = -1
            out_r[k] = np.nan
            out_phi[k] = np.nan
            out_tau[k] = np.inf
            out_addr[k] = -1
            continue
        j = cand_disk[i, bm]
        R = cand_r[i, bm]
        qx = px + best * vx - cand_x[i, bm]
        qy = py + best * vy - cand_y[i, bm]
        mx = qx / R
        my = qy / R
        dot = vx * mx + vy * my
        wx2 = vx - 2.0 * dot * mx
        wy2 = vy - 2.0 * dot * my
        c2 = wx2 * mx + wy2 * my
        s2 = wx2 * my - wy2 * mx
        th2 = math.atan2(my, mx)
        per = 2.0 * math.pi * R
        rr = (-th2 * R) % per
        if rr >= per:
            rr -= per
        out_disk[k] = j
        out_r[k] = rr
        out_phi[k] = math.atan2(s2, c2)
        out_tau[k] = best
        out_addr[k] = bm
        if amb:
            status[k] = TANGENCY
    return out_disk, out_r, out_phi, out_tau, out_addr, status, clear


def _collide_np_chunk(disk, r, phi, radius, cand_x, cand_y, cand_r, cand_disk, n_cand, tol):
    n = disk.shape[0]
    rho = radius[disk]
    th = -r / rho
    nx = np.cos(th)
    ny = np.sin(th)
    cp = np.cos(phi)
    sp = np.sin(phi)
    vx = cp * nx + sp * ny
    vy = cp * ny - sp * nx
    px = rho * nx
    py = rho * ny

    cx = cand_x[disk]
    cy = cand_y[disk]
    cr = cand_r[disk]
    valid = np.arange(cand_x.shape[1])[None, :] < n_cand[disk][:, None]
    wx = cx - px[:, None]
    wy = cy - py[:, None]
    b = wx * vx[:, None] + wy * vy[:, None]
    perp = np.abs(wx * vy[:, None] - wy * vx[:, None])
    miss = perp - cr
    front = valid & (b > 0.0)
    hit = front & (miss <= 0.0)
    with np.errstate(invalid="ignore"):
        disc = (cr - perp) * (cr + perp)
        t = np.where(hit, b - np.sqrt(np.where(hit, disc, 0.0)), np.inf)
    bm = np.argmin(t, axis=1)
    rows = np.arange(n)
    best = t[rows, bm]

    # ambiguity: a near-tangent candidate in front of the winner, or a tie
    band = front & (np.abs(miss) <= tol) & (b < best[:, None] + tol)
    others = t.copy()
    others[rows, bm] = np.inf
    tie = (others - best[:, None]) <= tol
    amb = band.any(axis=1) | tie.any(axis=1)

    # clearance from every tangency that could change the first hit, each miss
    # distance scaled by its Lipschitz factor in the ray (1 + centre distance)
    near = front & (b - cr < best[:, None])
    clear = np.where(near, np.abs(miss) / (1.0 + np.hypot(wx, wy)), np.inf).min(axis=1)

    ok = np.isfinite(best)
    bm_safe = np.where(ok, bm, 0)
    R = cr[rows, bm_safe]
    qx = px + best * vx - cx[rows, bm_safe]
    qy = py + best * vy - cy[rows, bm_safe]
    with np.errstate(invalid="ignore"):
        mx = qx / R
        my = qy / R
        dot = vx * mx + vy * my
        wx2 = vx - 2.0 * dot * mx
        wy2 = vy - 2.0 * dot * my
        c2 = wx2 * mx + wy2 * my
        s2 = wx2 * my - wy2 * mx
        th2 = np.arctan2(my, mx)
        per = 2.0 * np.pi * R
        rr = np.mod(-th2 * R, per)
        rr = np.where(rr >= per, rr - per, rr)
        out_phi = np.arctan2(s2, c2)

    status = np.where(amb, TANGENCY, OK)
    status = np.where(ok, status, NO_HIT)
    out_disk = np.where(ok, cand_disk[disk, bm_safe], -1)
    out_addr = np.where(ok, bm, -1)
    out_r = np.where(ok, rr, np.nan)
    out_phi = np.where(ok, out_phi, np.nan)
    clear = np.where(ok, clear, 0.0)
    return out_disk, out_r, out_phi, best, out_addr, status.astype(np.int64), clear


def _collide_np(disk, r, phi, radius, cand_x, cand_y, cand_r, cand_disk, n_cand, tol):
    n = disk.shape[0]
    outs = [np.empty(n, np.int64), np.empty(n), np.empty(n), np.empty(n),
            np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n)]
    for s in range(0, n, _CHUNK):
        e = min(n, s + _CHUNK)
        res = _collide_np_chunk(disk[s:e], r[s:e], phi[s:e], radius, cand_x, cand_y,
                                cand_r, cand_disk, n_cand, tol)
        for o, v in zip(outs, res):
            o[s:e] = v
    return tuple(outs)


def collide(geom, disk, r, phi, tol, with_margin=False):
    """Batched collision map.

    Returns ``(disk', r', phi', tau, address, status)``; ``address`` indexes the
    candidate list of the source scatterer and identifies the lattice translate
    that was hit.  With ``with_margin`` a clearance array follows: the
    smallest |miss distance| / (1 + centre distance) over the tangencies that
    could change the address.  Moving the ray's base point and direction by at
    most d changes every such miss distance by at most (1 + centre distance) d.
    """
    disk = np.ascontiguousarray(disk, dtype=np.int64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    fn = _collide_nb if _accel.USE_NUMBA else _collide_np
    out = fn(disk, r, phi, geom.radius, geom.cand_x, geom.cand_y, geom.cand_r,
             geom.cand_disk, geom.n_cand, float(tol))
    return out if with_margin else out[:6]


# ---------------------------------------------------------------------------
# constrained flights: the address of the next collision is known
# ---------------------------------------------------------------------------


@njit
def _follow_nb(disk, r, phi, addrs, radius, cand_x, cand_y, cand_r, cand_disk):
    """Apply the collision map along prescribed addresses (one row per point).

    Used to re-evaluate T^n inside a continuity piece whose itinerary is known;
    returns NaN when the prescribed translate is missed.
    """
    n, depth = addrs.shape
    od = disk.copy()
    orr = r.copy()
    op = phi.copy()
    for k in range(n):
        i = od[k]
        rk = orr[k]
        pk = op[k]
        for s in range(depth):
            m = addrs[k, s]
            rho = radius[i]
            th = -rk / rho
            nx = math.cos(th)
            ny = math.sin(th)
            cp = math.cos(pk)
            sp = math.sin(pk)
            vx = cp * nx + sp * ny
            vy = cp * ny - sp * nx
            px = rho * nx
            py = rho * ny
            wx = cand_x[i, m] - px
            wy = cand_y[i, m] - py
            b = wx * vx + wy * vy
            R = cand_r[i, m]
            perp = abs(wx * vy - wy * vx)
            if b <= 0.0 or perp > R:
                rk = np.nan
                pk = np.nan
                break
            t = b - math.sqrt((R - perp) * (R + perp))
            qx = px + t * vx - cand_x[i, m]
            qy = py + t * vy - cand_y[i, m]
            mx = qx / R
            my = qy / R
            dot = vx * mx + vy * my
            wx2 = vx - 2.0 * dot * mx
            wy2 = vy - 2.0 * dot * my
            c2 = wx2 * mx + wy2 * my
            s2 = wx2 * my - wy2 * mx
            th2 = math.atan2(my, mx)
            per = 2.0 * math.pi * R
            rk = (-th2 * R) % per
            if rk >= per:
                rk -= per
            pk = math.atan2(s2, c2)
            i = cand_disk[i, m]
        od[k] = i
        orr[k] = rk
        op[k] = pk
    return od, orr, op


def _follow_np(disk, r, phi, addrs, radius, cand_x, cand_y, cand_r, cand_disk):
    n, depth = addrs.shape
    i = disk.copy()
    rk = r.copy()
    pk = phi.copy()
    for s in range(depth):
        m = addrs[:, s]
        rho = radius[i]
        th = -rk / rho
        nx = np.cos(th)
        ny = np.sin(th)
        cp = np.cos(pk)
        sp = np.sin(pk)
        vx = cp * nx + sp * ny
        vy = cp * ny - sp * nx
        px = rho * nx
        py = rho * ny
        cx = cand_x[i, m]
        cy = cand_y[i, m]
        R = cand_r[i, m]
        wx = cx - px
        wy = cy - py
        b = wx * vx + wy * vy
        perp = np.abs(wx * vy - wy * vx)
        bad = (b <= 0.0) | (perp > R) | np.isnan(rk)
        with np.errstate(invalid="ignore"):
            t = b - np.sqrt((R - perp) * (R + perp))
            qx = px + t * vx - cx
            qy = py + t * vy - cy
            mx = qx / R
            my = qy / R
            dot = vx * mx + vy * my
            wx2 = vx - 2.0 * dot * mx
            wy2 = vy - 2.0 * dot * my
            c2 = wx2 * mx + wy2 * my
            s2 = wx2 * my - wy2 * mx
            th2 = np.arctan2(my, mx)
            per = 2.0 * np.pi * R
            rn = np.mod(-th2 * R, per)
            rn = np.where(rn >= per, rn - per, rn)
            pn = np.arctan2(s2, c2)
        rk = np.where(bad, np.nan, rn)
        pk = np.where(bad, np.nan, pn)
        i = np.where(bad, i, cand_disk[i, m])
    return i, rk, pk


def follow(geom, disk, r, phi, addrs):
    disk = np.ascontiguousarray(disk, dtype=np.int64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    addrs = np.ascontiguousarray(addrs, dtype=np.int64)
    if addrs.shape[1] == 0:
        return disk.copy(), r.copy(), phi.copy()
    fn = _follow_nb if _accel.USE_NUMBA else _follow_np
    return fn(disk, r, phi, addrs, geom.radius, geom.cand_x, geom.cand_y, geom.cand_r,
              geom.cand_disk)


# ---------------------------------------------------------------------------
# renewal chain: expand excursion lengths into a node path
# ---------------------------------------------------------------------------


@njit
def _expand_nb(first_node, lengths, total):
    """Node sequence of a path made of a partial excursion then full ones.

    The partial excursion starts at ``first_node`` and returns after reaching
    node ``lengths[0]``; every later excursion starts at node 1.
    """
    node = np.empty(total, np.int64)
    ret = np.zeros(total, np.bool_)
    pos = 0
    start = first_node
    for e in range(lengths.shape[0]):
        top = lengths[e]
        v = start
        while v <= top and pos < total:
            node[pos] = v
            if v == top:
                ret[pos] = True
            pos += 1
            v += 1
        start = 1
        if pos >= total:
            break
    return node, ret


def _expand_np(first_node, lengths, total):
    starts = np.ones(lengths.shape[0], np.int64)
    starts[0] = first_node
    counts = lengths - starts + 1
    ends = np.cumsum(counts)
    n_used = int(np.searchsorted(ends, total)) + 1
    n_used = min(n_used, lengths.shape[0])
    counts = counts[:n_used]
    starts = starts[:n_used]
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    idx = np.arange(int(counts.sum()), dtype=np.int64)
    seg = np.repeat(np.arange(n_used), counts)
    node = starts[seg] + (idx - offsets[seg])
    ret = np.zeros(node.shape[0], np.bool_)
    ret[np.cumsum(counts) - 1] = True
    return node[:total].copy(), ret[:total].copy()


def expand_excursions(first_node, lengths, total):
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    fn = _expand_nb if _accel.USE_NUMBA else _expand_np
    return fn(int(first_node), lengths, int(total))


# ---------------------------------------------------------------------------
# lagged products, batch-summed (correlation estimator)
# ---------------------------------------------------------------------------


@njit
def _lag_batches_nb(u, v, lags, n_eff, n_batches):
    out = np.zeros((lags.shape[0], n_batches))
    size = n_eff // n_batches
    for a in range(lags.shape[0]):
        L = lags[a]
        for b in range(n_batches):
            s = 0.0
            base = b * size
            for k in range(base, base + size):
                s += u[k] * v[k + L]
            out[a, b] = s / size
    return out


def _lag_batches_np(u, v, lags, n_eff, n_batches):
    size = n_eff // n_batches
    m = size * n_batches
    out = np.empty((lags.shape[0], n_batches))
    uu = u[:m].reshape(n_batches, size)
    for a, L in enumerate(lags):
        vv = v[L:L + m].reshape(n_batches, size)
        out[a] = np.einsum("ij,ij->i", uu, vv) / size
    return out


def lag_batch_means(u, v, lags, n_batches):
    """Batch means of u[k] v[k+L] over k < len - max(lags), one row per lag."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    lags = np.ascontiguousarray(lags, dtype=np.int64)
    n_eff = u.shape[0] - int(lags.max(initial=0))
    fn = _lag_batches_nb if _accel.USE_NUMBA else _lag_batches_np
    return fn(u, v, lags, n_eff, int(n_batches))
