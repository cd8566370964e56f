"""Compiled inner loops for the per-frame hot path.

Each kernel has a plain numpy counterpart elsewhere in the package that
defines its behaviour; the tests check the two against each other.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@njit(cache=True, inline="always")
def popcount64(v):
    v = v - ((v >> np.uint64(1)) & _M1)
    v = (v & _M2) + ((v >> np.uint64(2)) & _M2)
    v = (v + (v >> np.uint64(4))) & _M4
    return np.int64((v * _H01) >> np.uint64(56))


# ---------------------------------------------------------------------------
# descriptor matching
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sort_pairs(cost, dist, qi, cj):
    """Order of pairs by (cost, dist, qi, cj), given pairs already sorted by (qi, cj)."""
    # dist < 8, so the combined key orders by cost first
    key = cost * 8.0 + dist
    return np.argsort(key, kind="mergesort")


BUCKET = 16


@njit(cache=True)
def _candidates(qx, qy, qdesc, cx, cy, cdesc, start, members, gw, gh, radius, max_hamming, pq, pc, ph, pd):
    """Fill the pair buffers; returns the pair count or -1 when they overflow.

    Corners are bucketed on a coarse grid (``start``/``members`` in CSR
    layout, ascending corner index within a bucket).
    """
    cap = len(pq)
    n = 0
    r2 = radius * radius
    m = qdesc.shape[1]
    for i in range(len(qx)):
        first = n
        bx0 = max(int(np.floor((qx[i] - radius) / BUCKET)), 0)
        bx1 = min(int(np.floor((qx[i] + radius) / BUCKET)), gw - 1)
        by0 = max(int(np.floor((qy[i] - radius) / BUCKET)), 0)
        by1 = min(int(np.floor((qy[i] + radius) / BUCKET)), gh - 1)
        for by in range(by0, by1 + 1):
            for bx in range(bx0, bx1 + 1):
                cell = by * gw + bx
                for s in range(start[cell], start[cell + 1]):
                    j = members[s]
                    dx = cx[j] - qx[i]
                    dy = cy[j] - qy[i]
                    d2 = dx * dx + dy * dy
                    if d2 > r2:
                        continue
                    best = 65
                    for k in range(m):
                        h = popcount64(qdesc[i, k] ^ cdesc[j])
                        if h < best:
                            best = h
                    if best <= max_hamming:
                        if n == cap:
                            return -1
                        pq[n] = i
                        pc[n] = j
                        ph[n] = best
                        pd[n] = np.sqrt(d2)
                        n += 1
        # insertion sort of this query's pairs by corner index
        for a in range(first + 1, n):
            c, h, d = pc[a], ph[a], pd[a]
            b = a - 1
            while b >= first and pc[b] > c:
                pc[b + 1], ph[b + 1], pd[b + 1] = pc[b], ph[b], pd[b]
                b -= 1
            pc[b + 1], ph[b + 1], pd[b + 1] = c, h, d
    return n


@njit(cache=True)
def match_kernel(qx, qy, qdesc, cx, cy, cdesc, radius, max_hamming, priority, width, height):
    """Radius search, Hamming gate and greedy one-to-one assignment.

    ``qdesc`` is (Q, M); a candidate scores the smallest distance to any of
    a query's M descriptors. Corner positions must lie inside ``width`` x
    ``height``. Returns (qi, cj, ham) sorted by query index.
    """
    nq, nc = len(qx), len(cx)
    gw = (width + BUCKET - 1) // BUCKET
    gh = (height + BUCKET - 1) // BUCKET
    bucket = np.empty(nc, dtype=np.int64)
    start = np.zeros(gw * gh + 1, dtype=np.int64)
    for j in range(nc):
        b = (int(cy[j]) // BUCKET) * gw + int(cx[j]) // BUCKET
        bucket[j] = b
        start[b + 1] += 1
    for b in range(gw * gh):
        start[b + 1] += start[b]
    fill = start[:-1].copy()
    members = np.empty(nc, dtype=np.int64)
    for j in range(nc):
        members[fill[bucket[j]]] = j
        fill[bucket[j]] += 1
    fx = cx.astype(np.float64)
    fy = cy.astype(np.float64)

    cap = 4 * (nq + 16)
    while True:
        pq = np.empty(cap, dtype=np.int64)
        pc = np.empty(cap, dtype=np.int64)
        ph = np.empty(cap, dtype=np.int64)
        pd = np.empty(cap, dtype=np.float64)
        n = _candidates(qx, qy, qdesc, fx, fy, cdesc, start, members, gw, gh, radius, max_hamming, pq, pc, ph, pd)
        if n >= 0:
            break
        cap *= 4

    pq, pc, ph, pd = pq[:n], pc[:n], ph[:n], pd[:n]
    cost = ph + (max_hamming + 1) * priority[pq]
    order = _sort_pairs(cost, pd, pq, pc)
    taken_q = np.zeros(nq, dtype=np.bool_)
    taken_c = np.zeros(nc, dtype=np.bool_)
    accepted = np.zeros(n, dtype=np.bool_)
    for k in order:
        if not taken_q[pq[k]] and not taken_c[pc[k]]:
            taken_q[pq[k]] = True
            taken_c[pc[k]] = True
            accepted[k] = True
    # pairs were generated in (query, corner) order
    sel = np.flatnonzero(accepted)
    return pq[sel], pc[sel], ph[sel]


# ---------------------------------------------------------------------------
# pose refinement
# ---------------------------------------------------------------------------

LAMBDA_INIT = 1e-4
LAMBDA_STEP = 10.0
LAMBDA_MAX = 1e12


@njit(cache=True)
def _so3_exp(w):
    theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    theta = np.sqrt(theta2)
    if theta < 1e-8:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    K = np.zeros((3, 3))
    K[0, 1], K[0, 2] = -w[2], w[1]
    K[1, 0], K[1, 2] = w[2], -w[0]
    K[2, 0], K[2, 1] = -w[1], w[0]
    return np.eye(3) + a * K + b * (K @ K)


@njit(cache=True)
def _residuals(R, t, P, uv, fx, fy, cx, cy, out):
    for i in range(len(P)):
        X = R[0, 0] * P[i, 0] + R[0, 1] * P[i, 1] + R[0, 2] * P[i, 2] + t[0]
        Y = R[1, 0] * P[i, 0] + R[1, 1] * P[i, 1] + R[1, 2] * P[i, 2] + t[1]
        Z = R[2, 0] * P[i, 0] + R[2, 1] * P[i, 1] + R[2, 2] * P[i, 2] + t[2]
        zi = 1.0 / Z
        out[i, 0] = fx * X * zi + cx - uv[i, 0]
        out[i, 1] = fy * Y * zi + cy - uv[i, 1]


@njit(cache=True)
def _robust_cost(r, delta):
    d2 = delta * delta
    c = 0.0
    for i in range(len(r)):
        s = r[i, 0] * r[i, 0] + r[i, 1] * r[i, 1]
        c += s if s <= d2 else 2.0 * delta * np.sqrt(s) - d2
    return 0.5 * c


@njit(cache=True)
def _normal_equations(R, t, P, r, fx, fy, delta, H, g):
    H[:] = 0.0
    g[:] = 0.0
    d2 = delta * delta
    J = np.empty((2, 6))
    for i in range(len(P)):
        X = R[0, 0] * P[i, 0] + R[0, 1] * P[i, 1] + R[0, 2] * P[i, 2] + t[0]
        Y = R[1, 0] * P[i, 0] + R[1, 1] * P[i, 1] + R[1, 2] * P[i, 2] + t[1]
        Z = R[2, 0] * P[i, 0] + R[2, 1] * P[i, 1] + R[2, 2] * P[i, 2] + t[2]
        zi = 1.0 / Z
        xz, yz = X * zi, Y * zi
        J[0, 0] = -fx * xz * yz
        J[0, 1] = fx * (1.0 + xz * xz)
        J[0, 2] = -fx * yz
        J[0, 3] = fx * zi
        J[0, 4] = 0.0
        J[0, 5] = -fx * xz * zi
        J[1, 0] = -fy * (1.0 + yz * yz)
        J[1, 1] = fy * xz * yz
        J[1, 2] = fy * xz
        J[1, 3] = 0.0
        J[1, 4] = fy * zi
        J[1, 5] = -fy * yz * zi
        s = r[i, 0] * r[i, 0] + r[i, 1] * r[i, 1]
        w = 1.0 if s <= d2 else delta / np.sqrt(s)
        for a in range(6):
            ga = J[0, a] * r[i, 0] + J[1, a] * r[i, 1]
            g[a] += w * ga
            for b in range(a, 6):
                H[a, b] += w * (J[0, a] * J[0, b] + J[1, a] * J[1, b])
    for a in range(6):
        for b in range(a):
            H[a, b] = H[b, a]


@njit(cache=True)
def _solve6(A, b):
    """Gaussian elimination with partial pivoting; returns (x, ok)."""
    n = 6
    M = A.copy()
    x = b.copy()
    scale = 0.0
    for a in range(n):
        for c in range(n):
            scale = max(scale, abs(M[a, c]))
    for k in range(n):
        p = k
        for a in range(k + 1, n):
            if abs(M[a, k]) > abs(M[p, k]):
                p = a
        if not abs(M[p, k]) > 1e-300 + 1e-15 * scale:
            return x, False
        if p != k:
            for c in range(n):
                M[k, c], M[p, c] = M[p, c], M[k, c]
            x[k], x[p] = x[p], x[k]
        for a in range(k + 1, n):
            f = M[a, k] / M[k, k]
            for c in range(k, n):
                M[a, c] -= f * M[k, c]
            x[a] -= f * x[k]
    for k in range(n - 1, -1, -1):
        acc = x[k]
        for c in range(k + 1, n):
            acc -= M[k, c] * x[c]
        x[k] = acc / M[k, k]
    for k in range(n):
        if not np.isfinite(x[k]):
            return x, False
    return x, True


@njit(cache=True)
def pose_lm_kernel(R0, t0, P, uv, fx, fy, cx, cy, delta, max_iters, rel_tol, step_tol):
    """Huber-robust LM on a camera pose with left increments.

    Same schedule as the generic solver: one linear solve per iteration,
    damping ``lambda * diag(H)`` starting at 1e-4, x10 on rejection and /10
    on acceptance. Returns (R, t, cost, initial_cost, iterations, status,
    history) with status 0 = converged, 1 = iteration cap, 2 = singular.
    """
    R = R0.copy()
    t = t0.copy()
    n = len(P)
    r = np.empty((n, 2))
    r_new = np.empty((n, 2))
    _residuals(R, t, P, uv, fx, fy, cx, cy, r)
    cost = _robust_cost(r, delta)
    initial = cost
    history = np.empty(max_iters + 1)
    history[0] = cost
    nh = 1
    lam = LAMBDA_INIT
    H = np.empty((6, 6))
    g = np.empty(6)
    diag = np.empty(6)
    relinearise = True
    converged = cost == 0.0
    it = 0
    while it < max_iters and not converged:
        if relinearise:
            _normal_equations(R, t, P, r, fx, fy, delta, H, g)
            for a in range(6):
                diag[a] = max(H[a, a], 1e-12)
            relinearise = False
        it += 1
        A = H.copy()
        for a in range(6):
            A[a, a] += lam * diag[a]
        dx, ok = _solve6(A, -g)
        if not ok:
            lam *= LAMBDA_STEP
            if lam > LAMBDA_MAX:
                return R, t, cost, initial, it, 2, history[:nh]
            continue
        dR = _so3_exp(dx[:3])
        R_new = dR @ R
        t_new = dR @ t + dx[3:]
        _residuals(R_new, t_new, P, uv, fx, fy, cx, cy, r_new)
        cost_new = _robust_cost(r_new, delta)
        step = np.sqrt(np.sum(dx * dx))
        if np.isfinite(cost_new) and cost_new < cost:
            decrease = cost - cost_new
            R, t = R_new, t_new
            r, r_new = r_new, r
            prev = cost
            cost = cost_new
            history[nh] = cost
            nh += 1
            lam = max(lam / LAMBDA_STEP, 1e-15)
            relinearise = True
            if cost == 0.0 or decrease < rel_tol * prev or step < step_tol:
                converged = True
        else:
            if step < step_tol:
                converged = True
                break
            lam *= LAMBDA_STEP
            if lam > LAMBDA_MAX:
                converged = True
                break
    return R, t, cost, initial, it, 0 if converged else 1, history[:nh]
