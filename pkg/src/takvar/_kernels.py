"""Compiled inner loops.

Everything here works on raw compressed-column arrays (``p`` column pointers,
``i`` row indices, ``x`` values). Factor columns store the diagonal first,
followed by the strictly-lower entries in increasing row order.

Multiplicative-operation tallies count multiplications and divisions done in
floating point; a reciprocal of a factor diagonal computed once during
factorization is reused, never recomputed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


# --------------------------------------------------------------------------
# ordering
# --------------------------------------------------------------------------


@njit(**_JIT)
def _bfs_levels(start, ap, ai, mark, stamp, queue, level):
    """Level structure from ``start``; returns (count, eccentricity)."""
    head = 0
    tail = 1
    queue[0] = start
    mark[start] = stamp
    level[start] = 0
    ecc = 0
    while head < tail:
        v = queue[head]
        head += 1
        for q in range(ap[v], ap[v + 1]):
            w = ai[q]
            if w != v and mark[w] != stamp:
                mark[w] = stamp
                level[w] = level[v] + 1
                if level[w] > ecc:
                    ecc = level[w]
                queue[tail] = w
                tail += 1
    return tail, ecc


@njit(**_JIT)
def rcm(n, ap, ai):
    deg = np.zeros(n, dtype=np.int64)
    for v in range(n):
        for q in range(ap[v], ap[v + 1]):
            if ai[q] != v:
                deg[v] += 1
    mark = np.full(n, -1, dtype=np.int64)
    level = np.zeros(n, dtype=np.int64)
    queue = np.zeros(n, dtype=np.int64)
    visited = np.zeros(n, dtype=np.bool_)
    order = np.zeros(n, dtype=np.int64)
    nbr = np.zeros(n, dtype=np.int64)
    stamp = 0
    out = 0
    for seed in range(n):
        if visited[seed]:
            continue
        # component and its lowest-index minimum-degree vertex
        cnt, ecc = _bfs_levels(seed, ap, ai, mark, stamp, queue, level)
        stamp += 1
        start = seed
        for t in range(cnt):
            v = queue[t]
            if deg[v] < deg[start] or (deg[v] == deg[start] and v < start):
                start = v
        # pseudo-peripheral refinement
        cnt, ecc = _bfs_levels(start, ap, ai, mark, stamp, queue, level)
        stamp += 1
        while True:
            cand = -1
            for t in range(cnt):
                v = queue[t]
                if level[v] == ecc:
                    if cand < 0 or deg[v] < deg[cand] or (deg[v] == deg[cand] and v < cand):
                        cand = v
            cnt2, ecc2 = _bfs_levels(cand, ap, ai, mark, stamp, queue, level)
            stamp += 1
            if ecc2 > ecc:
                start = cand
                cnt, ecc = cnt2, ecc2
            else:
                break
        # Cuthill-McKee sweep
        head = out
        order[out] = start
        out += 1
        visited[start] = True
        while head < out:
            v = order[head]
            head += 1
            k = 0
            for q in range(ap[v], ap[v + 1]):
                w = ai[q]
                if not visited[w]:
                    visited[w] = True
                    nbr[k] = deg[w] * n + w
                    k += 1
            # insertion sort: neighbour lists are short
            for t in range(1, k):
                key = nbr[t]
                u = t - 1
                while u >= 0 and nbr[u] > key:
                    nbr[u + 1] = nbr[u]
                    u -= 1
                nbr[u + 1] = key
            for t in range(k):
                order[out] = nbr[t] % n
                out += 1
    return order[::-1].copy()


@njit(**_JIT)
def pattern_flags(n, ap, ai):
    """(symmetric, full diagonal) for a square pattern with sorted columns."""
    full_diag = True
    symmetric = True
    for j in range(n):
        has_diag = False
        for q in range(ap[j], ap[j + 1]):
            i = ai[q]
            if i == j:
                has_diag = True
            elif symmetric and _find(ap, ai, i, j) < 0:
                symmetric = False
        if not has_diag:
            full_diag = False
    return symmetric, full_diag


@njit(**_JIT)
def symperm_upper(n, ap, ai, ax, pinv):
    """Upper triangle of ``C = P A P^T`` from the upper entries of symmetric ``A``.

    Row indices inside a column of the result are not sorted.
    """
    count = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        for q in range(ap[j], ap[j + 1]):
            i = ai[q]
            if i > j:
                continue
            i2 = pinv[i]
            j2 = pinv[j]
            count[max(i2, j2) + 1] += 1
    for j in range(n):
        count[j + 1] += count[j]
    cp = count.copy()
    nxt = count[:n].copy()
    ci = np.zeros(cp[n], dtype=np.int64)
    cx = np.zeros(cp[n])
    for j in range(n):
        for q in range(ap[j], ap[j + 1]):
            i = ai[q]
            if i > j:
                continue
            i2 = pinv[i]
            j2 = pinv[j]
            c = max(i2, j2)
            ci[nxt[c]] = min(i2, j2)
            cx[nxt[c]] = ax[q]
            nxt[c] += 1
    return cp, ci, cx


@njit(**_JIT)
def permuted_bandwidth(n, ap, ai, pinv):
    b = 0
    for j in range(n):
        for q in range(ap[j], ap[j + 1]):
            d = abs(pinv[ai[q]] - pinv[j])
            if d > b:
                b = d
    return b


# --------------------------------------------------------------------------
# symbolic analysis
# --------------------------------------------------------------------------


@njit(**_JIT)
def etree(n, cp, ci):
    """Elimination tree of a symmetric matrix from its upper triangle."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for q in range(cp[k], cp[k + 1]):
            i = ci[q]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(**_JIT)
def _ereach(k, cp, ci, parent, stack, mark):
    """Pattern of row ``k`` of L (columns j < k) in topological order.

    Returns ``top``; the pattern is ``stack[top:n]``.
    """
    n = parent.size
    top = n
    mark[k] = k
    for q in range(cp[k], cp[k + 1]):
        i = ci[q]
        if i > k:
            continue
        length = 0
        while mark[i] != k:
            stack[length] = i
            length += 1
            mark[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            stack[top] = stack[length]
    return top


@njit(**_JIT)
def symbolic(n, cp, ci, parent):
    """Column pointers and row indices of the factor pattern."""
    stack = np.zeros(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, cp, ci, parent, stack, mark)
        for t in range(top, n):
            counts[stack[t]] += 1
    lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        lp[j + 1] = lp[j] + counts[j]
    li = np.zeros(lp[n], dtype=np.int64)
    nxt = lp[:n].copy()
    for j in range(n):
        li[nxt[j]] = j
        nxt[j] += 1
    mark[:] = -1
    for k in range(n):
        top = _ereach(k, cp, ci, parent, stack, mark)
        for t in range(top, n):
            j = stack[t]
            li[nxt[j]] = k
            nxt[j] += 1
    return lp, li


# --------------------------------------------------------------------------
# numeric factorization (up-looking)
# --------------------------------------------------------------------------


@njit(**_JIT)
def cholesky(n, cp, ci, cx, parent, lp, li, tol):
    """Fill ``lx`` on the symbolic pattern; returns (lx, inv_diag, status, ops).

    ``status`` is -1 on success, ``k >= 0`` for a failing pivot at ``k``, and
    ``-2 - k`` if row ``k`` of the matrix does not fit the symbolic pattern.
    Stored values are written at every symbolic position, including those
    that come out as zero.
    """
    lx = np.zeros(lp[n])
    inv_diag = np.zeros(n)
    nxt = lp[:n] + 1
    x = np.zeros(n)
    stack = np.zeros(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    ops = 0
    for k in range(n):
        top = _ereach(k, cp, ci, parent, stack, mark)
        x[k] = 0.0
        for q in range(cp[k], cp[k + 1]):
            i = ci[q]
            if i <= k:
                x[i] = cx[q]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = stack[t]
            lki = x[i] * inv_diag[i]
            x[i] = 0.0
            for q in range(lp[i] + 1, nxt[i]):
                x[li[q]] -= lx[q] * lki
            ops += 1 + (nxt[i] - lp[i] - 1) + 1
            d -= lki * lki
            if nxt[i] >= lp[i + 1] or li[nxt[i]] != k:
                return lx, inv_diag, -2 - k, ops
            lx[nxt[i]] = lki
            nxt[i] += 1
        if not d > tol:
            return lx, inv_diag, k, ops
        lkk = np.sqrt(d)
        lx[lp[k]] = lkk
        inv_diag[k] = 1.0 / lkk
        ops += 1
    return lx, inv_diag, -1, ops


# --------------------------------------------------------------------------
# triangular solves on dense right-hand-side blocks (n x w, row-major)
# --------------------------------------------------------------------------


@njit(**_JIT)
def forward_block(lp, li, lx, inv_diag, g, start):
    """Overwrite ``g`` with the trailing rows of ``L^{-1} rhs``.

    ``g`` holds rows ``start..n-1`` of a right-hand side whose earlier rows
    are zero (local row ``r`` is global row ``start + r``).
    """
    n = inv_diag.size
    w = g.shape[1]
    ops = 0
    for j in range(start, n):
        jj = j - start
        s = inv_diag[j]
        for c in range(w):
            g[jj, c] *= s
        for q in range(lp[j] + 1, lp[j + 1]):
            r = li[q] - start
            v = lx[q]
            for c in range(w):
                g[r, c] -= v * g[jj, c]
        ops += w * (lp[j + 1] - lp[j])
    return ops


@njit(**_JIT)
def backward_block(lp, li, lx, inv_diag, v):
    """Overwrite ``v`` with ``L^{-T} v``."""
    n = inv_diag.size
    w = v.shape[1]
    ops = 0
    for j in range(n - 1, -1, -1):
        for q in range(lp[j] + 1, lp[j + 1]):
            r = li[q]
            val = lx[q]
            for c in range(w):
                v[j, c] -= val * v[r, c]
        s = inv_diag[j]
        for c in range(w):
            v[j, c] *= s
        ops += w * (lp[j + 1] - lp[j])
    return ops


@njit(**_JIT)
def column_sumsq(g, out):
    """``out[c] = sum_r g[r, c]^2``; returns the op count."""
    n, w = g.shape
    for c in range(w):
        out[c] = 0.0
    for r in range(n):
        for c in range(w):
            out[c] += g[r, c] * g[r, c]
    return w * n


# --------------------------------------------------------------------------
# sparse inverse subset
# --------------------------------------------------------------------------


@njit(**_JIT)
def _find(lp, li, col, row):
    """Position of (row, col) in the factor pattern, or -1."""
    lo = lp[col]
    hi = lp[col + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        r = li[mid]
        if r == row:
            return mid
        if r < row:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


@njit(**_JIT)
def takahashi(lp, li, lx, inv_diag):
    """Inverse entries on the factor pattern, lower triangle, aligned to ``li``.

    Sweeps columns from last to first. Returns (sx, status, ops); status is
    -1 on success, or the column at which a needed entry was missing.
    """
    n = inv_diag.size
    sx = np.zeros(lp[n])
    ops = 0
    for i in range(n - 1, -1, -1):
        d0 = lp[i]
        d1 = lp[i + 1]
        inv = inv_diag[i]
        # off-diagonal terms, descending row order
        for qj in range(d1 - 1, d0, -1):
            j = li[qj]
            acc = 0.0
            for qk in range(d0 + 1, d1):
                k = li[qk]
                if k >= j:
                    pos = _find(lp, li, j, k)
                else:
                    pos = _find(lp, li, k, j)
                if pos < 0:
                    return sx, i, ops
                acc += lx[qk] * sx[pos]
            sx[qj] = -inv * acc
            ops += (d1 - d0 - 1) + 1
        # diagonal term: inv * (inv - sum_k L_ki S_ki)
        acc = 0.0
        for qk in range(d0 + 1, d1):
            acc += lx[qk] * sx[qk]
        sx[d0] = inv * (inv - acc)
        ops += (d1 - d0 - 1) + 1
    return sx, -1, ops


@njit(**_JIT)
def hadamard_rows(ap, ai, ax, lp, li, sx, out):
    """``out = (A o (A S))1`` over the rows of ``A`` given in CSR form.

    Only the entries of ``A S`` that meet a nonzero of ``A`` are formed.
    Entries of S outside the stored subset are read as zero; returns
    (ops, missing) where ``missing`` counts such reads.
    """
    nrow = out.size
    ops = 0
    missing = 0
    for r in range(nrow):
        total = 0.0
        for qb in range(ap[r], ap[r + 1]):
            cb = ai[qb]
            acc = 0.0
            for qa in range(ap[r], ap[r + 1]):
                ca = ai[qa]
                if ca >= cb:
                    pos = _find(lp, li, cb, ca)
                else:
                    pos = _find(lp, li, ca, cb)
                if pos >= 0:
                    acc += ax[qa] * sx[pos]
                else:
                    missing += 1
            total += ax[qb] * acc
        k = ap[r + 1] - ap[r]
        ops += k * k + k
        out[r] = total
    return ops, missing
