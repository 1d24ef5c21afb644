# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: periodic cubic B-spline shifts and a transportation
network simplex.  The pure-Python twin lives in ``_pykernels``."""

import numpy as np
from libc.math cimport floor


cdef inline void _bspline_weights(double t, double* w) nogil:
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    cdef double s = 1.0 - t
    w[0] = s * s * s / 6.0
    w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w[3] = t3 / 6.0


def shift_rows(const double[:, ::1] coef, const double[::1] shifts):
    """out[i, j] = spline_i(j - shifts[i]) for B-spline coefficients ``coef``."""
    cdef Py_ssize_t m = coef.shape[0]
    cdef Py_ssize_t n = coef.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double w[4]
    cdef double s
    cdef long off, base, i0, i1, i2, i3
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            s = -shifts[i]
            off = <long>floor(s)
            _bspline_weights(s - off, w)
            base = ((off - 1) % n + n) % n
            i0 = base
            i1 = i0 + 1
            if i1 >= n:
                i1 -= n
            i2 = i1 + 1
            if i2 >= n:
                i2 -= n
            i3 = i2 + 1
            if i3 >= n:
                i3 -= n
            for j in range(n):
                o[i, j] = (w[0] * coef[i, i0] + w[1] * coef[i, i1]
                           + w[2] * coef[i, i2] + w[3] * coef[i, i3])
                i0 += 1
                if i0 == n:
                    i0 = 0
                i1 += 1
                if i1 == n:
                    i1 = 0
                i2 += 1
                if i2 == n:
                    i2 = 0
                i3 += 1
                if i3 == n:
                    i3 = 0
    return out


def eval_points(const double[::1] coef, const double[::1] pos):
    """Evaluate a periodic cubic spline at fractional grid positions."""
    cdef Py_ssize_t n = coef.shape[0]
    cdef Py_ssize_t npts = pos.shape[0]
    out = np.empty(npts, dtype=np.float64)
    cdef double[::1] o = out
    cdef double w[4]
    cdef long off, b
    cdef Py_ssize_t k, r
    cdef double acc
    with nogil:
        for k in range(npts):
            off = <long>floor(pos[k])
            _bspline_weights(pos[k] - off, w)
            b = ((off - 1) % n + n) % n
            acc = 0.0
            for r in range(4):
                acc = acc + w[r] * coef[b]
                b += 1
                if b == n:
                    b = 0
            o[k] = acc
    return out


def network_simplex(const double[::1] a, const double[::1] b,
                    const double[:, ::1] C, long max_iter, double tol):
    """Solve min <P, C> over transport plans with marginals a, b.

    Returns (rows, cols, flows, u, v, iterations, converged) where the
    basic arcs with positive flow describe the plan and u, v are the dual
    potentials of the final basis.
    """
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t N = m + n
    cdef Py_ssize_t nb = N - 1
    arc_i_np = np.zeros(nb, dtype=np.int64)
    arc_j_np = np.zeros(nb, dtype=np.int64)
    flow_np = np.zeros(nb, dtype=np.float64)
    cdef long[::1] arc_i = arc_i_np
    cdef long[::1] arc_j = arc_j_np
    cdef double[::1] flow = flow_np

    # northwest corner start
    sup_np = np.array(a, dtype=np.float64)
    dem_np = np.array(b, dtype=np.float64) * (np.sum(a) / np.sum(b))
    cdef double[::1] sup = sup_np
    cdef double[::1] dem = dem_np
    cdef Py_ssize_t i = 0, j = 0, k = 0
    cdef double q
    while k < nb:
        q = sup[i] if sup[i] < dem[j] else dem[j]
        arc_i[k] = i
        arc_j[k] = j
        flow[k] = q
        sup[i] -= q
        dem[j] -= q
        k += 1
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif sup[i] <= dem[j]:
            i += 1
        else:
            j += 1

    head_np = np.empty(N, dtype=np.int64)
    nxt_np = np.empty(2 * nb, dtype=np.int64)
    adj_arc_np = np.empty(2 * nb, dtype=np.int64)
    adj_node_np = np.empty(2 * nb, dtype=np.int64)
    parent_np = np.empty(N, dtype=np.int64)
    parc_np = np.empty(N, dtype=np.int64)
    depth_np = np.empty(N, dtype=np.int64)
    pot_np = np.empty(N, dtype=np.float64)
    queue_np = np.empty(N, dtype=np.int64)
    lista_np = np.empty(N, dtype=np.int64)
    listb_np = np.empty(N, dtype=np.int64)
    cdef long[::1] head = head_np
    cdef long[::1] nxt = nxt_np
    cdef long[::1] adj_arc = adj_arc_np
    cdef long[::1] adj_node = adj_node_np
    cdef long[::1] parent = parent_np
    cdef long[::1] parc = parc_np
    cdef long[::1] depth = depth_np
    cdef double[::1] pot = pot_np
    cdef long[::1] queue = queue_np
    cdef long[::1] lista = lista_np
    cdef long[::1] listb = listb_np

    cdef Py_ssize_t total = m * n
    cdef Py_ssize_t block = <Py_ssize_t>(total ** 0.5)
    if block < 32:
        block = 32
    if block > total:
        block = total
    cdef Py_ssize_t cursor = 0, scanned, inblock, cell, best_cell
    cdef double best, rc, theta
    cdef long it = 0, node, e, other, qh, qt, na, nbl, x, y, leave, ci, cj
    cdef long pi, pq
    cdef bint converged = False, found

    while it < max_iter:
        # rebuild tree structure and potentials
        for node in range(N):
            head[node] = -1
        for k in range(nb):
            x = arc_i[k]
            y = m + arc_j[k]
            adj_arc[2 * k] = k
            adj_node[2 * k] = y
            nxt[2 * k] = head[x]
            head[x] = 2 * k
            adj_arc[2 * k + 1] = k
            adj_node[2 * k + 1] = x
            nxt[2 * k + 1] = head[y]
            head[y] = 2 * k + 1
        parent[0] = -1
        parc[0] = -1
        depth[0] = 0
        pot[0] = 0.0
        for node in range(1, N):
            depth[node] = -1
        queue[0] = 0
        qh = 0
        qt = 1
        while qh < qt:
            node = queue[qh]
            qh += 1
            e = head[node]
            while e != -1:
                other = adj_node[e]
                if depth[other] < 0 and other != 0:
                    depth[other] = depth[node] + 1
                    parent[other] = node
                    k = adj_arc[e]
                    parc[other] = k
                    # u_i + v_j = C_ij
                    pot[other] = C[arc_i[k], arc_j[k]] - pot[node]
                    queue[qt] = other
                    qt += 1
                e = nxt[e]

        # block pricing
        best = -tol
        best_cell = -1
        scanned = 0
        found = False
        while scanned < total and not found:
            inblock = 0
            while inblock < block and scanned < total:
                ci = cursor // n
                cj = cursor - ci * n
                rc = C[ci, cj] - pot[ci] - pot[m + cj]
                if rc < best:
                    best = rc
                    best_cell = cursor
                cursor += 1
                if cursor == total:
                    cursor = 0
                inblock += 1
                scanned += 1
            if best_cell >= 0:
                found = True
        if not found:
            converged = True
            break

        pi = best_cell // n
        pq = best_cell - pi * n
        # cycle through the tree between row pi and column pq
        x = pi
        y = m + pq
        na = 0
        nbl = 0
        while x != y:
            if depth[x] >= depth[y]:
                lista[na] = x
                na += 1
                x = parent[x]
            else:
                listb[nbl] = y
                nbl += 1
                y = parent[y]
        theta = -1.0
        for k in range(nbl):
            node = listb[k]
            if node >= m:  # child is a column: traversed col -> row
                e = parc[node]
                if theta < 0.0 or flow[e] < theta:
                    theta = flow[e]
        for k in range(na):
            node = lista[k]
            if node < m:
                e = parc[node]
                if theta < 0.0 or flow[e] < theta:
                    theta = flow[e]
        leave = -1
        for k in range(nbl - 1, -1, -1):
            node = listb[k]
            if node >= m and flow[parc[node]] <= theta:
                leave = parc[node]
                break
        if leave < 0:
            for k in range(na):
                node = lista[k]
                if node < m and flow[parc[node]] <= theta:
                    leave = parc[node]
                    break
        for k in range(nbl):
            node = listb[k]
            e = parc[node]
            if node >= m:
                flow[e] -= theta
                if flow[e] < 0.0:
                    flow[e] = 0.0
            else:
                flow[e] += theta
        for k in range(na):
            node = lista[k]
            e = parc[node]
            if node < m:
                flow[e] -= theta
                if flow[e] < 0.0:
                    flow[e] = 0.0
            else:
                flow[e] += theta
        arc_i[leave] = pi
        arc_j[leave] = pq
        flow[leave] = theta
        it += 1

    u = pot_np[:m].copy()
    v = pot_np[m:].copy()
    keep = flow_np > 0
    return (arc_i_np[keep], arc_j_np[keep], flow_np[keep], u, v,
            int(it), bool(converged))
