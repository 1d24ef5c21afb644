"""Pure-Python twins of the compiled kernels.

Same algorithms as ``_ckernels`` (same start, ratio test and tie rule); the spline
shifts are vectorised with numpy, the simplex keeps its tree walks in
Python and prices whole blocks of rows with numpy.
"""
import numpy as np


def _bspline_weights(t):
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    t2 = t * t
    t3 = t2 * t
    return (s * s * s / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0)


def shift_rows(coef, shifts):
    """out[i, j] = spline_i(j - shifts[i]) for B-spline coefficients ``coef``."""
    coef = np.ascontiguousarray(coef, dtype=float)
    m, n = coef.shape
    s = -np.asarray(shifts, dtype=float)
    off = np.floor(s)
    w = _bspline_weights(s - off)
    base = (off.astype(np.int64) - 1) % n
    j = np.arange(n)
    rows = np.arange(m)[:, None]
    out = np.zeros((m, n))
    for r in range(4):
        idx = (base[:, None] + j[None, :] + r) % n
        out += w[r][:, None] * coef[rows, idx]
    return out


def eval_points(coef, pos):
    """Evaluate a periodic cubic spline at fractional grid positions."""
    coef = np.asarray(coef, dtype=float)
    n = coef.shape[0]
    pos = np.asarray(pos, dtype=float)
    off = np.floor(pos)
    w = _bspline_weights(pos - off)
    base = (off.astype(np.int64) - 1) % n
    out = np.zeros(pos.shape)
    for r in range(4):
        out += w[r] * coef[(base + r) % n]
    return out


def network_simplex(a, b, C, max_iter, tol):
    """Transportation network simplex, see ``_ckernels.network_simplex``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    m, n = C.shape
    N = m + n
    nb = N - 1
    arc_i = [0] * nb
    arc_j = [0] * nb
    flow = [0.0] * nb
    sup = [float(x) for x in a]
    dem = [float(x) for x in b * (a.sum() / b.sum())]
    i = j = 0
    for k in range(nb):
        q = sup[i] if sup[i] < dem[j] else dem[j]
        arc_i[k], arc_j[k], flow[k] = i, j, q
        sup[i] -= q
        dem[j] -= q
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif sup[i] <= dem[j]:
            i += 1
        else:
            j += 1

    total = m * n
    block_rows = max(1, int(np.sqrt(total)) // n)
    cursor_row = 0
    it = 0
    converged = False
    pot = np.zeros(N)
    parent = [0] * N
    parc = [0] * N
    depth = [0] * N
    while it < max_iter:
        adj = [[] for _ in range(N)]
        for k in range(nb):
            x, y = arc_i[k], m + arc_j[k]
            adj[x].append((y, k))
            adj[y].append((x, k))
        for node in range(N):
            depth[node] = -1
        depth[0] = 0
        parent[0] = -1
        parc[0] = -1
        pot[0] = 0.0
        queue = [0]
        qh = 0
        while qh < len(queue):
            node = queue[qh]
            qh += 1
            for other, k in adj[node]:
                if depth[other] < 0:
                    depth[other] = depth[node] + 1
                    parent[other] = node
                    parc[other] = k
                    pot[other] = C[arc_i[k], arc_j[k]] - pot[node]
                    queue.append(other)
        u = pot[:m]
        v = pot[m:]

        best_cell = None
        rows_done = 0
        while rows_done < m:
            r1 = min(cursor_row + block_rows, m)
            rc = C[cursor_row:r1] - u[cursor_row:r1, None] - v[None, :]
            flat = int(np.argmin(rc))
            if rc.flat[flat] < -tol:
                best_cell = (cursor_row + flat // n, flat % n)
            rows_done += r1 - cursor_row
            cursor_row = 0 if r1 == m else r1
            if best_cell is not None:
                break
        if best_cell is None:
            converged = True
            break

        pi, pq = best_cell
        x, y = pi, m + pq
        lista, listb = [], []
        while x != y:
            if depth[x] >= depth[y]:
                lista.append(x)
                x = parent[x]
            else:
                listb.append(y)
                y = parent[y]
        minus = [parc[nd] for nd in listb if nd >= m] + [parc[nd] for nd in lista if nd < m]
        theta = min(flow[e] for e in minus)
        leave = -1
        for nd in reversed(listb):
            if nd >= m and flow[parc[nd]] <= theta:
                leave = parc[nd]
                break
        if leave < 0:
            for nd in lista:
                if nd < m and flow[parc[nd]] <= theta:
                    leave = parc[nd]
                    break
        for nd in listb:
            e = parc[nd]
            flow[e] = max(flow[e] - theta, 0.0) if nd >= m else flow[e] + theta
        for nd in lista:
            e = parc[nd]
            flow[e] = max(flow[e] - theta, 0.0) if nd < m else flow[e] + theta
        arc_i[leave], arc_j[leave], flow[leave] = pi, pq, theta
        it += 1

    arc_i = np.array(arc_i, dtype=np.int64)
    arc_j = np.array(arc_j, dtype=np.int64)
    flow = np.array(flow)
    keep = flow > 0
    return (arc_i[keep], arc_j[keep], flow[keep], pot[:m].copy(), pot[m:].copy(),
            it, converged)
