# cython: language_level=3
"""Compiled hot loops. ``gridstab._fallback`` mirrors every function here."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, sqrt, fabs, pow, log, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

# --------------------------------------------------------------------------
# swing equation, Dormand-Prince 5(4)

cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = -71.0 / 57600, E3 = 71.0 / 16695, E4 = -71.0 / 1920, E5 = 17253.0 / 339200
cdef double E6 = -22.0 / 525, E7 = 1.0 / 40


cdef void _rhs(int n, int m, const long* src, const long* dst, const double* K,
               const double* P, const double* J, const double* D,
               const double* y, double* out) noexcept nogil:
    cdef int a, e
    cdef double s
    for a in range(n):
        out[a] = y[n + a]
        out[n + a] = P[a] - D[a] * y[n + a]
    for e in range(m):
        s = K[e] * sin(y[src[e]] - y[dst[e]])
        out[n + src[e]] -= s
        out[n + dst[e]] += s
    for a in range(n):
        out[n + a] /= J[a]


cdef double _rms(int size, const double* v, const double* scale) noexcept nogil:
    cdef double acc = 0.0, q
    cdef int a
    for a in range(size):
        q = v[a] / scale[a]
        acc += q * q
    return sqrt(acc / size)


def integrate_swing(const long[::1] src, const long[::1] dst, const double[::1] K,
                    const double[::1] P, const double[::1] J, const double[::1] D,
                    const double[::1] delta0, const double[::1] omega0,
                    double t0, double t_end, double rtol, double atol,
                    const double[::1] t_eval, double window_start,
                    double early_t, double early_omega, double early_residual,
                    double max_step=INFINITY, long max_steps=10000000):
    """Adaptive integration of the swing equation.

    Returns ``(status, t, y, samples, n_filled, window_max, n_steps, n_rejected)``
    where ``status`` is 0 (reached ``t_end``), 1 (early quiescent exit) or
    -1 (step-size collapse / step budget exhausted). Steps never exceed
    ``max_step``.
    """
    cdef int n = P.shape[0]
    cdef int m = K.shape[0]
    cdef int size = 2 * n
    cdef int ne = t_eval.shape[0]
    samples_np = np.zeros((ne, size))
    cdef double[:, ::1] samples = samples_np
    work_np = np.zeros((11, size))
    cdef double[:, ::1] w = work_np
    cdef double* y = &w[0, 0]
    cdef double* k1 = &w[1, 0]
    cdef double* k2 = &w[2, 0]
    cdef double* k3 = &w[3, 0]
    cdef double* k4 = &w[4, 0]
    cdef double* k5 = &w[5, 0]
    cdef double* k6 = &w[6, 0]
    cdef double* k7 = &w[7, 0]
    cdef double* ytmp = &w[8, 0]
    cdef double* ynew = &w[9, 0]
    cdef double* scale = &w[10, 0]
    cdef const long* ps = &src[0] if m > 0 else NULL
    cdef const long* pd = &dst[0] if m > 0 else NULL
    cdef const double* pk = &K[0] if m > 0 else NULL
    cdef const double* pP = &P[0]
    cdef const double* pJ = &J[0]
    cdef const double* pD = &D[0]
    errv_np = np.zeros(size)
    cdef double[::1] errv = errv_np
    cdef int a, q, status = 0
    cdef long n_steps = 0, n_rejected = 0
    cdef double t = t0, h, h0, h1, d0, d1, d2, err, factor, tn, s, hh, wmax = 0.0, om, res
    cdef double h00, h10, h01, h11
    cdef int next_eval = 0
    cdef bint quiet

    for a in range(n):
        y[a] = delta0[a]
        y[n + a] = omega0[a]
    _rhs(n, m, ps, pd, pk, pP, pJ, pD, y, k1)

    while next_eval < ne and t_eval[next_eval] <= t:
        for a in range(size):
            samples[next_eval, a] = y[a]
        next_eval += 1
    if t >= window_start:
        for a in range(n):
            om = fabs(y[n + a])
            if om > wmax:
                wmax = om

    # initial step (Hairer-Norsett-Wanner heuristic)
    for a in range(size):
        scale[a] = atol + rtol * fabs(y[a])
    d0 = _rms(size, y, scale)
    d1 = _rms(size, k1, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    for a in range(size):
        ytmp[a] = y[a] + h0 * k1[a]
    _rhs(n, m, ps, pd, pk, pP, pJ, pD, ytmp, k2)
    for a in range(size):
        errv[a] = k2[a] - k1[a]
    d2 = _rms(size, &errv[0], scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = pow(0.01 / max(d1, d2), 0.2)
    h = min(min(100 * h0, h1), max_step)

    while t < t_end:
        if n_steps >= max_steps:
            status = -1
            break
        if h < 1e-14 * max(1.0, fabs(t)):
            status = -1
            break
        if t + h > t_end:
            h = t_end - t
        tn = t + h
        for a in range(size):
            ytmp[a] = y[a] + h * A21 * k1[a]
        _rhs(n, m, ps, pd, pk, pP, pJ, pD, ytmp, k2)
        for a in range(size):
            ytmp[a] = y[a] + h * (A31 * k1[a] + A32 * k2[a])
        _rhs(n, m, ps, pd, pk, pP, pJ, pD, ytmp, k3)
        for a in range(size):
            ytmp[a] = y[a] + h * (A41 * k1[a] + A42 * k2[a] + A43 * k3[a])
        _rhs(n, m, ps, pd, pk, pP, pJ, pD, ytmp, k4)
        for a in range(size):
            ytmp[a] = y[a] + h * (A51 * k1[a] + A52 * k2[a] + A53 * k3[a] + A54 * k4[a])
        _rhs(n, m, ps, pd, pk, pP, pJ, pD, ytmp, k5)
        for a in range(size):
            ytmp[a] = y[a] + h * (A61 * k1[a] + A62 * k2[a] + A63 * k3[a] + A64 * k4[a] + A65 * k5[a])
        _rhs(n, m, ps, pd, pk, pP, pJ, pD, ytmp, k6)
        for a in range(size):
            ynew[a] = y[a] + h * (B1 * k1[a] + B3 * k3[a] + B4 * k4[a] + B5 * k5[a] + B6 * k6[a])
        _rhs(n, m, ps, pd, pk, pP, pJ, pD, ynew, k7)
        for a in range(size):
            errv[a] = h * (E1 * k1[a] + E3 * k3[a] + E4 * k4[a] + E5 * k5[a] + E6 * k6[a] + E7 * k7[a])
            scale[a] = atol + rtol * max(fabs(y[a]), fabs(ynew[a]))
        err = _rms(size, &errv[0], scale)

        if err > 1.0:
            n_rejected += 1
            h *= max(0.2, 0.9 * pow(err, -0.2))
            continue

        n_steps += 1
        # dense samples by cubic Hermite interpolation
        while next_eval < ne and t_eval[next_eval] <= tn:
            s = (t_eval[next_eval] - t) / h
            h00 = 2 * s * s * s - 3 * s * s + 1
            h10 = s * s * s - 2 * s * s + s
            h01 = -2 * s * s * s + 3 * s * s
            h11 = s * s * s - s * s
            for a in range(size):
                samples[next_eval, a] = (h00 * y[a] + h10 * h * k1[a]
                                         + h01 * ynew[a] + h11 * h * k7[a])
            next_eval += 1

        for a in range(size):
            y[a] = ynew[a]
            k1[a] = k7[a]
        t = tn
        if t >= window_start:
            for a in range(n):
                om = fabs(y[n + a])
                if om > wmax:
                    wmax = om

        if early_t >= 0 and t > early_t:
            quiet = True
            for a in range(n):
                if fabs(y[n + a]) >= early_omega:
                    quiet = False
                    break
                res = pJ[a] * k1[n + a] + pD[a] * y[n + a]
                if fabs(res) >= early_residual:
                    quiet = False
                    break
            if quiet:
                status = 1
                wmax = 0.0
                for a in range(n):
                    om = fabs(y[n + a])
                    if om > wmax:
                        wmax = om
                break

        if err == 0.0:
            factor = 10.0
        else:
            factor = min(10.0, 0.9 * pow(err, -0.2))
        h = min(h * factor, max_step)

    while next_eval < ne and status != -1:
        for a in range(size):
            samples[next_eval, a] = y[a]
        next_eval += 1

    y_out = np.array(work_np[0])
    return status, t, y_out, samples_np, next_eval, wmax, n_steps, n_rejected


# --------------------------------------------------------------------------
# exact split search, one tree level at a time

cdef inline double _xlogx(double p) noexcept nogil:
    if p <= 0.0:
        return 0.0
    return p * log(p)


cdef inline double _entropy_cost(double s, double c) noexcept nogil:
    # c * binary entropy of the positive fraction s / c
    cdef double p = s / c
    return -c * (_xlogx(p) + _xlogx(1.0 - p))


def best_splits(const double[:, ::1] X, const int[:, ::1] order, const double[::1] g,
                const int[::1] node_of, const double[::1] node_sum, const long[::1] node_cnt,
                const int[::1] feats, int min_leaf, int criterion, double min_gain):
    """Best threshold split per active node.

    ``order[f]`` is a stable argsort of column ``f``; ``node_of[row]`` is the
    active-node slot of each row (-1 when inactive). ``criterion`` 0 scores
    squared-error reduction of ``g``; 1 scores entropy reduction with ``g`` the
    0/1 labels. Returns ``(feature, threshold, gain)`` arrays per node slot.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef int n_nodes = node_sum.shape[0]
    cdef int nf = feats.shape[0]
    best_f_np = np.full(n_nodes, -1, dtype=np.int32)
    best_t_np = np.zeros(n_nodes)
    best_g_np = np.full(n_nodes, min_gain)
    cdef int[::1] best_f = best_f_np
    cdef double[::1] best_t = best_t_np
    cdef double[::1] best_g = best_g_np
    sum_l_np = np.zeros(n_nodes)
    cnt_l_np = np.zeros(n_nodes, dtype=np.int64)
    last_np = np.zeros(n_nodes)
    cdef double[::1] sum_l = sum_l_np
    cdef long[::1] cnt_l = cnt_l_np
    cdef double[::1] last = last_np
    cdef Py_ssize_t r
    cdef int fi, f, nd, row
    cdef long nl, nr, nt
    cdef double v, sl, sr, st, gain

    with nogil:
        for fi in range(nf):
            f = feats[fi]
            for nd in range(n_nodes):
                sum_l[nd] = 0.0
                cnt_l[nd] = 0
            for r in range(n):
                row = order[f, r]
                nd = node_of[row]
                if nd < 0:
                    continue
                v = X[row, f]
                nl = cnt_l[nd]
                if nl > 0 and v > last[nd]:
                    nt = node_cnt[nd]
                    nr = nt - nl
                    if nl >= min_leaf and nr >= min_leaf:
                        sl = sum_l[nd]
                        st = node_sum[nd]
                        sr = st - sl
                        if criterion == 0:
                            gain = sl * sl / nl + sr * sr / nr - st * st / nt
                        else:
                            gain = (_entropy_cost(st, <double>nt) - _entropy_cost(sl, <double>nl)
                                    - _entropy_cost(sr, <double>nr))
                        if gain > best_g[nd]:
                            best_g[nd] = gain
                            best_f[nd] = f
                            best_t[nd] = (last[nd] + v) * 0.5
                sum_l[nd] += g[row]
                cnt_l[nd] = nl + 1
                last[nd] = v
    return best_f_np, best_t_np, best_g_np


# --------------------------------------------------------------------------
# path-dependent TreeSHAP

cdef struct PathElem:
    int feature
    double zero_frac
    double one_frac
    double pweight


cdef void _extend(PathElem* path, int depth, double zero_frac, double one_frac, int feature) noexcept nogil:
    cdef int i
    path[depth].feature = feature
    path[depth].zero_frac = zero_frac
    path[depth].one_frac = one_frac
    path[depth].pweight = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        path[i + 1].pweight += one_frac * path[i].pweight * (i + 1) / (depth + 1.0)
        path[i].pweight = zero_frac * path[i].pweight * (depth - i) / (depth + 1.0)


cdef void _unwind(PathElem* path, int depth, int index) noexcept nogil:
    cdef double one = path[index].one_frac
    cdef double zero = path[index].zero_frac
    cdef double nxt = path[depth].pweight
    cdef double tmp
    cdef int i
    for i in range(depth - 1, -1, -1):
        if one != 0:
            tmp = path[i].pweight
            path[i].pweight = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - path[i].pweight * zero * (depth - i) / (depth + 1.0)
        else:
            path[i].pweight = (path[i].pweight * (depth + 1)) / (zero * (depth - i))
    for i in range(index, depth):
        path[i].feature = path[i + 1].feature
        path[i].zero_frac = path[i + 1].zero_frac
        path[i].one_frac = path[i + 1].one_frac


cdef double _unwound_sum(PathElem* path, int depth, int index) noexcept nogil:
    cdef double one = path[index].one_frac
    cdef double zero = path[index].zero_frac
    cdef double nxt = path[depth].pweight
    cdef double total = 0.0, tmp
    cdef int i
    if one != 0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = path[i].pweight - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += path[i].pweight / (zero * (depth - i))
    return total * (depth + 1)


cdef void _shap_recurse(const int* feature, const double* threshold, const int* left,
                        const int* right, const double* value, const double* cover,
                        const double* x, double* phi, int node, PathElem* parent, int depth,
                        double zero_frac, double one_frac, int parent_feature,
                        double scale) noexcept nogil:
    cdef PathElem* path = parent + depth + 1
    cdef int i, hot, cold, k, f
    cdef double w, inc_zero = 1.0, inc_one = 1.0
    for i in range(depth + 1):
        path[i] = parent[i]
    _extend(path, depth, zero_frac, one_frac, parent_feature)
    f = feature[node]
    if f < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(path, depth, i)
            phi[path[i].feature] += w * (path[i].one_frac - path[i].zero_frac) * value[node] * scale
        return
    if x[f] <= threshold[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    k = 0
    while k <= depth:
        if path[k].feature == f:
            break
        k += 1
    if k != depth + 1:
        inc_zero = path[k].zero_frac
        inc_one = path[k].one_frac
        _unwind(path, depth, k)
        depth -= 1
    w = cover[node]
    _shap_recurse(feature, threshold, left, right, value, cover, x, phi, hot, path, depth + 1,
                  cover[hot] / w * inc_zero, inc_one, f, scale)
    _shap_recurse(feature, threshold, left, right, value, cover, x, phi, cold, path, depth + 1,
                  cover[cold] / w * inc_zero, 0.0, f, scale)


def tree_shap(const int[::1] feature, const double[::1] threshold, const int[::1] left,
              const int[::1] right, const double[::1] value, const double[::1] cover,
              int max_depth, const double[:, ::1] X, double[:, ::1] phi, double scale):
    """Accumulate ``scale`` times the TreeSHAP values of one tree into ``phi``."""
    cdef Py_ssize_t r, n = X.shape[0]
    cdef int buf = (max_depth + 2) * (max_depth + 3) + 4
    cdef PathElem* path = <PathElem*> malloc(buf * sizeof(PathElem))
    if path == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(n):
                _shap_recurse(&feature[0], &threshold[0], &left[0], &right[0], &value[0],
                              &cover[0], &X[r, 0], &phi[r, 0], 0, path, 0, 1.0, 1.0, -1, scale)
    finally:
        free(path)
