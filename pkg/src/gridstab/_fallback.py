"""Pure-Python/numpy versions of the kernels in ``_core.pyx``.

Same signatures and return values; selected automatically when the compiled
extension is unavailable or ``GRIDSTAB_PURE_PYTHON`` is set.
"""
import math

import numpy as np

_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])


def _make_rhs(src, dst, K, P, J, D):
    n = P.size

    def rhs(y):
        delta, omega = y[:n], y[n:]
        s = K * np.sin(delta[src] - delta[dst])
        pel = np.bincount(src, s, n) - np.bincount(dst, s, n)
        return np.concatenate([omega, (P - D * omega - pel) / J])

    return rhs


def _rms(v, scale):
    return math.sqrt(np.mean((v / scale) ** 2))


def integrate_swing(src, dst, K, P, J, D, delta0, omega0, t0, t_end, rtol, atol,
                    t_eval, window_start, early_t, early_omega, early_residual,
                    max_step=np.inf, max_steps=10_000_000):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    K, P, J, D = (np.asarray(a, dtype=float) for a in (K, P, J, D))
    t_eval = np.asarray(t_eval, dtype=float)
    n = P.size
    rhs = _make_rhs(src, dst, K, P, J, D)
    y = np.concatenate([np.asarray(delta0, float), np.asarray(omega0, float)])
    samples = np.zeros((t_eval.size, 2 * n))
    k1 = rhs(y)
    t = float(t0)
    nxt = 0
    while nxt < t_eval.size and t_eval[nxt] <= t:
        samples[nxt] = y
        nxt += 1
    wmax = float(np.abs(y[n:]).max(initial=0.0)) if t >= window_start else 0.0

    scale = atol + rtol * np.abs(y)
    d0, d1 = _rms(y, scale), _rms(k1, scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    d2 = _rms(rhs(y + h0 * k1) - k1, scale) / h0
    h1 = max(1e-6, h0 * 1e-3) if d1 <= 1e-15 and d2 <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h0, h1, max_step)

    status = 0
    n_steps = n_rejected = 0
    while t < t_end:
        if n_steps >= max_steps or h < 1e-14 * max(1.0, abs(t)):
            status = -1
            break
        if t + h > t_end:
            h = t_end - t
        tn = t + h
        ks = [k1]
        for row in _A[1:]:
            ks.append(rhs(y + h * sum(c * k for c, k in zip(row, ks))))
        ynew = y + h * sum(b * k for b, k in zip(_B, ks) if b != 0)
        k7 = rhs(ynew)
        ks.append(k7)
        errv = h * sum(e * k for e, k in zip(_E, ks) if e != 0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = _rms(errv, scale)
        if err > 1.0:
            n_rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
            continue

        n_steps += 1
        while nxt < t_eval.size and t_eval[nxt] <= tn:
            s = (t_eval[nxt] - t) / h
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            samples[nxt] = h00 * y + h10 * h * k1 + h01 * ynew + h11 * h * k7
            nxt += 1
        y, k1, t = ynew, k7, tn
        if t >= window_start:
            wmax = max(wmax, float(np.abs(y[n:]).max(initial=0.0)))

        if early_t >= 0 and t > early_t:
            omega = y[n:]
            res = J * k1[n:] + D * omega
            if np.all(np.abs(omega) < early_omega) and np.all(np.abs(res) < early_residual):
                status = 1
                wmax = float(np.abs(omega).max(initial=0.0))
                break
        h = min(h * (10.0 if err == 0.0 else min(10.0, 0.9 * err ** -0.2)), max_step)

    if status != -1:
        samples[nxt:] = y
        nxt = t_eval.size
    return status, t, y.copy(), samples, nxt, wmax, n_steps, n_rejected


def _entropy_cost(s, c):
    p = s / c
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        lq = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)
    return -c * (lp + lq)


def best_splits(X, order, g, node_of, node_sum, node_cnt, feats, min_leaf, criterion, min_gain):
    del order  # the per-node stable sort below reproduces the global order
    n_nodes = len(node_sum)
    best_f = np.full(n_nodes, -1, dtype=np.int32)
    best_t = np.zeros(n_nodes)
    best_g = np.full(n_nodes, float(min_gain))
    for nd in range(n_nodes):
        rows = np.flatnonzero(node_of == nd)
        nt = int(node_cnt[nd])
        st = float(node_sum[nd])
        if rows.size < 2:
            continue
        nl = np.arange(1, rows.size, dtype=np.int64)
        nr = nt - nl
        size_ok = (nl >= min_leaf) & (nr >= min_leaf)
        if not size_ok.any():
            continue
        for f in feats:
            col = X[rows, f]
            o = np.argsort(col, kind="stable")
            v = col[o]
            cs = np.cumsum(g[rows[o]])
            sl = cs[:-1]
            ok = size_ok & (v[1:] > v[:-1])
            if not ok.any():
                continue
            sr = st - sl
            if criterion == 0:
                gain = sl * sl / nl + sr * sr / nr - st * st / nt
            else:
                gain = _entropy_cost(st, float(nt)) - _entropy_cost(sl, nl.astype(float)) \
                    - _entropy_cost(sr, nr.astype(float))
            gain = np.where(ok, gain, -np.inf)
            p = int(np.argmax(gain))
            if gain[p] > best_g[nd]:
                best_g[nd] = gain[p]
                best_f[nd] = f
                best_t[nd] = (v[p] + v[p + 1]) * 0.5
    return best_f, best_t, best_g


# ------------------------------------------------------------------ TreeSHAP


def _extend(path, zero_frac, one_frac, feature):
    depth = len(path)
    path.append([feature, zero_frac, one_frac, 1.0 if depth == 0 else 0.0])
    for i in range(depth - 1, -1, -1):
        path[i + 1][3] += one_frac * path[i][3] * (i + 1) / (depth + 1.0)
        path[i][3] = zero_frac * path[i][3] * (depth - i) / (depth + 1.0)


def _unwind(path, index):
    depth = len(path) - 1
    _, zero, one, _ = path[index]
    nxt = path[depth][3]
    for i in range(depth - 1, -1, -1):
        if one != 0:
            tmp = path[i][3]
            path[i][3] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - path[i][3] * zero * (depth - i) / (depth + 1.0)
        else:
            path[i][3] = (path[i][3] * (depth + 1)) / (zero * (depth - i))
    for i in range(index, depth):
        path[i][0:3] = path[i + 1][0:3]
    path.pop()


def _unwound_sum(path, index):
    depth = len(path) - 1
    _, zero, one, _ = path[index]
    nxt = path[depth][3]
    total = 0.0
    if one != 0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = path[i][3] - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += path[i][3] / (zero * (depth - i))
    return total * (depth + 1)


def tree_shap(feature, threshold, left, right, value, cover, max_depth, X, phi, scale):
    del max_depth

    def recurse(x, out, node, parent, zero_frac, one_frac, parent_feature):
        path = [list(el) for el in parent]
        _extend(path, zero_frac, one_frac, parent_feature)
        f = feature[node]
        if f < 0:
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                out[path[i][0]] += w * (path[i][2] - path[i][1]) * value[node] * scale
            return
        if x[f] <= threshold[node]:
            hot, cold = left[node], right[node]
        else:
            hot, cold = right[node], left[node]
        inc_zero = inc_one = 1.0
        for k in range(len(path)):
            if path[k][0] == f:
                inc_zero, inc_one = path[k][1], path[k][2]
                _unwind(path, k)
                break
        w = cover[node]
        recurse(x, out, hot, path, cover[hot] / w * inc_zero, inc_one, f)
        recurse(x, out, cold, path, cover[cold] / w * inc_zero, 0.0, f)

    for r in range(X.shape[0]):
        recurse(X[r], phi[r], 0, [], 1.0, 1.0, -1)
