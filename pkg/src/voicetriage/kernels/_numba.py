"""Numba-jitted kernel implementations. Same contracts as kernels._numpy."""

import numpy as np
from numba import njit


@njit(cache=True)
def _i0(x):
    # modified Bessel I0 via power series; converges fast for the beta range used
    s = 1.0
    term = 1.0
    xx = x * x / 4.0
    for k in range(1, 200):
        term *= xx / (k * k)
        s += term
        if term < 1e-17 * s:
            break
    return s


@njit(cache=True)
def ncc_matrix(frames, min_lag, max_lag):
    nf, length = frames.shape
    out = np.zeros((nf, max_lag + 1))
    hi = min(max_lag, length - 1)
    for f in range(nf):
        row = frames[f]
        csq = np.empty(length)
        acc = 0.0
        for i in range(length):
            acc += row[i] * row[i]
            csq[i] = acc
        total = acc
        for tau in range(min_lag, hi + 1):
            num = 0.0
            for i in range(length - tau):
                num += row[i] * row[i + tau]
            e_head = csq[length - 1 - tau]
            e_tail = total - csq[tau - 1]
            denom = np.sqrt(e_head * e_tail)
            if denom > 1e-300:
                out[f, tau] = num / denom
    return out


@njit(cache=True)
def sinc_resample(x, n_out, step, cutoff, half, beta):
    length = x.shape[0]
    y = np.empty(n_out)
    i0b = _i0(beta)
    taps = np.empty(2 * half)
    for n in range(n_out):
        pos = n * step
        base = int(np.floor(pos))
        frac = pos - base
        tsum = 0.0
        for ki in range(2 * half):
            k = ki - half + 1
            u = frac - k
            arg = cutoff * u
            if arg == 0.0:
                s = 1.0
            else:
                s = np.sin(np.pi * arg) / (np.pi * arg)
            z = u / half
            if np.abs(z) < 1.0:
                win = _i0(beta * np.sqrt(1.0 - z * z)) / i0b
            else:
                win = 0.0
            t = cutoff * s * win
            taps[ki] = t
            tsum += t
        acc = 0.0
        for ki in range(2 * half):
            idx = base + ki - half + 1
            if 0 <= idx < length:
                acc += (taps[ki] / tsum) * x[idx]
        y[n] = acc
    return y


@njit(cache=True)
def iir_cascade(x, a1, a2, gain):
    y = x.astype(np.float64).copy()
    for s in range(3):
        g = gain[s]
        c1 = a1[s]
        c2 = a2[s]
        out = np.empty_like(y)
        y1 = 0.0
        y2 = 0.0
        for t in range(y.shape[0]):
            v = g * y[t] + c1 * y1 + c2 * y2
            out[t] = v
            y2 = y1
            y1 = v
        y = out
    return y


@njit(cache=True)
def conv3x3_fwd(x, w, b):
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.zeros((bs, cin, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    y = np.empty((bs, cout, h, wd), dtype=x.dtype)
    for bi in range(bs):
        for o in range(cout):
            for i in range(h):
                for j in range(wd):
                    y[bi, o, i, j] = b[o]
        for o in range(cout):
            for c in range(cin):
                for di in range(3):
                    for dj in range(3):
                        wv = w[o, c, di, dj]
                        for i in range(h):
                            for j in range(wd):
                                y[bi, o, i, j] += wv * xp[bi, c, i + di, j + dj]
    return y


@njit(cache=True)
def conv3x3_bwd_x(dy, w):
    bs, cout, h, wd = dy.shape
    cin = w.shape[1]
    dyp = np.zeros((bs, cout, h + 2, wd + 2), dtype=dy.dtype)
    dyp[:, :, 1 : h + 1, 1 : wd + 1] = dy
    dx = np.zeros((bs, cin, h, wd), dtype=dy.dtype)
    for bi in range(bs):
        for c in range(cin):
            for o in range(cout):
                for di in range(3):
                    for dj in range(3):
                        wv = w[o, c, 2 - di, 2 - dj]
                        for i in range(h):
                            for j in range(wd):
                                dx[bi, c, i, j] += wv * dyp[bi, o, i + di, j + dj]
    return dx


@njit(cache=True)
def conv3x3_bwd_w(x, dy):
    bs, cin, h, wd = x.shape
    cout = dy.shape[1]
    xp = np.zeros((bs, cin, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    dw = np.zeros((cout, cin, 3, 3), dtype=x.dtype)
    db = np.zeros(cout, dtype=x.dtype)
    for bi in range(bs):
        for o in range(cout):
            for c in range(cin):
                for di in range(3):
                    for dj in range(3):
                        acc = dw[o, c, di, dj]
                        for i in range(h):
                            for j in range(wd):
                                acc += dy[bi, o, i, j] * xp[bi, c, i + di, j + dj]
                        dw[o, c, di, dj] = acc
            accb = db[o]
            for i in range(h):
                for j in range(wd):
                    accb += dy[bi, o, i, j]
            db[o] = accb
    return dw, db


@njit(cache=True)
def maxpool2_fwd(x):
    bs, c, h, wd = x.shape
    h2 = h // 2
    w2 = wd // 2
    y = np.empty((bs, c, h2, w2), dtype=x.dtype)
    idx = np.empty((bs, c, h2, w2), dtype=np.uint8)
    for bi in range(bs):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    best = x[bi, ci, 2 * i, 2 * j]
                    bp = 0
                    p = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[bi, ci, 2 * i + di, 2 * j + dj]
                            if v > best:
                                best = v
                                bp = p
                            p += 1
                    y[bi, ci, i, j] = best
                    idx[bi, ci, i, j] = bp
    return y, idx


@njit(cache=True)
def maxpool2_bwd(dy, idx):
    bs, c, h2, w2 = dy.shape
    dx = np.zeros((bs, c, h2 * 2, w2 * 2), dtype=dy.dtype)
    for bi in range(bs):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    p = idx[bi, ci, i, j]
                    di = p // 2
                    dj = p % 2
                    dx[bi, ci, 2 * i + di, 2 * j + dj] = dy[bi, ci, i, j]
    return dx


@njit(cache=True)
def smo_solve(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    m = np.inf
    M = -np.inf
    while it < max_iter:
        i = -1
        j = -1
        m = -np.inf
        M = np.inf
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > m:
                    m = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < M:
                    M = v
                    j = t
        if i < 0 or j < 0:
            m = np.inf
            M = -np.inf
            break
        if m - M <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < 1e-12:
            eta = 1e-12
        step = (m - M) / eta
        tmax_i = C - alpha[i] if y[i] > 0 else alpha[i]
        tmax_j = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min(step, tmax_i, tmax_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        if step == tmax_i:
            alpha[i] = C if y[i] > 0 else 0.0
        if step == tmax_j:
            alpha[j] = 0.0 if y[j] > 0 else C
        for t in range(n):
            G[t] += step * y[t] * (K[t, i] - K[t, j])
        it += 1
    gap = m - M
    nf = 0
    bsum = 0.0
    for t in range(n):
        if 1e-12 < alpha[t] < C - 1e-12:
            bsum += -y[t] * G[t]
            nf += 1
    if nf > 0:
        b = bsum / nf
    elif np.isfinite(m) and np.isfinite(M):
        b = (m + M) / 2.0
    else:
        b = 0.0
    return alpha, b, it, gap


@njit(cache=True)
def best_gini_split(X, y, n_classes, min_leaf):
    n, d = X.shape
    total = np.zeros(n_classes)
    s2_total = 0.0
    for i in range(n):
        total[y[i]] += 1.0
    for c in range(n_classes):
        s2_total += total[c] * total[c]
    best_score = np.inf
    best_feat = -1
    best_thresh = 0.0
    for f in range(d):
        v = X[:, f].copy()
        order = np.argsort(v)
        left = np.zeros(n_classes)
        s2l = 0.0
        s2r = s2_total
        local_best = np.inf
        local_i = -1
        for i in range(n - 1):
            c = y[order[i]]
            lc = left[c]
            s2l += 2.0 * lc + 1.0
            rc = total[c] - lc - 1.0
            s2r += -2.0 * rc - 1.0
            left[c] = lc + 1.0
            nl = i + 1.0
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            v0 = v[order[i]]
            v1 = v[order[i + 1]]
            if v0 == v1:
                continue
            score = ((nl - s2l / nl) + (nr - s2r / nr)) / n
            if score < local_best:
                local_best = score
                local_i = i
        if local_i >= 0 and local_best < best_score:
            best_score = local_best
            best_feat = f
            best_thresh = 0.5 * (v[order[local_i]] + v[order[local_i + 1]])
    return best_feat, best_thresh, best_score
