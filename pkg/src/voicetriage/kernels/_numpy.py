"""Pure-numpy kernel implementations.

Semantics (including tie-breaking and accumulation identities) must match
kernels._numba; the benchmark in benchmarks/bench_kernels.py compares both.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def ncc_matrix(frames, min_lag, max_lag):
    """Normalized cross-correlation per frame over a lag band.

    r[f, tau] = sum_i x[i] x[i+tau] / sqrt(E_head * E_tail) for
    tau in [min_lag, max_lag]; columns below min_lag stay zero.
    """
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    nf, length = frames.shape
    if min_lag < 1:
        raise ValueError("min_lag must be >= 1")
    n = 1
    while n < 2 * length:
        n *= 2
    spec = np.fft.rfft(frames, n=n, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), n=n, axis=1)[:, : max_lag + 1]
    csq = np.cumsum(frames * frames, axis=1)
    total = csq[:, -1]
    out = np.zeros((nf, max_lag + 1))
    taus = np.arange(min_lag, min(max_lag, length - 1) + 1)
    if taus.size == 0:
        return out
    e_head = csq[:, length - 1 - taus]
    e_tail = total[:, None] - csq[:, taus - 1]
    denom = np.sqrt(e_head * e_tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-300, ac[:, taus] / denom, 0.0)
    out[:, taus] = r
    return out


def sinc_resample(x, n_out, step, cutoff, half, beta):
    """Windowed-sinc interpolation: output n sits at input position n*step."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    length = x.shape[0]
    pos = np.arange(n_out) * step
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    k = np.arange(-half + 1, half + 1, dtype=np.int64)
    idx = base[:, None] + k[None, :]
    u = frac[:, None] - k[None, :].astype(np.float64)
    taps = cutoff * np.sinc(cutoff * u)
    z = u / half
    inside = np.abs(z) < 1.0
    win = np.zeros_like(u)
    win[inside] = np.i0(beta * np.sqrt(1.0 - z[inside] * z[inside])) / np.i0(beta)
    taps = taps * win
    taps /= taps.sum(axis=1, keepdims=True)
    valid = (idx >= 0) & (idx < length)
    xi = np.where(valid, x[np.clip(idx, 0, length - 1)], 0.0)
    return (taps * xi).sum(axis=1)


def iir_cascade(x, a1, a2, gain):
    """Three two-pole resonators in series: y[t] = g*x[t] + a1*y[t-1] + a2*y[t-2]."""
    y = np.asarray(x, dtype=np.float64).copy()
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


def conv3x3_fwd(x, w, b):
    """Same-padded stride-1 3x3 convolution, NCHW layout."""
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    y = np.empty((bs, cout, h, wd), dtype=x.dtype)
    wm = w.reshape(cout, cin * 9)
    for bi in range(bs):
        xp = np.pad(x[bi], ((0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))
        col = win.transpose(1, 2, 0, 3, 4).reshape(h * wd, cin * 9)
        y[bi] = (col @ wm.T).T.reshape(cout, h, wd)
    y += b[None, :, None, None]
    return y


def conv3x3_bwd_x(dy, w):
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero = np.zeros(wt.shape[0], dtype=dy.dtype)
    return conv3x3_fwd(dy, wt, zero)


def conv3x3_bwd_w(x, dy):
    bs, cin, h, wd = x.shape
    cout = dy.shape[1]
    dwm = np.zeros((cout, cin * 9), dtype=x.dtype)
    for bi in range(bs):
        xp = np.pad(x[bi], ((0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))
        col = win.transpose(1, 2, 0, 3, 4).reshape(h * wd, cin * 9)
        dwm += dy[bi].reshape(cout, h * wd) @ col
    db = dy.sum(axis=(0, 2, 3))
    return dwm.reshape(cout, cin, 3, 3), db


def maxpool2_fwd(x):
    bs, c, h, wd = x.shape
    h2, w2 = h // 2, wd // 2
    xr = x.reshape(bs, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bs, c, h2, w2, 4)
    idx = xr.argmax(axis=4).astype(np.uint8)
    y = np.take_along_axis(xr, idx[..., None].astype(np.int64), axis=4)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_bwd(dy, idx):
    bs, c, h2, w2 = dy.shape
    dxr = np.zeros((bs, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None].astype(np.int64), dy[..., None], axis=4)
    dx = dxr.reshape(bs, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx).reshape(bs, c, h2 * 2, w2 * 2)


def smo_solve(K, y, C, tol, max_iter):
    """Most-violating-pair SMO on the dual; returns (alpha, bias, iters, gap)."""
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    m = np.inf
    M = -np.inf
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        lo = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not lo.any():
            m, M = np.inf, -np.inf
            break
        vals = -y * G
        vi = np.where(up, vals, -np.inf)
        i = int(np.argmax(vi))
        m = vi[i]
        vj = np.where(lo, vals, np.inf)
        j = int(np.argmin(vj))
        M = vj[j]
        if m - M <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        t = (m - M) / max(eta, 1e-12)
        tmax_i = C - alpha[i] if y[i] > 0 else alpha[i]
        tmax_j = alpha[j] if y[j] > 0 else C - alpha[j]
        t = min(t, tmax_i, tmax_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        if t == tmax_i:
            alpha[i] = C if y[i] > 0 else 0.0
        if t == tmax_j:
            alpha[j] = 0.0 if y[j] > 0 else C
        G += t * y * (K[:, i] - K[:, j])
        it += 1
    gap = m - M
    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    if free.any():
        b = float(np.mean((-y * G)[free]))
    elif np.isfinite(m) and np.isfinite(M):
        b = float((m + M) / 2.0)
    else:
        b = 0.0
    return alpha, b, it, float(gap)


def best_gini_split(X, y, n_classes, min_leaf):
    """Best (feature, threshold) by weightedGini; (-1, 0, inf) when no valid split.

    Ties prefer the lower feature index, then the lower threshold.
    """
    n, d = X.shape
    total = np.zeros(n_classes)
    np.add.at(total, y, 1.0)
    best_score = np.inf
    best_feat = -1
    best_thresh = 0.0
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    for f in range(d):
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = 1.0
        cl = np.cumsum(onehot, axis=0)[:-1]
        s2l = np.sum(cl * cl, axis=1)
        cr = total[None, :] - cl
        s2r = np.sum(cr * cr, axis=1)
        score = ((nl - s2l / nl) + (nr - s2r / nr)) / n
        invalid = (nl < min_leaf) | (nr < min_leaf) | (sv[:-1] == sv[1:])
        score[invalid] = np.inf
        li = int(np.argmin(score))
        if score[li] < best_score:
            best_score = score[li]
            best_feat = f
            best_thresh = 0.5 * (sv[li] + sv[li + 1])
    return best_feat, best_thresh, best_score
