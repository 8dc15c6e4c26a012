"""Hot numeric kernels, compiled with numba when available.

Every kernel exists twice: a loop implementation compiled with ``numba.njit``
and a vectorised numpy implementation.  The numpy path is used when numba is
missing or when ``PROTOGEN_DISABLE_JIT`` is set to a truthy value before
import.  Both paths take and return C-contiguous float64 arrays.

Block kernels operate on row-stacked groups: a ``(n*k, d)`` array holds ``n``
groups of ``k`` rows each, which is how one episode's ``n`` support sets are
pushed through the attention layer in a single call.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FALSY = ("", "0", "false", "no", "off")
JIT_DISABLED = os.environ.get("PROTOGEN_DISABLE_JIT", "").strip().lower() not in _FALSY
USE_NUMBA = numba is not None and not JIT_DISABLED


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _matmul_np(a, b):
    return a @ b


def _softmax_rows_np(m):
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_backward_np(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _layer_norm_rows_np(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    # one correction pass: constant rows then centre to exactly zero
    mu = mu + (x - mu).mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0].copy()


def _layer_norm_rows_backward_np(g, xhat, inv_std, gamma):
    d = xhat.shape[1]
    gxhat = g * gamma
    s1 = gxhat.sum(axis=1, keepdims=True)
    s2 = (gxhat * xhat).sum(axis=1, keepdims=True)
    gx = (inv_std[:, None] / d) * (d * gxhat - s1 - xhat * s2)
    return gx, (g * xhat).sum(axis=0), g.sum(axis=0)


def _block_scores_np(a, b, k):
    n = a.shape[0] // k
    a3 = a.reshape(n, k, a.shape[1])
    b3 = b.reshape(n, k, b.shape[1])
    return np.ascontiguousarray((a3 @ b3.transpose(0, 2, 1)).reshape(n * k, k))


def _block_attend_np(p, v, k):
    n = p.shape[0] // k
    return np.ascontiguousarray(
        (p.reshape(n, k, k) @ v.reshape(n, k, v.shape[1])).reshape(n * k, v.shape[1])
    )


def _block_transpose_np(p, k):
    n = p.shape[0] // k
    return np.ascontiguousarray(p.reshape(n, k, k).transpose(0, 2, 1).reshape(n * k, k))


def _group_mean_np(x, k):
    n = x.shape[0] // k
    return x.reshape(n, k, x.shape[1]).mean(axis=1)


def _sq_dists_np(queries, protos):
    diff = queries[:, None, :] - protos[None, :, :]
    return (diff * diff).sum(axis=2)


def _nearest_np(queries, protos):
    return _sq_dists_np(queries, protos).argmin(axis=1)


# --------------------------------------------------------------------------
# loop implementations (compiled by numba)
# --------------------------------------------------------------------------

def _matmul_loop(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for t in range(m):
            ait = a[i, t]
            for j in range(p):
                out[i, j] += ait * b[t, j]
    return out


def _softmax_rows_loop(m):
    n, c = m.shape
    out = np.empty((n, c))
    for i in range(n):
        mx = m[i, 0]
        for j in range(1, c):
            if m[i, j] > mx:
                mx = m[i, j]
        s = 0.0
        for j in range(c):
            e = np.exp(m[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(c):
            out[i, j] /= s
    return out


def _softmax_rows_backward_loop(y, g):
    n, c = y.shape
    out = np.empty((n, c))
    for i in range(n):
        dot = 0.0
        for j in range(c):
            dot += g[i, j] * y[i, j]
        for j in range(c):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def _layer_norm_rows_loop(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty((n, d))
    xhat = np.empty((n, d))
    inv_std = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        r = 0.0
        for j in range(d):
            r += x[i, j] - mu
        mu += r / d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        inv_std[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, inv_std


def _layer_norm_rows_backward_loop(g, xhat, inv_std, gamma):
    n, d = xhat.shape
    gx = np.empty((n, d))
    ggamma = np.zeros(d)
    gbeta = np.zeros(d)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            gh = g[i, j] * gamma[j]
            s1 += gh
            s2 += gh * xhat[i, j]
            ggamma[j] += g[i, j] * xhat[i, j]
            gbeta[j] += g[i, j]
        scale = inv_std[i] / d
        for j in range(d):
            gx[i, j] = scale * (d * g[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
    return gx, ggamma, gbeta


def _block_scores_loop(a, b, k):
    rows, m = a.shape
    out = np.zeros((rows, k))
    for base in range(0, rows, k):
        for i in range(k):
            for j in range(k):
                s = 0.0
                for t in range(m):
                    s += a[base + i, t] * b[base + j, t]
                out[base + i, j] = s
    return out


def _block_attend_loop(p, v, k):
    rows = p.shape[0]
    m = v.shape[1]
    out = np.zeros((rows, m))
    for base in range(0, rows, k):
        for i in range(k):
            for j in range(k):
                w = p[base + i, j]
                for t in range(m):
                    out[base + i, t] += w * v[base + j, t]
    return out


def _block_transpose_loop(p, k):
    rows = p.shape[0]
    out = np.empty((rows, k))
    for base in range(0, rows, k):
        for i in range(k):
            for j in range(k):
                out[base + i, j] = p[base + j, i]
    return out


def _group_mean_loop(x, k):
    rows, d = x.shape
    n = rows // k
    out = np.zeros((n, d))
    for g in range(n):
        for i in range(k):
            for j in range(d):
                out[g, j] += x[g * k + i, j]
        for j in range(d):
            out[g, j] /= k
    return out


def _sq_dists_loop(queries, protos):
    nq, d = queries.shape
    npr = protos.shape[0]
    out = np.empty((nq, npr))
    for i in range(nq):
        for c in range(npr):
            s = 0.0
            for j in range(d):
                diff = queries[i, j] - protos[c, j]
                s += diff * diff
            out[i, c] = s
    return out


def _nearest_loop(queries, protos):
    nq, d = queries.shape
    npr = protos.shape[0]
    out = np.empty(nq, dtype=np.int64)
    for i in range(nq):
        best = np.inf
        arg = 0
        for c in range(npr):
            s = 0.0
            for j in range(d):
                diff = queries[i, j] - protos[c, j]
                s += diff * diff
            # strict comparison keeps the lowest index on ties
            if s < best:
                best = s
                arg = c
        out[i] = arg
    return out


_NAMES = (
    "matmul",
    "softmax_rows",
    "softmax_rows_backward",
    "layer_norm_rows",
    "layer_norm_rows_backward",
    "block_scores",
    "block_attend",
    "block_transpose",
    "group_mean",
    "sq_dists",
    "nearest",
)

NUMPY_KERNELS = {name: globals()[f"_{name}_np"] for name in _NAMES}

if numba is not None:
    NUMBA_KERNELS = {
        name: numba.njit(cache=True, nogil=True)(globals()[f"_{name}_loop"])
        for name in _NAMES
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}

BACKEND = "numba" if USE_NUMBA else "numpy"
ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

matmul = ACTIVE["matmul"]
softmax_rows = ACTIVE["softmax_rows"]
softmax_rows_backward = ACTIVE["softmax_rows_backward"]
layer_norm_rows = ACTIVE["layer_norm_rows"]
layer_norm_rows_backward = ACTIVE["layer_norm_rows_backward"]
block_scores = ACTIVE["block_scores"]
block_attend = ACTIVE["block_attend"]
block_transpose = ACTIVE["block_transpose"]
group_mean = ACTIVE["group_mean"]
sq_dists = ACTIVE["sq_dists"]
nearest = ACTIVE["nearest"]
