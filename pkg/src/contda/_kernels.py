"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Both implementations of every kernel are importable (``numpy_impl`` and
``numba_impl``) so tests can compare them; the module-level names dispatch
to one of them. Set ``CONTDA_DISABLE_NUMBA=1`` to force the numpy path.
Each path is deterministic on its own, but the two may differ in the last
few ulps because reductions run in a different order.
"""
import math
import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

_FLAG = "CONTDA_DISABLE_NUMBA"
ZERO_NORM_DISTANCE = 2.0


def _disabled_by_env():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


# ---------------------------------------------------------------- numpy path

def _np_softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_log_softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _np_bn_train_forward(x, gamma, beta, eps):
    mean = x.mean(axis=0)
    centered = x - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, mean, var, inv_std


def _np_bn_backward(dout, xhat, inv_std, gamma):
    n = dout.shape[0]
    dbeta = dout.sum(axis=0)
    dgamma = (dout * xhat).sum(axis=0)
    dx = (gamma * inv_std / n) * (n * dout - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def _np_weighted_centroids(weights, features):
    return weights.T @ features, weights.sum(axis=0)


def _np_cosine_argmin(features, centroids, valid):
    fn = np.sqrt((features * features).sum(axis=1))
    cn = np.sqrt((centroids * centroids).sum(axis=1))
    denom = fn[:, None] * cn[None, :]
    dots = features @ centroids.T
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = 1.0 - dots / denom
    dist[denom == 0.0] = ZERO_NORM_DISTANCE
    dist[:, ~valid] = np.inf
    return np.argmin(dist, axis=1).astype(np.int64)


numpy_impl = SimpleNamespace(
    softmax_rows=_np_softmax_rows,
    log_softmax_rows=_np_log_softmax_rows,
    bn_train_forward=_np_bn_train_forward,
    bn_backward=_np_bn_backward,
    weighted_centroids=_np_weighted_centroids,
    cosine_argmin=_np_cosine_argmin,
)


# ---------------------------------------------------------------- numba path

def _build_numba_impl():
    njit = numba.njit(cache=True, fastmath=False)

    @njit
    def softmax_rows(z):
        n, c = z.shape
        out = np.empty((n, c))
        for i in range(n):
            m = z[i, 0]
            for k in range(1, c):
                if z[i, k] > m:
                    m = z[i, k]
            s = 0.0
            for k in range(c):
                e = math.exp(z[i, k] - m)
                out[i, k] = e
                s += e
            for k in range(c):
                out[i, k] /= s
        return out

    @njit
    def log_softmax_rows(z):
        n, c = z.shape
        out = np.empty((n, c))
        for i in range(n):
            m = z[i, 0]
            for k in range(1, c):
                if z[i, k] > m:
                    m = z[i, k]
            s = 0.0
            for k in range(c):
                s += math.exp(z[i, k] - m)
            lse = math.log(s)
            for k in range(c):
                out[i, k] = z[i, k] - m - lse
        return out

    @njit
    def bn_train_forward(x, gamma, beta, eps):
        n, d = x.shape
        mean = np.zeros(d)
        var = np.zeros(d)
        for i in range(n):
            for j in range(d):
                mean[j] += x[i, j]
        for j in range(d):
            mean[j] /= n
        for i in range(n):
            for j in range(d):
                t = x[i, j] - mean[j]
                var[j] += t * t
        inv_std = np.empty(d)
        for j in range(d):
            var[j] /= n
            inv_std[j] = 1.0 / math.sqrt(var[j] + eps)
        xhat = np.empty((n, d))
        out = np.empty((n, d))
        for i in range(n):
            for j in range(d):
                h = (x[i, j] - mean[j]) * inv_std[j]
                xhat[i, j] = h
                out[i, j] = h * gamma[j] + beta[j]
        return out, xhat, mean, var, inv_std

    @njit
    def bn_backward(dout, xhat, inv_std, gamma):
        n, d = dout.shape
        dbeta = np.zeros(d)
        dgamma = np.zeros(d)
        for i in range(n):
            for j in range(d):
                dbeta[j] += dout[i, j]
                dgamma[j] += dout[i, j] * xhat[i, j]
        dx = np.empty((n, d))
        for j in range(d):
            scale = gamma[j] * inv_std[j] / n
            for i in range(n):
                dx[i, j] = scale * (n * dout[i, j] - dbeta[j] - xhat[i, j] * dgamma[j])
        return dx, dgamma, dbeta

    @njit
    def weighted_centroids(weights, features):
        n, c = weights.shape
        d = features.shape[1]
        sums = np.zeros((c, d))
        mass = np.zeros(c)
        for i in range(n):
            for k in range(c):
                w = weights[i, k]
                mass[k] += w
                for j in range(d):
                    sums[k, j] += w * features[i, j]
        return sums, mass

    @njit
    def cosine_argmin(features, centroids, valid):
        n, d = features.shape
        c = centroids.shape[0]
        cn = np.empty(c)
        for k in range(c):
            s = 0.0
            for j in range(d):
                s += centroids[k, j] * centroids[k, j]
            cn[k] = math.sqrt(s)
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += features[i, j] * features[i, j]
            fn = math.sqrt(s)
            best = np.inf
            arg = -1
            for k in range(c):
                if not valid[k]:
                    continue
                denom = fn * cn[k]
                if denom == 0.0:
                    dist = ZERO_NORM_DISTANCE
                else:
                    dot = 0.0
                    for j in range(d):
                        dot += features[i, j] * centroids[k, j]
                    dist = 1.0 - dot / denom
                if dist < best:
                    best = dist
                    arg = k
            labels[i] = arg
        return labels

    return SimpleNamespace(
        softmax_rows=softmax_rows,
        log_softmax_rows=log_softmax_rows,
        bn_train_forward=bn_train_forward,
        bn_backward=bn_backward,
        weighted_centroids=weighted_centroids,
        cosine_argmin=cosine_argmin,
    )


numba_impl = _build_numba_impl() if numba is not None else None

if numba_impl is not None and not _disabled_by_env():
    BACKEND = "numba"
    _active = numba_impl
else:
    BACKEND = "numpy"
    _active = numpy_impl

softmax_rows = _active.softmax_rows
log_softmax_rows = _active.log_softmax_rows
bn_train_forward = _active.bn_train_forward
bn_backward = _active.bn_backward
weighted_centroids = _active.weighted_centroids
cosine_argmin = _active.cosine_argmin
