"""Row-wise numeric kernels used by the tensor core.

Each kernel exists twice: a pure-numpy version and a numba ``@njit`` version
with explicit loops. The numba path is used when numba imports and the
environment variable ``MAGFUSE_NUMBA`` is not set to ``0``. Both paths agree
to floating-point rounding; within one path results are bit-reproducible.
"""

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the environment
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def numba_requested():
    return os.environ.get("MAGFUSE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and numba_requested()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def softmax_rows_np(x, mask):
    """Masked row softmax. ``mask`` is a boolean array of x's shape or None."""
    if mask is None:
        m = x.max(axis=1, keepdims=True)
        e = np.exp(x - m)
    else:
        xm = np.where(mask, x, -np.inf)
        e = np.exp(xm - xm.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd_np(y, dy):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def layer_norm_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_bwd_np(dy, xhat, rstd, gain):
    dxhat = dy * gain
    d = xhat.shape[1]
    dx = rstd[:, None] * (
        dxhat
        - dxhat.sum(axis=1, keepdims=True) / d
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / d
    )
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _softmax_rows_nb(x, mask, use_mask):
        m, n = x.shape
        out = np.zeros((m, n))
        for i in range(m):
            mx = -np.inf
            for j in range(n):
                if (not use_mask or mask[i, j]) and x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                if not use_mask or mask[i, j]:
                    e = np.exp(x[i, j] - mx)
                    out[i, j] = e
                    s += e
            for j in range(n):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _softmax_rows_bwd_nb(y, dy):
        m, n = y.shape
        dx = np.empty((m, n))
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot += dy[i, j] * y[i, j]
            for j in range(n):
                dx[i, j] = y[i, j] * (dy[i, j] - dot)
        return dx

    @njit(cache=True)
    def _layer_norm_nb(x, gain, bias, eps):
        m, d = x.shape
        out = np.empty((m, d))
        xhat = np.empty((m, d))
        rstd = np.empty(m)
        for i in range(m):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            r = 1.0 / np.sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                xh = (x[i, j] - mu) * r
                xhat[i, j] = xh
                out[i, j] = xh * gain[j] + bias[j]
        return out, xhat, rstd

    @njit(cache=True)
    def _layer_norm_bwd_nb(dy, xhat, rstd, gain):
        m, d = dy.shape
        dx = np.empty((m, d))
        dgain = np.zeros(d)
        dbias = np.zeros(d)
        for i in range(m):
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                g = dy[i, j] * gain[j]
                s1 += g
                s2 += g * xhat[i, j]
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
            s1 /= d
            s2 /= d
            for j in range(d):
                dx[i, j] = rstd[i] * (dy[i, j] * gain[j] - s1 - xhat[i, j] * s2)
        return dx, dgain, dbias

    _EMPTY_MASK = np.zeros((1, 1), dtype=np.bool_)

    def softmax_rows_nb(x, mask):
        if mask is None:
            return _softmax_rows_nb(x, _EMPTY_MASK, False)
        return _softmax_rows_nb(x, np.ascontiguousarray(mask, dtype=np.bool_), True)

    def softmax_rows_bwd_nb(y, dy):
        return _softmax_rows_bwd_nb(y, np.ascontiguousarray(dy))

    def layer_norm_nb(x, gain, bias, eps):
        return _layer_norm_nb(np.ascontiguousarray(x), gain, bias, float(eps))

    def layer_norm_bwd_nb(dy, xhat, rstd, gain):
        return _layer_norm_bwd_nb(np.ascontiguousarray(dy), xhat, rstd, gain)


def select(use_numba=None):
    """Return the kernel table for the requested backend."""
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    if use_numba:
        return {
            "softmax_rows": softmax_rows_nb,
            "softmax_rows_bwd": softmax_rows_bwd_nb,
            "layer_norm": layer_norm_nb,
            "layer_norm_bwd": layer_norm_bwd_nb,
        }
    return {
        "softmax_rows": softmax_rows_np,
        "softmax_rows_bwd": softmax_rows_bwd_np,
        "layer_norm": layer_norm_np,
        "layer_norm_bwd": layer_norm_bwd_np,
    }


KERNELS = select()
BACKEND = "numba" if USE_NUMBA else "numpy"
