"""Hot numeric kernels with two interchangeable backends.

Every function here is a pure array-in/array-out primitive used by the
tensor engine's inner loops (row normalization, softmax, ReLU, gradient
norms, SGD updates). Two implementations exist:

* ``numba``: fused ``@njit`` loops, the default when numba imports.
* ``numpy``: vectorized fallback, always available.

Selection happens once at import via the ``COSLEARN_BACKEND`` environment
variable (``numba`` | ``numpy``; unset means "numba if available"). Both
backends are exposed in :data:`IMPLEMENTATIONS` so they can be compared
directly, e.g. by ``benchmarks/bench_kernels.py``.

Matrix products are deliberately not dispatched: ``a @ b`` already hits
BLAS and a jitted loop would only be slower.

All kernels assume C-contiguous float64 arrays, which is what the tensor
engine produces.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

from .errors import ConfigError

ENV_VAR = "COSLEARN_BACKEND"


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _np_relu_fwd(x):
    return np.maximum(x, 0.0)


def _np_relu_bwd(x, g):
    return np.where(x > 0.0, g, 0.0)


def _np_row_norms(x):
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _np_div_rows(x, s):
    return x / s[:, None]


def _np_l2norm_bwd(y, norms, g):
    # y = x / ||x||; pull the radial component out of g and rescale.
    proj = np.einsum("ij,ij->i", g, y)
    return (g - y * proj[:, None]) / norms[:, None]


def _np_softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_bwd(p, g):
    dot = np.einsum("ij,ij->i", g, p)
    return p * (g - dot[:, None])


def _np_log_softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def _np_log_softmax_bwd(lsm, g):
    return g - np.exp(lsm) * g.sum(axis=1, keepdims=True)


def _np_sumsq(x):
    flat = x.ravel()
    return float(flat @ flat)


def _np_sgd_update(p, g, lr):
    p -= lr * g


def _np_scale_inplace(x, s):
    x *= s


_NUMPY = SimpleNamespace(
    name="numpy",
    relu_fwd=_np_relu_fwd,
    relu_bwd=_np_relu_bwd,
    row_norms=_np_row_norms,
    div_rows=_np_div_rows,
    l2norm_bwd=_np_l2norm_bwd,
    softmax_rows=_np_softmax_rows,
    softmax_bwd=_np_softmax_bwd,
    log_softmax_rows=_np_log_softmax_rows,
    log_softmax_bwd=_np_log_softmax_bwd,
    sumsq=_np_sumsq,
    sgd_update=_np_sgd_update,
    scale_inplace=_np_scale_inplace,
)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


def _build_numba_backend():
    from numba import njit

    @njit(cache=True)
    def nb_relu_fwd(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            v = flat[i]
            out[i] = v if v > 0.0 else 0.0
        return out.reshape(x.shape)

    @njit(cache=True)
    def nb_relu_bwd(x, g):
        xf = x.ravel()
        gf = g.ravel()
        out = np.empty_like(gf)
        for i in range(xf.size):
            out[i] = gf[i] if xf[i] > 0.0 else 0.0
        return out.reshape(x.shape)

    @njit(cache=True)
    def nb_row_norms(x):
        m, n = x.shape
        out = np.empty(m)
        for i in range(m):
            s = 0.0
            for j in range(n):
                s += x[i, j] * x[i, j]
            out[i] = np.sqrt(s)
        return out

    @njit(cache=True)
    def nb_div_rows(x, s):
        m, n = x.shape
        out = np.empty_like(x)
        for i in range(m):
            inv = 1.0 / s[i]
            for j in range(n):
                out[i, j] = x[i, j] * inv
        return out

    @njit(cache=True)
    def nb_l2norm_bwd(y, norms, g):
        m, n = y.shape
        out = np.empty_like(g)
        for i in range(m):
            proj = 0.0
            for j in range(n):
                proj += g[i, j] * y[i, j]
            inv = 1.0 / norms[i]
            for j in range(n):
                out[i, j] = (g[i, j] - y[i, j] * proj) * inv
        return out

    @njit(cache=True)
    def nb_softmax_rows(z):
        m, n = z.shape
        out = np.empty_like(z)
        for i in range(m):
            hi = z[i, 0]
            for j in range(1, n):
                if z[i, j] > hi:
                    hi = z[i, j]
            total = 0.0
            for j in range(n):
                e = np.exp(z[i, j] - hi)
                out[i, j] = e
                total += e
            inv = 1.0 / total
            for j in range(n):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def nb_softmax_bwd(p, g):
        m, n = p.shape
        out = np.empty_like(g)
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot += g[i, j] * p[i, j]
            for j in range(n):
                out[i, j] = p[i, j] * (g[i, j] - dot)
        return out

    @njit(cache=True)
    def nb_log_softmax_rows(z):
        m, n = z.shape
        out = np.empty_like(z)
        for i in range(m):
            hi = z[i, 0]
            for j in range(1, n):
                if z[i, j] > hi:
                    hi = z[i, j]
            total = 0.0
            for j in range(n):
                shifted = z[i, j] - hi
                out[i, j] = shifted
                total += np.exp(shifted)
            lse = np.log(total)
            for j in range(n):
                out[i, j] -= lse
        return out

    @njit(cache=True)
    def nb_log_softmax_bwd(lsm, g):
        m, n = lsm.shape
        out = np.empty_like(g)
        for i in range(m):
            gsum = 0.0
            for j in range(n):
                gsum += g[i, j]
            for j in range(n):
                out[i, j] = g[i, j] - np.exp(lsm[i, j]) * gsum
        return out

    @njit(cache=True)
    def nb_sumsq(x):
        flat = x.ravel()
        s = 0.0
        for i in range(flat.size):
            s += flat[i] * flat[i]
        return s

    @njit(cache=True)
    def nb_sgd_update(p, g, lr):
        pf = p.reshape(-1)
        gf = g.reshape(-1)
        for i in range(pf.size):
            pf[i] -= lr * gf[i]

    @njit(cache=True)
    def nb_scale_inplace(x, s):
        flat = x.reshape(-1)
        for i in range(flat.size):
            flat[i] *= s

    def sumsq(x):
        return float(nb_sumsq(np.ascontiguousarray(x)))

    return SimpleNamespace(
        name="numba",
        relu_fwd=nb_relu_fwd,
        relu_bwd=nb_relu_bwd,
        row_norms=nb_row_norms,
        div_rows=nb_div_rows,
        l2norm_bwd=nb_l2norm_bwd,
        softmax_rows=nb_softmax_rows,
        softmax_bwd=nb_softmax_bwd,
        log_softmax_rows=nb_log_softmax_rows,
        log_softmax_bwd=nb_log_softmax_bwd,
        sumsq=sumsq,
        sgd_update=nb_sgd_update,
        scale_inplace=nb_scale_inplace,
    )


def _select_backend():
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ConfigError(
            f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return _NUMPY, None
    try:
        numba_ns = _build_numba_backend()
    except ImportError:
        if choice == "numba":
            raise ConfigError(f"{ENV_VAR}=numba but numba is not installed")
        return _NUMPY, None
    return numba_ns, numba_ns


_ACTIVE, _NUMBA = _select_backend()

#: Both backends, for side-by-side benchmarking. The numba entry is None
#: when numba is not importable.
IMPLEMENTATIONS = {"numpy": _NUMPY, "numba": _NUMBA}


def active_backend() -> str:
    """Name of the backend the module-level kernels dispatch to."""
    return _ACTIVE.name


relu_fwd = _ACTIVE.relu_fwd
relu_bwd = _ACTIVE.relu_bwd
row_norms = _ACTIVE.row_norms
div_rows = _ACTIVE.div_rows
l2norm_bwd = _ACTIVE.l2norm_bwd
softmax_rows = _ACTIVE.softmax_rows
softmax_bwd = _ACTIVE.softmax_bwd
log_softmax_rows = _ACTIVE.log_softmax_rows
log_softmax_bwd = _ACTIVE.log_softmax_bwd
sumsq = _ACTIVE.sumsq
sgd_update = _ACTIVE.sgd_update
scale_inplace = _ACTIVE.scale_inplace
