"""Hot inner-loop kernels: windowed coupling sums and small-kernel 2D
convolution.

Every kernel exists twice: a numba ``@njit`` build and a pure-numpy
fallback.  The active backend is chosen at import time from the
``OTFSRA_NUMBA`` environment variable ("0"/"false"/"off" disables numba);
both implementations stay importable so tests and benchmarks can compare
them directly.

Border handling is "clipped": window positions falling outside the matrix
contribute nothing, which for the convolution equals zero padding.
"""

import os

import numpy as np

_FLAG = os.environ.get("OTFSRA_NUMBA", "auto").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = _WANT_NUMBA and _HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# centred 2D convolution, clipped at the borders
# ---------------------------------------------------------------------------

def conv2d_same_numpy(x: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """out[i,j] = sum_{dp,dq} ker[D-dp, E-dq] * x[i+dp, j+dq] over valid
    (i+dp, j+dq); ker has odd dimensions (2D+1, 2E+1)."""
    kh, kw = ker.shape
    dcen, ecen = kh // 2, kw // 2
    out = np.zeros_like(x)
    n, m = x.shape
    for dp in range(-dcen, dcen + 1):
        lo_i, hi_i = max(0, -dp), min(n, n - dp)
        if lo_i >= hi_i:
            continue
        for dq in range(-ecen, ecen + 1):
            w = ker[dcen - dp, ecen - dq]
            if w == 0.0:
                continue
            lo_j, hi_j = max(0, -dq), min(m, m - dq)
            if lo_j >= hi_j:
                continue
            out[lo_i:hi_i, lo_j:hi_j] += w * x[lo_i + dp:hi_i + dp,
                                                lo_j + dq:hi_j + dq]
    return out


@njit(cache=True)
def conv2d_same_numba(x, ker):  # pragma: no cover - exercised via dispatch
    kh, kw = ker.shape
    dcen = kh // 2
    ecen = kw // 2
    n, m = x.shape
    out = np.zeros((n, m), dtype=x.dtype)
    # interior: no clipping, tight loop
    for i in range(dcen, n - dcen):
        for j in range(ecen, m - ecen):
            acc = 0.0
            for dp in range(-dcen, dcen + 1):
                for dq in range(-ecen, ecen + 1):
                    acc += ker[dcen - dp, ecen - dq] * x[i + dp, j + dq]
            out[i, j] = acc
    # borders: clipped windows
    for i in range(n):
        border_row = i < dcen or i >= n - dcen
        for j in range(m):
            if not border_row and ecen <= j < m - ecen:
                continue
            acc = 0.0
            for dp in range(-dcen, dcen + 1):
                p = i + dp
                if p < 0 or p >= n:
                    continue
                for dq in range(-ecen, ecen + 1):
                    q = j + dq
                    if q < 0 or q >= m:
                        continue
                    acc += ker[dcen - dp, ecen - dq] * x[p, q]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# per-entry coupled window sums (coupling weights vary per entry)
# ---------------------------------------------------------------------------

def precision_window_sum_numpy(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """out[i,j] = sum_{dp,dq} beta[i,j,D+dp,D+dq] * alpha[i+dp,j+dq]."""
    n, m, kh, _ = beta.shape
    dcen = kh // 2
    out = np.zeros((n, m), dtype=alpha.dtype)
    for dp in range(-dcen, dcen + 1):
        lo_i, hi_i = max(0, -dp), min(n, n - dp)
        if lo_i >= hi_i:
            continue
        for dq in range(-dcen, dcen + 1):
            lo_j, hi_j = max(0, -dq), min(m, m - dq)
            if lo_j >= hi_j:
                continue
            out[lo_i:hi_i, lo_j:hi_j] += (
                beta[lo_i:hi_i, lo_j:hi_j, dcen + dp, dcen + dq]
                * alpha[lo_i + dp:hi_i + dp, lo_j + dq:hi_j + dq]
            )
    return out


@njit(cache=True)
def precision_window_sum_numba(alpha, beta):  # pragma: no cover
    n, m, kh, kw = beta.shape
    dcen = kh // 2
    out = np.zeros((n, m), dtype=alpha.dtype)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for dp in range(-dcen, dcen + 1):
                p = i + dp
                if p < 0 or p >= n:
                    continue
                for dq in range(-dcen, dcen + 1):
                    q = j + dq
                    if q < 0 or q >= m:
                        continue
                    acc += beta[i, j, dcen + dp, dcen + dq] * alpha[p, q]
            out[i, j] = acc
    return out


def moment_window_sum_numpy(moment: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """out[i,j] = sum_{dp,dq} beta[i+dp,j+dq,D-dp,D-dq] * moment[i+dp,j+dq].

    Transposed coupling order: the neighbour's own weight toward (i,j)."""
    n, m, kh, _ = beta.shape
    dcen = kh // 2
    out = np.zeros((n, m), dtype=moment.dtype)
    for dp in range(-dcen, dcen + 1):
        lo_i, hi_i = max(0, -dp), min(n, n - dp)
        if lo_i >= hi_i:
            continue
        for dq in range(-dcen, dcen + 1):
            lo_j, hi_j = max(0, -dq), min(m, m - dq)
            if lo_j >= hi_j:
                continue
            out[lo_i:hi_i, lo_j:hi_j] += (
                beta[lo_i + dp:hi_i + dp, lo_j + dq:hi_j + dq,
                     dcen - dp, dcen - dq]
                * moment[lo_i + dp:hi_i + dp, lo_j + dq:hi_j + dq]
            )
    return out


@njit(cache=True)
def moment_window_sum_numba(moment, beta):  # pragma: no cover
    n, m, kh, kw = beta.shape
    dcen = kh // 2
    out = np.zeros((n, m), dtype=moment.dtype)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for dp in range(-dcen, dcen + 1):
                p = i + dp
                if p < 0 or p >= n:
                    continue
                for dq in range(-dcen, dcen + 1):
                    q = j + dq
                    if q < 0 or q >= m:
                        continue
                    acc += beta[p, q, dcen - dp, dcen - dq] * moment[p, q]
            out[i, j] = acc
    return out


def beta_from_support_numpy(support: np.ndarray, window: int) -> np.ndarray:
    """Coupling weights from a binary support map.

    beta[i,j,D+dp,D+dq] = S[i+dp,j+dq] when S[i,j]=1 else 1-S[i+dp,j+dq];
    window positions outside the matrix get weight 0.
    """
    n, m = support.shape
    k = 2 * window + 1
    s = support.astype(np.float64)
    beta = np.zeros((n, m, k, k))
    for dp in range(-window, window + 1):
        lo_i, hi_i = max(0, -dp), min(n, n - dp)
        if lo_i >= hi_i:
            continue
        for dq in range(-window, window + 1):
            lo_j, hi_j = max(0, -dq), min(m, m - dq)
            if lo_j >= hi_j:
                continue
            here = s[lo_i:hi_i, lo_j:hi_j]
            there = s[lo_i + dp:hi_i + dp, lo_j + dq:hi_j + dq]
            beta[lo_i:hi_i, lo_j:hi_j, window + dp, window + dq] = (
                here * there + (1.0 - here) * (1.0 - there)
            )
    return beta


@njit(cache=True)
def beta_from_support_numba(support, window):  # pragma: no cover
    n, m = support.shape
    k = 2 * window + 1
    beta = np.zeros((n, m, k, k))
    for i in range(n):
        for j in range(m):
            here = 1.0 if support[i, j] else 0.0
            for dp in range(-window, window + 1):
                p = i + dp
                if p < 0 or p >= n:
                    continue
                for dq in range(-window, window + 1):
                    q = j + dq
                    if q < 0 or q >= m:
                        continue
                    there = 1.0 if support[p, q] else 0.0
                    if here == 1.0:
                        beta[i, j, window + dp, window + dq] = there
                    else:
                        beta[i, j, window + dp, window + dq] = 1.0 - there
    return beta


if USE_NUMBA:
    conv2d_same = conv2d_same_numba
    precision_window_sum = precision_window_sum_numba
    moment_window_sum = moment_window_sum_numba
    beta_from_support = beta_from_support_numba
else:
    conv2d_same = conv2d_same_numpy
    precision_window_sum = precision_window_sum_numpy
    moment_window_sum = moment_window_sum_numpy
    beta_from_support = beta_from_support_numpy
