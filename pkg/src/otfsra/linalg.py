"""Matrix-free solvers: conjugate gradients for Hermitian positive
definite maps and Rademacher-probe diagonal estimation."""

from dataclasses import dataclass

import numpy as np

from .errors import CgBreakdownError, DomainError, NumericError, ShapeError


@dataclass
class CgResult:
    """Solution bundle of a (possibly multi-RHS) CG solve."""

    x: np.ndarray
    converged: np.ndarray      # bool per RHS column
    iterations: np.ndarray     # iterations spent per RHS column
    rel_residual: np.ndarray   # final true residual norm / rhs norm

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def cg_solve(apply_a, b, tol: float = 1e-6, max_iter=None) -> CgResult:
    """Solve A x = b with conjugate gradients, never materialising A.

    ``apply_a`` must accept arrays shaped like ``b`` and act column-wise;
    A must be Hermitian positive definite on the relevant subspace.  ``b``
    may be a vector or a matrix of right-hand sides (each column is an
    independent system; converged columns are frozen and removed from the
    working set).  Non-convergence is reported through ``converged``, not
    raised; zero curvature raises :class:`CgBreakdownError`.
    """
    if tol <= 0:
        raise DomainError("tolerance must be positive")
    b = np.asarray(b)
    single = b.ndim == 1
    B = b[:, None] if single else b
    if B.ndim != 2:
        raise ShapeError("b must be a vector or a matrix of columns")
    dim, n_rhs = B.shape
    if max_iter is None:
        max_iter = 4 * dim

    X = np.zeros_like(B)
    bnorm2 = np.sum(np.abs(B) ** 2, axis=0).real
    iters = np.zeros(n_rhs, dtype=int)
    live = np.flatnonzero(bnorm2 > 0.0)

    R = B[:, live].copy()
    P = R.copy()
    rs = bnorm2[live].copy()
    tol2 = tol * tol * bnorm2[live]

    it = 0
    while live.size and it < max_iter:
        it += 1
        AP = apply_a(P)
        pap = np.sum(np.conj(P) * AP, axis=0).real
        if not np.all(np.isfinite(pap)):
            raise NumericError("non-finite curvature inside CG")
        if np.any(pap <= 0.0):
            raise CgBreakdownError(
                "zero or negative curvature: operator is not positive "
                "definite on the visited subspace")
        alpha = rs / pap
        X[:, live] += alpha * P
        R -= alpha * AP
        rs_new = np.sum(np.abs(R) ** 2, axis=0).real
        iters[live] = it

        done = rs_new <= tol2
        if np.any(done):
            keep = ~done
            live = live[keep]
            R = R[:, keep]
            P = P[:, keep]
            rs_new = rs_new[keep]
            rs = rs[keep]
            tol2 = tol2[keep]
            if not live.size:
                break
            AP = None
        beta = rs_new / rs
        P = R + beta * P
        rs = rs_new

    res = B - apply_a(X)
    rel = np.sqrt(np.sum(np.abs(res) ** 2, axis=0).real
                  / np.where(bnorm2 > 0, bnorm2, 1.0))
    converged = rel <= tol
    if not np.all(np.isfinite(X)):
        raise NumericError("CG produced non-finite values")
    out = X[:, 0] if single else X
    if single:
        return CgResult(out, converged[:1], iters[:1], rel[:1])
    return CgResult(out, converged, iters, rel)


def rademacher(shape, rng) -> np.ndarray:
    """+-1 entries with equal probability."""
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0


def estimate_diagonal(apply_s, dim: int, n_probes: int, rng=None) -> np.ndarray:
    """Unbiased stochastic estimate of diag(S).

    Averages ``p .* (S p)`` over ``n_probes`` i.i.d. Rademacher probe
    vectors; exact for diagonal S at any probe count.  Returns the real
    part (the imaginary part of each probe term has zero mean for the
    Hermitian maps this is used on).
    """
    if n_probes < 1:
        raise DomainError("need at least one probe")
    rng = np.random.default_rng(rng)
    probes = rademacher((dim, n_probes), rng)
    sp = apply_s(probes)
    return np.mean((probes * sp).real, axis=1)


def circulant_matvec(X, h: np.ndarray) -> np.ndarray:
    """y = X h through the doubly circulant fast path of the operator."""
    return X.matmat(h)


def adjoint_matvec(X, y: np.ndarray) -> np.ndarray:
    """X^H y through the fast path."""
    return X.rmatmat(y)
