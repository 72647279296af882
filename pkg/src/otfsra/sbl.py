"""Two-dimensional pattern-coupled sparse Bayesian learning with EM
hyperparameter updates, LLR support detection, and a covariance-free
posterior path (TDSBL-CF).

The channel matrix prior couples each entry's precision with its
(2D+1)x(2D+1) neighbourhood through binary weights that are re-estimated
from the detected support every iteration.  The covariance-free path
replaces matrix inversions by CG solves and Rademacher-probe diagonal
estimation; a dense-inversion reference path implements the identical
iteration for validation.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DomainError, NumericError
from .linalg import cg_solve, rademacher

_EPS_NORM = 1e-30     # guard for the relative-change denominator
_EPS_POS = 1e-30      # floor for Sherman-Morrison denominators


@dataclass(frozen=True)
class TdsblConfig:
    """Knobs of Algorithm TDSBL-CF (defaults follow the evaluated setup:
    D=a=1, b=r=s=1e-4, P_fa=1e-3)."""

    max_iters: int = 50
    tol: float = 1e-5
    p_fa: float = 1e-3
    window: int = 1            # coupling range D
    n_probes: int = 64         # diagonal-estimation probes K
    a: float = 1.0
    b: float = 1e-4
    r: float = 1e-4
    s: float = 1e-4
    theta0: float = 1e3
    gamma0: float = 1e-2
    mu1: float = 1e-8
    cg_tol: float = 1e-6
    cg_max_iter: Optional[int] = None
    method: str = "cf"                 # "cf" | "dense"
    second_moment: str = "variance"    # "variance" | "squared"

    def __post_init__(self):
        if not 0.0 < self.p_fa < 1.0:
            raise DomainError("P_fa must lie in (0, 1)")
        if self.method not in ("cf", "dense"):
            raise DomainError(f"unknown method {self.method!r}")
        if self.second_moment not in ("variance", "squared"):
            raise DomainError(f"unknown second-moment mode {self.second_moment!r}")


@dataclass
class CoupledHyper:
    """Local precisions plus per-entry window coupling weights."""

    alpha: np.ndarray         # (n_rows, n_cols) > 0
    beta: np.ndarray          # (n_rows, n_cols, 2D+1, 2D+1) in {0, 1}
    window: int
    a: float
    b: float

    def gamma(self) -> np.ndarray:
        """Prior variances: elementwise inverse of the coupled precision."""
        g_inv = kernels.precision_window_sum(self.alpha, self.beta)
        if np.any(g_inv <= 0):
            raise NumericError("coupled precision lost positivity")
        return 1.0 / g_inv


def initial_beta(shape, window: int) -> np.ndarray:
    """All-ones coupling inside the clipped window."""
    return kernels.beta_from_support(np.ones(shape, dtype=bool), window)


def second_moment(mu, sigma_diag, mode: str = "variance") -> np.ndarray:
    """Posterior second moment E|h|^2.

    ``variance`` uses |mu|^2 + Sigma (the dimensionally consistent form);
    ``squared`` reproduces the literal |mu|^2 + Sigma^2 variant.
    """
    if mode == "variance":
        return np.abs(mu) ** 2 + sigma_diag
    return np.abs(mu) ** 2 + sigma_diag ** 2


def posterior_update(X, Y, gamma, theta, cfg: TdsblConfig, rng=None):
    """Posterior mean and variance diagonal for every column.

    Column j solves (theta X^H X + diag(1/gamma_j)) mu_j = theta X^H y_j;
    on the covariance-free path the variance diagonal is the Rademacher
    probe average of Sigma_j applied through the same CG solver, clipped
    into [0, gamma] (the exact range) to absorb estimator noise.
    """
    dim_in = X.dim_in
    n_col = Y.shape[1]
    inv_gamma = 1.0 / gamma

    if cfg.method == "dense":
        G = X.to_dense()
        base = theta * (G.conj().T @ G)
        rhs = theta * (G.conj().T @ Y)
        mu = np.empty((dim_in, n_col), dtype=np.complex128)
        sig = np.empty((dim_in, n_col))
        for j in range(n_col):
            A = base + np.diag(inv_gamma[:, j])
            cov = np.linalg.inv(A)
            mu[:, j] = cov @ rhs[:, j]
            sig[:, j] = cov.diagonal().real
        return mu, sig, {"cg_iterations": 0, "cg_converged": True}

    rng = np.random.default_rng(rng)
    k = cfg.n_probes
    probes = rademacher((dim_in, n_col, k), rng)
    rhs_mu = theta * X.rmatmat(Y)
    B = np.concatenate([rhs_mu[:, :, None], probes.astype(np.complex128)],
                       axis=2).reshape(dim_in, n_col * (k + 1))
    ig_flat = np.repeat(inv_gamma, k + 1, axis=1)

    def apply_a(v):
        cols = v.shape[1]
        return theta * X.rmatmat(X.matmat(v)) + ig_flat[:, :cols] * v

    res = cg_solve(apply_a, B, tol=cfg.cg_tol,
                   max_iter=cfg.cg_max_iter or 4 * dim_in)
    sol = res.x.reshape(dim_in, n_col, k + 1)
    mu = sol[:, :, 0]
    sig = np.mean((probes * sol[:, :, 1:]).real, axis=2)
    np.clip(sig, 0.0, gamma, out=sig)
    return mu, sig, {"cg_iterations": int(res.iterations.max()),
                     "cg_converged": res.all_converged}


def update_theta(Y, X, mu, sigma_diag, gamma, theta_prev, r: float, s: float) -> float:
    """EM noise-precision update from the residual and variance budget."""
    resid = Y - X.matmat(mu)
    correction = (1.0 / theta_prev) * float(np.sum(1.0 - sigma_diag / gamma))
    denom = float(np.sum(np.abs(resid) ** 2)) + correction + s
    if denom <= 0 or not math.isfinite(denom):
        raise NumericError(
            "noise-precision denominator lost positivity; posterior "
            "variances are inconsistent with the prior")
    return (Y.size + r) / denom


def update_alpha(moment, hyper: CoupledHyper):
    """Local precision update a/(b + omega) with the transposed-order
    neighbourhood energy omega; result lies in the optimality interval
    [a/(b+omega), (a+(2D+1)^2)/(b+omega)] by construction."""
    omega = kernels.moment_window_sum(moment, hyper.beta)
    return hyper.a / (hyper.b + omega), omega


def llr_support(X, Y, gamma, theta, p_fa: float, method: str = "cf",
                cg_tol: float = 1e-6, cg_max_iter: Optional[int] = None):
    """Support detection by the per-entry LLR test.

    The test statistic for entry (i, j) is
    ``|x_i^H C'^-1 y_j|^2 / (x_i^H C'^-1 x_i)`` with
    ``C' = C_j - gamma_ij x_i x_i^H`` and ``C_j = I/theta + X Gamma_j X^H``.
    Both quantities come from the shared-operator solves ``C_j^-1 y_j``
    and ``C_j^-1 X`` through the rank-one (Sherman-Morrison) correction,
    which is exact; the solves use CG on the covariance-free path and a
    dense factorisation on the reference path.
    """
    n_col = Y.shape[1]
    dim_out = X.dim_out
    threshold = math.log(1.0 / p_fa)
    Xd = X.to_dense()
    stats = np.empty((X.dim_in, n_col))
    for j in range(n_col):
        g_j = gamma[:, j]
        rhs = np.concatenate([Y[:, j:j + 1], Xd], axis=1)
        if method == "dense":
            C = np.eye(dim_out) / theta + (Xd * g_j) @ Xd.conj().T
            sol = np.linalg.solve(C, rhs)
        else:
            def apply_c(v):
                return v / theta + X.matmat(g_j[:, None] * X.rmatmat(v))

            sol = cg_solve(apply_c, rhs, tol=cg_tol,
                           max_iter=cg_max_iter or 4 * dim_out).x
        u = X.rmatmat(sol[:, 0])                       # x_i^H C^-1 y_j
        q = np.sum(np.conj(Xd) * sol[:, 1:], axis=0).real
        denom = np.maximum(q * np.maximum(1.0 - g_j * q, _EPS_POS), _EPS_POS)
        stats[:, j] = np.abs(u) ** 2 / denom
    return stats >= threshold, stats


def update_beta(support, window: int) -> np.ndarray:
    """Refresh coupling weights from the detected support."""
    return kernels.beta_from_support(np.asarray(support, dtype=bool), window)


def detect_activity(support, U: int) -> np.ndarray:
    """A device is active when any entry of its row block is supported."""
    s = np.asarray(support)
    if s.shape[0] % U:
        raise DomainError("support rows not divisible by device count")
    block = s.shape[0] // U
    return (s.reshape(U, block, -1).any(axis=(1, 2))).astype(int)


@dataclass
class TdsblResult:
    H_hat: np.ndarray
    lam_hat: np.ndarray
    support: np.ndarray
    theta: float
    iterations: int
    converged: bool
    diagnostics: list = field(default_factory=list)


def _rel_change(prev, cur) -> float:
    num = np.sum(np.abs(prev - cur) ** 2, axis=0)
    den = np.sum(np.abs(prev) ** 2, axis=0) + _EPS_NORM
    return float(np.sum(num / den))


def run_tdsbl_cf(X, Y, cfg: TdsblConfig = TdsblConfig(), rng=None) -> TdsblResult:
    """Run the full TDSBL-CF loop on an observation matrix.

    Iterates posterior update -> noise precision -> local precisions ->
    LLR support -> coupling weights -> activity, until the summed relative
    change of the posterior means drops below ``cfg.tol`` or
    ``cfg.max_iters`` is reached.
    """
    rng = np.random.default_rng(rng)
    dim_in, n_col = X.dim_in, Y.shape[1]
    U = X.U
    shape = (dim_in, n_col)

    hyper = CoupledHyper(alpha=np.full(shape, 1.0 / cfg.gamma0),
                         beta=initial_beta(shape, cfg.window),
                         window=cfg.window, a=cfg.a, b=cfg.b)
    gamma = np.full(shape, cfg.gamma0)
    theta = cfg.theta0
    mu_prev = np.zeros(shape, dtype=np.complex128)
    mu = np.full(shape, cfg.mu1, dtype=np.complex128)
    support = np.zeros(shape, dtype=bool)
    lam = np.zeros(U, dtype=int)
    diagnostics = []

    t = 0
    converged = False
    while t < cfg.max_iters:
        change = _rel_change(mu_prev, mu)
        if change <= cfg.tol:
            converged = True
            break
        t += 1
        tic = time.perf_counter()
        mu_new, sig, info = posterior_update(X, Y, gamma, theta, cfg, rng)
        theta = update_theta(Y, X, mu_new, sig, gamma, theta, cfg.r, cfg.s)
        moment = second_moment(mu_new, sig, cfg.second_moment)
        alpha, _ = update_alpha(moment, hyper)
        hyper.alpha = alpha
        # the LLR test sees the fresh precisions but last iteration's coupling
        support, _ = llr_support(X, Y, hyper.gamma(), theta, cfg.p_fa,
                                 method=cfg.method, cg_tol=cfg.cg_tol,
                                 cg_max_iter=cfg.cg_max_iter)
        hyper.beta = update_beta(support, cfg.window)
        lam = detect_activity(support, U)
        gamma = hyper.gamma()
        mu_prev, mu = mu, mu_new
        diagnostics.append({
            "iteration": t,
            "rel_change": change,
            "theta": theta,
            "cg_iterations": info["cg_iterations"],
            "cg_converged": info["cg_converged"],
            "support_size": int(support.sum()),
            "elapsed_s": time.perf_counter() - tic,
        })

    return TdsblResult(H_hat=mu, lam_hat=lam, support=support, theta=theta,
                       iterations=t, converged=converged,
                       diagnostics=diagnostics)
