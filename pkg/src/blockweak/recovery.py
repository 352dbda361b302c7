"""Group basis pursuit: minimize the sum of block norms subject to ``A x = y``.

The solver is ADMM on the consensus splitting ``x = z`` where ``x`` is kept
on the affine set ``{x : A x = y}`` (exact projection through a thin QR of
``A^T``) and ``z`` carries the block soft-threshold.  Convergence is declared
only when the ADMM residuals are small *and* the duality gap against the
dual feasible point built from the scaled multiplier is below ``obj_tol``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import block_norms, blocks, check_block_matrix, check_vector

__all__ = [
    "RecoveryResult",
    "RankDeficientError",
    "GroupBasisPursuit",
    "solve_group_bp",
    "check_recovery",
    "block_soft_threshold",
]

DEFAULT_FEAS_TOL = 1e-9
DEFAULT_OBJ_TOL = 1e-8
DEFAULT_MAX_ITERS = 200_000
DEFAULT_REC_TOL = 1e-4


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    x_hat: np.ndarray
    objective: float
    feas_residual: float
    iterations: int
    converged: bool
    dual_gap: float
    recovered: bool = None

    def to_dict(self):
        return {
            "x_hat": self.x_hat.tolist(),
            "objective": self.objective,
            "feas_residual": self.feas_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "recovered": self.recovered,
        }


def block_soft_threshold(v, d, t):
    """Proximal map of ``t * sum_i ||v_i||_2`` over blocks of length ``d``."""
    V = blocks(v, d)
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t, 1.0 - t / norms, 0.0)
    return (V * scale).reshape(-1)


class _AffineProjector:
    """Orthogonal projection onto ``{x : A x = y}``."""

    def __init__(self, A, y, rcond=1e-12):
        Q, R = linalg.qr(A.T, mode="economic", check_finite=False)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag.min() <= rcond * max(diag.max(), 1.0):
            raise RankDeficientError("A does not have full row rank")
        self.Q = Q
        self.R = R
        self.x_ls = Q @ linalg.solve_triangular(R, y, trans="T", check_finite=False)

    def __call__(self, v):
        return v - self.Q @ (self.Q.T @ v) + self.x_ls

    def lstsq_dual(self, g):
        """``nu`` minimizing ``||A^T nu - g||``."""
        return linalg.solve_triangular(self.R, self.Q.T @ g, check_finite=False)


def _dual_gap(A, y, d, nu, objective):
    worst = block_norms(A.T @ nu, d).max()
    if worst > 1.0:
        nu = nu / worst
    return objective - float(y @ nu)


def _support_columns(supp, d):
    return (supp[:, None] * d + np.arange(d)).reshape(-1)


def _polish_lstsq(A, y, d, nu0, supp, feas_tol, y_scale):
    """Least squares on a support of at most ``M / d`` blocks plus a matching dual point.

    Returns ``(x, nu)`` or ``None``.
    """
    x = np.zeros(A.shape[1])
    cols = _support_columns(supp, d)
    A_S = A[:, cols]
    x_S, *_ = linalg.lstsq(A_S, y, check_finite=False)
    if np.linalg.norm(A_S @ x_S - y) > feas_tol * y_scale:
        return None
    XS = x_S.reshape(-1, d)
    norms = np.linalg.norm(XS, axis=1)
    if np.any(norms == 0.0):
        return None
    x[cols] = x_S
    b = (XS / norms[:, None]).reshape(-1)
    corr, *_ = linalg.lstsq(A_S.T, b - A_S.T @ nu0, check_finite=False)
    return x, nu0 + corr


def _polish_kkt(A, y, d, nu0, supp, t0, feas_tol, y_scale, iters=30):
    """Newton on the optimality system restricted to ``supp``.

    Unknowns ``(nu, t)``: ``||A_i^T nu|| = 1`` for ``i`` in the support and
    ``sum_i t_i A_i A_i^T nu = y``; the primal point is ``x_i = t_i A_i^T nu``.
    """
    M = A.shape[0]
    s = supp.size
    AS = A[:, _support_columns(supp, d)].reshape(M, s, d)
    AS2 = AS.reshape(M, s * d)
    nu, t = nu0.copy(), t0.copy()
    for _ in range(iters):
        P = np.einsum("msd,m->sd", AS, nu)          # rows A_i^T nu
        APi = np.einsum("msd,sd->ms", AS, P)        # columns A_i A_i^T nu
        F = np.concatenate([np.einsum("sd,sd->s", P, P) - 1.0, APi @ t - y])
        if np.linalg.norm(F) <= 1e-13 * y_scale:
            break
        J = np.zeros((s + M, M + s))
        J[:s, :M] = 2.0 * APi.T
        J[s:, :M] = (AS2 * np.repeat(t, d)) @ AS2.T
        J[s:, M:] = APi
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(J, F, check_finite=False)
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            return None
        nu -= step[:M]
        t -= step[M:]
        if not np.all(np.isfinite(t)):
            return None
    if np.any(t <= 0.0):
        return None
    P = np.einsum("msd,m->sd", AS, nu)
    x = np.zeros(A.shape[1])
    x[_support_columns(supp, d)] = (t[:, None] * P).reshape(-1)
    if np.linalg.norm(A @ x - y) > feas_tol * y_scale:
        return None
    return x, nu


def solve_group_bp(A, y, d, feas_tol=DEFAULT_FEAS_TOL, obj_tol=DEFAULT_OBJ_TOL,
                   max_iters=DEFAULT_MAX_ITERS, rho=1.0, check_every=25):
    """Solve ``min sum_i ||x_i||_2  s.t.  A x = y`` and return a :class:`RecoveryResult`.

    ``d = 1`` is plain basis pursuit.  Raises :class:`RankDeficientError` when
    ``A`` lacks full row rank.  A result that hit ``max_iters`` has
    ``converged=False``.

    Every ``check_every`` iterations two exits are tried: the plain ADMM
    residual test, and a polish step (least squares on the current support
    of ``z``).  Either exit additionally requires the relative duality gap,
    measured against a dual feasible point, to be at most ``obj_tol``.
    """
    A, n = check_block_matrix(A, d)
    y = check_vector(y, A.shape[0], "y")
    proj = _AffineProjector(A, y)
    y_scale = max(1.0, float(np.linalg.norm(y)))

    x = proj(np.zeros(A.shape[1]))
    z = x.copy()
    u = np.zeros_like(x)
    converged = False
    gap = np.inf
    prev_supp = None
    kkt_wait, kkt_next = 1, 0
    it = 0
    while it < max_iters:
        it += 1
        x = proj(z - u)
        z_old = z
        z = block_soft_threshold(x + u, d, 1.0 / rho)
        u += x - z
        if it % check_every and it != max_iters:
            continue
        nu = proj.lstsq_dual(rho * u)
        znorms = block_norms(z, d)
        supp = np.flatnonzero(znorms > 0.0)
        stable = prev_supp is not None and np.array_equal(supp, prev_supp)
        prev_supp = supp
        polished = None
        if supp.size == 0:
            if np.linalg.norm(y) <= feas_tol * y_scale:
                x, gap, converged = np.zeros_like(x), 0.0, True
                break
        elif supp.size * d <= A.shape[0]:
            polished = _polish_lstsq(A, y, d, nu, supp, feas_tol, y_scale)
        elif stable and supp.size <= A.shape[0] and it >= kkt_next:
            polished = _polish_kkt(A, y, d, nu, supp, znorms[supp], feas_tol, y_scale)
            if polished is None:
                kkt_wait *= 2
                kkt_next = it + kkt_wait * check_every
        if polished is not None:
            x_p, nu_p = polished
            obj = float(block_norms(x_p, d).sum())
            gap_p = _dual_gap(A, y, d, nu_p, obj)
            if gap_p <= obj_tol * max(1.0, obj):
                x, gap, converged = x_p, gap_p, True
                break
        scale = max(1.0, np.linalg.norm(x), np.linalg.norm(z))
        r_pri = np.linalg.norm(x - z)
        r_dual = rho * np.linalg.norm(z - z_old)
        if r_pri <= feas_tol * scale and r_dual <= feas_tol * scale:
            obj = float(block_norms(x, d).sum())
            gap = _dual_gap(A, y, d, nu, obj)
            if gap <= obj_tol * max(1.0, obj):
                converged = True
                break

    objective = float(block_norms(x, d).sum())
    if not converged:
        gap = _dual_gap(A, y, d, proj.lstsq_dual(rho * u), objective)
    feas = float(np.linalg.norm(A @ x - y)) / y_scale
    return RecoveryResult(x_hat=x, objective=objective, feas_residual=feas, iterations=it,
                          converged=converged, dual_gap=float(gap))


def check_recovery(result, x_true, rec_tol=DEFAULT_REC_TOL):
    """``||x_hat - x_true|| / max(1, ||x_true||) <= rec_tol`` (inclusive)."""
    x_hat = result.x_hat if isinstance(result, RecoveryResult) else np.asarray(result)
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x_true.shape}")
    err = np.linalg.norm(x_hat - x_true) / max(1.0, float(np.linalg.norm(x_true)))
    return bool(err <= rec_tol)


class GroupBasisPursuit(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`solve_group_bp`.

    ``fit(A, y)`` treats the rows of ``A`` as measurements; the recovered
    signal is ``coef_`` and ``predict(A)`` returns ``A @ coef_``.

    Parameters
    ----------
    block_size : int
        Block length ``d``; must divide the number of columns of ``A``.
    feas_tol, obj_tol : float
        Residual and relative duality-gap tolerances.
    max_iter : int
        ADMM iteration budget.
    rho : float
        ADMM penalty parameter.
    """

    def __init__(self, block_size=1, feas_tol=DEFAULT_FEAS_TOL, obj_tol=DEFAULT_OBJ_TOL,
                 max_iter=DEFAULT_MAX_ITERS, rho=1.0):
        self.block_size = block_size
        self.feas_tol = feas_tol
        self.obj_tol = obj_tol
        self.max_iter = max_iter
        self.rho = rho

    def fit(self, A, y):
        res = solve_group_bp(A, y, self.block_size, feas_tol=self.feas_tol,
                             obj_tol=self.obj_tol, max_iters=self.max_iter, rho=self.rho)
        self.coef_ = res.x_hat
        self.objective_ = res.objective
        self.feas_residual_ = res.feas_residual
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.dual_gap_ = res.dual_gap
        self.n_features_in_ = res.x_hat.shape[0]
        return self

    def predict(self, A):
        check_is_fitted(self, "coef_")
        A, _ = check_block_matrix(A, self.block_size)
        return A @ self.coef_

    def block_norms(self):
        check_is_fitted(self, "coef_")
        return block_norms(self.coef_, self.block_size)
