"""Weak thresholds of l2/l1 (group basis pursuit) recovery.

Two routes to the same number:

* the asymptotic curve.  For a sparsity fraction ``beta`` and block length
  ``d`` the fixed point ``theta_hat`` of :func:`theta_residual` gives the
  truncation level ``c = F_d^{-1}((1 - theta)/(1 - beta))`` of the chi
  distribution, and :func:`alpha_weak` turns it into the minimal measurement
  fraction ``alpha_w``;
* a finite-``n`` estimate.  :func:`sample_gbar` draws the sorted aggregate of
  block magnitudes and support coordinates, and :func:`waterfill` solves the
  one-dimensional minimization whose optimal value, divided by ``d*n``,
  concentrates on ``alpha_w``.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import RngSpec
from .specfun import chi_inv_cdf, chi_trunc_moments

__all__ = [
    "ThresholdPoint",
    "GbarSample",
    "WaterFillResult",
    "ThresholdError",
    "theta_residual",
    "solve_theta",
    "alpha_weak",
    "threshold_curve",
    "curve_to_csv",
    "sample_gbar",
    "waterfill",
    "waterfill_identity_value",
    "finite_n_alpha_estimate",
]

BETA_CLAMP = (1e-4, 1.0 - 1e-4)
SCAN_POINTS = 1000
CURVE_CSV_HEADER = ("d", "beta", "theta_hat", "alpha_w")


class ThresholdError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThresholdPoint:
    d: int
    beta: float
    theta_hat: float
    alpha_w: float
    theta_complement: float = None  # 1 - theta_hat, not rounded through theta_hat


def _check_beta(beta, allow_one=False):
    beta = float(beta)
    ok = 0.0 < beta <= 1.0 if allow_one else 0.0 < beta < 1.0
    if not ok:
        raise ValueError(f"beta must lie in (0, 1{']' if allow_one else ')'}, got {beta!r}")
    return beta


def _check_d(d):
    if isinstance(d, bool) or int(d) != d or d < 1:
        raise ValueError(f"block length d must be a positive integer, got {d!r}")
    return int(d)


def _truncation(q, beta, d):
    """Chi quantile at ``q / (1 - beta)``, where ``q = 1 - theta``."""
    p = q / (1.0 - beta)
    return chi_inv_cdf(min(max(p, 0.0), 1.0 - 1e-16), d)


def _residual(q, beta, d):
    c = _truncation(q, beta, d)
    return (1.0 - beta) * chi_trunc_moments(c, d).m1 / (1.0 - q) - c


def theta_residual(theta, beta, d, complement=None):
    """``(1 - beta) * m1(c) / theta - c`` with ``c`` the chi quantile at ``(1-theta)/(1-beta)``.

    Positive at ``theta = 1`` and tending to ``-inf`` as ``theta -> beta``.
    Near ``theta = 1`` the quantile is very sensitive to ``1 - theta``; pass
    ``complement = 1 - theta`` at full relative precision (as stored in
    :attr:`ThresholdPoint.theta_complement`) to avoid the cancellation.
    """
    beta = _check_beta(beta)
    d = _check_d(d)
    theta = float(theta)
    if not beta < theta <= 1.0:
        raise ValueError(f"theta must lie in (beta, 1] = ({beta}, 1], got {theta!r}")
    if complement is None:
        q = 1.0 - theta
    else:
        q = float(complement)
        if not 0.0 <= q < 1.0 - beta or abs((1.0 - q) - theta) > 4 * np.spacing(theta):
            raise ValueError(f"complement {q!r} is inconsistent with theta {theta!r}")
    return _residual(q, beta, d)


def _solve_complement(beta, d):
    """Root ``q = 1 - theta_hat`` of the theta residual, to full relative precision in ``q``."""
    f = lambda q: _residual(q, beta, d)  # noqa: E731
    width = 1.0 - beta
    # q_hi <-> theta just above beta (residual < 0), q_lo <-> theta nearer 1 (residual >= 0)
    q_hi = width * (1.0 - 1e-6)
    f_hi = f(q_hi)
    if not f_hi < 0.0:
        raise ThresholdError(f"residual is not negative near theta=beta (beta={beta}, d={d})")
    q_lo = None
    for j in range(1, SCAN_POINTS + 1):
        q = width * (SCAN_POINTS - j) / SCAN_POINTS
        if q >= q_hi:
            continue
        fq = f(q)
        if fq >= 0.0:
            q_lo, f_lo = q, fq
            break
        q_hi, f_hi = q, fq
    if q_lo is None:
        raise ThresholdError(f"no sign change of the theta residual on (beta, 1] (beta={beta}, d={d})")
    if f_lo == 0.0:
        return q_lo

    while True:
        mid = 0.5 * (q_lo + q_hi)
        if not q_lo < mid < q_hi:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fm < 0.0:
            q_hi, f_hi = mid, fm
        else:
            q_lo, f_lo = mid, fm
    return q_lo if abs(f_lo) <= abs(f_hi) else q_hi


def solve_theta(beta, d):
    """Root of :func:`theta_residual` in ``(beta, 1)``.

    Scans ``(beta, 1]`` on a uniform grid for the first sign change and then
    bisects.  Monotonicity of the residual is never assumed.  The search runs
    in ``q = 1 - theta`` so roots close to one keep full precision.
    """
    return 1.0 - _solve_complement(_check_beta(beta), _check_d(d))


def alpha_weak(beta, d):
    """Exact weak threshold ``alpha_w(beta, d)`` as a :class:`ThresholdPoint`.

    ``alpha_w * d = (1 - beta) m2(c) + beta d - ((1 - beta) m1(c))^2 / theta_hat``.
    ``beta = 1`` returns ``alpha_w = theta_hat = 1`` by convention.
    """
    beta = _check_beta(beta, allow_one=True)
    d = _check_d(d)
    if beta == 1.0:
        return ThresholdPoint(d=d, beta=1.0, theta_hat=1.0, alpha_w=1.0, theta_complement=0.0)
    q = _solve_complement(beta, d)
    theta = 1.0 - q
    mom = chi_trunc_moments(_truncation(q, beta, d), d)
    tail1 = (1.0 - beta) * mom.m1
    alpha_d = (1.0 - beta) * mom.m2 + beta * d - tail1 * tail1 / theta
    alpha = min(alpha_d / d, 1.0)
    if not beta < alpha:
        raise ThresholdError(f"alpha_w={alpha} not above beta={beta} (d={d})")
    return ThresholdPoint(d=d, beta=beta, theta_hat=theta, alpha_w=alpha, theta_complement=q)


def threshold_curve(d, beta_grid):
    """One :class:`ThresholdPoint` per grid value, clamped to ``[1e-4, 1 - 1e-4]``."""
    d = _check_d(d)
    grid = np.asarray(beta_grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("beta grid must be nonempty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("beta grid must be strictly ascending")
    if grid[0] <= 0.0 or grid[-1] >= 1.0:
        raise ValueError("beta grid must lie inside (0, 1)")
    clamped = np.clip(grid, *BETA_CLAMP)
    return [alpha_weak(float(b), d) for b in clamped]


def curve_to_csv(points):
    """Curve CSV text: header ``d,beta,theta_hat,alpha_w``, 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_CSV_HEADER)
    for p in points:
        w.writerow([p.d, f"{p.beta:.17g}", f"{p.theta_hat:.17g}", f"{p.alpha_w:.17g}"])
    return buf.getvalue()


# -- finite-n route ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GbarSample:
    """Aggregate vector for the finite-``n`` minimization.

    ``sorted_free``: ascending norms of the ``n - k`` off-support Gaussian
    blocks.  ``support_first``: the signed first coordinate of each support
    block.  ``support_rest``: norms of the remaining ``d - 1`` coordinates.
    Concatenated in that order they form the length ``n + k`` vector whose
    weight pattern is ``[0, 1]`` (free), ``1`` (support_first), ``0``
    (support_rest).
    """

    n: int
    k: int
    d: int
    sorted_free: np.ndarray
    support_first: np.ndarray
    support_rest: np.ndarray

    def __post_init__(self):
        if self.sorted_free.shape != (self.n - self.k,):
            raise ValueError("sorted_free must have length n - k")
        if self.support_first.shape != (self.k,) or self.support_rest.shape != (self.k,):
            raise ValueError("support arrays must have length k")
        if np.any(np.diff(self.sorted_free) < 0):
            raise ValueError("sorted_free must be nondecreasing")
        if np.any(self.sorted_free < 0) or np.any(self.support_rest < 0):
            raise ValueError("magnitudes must be nonnegative")

    @property
    def gbar(self):
        return np.concatenate([self.sorted_free, self.support_first, self.support_rest])


@dataclass(frozen=True)
class WaterFillResult:
    s_star: float
    c_w: int
    f_value: float
    m_w_estimate: float


def sample_gbar(n, k, d, rng=RngSpec(0)):
    """Draw a :class:`GbarSample`: free norms, then support first coordinates, then the rest."""
    d = _check_d(d)
    if not 0 <= k <= n or n < 1:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got n={n}, k={k}")
    gen = rng.generator()
    free = np.sort(np.linalg.norm(gen.standard_normal((n - k, d)), axis=1))
    first = gen.standard_normal(k)
    rest = np.linalg.norm(gen.standard_normal((k, d - 1)), axis=1) if d > 1 else np.zeros(k)
    return GbarSample(n=n, k=k, d=d, sorted_free=free, support_first=first, support_rest=rest)


def _h(sample, s):
    free = np.maximum(sample.sorted_free - s, 0.0)
    return (float(free @ free) + float(np.sum((sample.support_first - s) ** 2))
            + float(sample.support_rest @ sample.support_rest))


def waterfill(sample):
    """Minimize ``h(s) = sum_free (g - s)_+^2 + sum_first (g - s)^2 + sum_rest g^2`` over ``s >= 0``.

    ``h`` is convex and piecewise quadratic with breakpoints at the sorted free
    magnitudes.  With ``c`` free entries below ``s`` the stationary point is
    ``s = S_c / (n - c)`` where ``S_c`` sums the free entries above position
    ``c`` and all support first coordinates; the first ``c`` whose stationary
    point lies in its own segment is the minimizer.
    """
    n, k, d = sample.n, sample.k, sample.d
    g = sample.sorted_free
    nf = n - k
    first_sum = float(np.sum(sample.support_first))
    # tail[c] = sum of g[c:], c = 0..nf
    tail = np.concatenate([np.cumsum(g[::-1])[::-1], [0.0]])
    counts = n - np.arange(nf + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_cand = (tail + first_sum) / counts
    lower = np.concatenate([[0.0], g])            # g_(c), with g_(0) = 0
    upper = np.concatenate([g, [np.inf]])          # g_(c+1)

    if first_sum + tail[0] <= 0.0:
        # h'(0) >= 0: the constraint s >= 0 is active
        s_star = 0.0
    else:
        valid = (counts > 0) & (s_cand >= lower) & (s_cand <= upper)
        idx = np.flatnonzero(valid)
        if idx.size:
            s_star = float(s_cand[idx[0]])
        else:
            # only possible with k = 0: h vanishes for s >= max(g)
            s_star = float(g[-1]) if nf else 0.0
    c_w = int(np.searchsorted(g, s_star, side="right"))
    f_value = _h(sample, s_star)
    return WaterFillResult(s_star=s_star, c_w=c_w, f_value=f_value, m_w_estimate=f_value / d)


def waterfill_identity_value(sample, c_w):
    """Closed form ``sum_{i>c} G_i^2 - (G^T z - sum_{i<=c} G_i)^2 / (n - c)``.

    ``z`` is one on every free and support-first entry and zero on the
    support-rest entries, so ``G^T z - sum_{i<=c} G_i`` is the sum of free
    entries above ``c`` plus the support first coordinates.
    """
    G = sample.gbar
    n = sample.n
    if n - c_w == 0:
        return 0.0
    tail_sq = float(G[c_w:] @ G[c_w:])
    lin = float(np.sum(G[c_w:n]))
    return tail_sq - lin * lin / (n - c_w)


def finite_n_alpha_estimate(n, k, d, samples, rng=RngSpec(0)):
    """Monte Carlo estimate of ``alpha_w(k/n, d)`` from ``samples`` draws.

    Sample ``j`` uses the sub-stream ``rng.child(j)``.  Returns a dict with the
    per-sample ratios ``f_value / (d n)`` and their mean and (sample) standard
    deviation.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    ratios = []
    identity_err = []
    for j in range(samples):
        smp = sample_gbar(n, k, d, rng.child(j))
        res = waterfill(smp)
        ratios.append(res.f_value / (d * n))
        closed = waterfill_identity_value(smp, res.c_w)
        identity_err.append(abs(closed - res.f_value) / max(res.f_value, 1e-300)
                            if res.s_star > 0.0 else 0.0)
    ratios = np.asarray(ratios)
    return {
        "n": n,
        "k": k,
        "d": d,
        "samples": samples,
        "mean": float(ratios.mean()),
        "stddev": float(ratios.std(ddof=1)) if samples > 1 else 0.0,
        "ratios": ratios.tolist(),
        "max_identity_rel_err": float(max(identity_err)),
    }
