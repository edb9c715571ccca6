"""Renyi-DP accounting for the Poisson-Binomial mechanism.

Distributions are carried as log-pmfs (1-D float arrays over ``{0..K}``,
``-inf`` for zero mass) so that binomials with millions of trials stay
representable.  The exact accountant compares the aggregate with and without
one extreme client; the approximate one bounds it by ``m`` copies of the
single-trial comparison, which costs O(n) instead of O(n m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln, logsumexp

from dpate.errors import CalibrationError, ConfigurationError
from dpate.mechanisms import GaussianParams, MechanismSuite, PbmParams

# Half-integer orders keep the conversion within 0.5% of a continuous grid.
# Orders above 64 are needed for small targets: with delta = 1e-5 the
# conversion term alone exceeds 0.1 at every order <= 64.
DEFAULT_ORDERS: tuple = tuple(
    sorted(
        {1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0, 64.0}
        | {float(a) for a in range(2, 65)}
        | {a + 0.5 for a in range(1, 32)}
        | {80.0, 96.0, 128.0, 192.0, 256.0, 384.0, 512.0, 1024.0}
    )
)

EXACT_SIZE_LIMIT = 10**7
NORMALIZATION_TOL = 1e-9
THETA_MAX = 0.25


@dataclass(frozen=True)
class RdpCurve:
    """An RDP guarantee tabulated on a grid of Renyi orders."""

    orders: tuple
    epsilons: tuple

    def __post_init__(self):
        orders = tuple(float(a) for a in self.orders)
        eps = tuple(float(e) for e in self.epsilons)
        if len(orders) != len(eps) or not orders:
            raise ConfigurationError("orders and epsilons must be non-empty and aligned")
        if orders[0] <= 1 or any(b <= a for a, b in zip(orders, orders[1:])):
            raise ConfigurationError("orders must be > 1 and strictly increasing")
        if any(e < 0 or math.isnan(e) for e in eps):
            raise ConfigurationError("epsilons must be non-negative")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "epsilons", eps)

    @classmethod
    def from_function(cls, fn: Callable, orders: Sequence[float] = DEFAULT_ORDERS) -> "RdpCurve":
        return cls(tuple(orders), tuple(fn(a) for a in orders))

    def scaled(self, factor: float) -> "RdpCurve":
        return RdpCurve(self.orders, tuple(factor * e for e in self.epsilons))

    def is_monotone(self) -> bool:
        return all(b >= a - 1e-12 for a, b in zip(self.epsilons, self.epsilons[1:]))

    def __len__(self):
        return len(self.orders)


@dataclass(frozen=True)
class BudgetSplit:
    total: RdpCurve
    fraction_first: float
    first: RdpCurve
    second: RdpCurve


# --------------------------------------------------------------------------
# log-space distributions
# --------------------------------------------------------------------------


def binomial_log_pmf(K: int, p: float) -> np.ndarray:
    if K < 0:
        raise ConfigurationError(f"K must be >= 0, got {K}")
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"degenerate binomial with p={p}")
    k = np.arange(K + 1, dtype=float)
    return (
        gammaln(K + 1) - gammaln(k + 1) - gammaln(K - k + 1)
        + k * math.log(p) + (K - k) * math.log1p(-p)
    )


def log_normalizer(log_pmf: np.ndarray) -> float:
    return float(logsumexp(log_pmf))


def log_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Log-pmf of the sum of two independent variables.

    Direct O(|a| |b|) evaluation: the shorter operand is iterated and each
    shifted copy of the longer one is folded in with ``logaddexp``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < b.size:
        a, b = b, a
    out = np.full(a.size + b.size - 1, -np.inf)
    for j, lb in enumerate(b):
        if lb == -np.inf:
            continue
        seg = out[j : j + a.size]
        np.logaddexp(seg, a + lb, out=seg)
    return out


def renyi_divergence(p: np.ndarray, q: np.ndarray, alpha) -> Union[float, np.ndarray]:
    """``D_alpha(p || q)`` for log-pmfs on a common support.

    ``alpha`` may be a scalar or an array of orders (all > 1).  Returns +inf
    where ``p`` has mass outside the support of ``q``.
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigurationError("pmfs must share a support")
    orders = np.atleast_1d(np.asarray(alpha, dtype=float))
    if np.any(orders <= 1):
        raise ConfigurationError("Renyi orders must exceed 1")
    live = p > -np.inf
    if np.any(q[live] == -np.inf):
        out = np.full(orders.shape, np.inf)
    else:
        pl, ql = p[live], q[live]
        terms = orders[:, None] * pl[None, :] + (1.0 - orders[:, None]) * ql[None, :]
        out = logsumexp(terms, axis=1) / (orders - 1.0)
        out = np.maximum(out, 0.0)
    return float(out[0]) if np.ndim(alpha) == 0 else out


# --------------------------------------------------------------------------
# PBM accountants
# --------------------------------------------------------------------------


def _check_pbm(n: int, m: int, theta: float) -> None:
    if n < 1:
        raise ConfigurationError(f"accounting needs n >= 1 clients, got {n}")
    if m < 1:
        raise ConfigurationError(f"m must be >= 1, got {m}")
    if not 0.0 < theta <= THETA_MAX:
        raise ConfigurationError(f"theta must lie in (0, 1/4], got {theta}")


def _mixture_log_pmf(low: int, high: int, theta: float) -> np.ndarray:
    """Binom(low, 1/2 - theta) + Binom(high, 1/2 + theta)."""
    parts = [binomial_log_pmf(k, p) for k, p in ((low, 0.5 - theta), (high, 0.5 + theta)) if k > 0]
    if not parts:
        return np.zeros(1)
    return parts[0] if len(parts) == 1 else log_convolve(parts[0], parts[1])


def pbm_pair_divergence(n: int, m: int, theta: float, t1: int, t2: int, alpha):
    """Divergence between aggregates with ``t1`` vs ``t2`` low-probability trials.

    Both aggregates hold ``n * m`` trials; ``t`` of them succeed with
    ``1/2 - theta`` and the rest with ``1/2 + theta``.
    """
    total = n * m
    p = _mixture_log_pmf(t1, total - t1, theta)
    q = _mixture_log_pmf(t2, total - t2, theta)
    return renyi_divergence(p, q, alpha)


def pbm_rdp_exact(n: int, m: int, theta: float, alpha):
    """Exact RDP of the n-client PBM aggregate at the worst-case neighbour pair.

    Compares Binom(mn, 1/2-theta) with Binom(m(n-1), 1/2-theta) * Binom(m, 1/2+theta),
    i.e. every client at the low extreme versus one client moved to the high one.
    """
    _check_pbm(n, m, theta)
    if n * m > EXACT_SIZE_LIMIT:
        raise ConfigurationError(
            f"exact accounting refused for n*m = {n * m} > {EXACT_SIZE_LIMIT}; use pbm_rdp_approx"
        )
    p1 = binomial_log_pmf(m * n, 0.5 - theta)
    p2 = log_convolve(binomial_log_pmf(m * (n - 1), 0.5 - theta), binomial_log_pmf(m, 0.5 + theta))
    return renyi_divergence(p1, p2, alpha)


def _single_trial_divergence(n: int, k: int, theta: float, alpha):
    """One-trial-per-client divergence with ``k`` clients at the low extreme."""
    p = _mixture_log_pmf(1 + k, n - k - 1, theta)
    q = _mixture_log_pmf(k, n - k, theta)
    return renyi_divergence(p, q, alpha)


def pbm_rdp_approx(n: int, m: int, theta: float, alpha, sweep: Optional[int] = None):
    """O(n) upper bound ``m * D_alpha`` on the single-trial aggregate.

    The default evaluates the extreme configuration (all other clients at the
    low end).  ``sweep=K`` additionally maximises over the first ``K + 1``
    configurations with ``k`` clients at the low end, which is how the
    extreme-point claim can be checked empirically.
    """
    _check_pbm(n, m, theta)
    p1 = binomial_log_pmf(n, 0.5 - theta)
    p2 = log_convolve(binomial_log_pmf(n - 1, 0.5 - theta), binomial_log_pmf(1, 0.5 + theta))
    eps = np.asarray(renyi_divergence(p1, p2, alpha))
    if sweep is not None:
        for k in range(min(sweep, n - 1) + 1):
            eps = np.maximum(eps, _single_trial_divergence(n, k, theta, alpha))
    eps = m * eps
    return float(eps) if np.ndim(alpha) == 0 else eps


def pbm_curve(n: int, m: int, theta: float, orders: Sequence[float] = DEFAULT_ORDERS, exact: bool = False) -> RdpCurve:
    fn = pbm_rdp_exact if exact else pbm_rdp_approx
    return RdpCurve(tuple(orders), tuple(np.atleast_1d(fn(n, m, theta, np.asarray(orders)))))


def gaussian_curve(sigma: float, sensitivity: float, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    return RdpCurve.from_function(lambda a: a * sensitivity**2 / (2.0 * sigma**2), orders)


# --------------------------------------------------------------------------
# composition and conversion
# --------------------------------------------------------------------------


def compose(curves: Sequence[RdpCurve]) -> RdpCurve:
    curves = list(curves)
    if not curves:
        raise ConfigurationError("nothing to compose")
    grid = curves[0].orders
    if any(c.orders != grid for c in curves[1:]):
        raise ConfigurationError("RDP curves must share the same order grid")
    return RdpCurve(grid, tuple(float(x) for x in np.sum([c.epsilons for c in curves], axis=0)))


def conversion_offset(alpha, delta: float):
    """Additive term turning ``eps(alpha)`` into an (eps, delta)-DP bound."""
    alpha = np.asarray(alpha, dtype=float)
    return np.log(1.0 / (alpha * delta)) / (alpha - 1.0) + np.log1p(-1.0 / alpha)


def rdp_to_dp(curve: RdpCurve, delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    eps = np.asarray(curve.epsilons) + conversion_offset(curve.orders, delta)
    return max(0.0, float(np.min(eps)))


def split_budget(total: RdpCurve, fraction_first: float = 0.99) -> BudgetSplit:
    if not 0.0 < fraction_first < 1.0:
        raise ConfigurationError(f"fraction must lie in (0, 1), got {fraction_first}")
    return BudgetSplit(
        total=total,
        fraction_first=fraction_first,
        first=total.scaled(fraction_first),
        second=total.scaled(1.0 - fraction_first),
    )


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------


def _bisect_largest(ok: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Largest x in (lo, hi] with ok(x), assuming ok is monotone decreasing."""
    if ok(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def calibrate_pbm(
    target_eps: float,
    delta: float,
    n: int,
    m: int,
    orders: Sequence[float] = DEFAULT_ORDERS,
    R: float = 1.0,
    scale: float = 1.0,
    tol: float = 1e-4,
) -> PbmParams:
    """Largest theta whose approximate RDP curve converts to at most ``target_eps``.

    ``scale`` multiplies the curve before conversion; calibrating the
    first-moment mechanism with ``scale = 1 / fraction`` reserves the rest of
    the budget for the second moment.
    """
    if not target_eps > 0:
        raise CalibrationError(f"target epsilon must be positive, got {target_eps}")
    if math.isinf(target_eps):
        return PbmParams(m=m, theta=THETA_MAX, R=R)

    def ok(theta: float) -> bool:
        return rdp_to_dp(pbm_curve(n, m, theta, orders).scaled(scale), delta) <= target_eps

    floor = tol / 10.0
    if not ok(floor):
        raise CalibrationError(
            f"epsilon={target_eps}, delta={delta} unreachable for n={n}, m={m} even at theta={floor:g}"
        )
    return PbmParams(m=m, theta=_bisect_largest(ok, floor, THETA_MAX, tol), R=R)


def calibrate_pbm_to_curve(
    budget: RdpCurve, n: int, m: int, R: float = 1.0, tol: float = 1e-4
) -> PbmParams:
    """Largest theta whose approximate curve stays below ``budget`` at every order."""
    bound = np.asarray(budget.epsilons)

    def ok(theta: float) -> bool:
        return bool(np.all(np.asarray(pbm_curve(n, m, theta, budget.orders).epsilons) <= bound))

    floor = tol / 10.0
    if not ok(floor):
        raise CalibrationError(f"RDP budget unreachable for n={n}, m={m}")
    return PbmParams(m=m, theta=_bisect_largest(ok, floor, THETA_MAX, tol), R=R)


def calibrate_suite(
    target_eps: float,
    delta: float,
    n: int,
    m1: int,
    m2: int,
    fraction_first: float = 0.99,
    orders: Sequence[float] = DEFAULT_ORDERS,
    R: float = 1.0,
    tol: float = 1e-4,
) -> MechanismSuite:
    """Calibrate both moment mechanisms of one group under a split budget.

    The first-moment curve ``e1`` is fitted so that ``e1 / fraction`` converts
    to ``target_eps``; that scaled curve is the total budget, and the second
    moment gets the remaining ``(1 - fraction)`` share of it order by order.
    """
    if math.isinf(target_eps):
        return MechanismSuite(PbmParams(m1, THETA_MAX, R), PbmParams(m2, THETA_MAX, R))
    params1 = calibrate_pbm(target_eps, delta, n, m1, orders, R, scale=1.0 / fraction_first, tol=tol)
    total = pbm_curve(n, m1, params1.theta, orders).scaled(1.0 / fraction_first)
    split = split_budget(total, fraction_first)
    params2 = calibrate_pbm_to_curve(split.second, n, m2, R, tol=tol)
    return MechanismSuite(params1, params2)


def suite_curve(suite: MechanismSuite, n: int, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """Composed RDP curve of both moment mechanisms for a group of ``n``."""
    return compose([
        pbm_curve(n, suite.params1.m, suite.params1.theta, orders),
        pbm_curve(n, suite.params2.m, suite.params2.theta, orders),
    ])


def difference_in_means_sensitivity(n_c: int, n_t: int, R: float = 1.0) -> float:
    return 2.0 * R * math.sqrt(1.0 / n_c**2 + 1.0 / n_t**2)


def calibrate_gaussian(
    target_eps: float,
    delta: float,
    sensitivity: float,
    orders: Sequence[float] = DEFAULT_ORDERS,
    rtol: float = 1e-6,
) -> GaussianParams:
    """Smallest noise std whose Gaussian RDP curve converts below ``target_eps``."""
    if not sensitivity > 0:
        raise ConfigurationError(f"sensitivity must be positive, got {sensitivity}")
    if not target_eps > 0 or math.isinf(target_eps):
        raise CalibrationError(f"target epsilon must be positive and finite, got {target_eps}")
    # Work with the noise multiplier so the result scales exactly with sensitivity.
    offset = conversion_offset(orders, delta)
    a = np.asarray(orders)

    def ok(mult: float) -> bool:
        return max(0.0, float(np.min(a / (2.0 * mult**2) + offset))) <= target_eps

    lo, hi = 1e-3, 1.0
    while not ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e8:
            raise CalibrationError(f"epsilon={target_eps} unreachable at delta={delta}")
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return GaussianParams(sigma=hi * sensitivity)
