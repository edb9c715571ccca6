"""Analyst-side estimators and confidence intervals for SATE / PATE.

All functions here take decoded group statistics; none of them sees a
client-level value.  ``confidence`` is always the coverage level
``1 - alpha_conf``; the Renyi order lives in :mod:`dpate.accounting`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

from scipy.special import ndtri

from dpate.errors import ConfigurationError, InputError
from dpate.mechanisms import MechanismSuite, PbmParams, pbm_variance_bound

Estimand = Literal["SATE", "PATE"]
CiKind = Literal["asymptotic", "nonasymptotic"]

# Failure-probability split used by the non-asymptotic interval: the
# empirical-Bernstein variance term gets 99.5% and each remaining event 1/600.
DELTA_MAIN_SHARE = 0.995
DELTA_MINOR_SHARE = 1.0 / 600.0


@dataclass(frozen=True)
class GroupEstimates:
    mean_c: float
    mean_t: float
    var_c: float
    var_t: float
    n_c: int
    n_t: int

    def __post_init__(self):
        if self.n_c < 2 or self.n_t < 2:
            raise InputError(f"each group needs >= 2 units, got n_c={self.n_c}, n_t={self.n_t}")
        if self.var_c < 0 or self.var_t < 0:
            raise InputError("variance estimates must be non-negative")

    @property
    def n(self) -> int:
        return self.n_c + self.n_t

    def swapped(self) -> "GroupEstimates":
        return GroupEstimates(self.mean_t, self.mean_c, self.var_t, self.var_c, self.n_t, self.n_c)


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    half_width: float
    level: float
    kind: CiKind
    estimand: Estimand

    def __post_init__(self):
        if not self.half_width >= 0:
            raise InputError(f"half width must be non-negative, got {self.half_width}")
        if not 0 < self.level < 1:
            raise InputError(f"level must lie in (0, 1), got {self.level}")

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    @property
    def width(self) -> float:
        return 2.0 * self.half_width

    def covers(self, value: float) -> bool:
        return abs(value - self.center) <= self.half_width


@dataclass(frozen=True)
class NoiseProfile:
    """DP-noise variances of the two decoded group means.

    ``var_c`` and ``var_t`` are the worst-case decoder variances; their sum is
    the noise variance of the difference in means, and ``calibration`` is the
    same quantity on the sqrt(n)-scaled axis used by the CLT argument.
    """

    var_c: float
    var_t: float
    n: int

    @property
    def total(self) -> float:
        return self.var_c + self.var_t

    @property
    def calibration(self) -> float:
        return self.n * self.total


def diff_in_means(est: GroupEstimates) -> float:
    return est.mean_t - est.mean_c


def sate_variance(est: GroupEstimates) -> float:
    """Conservative variance of the difference in means for SATE.

    ``n_c n_t / n * (s_t / n_t + s_c / n_c)^2`` replaces the unidentifiable
    covariance by its Cauchy-Schwarz bound ``s_t s_c``; it bounds the
    randomization variance of the estimator itself (no further 1/n factor).
    """
    s_t, s_c = math.sqrt(est.var_t), math.sqrt(est.var_c)
    return est.n_c * est.n_t / est.n * (s_t / est.n_t + s_c / est.n_c) ** 2


def pate_variance(est: GroupEstimates) -> float:
    return est.var_t / est.n_t + est.var_c / est.n_c


def sampling_variance(est: GroupEstimates, estimand: Estimand) -> float:
    if estimand == "SATE":
        return sate_variance(est)
    if estimand == "PATE":
        return pate_variance(est)
    raise ConfigurationError(f"unknown estimand {estimand!r}")


def dp_calibration(params1: PbmParams, n_c: int, n_t: int, params1_t: Optional[PbmParams] = None) -> NoiseProfile:
    """Noise profile of the first-moment PBMs (``params1_t`` defaults to ``params1``)."""
    params1_t = params1 if params1_t is None else params1_t
    return NoiseProfile(
        var_c=pbm_variance_bound(params1, n_c),
        var_t=pbm_variance_bound(params1_t, n_t),
        n=n_c + n_t,
    )


def z_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise InputError(f"probability must lie in (0, 1), got {p}")
    return float(ndtri(p))


def asymptotic_ci(
    delta_hat: float,
    sampling_var: float,
    dp_var: float,
    confidence: float = 0.9,
    estimand: Estimand = "PATE",
    additive: bool = False,
) -> ConfidenceInterval:
    """Normal-approximation interval around the difference in means.

    By default the sampling and DP-noise variances are added before taking the
    square root.  ``additive=True`` sums the two standard deviations instead,
    which is wider.
    """
    if sampling_var < 0 or dp_var < 0:
        raise InputError("variances must be non-negative")
    z = z_quantile(1.0 - (1.0 - confidence) / 2.0)
    if additive:
        scale = math.sqrt(sampling_var) + math.sqrt(dp_var)
    else:
        scale = math.sqrt(sampling_var + dp_var)
    return ConfidenceInterval(delta_hat, z * scale, confidence, "asymptotic", estimand)


def empirical_bernstein_halfwidth(
    sample_var: float, n: int, half_range: float, delta1: float, delta2: float
) -> float:
    """Maurer-Pontil deviation bound for the mean of ``n`` values in ``[-half_range, half_range]``.

    ``sample_var`` is the unbiased sample variance.  The bound fails with
    probability at most ``delta1 + delta2``.
    """
    if n <= 1:
        raise InputError(f"need at least 2 samples, got {n}")
    if not (0 < delta1 < 1 and 0 < delta2 < 1):
        raise InputError("delta1 and delta2 must lie in (0, 1)")
    return (
        math.sqrt(2.0 * sample_var * math.log(2.0 / delta1) / n)
        + 14.0 * half_range * math.log(2.0 / delta2) / (3.0 * (n - 1))
    )


def nonasymptotic_gamma(var_t: float, var_c: float, n: int, suite: MechanismSuite, delta: float) -> float:
    """Higher-order slack of the non-asymptotic interval (balanced groups of n/2)."""
    p1, p2 = suite.params1, suite.params2
    R = p1.R
    log_minor = math.log(2.0 / (delta * DELTA_MINOR_SHARE))
    mean_dev = log_minor * R**2 / (2.0 * p1.m * n * p1.theta**2)
    var_dev = log_minor * R**4 / (4.0 * p2.m * n * p2.theta**2)

    fourth_root = var_dev**0.25 + mean_dev**0.25
    s_hat = math.sqrt(var_t + var_c)
    ratio = (math.sqrt(var_dev) + math.sqrt(mean_dev)) / s_hat if s_hat > 0 else math.inf
    return (
        56.0 * R * log_minor / (3.0 * (n - 1))
        + math.sqrt(mean_dev)
        + math.sqrt(4.0 * math.log(2.01 / delta) / n) * min(fourth_root, ratio)
    )


def nonasymptotic_ci(
    delta_hat: float,
    est: GroupEstimates,
    suite: MechanismSuite,
    delta: float,
    estimand: Estimand = "PATE",
) -> ConfidenceInterval:
    """Finite-sample interval valid with probability at least ``1 - delta``.

    Only balanced designs (``n_c == n_t``) are supported.
    """
    if not 0 < delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    if est.n_c != est.n_t:
        raise ConfigurationError("non-asymptotic intervals require n_c == n_t")
    plug_in = sampling_variance(est, estimand)
    gamma = nonasymptotic_gamma(est.var_t, est.var_c, est.n, suite, delta)
    half = math.sqrt(2.0 * plug_in * math.log(2.01 / delta)) + gamma
    return ConfidenceInterval(delta_hat, half, 1.0 - delta, "nonasymptotic", estimand)
