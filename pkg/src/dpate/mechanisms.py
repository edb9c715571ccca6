"""Client randomizers and server decoders.

The Poisson-Binomial mechanism (PBM) maps an outcome ``x`` in ``[-R, R]`` to
a success probability ``1/2 + theta * x / R`` and releases one Binomial(m, p)
draw.  Sums of such draws stay in ``[0, n * m]``, so they fit a finite field
without modular clipping and the decoded mean is exactly unbiased.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from dpate.errors import ConfigurationError, InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PbmParams:
    """PBM configuration for one moment estimator."""

    m: int
    theta: float
    R: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError(f"m must be a positive integer, got {self.m}")
        if not 0.0 < self.theta <= 0.25:
            raise ConfigurationError(f"theta must lie in (0, 1/4], got {self.theta}")
        if not self.R > 0:
            raise ConfigurationError(f"R must be positive, got {self.R}")


@dataclass(frozen=True)
class MechanismSuite:
    """First- and second-moment PBMs used by one group."""

    params1: PbmParams
    params2: PbmParams

    def __post_init__(self):
        if self.params1.R != self.params2.R:
            raise ConfigurationError("both moments must share the outcome range R")


@dataclass(frozen=True)
class GaussianParams:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")


def _clip(x, R: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("outcomes must be finite")
    clipped = np.clip(x, -R, R)
    n_clipped = int(np.count_nonzero(clipped != x))
    if n_clipped:
        logger.warning("clipped %d outcome(s) to [-%g, %g]", n_clipped, R, R)
    return clipped


def pbm_mean_probability(x, params: PbmParams) -> np.ndarray:
    """Success probability ``theta * x / R + 1/2`` (after clipping)."""
    return params.theta / params.R * _clip(x, params.R) + 0.5


def pbm_second_moment_probability(x, params: PbmParams) -> np.ndarray:
    """Success probability ``2 theta (x^2 / R^2 - 1/2) + 1/2`` (after clipping)."""
    x = _clip(x, params.R)
    return 2.0 * params.theta * (x * x / params.R**2 - 0.5) + 0.5


def pbm_encode_mean(x, params: PbmParams, rng) -> np.ndarray:
    """Privatize outcomes; returns integers in ``[0, m]``, one per client.

    ``rng`` is a seed or a :class:`numpy.random.Generator`; numpy's binomial
    sampler is exact (inversion / BTPE).
    """
    p = pbm_mean_probability(x, params)
    return np.random.default_rng(rng).binomial(params.m, p).astype(np.int64)


def pbm_encode_second_moment(x, params: PbmParams, rng) -> np.ndarray:
    q = pbm_second_moment_probability(x, params)
    return np.random.default_rng(rng).binomial(params.m, q).astype(np.int64)


def _check_sum(agg_sum: int, n: int, m: int) -> None:
    if n < 1:
        raise InputError("empty group")
    if not 0 <= agg_sum <= n * m:
        raise InputError(f"aggregate {agg_sum} outside [0, {n * m}]")


def pbm_decode_mean(agg_sum: int, n: int, params: PbmParams) -> float:
    """Unbiased estimate of the group mean from the sum of ``n`` PBM draws.

    Centering subtracts ``n * m / 2`` (the expected sum at x = 0), which is
    what makes the estimate unbiased for every group size.
    """
    _check_sum(agg_sum, n, params.m)
    nm = n * params.m
    return params.R / (nm * params.theta) * (agg_sum - nm / 2.0)


def second_moment_total(agg_sum2: int, n: int, params: PbmParams) -> float:
    """Unbiased estimate of the sum of squared outcomes of the group."""
    _check_sum(agg_sum2, n, params.m)
    R2, th = params.R**2, params.theta
    return R2 / (2.0 * params.m * th) * agg_sum2 - n * R2 / (4.0 * th) + n * R2 / 2.0


def pbm_decode_second_moment(
    agg_sum2: int, n: int, params: PbmParams, mean: float, clamp: bool = True
) -> float:
    """Sample variance estimate ``T/(n-1) - n/(n-1) * mean^2``, floored at 0."""
    if n <= 1:
        raise InputError(f"sample variance needs at least 2 clients, got {n}")
    total = second_moment_total(agg_sum2, n, params)
    s2 = total / (n - 1) - n / (n - 1) * mean * mean
    return max(0.0, s2) if clamp else s2


def pbm_variance_bound(params: PbmParams, n: int) -> float:
    """Worst-case variance of :func:`pbm_decode_mean` (attained at x = 0)."""
    if n < 1:
        raise InputError("empty group")
    return params.R**2 / (4.0 * n * params.m * params.theta**2)


def gaussian_perturb(delta_hat: float, params: GaussianParams, rng) -> float:
    return float(delta_hat + np.random.default_rng(rng).normal(0.0, params.sigma))
