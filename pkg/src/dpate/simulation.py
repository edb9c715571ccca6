"""Outcome models, the end-to-end trial pipeline and Monte Carlo drivers.

Randomness
----------
Every random draw comes from a :class:`numpy.random.SeedSequence` keyed by
``(base_seed, trial_index, purpose[, group])`` through ``spawn_key``.  The
purposes are fixed integers (see ``PURPOSE``), so a given configuration and
base seed reproduce bit-identical trials on any platform and under any
thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np
from scipy import stats

from dpate import estimation as est_mod
from dpate.errors import ConfigurationError
from dpate.estimation import CiKind, ConfidenceInterval, Estimand, GroupEstimates
from dpate.mechanisms import (
    GaussianParams,
    MechanismSuite,
    gaussian_perturb,
    pbm_decode_mean,
    pbm_decode_second_moment,
    pbm_encode_mean,
    pbm_encode_second_moment,
)
from dpate.secagg import AggregateState, aggregate_batch, field_size_for, mask_values

MIN_ACCEPTANCE = 1e-6

PURPOSE = {
    "outcomes": 0,
    "assignment": 1,
    "encode_first": 2,
    "encode_second": 3,
    "mask_first": 4,
    "mask_second": 5,
    "central_noise": 6,
}
GROUP_KEY = {"control": 0, "test": 1}


def derive_seed(base_seed: int, trial: int, purpose: str, group: Optional[str] = None) -> np.random.SeedSequence:
    if purpose not in PURPOSE or (group is not None and group not in GROUP_KEY):
        raise ConfigurationError(f"unknown seed stream {purpose!r}/{group!r}")
    key = (trial, PURPOSE[purpose]) if group is None else (trial, PURPOSE[purpose], GROUP_KEY[group])
    return np.random.SeedSequence(base_seed, spawn_key=key)


# --------------------------------------------------------------------------
# outcome models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialOutcomes:
    y_c: np.ndarray
    y_t: np.ndarray

    def __len__(self):
        return len(self.y_c)

    @property
    def sate(self) -> float:
        return float(np.mean(self.y_t - self.y_c))


@dataclass(frozen=True)
class TruncatedGaussian:
    """Independent normal potential outcomes truncated to ``[-R, R]``."""

    mu_c: float = -0.1
    mu_t: float = 0.1
    sigma: float = 0.05
    R: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0 or not self.R > 0:
            raise ConfigurationError("sigma and R must be positive")
        for mu in (self.mu_c, self.mu_t):
            if self.acceptance(mu) < MIN_ACCEPTANCE:
                raise ConfigurationError(
                    f"truncating N({mu}, {self.sigma}^2) to [-{self.R}, {self.R}] keeps < {MIN_ACCEPTANCE:g} of the mass"
                )

    def acceptance(self, mu: float) -> float:
        return float(stats.norm.cdf(self.R, mu, self.sigma) - stats.norm.cdf(-self.R, mu, self.sigma))

    def _truncated_mean(self, mu: float) -> float:
        a, b = (-self.R - mu) / self.sigma, (self.R - mu) / self.sigma
        return float(stats.truncnorm.mean(a, b, loc=mu, scale=self.sigma))

    @property
    def pate(self) -> float:
        return self._truncated_mean(self.mu_t) - self._truncated_mean(self.mu_c)

    def _draw(self, mu: float, n: int, rng: np.random.Generator) -> np.ndarray:
        out = rng.normal(mu, self.sigma, size=n)
        bad = np.abs(out) > self.R
        while bad.any():
            out[bad] = rng.normal(mu, self.sigma, size=int(bad.sum()))
            bad = np.abs(out) > self.R
        return out

    def sample(self, n: int, rng: np.random.Generator) -> PotentialOutcomes:
        return PotentialOutcomes(self._draw(self.mu_c, n, rng), self._draw(self.mu_t, n, rng))


@dataclass(frozen=True)
class ConstantEffect:
    """``y(c) ~ Uniform(a, b)`` and ``y(t) = y(c) + shift``."""

    a: float = -1.0
    b: float = -0.8
    shift: float = 0.2
    R: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigurationError(f"need a < b, got ({self.a}, {self.b})")
        lo, hi = min(self.a, self.a + self.shift), max(self.b, self.b + self.shift)
        if lo < -self.R or hi > self.R:
            raise ConfigurationError("both potential outcomes must stay within [-R, R]")

    @property
    def pate(self) -> float:
        return self.shift

    def sample(self, n: int, rng: np.random.Generator) -> PotentialOutcomes:
        y_c = rng.uniform(self.a, self.b, size=n)
        return PotentialOutcomes(y_c, y_c + self.shift)


OutcomeModel = Union[TruncatedGaussian, ConstantEffect]


def sample_outcomes(model: OutcomeModel, n: int, seed) -> PotentialOutcomes:
    return model.sample(n, np.random.default_rng(seed))


def assign_treatment(n: int, n_c: int, seed) -> np.ndarray:
    """Boolean vector, True for the test group; exactly ``n_c`` units are control."""
    if not 0 < n_c < n:
        raise ConfigurationError(f"need 0 < n_c < n, got n_c={n_c}, n={n}")
    treated = np.ones(n, dtype=bool)
    treated[np.random.default_rng(seed).permutation(n)[:n_c]] = False
    return treated


# --------------------------------------------------------------------------
# mechanisms as seen by the pipeline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NonPrivate:
    """No privatization: the analyst computes plain group statistics."""


@dataclass(frozen=True)
class PbmDesign:
    """Calibrated PBM suites for the control and test groups."""

    control: MechanismSuite
    test: MechanismSuite

    def suite(self, group: str) -> MechanismSuite:
        return self.control if group == "control" else self.test


Mechanism = Union[NonPrivate, GaussianParams, PbmDesign]


def privatize_group(x: np.ndarray, suite: MechanismSuite, group: str, base_seed: int, trial: int) -> Dict[str, AggregateState]:
    """Client side plus server aggregation for one group.

    Returns the two aggregates (first and second moment); nothing else about
    the clients leaves this function.
    """
    n = len(x)
    out = {}
    for moment, params, encode in (
        ("first", suite.params1, pbm_encode_mean),
        ("second", suite.params2, pbm_encode_second_moment),
    ):
        raw = encode(x, params, derive_seed(base_seed, trial, f"encode_{moment}", group))
        spec = field_size_for(n, params.m)
        masked = mask_values(raw, spec, derive_seed(base_seed, trial, f"mask_{moment}", group))
        out[moment] = aggregate_batch(masked, spec, group=group, moment=moment)
    return out


def estimates_from_aggregates(aggregates: Dict[str, Dict[str, AggregateState]], design: PbmDesign) -> GroupEstimates:
    """Decode the four aggregates of a trial into group means and variances."""
    decoded = {}
    for group in ("control", "test"):
        suite = design.suite(group)
        first, second = aggregates[group]["first"], aggregates[group]["second"]
        mean = pbm_decode_mean(first.sum, first.count, suite.params1)
        var = pbm_decode_second_moment(second.sum, second.count, suite.params2, mean)
        decoded[group] = (mean, var, first.count)
    (m_c, v_c, n_c), (m_t, v_t, n_t) = decoded["control"], decoded["test"]
    return GroupEstimates(m_c, m_t, v_c, v_t, n_c, n_t)


# --------------------------------------------------------------------------
# trials
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialConfig:
    model: OutcomeModel
    n: int
    n_c: int
    mechanism: Mechanism = field(default_factory=NonPrivate)
    estimand: Estimand = "PATE"
    ci_kind: CiKind = "asymptotic"
    confidence: float = 0.9
    additive: bool = False

    def __post_init__(self):
        if not 0 < self.n_c < self.n:
            raise ConfigurationError(f"need 0 < n_c < n, got n_c={self.n_c}, n={self.n}")
        if self.n_c < 2 or self.n - self.n_c < 2:
            raise ConfigurationError("each group needs at least 2 units")
        if self.ci_kind == "nonasymptotic" and not isinstance(self.mechanism, PbmDesign):
            raise ConfigurationError("non-asymptotic intervals are defined for PBM only")


@dataclass(frozen=True)
class TrialResult:
    ci: ConfidenceInterval
    truth: float

    @property
    def covered(self) -> bool:
        return self.ci.covers(self.truth)

    @property
    def width(self) -> float:
        return self.ci.width


def run_trial(config: TrialConfig, base_seed: int, trial: int = 0) -> TrialResult:
    y = sample_outcomes(config.model, config.n, derive_seed(base_seed, trial, "outcomes"))
    treated = assign_treatment(config.n, config.n_c, derive_seed(base_seed, trial, "assignment"))
    x = {"control": y.y_c[~treated], "test": y.y_t[treated]}
    truth = y.sate if config.estimand == "SATE" else config.model.pate
    mech = config.mechanism

    if isinstance(mech, PbmDesign):
        aggregates = {g: privatize_group(x[g], mech.suite(g), g, base_seed, trial) for g in x}
        est = estimates_from_aggregates(aggregates, mech)
        delta_hat = est_mod.diff_in_means(est)
        if config.ci_kind == "nonasymptotic":
            ci = est_mod.nonasymptotic_ci(
                delta_hat, est, mech.control, 1.0 - config.confidence, config.estimand
            )
            return TrialResult(ci, truth)
        noise = est_mod.dp_calibration(mech.control.params1, est.n_c, est.n_t, mech.test.params1).total
    else:
        est = GroupEstimates(
            float(np.mean(x["control"])), float(np.mean(x["test"])),
            float(np.var(x["control"], ddof=1)), float(np.var(x["test"], ddof=1)),
            len(x["control"]), len(x["test"]),
        )
        delta_hat = est_mod.diff_in_means(est)
        noise = 0.0
        if isinstance(mech, GaussianParams):
            delta_hat = gaussian_perturb(delta_hat, mech, derive_seed(base_seed, trial, "central_noise"))
            noise = mech.sigma**2
        if config.ci_kind == "nonasymptotic":
            raise ConfigurationError("non-asymptotic intervals are defined for PBM only")

    ci = est_mod.asymptotic_ci(
        delta_hat,
        est_mod.sampling_variance(est, config.estimand),
        noise,
        config.confidence,
        config.estimand,
        additive=config.additive,
    )
    return TrialResult(ci, truth)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentReport:
    coverage: float
    mean_width: float
    width_std_err: float
    N: int
    mean_center: float
    center_std_err: float
    mean_truth: float
    config: TrialConfig

    @property
    def covered_count(self) -> int:
        return int(round(self.coverage * self.N))


def _run_chunk(config: TrialConfig, base_seed: int, trials: range) -> np.ndarray:
    rows = np.empty((len(trials), 4))
    for i, t in enumerate(trials):
        r = run_trial(config, base_seed, t)
        rows[i] = (r.covered, r.width, r.ci.center, r.truth)
    return rows


def run_monte_carlo(config: TrialConfig, N: int, base_seed: int = 0, threads: int = 1) -> ExperimentReport:
    """Run ``N`` independent trials; the result does not depend on ``threads``."""
    if N < 1:
        raise ConfigurationError(f"need at least one replication, got {N}")
    threads = max(1, int(threads))
    size = max(1, math.ceil(N / (4 * threads)))
    chunks = [range(s, min(s + size, N)) for s in range(0, N, size)]
    if threads == 1:
        parts = [_run_chunk(config, base_seed, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _run_chunk(config, base_seed, c), chunks))
    rows = np.concatenate(parts)
    covered, widths, centers, truths = rows.T
    err = (lambda v: float(np.std(v, ddof=1) / math.sqrt(N)) if N > 1 else 0.0)
    return ExperimentReport(
        coverage=float(covered.sum()) / N,
        mean_width=float(widths.mean()),
        width_std_err=err(widths),
        N=N,
        mean_center=float(centers.mean()),
        center_std_err=err(centers - truths),
        mean_truth=float(truths.mean()),
        config=config,
    )
