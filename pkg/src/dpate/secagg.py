"""Simulated single-server secure aggregation over the integers modulo M.

Every client adds a mask to its value; the masks of a session sum to zero
modulo M, so the server learns nothing but the modular sum.  Masks are drawn
in one process from a seeded generator: this is a functional stand-in for
the cryptographic protocol (no key agreement, no dropout recovery).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

import numpy as np

from dpate.errors import ConfigurationError, ProtocolError

# Masks, sums and masked values are held in int64; every session checks that
# n * M stays below this bound so no intermediate sum can wrap around.
INT_LIMIT = np.iinfo(np.int64).max

Group = Literal["control", "test"]
Moment = Literal["first", "second"]


@dataclass(frozen=True)
class FieldSpec:
    modulus: int

    def __post_init__(self):
        if self.modulus < 2:
            raise ConfigurationError(f"modulus must be >= 2, got {self.modulus}")
        if self.modulus > INT_LIMIT:
            raise ConfigurationError(f"modulus {self.modulus} overflows int64")

    def check_session(self, n: int, m: int) -> None:
        """Raise unless n clients with values in [0, m] cannot overflow."""
        if self.modulus < n * m + 1:
            raise ConfigurationError(
                f"modulus {self.modulus} too small for {n} clients with m={m}"
            )
        if n * self.modulus > INT_LIMIT:
            raise ConfigurationError(
                f"{n} clients x modulus {self.modulus} overflows int64 sums"
            )


@dataclass(frozen=True)
class MaskedContribution:
    client_id: int
    value: int


@dataclass(frozen=True)
class AggregateState:
    group: Group
    moment: Moment
    sum: int
    count: int


def field_size_for(n: int, m: int) -> FieldSpec:
    """Smallest field that holds the sum of ``n`` values in ``[0, m]``."""
    if n < 1 or m < 1:
        raise ConfigurationError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    spec = FieldSpec(n * m + 1)
    spec.check_session(n, m)
    return spec


def generate_masks(n: int, spec: FieldSpec, seed) -> np.ndarray:
    """Return ``n`` masks uniform on ``[0, M)`` that sum to 0 mod M.

    The first ``n - 1`` masks are independent uniforms and the last one closes
    the sum, so each mask on its own is uniform.  ``seed`` is anything
    accepted by :func:`numpy.random.default_rng`.
    """
    if n < 1:
        raise ConfigurationError(f"need at least one client, got {n}")
    M = spec.modulus
    if n * M > INT_LIMIT:
        raise ConfigurationError(f"{n} masks modulo {M} overflow int64")
    masks = np.zeros(n, dtype=np.int64)
    if n == 1:
        return masks
    rng = np.random.default_rng(seed)
    masks[:-1] = rng.integers(0, M, size=n - 1, dtype=np.int64)
    masks[-1] = (-int(masks[:-1].sum())) % M
    return masks


def mask_values(raw, spec: FieldSpec, seed) -> np.ndarray:
    """Client side: add one session's zero-sum masks to raw field elements."""
    raw = np.asarray(raw, dtype=np.int64)
    if raw.ndim != 1:
        raise ProtocolError("raw values must be one-dimensional")
    if raw.size and (raw.min() < 0 or raw.max() >= spec.modulus):
        raise ProtocolError(f"raw values must lie in [0, {spec.modulus})")
    masks = generate_masks(raw.size, spec, seed)
    return (raw + masks) % spec.modulus


def aggregate_batch(
    values,
    spec: FieldSpec,
    client_ids: Optional[Sequence[int]] = None,
    group: Group = "control",
    moment: Moment = "first",
) -> AggregateState:
    """Server side: modular sum of masked values, one per client."""
    values = np.asarray(values, dtype=np.int64)
    if values.size == 0:
        raise ProtocolError("no contributions to aggregate")
    if client_ids is not None:
        ids = np.asarray(client_ids)
        if ids.shape != values.shape:
            raise ProtocolError("client_ids and values differ in length")
        if np.unique(ids).size != ids.size:
            raise ProtocolError("duplicate client_id in session")
    M = spec.modulus
    if values.min() < 0 or values.max() >= M:
        raise ProtocolError(f"masked value outside [0, {M})")
    if values.size * M > INT_LIMIT:
        raise ConfigurationError("session too large for int64 accumulation")
    total = int(values.sum()) % M
    return AggregateState(group=group, moment=moment, sum=total, count=int(values.size))


def aggregate(
    contributions: Iterable[MaskedContribution],
    spec: FieldSpec,
    group: Group = "control",
    moment: Moment = "first",
) -> AggregateState:
    contributions = list(contributions)
    return aggregate_batch(
        [c.value for c in contributions],
        spec,
        client_ids=[c.client_id for c in contributions],
        group=group,
        moment=moment,
    )
