import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dpate.errors import ConfigurationError, ProtocolError
from dpate.secagg import (
    FieldSpec,
    MaskedContribution,
    aggregate,
    aggregate_batch,
    field_size_for,
    generate_masks,
    mask_values,
)


@pytest.mark.parametrize("n, m, M", [(1, 1, 2), (1000, 256, 256001), (10000, 1024, 10240001)])
def test_field_size(n, m, M):
    assert field_size_for(n, m).modulus == M


def test_field_size_rejects_bad_sizes():
    with pytest.raises(ConfigurationError):
        field_size_for(0, 4)
    with pytest.raises(ConfigurationError):
        field_size_for(10**10, 2**40)


def test_large_deployment_fits():
    spec = field_size_for(10**7, 2**11)
    spec.check_session(10**7, 2**11)


def test_two_client_masks_cancel():
    masks = generate_masks(2, FieldSpec(7), seed=3)
    assert masks[1] == (7 - masks[0]) % 7


def test_single_client_mask_is_zero():
    assert generate_masks(1, FieldSpec(101), seed=0).tolist() == [0]


def test_masks_sum_to_zero_seed_42():
    masks = generate_masks(5, FieldSpec(256001), seed=42)
    assert len(masks) == 5
    assert int(masks.sum()) % 256001 == 0
    assert np.all((masks >= 0) & (masks < 256001))


def test_masks_deterministic():
    a = generate_masks(50, FieldSpec(1009), seed=9)
    b = generate_masks(50, FieldSpec(1009), seed=9)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("values, M, expected", [([3, 4], 11, 7), ([10, 5], 11, 4)])
def test_aggregate_modular_sum(values, M, expected):
    contribs = [MaskedContribution(i, v) for i, v in enumerate(values)]
    state = aggregate(contribs, FieldSpec(M), group="test", moment="second")
    assert state.sum == expected
    assert state.count == 2
    assert (state.group, state.moment) == ("test", "second")


def test_aggregate_rejects_duplicates_and_out_of_range():
    with pytest.raises(ProtocolError):
        aggregate([MaskedContribution(0, 1), MaskedContribution(0, 2)], FieldSpec(11))
    with pytest.raises(ProtocolError):
        aggregate([MaskedContribution(0, 11)], FieldSpec(11))
    with pytest.raises(ProtocolError):
        aggregate_batch([], FieldSpec(11))


def test_hundred_clients_lossless():
    rng = np.random.default_rng(5)
    m = 32
    raw = rng.integers(0, m + 1, size=100)
    spec = field_size_for(100, m)
    masked = mask_values(raw, spec, seed=17)
    assert not np.array_equal(masked, raw)
    state = aggregate_batch(masked, spec, client_ids=np.arange(100))
    assert state.sum == int(raw.sum())


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 60), M=st.integers(2, 10**9), seed=st.integers(0, 2**32 - 1))
def test_mask_cancellation_property(n, M, seed):
    masks = generate_masks(n, FieldSpec(M), seed)
    assert int(masks.sum()) % M == 0
    assert masks.min() >= 0 and masks.max() < M


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(1, 80),
    m=st.integers(1, 64),
    seed=st.integers(0, 2**32 - 1),
    data=st.data(),
)
def test_lossless_aggregation_property(n, m, seed, data):
    raw = data.draw(st.lists(st.integers(0, m), min_size=n, max_size=n))
    spec = field_size_for(n, m)
    state = aggregate_batch(mask_values(raw, spec, seed), spec)
    assert state.sum == sum(raw)


def test_single_masked_value_is_uniform():
    # One client's masked value, across mask seeds, should not reveal its input.
    M, n, trials = 7, 3, 7000
    spec = FieldSpec(M)
    observed = np.array([mask_values([5, 1, 2], spec, seed)[0] for seed in range(trials)])
    counts = np.bincount(observed, minlength=M)
    _, p = stats.chisquare(counts)
    assert p > 1e-3
