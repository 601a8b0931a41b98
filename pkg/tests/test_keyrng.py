import numpy as np
from hypothesis import given, strategies as st

from gwlab import keyrng

u64 = st.integers(min_value=0, max_value=2**64 - 1)


@given(u64, u64)
def test_mix2_array_matches_scalar(a, b):
    arr = keyrng.mix2_array(
        np.array([a], dtype=np.uint64), np.array([b], dtype=np.uint64)
    )
    assert int(arr[0]) == keyrng.mix2(a, b)


@given(u64, u64)
def test_unit_in_half_open_interval(key, counter):
    u = keyrng.unit(key, counter)
    assert 0.0 <= u < 1.0


@given(st.integers(min_value=0, max_value=2**32), st.integers(min_value=0, max_value=2**20))
def test_root_keys_array_matches_scalar(seed, idx):
    arr = keyrng.root_keys_array(seed, np.array([idx], dtype=np.uint64))
    assert int(arr[0]) == keyrng.root_key(seed, idx)


def test_unit_array_matches_scalar():
    keys = np.arange(100, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    u = keyrng.unit_array(keys, keyrng.TAG_WALK)
    for i in (0, 17, 99):
        assert u[i] == keyrng.unit(int(keys[i]), keyrng.TAG_WALK)


def test_keys_are_distinct_across_slots_and_parents():
    parents = np.full(1000, keyrng.root_key(1, 0), dtype=np.uint64)
    slots = np.arange(1, 1001)
    kids = keyrng.child_keys(parents, slots)
    assert np.unique(kids).size == 1000
    roots = keyrng.root_keys_array(1, np.arange(1000, dtype=np.uint64))
    assert np.unique(roots).size == 1000
    assert np.intersect1d(kids, roots).size == 0


def test_unit_is_statistically_uniform():
    keys = keyrng.root_keys_array(42, np.arange(200_000, dtype=np.uint64))
    u = keyrng.unit_array(keys, keyrng.TAG_CHILD_COUNT)
    n = u.size
    assert abs(u.mean() - 0.5) < 3.0 * np.sqrt(1.0 / 12.0 / n)
    # second moment of U(0,1) is 1/3 with variance 4/45
    assert abs((u**2).mean() - 1.0 / 3.0) < 3.0 * np.sqrt(4.0 / 45.0 / n)
