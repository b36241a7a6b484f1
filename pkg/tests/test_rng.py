import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from driftbench import rng

MASK = (1 << 64) - 1


def reference_splitmix(state: int, count: int) -> list[int]:
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def test_splitmix_known_first_output():
    assert int(rng.splitmix64(0, [0])[0]) == 0xE220A8397B1DCDAF


@given(st.integers(0, MASK), st.integers(1, 50))
def test_splitmix_matches_sequential_reference(key, count):
    got = [int(v) for v in rng.splitmix64(key, np.arange(count))]
    assert got == reference_splitmix(key, count)


def test_uniform_range_and_offsets():
    u = rng.uniform(123, 1000)
    assert u.min() >= 0.0 and u.max() < 1.0
    np.testing.assert_array_equal(rng.uniform(123, 10, start=990), u[990:])


def test_normal_moments():
    z = rng.normal(7, 200_000)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1.0) < 4 * math.sqrt(2 / z.size)


def test_derive_separates_labels():
    keys = {rng.derive(0, label) for label in range(1, 8)}
    assert len(keys) == 7
    assert rng.derive(5, 1, 2) == rng.derive(rng.derive(5, 1), 2)


@given(st.integers(0, 40), st.integers(0, MASK))
def test_permutation_is_a_permutation(n, key):
    perm = rng.permutation(key, n)
    assert sorted(perm.tolist()) == list(range(n))


def test_permutation_reproducible():
    np.testing.assert_array_equal(rng.permutation(42, 11), rng.permutation(42, 11))
