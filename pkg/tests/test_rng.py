import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from renormlab import rng


@settings(max_examples=30)
@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.integers(1, 2**40))
def test_matches_numpy_philox(k0, k1, c):
    ref = np.random.Philox(key=np.array([k0, k1], dtype=np.uint64), counter=np.array([c - 1, 0, 0, 0], dtype=np.uint64))
    expected = ref.random_raw(4)
    got = rng.philox4x64(np.array([c, 0, 0, 0], dtype=np.uint64), np.array([k0, k1], dtype=np.uint64))
    np.testing.assert_array_equal(got, expected)


def test_path_uniforms_range_and_independence():
    u = rng.path_uniforms(7, np.arange(5000), 3)
    assert u.shape == (5000, 4)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(np.corrcoef(u[:, 0], u[:, 1])[0, 1]) < 0.05


def test_path_uniforms_pure_function():
    a = rng.path_uniforms(1, np.array([4, 9]), 12)
    b = rng.path_uniforms(1, np.arange(10), 12)[[4, 9]]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rng.path_uniforms(2, np.array([4, 9]), 12))
    assert not np.array_equal(a, rng.path_uniforms(1, np.array([4, 9]), 13))


def test_to_unit_extremes():
    bits = np.array([0, 2**64 - 1], dtype=np.uint64)
    out = rng.to_unit(bits)
    assert out[0] == 0.0 and out[1] < 1.0
