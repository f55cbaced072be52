import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renormlab.errors import ConfigError
from renormlab.measures import (
    CONCENTRATED,
    DIFFUSE,
    UNTAGGED,
    AtomicMeasure,
    DictionaryMember,
    SignedMeasure,
    TestDictionary,
    bl_distance,
    decompose,
    default_dictionary,
    tv_norm,
)

P3_POS = np.array([1.0, 2.0, 3.0])


def test_decompose_by_tag():
    mu = SignedMeasure([0.0, 0.2, 1.0], [DIFFUSE, DIFFUSE, CONCENTRATED])
    d, c = decompose(mu)
    np.testing.assert_array_equal(d.masses, [0, 0.2, 0])
    np.testing.assert_array_equal(c.masses, [0, 0, 1.0])
    np.testing.assert_array_equal((d + c).masses, mu.masses)


def test_decompose_all_diffuse_and_zero():
    d, c = decompose(SignedMeasure.diffuse([1.0, -2.0]))
    assert tv_norm(c) == 0
    d, c = decompose(SignedMeasure.zero(4))
    assert tv_norm(d) == tv_norm(c) == 0


def test_decompose_untagged():
    with pytest.raises(ConfigError, match="untagged"):
        decompose(SignedMeasure([0.0, 1.0], [UNTAGGED, UNTAGGED]))
    # untagged zero entries are fine
    decompose(SignedMeasure([0.0, 1.0], [UNTAGGED, DIFFUSE]))


def test_tv_norm_examples():
    assert tv_norm(SignedMeasure.diffuse([0.25, 0.5, 0.25])) == 1.0
    assert tv_norm(SignedMeasure.diffuse([1.0, -1.0])) == 2.0
    assert tv_norm(SignedMeasure.zero(3)) == 0.0


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_jordan_decomposition(masses):
    mu = SignedMeasure.diffuse(masses)
    plus, minus = mu.jordan()
    assert np.all(plus.masses >= 0) and np.all(minus.masses >= 0)
    assert not np.any((plus.masses > 0) & (minus.masses > 0))
    np.testing.assert_array_equal((plus - minus).masses, mu.masses)
    assert tv_norm(mu) == pytest.approx(tv_norm(plus) + tv_norm(minus), rel=1e-14)


def test_pairing_is_linear():
    mu = SignedMeasure.diffuse([1.0, -2.0, 0.5])
    a, b = np.array([1.0, 2.0, 3.0]), np.array([0.0, -1.0, 4.0])
    assert mu.pair(2 * a + b) == pytest.approx(2 * mu.pair(a) + mu.pair(b))


def test_density_ingest():
    mu = SignedMeasure.from_density([2.0, 4.0], [0.5, 0.25])
    np.testing.assert_array_equal(mu.masses, [1.0, 1.0])


def test_csv_roundtrip(tmp_path):
    mu = SignedMeasure([0.0, 0.1, -0.3], [DIFFUSE, CONCENTRATED, DIFFUSE])
    mu.to_csv(tmp_path / "mu.csv")
    back = SignedMeasure.from_csv(tmp_path / "mu.csv")
    np.testing.assert_array_equal(back.masses, mu.masses)
    np.testing.assert_array_equal(back.tags, mu.tags)


def test_conflicting_tags():
    a = SignedMeasure.dirac(2, 0, 1.0, CONCENTRATED)
    b = SignedMeasure.dirac(2, 0, 1.0, DIFFUSE)
    with pytest.raises(ValueError):
        a + b


def test_bl_identical_is_zero():
    d = default_dictionary(P3_POS)
    mu = SignedMeasure.diffuse([0.2, -0.4, 1.0])
    assert bl_distance(mu, mu, d, P3_POS) == 0.0


def test_bl_separated_diracs():
    pos = np.linspace(0.0, 2.0, 9)
    d = default_dictionary(pos)  # coarse tents at 0, 0.5, 1, 1.5, 2
    p_node, q = 4, 1.7  # p = 1.0 is a tent centre
    mu = SignedMeasure.dirac(9, p_node)
    nu = AtomicMeasure([[q]], [1.0])
    assert bl_distance(mu, nu, d, pos) >= min(1.0, abs(1.0 - q)) - 1e-12


def test_bl_p3_nu_vs_dirac():
    d = default_dictionary(P3_POS)
    nu = SignedMeasure.diffuse([0.25, 0.5, 0.25])
    delta = SignedMeasure.dirac(3, 1)
    # scan oracle: <nu - delta, eta> = (eta(1) + eta(3)) / 4 - eta(2) / 2
    def at(mem, x):
        return float(mem.func(np.array([[x]]))[0])

    scan = max(abs(0.25 * (at(m, 1.0) + at(m, 3.0)) - 0.5 * at(m, 2.0)) for m in d.members)
    assert bl_distance(nu, delta, d, P3_POS) == pytest.approx(scan, abs=1e-15)
    # the slope-1 tent at the centre sees the full unit spread
    assert scan == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bl_pseudometric(seed):
    r = np.random.default_rng(seed)
    pos = r.uniform(0, 2, size=(12, 2))
    d = default_dictionary(pos)
    a, b, c = (SignedMeasure.diffuse(r.normal(size=12)) for _ in range(3))
    dab = bl_distance(a, b, d, pos)
    assert dab == bl_distance(b, a, d, pos)
    assert dab <= bl_distance(a, c, d, pos) + bl_distance(c, b, d, pos) + 1e-12
    assert dab <= tv_norm(a - b) + 1e-12


def test_dictionary_rejects_bad_members():
    pts = np.linspace(0, 1, 5)
    with pytest.raises(ConfigError):
        TestDictionary([], pts)
    with pytest.raises(ConfigError):
        TestDictionary([DictionaryMember("steep", lambda p: 3 * p[:, 0])], pts)
    with pytest.raises(ConfigError):
        TestDictionary([DictionaryMember("tall", lambda p: 2 + 0 * p[:, 0])], pts)


def test_default_dictionary_members_bounded():
    pos = np.random.default_rng(0).uniform(-1, 3, size=(50, 2))
    d = default_dictionary(pos)
    vals = d.evaluate(pos)
    assert np.abs(vals).max() <= 1.0
    assert len(d) == 1 + 2 + 2 * 25


def test_bl_empty_dictionary():
    with pytest.raises(ConfigError):
        bl_distance(SignedMeasure.zero(1), SignedMeasure.zero(1), None, [0.0])
