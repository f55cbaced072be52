import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from renormlab.errors import ConfigError
from renormlab.lattice import (
    StateSpace,
    build_fractional_form,
    build_local_form,
    energy,
    energy_measure,
    extended_energy,
    truncate,
)


def brute_energy(form, u, v):
    J = form.J.toarray()
    total = sum(J[x, y] * (u[x] - u[y]) * (v[x] - v[y]) for x, y in itertools.product(range(form.n), repeat=2))
    return total + sum(form.kappa[x] * u[x] * v[x] for x in range(form.n))


def hand_stencil_1d(n, h=1.0, a=1.0):
    # standard -(a u')' stiffness with Dirichlet ends, scaled by h^(d-2) = 1/h
    L = np.zeros((n, n))
    for i in range(n):
        L[i, i] = 2 * a / h
        if i:
            L[i, i - 1] = -a / h
        if i < n - 1:
            L[i, i + 1] = -a / h
    return L


def test_p3_stencil(p3):
    np.testing.assert_array_equal(p3.stiffness.toarray(), hand_stencil_1d(3))
    np.testing.assert_array_equal(p3.kappa, [1, 0, 1])
    np.testing.assert_array_equal(p3.m, [1, 1, 1])


def test_single_node():
    f = build_local_form(1, 1, (0.0, 2.0))
    np.testing.assert_array_equal(f.stiffness.toarray(), [[2.0]])
    np.testing.assert_array_equal(f.kappa, [2.0])


def test_2x2_grid():
    f = build_local_form(2, 2, (0.0, 3.0))
    L = f.stiffness.toarray()
    # 4x4 oracle: nodes (0,0),(0,1),(1,0),(1,1) in ij order
    oracle = 4 * np.eye(4)
    for a, b in [(0, 1), (0, 2), (1, 3), (2, 3)]:
        oracle[a, b] = oracle[b, a] = -1
    np.testing.assert_array_equal(L, oracle)
    np.testing.assert_array_equal(f.kappa, [2, 2, 2, 2])
    np.testing.assert_allclose(L.sum(axis=1), 2.0)  # row sums = kappa
    assert np.allclose(np.diag(L), 4.0)
    np.testing.assert_allclose(2 * f.J.toarray()[0, 1], 1.0)


def test_local_form_variable_conductance():
    a = lambda pts: 1.0 + pts[:, 0]
    f = build_local_form(1, 4, (0.0, 1.0), a)
    h = 0.2
    mids = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    cond = (1 + mids) / h
    L = np.diag(cond[:-1] + cond[1:]) - np.diag(cond[1:-1], 1) - np.diag(cond[1:-1], -1)
    np.testing.assert_allclose(f.stiffness.toarray(), L)
    np.testing.assert_allclose(f.kappa, [cond[0], 0, 0, cond[-1]])


@pytest.mark.parametrize(
    "kwargs",
    [dict(dim=3, n_per_side=2), dict(dim=1, n_per_side=0), dict(dim=1, n_per_side=3, conductance=0.0),
     dict(dim=1, n_per_side=3, conductance=lambda p: -np.ones(len(p))), dict(dim=2, n_per_side=3, extent=[[0, 1], [0, 2]])],
)
def test_local_form_rejects(kwargs):
    with pytest.raises(ConfigError):
        build_local_form(**kwargs)


def test_fractional_dense_kernel_oracle():
    f = build_fractional_form(5, 0.5, 1.0)
    h = 0.2
    x = h * (np.arange(5) + 0.5)
    J = f.J.toarray()
    for i, j in itertools.product(range(5), repeat=2):
        d = abs(x[i] - x[j])
        if i == j:
            expected = 0.0
        elif abs(i - j) == 1:
            expected = 0.5 * h ** (1 - 1.0) / (1 - 0.5)
        else:
            expected = h**2 / d**2
        assert J[i, j] == pytest.approx(expected, rel=1e-14)
    assert J[0, 2] == pytest.approx(0.25)
    np.testing.assert_array_equal(J, J.T)
    assert f.local_edges == {(0, 1), (1, 2), (2, 3), (3, 4)}


def test_fractional_killing_matches_exterior_integral():
    alpha, c = 0.3, 1.7
    f = build_fractional_form(6, alpha, c, (-1.0, 2.0))
    h = 0.5
    for i, x in enumerate(f.space.positions[:, 0]):
        left = integrate.quad(lambda y: (x - y) ** (-1 - 2 * alpha), -np.inf, -1.0)[0]
        right = integrate.quad(lambda y: (y - x) ** (-1 - 2 * alpha), 2.0, np.inf)[0]
        assert f.kappa[i] == pytest.approx(h * 2 * c * (left + right), rel=1e-9)
    # node nearest the left endpoint: closed form d^(-2 alpha)/(2 alpha) plus the right term
    x0 = f.space.positions[0, 0]
    closed = ((x0 + 1.0) ** (-2 * alpha) + (2.0 - x0) ** (-2 * alpha)) / (2 * alpha)
    assert f.kappa[0] == pytest.approx(h * 2 * c * closed)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
def test_fractional_rejects_alpha(alpha):
    with pytest.raises(ConfigError):
        build_fractional_form(5, alpha)


def test_fractional_rejects_overlap():
    with pytest.raises(ConfigError):
        build_fractional_form(3, 0.5, positions=[0.2, 0.2, 0.6])
    with pytest.raises(ConfigError):
        build_fractional_form(1, 0.5)


def test_fractional_explicit_positions():
    f = build_fractional_form(0, 0.4, positions=[0.1, 0.3, 0.5, 0.7, 0.9])
    g = build_fractional_form(5, 0.4)
    np.testing.assert_allclose(f.stiffness.toarray(), g.stiffness.toarray())


def test_state_space_invariants():
    with pytest.raises(ConfigError):
        StateSpace(np.array([0.0, 0.0]), 1.0, np.ones(2))
    with pytest.raises(ConfigError):
        StateSpace(np.array([0.0, 1.0]), 1.0, np.array([1.0, 0.0]))


def test_energy_examples(p3):
    u = np.array([0.5, 1.0, 0.5])
    assert energy(p3, u, u) == pytest.approx(1.0, abs=1e-15)
    assert energy(p3, np.zeros(3), u) == 0.0
    assert energy(p3, u, np.ones(3)) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        energy(p3, np.ones(4), u)


forms = [build_local_form(1, 6), build_local_form(2, 4), build_fractional_form(7, 0.35, 2.0)]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(range(3)), st.integers(0, 2**32 - 1))
def test_energy_is_symmetric_and_matches_stiffness(which, seed):
    form = forms[which]
    r = np.random.default_rng(seed)
    u, v = r.normal(size=(2, form.n))
    e_uv = energy(form, u, v)
    scale = max(1.0, np.abs(u).max() * np.abs(v).max() * abs(form.stiffness).sum())
    assert abs(e_uv - energy(form, v, u)) <= 1e-12 * scale
    assert abs(e_uv - u @ form.stiffness @ v) <= 1e-12 * scale
    assert abs(e_uv - brute_energy(form, u, v)) <= 1e-12 * scale


@pytest.mark.parametrize("form", forms + [build_fractional_form(400, 0.5), build_local_form(2, 30)])
def test_stiffness_positive_definite(form):
    L = form.stiffness.toarray()
    np.testing.assert_allclose(L, L.T)
    assert np.linalg.eigvalsh(L).min() > 0


def test_energy_measure_p3(p3):
    local, jump = energy_measure(p3, [0.5, 1.0, 0.5])
    np.testing.assert_allclose(local.masses, [0.25, 0.5, 0.25])
    np.testing.assert_array_equal(jump.masses, 0.0)


def test_energy_measure_constant_vanishes():
    f = build_fractional_form(6, 0.5)
    for part in energy_measure(f, np.full(6, 3.0)):
        np.testing.assert_array_equal(part.masses, 0.0)


def test_fractional_local_part_on_proxy_edges_only():
    f = build_fractional_form(6, 0.5)
    u = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    local, jump = energy_measure(f, u)
    # u differs only around node 1: local mass sits on nodes 0..2
    assert np.all(local.masses[3:] == 0)
    assert np.all(jump.masses[3:] > 0)


def _part_energy(J, a, b):
    coo = J.tocoo()
    return float((coo.data * (a[coo.row] - a[coo.col]) * (b[coo.row] - b[coo.col])).sum())


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(range(3)), st.integers(0, 2**32 - 1))
def test_energy_measure_polarization(which, seed):
    form = forms[which]
    r = np.random.default_rng(seed)
    u, eta = r.normal(size=(2, form.n))
    for part, J in zip(energy_measure(form, u), (form.J_local, form.J_jump)):
        rhs = 2 * _part_energy(J, u * eta, u) - _part_energy(J, u * u, eta)
        assert abs(part.pair(eta) - rhs) <= 1e-10 * max(1.0, abs(rhs))


def hat(lo, hi, ramp):
    def h(s):
        s = np.asarray(s, dtype=float)
        return np.clip(np.minimum(s - (lo - ramp), (hi + ramp) - s) / ramp, 0.0, 1.0)

    return h


def brute_extended(form, u, h, eta, M):
    # the four terms written out pair by pair, M at or above max|u|
    Jl, Jj = form.J_local.toarray(), form.J_jump.toarray()
    hu = h(u)
    tm = truncate(u, M)
    total = 0.0
    for x, y in itertools.product(range(form.n), repeat=2):
        total += Jl[x, y] * (tm[x] - tm[y]) * (hu[x] * eta[x] - hu[y] * eta[y])
        total += Jj[x, y] * (u[x] - u[y]) * (hu[x] - hu[y]) * (eta[x] + eta[y]) / 2
        total += Jj[x, y] * (u[x] - u[y]) * (eta[x] - eta[y]) * (hu[x] + hu[y]) / 2
    return total + sum(form.kappa[x] * u[x] * hu[x] * eta[x] for x in range(form.n))


def test_extended_energy_collapses_to_energy(p3):
    u = np.array([0.5, 1.0, 0.5])
    eta = np.array([0.3, -1.0, 2.0])
    h = hat(-2, 2, 1.0)
    assert extended_energy(p3, u, h, eta, 3.0) == pytest.approx(energy(p3, u, eta), abs=1e-14)
    assert extended_energy(p3, np.zeros(3), h, eta, 3.0) == 0.0


def test_extended_energy_p3_brute(p3):
    u = np.array([0.5, 1.0, 0.5])
    eta = np.array([1.0, 0.0, 0.0])
    h = hat(-2, 2, 1.0)
    assert extended_energy(p3, u, h, eta, 3.0) == pytest.approx(brute_extended(p3, u, h, eta, 3.0), abs=1e-14)


def test_extended_energy_fractional_brute():
    f = build_fractional_form(7, 0.4)
    r = np.random.default_rng(3)
    u = r.normal(size=7)
    eta = r.uniform(-1, 1, size=7)
    h = hat(-0.5, 0.4, 0.3)
    M = float(np.abs(u).max()) + 1
    assert extended_energy(f, u, h, eta, M) == pytest.approx(brute_extended(f, u, h, eta, M), rel=1e-12, abs=1e-13)
    # symmetrized jump terms add up to the plain form E(u, h(u) eta)
    assert extended_energy(f, u, h, eta, M) == pytest.approx(energy(f, u, h(u) * eta), rel=1e-12, abs=1e-13)


@pytest.mark.parametrize("form", forms)
def test_extended_energy_independent_of_bound(form):
    r = np.random.default_rng(11)
    u = 3 * r.normal(size=form.n)
    eta = r.uniform(-1, 1, size=form.n)
    h = hat(-0.5, 0.5, 0.25)
    vals = [extended_energy(form, u, h, eta, M) for M in (0.75, 1.0, 2.0, 50.0)]
    assert max(vals) - min(vals) <= 1e-12 * max(1.0, abs(vals[0]))
    assert vals[0] == pytest.approx(u @ form.stiffness @ (h(u) * eta), rel=1e-12, abs=1e-12)


def test_extended_energy_rejects_missing_support(p3):
    with pytest.raises(ConfigError):
        extended_energy(p3, np.ones(3), lambda s: np.ones_like(s), np.ones(3), None)
    with pytest.raises(ConfigError):
        # h does not vanish at u = 1 > declared bound 0.5
        extended_energy(p3, np.ones(3), lambda s: np.ones_like(s), np.ones(3), 0.5)


def test_truncate():
    np.testing.assert_array_equal(truncate([0.5, 1, 0.5], 0.75), [0.5, 0.75, 0.5])
    np.testing.assert_array_equal(truncate([0.5, -1, 0.5], 2), [0.5, -1, 0.5])
    np.testing.assert_array_equal(truncate([0.5, -1, 0.5], 0), [0, 0, 0])
    with pytest.raises(ValueError):
        truncate([1.0], -1)


def test_form_json_dump(tmp_path, p3):
    p3.dump(tmp_path / "form.json")
    data = json.loads((tmp_path / "form.json").read_text())
    assert data["kappa"] == [1.0, 0.0, 1.0]
    assert [0, 1, 0.5, True] in data["J"]
    assert len(data["nodes"]) == 3


def test_form_is_immutable(p3):
    with pytest.raises(Exception):
        p3.kappa[0] = 5.0
