"""Finite-state symmetric Dirichlet forms.

A form is stored as its Beurling-Deny ledger: jump intensities ``J`` over
ordered node pairs, a killing vector ``kappa`` and reference weights ``m``.
The quadratic form is

    E(u, v) = sum_{x,y} J(x,y) (u(x)-u(y)) (v(x)-v(y)) + sum_x kappa(x) u(x) v(x)

with no factor 1/2, so the stiffness matrix is
``(L u)(x) = sum_y 2 J(x,y) (u(x)-u(y)) + kappa(x) u(x)`` and ``E(u, v) = u.T L v``.
Edges flagged *local* carry the nearest-neighbour (gradient) part; all other
edges are the jump part.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

__all__ = [
    "StateSpace",
    "DiscreteForm",
    "build_local_form",
    "build_fractional_form",
    "energy",
    "energy_measure",
    "extended_energy",
    "truncate",
]


def truncate(u, k):
    """Clamp ``u`` nodewise to ``[-k, k]``."""
    if k < 0:
        raise ValueError(f"truncation level must be nonnegative, got {k}")
    return np.clip(np.asarray(u, dtype=float), -k, k)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Nodes of a uniform grid together with their volume weights."""

    positions: np.ndarray
    h: float
    m: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        m = np.asarray(self.m, dtype=float)
        if pos.shape[1] not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {pos.shape[1]}")
        if m.shape != (pos.shape[0],):
            raise ConfigError("volume weights must have one entry per node")
        if not np.all(m > 0):
            raise ConfigError("volume weights must be strictly positive")
        if self.h <= 0:
            raise ConfigError("grid spacing must be positive")
        if len(pos) > 1:
            order = np.lexsort(pos.T[::-1])
            gaps = np.abs(np.diff(pos[order], axis=0)).max(axis=1)
            if np.any(gaps == 0):
                raise ConfigError("node positions must be pairwise distinct")
        pos.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def nearest_node(self, point) -> int:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return int(np.argmin(np.linalg.norm(self.positions - point, axis=1)))


@dataclass(frozen=True, eq=False)
class DiscreteForm:
    """Immutable Dirichlet form on a finite state space.

    ``J_local`` and ``J_jump`` are symmetric CSR matrices with zero diagonal and
    disjoint sparsity patterns; their sum is the full jump matrix ``J``.
    """

    space: StateSpace
    J_local: sp.csr_matrix
    J_jump: sp.csr_matrix
    kappa: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.space.n
        jl = sp.csr_matrix(self.J_local, dtype=float)
        jj = sp.csr_matrix(self.J_jump, dtype=float)
        kappa = np.asarray(self.kappa, dtype=float)
        for name, mat in (("J_local", jl), ("J_jump", jj)):
            if mat.shape != (n, n):
                raise ConfigError(f"{name} must be {n}x{n}")
            mat.eliminate_zeros()
            if mat.nnz and mat.data.min() < 0:
                raise ConfigError(f"{name} must be entrywise nonnegative")
            if np.any(mat.diagonal() != 0):
                raise ConfigError(f"{name} must have zero diagonal")
            if abs(mat - mat.T).max() > 1e-14 * max(1.0, abs(mat).max()):
                raise ConfigError(f"{name} must be symmetric")
        if kappa.shape != (n,) or np.any(kappa < 0):
            raise ConfigError("killing vector must be nonnegative, one entry per node")
        kappa.setflags(write=False)
        object.__setattr__(self, "J_local", jl)
        object.__setattr__(self, "J_jump", jj)
        object.__setattr__(self, "kappa", kappa)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def m(self) -> np.ndarray:
        return self.space.m

    @cached_property
    def J(self) -> sp.csr_matrix:
        return (self.J_local + self.J_jump).tocsr()

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """The matrix ``L`` with ``E(u, v) = u.T L v``."""
        J = self.J
        degree = np.asarray(J.sum(axis=1)).ravel()
        return (sp.diags(2.0 * degree + self.kappa) - 2.0 * J).tocsr()

    @property
    def local_edges(self) -> set[tuple[int, int]]:
        coo = sp.triu(self.J_local, k=1).tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col)}

    def apply(self, u) -> np.ndarray:
        return self.stiffness @ _node_function(self, u)

    def to_json(self) -> dict:
        """Debug dump: nodes, J triplets (ordered pairs) with local flags, kappa."""
        triplets = []
        for mat, local in ((self.J_local, True), (self.J_jump, False)):
            coo = mat.tocoo()
            triplets.extend(
                [int(i), int(j), float(v), local] for i, j, v in zip(coo.row, coo.col, coo.data)
            )
        triplets.sort()
        return {
            "metadata": self.metadata,
            "h": self.space.h,
            "nodes": self.space.positions.tolist(),
            "m": self.space.m.tolist(),
            "J": triplets,
            "kappa": self.kappa.tolist(),
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def _node_function(form, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (form.n,):
        raise ValueError(f"node function has shape {u.shape}, expected ({form.n},)")
    return u


def _grid_axes(dim, n_per_side, extent):
    if dim not in (1, 2):
        raise ConfigError(f"dimension must be 1 or 2, got {dim}")
    if n_per_side < 1:
        raise ConfigError("n_per_side must be at least 1")
    extents = np.asarray(extent, dtype=float)
    if extents.ndim == 1:
        extents = np.tile(extents, (dim, 1))
    if extents.shape != (dim, 2) or np.any(extents[:, 1] <= extents[:, 0]):
        raise ConfigError(f"bad extent {extent!r} for a {dim}D grid")
    widths = extents[:, 1] - extents[:, 0]
    if not np.allclose(widths, widths[0]):
        raise ConfigError("grid cells must be square: all extents need equal length")
    h = widths[0] / (n_per_side + 1)
    axes = [lo + h * np.arange(1, n_per_side + 1) for lo in extents[:, 0]]
    return axes, h


def build_local_form(
    dim: int,
    n_per_side: int,
    extent: Sequence[float] | Sequence[Sequence[float]] = (0.0, 1.0),
    conductance: float | Callable[[np.ndarray], np.ndarray] = 1.0,
) -> DiscreteForm:
    """Five-point (or three-point) finite-difference form with Dirichlet exterior.

    Interior nodes sit at ``lo + i*h``, ``i = 1..n_per_side``. The conductance
    ``a`` is a constant or a callable evaluated at edge midpoints. Each
    nearest-neighbour edge gets ``J = a h^(d-2) / 2`` per ordered pair; edges to
    the exterior boundary become killing ``kappa += a h^(d-2)``.
    """
    axes, h = _grid_axes(dim, n_per_side, extent)
    grids = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([g.ravel() for g in grids], axis=1)
    shape = (n_per_side,) * dim
    n = positions.shape[0]
    index = np.arange(n).reshape(shape)

    def cond(points):
        if callable(conductance):
            vals = np.asarray(conductance(points), dtype=float).reshape(len(points))
        else:
            vals = np.full(len(points), float(conductance))
        if not np.all(vals > 0):
            raise ConfigError("conductance must be strictly positive on every edge")
        return vals

    scale = h ** (dim - 2)
    rows, cols, vals = [], [], []
    kappa = np.zeros(n)
    for axis in range(dim):
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a_idx = index[tuple(lo)].ravel()
        b_idx = index[tuple(hi)].ravel()
        if len(a_idx):
            c = cond(0.5 * (positions[a_idx] + positions[b_idx])) * scale
            rows += [a_idx, b_idx]
            cols += [b_idx, a_idx]
            vals += [c / 2, c / 2]
        # exterior neighbours on both faces of this axis
        offset = np.zeros(dim)
        offset[axis] = h
        for face, sign in ((0, -1.0), (n_per_side - 1, 1.0)):
            sl = [slice(None)] * dim
            sl[axis] = face
            idx = index[tuple(sl)].ravel()
            kappa[idx] += cond(positions[idx] + 0.5 * sign * offset) * scale
    if rows:
        J = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
    else:
        J = sp.csr_matrix((n, n))
    space = StateSpace(positions, h, np.full(n, h**dim))
    meta = {"kind": "local", "dim": dim, "n_per_side": n_per_side, "h": h}
    return DiscreteForm(space, J, sp.csr_matrix((n, n)), kappa, meta)


def fractional_exterior_integral(x, lo, hi, alpha):
    """Closed form of ``int_{R minus [lo, hi]} |x-y|^(-1-2 alpha) dy``."""
    x = np.asarray(x, dtype=float)
    return ((x - lo) ** (-2 * alpha) + (hi - x) ** (-2 * alpha)) / (2 * alpha)


def build_fractional_form(
    n: int,
    alpha: float,
    c: float = 1.0,
    extent: Sequence[float] = (0.0, 1.0),
    positions: Sequence[float] | None = None,
) -> DiscreteForm:
    """Nonlocal form of the kernel ``c / |x-y|^(1+2 alpha)`` on an interval.

    Nodes are cell centres ``lo + (i + 1/2) h`` with ``h = (hi - lo) / n``
    unless explicit, uniformly spaced ``positions`` are supplied. Pairs further
    apart than ``h`` get ``J = c h^2 / |x-y|^(1+2 alpha)``; the singular range
    ``|x-y| <= h`` is collapsed onto nearest-neighbour local edges with
    conductance ``2J = c h^(1-2 alpha) / (1 - alpha)``. The exterior
    ``R minus [lo, hi]`` is killing, ``kappa = m * 2c * int_ext |x-y|^(-1-2 alpha)``.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if c <= 0:
        raise ConfigError("normalizing constant must be positive")
    lo, hi = map(float, extent)
    if hi <= lo:
        raise ConfigError(f"bad extent {extent!r}")
    if positions is None:
        if n < 2:
            raise ConfigError("fractional form needs at least 2 nodes")
        h = (hi - lo) / n
        x = lo + h * (np.arange(n) + 0.5)
    else:
        x = np.asarray(positions, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise ConfigError("fractional form needs at least 2 nodes")
        gaps = np.diff(x)
        if np.any(gaps <= 0):
            raise ConfigError("overlapping or unsorted nodes")
        if not np.allclose(gaps, gaps[0], rtol=1e-9):
            raise ConfigError("fractional nodes must be uniformly spaced")
        if x[0] <= lo or x[-1] >= hi:
            raise ConfigError("nodes must lie strictly inside the extent")
        n, h = len(x), float(gaps[0])

    dist = np.abs(x[:, None] - x[None, :])
    near = np.isclose(dist, h, rtol=1e-9)
    far = (dist > h) & ~near
    J_far = np.where(far, c * h**2 / np.where(far, dist, 1.0) ** (1 + 2 * alpha), 0.0)
    J_near = np.where(near, 0.5 * c * h ** (1 - 2 * alpha) / (1 - alpha), 0.0)
    m = np.full(n, h)
    kappa = m * 2 * c * fractional_exterior_integral(x, lo, hi, alpha)
    space = StateSpace(x, h, m)
    meta = {"kind": "fractional", "n": n, "alpha": alpha, "c": c, "extent": [lo, hi], "h": h}
    return DiscreteForm(space, sp.csr_matrix(J_near), sp.csr_matrix(J_far), kappa, meta)


def _pair_sum(J, a, b, weight=None):
    """``sum_{x,y} J(x,y) (a(x)-a(y)) (b(x)-b(y)) [weight(x,y)]`` over stored entries."""
    coo = J.tocoo()
    terms = coo.data * (a[coo.row] - a[coo.col]) * (b[coo.row] - b[coo.col])
    if weight is not None:
        terms = terms * weight(coo.row, coo.col)
    return float(terms.sum())


def energy(form: DiscreteForm, u, v) -> float:
    u = _node_function(form, u)
    v = _node_function(form, v)
    return _pair_sum(form.J, u, v) + float(np.dot(form.kappa * u, v))


def _local_energy(form, u, v):
    return _pair_sum(form.J_local, u, v)


def _jump_energy(form, u, v):
    return _pair_sum(form.J_jump, u, v)


def energy_measure(form: DiscreteForm, u):
    """Energy measure of ``u`` split into its local and jump parts.

    Both parts have mass ``sum_y 2J(x,y) (u(x)-u(y))^2`` at ``x``, restricted to
    local-flagged and non-local edges respectively. The killing part is not
    included in either.
    """
    from .measures import SignedMeasure

    u = _node_function(form, u)
    parts = []
    for J in (form.J_local, form.J_jump):
        coo = J.tocoo()
        dens = np.bincount(
            coo.row, weights=2 * coo.data * (u[coo.row] - u[coo.col]) ** 2, minlength=form.n
        )
        parts.append(SignedMeasure.diffuse(dens))
    return tuple(parts)


def extended_energy(form: DiscreteForm, u, h: Callable, eta, support_bound: float | None) -> float:
    """Extended form ``E(u, h(u) eta)`` for unbounded-type ``u``.

    Sum of the local term ``E_local(T_M(u), h(u) eta)``, the two symmetrized
    jump terms and the killing term ``sum kappa u h(u) eta``. ``h`` must vanish
    outside ``[-support_bound, support_bound]``.

    A finite-difference local form is not strongly local, so ``T_M(u)`` would
    leak through edges leaving the support of ``h(u)``; the local term is
    therefore evaluated at ``M = max(support_bound, max|u|)``, where the
    truncation is inactive and the value cannot depend on the declared bound.
    """
    if support_bound is None or not np.isfinite(support_bound) or support_bound < 0:
        raise ConfigError("h needs a finite declared support bound")
    u = _node_function(form, u)
    eta = _node_function(form, eta)
    hu = np.asarray(h(u), dtype=float).reshape(form.n)
    outside = np.abs(u) > support_bound
    if np.any(hu[outside] != 0):
        raise ConfigError("h does not vanish outside its declared support")
    M = max(float(support_bound), float(np.abs(u).max(initial=0.0)))
    local = _local_energy(form, truncate(u, M), hu * eta)
    jump_a = _pair_sum(
        form.J_jump, u, hu, weight=lambda i, j: 0.5 * (eta[i] + eta[j])
    )
    jump_b = _pair_sum(
        form.J_jump, u, eta, weight=lambda i, j: 0.5 * (hu[i] + hu[j])
    )
    killing = float(np.sum(form.kappa * u * hu * eta))
    return local + jump_a + jump_b + killing

