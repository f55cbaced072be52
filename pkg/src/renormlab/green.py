"""Green operator, resolvents and potential-theoretic checks on a finite form.

The generator is ``A = -M^{-1} L`` with ``M = diag(m)``; ``-A u = mu`` is
solved as ``L u = masses(mu)``, so ``G = L^{-1}`` acts on masses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError
from .lattice import DiscreteForm, energy
from .measures import SignedMeasure

DIRECT_THRESHOLD = 5000


class _Solver:
    """Factorization (or CG fallback) for one SPD matrix."""

    def __init__(self, matrix: sp.csr_matrix, tol: float, direct_threshold: int):
        self.matrix = matrix
        self.tol = tol
        self.direct = matrix.shape[0] < direct_threshold
        self._lu = spla.splu(matrix.tocsc()) if self.direct else None
        if not self.direct:
            diag = matrix.diagonal()
            self._precond = spla.LinearOperator(matrix.shape, matvec=lambda r: r / diag)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(b)
        if self.direct:
            x = self._lu.solve(b)
        else:
            x, info = spla.cg(self.matrix, b, rtol=0.1 * self.tol, atol=0.0, maxiter=20 * len(b), M=self._precond)
            if info != 0:
                res = np.linalg.norm(self.matrix @ x - b) / bnorm
                raise NumericalError(f"conjugate gradients did not converge (relative residual {res:.3e})", res)
        res = np.linalg.norm(self.matrix @ x - b) / bnorm
        if res > self.tol:
            raise NumericalError(f"solve missed tolerance: relative residual {res:.3e} > {self.tol:.1e}", res)
        return x


@dataclass(eq=False)
class GreenOperator:
    """Solve handle for ``L`` and the resolvent matrices ``alpha M + L``."""

    form: DiscreteForm
    tol: float = 1e-10
    direct_threshold: int = DIRECT_THRESHOLD
    _solvers: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self._solvers[0.0] = _Solver(self.form.stiffness, self.tol, self.direct_threshold)

    def _solver(self, alpha: float) -> _Solver:
        alpha = float(alpha)
        if alpha not in self._solvers:
            mat = (self.form.stiffness + alpha * sp.diags(self.form.m)).tocsr()
            self._solvers[alpha] = _Solver(mat, self.tol, self.direct_threshold)
        return self._solvers[alpha]

    def solve(self, masses) -> np.ndarray:
        return self._solver(0.0).solve(masses)

    def column(self, y: int) -> np.ndarray:
        e = np.zeros(self.form.n)
        e[y] = 1.0
        return self.solve(e)


def green_apply(G: GreenOperator, mu: SignedMeasure) -> np.ndarray:
    """Integral solution ``u(x) = sum_y G(x,y) masses(y)``."""
    return G.solve(mu.masses)


def resolvent_apply(G: GreenOperator, alpha: float, f) -> np.ndarray:
    """``R_alpha f``: solves ``(alpha M + L) v = M f``."""
    if alpha < 0:
        raise ConfigError(f"resolvent rate must be nonnegative, got {alpha}")
    f = np.asarray(f, dtype=float)
    return G._solver(alpha).solve(G.form.m * f)


def capacity(G: GreenOperator, B) -> tuple[float, np.ndarray]:
    """Capacity of the node set ``B`` and its equilibrium potential.

    The potential equals 1 on ``B`` and is ``L``-harmonic off ``B``; the
    capacity is its energy. ``B`` empty gives 0 by convention.
    """
    form = G.form
    nodes = np.unique(np.asarray(list(B), dtype=int))
    e = np.zeros(form.n)
    if nodes.size == 0:
        return 0.0, e
    e[nodes] = 1.0
    free = np.setdiff1d(np.arange(form.n), nodes)
    if free.size:
        L = form.stiffness
        rhs = -(L[free][:, nodes] @ e[nodes])
        sub = L[free][:, free].tocsr()
        e[free] = _Solver(sub, G.tol, G.direct_threshold).solve(rhs)
    return energy(form, e, e), e


@dataclass
class ExcessiveCheck:
    excessive: bool
    witness: int | None
    min_value: float
    min_generator: float

    def __bool__(self):
        return self.excessive


def is_excessive(form: DiscreteForm, u, tol: float = 1e-12) -> ExcessiveCheck:
    """Discrete excessivity: ``u >= 0`` and ``L u >= 0`` up to ``tol``.

    The witness is the most violating node (by the smaller of the two slacks).
    """
    u = np.asarray(u, dtype=float)
    Lu = form.stiffness @ u
    slack = np.minimum(u, Lu)
    worst = int(np.argmin(slack))
    ok = bool(slack[worst] >= -tol)
    return ExcessiveCheck(ok, None if ok else worst, float(u.min()), float(Lu.min()))


def excessive_majorant(
    G: GreenOperator,
    h,
    n: float,
    g=None,
    omega: float = 1.5,
    tol: float = 1e-12,
    max_sweeps: int = 100_000,
) -> np.ndarray:
    """Value function of optimal stopping of ``h`` with running cost ``n g``.

    Solves the complementarity system ``v >= h``, ``L v + n M g >= 0``,
    ``(v - h) (L v + n M g) = 0`` by projected successive over-relaxation.
    ``n = 0`` gives the reduite of ``h``. The lower approximant is
    ``-excessive_majorant(G, -h, n, g)``.
    """
    form = G.form
    h = np.asarray(h, dtype=float)
    if g is None:
        g = np.ones(form.n)
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise ConfigError("running cost weight g must be strictly positive")
    if n < 0:
        raise ConfigError("penalty level must be nonnegative")
    L = form.stiffness.tocsr()
    diag = L.diagonal()
    indptr, indices, data = L.indptr, L.indices, L.data
    source = n * form.m * g
    v = np.maximum(h, 0.0) if n == 0 else h.copy()
    scale = max(1.0, float(np.abs(h).max(initial=0.0)))
    for _ in range(max_sweeps):
        change = 0.0
        for i in range(form.n):
            lo, hi = indptr[i], indptr[i + 1]
            r = float(np.dot(data[lo:hi], v[indices[lo:hi]])) + source[i]
            new = max(h[i], v[i] - omega * r / diag[i])
            change = max(change, abs(new - v[i]))
            v[i] = new
        if change < tol * scale:
            return v
    raise NumericalError(f"projected relaxation did not converge in {max_sweeps} sweeps", change)


@dataclass
class PotentialReport:
    duality: list[float]
    very_weak: list[float]
    tolerance: float
    scale: float

    @property
    def max_residual(self) -> float:
        return max(self.duality + self.very_weak, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_residual <= 10 * self.tolerance * self.scale


def verify_potential_identities(G: GreenOperator, mu: SignedMeasure, etas, u=None) -> PotentialReport:
    """Duality ``<u, eta m> = <mu, R eta>`` and very weak ``<u, -A eta>_m = <mu, eta>``."""
    form = G.form
    if u is None:
        u = green_apply(G, mu)
    dual, weak = [], []
    scale = 1.0
    for eta in etas:
        eta = np.asarray(eta, dtype=float)
        R_eta = resolvent_apply(G, 0.0, eta)
        lhs = float(np.dot(u, eta * form.m))
        dual.append(abs(lhs - mu.pair(R_eta)))
        # <u, -A eta>_m = sum u m (M^{-1} L eta)
        weak.append(abs(float(np.dot(u, form.stiffness @ eta)) - mu.pair(eta)))
        scale = max(scale, abs(lhs), float(np.abs(mu.masses).sum() * np.abs(R_eta).max(initial=0.0)))
    return PotentialReport(dual, weak, G.tol, scale)
