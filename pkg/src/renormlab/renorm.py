"""Truncation measures of solutions to ``-A u = mu`` and the renormalization checks.

For ``u = G mu`` the truncation ``T_k(u)`` satisfies
``E(T_k(u), eta) = <mu_d, eta> + <nu_k, eta>``; this module extracts ``nu_k``,
rebuilds it from the jump densities ``j_k``, follows it under mesh refinement
and solves the monotone semilinear problem.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError
from .green import GreenOperator, capacity, green_apply
from .lattice import DiscreteForm, build_fractional_form, build_local_form, energy, extended_energy, truncate
from .measures import (
    AtomicMeasure,
    SignedMeasure,
    TestDictionary,
    bl_distance,
    decompose,
    default_dictionary,
    tv_norm,
)

log = logging.getLogger(__name__)

__all__ = [
    "truncate",
    "extract_nu",
    "jump_lambda",
    "structure_check",
    "verify_renormalized",
    "refinement_study",
    "verify_aab",
    "solve_semilinear",
    "semilinear_uniqueness",
    "TruncationReport",
    "LambdaFamily",
]


def _sign(x):
    # sign(0) = -1
    return np.where(x > 0, 1.0, -1.0)


def extract_nu(form: DiscreteForm, u, mu_d: SignedMeasure, k: float) -> SignedMeasure:
    """``nu_k = L T_k(u) - mu_d`` (tagged concentrated)."""
    nu = form.stiffness @ truncate(u, k) - mu_d.masses
    return SignedMeasure(nu, np.full(form.n, 2, dtype=np.int8))


def jump_lambda(form: DiscreteForm, u, a: float) -> SignedMeasure:
    """Jump part ``j_a(u)`` of the Tanaka decomposition of ``|u - a|``.

    ``j_a(x) = sum_y 2J(x,y) (|u(y)-a| - |u(x)-a| - sign(u(x)-a)(u(y)-u(x)))
    + kappa(x) (1{u(x)>a}(|a|+a) + 1{u(x)<=a}(|a|-a))``.
    Every summand is a convexity gap of ``|. - a|``, so the result is >= 0.
    """
    u = np.asarray(u, dtype=float)
    coo = form.J.tocoo()
    ux, uy = u[coo.row], u[coo.col]
    gap = np.abs(uy - a) - np.abs(ux - a) - _sign(ux - a) * (uy - ux)
    dens = np.bincount(coo.row, weights=2 * coo.data * gap, minlength=form.n)
    killing = np.where(u > a, abs(a) + a, abs(a) - a)
    dens = dens + form.kappa * killing
    return SignedMeasure.diffuse(dens)


@dataclass
class LambdaFamily:
    """``lambda_a = l_a + j_a`` over a level schedule; ``l_a = 0`` on pure-jump lattices."""

    levels: list[float]
    jump: list[SignedMeasure]
    local: list[SignedMeasure]

    @classmethod
    def on_lattice(cls, form, u, levels):
        jumps = [jump_lambda(form, u, a) for a in levels]
        return cls(list(levels), jumps, [SignedMeasure.zero(form.n) for _ in levels])

    def total(self, i) -> SignedMeasure:
        return self.local[i] + self.jump[i]


@dataclass
class StructureResiduals:
    nu_identity: float
    positive_part: float
    negative_part: float

    def max(self):
        return max(self.nu_identity, self.positive_part, self.negative_part)


def structure_check(form: DiscreteForm, u, mu: SignedMeasure, k: float) -> StructureResiduals:
    """TV residuals of the three structure identities at level ``k``.

    * ``nu_k = -1{u>k or u<=-k} mu_d + (j_k - j_{-k}) / 2``
    * ``L(u+ ^ k) = 1{0<u<=k} mu_d + (j_k - j_0) / 2``
    * ``L(u- ^ k) = -1{-k<u<=0} mu_d + (j_{-k} - j_0) / 2``

    On a lattice these hold exactly when the concentrated part of ``mu`` sits
    where ``|u| > k`` (where a continuum ``mu_c`` lives).
    """
    u = np.asarray(u, dtype=float)
    mu_d, _ = decompose(mu)
    L = form.stiffness
    jk = jump_lambda(form, u, k).masses
    jmk = jump_lambda(form, u, -k).masses
    j0 = jump_lambda(form, u, 0.0).masses
    nu = extract_nu(form, u, mu_d, k).masses
    outside = (u > k) | (u <= -k)
    r_a = nu - (-np.where(outside, mu_d.masses, 0.0) + 0.5 * (jk - jmk))
    plus = np.minimum(np.maximum(u, 0.0), k)
    minus = np.minimum(np.maximum(-u, 0.0), k)
    r_b = L @ plus - (np.where((u > 0) & (u <= k), mu_d.masses, 0.0) + 0.5 * (jk - j0))
    r_c = L @ minus - (-np.where((u > -k) & (u <= 0), mu_d.masses, 0.0) + 0.5 * (jmk - j0))
    return StructureResiduals(*(float(np.abs(r).sum()) for r in (r_a, r_b, r_c)))


@dataclass
class TruncationRecord:
    k: float
    nu: SignedMeasure
    tv: float
    bl_to_mu_c: float
    bl_abs: float
    structure_residual: float
    prop_residuals: tuple[float, float]
    half_jump_mass: float
    aab_energy: float

    def as_dict(self):
        d = {key: val for key, val in self.__dict__.items() if key != "nu"}
        d["prop_residuals"] = list(self.prop_residuals)
        return d


@dataclass
class TruncationReport:
    k_schedule: list[float]
    records: list[TruncationRecord]
    mesh: str = ""

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def as_dict(self):
        return {"mesh": self.mesh, "k_schedule": self.k_schedule, "records": [r.as_dict() for r in self.records]}


def phi_k(u, k):
    """``Phi_k(u) = T_{k+1}(u) - T_k(u)``."""
    return truncate(u, k + 1) - truncate(u, k)


def verify_renormalized(
    form: DiscreteForm,
    u,
    mu: SignedMeasure,
    k_schedule: Sequence[float],
    dictionary: TestDictionary | None = None,
    mu_c_limit=None,
    mesh: str = "",
) -> TruncationReport:
    """Per-level truncation measures, their distances to ``mu_c`` and residuals.

    ``mu_c_limit`` optionally replaces the lattice ``mu_c`` by an off-lattice
    :class:`AtomicMeasure` (the continuum target in refinement studies).
    """
    ks = [float(k) for k in k_schedule]
    if any(b <= a for a, b in zip(ks, ks[1:])) or (ks and ks[0] <= 0):
        raise ConfigError("k_schedule must be positive and strictly increasing")
    u = np.asarray(u, dtype=float)
    pos = form.space.positions
    if dictionary is None:
        dictionary = default_dictionary(pos)
    mu_d, mu_c = decompose(mu)
    target = mu_c if mu_c_limit is None else mu_c_limit
    records = []
    sup_u = float(np.abs(u).max(initial=0.0))
    for k in ks:
        if k >= sup_u:
            # T_k(u) = u, so L T_k(u) - mu_d = mu_c; skip the solver round-off
            nu = SignedMeasure(mu_c.masses.copy(), np.full(form.n, 2, dtype=np.int8))
        else:
            nu = extract_nu(form, u, mu_d, k)
        s = structure_check(form, u, mu, k)
        records.append(
            TruncationRecord(
                k=k,
                nu=nu,
                tv=tv_norm(nu),
                bl_to_mu_c=bl_distance(nu, target, dictionary, pos),
                bl_abs=bl_distance(nu.variation(), target.variation(), dictionary, pos),
                structure_residual=s.nu_identity,
                prop_residuals=(s.positive_part, s.negative_part),
                half_jump_mass=0.5 * jump_lambda(form, u, k).total(),
                aab_energy=energy(form, u, phi_k(u, k)),
            )
        )
    return TruncationReport(ks, records, mesh)


@dataclass
class RefinementRow:
    n_per_side: int
    h: float
    sup_u: float
    k: float
    bl_to_mu_c: float
    bl_abs: float
    tv: float
    atom_capacity: float


@dataclass
class RefinementReport:
    setting: str
    theta: float
    rows: list[RefinementRow]
    slack: float = 0.10

    @staticmethod
    def _monotone(values, slack):
        return all(b <= (1 + slack) * a for a, b in zip(values, values[1:]))

    @property
    def bl_monotone(self):
        return self._monotone([r.bl_to_mu_c for r in self.rows], self.slack)

    @property
    def capacity_monotone(self):
        caps = [r.atom_capacity for r in self.rows]
        return all(b < a for a, b in zip(caps, caps[1:]))

    def as_dict(self):
        return {
            "setting": self.setting,
            "theta": self.theta,
            "rows": [asdict(r) for r in self.rows],
            "bl_monotone": self.bl_monotone,
            "capacity_monotone": self.capacity_monotone,
        }


def refinement_study(
    setting: str,
    mesh_sizes: Sequence[int],
    atoms: Sequence[tuple[Sequence[float], float]],
    theta: float = 0.5,
    extent=(0.0, 1.0),
    alpha: float = 0.5,
    c: float = 1.0,
    density: Callable | None = None,
    tol: float = 1e-10,
) -> RefinementReport:
    """Follow ``nu_{k_h}`` with ``k_h = theta * sup u_h`` along a mesh family.

    ``setting`` is ``"local2d"`` (``mesh_sizes`` = interior nodes per side),
    ``"fractional1d"`` (``mesh_sizes`` = node counts, needs ``alpha <= 1/2``)
    or ``"local1d"``, which is refused: points have positive capacity there.
    ``atoms`` are ``(position, mass)`` pairs of the concentrated part; each is
    placed on the nearest node.
    """
    if setting == "local1d" or (setting == "fractional1d" and alpha > 0.5):
        raise ConfigError(
            f"refinement study refused for {setting}"
            + (f" with alpha={alpha}" if setting == "fractional1d" else "")
            + ": point capacity does not vanish under refinement, so a Dirac mass is not concentrated"
        )
    if setting not in ("local2d", "fractional1d"):
        raise ConfigError(f"unknown refinement setting {setting!r}")
    if not atoms:
        raise ConfigError("refinement study needs at least one concentrated atom")
    limit = AtomicMeasure([a[0] for a in atoms], [a[1] for a in atoms])
    rows = []
    for size in mesh_sizes:
        if setting == "local2d":
            form = build_local_form(2, size, extent)
        else:
            form = build_fractional_form(size, alpha, c, extent)
        n = form.n
        masses = np.zeros(n)
        tags = np.full(n, 1, dtype=np.int8)
        atom_nodes = []
        for pos, mass in atoms:
            node = form.space.nearest_node(pos)
            masses[node] += mass
            tags[node] = 2
            atom_nodes.append(node)
        if density is not None:
            dens = np.asarray(density(form.space.positions), dtype=float) * form.m
            dens[atom_nodes] = 0.0
            masses += dens
        mu = SignedMeasure(masses, tags)
        G = GreenOperator(form, tol=tol)
        u = green_apply(G, mu)
        sup_u = float(np.abs(u).max())
        k = theta * sup_u
        report = verify_renormalized(
            form, u, mu, [k], default_dictionary(form.space.positions), mu_c_limit=limit, mesh=f"n={size}"
        )
        rec = report.records[0]
        cap, _ = capacity(G, atom_nodes)
        rows.append(RefinementRow(size, form.space.h, sup_u, k, rec.bl_to_mu_c, rec.bl_abs, rec.tv, cap))
        log.info("refinement n=%d: sup u=%.4f bl=%.4f cap=%.4f", size, sup_u, rec.bl_to_mu_c, cap)
    return RefinementReport(setting, theta, rows)


@dataclass
class AabReport:
    residuals: list[float]
    scale: float
    phi_energies: list[float]
    k_schedule: list[float]
    sup_u: float
    tolerance: float = 1e-9

    @property
    def max_residual(self):
        return max(self.residuals, default=0.0)

    @property
    def identity_ok(self):
        return self.max_residual <= self.tolerance * self.scale

    @property
    def phi_monotone(self):
        e = self.phi_energies
        tiny = 1e-14 * max(1.0, max(np.abs(e), default=0.0))
        return all(b <= a + tiny for a, b in zip(e, e[1:]))

    @property
    def phi_vanishes(self):
        return all(e == 0.0 for k, e in zip(self.k_schedule, self.phi_energies) if k >= self.sup_u)

    @property
    def passed(self):
        return self.identity_ok and self.phi_monotone and self.phi_vanishes


def default_h_dictionary(sup_u: float):
    """Three compactly supported profiles scaled to the range of ``u``.

    Returns ``(callable, support_bound)`` pairs: a plateau covering the range,
    a hat on the lower half and a smooth bump on the upper part.
    """
    M = 1.5 * max(sup_u, 1e-300)

    def plateau(s):
        return np.clip(2.0 - np.abs(s) / (0.5 * M), 0.0, 1.0)

    def hat(s):
        return np.maximum(0.0, 1.0 - np.abs(s - 0.25 * M) / (0.25 * M))

    def bump(s):
        z = (s - 0.6 * M) / (0.4 * M)
        out = np.zeros_like(s, dtype=float)
        inside = np.abs(z) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
        return out

    return [(plateau, M), (hat, 0.5 * M), (bump, M)]


def verify_aab(
    form: DiscreteForm,
    u,
    mu: SignedMeasure,
    h_dictionary=None,
    etas=None,
    k_schedule: Sequence[float] = (),
    tolerance: float = 1e-9,
) -> AabReport:
    """Extended-form identity ``E(u, h(u) eta) = <mu, h(u) eta>`` and ``E(u, Phi_k(u))``.

    Only meaningful for diffuse data; a concentrated part is refused.
    """
    mu_d, mu_c = decompose(mu)
    if np.any(mu_c.masses != 0):
        raise ConfigError("the h(u) eta identity is defined for diffuse data only; mu has a concentrated part")
    u = np.asarray(u, dtype=float)
    sup_u = float(np.abs(u).max(initial=0.0))
    if h_dictionary is None:
        h_dictionary = default_h_dictionary(sup_u)
    if etas is None:
        etas = default_etas(form)
    residuals = []
    scale = 0.0
    for h, M in h_dictionary:
        hu = np.asarray(h(u), dtype=float)
        for eta in etas:
            eta = np.asarray(eta, dtype=float)
            lhs = extended_energy(form, u, h, eta, M)
            rhs = mu.pair(hu * eta)
            residuals.append(abs(lhs - rhs))
            scale = max(scale, abs(rhs), tv_norm(mu) * float(np.abs(hu * eta).max(initial=0.0)))
    ks = [float(k) for k in k_schedule]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError("k_schedule must be strictly increasing")
    phis = [energy(form, u, phi_k(u, k)) for k in ks]
    return AabReport(residuals, max(scale, 1e-300), phis, ks, sup_u, tolerance)


def default_etas(form: DiscreteForm):
    """Five bounded test functions: constant, two waves, an indicator and a tent."""
    pos = form.space.positions
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    width = np.maximum(hi - lo, 1e-300)
    t = (pos - lo) / width
    centre = 0.5 * (lo + hi)
    return [
        np.ones(form.n),
        np.sin(np.pi * t).prod(axis=1),
        np.cos(3 * np.pi * t[:, 0]),
        (t[:, 0] < 0.5).astype(float),
        np.maximum(0.0, 1.0 - 2 * np.linalg.norm((pos - centre) / width, axis=1)),
    ]


@dataclass
class SemilinearResult:
    u: np.ndarray
    residual: float
    iterations: int
    newton_steps: int = 0


def _derivative(f, x, u, eps=1e-7):
    du = eps * np.maximum(1.0, np.abs(u))
    return (f(x, u + du) - f(x, u - du)) / (2 * du)


def solve_semilinear(
    G: GreenOperator,
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mu: SignedMeasure,
    u0=None,
    tol: float = 1e-8,
    damping: float = 0.5,
    max_iter: int = 500,
    df: Callable | None = None,
) -> SemilinearResult:
    """Solve ``L u = M f(x, u) + masses(mu)`` for ``f`` nonincreasing in ``u``.

    Each iteration proposes the damped fixed-point step
    ``u <- (1-d) u + d G(masses + M f(x,u))`` and keeps it if the residual
    drops; otherwise it takes a backtracked Newton step, whose Jacobian
    ``L - M f_u`` is SPD because ``f_u <= 0``.
    """
    form = G.form
    x = form.space.positions
    m = form.m
    L = form.stiffness
    b = mu.masses
    u = np.zeros(form.n) if u0 is None else np.array(u0, dtype=float)
    scale = max(1.0, float(np.abs(b).sum()))

    def residual(v):
        return L @ v - m * f(x, v) - b

    r = residual(u)
    rn = float(np.abs(r).max())
    newton = 0
    for it in range(1, max_iter + 1):
        if rn <= tol * scale:
            return SemilinearResult(u, rn, it - 1, newton)
        picard = (1 - damping) * u + damping * G.solve(b + m * f(x, u))
        r_new = residual(picard)
        if float(np.abs(r_new).max()) < 0.9 * rn:
            u, r = picard, r_new
        else:
            slope = df(x, u) if df is not None else _derivative(f, x, u)
            jac = (L - sp.diags(m * np.minimum(slope, 0.0))).tocsc()
            step = spla.spsolve(jac, -r)
            t = 1.0
            while t > 1e-8:
                cand = u + t * step
                r_cand = residual(cand)
                if float(np.abs(r_cand).max()) < rn:
                    break
                t *= 0.5
            else:
                raise NumericalError("semilinear iteration stalled", rn)
            u, r = cand, r_cand
            newton += 1
        rn = float(np.abs(r).max())
    if rn <= tol * scale:
        return SemilinearResult(u, rn, max_iter, newton)
    raise NumericalError(f"semilinear iteration diverged after {max_iter} iterations", rn)


@dataclass
class UniquenessWitness:
    from_zero: SemilinearResult
    from_linear: SemilinearResult
    gap: float


def semilinear_uniqueness(G: GreenOperator, f, mu: SignedMeasure, **kwargs) -> UniquenessWitness:
    """Solve from ``u0 = 0`` and from ``u0 = G mu``; report the sup-norm gap.

    Both runs are driven to a residual far below the 1e-8 acceptance level so
    the gap reflects the problem, not the stopping rule.
    """
    kwargs.setdefault("tol", 1e-13)
    a = solve_semilinear(G, f, mu, u0=np.zeros(G.form.n), **kwargs)
    b = solve_semilinear(G, f, mu, u0=green_apply(G, mu), **kwargs)
    return UniquenessWitness(a, b, float(np.abs(a.u - b.u).max()))
