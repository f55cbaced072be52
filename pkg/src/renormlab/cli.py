"""Command line front end: ``renormlab <command> --scenario FILE --out DIR``.

Every run writes ``<out>/<command>.json``. Exit codes: 0 all checks pass,
1 a check failed, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, continuum, rng
from .errors import ConfigError, RenormlabError
from .green import GreenOperator, capacity, green_apply, resolvent_apply, verify_potential_identities
from .measures import decompose, default_dictionary, tv_norm
from .renorm import (
    default_etas,
    refinement_study,
    semilinear_uniqueness,
    structure_check,
    verify_aab,
    verify_renormalized,
)
from .scenario import COMMANDS, Scenario, density_values, parse_scenario
from .stochastic import AdditiveFunctional, McConfig, dynkin_check, revuz_check, simulate

log = logging.getLogger("renormlab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _check(name, passed, residual=None, tolerance=None, status=None):
    return {
        "name": name,
        "passed": bool(passed),
        "status": status or ("pass" if passed else "fail"),
        "residual": None if residual is None else float(residual),
        "tolerance": None if tolerance is None else float(tolerance),
    }


class Context:
    """Lazily built objects shared by the pipelines of one run."""

    def __init__(self, scenario: Scenario, out: Path):
        self.sc = scenario
        self.out = out
        self.tol = scenario.tolerances
        self._form = self._G = self._mu = self._u = None

    @property
    def form(self):
        if self._form is None:
            self._form = self.sc.build_form()
        return self._form

    @property
    def G(self):
        if self._G is None:
            self._G = GreenOperator(self.form, tol=self.tol["solver"])
        return self._G

    @property
    def mu(self):
        if self._mu is None:
            self._mu = self.sc.build_measure(self.form)
        return self._mu

    @property
    def u(self):
        if self._u is None:
            self._u = green_apply(self.G, self.mu)
        return self._u


def cmd_solve(ctx):
    u = ctx.u
    L = ctx.form.stiffness
    b = ctx.mu.masses
    res = float(np.linalg.norm(L @ u - b) / max(np.linalg.norm(b), 1e-300)) if np.any(b) else 0.0
    mu_d, mu_c = decompose(ctx.mu)
    results = {"u": u.tolist(), "sup_u": float(np.abs(u).max()), "tv_mu": tv_norm(ctx.mu), "tv_mu_c": tv_norm(mu_c)}
    return results, [_check("relative residual", res <= ctx.tol["solver"], res, ctx.tol["solver"])]


def cmd_verify(ctx):
    form, u, mu = ctx.form, ctx.u, ctx.mu
    ks = ctx.sc.k_schedule or list(np.quantile(np.abs(u), [0.25, 0.5, 0.75]))
    ks = sorted(set(k for k in ks if k > 0))
    dict_spec = ctx.sc.dictionary
    dictionary = default_dictionary(form.space.positions, int(dict_spec["coarse"]), dict_spec["radii"])
    rep = verify_renormalized(form, u, mu, ks, dictionary)
    tol = ctx.tol["identity"]
    scale = max(1.0, tv_norm(mu))
    checks = []
    for rec in rep.records:
        worst = max(rec.structure_residual, *rec.prop_residuals)
        checks.append(_check(f"structure identities k={rec.k:.6g}", worst <= tol * scale, worst, tol * scale))
    etas = default_etas(form)
    pot = verify_potential_identities(ctx.G, mu, etas, u)
    checks.append(_check("duality and very weak identities", pot.passed, pot.max_residual, 10 * pot.tolerance * pot.scale))
    inverse_gap = max(float(np.abs(resolvent_apply(ctx.G, 0.0, (form.stiffness @ e) / form.m) - e).max()) for e in etas)
    checks.append(_check("R(-A eta) = eta", inverse_gap <= tol * max(1.0, max(np.abs(e).max() for e in etas)), inverse_gap, tol))
    results = rep.as_dict()
    results["nu"] = {f"{r.k:.6g}": r.nu.masses.tolist() for r in rep.records}
    for r in rep.records:
        r.nu.to_csv(ctx.out / f"nu_k{r.k:.6g}.csv")
    return results, checks


def cmd_structure(ctx):
    tol = ctx.tol["identity"] * max(1.0, tv_norm(ctx.mu))
    ks = ctx.sc.k_schedule or [0.5 * float(np.abs(ctx.u).max())]
    results, checks = {}, []
    for k in ks:
        s = structure_check(ctx.form, ctx.u, ctx.mu, k)
        results[f"{k:.6g}"] = {"nu_identity": s.nu_identity, "positive_part": s.positive_part, "negative_part": s.negative_part}
        checks.append(_check(f"structure k={k:.6g}", s.max() <= tol, s.max(), tol))
    return results, checks


def cmd_refine(ctx):
    ref = ctx.sc.refinement
    if ref is None:
        raise ConfigError("refine needs a refinement section")
    atoms = [(a["position"], float(a["mass"])) for a in ctx.sc.measure["atoms"] if a["tag"] == "concentrated"]
    dens = ctx.sc.measure.get("density")
    density = (lambda pos: density_values(dens, pos)) if dens else None
    rep = refinement_study(
        ref["setting"],
        ref["mesh_sizes"],
        atoms,
        theta=float(ref["theta"]),
        extent=ref["extent"],
        alpha=float(ref["alpha"]),
        c=float(ref["c"]),
        density=density,
        tol=ctx.tol["solver"],
    )
    mass_c = sum(abs(a[1]) for a in atoms)
    last = rep.rows[-1]
    tv_gap = abs(last.tv - mass_c) / mass_c
    checks = [
        _check("bl distance monotone (10% slack)", rep.bl_monotone),
        _check("atom capacity decreasing", rep.capacity_monotone),
        _check("|nu_k|(E) within 10% of |mu_c|(E) on finest mesh", tv_gap <= 0.10, tv_gap, 0.10),
    ]
    with open(ctx.out / "refinement.csv", "w") as fh:
        fh.write("n_per_side,h,sup_u,k,bl_to_mu_c,bl_abs,tv,atom_capacity\n")
        for r in rep.rows:
            fh.write(f"{r.n_per_side},{r.h!r},{r.sup_u!r},{r.k!r},{r.bl_to_mu_c!r},{r.bl_abs!r},{r.tv!r},{r.atom_capacity!r}\n")
    return rep.as_dict(), checks


def cmd_reconstruct(ctx):
    tol = ctx.tol["quadrature"]
    ex = continuum.Log2D()
    results, checks = {"values": []}, []
    for b, c in ctx.sc.continuum["level_pairs"]:
        v = continuum.reconstruction_check(ex, float(b), float(c))
        results["values"].append({"b": b, "c": c, "value": v})
        checks.append(_check(f"reconstruction b={b} c={c}", abs(v - 2.0) <= tol, abs(v - 2.0), tol))
    return results, checks


def cmd_occupation(ctx):
    tol = ctx.tol["quadrature"]
    ex = continuum.Log2D()
    lo, hi = map(float, ctx.sc.continuum["occupation_support"])
    lhs, rhs = continuum.occupation_check(ex, lambda a: 1.0 if lo <= a <= hi else 0.0, (lo, hi))
    scale = max(1.0, abs(rhs))
    checks = [_check("occupation identity", abs(lhs - rhs) <= tol * scale, abs(lhs - rhs), tol * scale)]
    masses = {}
    for a in ctx.sc.continuum["levels"]:
        v = continuum.level_mass(ex, float(a))
        masses[str(a)] = v
        checks.append(_check(f"<l_a, 1> = 2 at a={a}", abs(v - 2.0) <= tol, abs(v - 2.0), tol))
    return {"lhs": lhs, "rhs": rhs, "level_masses": masses}, checks


def cmd_mc(ctx, seed=None):
    form, mu, u = ctx.form, ctx.mu, ctx.u
    mc = ctx.sc.mc
    cfg = McConfig(
        n_paths=int(mc["n_paths"]),
        seed=int(seed if seed is not None else mc["seed"]),
        start=ctx.sc.start_node(form),
        max_time=float(mc.get("max_time", 1e6)),
    )
    sig = float(ctx.tol["mc_sigmas"])
    checks, results = [], {"seed": cfg.seed, "n_paths": cfg.n_paths, "rng": rng.ALGORITHM, "start": cfg.start}
    mu_pos = mu.variation()
    revuz = revuz_check(form, mu_pos, np.ones(form.n), cfg, ctx.G)
    revuz = replace(revuz, sigmas=sig)
    results["revuz"] = revuz.as_dict()
    checks.append(_check("revuz identity", revuz.passed, revuz.residual, sig * revuz.stderr, revuz.status))
    ks = ctx.sc.k_schedule or [0.5 * float(np.abs(u).max())]
    results["dynkin"] = {}
    for k in ks:
        d = dynkin_check(form, u, mu, k, cfg)
        ident = replace(d.identity, sigmas=sig)
        results["dynkin"][f"{k:.6g}"] = {
            "identity": ident.as_dict(),
            "stopped_value": d.stopped_value.as_dict(),
            "concentrated_potential": d.concentrated_potential,
        }
        checks.append(_check(f"dynkin identity k={k:.6g}", ident.passed, ident.residual, sig * ident.stderr, ident.status))
    if mc.get("trace"):
        simulate(form, replace(cfg, n_paths=min(cfg.n_paths, 100)), [AdditiveFunctional(mu_pos.masses)], trace_path=ctx.out / "mc_trace.csv")
    return results, checks


def cmd_semilinear(ctx):
    f = ctx.sc.nonlinearity()
    w = semilinear_uniqueness(ctx.G, f, ctx.mu)
    checks = [
        _check("two-start agreement", w.gap <= 1e-8, w.gap, 1e-8),
        _check("converged residual", max(w.from_zero.residual, w.from_linear.residual) <= 1e-8 * max(1.0, tv_norm(ctx.mu)),
               max(w.from_zero.residual, w.from_linear.residual), 1e-8),
    ]
    return {"u": w.from_zero.u.tolist(), "gap": w.gap, "iterations": [w.from_zero.iterations, w.from_linear.iterations]}, checks


def cmd_aab(ctx):
    u = ctx.u
    ks = ctx.sc.aab.get("k_schedule") or sorted(set(np.quantile(np.abs(u), [0.0, 0.25, 0.5, 0.75, 1.0]).tolist()))
    rep = verify_aab(ctx.form, u, ctx.mu, k_schedule=ks, tolerance=ctx.tol["identity"])
    checks = [
        _check("E(u, h(u) eta) = <mu, h(u) eta>", rep.identity_ok, rep.max_residual, rep.tolerance * rep.scale),
        _check("E(u, Phi_k(u)) nonincreasing", rep.phi_monotone),
        _check("E(u, Phi_k(u)) = 0 for k >= sup|u|", rep.phi_vanishes),
    ]
    return {"residuals": rep.residuals, "scale": rep.scale, "k_schedule": ks, "phi_energies": rep.phi_energies}, checks


def cmd_capacity(ctx):
    nodes = ctx.sc.capacity.get("nodes") or ctx.sc.atom_nodes(ctx.form) or [ctx.form.n // 2]
    cap, e = capacity(ctx.G, nodes)
    ok = bool(e.min() >= -1e-12 and e.max() <= 1 + 1e-12)
    return {"nodes": list(map(int, nodes)), "capacity": cap, "equilibrium": e.tolist()}, [_check("0 <= e <= 1", ok)]


PIPELINES = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "structure": cmd_structure,
    "refine": cmd_refine,
    "reconstruct": cmd_reconstruct,
    "occupation": cmd_occupation,
    "mc": cmd_mc,
    "semilinear": cmd_semilinear,
    "aab": cmd_aab,
    "capacity": cmd_capacity,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def run(scenario: Scenario, command: str, out, seed=None, threads=None, dump_form=False):
    """Execute one command and write its JSON report. Returns ``(exit_code, report)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = {
        "renormlab": __version__,
        "command": command,
        "scenario": scenario.source,
        "seed": seed,
        "threads": threads,
    }
    try:
        if command not in PIPELINES:
            raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
        ctx = Context(scenario, out)
        if dump_form:
            ctx.form.dump(out / "form.json")
        if command == "mc":
            results, checks = cmd_mc(ctx, seed)
        else:
            results, checks = PIPELINES[command](ctx)
        report["results"] = results
        report["checks"] = checks
        report["passed"] = all(c["passed"] for c in checks)
        code = EXIT_OK if report["passed"] else EXIT_CHECK
    except RenormlabError as exc:
        code = exc.exit_code
        report["passed"] = False
        report["error"] = {
            "type": type(exc).__name__,
            "message": str(exc),
            "residual": getattr(exc, "residual", None),
        }
    except Exception as exc:  # numerical library failures surface as exit 3
        code = EXIT_NUMERIC
        report["passed"] = False
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    report["timestamp"] = {
        "utc": datetime.now(timezone.utc).isoformat(),
        "runtime_s": time.perf_counter() - t0,
    }
    report["exit_code"] = code
    with open(out / f"{command}.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
    return code, report


def build_parser():
    p = argparse.ArgumentParser(prog="renormlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="YAML scenario file")
    p.add_argument("--out", default=os.environ.get("RENORMLAB_OUT", "renormlab-out"), help="report directory")
    p.add_argument("--seed", type=int, default=None, help="override mc.seed")
    p.add_argument("--threads", type=int, default=int(os.environ.get("RENORMLAB_THREADS", "1")))
    p.add_argument("--dump-form", action="store_true", help="write the assembled form to form.json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        scenario = parse_scenario(args.scenario)
    except ConfigError as exc:
        print(f"renormlab: {exc}", file=sys.stderr)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{args.command}.json", "w") as fh:
            json.dump({"command": args.command, "passed": False, "exit_code": EXIT_CONFIG,
                       "error": {"type": "ConfigError", "message": str(exc)}}, fh, indent=2)
        return EXIT_CONFIG
    code, report = run(scenario, args.command, out, seed=args.seed, threads=args.threads, dump_form=args.dump_form)
    for c in report.get("checks", []):
        print(f"[{c['status']:>4}] {c['name']}")
    if "error" in report:
        print(f"renormlab: {report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
