"""Scenario files: YAML documents describing a form, data and the checks to run.

Schema (all sections optional except ``form``)::

    form:        {kind: local, dim: 1|2, n_per_side: int, extent: [lo, hi], conductance: float}
               | {kind: fractional, n: int, alpha: float, c: float, extent: [lo, hi]}
    measure:     {atoms: [{position: [..], mass: float, tag: diffuse|concentrated}],
                  density: {name: constant|bump|sine, scale: float, center: [..], width: float}}
    k_schedule:  [k1, k2, ...]                      strictly increasing, positive
    dictionary:  {coarse: int, radii: [r, ...]}
    refinement:  {setting: local2d|fractional1d|local1d, mesh_sizes: [..], theta: float,
                  alpha: float, extent: [lo, hi]}
    mc:          {n_paths: int, seed: int, start: int | [x, y], max_time: float}
    continuum:   {level_pairs: [[b, c], ..], levels: [..], occupation_support: [lo, hi]}
    semilinear:  {nonlinearity: zero|linear|cubic, coefficient: float}
    aab:         {k_schedule: [..]}
    capacity:    {nodes: [..]}
    tolerances:  {solver: 1e-10, identity: 1e-9, quadrature: 1e-6, mc_sigmas: 3}
    commands:    [solve, verify, ...]
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .lattice import DiscreteForm, build_fractional_form, build_local_form
from .measures import CONCENTRATED, DIFFUSE, SignedMeasure

COMMANDS = ("solve", "verify", "structure", "refine", "reconstruct", "occupation", "mc", "semilinear", "aab", "capacity")

DEFAULT_TOLERANCES = {"solver": 1e-10, "identity": 1e-9, "quadrature": 1e-6, "mc_sigmas": 3.0}

_SECTION_KEYS = {
    "form": None,  # depends on kind
    "measure": {"atoms", "density"},
    "k_schedule": None,
    "dictionary": {"coarse", "radii"},
    "refinement": {"setting", "mesh_sizes", "theta", "alpha", "c", "extent"},
    "mc": {"n_paths", "seed", "start", "max_time", "trace"},
    "continuum": {"level_pairs", "levels", "occupation_support"},
    "semilinear": {"nonlinearity", "coefficient"},
    "aab": {"k_schedule"},
    "capacity": {"nodes"},
    "tolerances": set(DEFAULT_TOLERANCES),
    "commands": None,
}
_FORM_KEYS = {
    "local": {"kind", "dim", "n_per_side", "extent", "conductance"},
    "fractional": {"kind", "n", "alpha", "c", "extent"},
}
_ATOM_KEYS = {"position", "mass", "tag"}
_DENSITY_KEYS = {"name", "scale", "center", "width"}
NONLINEARITIES = ("zero", "linear", "cubic")


@dataclass
class Scenario:
    form: dict
    measure: dict = field(default_factory=lambda: {"atoms": [], "density": None})
    k_schedule: list = field(default_factory=list)
    dictionary: dict = field(default_factory=lambda: {"coarse": 5, "radii": [1.0, 0.25]})
    refinement: dict | None = None
    mc: dict = field(default_factory=lambda: {"n_paths": 10_000, "seed": 20240601, "start": 0, "max_time": 1e6})
    continuum: dict = field(default_factory=lambda: {"level_pairs": [[1.0, 2.0]], "levels": [0.5, 1.0, 5.0], "occupation_support": [1.0, 2.0]})
    semilinear: dict = field(default_factory=lambda: {"nonlinearity": "linear", "coefficient": 1.0})
    aab: dict = field(default_factory=dict)
    capacity: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    commands: list = field(default_factory=list)
    source: dict = field(default_factory=dict)
    path: str | None = None

    def build_form(self) -> DiscreteForm:
        spec = dict(self.form)
        kind = spec.pop("kind")
        if kind == "local":
            return build_local_form(
                int(spec["dim"]), int(spec["n_per_side"]), spec.get("extent", (0.0, 1.0)), spec.get("conductance", 1.0)
            )
        return build_fractional_form(int(spec["n"]), float(spec["alpha"]), float(spec.get("c", 1.0)), spec.get("extent", (0.0, 1.0)))

    def build_measure(self, form: DiscreteForm) -> SignedMeasure:
        n = form.n
        masses = np.zeros(n)
        tags = np.full(n, DIFFUSE, dtype=np.int8)
        dens = self.measure.get("density")
        if dens:
            masses += density_values(dens, form.space.positions) * form.m
        placed = {}
        for atom in self.measure.get("atoms", []):
            node = form.space.nearest_node(atom["position"])
            tag = CONCENTRATED if atom["tag"] == "concentrated" else DIFFUSE
            if placed.setdefault(node, tag) != tag:
                raise ConfigError(f"atoms with different tags land on node {node}")
            if tag == CONCENTRATED and tags[node] != CONCENTRATED:
                # a concentrated atom owns its node: drop the density there
                masses[node] = 0.0
            tags[node] = tag
            masses[node] += float(atom["mass"])
        return SignedMeasure(masses, tags)

    def atom_nodes(self, form, tag="concentrated"):
        return [form.space.nearest_node(a["position"]) for a in self.measure.get("atoms", []) if a["tag"] == tag]

    def start_node(self, form) -> int:
        start = self.mc.get("start", 0)
        if isinstance(start, (list, tuple)):
            return form.space.nearest_node(start)
        return int(start)

    def nonlinearity(self):
        kind = self.semilinear.get("nonlinearity", "linear")
        a = float(self.semilinear.get("coefficient", 1.0))
        if kind == "zero":
            return lambda x, u: np.zeros_like(u)
        if kind == "linear":
            return lambda x, u: -a * u
        return lambda x, u: -a * u**3


def density_values(spec: dict, positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    scale = float(spec.get("scale", 1.0))
    name = spec["name"]
    if name == "constant":
        return np.full(len(pos), scale)
    if name == "bump":
        center = np.asarray(spec.get("center", [0.5] * pos.shape[1]), dtype=float)
        width = float(spec.get("width", 0.1))
        return scale * np.exp(-(((pos - center) / width) ** 2).sum(axis=1))
    if name == "sine":
        return scale * np.sin(np.pi * pos).prod(axis=1)
    raise ConfigError(f"unknown density {name!r}")


def _increasing(values):
    return all(b > a for a, b in zip(values, values[1:]))


def validate(raw: Any) -> Scenario:
    """Check a parsed document and fill defaults. Collects every violation."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping at top level")
    for key in raw:
        if key not in _SECTION_KEYS:
            errors.append(f"{key}: unknown key")
    sc = Scenario(form={}, source=copy.deepcopy(raw))

    def section(name, keys):
        value = raw.get(name)
        if value is None:
            return None
        if not isinstance(value, dict):
            errors.append(f"{name}: must be a mapping")
            return None
        for k in value:
            if k not in keys:
                errors.append(f"{name}.{k}: unknown key")
        return value

    form = raw.get("form")
    if not isinstance(form, dict):
        errors.append("form: required mapping")
    else:
        kind = form.get("kind")
        if kind not in _FORM_KEYS:
            errors.append(f"form.kind: must be one of {sorted(_FORM_KEYS)}, got {kind!r}")
        else:
            for k in form:
                if k not in _FORM_KEYS[kind]:
                    errors.append(f"form.{k}: unknown key for kind {kind}")
            required = ("dim", "n_per_side") if kind == "local" else ("n", "alpha")
            for k in required:
                if k not in form:
                    errors.append(f"form.{k}: required for kind {kind}")
            if kind == "fractional" and "alpha" in form and not 0 < float(form["alpha"]) < 1:
                errors.append("form.alpha: must lie in (0, 1)")
            if kind == "local" and "dim" in form and form["dim"] not in (1, 2):
                errors.append("form.dim: must be 1 or 2")
        sc.form = dict(form)

    measure = section("measure", _SECTION_KEYS["measure"])
    if measure is not None:
        atoms = measure.get("atoms") or []
        for i, atom in enumerate(atoms):
            if not isinstance(atom, dict):
                errors.append(f"measure.atoms[{i}]: must be a mapping")
                continue
            for k in atom:
                if k not in _ATOM_KEYS:
                    errors.append(f"measure.atoms[{i}].{k}: unknown key")
            if "tag" not in atom:
                errors.append(f"measure.atoms[{i}]: untagged atom")
            elif atom["tag"] not in ("diffuse", "concentrated"):
                errors.append(f"measure.atoms[{i}].tag: must be diffuse or concentrated")
            for k in ("position", "mass"):
                if k not in atom:
                    errors.append(f"measure.atoms[{i}].{k}: required")
        dens = measure.get("density")
        if dens is not None:
            if not isinstance(dens, dict) or "name" not in dens:
                errors.append("measure.density: needs a name")
            else:
                for k in dens:
                    if k not in _DENSITY_KEYS:
                        errors.append(f"measure.density.{k}: unknown key")
                if dens["name"] not in ("constant", "bump", "sine"):
                    errors.append(f"measure.density.name: unknown density {dens['name']!r}")
        sc.measure = {"atoms": list(atoms), "density": dens}

    if "k_schedule" in raw:
        ks = raw["k_schedule"]
        if not isinstance(ks, list) or not all(isinstance(k, (int, float)) for k in ks):
            errors.append("k_schedule: must be a list of numbers")
        elif not _increasing(ks) or (ks and ks[0] <= 0):
            errors.append("k_schedule: must be positive and strictly increasing")
        else:
            sc.k_schedule = [float(k) for k in ks]

    for name in ("dictionary", "mc", "continuum", "semilinear", "aab", "capacity", "tolerances"):
        value = section(name, _SECTION_KEYS[name])
        if value is not None:
            getattr(sc, name).update(value)
    ref = section("refinement", _SECTION_KEYS["refinement"])
    if ref is not None:
        sc.refinement = {"theta": 0.5, "alpha": 0.5, "c": 1.0, "extent": [0.0, 1.0], **ref}
        if ref.get("setting") not in ("local2d", "fractional1d", "local1d"):
            errors.append("refinement.setting: must be local2d, fractional1d or local1d")
        sizes = ref.get("mesh_sizes")
        if not isinstance(sizes, list) or not sizes or not _increasing(sizes):
            errors.append("refinement.mesh_sizes: must be a nonempty strictly increasing list")

    if "n_paths" in sc.mc and int(sc.mc["n_paths"]) < 1:
        errors.append("mc.n_paths: must be at least 1")
    if sc.semilinear.get("nonlinearity") not in NONLINEARITIES:
        errors.append(f"semilinear.nonlinearity: must be one of {NONLINEARITIES}")
    aab_ks = sc.aab.get("k_schedule")
    if aab_ks is not None and not _increasing(aab_ks):
        errors.append("aab.k_schedule: must be strictly increasing")
    for pair in sc.continuum.get("level_pairs", []):
        if len(pair) != 2 or not 0 < pair[0] < pair[1]:
            errors.append(f"continuum.level_pairs: need 0 < b < c, got {pair}")
    for k, v in sc.tolerances.items():
        if not isinstance(v, (int, float)) or v <= 0:
            errors.append(f"tolerances.{k}: must be a positive number")

    cmds = raw.get("commands", [])
    if not isinstance(cmds, list):
        errors.append("commands: must be a list")
    else:
        for c in cmds:
            if c not in COMMANDS:
                errors.append(f"commands: unknown command {c!r}")
        sc.commands = list(cmds)

    if errors:
        raise ConfigError("invalid scenario:\n  " + "\n  ".join(errors))
    return sc


def parse_scenario(path) -> Scenario:
    """Read and validate a YAML scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"parse error in {path}{where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from exc
    sc = validate(raw)
    sc.path = str(path)
    return sc
