"""Bounded signed measures on a finite state space and a narrow-topology surrogate."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "UNTAGGED",
    "DIFFUSE",
    "CONCENTRATED",
    "SignedMeasure",
    "AtomicMeasure",
    "TestDictionary",
    "default_dictionary",
    "decompose",
    "tv_norm",
    "bl_distance",
]

UNTAGGED, DIFFUSE, CONCENTRATED = 0, 1, 2


def as_points(positions) -> np.ndarray:
    """Coerce positions to shape ``(n, d)``; a flat array is read as ``n`` points in 1D."""
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None]
    return pts


_TAG_NAMES = {UNTAGGED: "untagged", DIFFUSE: "diffuse", CONCENTRATED: "concentrated"}
_TAG_CODES = {v: k for k, v in _TAG_NAMES.items()}


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """Node masses (already integrated against ``m``) with per-node tags.

    ``<mu, eta> = sum_x eta(x) masses(x)``. Only nonzero entries need a tag.
    """

    masses: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        masses = np.array(self.masses, dtype=float)
        tags = np.array(self.tags, dtype=np.int8)
        if masses.ndim != 1 or tags.shape != masses.shape:
            raise ValueError("masses and tags must be 1-d arrays of equal length")
        if not np.all(np.isfinite(masses)):
            raise ValueError("measure masses must be finite")
        masses.setflags(write=False)
        tags.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "tags", tags)

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n), np.full(n, DIFFUSE))

    @classmethod
    def diffuse(cls, masses):
        masses = np.asarray(masses, dtype=float)
        return cls(masses, np.full(masses.shape, DIFFUSE))

    @classmethod
    def from_density(cls, f, m):
        """Ingest a density against the reference weights: ``masses = f * m``."""
        return cls.diffuse(np.asarray(f, dtype=float) * np.asarray(m, dtype=float))

    @classmethod
    def dirac(cls, n, node, mass=1.0, tag=CONCENTRATED):
        masses = np.zeros(n)
        masses[node] = mass
        tags = np.full(n, DIFFUSE)
        tags[node] = tag
        return cls(masses, tags)

    @property
    def n(self):
        return self.masses.shape[0]

    def pair(self, eta) -> float:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != self.masses.shape:
            raise ValueError(f"test function has shape {eta.shape}, expected {self.masses.shape}")
        return float(np.dot(self.masses, eta))

    def total(self) -> float:
        return float(self.masses.sum())

    def jordan(self):
        """Nonnegative, mutually singular parts ``(mu+, mu-)`` with ``mu = mu+ - mu-``."""
        return (
            SignedMeasure(np.maximum(self.masses, 0.0), self.tags),
            SignedMeasure(np.maximum(-self.masses, 0.0), self.tags),
        )

    def variation(self):
        """The total variation measure ``|mu|``."""
        return SignedMeasure(np.abs(self.masses), self.tags)

    def restrict(self, mask):
        return SignedMeasure(np.where(mask, self.masses, 0.0), self.tags)

    def _combine(self, other, masses):
        tags = np.where(self.tags != UNTAGGED, self.tags, other.tags)
        clash = (self.tags != other.tags) & (self.tags != UNTAGGED) & (other.tags != UNTAGGED)
        clash &= (self.masses != 0) & (other.masses != 0)
        if np.any(clash):
            raise ValueError("cannot add measures with conflicting tags on a shared atom")
        return SignedMeasure(masses, tags)

    def __add__(self, other):
        return self._combine(other, self.masses + other.masses)

    def __sub__(self, other):
        return self._combine(other, self.masses - other.masses)

    def __neg__(self):
        return SignedMeasure(-self.masses, self.tags)

    def __mul__(self, scalar):
        return SignedMeasure(float(scalar) * self.masses, self.tags)

    __rmul__ = __mul__

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "mass", "tag"])
            for i, (mass, tag) in enumerate(zip(self.masses, self.tags)):
                writer.writerow([i, repr(float(mass)), _TAG_NAMES[int(tag)]])

    @classmethod
    def from_csv(cls, path, n=None):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        size = n if n is not None else 1 + max(int(r["node"]) for r in rows)
        masses = np.zeros(size)
        tags = np.full(size, UNTAGGED)
        for r in rows:
            i = int(r["node"])
            masses[i] = float(r["mass"])
            tags[i] = _TAG_CODES[r["tag"]]
        return cls(masses, tags)


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finitely many weighted atoms at arbitrary positions (off-lattice limits)."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pos = as_points(self.positions)
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if pos.shape[0] != masses.shape[0]:
            raise ValueError("one mass per atom position required")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", masses)

    def variation(self):
        return AtomicMeasure(self.positions, np.abs(self.masses))


def decompose(mu: SignedMeasure):
    """Split ``mu`` into its diffuse and concentrated parts by tag."""
    if np.any((mu.masses != 0) & (mu.tags == UNTAGGED)):
        raise ConfigError("untagged atom: every nonzero mass needs a diffuse/concentrated tag")
    conc = mu.tags == CONCENTRATED
    return mu.restrict(~conc), mu.restrict(conc)


def tv_norm(mu) -> float:
    return float(np.abs(mu.masses).sum())


@dataclass(frozen=True)
class DictionaryMember:
    name: str
    func: Callable[[np.ndarray], np.ndarray]
    sup_bound: float = 1.0
    lip_bound: float = 1.0


class TestDictionary:
    """Finite family of bounded Lipschitz test functions on ``R^d``.

    Every member is checked at construction against its declared sup-norm and
    Lipschitz bounds (both at most 1) on the supplied sample points.
    """

    __test__ = False  # not a pytest class

    def __init__(self, members: Iterable[DictionaryMember], sample_points, max_pairs=250):
        self.members = list(members)
        if not self.members:
            raise ConfigError("test dictionary is empty")
        pts = as_points(sample_points)
        if pts.shape[0] > max_pairs:
            pts = pts[np.linspace(0, len(pts) - 1, max_pairs).astype(int)]
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        off = dist > 0
        for mem in self.members:
            if mem.sup_bound > 1 or mem.lip_bound > 1:
                raise ConfigError(f"{mem.name}: declared bounds must not exceed 1")
            vals = np.asarray(mem.func(pts), dtype=float)
            if np.abs(vals).max() > mem.sup_bound + 1e-12:
                raise ConfigError(f"{mem.name}: sup-norm exceeds {mem.sup_bound}")
            slopes = np.abs(vals[:, None] - vals[None, :])[off] / dist[off]
            if slopes.size and slopes.max() > mem.lip_bound * (1 + 1e-9):
                raise ConfigError(f"{mem.name}: Lipschitz constant exceeds {mem.lip_bound}")

    def __len__(self):
        return len(self.members)

    def evaluate(self, points) -> np.ndarray:
        """Matrix of member values, shape ``(len(self), n_points)``."""
        pts = as_points(points)
        return np.stack([np.asarray(m.func(pts), dtype=float) for m in self.members])


def _tent(center, radius):
    center = np.asarray(center, dtype=float)

    def f(pts):
        return np.maximum(0.0, radius - np.linalg.norm(pts - center, axis=1))

    return f


def _coordinate_wave(axis, center):
    def f(pts):
        return np.sin(pts[:, axis] - center)

    return f


def default_dictionary(positions, coarse: int = 5, radii: Sequence[float] = (1.0, 0.25)):
    """Constant 1, one sine per coordinate and tents on a coarse sub-grid.

    Tents ``max(0, r - |x - c|)`` have slope 1 and height ``r <= 1``; centres
    form a ``coarse^d`` grid over the bounding box of ``positions``.
    """
    pts = as_points(positions)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mid = 0.5 * (lo + hi)
    members = [DictionaryMember("one", lambda p: np.ones(len(p)))]
    for axis in range(pts.shape[1]):
        members.append(DictionaryMember(f"sin{axis}", _coordinate_wave(axis, mid[axis])))
    axes = [np.linspace(a, b, coarse) for a, b in zip(lo, hi)]
    centers = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    for r in radii:
        for c in centers:
            label = ",".join(f"{v:.4g}" for v in c)
            members.append(DictionaryMember(f"tent(r={r},c=({label}))", _tent(c, r), sup_bound=min(1.0, r)))
    return TestDictionary(members, pts)


def _pairings(measure, dictionary, positions):
    if isinstance(measure, AtomicMeasure):
        return dictionary.evaluate(measure.positions) @ measure.masses
    if positions is None:
        raise ValueError("node positions are required to pair a SignedMeasure with the dictionary")
    return dictionary.evaluate(positions) @ measure.masses


def bl_distance(mu, nu, dictionary: TestDictionary, positions=None) -> float:
    """``max_eta |<mu - nu, eta>|`` over the dictionary.

    Either argument may be an :class:`AtomicMeasure`; :class:`SignedMeasure`
    arguments are located at ``positions``.
    """
    if dictionary is None or len(dictionary) == 0:
        raise ConfigError("test dictionary is empty")
    diff = _pairings(mu, dictionary, positions) - _pairings(nu, dictionary, positions)
    return float(np.abs(diff).max())
