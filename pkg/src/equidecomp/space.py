"""Discrete models of the measure spaces: exact grids and Monte Carlo clouds.

Exact models (the rational torus and the planar grid window) carry integer
coordinates over a common denominator and exact rational point masses, so
measures come out as ``Fraction``.  Clouds are uniform samples with equal
weights; their measures come with a binomial confidence radius.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .group import (TORUS, GeneratorSet, GroupElement, LazyElements, ModularTorusArray, apply_many,
                    compose, inverse, is_identity)
from .predicates import All, Image, Predicate

RHO = 1.0 + math.sqrt(2.0) / 2.0
Z99 = 2.5758293035489004  # two-sided 99% normal quantile
SCHEMA_CSV = "equidecomp.model-csv/v1"


class ModelError(ValueError):
    pass


@dataclass(eq=False)
class SampledSet:
    """Membership mask over the points of a model, with an optional describing predicate."""
    model: "SpaceModel"
    mask: np.ndarray
    source: Predicate | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, bool)
        if self.mask.shape != (self.model.n,):
            raise ModelError("mask length does not match the model")

    def __len__(self):
        return int(self.mask.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def _check(self, other):
        if other.model is not self.model:
            raise ModelError("sets live on different models")

    def __or__(self, other):
        self._check(other)
        src = self.source | other.source if self.source and other.source else None
        return SampledSet(self.model, self.mask | other.mask, src)

    def __and__(self, other):
        self._check(other)
        src = self.source & other.source if self.source and other.source else None
        return SampledSet(self.model, self.mask & other.mask, src)

    def __sub__(self, other):
        self._check(other)
        src = self.source - other.source if self.source and other.source else None
        return SampledSet(self.model, self.mask & ~other.mask, src)

    def complement(self):
        return SampledSet(self.model, ~self.mask, ~self.source if self.source else None)

    def isdisjoint(self, other) -> bool:
        self._check(other)
        return not np.any(self.mask & other.mask)

    def __eq__(self, other):
        return isinstance(other, SampledSet) and other.model is self.model and \
            np.array_equal(self.mask, other.mask)

    def measure(self):
        return self.model.measure(self)


class SpaceModel:
    kind = "abstract"
    exact = False
    n: int
    points: np.ndarray
    total_mass: object
    rng_seed: int | None = None

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, float(self.total_mass) / self.n)

    @property
    def point_mass(self):
        return self.total_mass / self.n

    def full(self) -> SampledSet:
        return SampledSet(self, np.ones(self.n, bool), All())

    def empty(self) -> SampledSet:
        return SampledSet(self, np.zeros(self.n, bool))

    def from_mask(self, mask) -> SampledSet:
        return SampledSet(self, mask)

    def from_indices(self, idx) -> SampledSet:
        m = np.zeros(self.n, bool)
        m[np.asarray(idx, np.int64)] = True
        return SampledSet(self, m)

    def contains(self, P: Predicate) -> SampledSet:
        return SampledSet(self, P.evaluate(self.points), P)

    def _as_set(self, X) -> SampledSet:
        if isinstance(X, SampledSet):
            if X.model is not self:
                raise ModelError("set belongs to another model")
            return X
        return self.contains(X)

    def measure(self, X):
        """(value, confidence radius) of a predicate or sampled set."""
        k = int(self._as_set(X).mask.sum())
        return self.mass_of_count(k)

    def mass_of_count(self, k: int):
        p = k / self.n
        val = float(self.total_mass) * p
        rad = Z99 * float(self.total_mass) * math.sqrt(p * (1 - p) / self.n)
        return val, rad

    def action(self, g: GroupElement) -> np.ndarray:
        """Index of g.x for each point x (-1 when g.x is not a model point)."""
        raise ModelError(f"{self.kind} points are not permuted by group elements")

    def image(self, X, g: GroupElement) -> SampledSet:
        X = self._as_set(X)
        if self.exact:
            idx = self.action(g)[X.mask]
            if np.any(idx < 0):
                raise ModelError("image leaves the model")
            m = np.zeros(self.n, bool)
            m[idx] = True
            return SampledSet(self, m, Image(X.source, g) if X.source else None)
        if X.source is None:
            raise ModelError("cloud images need a predicate-backed set")
        P = Image(X.source, g)
        return SampledSet(self, P.evaluate(self.points), P)

    def saturate_set(self, S: GeneratorSet, U, C=None) -> SampledSet:
        """The set S.U ∩ C on the model."""
        U = self._as_set(U)
        out = np.zeros(self.n, bool)
        for g in S.elements:
            out |= self.image(U, g).mask
        if C is not None:
            out &= self._as_set(C).mask
        return SampledSet(self, out)

    def saturate(self, S: GeneratorSet, U, C=None):
        """Measure of {x ∈ C : x ∈ γ.U for some γ ∈ S}."""
        return self.measure(self.saturate_set(S, U, C))

    def to_csv(self, fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"# schema={SCHEMA_CSV}", f"kind={self.kind}", f"n={self.n}"])
        d = self.points.shape[1]
        w.writerow([f"x{k}" for k in range(d)] + ["weight"])
        wts = self.weights
        for p, wt in zip(self.points, wts):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])
        return buf.getvalue() if fh is None else ""


class ExactModel(SpaceModel):
    """Finite model with integer coordinates over a common denominator."""
    exact = True
    coords: np.ndarray  # (n, d) int
    den: int

    @property
    def point_mass(self) -> Fraction:
        return Fraction(self.total_mass) / self.n

    def measure(self, X):
        k = int(self._as_set(X).mask.sum())
        return self.point_mass * k, 0

    def contains(self, P: Predicate) -> SampledSet:
        return SampledSet(self, P.evaluate_exact(self.coords, self.den, self.modulus), P)

    modulus = None


class RationalTorus(ExactModel):
    """The grid {(a/q, b/q)} of the 2-torus; point index a*q + b, mass 1/q^2 each."""
    kind = "rational-torus"

    def __init__(self, q: int):
        if q < 1:
            raise ModelError("q must be >= 1")
        self.q = self.den = self.modulus = q
        a, b = np.divmod(np.arange(q * q, dtype=np.int64), q)
        self.coords = np.stack([a, b], axis=1)
        self.points = self.coords / q
        self.n = q * q
        self.total_mass = Fraction(1)
        self._cache = {}

    def index(self, coords) -> np.ndarray:
        c = np.asarray(coords, np.int64) % self.q
        return c[..., 0] * self.q + c[..., 1]

    def _modular(self, g: GroupElement) -> GroupElement:
        if g.kind != TORUS or not g.exact:
            raise ModelError("torus model needs exact torus automorphisms")
        if g.modulus == self.q:
            return g
        if g.modulus is not None:
            raise ModelError(f"element reduced mod {g.modulus}, model has q={self.q}")
        return GroupElement(g.linear, g.translation, TORUS, self.q)

    def action(self, g: GroupElement) -> np.ndarray:
        gm = self._modular(g)
        key = (gm.linear, gm.translation)
        hit = self._cache.get(key)
        if hit is None:
            arr = ModularTorusArray.from_elements([gm], self.q)
            hit = self.index(arr.images(self.coords)[0])
            if len(self._cache) < 4096:
                self._cache[key] = hit
        return hit

    def actions(self, S: GeneratorSet | Sequence[GroupElement]) -> np.ndarray:
        """Stacked index arrays, shape (|S|, n)."""
        els = S.elements if isinstance(S, GeneratorSet) else list(S)
        arr = ModularTorusArray.from_elements([self._modular(g) for g in els], self.q)
        return self.index(arr.images(self.coords))

    def saturate_set(self, S, U, C=None, chunk: int = 256) -> SampledSet:
        U = self._as_set(U)
        src = U.indices()
        out = np.zeros(self.n, bool)
        els = [self._modular(g) for g in S.elements]
        if src.size:
            arr = ModularTorusArray.from_elements(els, self.q) if els else None
            for s in range(0, len(els), chunk):
                sub = arr.take(slice(s, s + chunk))
                out[self.index(sub.images(self.coords[src])).ravel()] = True
        if C is not None:
            out &= self._as_set(C).mask
        return SampledSet(self, out)

    def closure_check(self, g: GroupElement) -> bool:
        """True when g permutes the grid."""
        idx = self.action(g)
        return bool(np.array_equal(np.sort(idx), np.arange(self.n)))


class PlaneGrid(ExactModel):
    """Window of the lattice (1/q)Z^2: points (i/q, j/q), lo ≤ (i, j) < hi.

    Each point stands for a cell of area 1/q^2.  Motions that carry a point
    off the lattice or out of the window give index -1.
    """
    kind = "plane-grid"

    def __init__(self, q: int, lo=(0, 0), hi=None):
        if q < 1:
            raise ModelError("q must be >= 1")
        hi = hi if hi is not None else (q, q)
        self.q = self.den = q
        self.lo, self.hi = tuple(lo), tuple(hi)
        xs = np.arange(lo[0], hi[0], dtype=np.int64)
        ys = np.arange(lo[1], hi[1], dtype=np.int64)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
        self.points = self.coords / q
        self.n = len(self.coords)
        self.total_mass = Fraction(self.n, q * q)
        self._width = hi[1] - lo[1]

    def index(self, coords) -> np.ndarray:
        c = np.asarray(coords, np.int64)
        inside = np.all((c >= self.lo) & (c < self.hi), axis=-1)
        idx = (c[..., 0] - self.lo[0]) * self._width + (c[..., 1] - self.lo[1])
        return np.where(inside, idx, -1)

    def action(self, g: GroupElement) -> np.ndarray:
        if not g.exact or g.dim != 2:
            raise ModelError("plane grid needs exact planar motions")
        ents = [Fraction(x) for row in g.linear for x in row] + [Fraction(x) for x in g.translation]
        m = math.lcm(*[e.denominator for e in ents])
        L = np.array([[int(Fraction(x) * m) for x in row] for row in g.linear], np.int64)
        t = np.array([int(Fraction(x) * m * self.q) for x in g.translation], np.int64)
        img = self.coords @ L.T + t
        on_lattice = np.all(img % m == 0, axis=1)
        idx = self.index(img // m)
        return np.where(on_lattice, idx, -1)


class DoubledModel(ExactModel):
    """Two copies of an exact base model; point i of copy c has index c*n + i."""
    kind = "doubled"

    def __init__(self, base: ExactModel):
        self.base = base
        self.n = 2 * base.n
        self.coords = np.concatenate([base.coords, base.coords])
        self.points = np.concatenate([base.points, base.points])
        self.den = base.den
        self.modulus = base.modulus
        self.total_mass = 2 * Fraction(base.total_mass)

    def copy_of(self, X: SampledSet, copy: int) -> SampledSet:
        m = np.zeros(self.n, bool)
        m[copy * self.base.n:(copy + 1) * self.base.n] = X.mask
        return SampledSet(self, m)

    def project(self, X: SampledSet) -> tuple[SampledSet, SampledSet]:
        b = self.base.n
        return SampledSet(self.base, X.mask[:b]), SampledSet(self.base, X.mask[b:])

    def contains(self, P):
        raise ModelError("use copy_of to place base sets in a copy")

    def action(self, g) -> np.ndarray:
        if not isinstance(g, LiftedElement):
            g = LiftedElement(g, 0)
        base_idx = self.base.action(g.base)
        b = self.base.n
        lo = np.where(base_idx >= 0, base_idx + g.flip * b, -1)
        hi = np.where(base_idx >= 0, base_idx + (1 - g.flip) * b, -1)
        return np.concatenate([lo, hi])

    def image(self, X, g) -> SampledSet:
        X = self._as_set(X)
        idx = self.action(g)[X.mask]
        if np.any(idx < 0):
            raise ModelError("image leaves the model")
        m = np.zeros(self.n, bool)
        m[idx] = True
        return SampledSet(self, m)


@dataclass(frozen=True, eq=False)
class LiftedElement:
    """Element (γ, t) of Γ × C2 acting on two copies; ``flip`` = 1 swaps the copies."""
    base: GroupElement
    flip: int = 1

    @property
    def kind(self):
        return self.base.kind

    @property
    def modulus(self):
        return self.base.modulus

    @property
    def exact(self):
        return self.base.exact

    def __eq__(self, other):
        return isinstance(other, LiftedElement) and self.flip == other.flip and self.base == other.base

    def __hash__(self):
        return hash((self.base, self.flip))

    def inverse(self):
        return LiftedElement(inverse(self.base), self.flip)

    def compose(self, other: "LiftedElement") -> "LiftedElement":
        return LiftedElement(compose(self.base, other.base), self.flip ^ other.flip)


class _Cloud(SpaceModel):
    def __init__(self, points: np.ndarray, seed: int, total_mass: float):
        self.points = points
        self.n = len(points)
        self.rng_seed = seed
        self.total_mass = float(total_mass)

    def saturate_set(self, S, U, C=None) -> SampledSet:
        U = self._as_set(U)
        if U.source is None:
            raise ModelError("cloud saturation needs a predicate-backed set")
        out = np.zeros(self.n, bool)
        for g in S.elements:
            if is_identity(g):
                out |= U.mask
            else:
                out |= U.source.evaluate(apply_many(inverse(g), self.points))
        if C is not None:
            out &= self._as_set(C).mask
        return SampledSet(self, out)


def _sphere_points(rng, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class SphereCloud(_Cloud):
    kind = "sphere-cloud"

    def __init__(self, n: int, seed: int = 0, total_mass: float = 1.0):
        super().__init__(_sphere_points(np.random.default_rng(seed), n), seed, total_mass)


class AnnulusCloud(_Cloud):
    """Uniform samples of the solid annulus 1 ≤ ‖y‖ ≤ ρ; default mass is its volume."""
    kind = "annulus-cloud"

    def __init__(self, n: int, seed: int = 0, total_mass: float | None = None, rho: float = RHO):
        rng = np.random.default_rng(seed)
        u = rng.random(n)
        r = (1.0 + u * (rho ** 3 - 1.0)) ** (1.0 / 3.0)
        pts = _sphere_points(rng, n) * r[:, None]
        self.rho = rho
        vol = 4.0 * math.pi * (rho ** 3 - 1.0) / 3.0
        super().__init__(pts, seed, vol if total_mass is None else total_mass)


class CubeCloud(_Cloud):
    """Uniform samples of an axis-aligned box; default mass is its volume."""
    kind = "cube-cloud"

    def __init__(self, n: int, seed: int = 0, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0),
                 total_mass: float | None = None):
        rng = np.random.default_rng(seed)
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        pts = lo + rng.random((n, len(lo))) * (hi - lo)
        self.lo, self.hi = lo, hi
        super().__init__(pts, seed, float(np.prod(hi - lo)) if total_mass is None else total_mass)


MODEL_KINDS = ("rational-torus", "plane-grid", "sphere-cloud", "annulus-cloud", "cube-cloud")


def build_model(kind: str, size: int, seed: int = 0, **kw) -> SpaceModel:
    """Deterministic model from (kind, size, seed); ``size`` is q for grids, N for clouds."""
    if not isinstance(size, (int, np.integer)) or size < 1:
        raise ModelError(f"invalid size {size!r}")
    if kind == "rational-torus":
        return RationalTorus(int(size))
    if kind == "plane-grid":
        return PlaneGrid(int(size), **kw)
    if kind == "sphere-cloud":
        return SphereCloud(int(size), seed, **kw)
    if kind == "annulus-cloud":
        return AnnulusCloud(int(size), seed, **kw)
    if kind == "cube-cloud":
        return CubeCloud(int(size), seed, **kw)
    raise ModelError(f"unknown model kind {kind!r}")


class LiftedElements(LazyElements):
    """All elements of a generator set lifted with the same copy bit, built on access."""

    def __init__(self, base_set: GeneratorSet, flip: int = 1):
        self.base_set = base_set
        self.flip = int(flip)

    def __len__(self):
        return len(self.base_set)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return LiftedElement(self.base_set.elements[i], self.flip)


def lift(S: GeneratorSet, flip: int = 1) -> GeneratorSet:
    """S' = {(γ, t) : γ ∈ S} with t the copy swap (flip=1) or trivial (flip=0); words kept."""
    return GeneratorSet(LiftedElements(S, flip), (), S.words if S.words is not None else
                        [S.word(i) for i in range(len(S))], S.name)
