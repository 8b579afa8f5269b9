"""Set descriptions that can be evaluated on sample points or exactly on rational grids.

Every predicate answers membership for an (n, d) float array via ``evaluate``.
Exact membership for points ``num / den`` (integer numerators, one common
denominator) goes through ``evaluate_exact``; primitives that involve
irrational quantities (caps, sectors) have no exact form and raise.

Images under group elements are predicates too: ``Image(P, g)`` contains x
iff g^-1.x is in P.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np

from .group import GroupElement, TORUS, inverse, apply_many

SCHEMA_PREDICATE = "equidecomp.predicate/v1"
BOUNDARY_TOL = 1e-9


class PredicateError(ValueError):
    pass


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _as_obj(num) -> np.ndarray:
    return np.asarray(num, dtype=object)


def _enc(x):
    if isinstance(x, (int, Fraction)):
        return str(x)
    return float(x)


def _dec(x):
    if isinstance(x, str):
        f = Fraction(x)
        return f.numerator if f.denominator == 1 else f
    return x


def _exact_ok(*vals) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in vals)


class Predicate:
    """Base class; subclasses implement ``evaluate`` and optionally ``evaluate_exact``."""

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate_exact(self, num: np.ndarray, den: int, modulus: int | None = None) -> np.ndarray:
        raise PredicateError(f"{type(self).__name__} has no exact evaluation")

    def to_json(self) -> dict:
        raise NotImplementedError

    def size(self) -> int:
        return 1

    # boolean sugar
    def __or__(self, other):
        return Union((self, other))

    def __and__(self, other):
        return Intersection((self, other))

    def __invert__(self):
        return Complement(self)

    def __sub__(self, other):
        return Difference(self, other)

    def image(self, g: GroupElement) -> "Predicate":
        return Image(self, g)

    def dumps(self) -> str:
        return json.dumps({"schema": SCHEMA_PREDICATE, "tree": self.to_json()})


@dataclass(frozen=True)
class All(Predicate):
    def evaluate(self, points):
        return np.ones(len(points), bool)

    def evaluate_exact(self, num, den, modulus=None):
        return np.ones(len(num), bool)

    def to_json(self):
        return {"op": "all"}


@dataclass(frozen=True)
class Nothing(Predicate):
    def evaluate(self, points):
        return np.zeros(len(points), bool)

    def evaluate_exact(self, num, den, modulus=None):
        return np.zeros(len(num), bool)

    def to_json(self):
        return {"op": "none"}


def _sq_dist_exact(num, den, center):
    # returns (integer squared distance numerator, its denominator)
    m = lcm(*[_frac(c).denominator for c in center]) if center else 1
    num = _as_obj(num)
    tot = 0
    for k, c in enumerate(center):
        ck = _frac(c) * m * den
        tot = tot + (num[:, k] * m - int(ck)) ** 2
    return tot, (m * den) ** 2


@dataclass(frozen=True)
class Ball(Predicate):
    """Closed ball ‖x − center‖ ≤ radius."""
    center: tuple
    radius: object

    def evaluate(self, points):
        d = np.linalg.norm(np.asarray(points, float) - np.array(self.center, float), axis=1)
        return d <= float(self.radius)

    def evaluate_exact(self, num, den, modulus=None):
        if not _exact_ok(*self.center, self.radius):
            raise PredicateError("ball needs rational center and radius for exact evaluation")
        tot, d2 = _sq_dist_exact(num, den, self.center)
        r2 = _frac(self.radius) ** 2
        return np.array([Fraction(int(t), d2) <= r2 for t in tot], bool)

    def to_json(self):
        return {"op": "ball", "center": [_enc(c) for c in self.center], "radius": _enc(self.radius)}


@dataclass(frozen=True)
class Cap(Predicate):
    """Points whose direction lies within ``angle`` of ``axis``; cap(axis, π/2) is a hemisphere."""
    axis: tuple
    angle: float

    def evaluate(self, points):
        p = np.asarray(points, float)
        a = np.array(self.axis, float)
        a = a / np.linalg.norm(a)
        r = np.linalg.norm(p, axis=1)
        cosang = (p @ a) / np.where(r > 0, r, 1.0)
        return cosang >= math.cos(self.angle) - BOUNDARY_TOL * (self.angle >= math.pi)

    def to_json(self):
        return {"op": "cap", "axis": [float(x) for x in self.axis], "angle": float(self.angle)}


@dataclass(frozen=True)
class Shell(Predicate):
    """Spherical shell r_min ≤ ‖x‖ < r_max (centered at the origin)."""
    r_min: object
    r_max: object

    def evaluate(self, points):
        r = np.linalg.norm(np.asarray(points, float), axis=1)
        return (r >= float(self.r_min)) & (r < float(self.r_max))

    def evaluate_exact(self, num, den, modulus=None):
        if not _exact_ok(self.r_min, self.r_max):
            raise PredicateError("shell radii must be rational for exact evaluation")
        d = len(num[0]) if len(num) else 0
        tot, d2 = _sq_dist_exact(num, den, (0,) * d)
        lo, hi = _frac(self.r_min) ** 2, _frac(self.r_max) ** 2
        return np.array([lo <= Fraction(int(t), d2) < hi for t in tot], bool)

    def to_json(self):
        return {"op": "shell", "r_min": _enc(self.r_min), "r_max": _enc(self.r_max)}


@dataclass(frozen=True)
class Box(Predicate):
    """Half-open box lo ≤ x < hi."""
    lo: tuple
    hi: tuple

    def evaluate(self, points):
        p = np.asarray(points, float)
        return np.all((p >= np.array(self.lo, float)) & (p < np.array(self.hi, float)), axis=1)

    def evaluate_exact(self, num, den, modulus=None):
        if not _exact_ok(*self.lo, *self.hi):
            raise PredicateError("box corners must be rational")
        num = _as_obj(num)
        out = np.ones(len(num), bool)
        for k, (a, b) in enumerate(zip(self.lo, self.hi)):
            a, b = _frac(a), _frac(b)
            col = num[:, k]
            # a <= col/den  <=>  col * a.den >= a.num * den
            out &= (col * a.denominator >= a.numerator * den).astype(bool)
            out &= (col * b.denominator < b.numerator * den).astype(bool)
        return out

    def to_json(self):
        return {"op": "box", "lo": [_enc(x) for x in self.lo], "hi": [_enc(x) for x in self.hi]}


@dataclass(frozen=True)
class HalfSpace(Predicate):
    """Closed half-space normal · x ≥ offset."""
    normal: tuple
    offset: object = 0

    def evaluate(self, points):
        return np.asarray(points, float) @ np.array(self.normal, float) >= float(self.offset)

    def evaluate_exact(self, num, den, modulus=None):
        if not _exact_ok(*self.normal, self.offset):
            raise PredicateError("half-space needs rational coefficients")
        m = lcm(*[_frac(c).denominator for c in (*self.normal, self.offset)])
        num = _as_obj(num)
        lhs = 0
        for k, c in enumerate(self.normal):
            lhs = lhs + num[:, k] * int(_frac(c) * m)
        return np.asarray(lhs >= int(_frac(self.offset) * m) * den, bool)

    def to_json(self):
        return {"op": "half-space", "normal": [_enc(x) for x in self.normal], "offset": _enc(self.offset)}


@dataclass(frozen=True)
class Sector(Predicate):
    """Polar angle of the first two coordinates in [alpha, beta) (radians, mod 2π)."""
    alpha: float
    beta: float

    def evaluate(self, points):
        p = np.asarray(points, float)
        ang = np.arctan2(p[:, 1], p[:, 0]) % (2 * math.pi)
        a, b = self.alpha % (2 * math.pi), self.beta % (2 * math.pi)
        if self.beta - self.alpha >= 2 * math.pi:
            return np.ones(len(p), bool)
        if a <= b:
            return (ang >= a) & (ang < b)
        return (ang >= a) | (ang < b)

    def to_json(self):
        return {"op": "sector", "alpha": float(self.alpha), "beta": float(self.beta)}


@dataclass(frozen=True)
class Union(Predicate):
    children: tuple

    def evaluate(self, points):
        out = np.zeros(len(points), bool)
        for c in self.children:
            out |= c.evaluate(points)
        return out

    def evaluate_exact(self, num, den, modulus=None):
        out = np.zeros(len(num), bool)
        for c in self.children:
            out |= c.evaluate_exact(num, den, modulus)
        return out

    def size(self):
        return 1 + sum(c.size() for c in self.children)

    def to_json(self):
        return {"op": "union", "children": [c.to_json() for c in self.children]}


@dataclass(frozen=True)
class Intersection(Predicate):
    children: tuple

    def evaluate(self, points):
        out = np.ones(len(points), bool)
        for c in self.children:
            out &= c.evaluate(points)
        return out

    def evaluate_exact(self, num, den, modulus=None):
        out = np.ones(len(num), bool)
        for c in self.children:
            out &= c.evaluate_exact(num, den, modulus)
        return out

    def size(self):
        return 1 + sum(c.size() for c in self.children)

    def to_json(self):
        return {"op": "intersection", "children": [c.to_json() for c in self.children]}


@dataclass(frozen=True)
class Complement(Predicate):
    child: Predicate

    def evaluate(self, points):
        return ~self.child.evaluate(points)

    def evaluate_exact(self, num, den, modulus=None):
        return ~self.child.evaluate_exact(num, den, modulus)

    def size(self):
        return 1 + self.child.size()

    def to_json(self):
        return {"op": "complement", "child": self.child.to_json()}


@dataclass(frozen=True)
class Difference(Predicate):
    left: Predicate
    right: Predicate

    def evaluate(self, points):
        return self.left.evaluate(points) & ~self.right.evaluate(points)

    def evaluate_exact(self, num, den, modulus=None):
        return self.left.evaluate_exact(num, den, modulus) & ~self.right.evaluate_exact(num, den, modulus)

    def size(self):
        return 1 + self.left.size() + self.right.size()

    def to_json(self):
        return {"op": "difference", "left": self.left.to_json(), "right": self.right.to_json()}


def _transform_exact(g: GroupElement, num, den: int, modulus: int | None):
    """Exact images of the points num/den under g, as (num', den')."""
    if g.modulus is not None:
        if den != g.modulus:
            raise PredicateError("modular torus element applied off its grid")
        q = g.modulus
        L = np.array(g.linear, dtype=object)
        t = np.array([int(Fraction(x) * q) for x in g.translation], dtype=object)
        return (_as_obj(num).dot(L.T) + t) % q, q
    ents = [_frac(x) for row in g.linear for x in row] + [_frac(x) for x in g.translation]
    m = lcm(*[e.denominator for e in ents])
    L = np.array([[int(_frac(x) * m) for x in row] for row in g.linear], dtype=object)
    t = np.array([int(_frac(x) * m) * den for x in g.translation], dtype=object)
    new = _as_obj(num).dot(L.T) + t
    new_den = m * den
    if g.kind == TORUS:
        new = new % new_den
    return new, new_den


@dataclass(frozen=True, eq=False)
class Image(Predicate):
    """The set g.P, i.e. {x : g^-1.x ∈ P}."""
    child: Predicate
    element: GroupElement

    def evaluate(self, points):
        return self.child.evaluate(apply_many(inverse(self.element), points))

    def evaluate_exact(self, num, den, modulus=None):
        if not self.element.exact:
            raise PredicateError("image under a float element has no exact evaluation")
        new, new_den = _transform_exact(inverse(self.element), num, den, modulus)
        return self.child.evaluate_exact(new, new_den, modulus)

    def size(self):
        return 1 + self.child.size()

    def to_json(self):
        g = self.element
        return {
            "op": "image",
            "child": self.child.to_json(),
            "element": {
                "kind": g.kind,
                "modulus": g.modulus,
                "linear": [[_enc(x) for x in row] for row in g.linear],
                "translation": [_enc(x) for x in g.translation],
            },
        }


def fat_cantor_shells(r_min: float, r_max: float, depth: int, keep: float = 0.5) -> Predicate:
    """Union of 2^depth shells obtained by repeatedly removing middle intervals.

    The removed fraction at level k is keep·3^-k of each interval, so the
    limit set is nowhere dense yet has positive radial measure.
    """
    intervals = [(float(r_min), float(r_max))]
    for k in range(1, depth + 1):
        nxt = []
        for a, b in intervals:
            gap = (b - a) * keep * 3.0 ** (-k)
            mid = (a + b) / 2
            nxt += [(a, mid - gap / 2), (mid + gap / 2, b)]
        intervals = nxt
    return Union(tuple(Shell(a, b) for a, b in intervals))


_SIMPLE = {
    "all": lambda d: All(),
    "none": lambda d: Nothing(),
    "ball": lambda d: Ball(tuple(_dec(x) for x in d["center"]), _dec(d["radius"])),
    "cap": lambda d: Cap(tuple(d["axis"]), d["angle"]),
    "shell": lambda d: Shell(_dec(d["r_min"]), _dec(d["r_max"])),
    "box": lambda d: Box(tuple(_dec(x) for x in d["lo"]), tuple(_dec(x) for x in d["hi"])),
    "half-space": lambda d: HalfSpace(tuple(_dec(x) for x in d["normal"]), _dec(d["offset"])),
    "sector": lambda d: Sector(d["alpha"], d["beta"]),
}


def from_json(tree: dict) -> Predicate:
    if "schema" in tree:
        if tree["schema"] != SCHEMA_PREDICATE:
            raise PredicateError(f"unexpected schema {tree['schema']!r}")
        tree = tree["tree"]
    op = tree["op"]
    if op in _SIMPLE:
        return _SIMPLE[op](tree)
    if op == "union":
        return Union(tuple(from_json(c) for c in tree["children"]))
    if op == "intersection":
        return Intersection(tuple(from_json(c) for c in tree["children"]))
    if op == "complement":
        return Complement(from_json(tree["child"]))
    if op == "difference":
        return Difference(from_json(tree["left"]), from_json(tree["right"]))
    if op == "image":
        e = tree["element"]
        g = GroupElement(tuple(tuple(_dec(x) for x in row) for row in e["linear"]),
                         tuple(_dec(x) for x in e["translation"]), e["kind"], e.get("modulus"))
        return Image(from_json(tree["child"]), g)
    raise PredicateError(f"unknown predicate op {op!r}")


def loads(text: str) -> Predicate:
    return from_json(json.loads(text))
