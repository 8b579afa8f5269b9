"""Group elements acting on the model spaces, generator sets and word products.

Elements are affine maps ``x -> L x + t``.  Entries are either exact
(``int``/``Fraction``) or floats.  Torus automorphisms reduce translations
mod 1; when a ``modulus`` q is attached they act on the (1/q)-grid and their
matrices are reduced mod q as well (an element of SL(2, Z/q) ⋉ (Z/q)^2).
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

ROTATION = "rotation"
RIGID = "rigid-motion"
TORUS = "torus-automorphism"
AFFINE = "affine"
KINDS = (ROTATION, RIGID, TORUS, AFFINE)

FLOAT_TOL = 1e-9
ORTHO_TOL = 1e-12

SCHEMA_GENERATORS = "equidecomp.generators/v1"


class GroupError(ValueError):
    pass


class WordSetTooLarge(GroupError):
    """Raised when explicit enumeration of a word set would exceed the size cap."""


def _is_exact(v) -> bool:
    return isinstance(v, (int, Fraction)) and not isinstance(v, bool)


def _to_exact(v):
    if isinstance(v, Fraction):
        return v.numerator if v.denominator == 1 else v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, str):
        return _to_exact(Fraction(v))
    raise TypeError(f"not an exact number: {v!r}")


def _matmul(a, b):
    return tuple(
        tuple(sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0])))
        for i in range(len(a))
    )


def _matvec(a, v):
    return tuple(sum(a[i][k] * v[k] for k in range(len(v))) for i in range(len(a)))


def _det(m):
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    return sum(
        (-1) ** j * m[0][j] * _det(tuple(row[:j] + row[j + 1:] for row in m[1:]))
        for j in range(n)
    )


def _exact_inverse(m):
    # Gauss-Jordan over the rationals
    n = len(m)
    aug = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)]
           for i, row in enumerate(m)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise GroupError("singular linear part")
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [x / p for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return tuple(tuple(_to_exact(x) for x in row[n:]) for row in aug)


def _combine_kinds(a: str, b: str) -> str:
    if a == b:
        return a
    if TORUS in (a, b):
        raise GroupError(f"cannot compose {a} with {b}")
    if {a, b} <= {ROTATION, RIGID}:
        return RIGID
    return AFFINE


@dataclass(frozen=True, eq=False)
class GroupElement:
    linear: tuple
    translation: tuple
    kind: str = RIGID
    modulus: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GroupError(f"unknown kind {self.kind!r}")
        lin = tuple(tuple(row) for row in self.linear)
        tr = tuple(self.translation)
        n = len(lin)
        if any(len(row) != n for row in lin) or len(tr) != n:
            raise GroupError("linear part must be square and match the translation")
        exact = all(_is_exact(x) or isinstance(x, np.integer) for row in lin for x in row) and \
            all(_is_exact(x) or isinstance(x, np.integer) for x in tr)
        if exact:
            lin = tuple(tuple(_to_exact(x) for x in row) for row in lin)
            tr = tuple(_to_exact(x) for x in tr)
        else:
            lin = tuple(tuple(float(x) for x in row) for row in lin)
            tr = tuple(float(x) for x in tr)
        if self.kind == TORUS:
            tr = tuple(_to_exact(x % 1) if exact else x % 1.0 for x in tr)
            if self.modulus is not None:
                q = self.modulus
                if not exact or any(not isinstance(x, int) for row in lin for x in row):
                    raise GroupError("modular torus maps need integer matrices")
                lin = tuple(tuple(x % q for x in row) for row in lin)
                if any((x * q).denominator != 1 for x in map(Fraction, tr)):
                    raise GroupError("translation does not preserve the (1/q)-grid")
        elif self.modulus is not None:
            raise GroupError("modulus only applies to torus automorphisms")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    @property
    def dim(self) -> int:
        return len(self.translation)

    @property
    def exact(self) -> bool:
        return all(_is_exact(x) for x in self.translation) and \
            all(_is_exact(x) for row in self.linear for x in row)

    def key(self):
        """Hashable identity of the element (exact mode only)."""
        if not self.exact:
            raise GroupError("float elements have no exact key; compare with ==")
        return (self.kind, self.modulus, self.linear, self.translation)

    def __hash__(self):
        if self.exact:
            return hash((self.linear, self.translation))
        return hash((self.dim, self.kind))

    def __eq__(self, other):
        if not isinstance(other, GroupElement):
            return NotImplemented
        if self.dim != other.dim or self.modulus != other.modulus:
            return False
        if self.exact and other.exact:
            return self.linear == other.linear and self.translation == other.translation
        return self.close_to(other)

    def close_to(self, other: "GroupElement", tol: float = FLOAT_TOL) -> bool:
        a = np.array(self.linear, dtype=float)
        b = np.array(other.linear, dtype=float)
        s = np.array(self.translation, dtype=float)
        t = np.array(other.translation, dtype=float)
        if self.kind == TORUS:
            d = (s - t) % 1.0
            tdiff = np.minimum(d, 1.0 - d)
        else:
            tdiff = np.abs(s - t)
        return bool(np.max(np.abs(a - b), initial=0.0) <= tol and np.max(tdiff, initial=0.0) <= tol)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)

    def __repr__(self):
        mod = f", mod {self.modulus}" if self.modulus else ""
        return f"GroupElement({self.kind}{mod}, L={self.linear}, t={self.translation})"

    def matrix(self) -> np.ndarray:
        return np.array(self.linear, dtype=float)

    def to_float(self) -> "GroupElement":
        return GroupElement(
            tuple(tuple(float(x) for x in row) for row in self.linear),
            tuple(float(x) for x in self.translation), self.kind)

    def inverse(self) -> "GroupElement":
        return inverse(self)

    def apply(self, x):
        return apply(self, x)


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """The element acting as ``x -> g.(h.x)``."""
    if g.dim != h.dim:
        raise GroupError(f"dimension mismatch: {g.dim} vs {h.dim}")
    kind = _combine_kinds(g.kind, h.kind)
    if g.modulus != h.modulus:
        raise GroupError("modulus mismatch")
    if g.exact and h.exact:
        lin = _matmul(g.linear, h.linear)
        tr = tuple(a + b for a, b in zip(_matvec(g.linear, h.translation), g.translation))
        return GroupElement(lin, tr, kind, g.modulus)
    gl, hl = np.array(g.linear, float), np.array(h.linear, float)
    lin = gl @ hl
    tr = gl @ np.array(h.translation, float) + np.array(g.translation, float)
    return GroupElement(lin.tolist(), tr.tolist(), kind)


def inverse(g: GroupElement) -> GroupElement:
    if g.exact:
        if g.kind == ROTATION:
            inv = tuple(zip(*g.linear))
        elif g.modulus is not None:
            q = g.modulus
            det = _det(g.linear) % q
            det_inv = pow(det, -1, q)
            (a, b), (c, d) = g.linear
            inv = ((d * det_inv % q, -b * det_inv % q), (-c * det_inv % q, a * det_inv % q))
        else:
            inv = _exact_inverse(g.linear)
        tr = tuple(-x for x in _matvec(inv, g.translation))
        return GroupElement(inv, tr, g.kind, g.modulus)
    lin = np.array(g.linear, float)
    inv = lin.T if g.kind in (ROTATION, RIGID) else np.linalg.inv(lin)
    tr = -inv @ np.array(g.translation, float)
    return GroupElement(inv.tolist(), tr.tolist(), g.kind)


def apply(g: GroupElement, x):
    """Image of a single point; exact when both the element and the point are."""
    if len(x) != g.dim:
        raise GroupError("point dimension mismatch")
    if g.exact and all(_is_exact(v) for v in x):
        y = tuple(a + b for a, b in zip(_matvec(g.linear, tuple(x)), g.translation))
        if g.kind == TORUS:
            y = tuple(_to_exact(Fraction(v) % 1) for v in y)
        return y
    y = np.array(g.linear, float) @ np.asarray(x, float) + np.array(g.translation, float)
    if g.kind == TORUS:
        y = y % 1.0
    return tuple(float(v) for v in y)


def apply_many(g: GroupElement, points: np.ndarray) -> np.ndarray:
    """Float images of an (n, d) array of points."""
    pts = np.asarray(points, float)
    out = pts @ np.array(g.linear, float).T + np.array(g.translation, float)
    if g.kind == TORUS:
        out %= 1.0
    return out


def identity(dim: int = 3, kind: str = ROTATION, modulus: int | None = None) -> GroupElement:
    lin = tuple(tuple(int(i == j) for j in range(dim)) for i in range(dim))
    return GroupElement(lin, (0,) * dim, kind, modulus)


def is_identity(g: GroupElement) -> bool:
    return g == identity(g.dim, g.kind, g.modulus)


def rotation(matrix, exact: bool = True) -> GroupElement:
    """Rotation about the origin; validates orthogonality and det = +1."""
    g = GroupElement(matrix, (0,) * len(matrix), ROTATION)
    check_element(g)
    return g


def rigid_motion(matrix, translation) -> GroupElement:
    g = GroupElement(matrix, translation, RIGID)
    check_element(g)
    return g


def torus_map(matrix, translation=(0, 0), modulus: int | None = None) -> GroupElement:
    g = GroupElement(matrix, translation, TORUS, modulus)
    check_element(g)
    return g


def check_element(g: GroupElement) -> None:
    """Raise if ``g`` violates the invariants of its kind."""
    if g.kind in (ROTATION, RIGID):
        if g.exact:
            prod = _matmul(tuple(zip(*g.linear)), g.linear)
            if prod != identity(g.dim).linear or _det(g.linear) != 1:
                raise GroupError("linear part is not a rotation")
        else:
            m = g.matrix()
            if np.max(np.abs(m.T @ m - np.eye(g.dim))) > ORTHO_TOL or abs(np.linalg.det(m) - 1) > ORTHO_TOL:
                raise GroupError("linear part is not a rotation")
        if g.kind == ROTATION and any(x != 0 for x in g.translation):
            raise GroupError("rotations fix the origin")
    elif g.kind == TORUS:
        if not g.exact or any(not isinstance(x, int) for row in g.linear for x in row):
            raise GroupError("torus automorphisms need integer matrices")
        det = _det(g.linear)
        if g.modulus is None:
            ok = det in (1, -1)
        else:
            ok = det % g.modulus in (1, g.modulus - 1)
        if not ok:
            raise GroupError(f"determinant {det} is not a unit")


def quaternion_rotation(a: int, b: int, c: int, d: int) -> GroupElement:
    """Exact rotation of R^3 induced by conjugation with a + bi + cj + dk."""
    n = a * a + b * b + c * c + d * d
    m = (
        (a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)),
        (2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)),
        (2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d),
    )
    return rotation(tuple(tuple(Fraction(x, n) for x in row) for row in m))


def quarter_turn(n: int = 3) -> GroupElement:
    """Rotation by pi/2 in the last two coordinates of R^n."""
    m = [[int(i == j) for j in range(n)] for i in range(n)]
    m[n - 2][n - 2] = m[n - 1][n - 1] = 0
    m[n - 2][n - 1], m[n - 1][n - 2] = -1, 1
    return rotation(m)


def translation(vec, kind: str = RIGID, modulus: int | None = None) -> GroupElement:
    d = len(vec)
    return GroupElement(identity(d).linear, tuple(vec), kind, modulus)


# --------------------------------------------------------------------------- words


@dataclass(frozen=True)
class Word:
    """Generator word; letters are ``(alphabet, index, inverted)``.

    The evaluated element is the ordered product of the letters, so the
    last letter acts first.
    """
    letters: tuple = ()

    def __len__(self):
        return len(self.letters)

    def __add__(self, other: "Word") -> "Word":
        return Word(self.letters + other.letters)

    def inverse(self) -> "Word":
        return Word(tuple((a, i, not inv) for a, i, inv in reversed(self.letters)))

    def evaluate(self, alphabets: dict, identity_element: GroupElement | None = None) -> GroupElement:
        out = identity_element
        for name, idx, inv in self.letters:
            g = alphabets[name].elements[idx]
            if inv:
                g = inverse(g)
            out = g if out is None else compose(out, g)
        if out is None:
            raise GroupError("empty word needs an identity element")
        return out

    def tokens(self) -> list[str]:
        return [f"{a}{i}" + ("^-1" if inv else "") for a, i, inv in self.letters]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Word":
        letters = []
        for tok in tokens:
            inv = tok.endswith("^-1")
            core = tok[:-3] if inv else tok
            k = len(core)
            while k > 0 and core[k - 1].isdigit():
                k -= 1
            letters.append((core[:k], int(core[k:]), inv))
        return cls(tuple(letters))

    @classmethod
    def letter(cls, alphabet: str, index: int, inverted: bool = False) -> "Word":
        return cls(((alphabet, index, inverted),))


class _WordTable(Sequence):
    """Lazily reconstructed words produced by the vectorized word enumeration."""

    def __init__(self, alphabet, levels, level_of, index_in_level, pad_pair, target_len):
        self._alphabet = alphabet
        self._levels = levels            # list of (parent_idx, gen_idx) arrays
        self._level_of = level_of
        self._index = index_in_level
        self._pad = pad_pair
        self._target = target_len

    def __len__(self):
        return len(self._index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        lvl, idx = int(self._level_of[i]), int(self._index[i])
        gens = []
        while lvl > 0:
            parent, gen = self._levels[lvl]
            gens.append(int(gen[idx]))
            idx = int(parent[idx])
            lvl -= 1
        gens.reverse()
        letters = [(self._alphabet, g, False) for g in gens]
        extra = self._target - len(letters)
        if extra:
            a, b = self._pad
            letters += [(self._alphabet, a, False), (self._alphabet, b, False)] * (extra // 2)
        return Word(tuple(letters))


# ------------------------------------------------------------------ generator sets


@dataclass(frozen=True)
class GeneratorSet:
    elements: tuple
    labels: tuple = ()
    words: Sequence | None = None
    name: str = "Q"
    symmetric: bool = False
    base: "GeneratorSet | None" = field(default=None, repr=False, compare=False)
    word_length: int | None = None

    def __post_init__(self):
        if not isinstance(self.elements, LazyElements):
            object.__setattr__(self, "elements", tuple(self.elements))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(len(self.elements))))
        if len(self.labels) != len(self.elements):
            raise GroupError("one label per element")
        if self.symmetric and not self.check_symmetric():
            raise GroupError("generator set flagged symmetric is not closed under inverses")

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i):
        return self.elements[i]

    @property
    def dim(self) -> int:
        return self.elements[0].dim

    def word(self, i: int) -> Word:
        if self.words is not None:
            return self.words[i]
        return Word.letter(self.name, i)

    def check_symmetric(self) -> bool:
        if isinstance(self.elements, TorusElementArray):
            arr = self.elements.array
            return bool(np.array_equal(np.sort(arr.keys()), np.sort(arr.inverse().keys())))
        if all(g.exact for g in self.elements):
            counts = Counter(g.key() for g in self.elements)
            inv_counts = Counter(inverse(g).key() for g in self.elements)
            return counts == inv_counts
        used = [False] * len(self)
        for g in self.elements:
            gi = inverse(g)
            j = next((j for j, h in enumerate(self.elements) if not used[j] and h.close_to(gi)), None)
            if j is None:
                return False
            used[j] = True
        return True

    def inverse_index(self) -> list[int]:
        """For each i some j with elements[j] == elements[i]^-1 (or -1)."""
        if isinstance(self.elements, TorusElementArray):
            arr = self.elements.array
            keys, inv_keys = arr.keys(), arr.inverse().keys()
            order = np.argsort(keys, kind="stable")
            pos = np.searchsorted(keys[order], inv_keys)
            pos = np.minimum(pos, len(keys) - 1)
            hit = keys[order][pos] == inv_keys
            return np.where(hit, order[pos], -1).tolist()
        if all(g.exact for g in self.elements):
            where = {}
            for j, g in enumerate(self.elements):
                where.setdefault(g.key(), j)
            return [where.get(inverse(g).key(), -1) for g in self.elements]
        out = []
        for g in self.elements:
            gi = inverse(g)
            out.append(next((j for j, h in enumerate(self.elements) if h.close_to(gi)), -1))
        return out

    def contains_identity(self) -> bool:
        if isinstance(self.elements, TorusElementArray):
            return bool(np.any(self.elements.array.keys() == self.elements.array.identity_key()))
        return any(is_identity(g) for g in self.elements)

    def symmetrized(self) -> "GeneratorSet":
        """Adjoin missing inverses (deduplicated, exact mode)."""
        inv = self.inverse_index()
        extra = [inverse(g) for g, j in zip(self.elements, inv) if j < 0]
        extra_words = [self.word(i).inverse() for i, j in enumerate(inv) if j < 0]
        if not extra:
            return GeneratorSet(self.elements, self.labels, self.words, self.name, True,
                                self.base, self.word_length)
        seen, els, words = set(), [], []
        for g, w in zip(self.elements + tuple(extra), [self.word(i) for i in range(len(self))] + extra_words):
            k = g.key() if g.exact else None
            if k is not None and k in seen:
                continue
            if k is not None:
                seen.add(k)
            els.append(g)
            words.append(w)
        return GeneratorSet(tuple(els), (), tuple(words), self.name, True)

    def with_identity(self) -> "GeneratorSet":
        if self.contains_identity():
            return self
        e = identity(self.dim, self.elements[0].kind, self.elements[0].modulus)
        n = len(self)
        words = _PickWords([([Word()], np.zeros(1, np.int64), None, None),
                            (_words_of(self), np.arange(n), None, None)])
        if isinstance(self.elements, TorusElementArray):
            arr = ModularTorusArray.from_elements([e], self.elements.array.q).concat(self.elements.array)
            return GeneratorSet(TorusElementArray(arr), (), words, self.name, self.symmetric)
        return GeneratorSet((e,) + self.elements, (), words, self.name, self.symmetric)

    def reduced_mod(self, q: int) -> "GeneratorSet":
        """Same words, elements acting on the (1/q)-grid of the torus."""
        els = tuple(GroupElement(g.linear, g.translation, TORUS, q) for g in self.elements)
        return GeneratorSet(els, self.labels, self.words, self.name, self.symmetric)

    def to_json(self) -> dict:
        def enc(x):
            return str(x) if _is_exact(x) else repr(float(x))
        doc = {
            "schema": SCHEMA_GENERATORS,
            "name": self.name,
            "symmetric": self.symmetric,
            "labels": list(self.labels),
            "elements": [
                {
                    "kind": g.kind,
                    "modulus": g.modulus,
                    "exact": g.exact,
                    "linear": [[enc(x) for x in row] for row in g.linear],
                    "translation": [enc(x) for x in g.translation],
                }
                for g in self.elements
            ],
        }
        if self.words is not None and len(self.words) <= 10_000:
            doc["words"] = [self.words[i].tokens() for i in range(len(self.words))]
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, doc: dict) -> "GeneratorSet":
        if doc.get("schema") != SCHEMA_GENERATORS:
            raise GroupError(f"unexpected schema {doc.get('schema')!r}")
        els = []
        for e in doc["elements"]:
            dec = (lambda s: _to_exact(Fraction(s))) if e["exact"] else float
            els.append(GroupElement(
                tuple(tuple(dec(x) for x in row) for row in e["linear"]),
                tuple(dec(x) for x in e["translation"]), e["kind"], e.get("modulus")))
        words = None
        if "words" in doc:
            words = tuple(Word.from_tokens(w) for w in doc["words"])
        return cls(tuple(els), tuple(doc["labels"]), words, doc["name"], doc["symmetric"])

    @classmethod
    def loads(cls, text: str) -> "GeneratorSet":
        return cls.from_json(json.loads(text))


def lps_generators() -> GeneratorSet:
    """Six rotations from the norm-5 quaternions 1±2i, 1±2j, 1±2k.

    Ordered so that elements 2k and 2k+1 are mutually inverse.
    """
    quats = [(1, 2, 0, 0), (1, -2, 0, 0), (1, 0, 2, 0), (1, 0, -2, 0), (1, 0, 0, 2), (1, 0, 0, -2)]
    return GeneratorSet(tuple(quaternion_rotation(*q) for q in quats), name="Q", symmetric=True)


def sl2_generators(modulus: int | None = None) -> GeneratorSet:
    """{S, S^-1, T, T^-1} in SL(2, Z) acting on the 2-torus."""
    mats = [((0, -1), (1, 0)), ((0, 1), (-1, 0)), ((1, 1), (0, 1)), ((1, -1), (0, 1))]
    return GeneratorSet(tuple(torus_map(m, modulus=modulus) for m in mats), name="Q", symmetric=True)


def torus_translations(q: int, modulus: int | None = None) -> GeneratorSet:
    """Translations by ±1/q along each axis of the 2-torus."""
    s = Fraction(1, q)
    vecs = [(s, 0), (-s, 0), (0, s), (0, -s)]
    return GeneratorSet(tuple(translation(v, TORUS, modulus) for v in vecs), name="Q", symmetric=True)


# ------------------------------------------------------------ vectorized torus maps


class ModularTorusArray:
    """A batch of affine maps of the grid (Z/q)^2, stored as integer arrays.

    ``mats`` has shape (K, 2, 2) and ``trans`` (K, 2); translations are
    numerators over q, so an element sends grid point v to ``M v + t mod q``.
    """

    def __init__(self, mats: np.ndarray, trans: np.ndarray, q: int):
        self.mats = np.asarray(mats, np.int64) % q
        self.trans = np.asarray(trans, np.int64) % q
        self.q = q

    def __len__(self):
        return len(self.mats)

    @classmethod
    def from_elements(cls, elements: Sequence[GroupElement], q: int) -> "ModularTorusArray":
        mats = np.array([g.linear for g in elements], dtype=object)
        trans = np.array([[Fraction(x) * q for x in g.translation] for g in elements], dtype=object)
        if any(Fraction(x).denominator != 1 for x in trans.ravel()):
            raise GroupError("translation does not preserve the (1/q)-grid")
        return cls(np.array([[int(x) % q for x in row] for row in mats.reshape(-1, 4)]).reshape(-1, 2, 2),
                   np.array([int(x) % q for x in trans.ravel()]).reshape(-1, 2), q)

    def keys(self) -> np.ndarray:
        q = self.q
        k = np.zeros(len(self), np.int64)
        for col in (self.mats[:, 0, 0], self.mats[:, 0, 1], self.mats[:, 1, 0], self.mats[:, 1, 1],
                    self.trans[:, 0], self.trans[:, 1]):
            k = k * q + col
        return k

    def take(self, idx) -> "ModularTorusArray":
        return ModularTorusArray(self.mats[idx], self.trans[idx], self.q)

    def compose_right(self, other: "ModularTorusArray") -> "ModularTorusArray":
        """All products a·b for a in self, b in other; a-major order."""
        q = self.q
        A, B = self.mats[:, None], other.mats[None, :]
        m = np.einsum("abij,abjk->abik", np.broadcast_to(A, (len(self), len(other), 2, 2)),
                      np.broadcast_to(B, (len(self), len(other), 2, 2))) % q
        t = (np.einsum("aij,bj->abi", self.mats, other.trans) + self.trans[:, None]) % q
        return ModularTorusArray(m.reshape(-1, 2, 2), t.reshape(-1, 2), q)

    def images(self, coords: np.ndarray) -> np.ndarray:
        """Integer images, shape (K, n, 2), of grid points ``coords`` (n, 2)."""
        c = np.asarray(coords, np.int64)
        return (np.einsum("kij,nj->kni", self.mats, c) + self.trans[:, None, :]) % self.q

    def image_indices(self, coords: np.ndarray) -> np.ndarray:
        """Flat grid indices u*q + v of the images, shape (K, n)."""
        q = self.q
        dt = np.int32 if 3 * q * q < 2 ** 31 else np.int64
        x = np.asarray(coords)[:, 0].astype(dt)[None, :]
        y = np.asarray(coords)[:, 1].astype(dt)[None, :]
        m = self.mats.astype(dt)
        t = self.trans.astype(dt)
        u = (m[:, 0, 0, None] * x + m[:, 0, 1, None] * y + t[:, 0, None]) % q
        v = (m[:, 1, 0, None] * x + m[:, 1, 1, None] * y + t[:, 1, None]) % q
        return u * q + v

    def inverse(self) -> "ModularTorusArray":
        q = self.q
        m = self.mats
        det = (m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]) % q
        # det is ±1 mod q for the maps we build, so it is its own inverse
        if not np.all((det == 1) | (det == q - 1)):
            raise GroupError("determinant is not ±1 mod q")
        inv = np.empty_like(m)
        inv[:, 0, 0], inv[:, 1, 1] = m[:, 1, 1], m[:, 0, 0]
        inv[:, 0, 1], inv[:, 1, 0] = -m[:, 0, 1], -m[:, 1, 0]
        inv = (inv * det[:, None, None]) % q
        t = -np.einsum("kij,kj->ki", inv, self.trans) % q
        return ModularTorusArray(inv, t, q)

    def identity_key(self) -> int:
        q = self.q
        k = 0
        for v in (1, 0, 0, 1, 0, 0):
            k = k * q + v
        return k

    def concat(self, other: "ModularTorusArray") -> "ModularTorusArray":
        return ModularTorusArray(np.concatenate([self.mats, other.mats]),
                                 np.concatenate([self.trans, other.trans]), self.q)

    def element(self, i: int) -> GroupElement:
        q = self.q
        return GroupElement(tuple(map(tuple, self.mats[i].tolist())),
                            tuple(Fraction(int(x), q) for x in self.trans[i]), TORUS, q)

    def to_elements(self) -> list[GroupElement]:
        q = self.q
        return [GroupElement(tuple(map(tuple, m.tolist())), tuple(Fraction(int(x), q) for x in t), TORUS, q)
                for m, t in zip(self.mats, self.trans)]


class LazyElements(Sequence):
    """Marker for element sequences that build elements on access."""


class TorusElementArray(LazyElements):
    """Read-only sequence view of a ModularTorusArray; elements are built on access."""

    def __init__(self, array: ModularTorusArray):
        self.array = array

    def __len__(self):
        return len(self.array)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self.array.element(k) for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        return self.array.element(i)

    def __iter__(self):
        return (self.array.element(i) for i in range(len(self)))


def as_torus_array(Q: GeneratorSet, q: int) -> ModularTorusArray:
    if isinstance(Q.elements, TorusElementArray) and Q.elements.array.q == q:
        return Q.elements.array
    els = [g if g.modulus == q else GroupElement(g.linear, g.translation, TORUS, q) for g in Q.elements]
    return ModularTorusArray.from_elements(els, q)


class _PickWords(Sequence):
    """Words assembled on demand: word k = left[li[k]] + right[ri[k]] (either side optional)."""

    def __init__(self, parts):
        # parts: list of (left_words | None, li, right_words | None, ri), concatenated
        self._parts = parts
        self._offsets = np.cumsum([0] + [len(p[1]) for p in parts])

    def __len__(self):
        return int(self._offsets[-1])

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        j = int(np.searchsorted(self._offsets, k, side="right") - 1)
        lw, li, rw, ri = self._parts[j]
        r = k - int(self._offsets[j])
        w = lw[int(li[r])] if lw is not None else Word()
        if rw is not None:
            w = w + rw[int(ri[r])]
        return w


def _words_of(X: GeneratorSet):
    return X.words if X.words is not None else [X.word(i) for i in range(len(X))]


def set_product(X: GeneratorSet, Y: GeneratorSet, name: str | None = None) -> GeneratorSet:
    """The deduplicated product set XY = {xy}, words concatenated."""
    return set_union([(X, Y)], name or f"{X.name}{Y.name}")


def set_union(products, name: str = "S") -> GeneratorSet:
    """Deduplicated union of product sets X1Y1 ∪ X2Y2 ∪ ...; pass (X, None) for a plain set.

    Order: products in the given order, x-major within each product; the
    first occurrence of an element keeps its word.
    """
    first = products[0][0]
    q = _all_modular(first)
    sym = False
    if q is not None:
        arrays, parts = [], []
        for X, Y in products:
            ax = as_torus_array(X, q)
            if Y is None:
                arr, li, ri = ax, np.arange(len(ax)), None
            else:
                ay = as_torus_array(Y, q)
                arr = ax.compose_right(ay)
                li, ri = np.divmod(np.arange(len(ax) * len(ay)), len(ay))
            arrays.append(arr)
            parts.append((_words_of(X), li, _words_of(Y) if Y is not None else None, ri))
        big = arrays[0]
        for a in arrays[1:]:
            big = big.concat(a)
        _, keep = np.unique(big.keys(), return_index=True)
        keep.sort()
        offsets = np.cumsum([0] + [len(a) for a in arrays])
        kept_parts = []
        for j, (lw, li, rw, ri) in enumerate(parts):
            sel = keep[(keep >= offsets[j]) & (keep < offsets[j + 1])] - offsets[j]
            kept_parts.append((lw, li[sel], rw, ri[sel] if ri is not None else None))
        out = GeneratorSet(TorusElementArray(big.take(keep)), (), _PickWords(kept_parts), name)
        return out
    seen, els, words = {}, [], []
    for X, Y in products:
        xw = _words_of(X)
        yw = _words_of(Y) if Y is not None else None
        for i, x in enumerate(X.elements):
            if Y is None:
                cands = [(x, xw[i])]
            else:
                cands = [(compose(x, y), xw[i] + yw[j]) for j, y in enumerate(Y.elements)]
            for g, w in cands:
                if g.exact:
                    k = (g.linear, g.translation)
                    if k in seen:
                        continue
                    seen[k] = len(els)
                elif any(g.close_to(h) for h in els):
                    continue
                els.append(g)
                words.append(w)
    return GeneratorSet(tuple(els), (), tuple(words), name, sym)


def _all_modular(Q: GeneratorSet) -> int | None:
    if isinstance(Q.elements, TorusElementArray):
        return Q.elements.array.q
    mods = {g.modulus for g in Q.elements}
    if len(mods) == 1 and None not in mods and all(g.kind == TORUS for g in Q.elements):
        return mods.pop()
    return None


def word_products(Q: GeneratorSet, l: int, cap: int = 200_000) -> GeneratorSet:
    """Distinct elements γ1γ2…γl with every γi in Q, each with a word of length l.

    Once the level sets become periodic (period 1 or 2) further levels are
    obtained by padding words with a pair γ γ^-1; this needs Q symmetric.
    """
    if l < 1:
        raise GroupError("word length must be >= 1")
    q = _all_modular(Q)
    if q is not None:
        return _word_products_modular(Q, l, q, cap)
    return _word_products_generic(Q, l, cap)


def _pad_pair(Q: GeneratorSet):
    inv = Q.inverse_index()
    for i, j in enumerate(inv):
        if j >= 0:
            return (i, j)
    return None


def _word_products_generic(Q: GeneratorSet, l: int, cap: int) -> GeneratorSet:
    exact = all(g.exact for g in Q.elements)
    pad = _pad_pair(Q) if Q.symmetric and exact else None
    level = _dedupe([(g, Word.letter(Q.name, i)) for i, g in enumerate(Q.elements)], exact)
    prev, prev_sig, prev2_sig = None, None, None
    sig = _level_signature(level, exact)
    k = 1
    while k < l:
        cand = [(compose(p, g), w + Word.letter(Q.name, i)) for p, w in level for i, g in enumerate(Q.elements)]
        nxt = _dedupe(cand, exact)
        if len(nxt) > cap:
            raise WordSetTooLarge(f"{len(nxt)} elements at length {k + 1} exceed cap {cap}")
        prev, level, k = level, nxt, k + 1
        prev2_sig, prev_sig, sig = prev_sig, sig, _level_signature(level, exact)
        if pad is not None and prev2_sig is not None and sig == prev2_sig:
            # levels repeat with period 2 from here on
            if (l - k) % 2 == 1:
                level, k = prev, k - 1
            break
    if k < l:
        a, b = pad
        padding = Word(((Q.name, a, False), (Q.name, b, False)) * ((l - k) // 2))
        level = [(g, w + padding) for g, w in level]
    els, words = zip(*level)
    return GeneratorSet(tuple(els), (), tuple(words), f"{Q.name}^{l}", Q.symmetric, Q, l)


def _dedupe(items, exact: bool):
    if exact:
        seen, out = set(), []
        for g, w in items:
            k = (g.linear, g.translation)
            if k not in seen:
                seen.add(k)
                out.append((g, w))
        return out
    from scipy.spatial import cKDTree
    vecs = np.array([np.concatenate([np.ravel(g.linear), g.translation]) for g, _ in items])
    tree = cKDTree(vecs)
    keep = np.ones(len(items), bool)
    for i, j in sorted(tree.query_pairs(FLOAT_TOL, p=np.inf)):
        if keep[i]:
            keep[j] = False
    return [it for it, k in zip(items, keep) if k]


def _level_signature(level, exact: bool):
    if exact:
        return frozenset((g.linear, g.translation) for g, _ in level)
    return None


def _word_products_modular(Q: GeneratorSet, l: int, q: int, cap: int) -> GeneratorSet:
    gens = ModularTorusArray.from_elements(Q.elements, q)
    ng = len(gens)
    pad = _pad_pair(Q) if Q.symmetric else None

    _, first = np.unique(gens.keys(), return_index=True)
    first.sort()
    level = gens.take(first)
    levels = [None, (np.zeros(len(first), np.int64), first)]
    sigs = [None, np.sort(level.keys())]
    prev = None
    k = 1
    while k < l:
        cand = level.compose_right(gens)
        _, first = np.unique(cand.keys(), return_index=True)
        first.sort()
        if len(first) > cap:
            raise WordSetTooLarge(f"{len(first)} elements at length {k + 1} exceed cap {cap}")
        prev, level, k = level, cand.take(first), k + 1
        levels.append((first // ng, first % ng))
        sigs.append(np.sort(level.keys()))
        if pad is not None and k >= 3 and np.array_equal(sigs[k], sigs[k - 2]):
            if (l - k) % 2 == 1:
                level, k = prev, k - 1
            break
    n = len(level)
    words = _WordTable(Q.name, levels, np.full(n, k), np.arange(n), pad, l)
    result = GeneratorSet(TorusElementArray(level), (), words, f"{Q.name}^{l}", False, Q, l)
    if Q.symmetric:
        object.__setattr__(result, "symmetric", True)
    return result


def reduced_words(Q: GeneratorSet, length: int) -> list[Word]:
    """Freely reduced words of exactly ``length`` letters over a symmetric Q.

    A word is reduced when no letter is followed by its inverse letter.
    """
    inv = Q.inverse_index()
    if any(j < 0 for j in inv):
        raise GroupError("reduced words need a symmetric generator set")
    words = [()]
    for _ in range(length):
        words = [w + (i,) for w in words for i in range(len(Q)) if not w or inv[w[-1]] != i]
    return [Word(tuple((Q.name, i, False) for i in w)) for w in words]


def l_for_growth(c: float, eta: float, q_size: int) -> int:
    """Smallest l with (1 + c·η/|Q|)^l > 1/η."""
    import mpmath
    with mpmath.workdps(60):
        base = 1 + mpmath.mpf(c) * mpmath.mpf(eta) / q_size
        target = 1 / mpmath.mpf(eta)
        l = max(1, int(mpmath.floor(mpmath.log(target) / mpmath.log(base))))
        while base ** l <= target:
            l += 1
        while l > 1 and base ** (l - 1) > target:
            l -= 1
    return l

