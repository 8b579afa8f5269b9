"""End-to-end equidecomposition on exact models, the open-set reduction, and certificates.

A certificate lists pieces A_i of A with motions γ_i such that the γ_i.A_i
partition B.  ``validate_certificate`` re-checks one point at a time with
exact arithmetic and never uses the model's vectorized action tables.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .expansion import AveragingOperator, finite_gap, verify_expansion, walk_saturate
from .graphing import bipartite_graphing
from .group import (RIGID, TORUS, GeneratorSet, Word, apply, compose, identity, inverse, is_identity,
                    l_for_growth, set_union, torus_map, translation, word_products)
from .matching import extract_equidecomposition, run_to_completion
from .predicates import Ball, Box, Image, Intersection, Predicate, Union
from .space import DoubledModel, ExactModel, LiftedElement, PlaneGrid, RationalTorus, SampledSet, lift

SCHEMA_CERTIFICATE = "equidecomp.certificate/v1"
ETA_MARGIN = 0.99


class PipelineError(ValueError):
    pass


class MeasureMismatch(PipelineError):
    pass


class CoveringError(PipelineError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class ExpansionFailure(PipelineError):
    def __init__(self, msg, report=None, failing=None):
        super().__init__(msg)
        self.report = report
        self.failing = failing


# ------------------------------------------------------------------ word text


def compact_tokens(word: Word) -> str:
    """Word as text; runs of a repeated one- or two-letter block become ``(a b)^k``."""
    toks = word.tokens()
    out, i, n = [], 0, len(toks)
    while i < n:
        done = False
        for w in (2, 1):
            if i + 2 * w > n:
                continue
            block = toks[i:i + w]
            k = 1
            while toks[i + k * w:i + (k + 1) * w] == block:
                k += 1
            if k >= 3:
                out.append(f"({' '.join(block)})^{k}")
                i += k * w
                done = True
                break
        if not done:
            out.append(toks[i])
            i += 1
    return " ".join(out)


_RUN = re.compile(r"\(([^()]*)\)\^(\d+)")


def expand_tokens(text: str) -> Word:
    text = _RUN.sub(lambda m: " ".join([m.group(1)] * int(m.group(2))), text)
    return Word.from_tokens(text.split())


# --------------------------------------------------------------- certificates


@dataclass
class CertPiece:
    points: np.ndarray      # model indices of A_i
    image: np.ndarray       # model indices of γ_i.A_i
    motion: object          # GroupElement (or LiftedElement on a doubled model)
    word: Word | None = None
    label: int = -1


@dataclass
class ValidationResult:
    ok: bool
    problems: list = field(default_factory=list)
    checked_points: int = 0
    checked_words: int = 0

    def to_json(self):
        return {"ok": self.ok, "problems": self.problems[:20], "checked_points": self.checked_points,
                "checked_words": self.checked_words}


@dataclass
class EquidecompositionCertificate:
    model: ExactModel
    A: SampledSet
    B: SampledSet
    pieces: list
    residue_left: np.ndarray
    residue_right: np.ndarray
    mode: str = "exact"
    metadata: dict = field(default_factory=dict)
    alphabets: dict = field(default_factory=dict, repr=False)
    validation: ValidationResult | None = None

    @property
    def piece_count(self) -> int:
        return len(self.pieces)

    @property
    def residue_mass(self):
        return self.model.point_mass * len(self.residue_left)

    def to_json(self) -> dict:
        def enc_el(g):
            flip = None
            if isinstance(g, LiftedElement):
                g, flip = g.base, g.flip
            d = {"linear": [[str(x) for x in row] for row in g.linear],
                 "translation": [str(x) for x in g.translation], "kind": g.kind, "modulus": g.modulus}
            if flip is not None:
                d["flip"] = flip
            return d
        return {
            "schema": SCHEMA_CERTIFICATE,
            "model": {"kind": self.model.kind, "n": self.model.n},
            "mode": self.mode,
            "source": self.A.indices().tolist(),
            "target": self.B.indices().tolist(),
            "residue_mass": str(self.residue_mass),
            "residue_left": self.residue_left.tolist(),
            "residue_right": self.residue_right.tolist(),
            "piece_count": self.piece_count,
            "pieces": [{"points": p.points.tolist(), "image": p.image.tolist(), "motion": enc_el(p.motion),
                        "word": compact_tokens(p.word) if p.word is not None else None}
                       for p in self.pieces],
            "metadata": self.metadata,
            "validation": self.validation.to_json() if self.validation else None,
        }

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_json(), **kw)


def _coord_lookup(model: ExactModel):
    base = model.base if isinstance(model, DoubledModel) else model
    table = {tuple(int(v) for v in c): i for i, c in enumerate(base.coords.tolist())}
    return base, table


def _image_of_point(base, table, idx: int, g, den: int, mod) -> int:
    flip = 0
    if isinstance(g, LiftedElement):
        g, flip = g.base, g.flip
    nb = base.n
    copy, i = divmod(int(idx), nb)
    x = tuple(Fraction(int(c), den) for c in base.coords[i])
    y = apply(g, x)
    key = []
    for v in y:
        v = Fraction(v) * den
        if v.denominator != 1:
            return -1
        key.append(int(v) % mod if mod else int(v))
    j = table.get(tuple(key), -1)
    if j < 0:
        return -1
    return (copy ^ flip) * nb + j


def validate_certificate(cert: EquidecompositionCertificate, threshold=0, word_checks: int = 8
                         ) -> ValidationResult:
    """Independent exact check of a certificate, one point at a time.

    Checks: pieces disjoint with union A minus residue, every recorded image
    equals the recomputed image, images disjoint with union B minus residue,
    mass bookkeeping, residue threshold, and (for up to ``word_checks``
    pieces) that the stored word evaluates to the stored motion.
    """
    model = cert.model
    res = ValidationResult(True)

    def fail(msg):
        res.ok = False
        res.problems.append(msg)

    base, table = _coord_lookup(model)
    den = base.den
    mod = base.q if isinstance(base, RationalTorus) else None
    A = set(cert.A.indices().tolist())
    B = set(cert.B.indices().tolist())
    seen_src, seen_dst = set(), set()
    for k, p in enumerate(cert.pieces):
        pts = [int(x) for x in p.points]
        rec = [int(y) for y in p.image]
        if len(pts) != len(rec):
            fail(f"piece {k}: {len(pts)} points but {len(rec)} recorded images")
            continue
        for x, y in zip(pts, rec):
            if x not in A:
                fail(f"piece {k}: point {x} not in A")
            if x in seen_src:
                fail(f"piece {k}: point {x} already used")
            seen_src.add(x)
            z = _image_of_point(base, table, x, p.motion, den, mod)
            if z != y:
                fail(f"piece {k}: motion sends {x} to {z}, certificate says {y}")
            if y not in B:
                fail(f"piece {k}: image {y} not in B")
            if y in seen_dst:
                fail(f"piece {k}: image {y} already covered")
            seen_dst.add(y)
            res.checked_points += 1
    resL = set(int(x) for x in cert.residue_left)
    resR = set(int(x) for x in cert.residue_right)
    if seen_src | resL != A or seen_src & resL:
        fail("pieces and residue do not partition A")
    if seen_dst | resR != B or seen_dst & resR:
        fail("images and residue do not partition B")
    mass = model.point_mass
    if mass * len(A) != mass * (len(seen_src) + len(resL)) or mass * len(B) != mass * (len(seen_dst) + len(resR)):
        fail("mass bookkeeping does not balance")
    if mass * len(resL) > threshold:
        fail(f"residue mass {mass * len(resL)} above threshold {threshold}")
    if cert.alphabets and word_checks:
        for p in cert.pieces[:word_checks]:
            if p.word is None:
                continue
            g = p.motion.base if isinstance(p.motion, LiftedElement) else p.motion
            e = identity(g.dim, g.kind, g.modulus)
            w = p.word.evaluate(cert.alphabets, e)
            if w.key() != g.key():
                fail(f"piece word {compact_tokens(p.word)[:60]} does not evaluate to its motion")
            res.checked_words += 1
    return res


# ------------------------------------------------------------------ plumbing


@dataclass
class DoubledProblem:
    model: DoubledModel
    A: SampledSet
    B: SampledSet
    S: GeneratorSet


def disjointify(A: SampledSet, B: SampledSet, S: GeneratorSet) -> DoubledProblem:
    """A in copy 0, B in copy 1 of Ω ⊔ Ω; every element of S lifted with the copy swap."""
    if A.model is not B.model:
        raise PipelineError("A and B live on different models")
    D = DoubledModel(A.model)
    return DoubledProblem(D, D.copy_of(A, 0), D.copy_of(B, 1), lift(S, 1))


def project_certificate(cert: EquidecompositionCertificate, A: SampledSet, B: SampledSet
                        ) -> EquidecompositionCertificate:
    """Forget the copy bit of a certificate built on a doubled model."""
    nb = cert.model.base.n
    pieces = [CertPiece(p.points % nb, p.image % nb,
                        p.motion.base if isinstance(p.motion, LiftedElement) else p.motion, p.word, p.label)
              for p in cert.pieces]
    return EquidecompositionCertificate(A.model, A, B, pieces, cert.residue_left % nb, cert.residue_right % nb,
                                        cert.mode, dict(cert.metadata), cert.alphabets)


def chain_certificates(first: EquidecompositionCertificate, second: EquidecompositionCertificate
                       ) -> EquidecompositionCertificate:
    """A → B then B → C gives A → C with pieces A_i ∩ γ_i^-1.B_j and motions δ_j γ_i."""
    if first.model is not second.model or first.B != second.A:
        raise PipelineError("certificates do not compose (target of the first is not the source of the second)")
    if len(first.residue_left) or len(second.residue_left):
        raise PipelineError("only residue-free certificates are chained")
    owner = {}
    for j, p in enumerate(second.pieces):
        for x, y in zip(p.points.tolist(), p.image.tolist()):
            owner[x] = (j, y)
    groups = {}
    for i, p in enumerate(first.pieces):
        for x, y in zip(p.points.tolist(), p.image.tolist()):
            j, z = owner[y]
            groups.setdefault((i, j), ([], []))
            groups[(i, j)][0].append(x)
            groups[(i, j)][1].append(z)
    pieces = []
    for (i, j), (xs, zs) in sorted(groups.items()):
        p, r = first.pieces[i], second.pieces[j]
        g = compose(r.motion, p.motion)
        w = r.word + p.word if (p.word is not None and r.word is not None) else None
        pieces.append(CertPiece(np.array(xs, np.int64), np.array(zs, np.int64), g, w))
    alph = dict(first.alphabets)
    clash = [k for k in second.alphabets if k in alph and alph[k] is not second.alphabets[k]]
    alph.update(second.alphabets)
    if clash:
        alph = {}
    meta = {"chained": [first.metadata.get("kind", "?"), second.metadata.get("kind", "?")],
            "piece_bound": first.piece_count * second.piece_count}
    empty = np.zeros(0, np.int64)
    return EquidecompositionCertificate(first.model, first.A, second.B, pieces, empty, empty, "exact", meta, alph)


@dataclass
class GapSource:
    """Where the spectral gap comes from: a finite eigensolve, or a constant taken on trust."""
    generators: GeneratorSet
    kind: str = "finite-eigensolve"
    constant: float | None = None
    note: str = ""

    def gap(self, model) -> tuple[float, dict]:
        if self.kind == "trusted-constant":
            return float(self.constant), {"gap_source": self.kind, "trusted": True, "note": self.note}
        t0 = time.perf_counter()
        est = finite_gap(AveragingOperator(self.generators, model, orbitwise=True))
        return est.c, {"gap_source": self.kind, "trusted": False, "gap_method": est.method,
                       "orbitwise": True, "gap_seconds": round(time.perf_counter() - t0, 3)}


def finite_gap_source(Q: GeneratorSet) -> GapSource:
    return GapSource(Q)


def trusted_gap_source(Q: GeneratorSet, c: float, note: str = "") -> GapSource:
    return GapSource(Q, "trusted-constant", c, note)


def choose_eta(mass_A, T_size: int, margin: float = ETA_MARGIN) -> float:
    """η strictly below min(μ(A)/3, 1/(2|T|)) (μ normalized to a probability)."""
    return margin * min(float(mass_A) / 3, 1 / (2 * T_size))


def covering_witness(model, T: GeneratorSet, A: SampledSet, target: SampledSet):
    """A point of ``target`` not in T.A, or None."""
    reached = model.saturate_set(T, A)
    miss = np.flatnonzero(target.mask & ~reached.mask)
    return int(miss[0]) if len(miss) else None


def random_test_family(model: ExactModel, C: SampledSet, n: int, rng: np.random.Generator) -> list:
    """Seeded test sets inside C: random boxes and random subsets of varying density."""
    out = []
    for k in range(n):
        if k % 2 == 0:
            lo = [Fraction(int(v), 1000) for v in rng.integers(0, 800, 2)]
            hi = [min(a + Fraction(int(v), 1000), Fraction(1)) for a, v in zip(lo, rng.integers(50, 500, 2))]
            out.append(model.contains(Box(tuple(lo), tuple(hi))) & C)
        else:
            dens = 10 ** rng.uniform(-2, -0.3)
            out.append(model.from_mask(C.mask & (rng.random(model.n) < dens)))
    return out


# ------------------------------------------------------------------ pipeline


def equidecompose(model: ExactModel, A, B, coverT: GeneratorSet, gap_source: GapSource, eta: float | None = None,
                  stage_cap: int | None = None, threshold=0, tests: int = 12, seed: int = 0,
                  word_cap: int = 400_000, check_expansion: bool = True) -> EquidecompositionCertificate:
    """Equidecompose A and B on an exact model.

    η below min(μ(A)/3, 1/(2|T|)); l from the gap; R = Q^l ∪ {e}; S = TR ∪ RT;
    doubled model when A and B meet; staged matching; independent validation.
    """
    t_start = time.perf_counter()
    A = A if isinstance(A, SampledSet) else model.contains(A)
    B = B if isinstance(B, SampledSet) else model.contains(B)
    mA, _ = model.measure(A)
    mB, _ = model.measure(B)
    if mA != mB:
        raise MeasureMismatch(f"measures differ: μ(A) = {mA}, μ(B) = {mB}")
    if not coverT.contains_identity() or not coverT.check_symmetric():
        raise PipelineError("covering set T must be symmetric and contain the identity")
    for X, Y, tag in ((A, B, "B in T.A"), (B, A, "A in T.B")):
        w = covering_witness(model, coverT, X, Y)
        if w is not None:
            raise CoveringError(f"covering fails ({tag}) at point {model.points[w].tolist()}", w)
    meta = {"kind": "equidecompose", "model": model.kind, "n": model.n, "mass_A": str(mA), "T_size": len(coverT)}
    if eta is None:
        eta = choose_eta(Fraction(mA) / Fraction(model.total_mass), len(coverT))
    Q = gap_source.generators
    c, gap_meta = gap_source.gap(model)
    meta.update(gap_meta)
    meta.update({"eta": eta, "gap": c})
    if not c > 0:
        raise ExpansionFailure(f"no spectral gap (c = {c})")
    l = l_for_growth(c, eta, len(Q))
    t0 = time.perf_counter()
    R = word_products(Q, l, cap=word_cap).with_identity()
    meta.update({"word_length": l, "R_size": len(R), "words_seconds": round(time.perf_counter() - t0, 3)})
    C = A | B
    if check_expansion:
        rng = np.random.default_rng(seed)
        family = random_test_family(model, C, tests, rng)
        if isinstance(model, RationalTorus):
            sat = (lambda U: walk_saturate(model, Q, l, U, with_identity=True))
        else:
            sat = None
        rep = verify_expansion(model, C, R, eta, family, saturator=sat)
        meta["expansion"] = {"tests": len(rep.records), "passed": rep.passed, "worst_margin": rep.worst_margin}
        if not rep.passed:
            bad = next(i for i, r in enumerate(rep.records) if not r.passed)
            raise ExpansionFailure(f"R is not η-expanding on test set {bad}", rep, family[bad])
    t0 = time.perf_counter()
    S = set_union([(coverT, R), (R, coverT)], "S")
    meta.update({"S_size": len(S), "S_bound": 2 * len(coverT) * len(R)})
    if A.isdisjoint(B):
        GA, GB, GS = A, B, S
        doubled = False
    else:
        prob = disjointify(A, B, S)
        GA, GB, GS = prob.A, prob.B, prob.S
        doubled = True
    G = bipartite_graphing(GA, GB, GS)
    meta.update({"doubled": doubled, "edges": G.n_edges, "collapsed": G.collapsed,
                 "graph_seconds": round(time.perf_counter() - t0, 3)})
    t0 = time.perf_counter()
    M, reports = run_to_completion(G, max_stage=stage_cap)
    meta.update({"stages": len(reports), "matching_seconds": round(time.perf_counter() - t0, 3),
                 "stage_unmatched": [str(r.unmatched_left_mass) for r in reports]})
    mc = extract_equidecomposition(G, M, threshold=threshold)
    pieces = [CertPiece(p.left_ids, p.right_ids, GS.elements[p.label], GS.word(p.label), p.label)
              for p in mc.pieces]
    alph = {Q.name: Q, coverT.name: coverT}
    cert = EquidecompositionCertificate(G.model, GA, GB, pieces, mc.residue_left, mc.residue_right,
                                        "exact", meta, alph)
    if doubled:
        cert = project_certificate(cert, A, B)
    meta["piece_count"] = cert.piece_count
    cert.validation = validate_certificate(cert, threshold)
    meta["total_seconds"] = round(time.perf_counter() - t_start, 3)
    cert.metadata = meta
    return cert


# -------------------------------------------------------- reduction to open C


def _shrink_to_disjoint(model, C_open: Predicate, T: GeneratorSet, max_halvings: int = 40) -> Predicate:
    """C ⊆ C' with the translates γ.C, γ ∈ T, pairwise disjoint on the model."""
    def ok(P):
        m = model.contains(P).mask
        if not m.any():
            return False
        seen = np.zeros(model.n, bool)
        for g in T.elements:
            img = model.action(g)[m]
            if np.any(img < 0) or seen[img].any():
                return False
            seen[img] = True
        return True
    if ok(C_open):
        return C_open
    pts = model.contains(C_open).indices()
    if not len(pts):
        raise PipelineError("C' has no model points")
    mid = model.coords[pts[len(pts) // 2]]
    center = tuple(Fraction(int(v), model.den) for v in mid)
    r = Fraction(int(np.max(np.abs(model.coords[pts] - mid))) + 1, model.den)
    for _ in range(max_halvings):
        r /= 2
        P = Intersection((C_open, Ball(center, r)))
        if ok(P):
            return P
    raise PipelineError("could not shrink C' to a set with disjoint translates")


def reduce_to_open(A: Predicate, T: GeneratorSet, C_open: Predicate, model: ExactModel
                   ) -> EquidecompositionCertificate:
    """A ~ A' ⊔ C with k+2 pieces for T = {γ_0 = e, γ_1, …, γ_k}.

    C ⊆ C' is shrunk until its T-translates are disjoint; then
    A_i = (γ_i.C ∩ A) minus the union over j < i of γ_iγ_j^-1.A_j, A' = A minus all A_i,
    and the pieces move by γ_i^-1 (A' stays).
    """
    els = list(T.elements)
    if not T.check_symmetric():
        raise PipelineError("T must be symmetric")
    e_pos = next((i for i, g in enumerate(els) if is_identity(g)), None)
    if e_pos is None:
        raise PipelineError("T must contain the identity")
    order = [e_pos] + [i for i in range(len(els)) if i != e_pos]
    gam = [els[i] for i in order]
    Aset = model.contains(A)
    Cp = model.contains(C_open)
    w = covering_witness(model, T, Aset, Cp)
    if w is not None:
        raise CoveringError(f"C' is not covered by T.A: point {model.points[w].tolist()} is not reached", w)
    C = _shrink_to_disjoint(model, C_open, T)
    preds = []
    for i, g in enumerate(gam):
        P = Intersection((Image(C, g), A))
        if i:
            P = P - Union(tuple(Image(preds[j], compose(g, inverse(gam[j]))) for j in range(i)))
        preds.append(P)
    A_rest = A - Union(tuple(preds))
    masks = [model.contains(P).mask for P in preds]
    # the same pieces by direct set algebra on masks, as a cross-check
    algebra = []
    Cm = model.contains(C).mask
    for i, g in enumerate(gam):
        m = np.zeros(model.n, bool)
        m[model.action(g)[Cm]] = True
        m &= Aset.mask
        for j in range(i):
            h = compose(g, inverse(gam[j]))
            moved = np.zeros(model.n, bool)
            idx = model.action(h)[algebra[j]]
            moved[idx[idx >= 0]] = True
            m &= ~moved
        algebra.append(m)
    if any(not np.array_equal(a, b) for a, b in zip(masks, algebra)):
        raise PipelineError("predicate pieces disagree with direct set algebra")
    rest = model.contains(A_rest).mask
    pieces = []
    for i, (g, m) in enumerate(zip(gam, masks)):
        gi = inverse(g)
        pts = np.flatnonzero(m)
        img = model.action(gi)[pts]
        pieces.append(CertPiece(pts, img, gi, Word.letter(T.name, order[i], True), order[i]))
    e = gam[0]
    pts = np.flatnonzero(rest)
    pieces.append(CertPiece(pts, pts.copy(), e, Word(), -1))
    target = model.from_mask(rest | Cm)
    empty = np.zeros(0, np.int64)
    meta = {"kind": "reduce-open", "T_size": len(T), "pieces": len(pieces), "C_points": int(Cm.sum()),
            "C_predicate": C.to_json(), "piece_predicates": [P.to_json() for P in preds + [A_rest]]}
    cert = EquidecompositionCertificate(model, Aset, target, pieces, empty, empty, "exact", meta, {T.name: T})
    cert.validation = validate_certificate(cert)
    # ⋃ γ_i^-1.A_i = C
    back = np.zeros(model.n, bool)
    for p in pieces[:-1]:
        back[p.image] = True
    meta["pullback_equals_C"] = bool(np.array_equal(back, Cm))
    return cert


def default_torus_instance():
    """Equal-mass torus sets: A the left half, B a checkerboard of 1/2 × 1/4 cells.

    Returns (A, B, shifts); the cover set {e, ±(1/2, 0)} carries each set onto
    a superset of the other.
    """
    h = Fraction(1, 2)
    A = Box((0, 0), (h, 1))
    B = Union(tuple(Box((Fraction(i, 2), Fraction(j, 4)), (Fraction(i + 1, 2), Fraction(j + 1, 4)))
                    for i in range(2) for j in range(4) if (i + j) % 2 == 0))
    return A, B, [(h, 0)]


def cover_set(q: int, shifts) -> GeneratorSet:
    """Symmetric set {e} ∪ {±s} of torus translations reduced mod q."""
    els = [identity(2, TORUS, q)]
    for s in shifts:
        t = tuple(Fraction(x) for x in s)
        for sign in (1, -1):
            g = torus_map(((1, 0), (0, 1)), tuple(sign * x for x in t), q)
            if all(g.key() != h.key() for h in els):
                els.append(g)
    return GeneratorSet(tuple(els), name="T", symmetric=True)


def planar_reduction_instance(q: int = 8):
    """Grid example with |T| = 5: A the unit square, C' an L-shape over its top-right corner.

    Returns (model, A, T, C_open).  Each arm of the L is reached from A by
    one unit translation, the corner square lies in A.
    """
    model = PlaneGrid(q, (-2 * q, -2 * q), (3 * q, 3 * q))
    one, half = Fraction(1), Fraction(1, 2)
    T = GeneratorSet((identity(2, RIGID), translation((one, 0)), translation((-one, 0)),
                      translation((0, one)), translation((0, -one))), name="T", symmetric=True)
    A = Box((0, 0), (1, 1))
    C_open = Union((Box((half, half), (Fraction(3, 2), one)), Box((half, one), (one, Fraction(3, 2)))))
    return model, A, T, C_open
