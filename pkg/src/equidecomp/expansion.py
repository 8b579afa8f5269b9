"""Averaging operators, spectral gaps and empirical expansion checks.

On a finite model the averaging operator (T f)(x) = mean_γ f(γ.x) is a
sparse matrix.  Finite actions are rarely ergodic (on the torus the origin
is fixed, and for composite q the points split by the gcd of their
coordinates).  By default "mean zero" means orthogonal to the constants of
the whole domain, so a non-ergodic action has gap 0.  With ``orbitwise``
the mean-zero space is taken orthogonal to every function that is constant
on orbits instead.  The gap is 1 minus the operator norm there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, eigsh

from .bounds import free_word_count, free_word_count_bound
from .group import GeneratorSet, WordSetTooLarge, as_torus_array, l_for_growth, word_products
from .predicates import Predicate
from .space import ExactModel, ModelError, RationalTorus, SampledSet, SpaceModel

POWER_RESTARTS = 10
POWER_ITERATIONS = 500
POWER_TOL = 1e-9


class ExpansionError(ValueError):
    pass


@dataclass(eq=False)
class AveragingOperator:
    """T_Q on an exact model, optionally restricted to a Q-invariant domain."""
    Q: GeneratorSet
    model: SpaceModel
    domain: np.ndarray | None = None   # model indices; None means all points
    orbitwise: bool = False

    def __post_init__(self):
        if not self.model.exact:
            raise ModelError("averaging operators need an exact model")
        n = self.model.n
        idx = self.domain if self.domain is not None else np.arange(n)
        self.domain = np.asarray(idx, np.int64)
        pos = np.full(n, -1, np.int64)
        pos[self.domain] = np.arange(len(self.domain))
        if isinstance(self.model, RationalTorus):
            acts = self.model.actions(self.Q)
        else:
            acts = np.stack([self.model.action(g) for g in self.Q.elements]) if len(self.Q) else \
                np.zeros((0, n), np.int64)
        imgs = acts[:, self.domain]
        if np.any(imgs < 0) or np.any(pos[imgs] < 0):
            raise ModelError("domain is not invariant under Q")
        self.perms = pos[imgs]                      # (|Q|, m)
        m = len(self.domain)
        k = len(self.Q)
        rows = np.tile(np.arange(m), k)
        self.matrix = sp.csr_matrix((np.full(k * m, 1.0 / k), (rows, self.perms.ravel())), shape=(m, m))
        self._orbits = None

    @property
    def size(self) -> int:
        return len(self.domain)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def apply_exact(self, f: Sequence[Fraction]) -> list[Fraction]:
        k = len(self.Q)
        return [sum((f[j] for j in self.perms[:, i]), Fraction(0)) / k for i in range(self.size)]

    def orbits(self) -> np.ndarray:
        """Orbit label per domain point (connected components of the action graph).

        Without ``orbitwise`` the whole domain counts as a single class.
        """
        if self._orbits is None:
            if self.orbitwise:
                _, lab = connected_components(self.matrix, directed=True, connection="weak")
            else:
                lab = np.zeros(self.size, np.int64)
            self._orbits = lab
        return self._orbits

    def deflate(self, f: np.ndarray) -> np.ndarray:
        """Remove the class means of f (projection onto the mean-zero space)."""
        lab = self.orbits()
        cnt = np.bincount(lab)
        if f.ndim == 1:
            means = np.bincount(lab, weights=f) / cnt
            return f - means[lab]
        out = np.empty_like(f)
        for j in range(f.shape[1]):
            means = np.bincount(lab, weights=f[:, j]) / cnt
            out[:, j] = f[:, j] - means[lab]
        return out

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_symmetric(self) -> bool:
        return abs(self.matrix - self.matrix.T).max() == 0 if self.size else True


@dataclass
class GapEstimate:
    c: float
    norm: float
    residual: float
    iterations: int
    restarts: int
    method: str

    def to_json(self):
        return dict(self.__dict__)


def estimate_gap(op: AveragingOperator, trials: int = POWER_RESTARTS, iterations: int = POWER_ITERATIONS,
                 tol: float = POWER_TOL, seed: int = 0) -> GapEstimate:
    """1 − ‖T‖ on mean-zero functions by power iteration on TᵀT with deflation."""
    rng = np.random.default_rng(seed)
    A = op.matrix
    AT = A.T.tocsr()
    best, best_res, used = 0.0, 0.0, 0
    for _ in range(trials):
        x = op.deflate(rng.standard_normal(op.size))
        nx = np.linalg.norm(x)
        if nx == 0:
            continue
        x /= nx
        prev = None
        rq = 0.0
        it = 0
        for it in range(1, iterations + 1):
            y = AT @ (A @ x)
            y = op.deflate(y)
            rq = float(x @ y)
            ny = np.linalg.norm(y)
            if ny == 0:
                rq = 0.0
                break
            x = y / ny
            if prev is not None and abs(rq - prev) < tol:
                break
            prev = rq
        y = op.deflate(AT @ (A @ x))
        rq = float(x @ y)
        res = float(np.linalg.norm(y - rq * x))
        used = max(used, it)
        if rq > best:
            best, best_res = rq, res
    norm = math.sqrt(max(best, 0.0))
    return GapEstimate(1.0 - norm, norm, best_res, used, trials, "power-iteration")


def dense_gap(op: AveragingOperator) -> GapEstimate:
    """1 − ‖T‖ on mean-zero functions from a dense symmetric eigensolve."""
    if not op.is_symmetric():
        raise ExpansionError("dense gap assumes a symmetric generator multiset")
    Tm = op.dense()
    lab = op.orbits()
    P = np.eye(op.size)
    for o in np.unique(lab):
        members = np.flatnonzero(lab == o)
        P[np.ix_(members, members)] -= 1.0 / len(members)
    ev = np.linalg.eigvalsh(P @ Tm @ P)
    norm = float(np.max(np.abs(ev)))
    return GapEstimate(1.0 - norm, norm, 0.0, 0, 0, "dense-eigvalsh")


def sparse_gap(op: AveragingOperator, k: int = 4) -> GapEstimate:
    """Largest-magnitude eigenvalues of the deflated operator via ARPACK."""
    A = op.matrix

    def mv(x):
        x = np.asarray(x).ravel()
        return op.deflate(A @ op.deflate(x))

    L = LinearOperator((op.size, op.size), matvec=mv, dtype=float)
    ev = eigsh(L, k=k, which="LM", return_eigenvectors=False, tol=1e-12, maxiter=20000,
               v0=op.deflate(np.random.default_rng(1).standard_normal(op.size)))
    norm = float(np.max(np.abs(ev)))
    return GapEstimate(1.0 - norm, norm, 0.0, 0, 0, "eigsh")


def _is_prime(q: int) -> bool:
    return q > 1 and all(q % p for p in range(2, int(q ** 0.5) + 1))


def _primitive_root(p: int) -> int:
    fac = [f for f in range(2, p) if (p - 1) % f == 0 and _is_prime(f)]
    for g in range(2, p):
        if all(pow(g, (p - 1) // f, p) != 1 for f in fac):
            return g
    return 1


def character_block_spectrum(Q: GeneratorSet, p: int) -> list[np.ndarray]:
    """Spectrum of T_Q on nonzero vectors of F_p^2 for linear Q, split by F_p^* characters.

    Functions with f(λv) = χ(λ) f(v) form a (p+1)-dimensional invariant
    space indexed by the projective line; T_Q acts on it by a Hermitian
    matrix.  Returns one eigenvalue array per character (trivial first).
    """
    if not _is_prime(p):
        raise ExpansionError("character blocks need prime q")
    mats = as_torus_array(Q, p)
    if np.any(mats.trans != 0):
        raise ExpansionError("character blocks need linear (translation-free) maps")
    # projective line representatives: (1, t) for t in F_p, and (0, 1)
    reps = [(1, t) for t in range(p)] + [(0, 1)]

    def line_of(v):
        a, b = v
        if a % p:
            inv = pow(a, -1, p)
            return b * inv % p, a % p           # line (1, b/a), scalar a
        return p, b % p                           # line (0, 1), scalar b

    g = _primitive_root(p)
    dlog = np.zeros(p, np.int64)
    x = 1
    for k in range(p - 1):
        dlog[x] = k
        x = x * g % p
    k_q = len(Q)
    target = np.zeros((k_q, p + 1), np.int64)
    logs = np.zeros((k_q, p + 1), np.int64)
    for j in range(k_q):
        M = mats.mats[j].tolist()
        for i, r in enumerate(reps):
            v = ((M[0][0] * r[0] + M[0][1] * r[1]) % p, (M[1][0] * r[0] + M[1][1] * r[1]) % p)
            line, scal = line_of(v)
            target[j, i] = line
            logs[j, i] = dlog[scal]
    out = []
    for chi in range(p - 1):
        B = np.zeros((p + 1, p + 1), complex)
        phase = np.exp(2j * np.pi * chi * logs / (p - 1))
        for j in range(k_q):
            np.add.at(B, (np.arange(p + 1), target[j]), phase[j] / k_q)
        out.append(np.linalg.eigvalsh(B))
    return out


def prime_torus_gap(Q: GeneratorSet, p: int) -> GapEstimate:
    """Exact (dense, blockwise) gap of T_Q on the nonzero points of the p-grid."""
    blocks = character_block_spectrum(Q, p)
    triv = np.sort(blocks[0])
    # drop one eigenvalue 1 (constants on the single nonzero orbit)
    if abs(triv[-1] - 1.0) > 1e-9:
        raise ExpansionError("trivial block lacks the constant eigenvector")
    rest = [triv[:-1]] + blocks[1:]
    norm = float(max(np.max(np.abs(b)) for b in rest if len(b)))
    return GapEstimate(1.0 - norm, norm, 0.0, 0, 0, "character-blocks")


def punctured_domain(model: RationalTorus) -> np.ndarray:
    return np.arange(1, model.n)


def finite_gap(op: AveragingOperator) -> GapEstimate:
    """Exact finite-model gap: dense up to 2500 points, blockwise for prime grids, else ARPACK."""
    if op.size <= 2500:
        return dense_gap(op)
    m = op.model
    if isinstance(m, RationalTorus) and _is_prime(m.q) and op.size == m.n - 1 and op.domain[0] == 1:
        try:
            return prime_torus_gap(op.Q, m.q)
        except ExpansionError:
            pass
    return sparse_gap(op)


def translation_gap_closed_form(q: int) -> float:
    """Gap of the ±1/q axis translations on the q-grid: 1 − max |(cos 2πa/q + cos 2πb/q)/2|."""
    a = np.arange(q)
    c = np.cos(2 * np.pi * a / q)
    lam = (c[:, None] + c[None, :]) / 2
    lam[0, 0] = 0.0
    return float(1.0 - np.max(np.abs(lam)))


# ----------------------------------------------------------------- edge statistics


@dataclass
class EdgeStatistics:
    m: Fraction
    p11: Fraction
    p00: Fraction
    p10: Fraction
    p01: Fraction

    def to_json(self):
        return {k: str(v) for k, v in self.__dict__.items()}


def edge_statistics(model: ExactModel, Q: GeneratorSet, Y: SampledSet, domain=None) -> EdgeStatistics:
    """Exact transition fractions for (x, γ) uniform on domain × Q.

    p10 is the fraction of pairs with x ∈ Y and γ.x ∉ Y.
    """
    op = AveragingOperator(Q, model, domain)
    inY = Y.mask[op.domain]
    k = len(Q)
    n = op.size
    tgt = inY[op.perms]                 # (|Q|, n)
    src = np.broadcast_to(inY, tgt.shape)
    tot = n * k
    n11 = int(np.count_nonzero(src & tgt))
    n10 = int(np.count_nonzero(src & ~tgt))
    n01 = int(np.count_nonzero(~src & tgt))
    n00 = tot - n11 - n10 - n01
    return EdgeStatistics(Fraction(int(inY.sum()), n), Fraction(n11, tot), Fraction(n00, tot),
                          Fraction(n10, tot), Fraction(n01, tot))


def boundary_lower_bound(stats: EdgeStatistics, Q_size: int) -> Fraction:
    """Certified lower bound p10/|Q| on the normalized mass of Q.Y ∖ Y."""
    return stats.p10 / Q_size


def one_step_growth(model: ExactModel, Q: GeneratorSet, Y: SampledSet, domain=None) -> Fraction:
    """Normalized mass of Q.Y ∖ Y inside the domain."""
    op = AveragingOperator(Q, model, domain)
    inY = Y.mask[op.domain]
    grown = np.zeros(op.size, bool)
    for j in range(len(Q)):
        grown[op.perms[j][inY]] = True
    return Fraction(int(np.count_nonzero(grown & ~inY)), op.size)


# --------------------------------------------------------------- expanding sets


def word_count_free(size: int, l: int):
    """Number of distinct products of exactly l letters in a free symmetric set of given size.

    Exact integer up to ``EXACT_COUNT_MAX_L``; beyond that a ``BigBound`` upper bound.
    """
    if l <= EXACT_COUNT_MAX_L:
        return free_word_count(size, l)
    return free_word_count_bound(size, l)


EXACT_COUNT_MAX_L = 10_000


@dataclass
class SymbolicWordSet:
    """Products of exactly ``length`` letters of Q, not enumerated."""
    Q: GeneratorSet
    length: int
    size_bound: object      # int or BigBound

    def __len__(self):
        if not isinstance(self.size_bound, int):
            raise OverflowError("word set size is only known as a bound")
        return self.size_bound


def build_expander(Q: GeneratorSet, c: float, eta: float, cap: int = 200_000, symbolic: bool = False):
    """(l, R) with l minimal such that (1 + cη/|Q|)^l > 1/η and R the length-l products."""
    if not (0 < eta < 1):
        raise ExpansionError("eta must lie in (0, 1)")
    if not (0 < c < 1):
        raise ExpansionError("c must lie in (0, 1)")
    if not Q.symmetric:
        raise ExpansionError("Q must be symmetric")
    l = l_for_growth(c, eta, len(Q))
    try:
        return l, word_products(Q, l, cap=cap)
    except WordSetTooLarge:
        if not symbolic:
            raise
        return l, SymbolicWordSet(Q, l, word_count_free(len(Q), l))


def walk_saturate(model: RationalTorus, Q: GeneratorSet, l: int, U: SampledSet, with_identity: bool = False
                  ) -> SampledSet:
    """Points reached from U by walks of exactly l steps (the set Q^l.U), optionally ∪ U.

    Level sets become periodic with period 2 after finitely many steps, which
    allows jumping ahead for large l.
    """
    acts = model.actions(Q)
    cur = U.mask.copy()
    hist = [cur]
    k = 0
    while k < l:
        nxt = np.zeros(model.n, bool)
        src = np.flatnonzero(cur)
        for row in acts:
            nxt[row[src]] = True
        cur = nxt
        k += 1
        hist.append(cur)
        if k >= 2 and np.array_equal(hist[k], hist[k - 2]):
            if (l - k) % 2:
                cur = hist[k - 1]
            break
    if with_identity:
        cur = cur | U.mask
    return SampledSet(model, cur)


@dataclass
class ExpansionRecord:
    mass_U: object
    mass_saturated: object
    required: object
    radius: float
    passed: bool

    @property
    def margin(self) -> float:
        return float(self.mass_saturated) + self.radius - float(self.required)


@dataclass
class ExpansionReport:
    eta: float
    R_size: int
    records: list
    passed: bool

    @property
    def worst_margin(self) -> float:
        return min((r.margin for r in self.records), default=math.inf)

    def to_json(self) -> dict:
        return {
            "eta": self.eta,
            "R_size": self.R_size,
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "records": [{"mass_U": str(r.mass_U), "mass_saturated": str(r.mass_saturated),
                         "required": str(r.required), "radius": r.radius, "passed": r.passed}
                        for r in self.records],
        }

    def plot_rows(self) -> list[tuple[float, float]]:
        return [(float(r.mass_U), float(r.mass_saturated)) for r in self.records]


def verify_expansion(model: SpaceModel, C, R, eta: float, family, saturator=None) -> ExpansionReport:
    """Check μ(R.U ∩ C) ≥ min((1−η)μ(C), μ(U)/η) for U = P ∩ C over the family.

    ``saturator(U)`` may replace explicit saturation (for symbolic R).
    """
    C = C if isinstance(C, SampledSet) else model.contains(C)
    mC, _ = model.measure(C)
    exact = model.exact
    eta_q = Fraction(eta).limit_denominator(10 ** 12) if exact else eta
    records = []
    for P in family:
        U = (model.contains(P) if isinstance(P, Predicate) else P) & C
        mU, _ = model.measure(U)
        if saturator is not None:
            sat = saturator(U) & C
            mS, rad = model.measure(sat)
        else:
            mS, rad = model.saturate(R, U, C)
        req = min((1 - eta_q) * mC, mU / eta_q)
        ok = mS + rad >= req
        records.append(ExpansionRecord(mU, mS, req, float(rad), bool(ok)))
    return ExpansionReport(float(eta), len(R) if R is not None else 0, records,
                           all(r.passed for r in records))
