import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equidecomp.expansion import (AveragingOperator, ExpansionError, SymbolicWordSet, boundary_lower_bound,
                                  build_expander, dense_gap, edge_statistics, estimate_gap, finite_gap,
                                  one_step_growth, prime_torus_gap, punctured_domain, sparse_gap,
                                  translation_gap_closed_form, verify_expansion, walk_saturate,
                                  word_count_free)
from equidecomp.group import (TORUS, GeneratorSet, compose, identity, l_for_growth, sl2_generators,
                              torus_translations, word_products)
from equidecomp.predicates import Box
from equidecomp.space import RationalTorus

# frozen from a dense symmetric eigensolve (q = 32) and the character-block solver (q = 61, 101)
FROZEN_GAPS = {32: 0.02481840367510635, 61: 0.018844, 101: 0.018853}


def _fractions(r, n):
    return [Fraction(int(v), 7) for v in r.integers(-20, 20, n)]


@given(st.integers(2, 9), st.integers(0, 10 ** 6))
def test_operator_fixes_constants_and_is_self_adjoint(q, seed):
    T = RationalTorus(q)
    op = AveragingOperator(sl2_generators(), T)
    one = [Fraction(1)] * T.n
    assert op.apply_exact(one) == one
    r = np.random.default_rng(seed)
    f, g = _fractions(r, T.n), _fractions(r, T.n)
    Tf, Tg = op.apply_exact(f), op.apply_exact(g)
    assert sum(a * b for a, b in zip(Tf, g)) == sum(a * b for a, b in zip(f, Tg))
    assert op.is_symmetric()


def test_identity_multiset_has_no_gap():
    T = RationalTorus(5)
    e = identity(2, TORUS)
    op = AveragingOperator(GeneratorSet((e, e)), T)
    assert dense_gap(op).c == pytest.approx(0.0, abs=1e-12)
    assert estimate_gap(op).c == pytest.approx(0.0, abs=1e-9)
    # orbit-relative means leave no mean-zero functions for the identity
    assert len(np.unique(AveragingOperator(GeneratorSet((e, e)), T, orbitwise=True).orbits())) == T.n


def _fourier_gap(q):
    # independent: eigenvalues of the translation walk are (cos 2πa/q + cos 2πb/q)/2
    best = 0.0
    for a in range(q):
        for b in range(q):
            if a or b:
                best = max(best, abs((math.cos(2 * math.pi * a / q) + math.cos(2 * math.pi * b / q)) / 2))
    return 1 - best


@pytest.mark.parametrize("q", [5, 7, 9, 15])
def test_translation_gap_closed_form(q):
    T = RationalTorus(q)
    op = AveragingOperator(torus_translations(q), T)
    assert translation_gap_closed_form(q) == pytest.approx(_fourier_gap(q), abs=1e-14)
    assert dense_gap(op).c == pytest.approx(_fourier_gap(q), abs=1e-10)
    assert estimate_gap(op).c == pytest.approx(_fourier_gap(q), abs=1e-6)


@pytest.mark.parametrize("q", [7, 11, 16])
def test_power_iteration_matches_dense_sl2(q):
    op = AveragingOperator(sl2_generators(), RationalTorus(q), orbitwise=True)
    assert estimate_gap(op).c == pytest.approx(dense_gap(op).c, abs=1e-6)


def test_sparse_matches_dense():
    op = AveragingOperator(sl2_generators(), RationalTorus(20), orbitwise=True)
    assert sparse_gap(op).c == pytest.approx(dense_gap(op).c, abs=1e-8)


def test_prime_blocks_match_dense():
    q = 13
    T = RationalTorus(q)
    op = AveragingOperator(sl2_generators(), T, punctured_domain(T))
    assert prime_torus_gap(sl2_generators(), q).c == pytest.approx(dense_gap(op).c, abs=1e-10)


def test_frozen_gaps():
    T = RationalTorus(32)
    op = AveragingOperator(sl2_generators(), T, orbitwise=True)
    assert finite_gap(op).c == pytest.approx(FROZEN_GAPS[32], abs=1e-12)
    # the origin is fixed, so relative to the global mean there is no gap
    assert finite_gap(AveragingOperator(sl2_generators(), T)).c == pytest.approx(0.0, abs=1e-9)
    for p in (61, 101):
        c = prime_torus_gap(sl2_generators(), p).c
        assert c == pytest.approx(FROZEN_GAPS[p], abs=5e-7)
        assert c >= 0.01


def _all_words_multiset(Q, l):
    els = [identity(2, TORUS, Q[0].modulus)]
    for _ in range(l):
        els = [compose(a, g) for a in els for g in Q]
    return GeneratorSet(tuple(els))


@pytest.mark.parametrize("q,l", [(7, 2), (8, 2), (6, 3)])
def test_norm_submultiplicative_over_word_powers(q, l):
    T = RationalTorus(q)
    Q = sl2_generators(q)
    n1 = dense_gap(AveragingOperator(Q, T)).norm
    nl = dense_gap(AveragingOperator(_all_words_multiset(Q, l), T)).norm
    assert nl <= n1 ** l + 1e-10


def test_edge_statistics_trivial_sets():
    T = RationalTorus(6)
    Q = sl2_generators()
    s = edge_statistics(T, Q, T.empty())
    assert (s.p11, s.p10, s.p00) == (0, 0, 1)
    s = edge_statistics(T, Q, T.full())
    assert s.p11 == 1


@given(st.integers(3, 16), st.integers(0, 10 ** 6), st.floats(0.05, 0.95))
def test_edge_statistics_identities(q, seed, dens):
    T = RationalTorus(q)
    Q = sl2_generators()
    Y = T.from_mask(np.random.default_rng(seed).random(T.n) < dens)
    s = edge_statistics(T, Q, Y)
    assert s.p10 == s.p01
    assert s.p11 + s.p00 + 2 * s.p10 == 1
    bound = boundary_lower_bound(s, len(Q))
    assert bound <= one_step_growth(T, Q, Y)


@pytest.mark.parametrize("q", [13, 17])
def test_edge_statistics_inequality_punctured(q):
    T = RationalTorus(q)
    dom = punctured_domain(T)
    c = dense_gap(AveragingOperator(sl2_generators(), T, dom)).c
    r = np.random.default_rng(q)
    for k in range(30):
        Y = T.from_mask(r.random(T.n) < r.uniform(0.02, 0.98))
        s = edge_statistics(T, sl2_generators(), Y, dom)
        assert float(s.p10) >= c * float(s.m) * (1 - float(s.m)) - 1e-12


def _primitive_domain(q):
    T = RationalTorus(q)
    odd = (T.coords % 2 == 1).any(axis=1)
    return T, np.flatnonzero(odd)


def test_edge_statistics_inequality_q64_primitive_orbit():
    T, dom = _primitive_domain(64)
    op = AveragingOperator(sl2_generators(), T, dom)
    assert len(np.unique(op.orbits())) == 1
    c = finite_gap(op).c
    assert c > 0
    r = np.random.default_rng(64)
    for k in range(20):
        Y = T.from_mask(r.random(T.n) < r.uniform(0.05, 0.95))
        s = edge_statistics(T, sl2_generators(), Y, dom)
        assert float(s.p10) >= c * float(s.m) * (1 - float(s.m)) - 1e-12


def test_growth_chaining_against_direct_saturation():
    q = 17
    T = RationalTorus(q)
    dom = punctured_domain(T)
    Q = sl2_generators()
    c = dense_gap(AveragingOperator(Q, T, dom)).c
    U = T.from_indices([1 + q])
    cur = U
    for step in range(6):
        m = Fraction(len(cur), len(dom))
        nxt = T.saturate_set(GeneratorSet(tuple(Q) + (identity(2, TORUS),)), cur)
        grown = Fraction(len(nxt), len(dom))
        if m <= Fraction(1, 2):
            assert float(grown) >= float(m) * (1 + c * (1 - float(m)) / len(Q)) - 1e-12
        cur = nxt


def test_l_boundary_and_example():
    c = 1 - math.sqrt(5) / 3
    l = l_for_growth(c, 1 / 6, 6)
    assert (1 + c / 36) ** l > 6 and (1 + c / 36) ** (l - 1) <= 6
    # η close to 1: a single step suffices once 1 + cη/|Q| > 1/η
    assert l_for_growth(0.9, 0.999, 1) == 1


def test_word_count_bound():
    c = 1 - math.sqrt(5) / 3
    for eta in (0.5, 0.25):
        l = l_for_growth(c, eta, 6)
        bound = 6 * 5 ** (abs(math.log(eta)) / math.log1p(eta / 24))
        assert word_count_free(6, l) < bound


def test_build_expander_and_symbolic():
    Q = sl2_generators(11)
    l, R = build_expander(Q, 0.05, 0.3)
    assert len(R) <= 4 ** l and l == l_for_growth(0.05, 0.3, 4)
    l, R = build_expander(sl2_generators(), 0.05, 0.01, cap=1000, symbolic=True)
    assert isinstance(R, SymbolicWordSet)
    with pytest.raises(ExpansionError):
        build_expander(Q, 0.05, 1.5)


def test_verify_expansion_trivial_cases():
    T = RationalTorus(8)
    C = T.full()
    R = GeneratorSet((identity(2, TORUS),))
    rep = verify_expansion(T, C, R, 1 / 3, [T.empty(), C])
    assert rep.passed
    assert rep.records[0].mass_saturated == 0 and rep.records[1].mass_saturated == 1


def test_verify_expansion_with_built_expander_exhaustive():
    q = 11
    T = RationalTorus(q)
    dom = punctured_domain(T)
    C = T.from_indices(dom)
    Q = sl2_generators(q)
    c = dense_gap(AveragingOperator(Q, T, dom)).c
    eta = 1 / 3
    l, R = build_expander(Q, c, eta)
    family = [T.contains(Box((Fraction(a, 8), 0), (Fraction(a + 1, 8), 1))) for a in range(8)]
    family += [T.contains(Box((0, 0), (Fraction(1, 3), Fraction(1, 5))))]
    rep = verify_expansion(T, C, R, eta, family)
    assert rep.passed
    # the saturations agree with walking the graph l steps
    for P, rec in zip(family, rep.records):
        walked = walk_saturate(T, Q, l, P & C) & C
        assert Fraction(len(walked), T.n) == rec.mass_saturated


def test_verify_expansion_monotone_in_R():
    q = 9
    T = RationalTorus(q)
    C = T.full()
    Q = sl2_generators(q)
    small = word_products(Q, 2)
    big = GeneratorSet(tuple(small) + tuple(word_products(Q, 3)))
    r = np.random.default_rng(1)
    family = [T.from_mask(r.random(T.n) < p) for p in (0.01, 0.05, 0.1, 0.3)]
    for eta in (0.2, 0.4, 0.6):
        a = verify_expansion(T, C, small, eta, family)
        b = verify_expansion(T, C, big, eta, family)
        for ra, rb in zip(a.records, b.records):
            assert rb.mass_saturated >= ra.mass_saturated
            assert not (ra.passed and not rb.passed)


@settings(max_examples=15)
@given(st.integers(3, 12), st.integers(1, 9), st.integers(0, 10 ** 6))
def test_walk_saturate_matches_word_products(q, l, seed):
    T = RationalTorus(q)
    Q = sl2_generators(q)
    U = T.from_mask(np.random.default_rng(seed).random(T.n) < 0.1)
    assert walk_saturate(T, Q, l, U) == T.saturate_set(word_products(Q, l), U)
