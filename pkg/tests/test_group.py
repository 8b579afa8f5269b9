import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from equidecomp.group import (RIGID, TORUS, GeneratorSet, GroupElement, GroupError, Word,
                              apply, compose, identity, inverse, is_identity, l_for_growth,
                              lps_generators, quarter_turn, quaternion_rotation, rigid_motion,
                              set_product, set_union, sl2_generators, torus_map, torus_translations,
                              translation, word_products)
from equidecomp.geometry import stacking_diffuser

fracs = st.fractions(min_value=-3, max_value=3, max_denominator=12)
sl2_mats = st.sampled_from([((0, -1), (1, 0)), ((0, 1), (-1, 0)), ((1, 1), (0, 1)), ((1, -1), (0, 1)),
                            ((2, 1), (1, 1)), ((1, 0), (3, 1))])


@st.composite
def rigid_elements(draw):
    a, b, c, d = draw(st.tuples(*[st.integers(-3, 3)] * 4).filter(lambda t: any(t)))
    g = quaternion_rotation(a, b, c, d)
    t = tuple(draw(fracs) for _ in range(3))
    return GroupElement(g.linear, t, RIGID)


@st.composite
def torus_elements(draw, q=None):
    m = draw(sl2_mats)
    t = (draw(fracs), draw(fracs)) if q is None else \
        (Fraction(draw(st.integers(0, q - 1)), q), Fraction(draw(st.integers(0, q - 1)), q))
    return GroupElement(m, t, TORUS, q)


def naive_compose(g, h):
    """Composition through homogeneous (d+1)x(d+1) matrices of Fractions."""
    def hom(x):
        d = x.dim
        m = [[Fraction(v) for v in row] + [Fraction(t)] for row, t in zip(x.linear, x.translation)]
        return m + [[Fraction(0)] * d + [Fraction(1)]]
    a, b = hom(g), hom(h)
    n = len(a)
    c = [[sum(a[i][k] * b[k][j] for k in range(n)) for j in range(n)] for i in range(n)]
    return [row[:-1] for row in c[:-1]], [row[-1] for row in c[:-1]]


@given(rigid_elements(), rigid_elements(), rigid_elements())
def test_associativity(g, h, k):
    assert compose(compose(g, h), k) == compose(g, compose(h, k))


@given(rigid_elements(), rigid_elements(), st.tuples(fracs, fracs, fracs))
def test_apply_respects_composition(g, h, x):
    assert apply(compose(g, h), x) == apply(g, apply(h, x))


@given(torus_elements(), torus_elements(), st.tuples(fracs, fracs))
def test_torus_apply_respects_composition(g, h, x):
    assert apply(compose(g, h), x) == apply(g, apply(h, x))


@given(rigid_elements(), rigid_elements())
def test_compose_matches_homogeneous_matrices(g, h):
    lin, tr = naive_compose(g, h)
    gh = compose(g, h)
    assert [list(r) for r in gh.linear] == lin
    assert list(gh.translation) == tr


@given(rigid_elements())
def test_inverse_is_two_sided(g):
    assert is_identity(compose(g, inverse(g)))
    assert is_identity(compose(inverse(g), g))


@given(torus_elements(q=7))
def test_modular_inverse(g):
    assert is_identity(compose(g, inverse(g)))


@given(rigid_elements(), st.tuples(fracs, fracs, fracs), st.tuples(fracs, fracs, fracs))
def test_rigid_motions_preserve_distance(g, x, y):
    gx, gy = apply(g, x), apply(g, y)
    assert sum((a - b) ** 2 for a, b in zip(gx, gy)) == sum((a - b) ** 2 for a, b in zip(x, y))


@given(st.tuples(*[st.integers(-4, 4)] * 4).filter(lambda t: any(t)), st.tuples(fracs, fracs, fracs))
def test_rotations_preserve_norm(quat, x):
    g = quaternion_rotation(*quat)
    assert sum(v * v for v in apply(g, x)) == sum(v * v for v in x)


def test_rotation_validation():
    with pytest.raises(GroupError):
        rigid_motion(((2, 0, 0), (0, 1, 0), (0, 0, 1)), (0, 0, 0))
    with pytest.raises(GroupError):
        torus_map(((2, 0), (0, 1)))
    with pytest.raises(GroupError):
        GroupElement(((1, 0), (0, 1)), (0, 0, 0))


def test_torus_example():
    g = torus_map(((1, 1), (0, 1)), (Fraction(1, 2), 0))
    assert apply(g, (Fraction(1, 3), Fraction(1, 3))) == (Fraction(1, 6), Fraction(1, 3))


def test_quarter_turn_order_four():
    r = quarter_turn(3)
    g = identity(3)
    powers = []
    for _ in range(4):
        g = compose(r, g)
        powers.append(is_identity(g))
    assert powers == [False, False, False, True]


@pytest.mark.parametrize("n", [2, 3, 4])
def test_stacking_diffuser_order_four(n):
    g = stacking_diffuser(n)
    x = identity(n, RIGID)
    for k in range(1, 5):
        x = compose(g, x)
        assert is_identity(x) == (k == 4)
    # the unit cube is mapped onto itself
    for corner in itertools.product((0, 1), repeat=n):
        y = apply(g, tuple(Fraction(c) for c in corner))
        assert all(0 <= v <= 1 for v in y)


def test_lps_generators_symmetric():
    Q = lps_generators()
    assert len(Q) == 6 and Q.check_symmetric()
    inv = Q.inverse_index()
    assert inv == [1, 0, 3, 2, 5, 4]
    for g in Q:
        assert all(Fraction(x).denominator in (1, 5) for row in g.linear for x in row)


def _reduced_word_count(l):
    """Reduced words of length exactly l over 3 generators and their inverses."""
    letters = range(6)
    count = 0
    for w in itertools.product(letters, repeat=l):
        if all(w[i + 1] != (w[i] ^ 1) for i in range(l - 1)):
            count += 1
    return count


def _products_brute(Q, l):
    """Distinct l-fold products by integer matrix multiplication (entries scaled by 5^l)."""
    mats = [np.array([[int(x * 5) for x in row] for row in g.linear], dtype=object) for g in Q]
    seen = set()
    for w in itertools.product(range(len(mats)), repeat=l):
        m = np.identity(3, dtype=object)
        for i in w:
            m = m.dot(mats[i])
        seen.add(tuple(m.ravel()))
    return len(seen)


@pytest.mark.parametrize("l,expected", [(1, 6), (2, 31), (3, 156), (4, 781)])
def test_lps_word_product_counts(l, expected):
    Q = lps_generators()
    P = word_products(Q, l)
    assert len(P) == expected
    assert len(P) == _products_brute(Q, l)
    # the group is free: products of length l are the reduced words of length l, l-2, ...
    assert len(P) == sum(_reduced_word_count(k) for k in range(l, -1, -2))
    assert _reduced_word_count(3) == 150 == 6 * 5 ** 2


@pytest.mark.parametrize("l", [1, 2, 3, 5, 8])
def test_word_products_symmetric_and_bounded(l):
    Q = sl2_generators(7)
    P = word_products(Q, l)
    assert P.check_symmetric()
    assert len(P) <= len(Q) ** l
    for i in range(0, len(P), max(1, len(P) // 25)):
        w = P.word(i)
        assert len(w) == l
        assert w.evaluate({"Q": Q}) == P[i]


def test_sl2_mod7_order():
    Q = sl2_generators(7)
    # alternating parity classes together give all of SL(2, Z/7), order 336
    P = set_union([(word_products(Q, 30), None), (word_products(Q, 31), None)])
    assert len(P) == 336


def test_word_products_padding_matches_direct():
    Q = torus_translations(5, 5)
    long = word_products(Q, 41)
    direct = word_products(Q, 9)
    assert sorted(g.key() for g in long) == sorted(g.key() for g in direct)


def test_word_roundtrip():
    w = Word((("Q", 3, False), ("T", 0, True), ("Q", 12, False)))
    assert Word.from_tokens(w.tokens()) == w
    assert w.inverse().inverse() == w


def test_word_evaluate_inverse():
    Q = lps_generators()
    w = Word((("Q", 0, False), ("Q", 2, False), ("Q", 5, True)))
    g = w.evaluate({"Q": Q})
    assert is_identity(compose(g, w.inverse().evaluate({"Q": Q})))


def test_generator_set_json_roundtrip():
    for Q in (lps_generators(), sl2_generators(11), torus_translations(8)):
        R = GeneratorSet.loads(Q.dumps())
        assert list(R.elements) == list(Q.elements)
        assert R.check_symmetric() == Q.check_symmetric()


def test_set_product_words():
    Q = sl2_generators(5)
    T = GeneratorSet((identity(2, TORUS, 5), translation((Fraction(1, 5), 0), TORUS, 5),
                      translation((Fraction(4, 5), 0), TORUS, 5)), name="T")
    P = set_product(T, Q)
    keys = {compose(t, g).key() for t in T for g in Q}
    assert {g.key() for g in P} == keys
    alph = {"Q": Q, "T": T}
    for i in range(len(P)):
        assert P.word(i).evaluate(alph) == P[i]


def test_with_identity():
    Q = sl2_generators(5)
    R = word_products(Q, 3).with_identity()
    assert R.contains_identity()
    assert R.check_symmetric()


def test_l_for_growth_definition():
    for c, eta, k in [(0.05, 0.1, 4), (1 - 5 ** 0.5 / 3, 1 / 6, 6), (0.3, 0.01, 8)]:
        l = l_for_growth(c, eta, k)
        assert (1 + c * eta / k) ** l > 1 / eta
        assert (1 + c * eta / k) ** (l - 1) <= 1 / eta
    assert l_for_growth(1 - 5 ** 0.5 / 3, 1 / 6, 6) == 255
