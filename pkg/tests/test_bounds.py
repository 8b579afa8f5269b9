import itertools
import json
import math
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, strategies as st

from equidecomp.bounds import (BigBound, all_ledgers, annulus_M, expander_size_bound, free_word_count,
                               free_word_count_bound, growth_exponent, ledgers_json, lps_gap,
                               sphere_remark_bound, tarski_piece_bound)
from equidecomp.space import RHO

coefs = st.fractions(min_value=Fraction(1, 50), max_value=1000, max_denominator=50)
exps = st.integers(-40, 40)


def _value(b):
    return b.coef * Fraction(b.base) ** b.exponent


@given(coefs, exps, coefs, exps)
def test_exact_comparison_matches_rationals(a, m, b, n):
    x, y = BigBound(a, m), BigBound(b, n)
    vx, vy = _value(x), _value(y)
    assert (x < y) == (vx < vy)
    assert (x == y) == (vx == vy)
    assert (x >= y) == (vx >= vy)


@given(coefs, exps, coefs, exps, coefs, exps)
def test_comparison_transitive(a, m, b, n, c, k):
    x, y, z = BigBound(a, m), BigBound(b, n), BigBound(c, k)
    if x <= y and y <= z:
        assert x <= z


@given(coefs, st.integers(0, 60), st.floats(0, 60))
def test_exact_and_float_exponents_agree(a, m, e):
    exact = BigBound(a, m)
    approx = BigBound(a, mpmath.mpf(e))
    ref = float(a) * 5.0 ** m, float(a) * 5.0 ** e
    if abs(math.log(ref[0]) - math.log(ref[1])) > 1e-9:
        assert (exact < approx) == (ref[0] < ref[1])
    assert float(exact) == pytest.approx(ref[0], rel=1e-12)


def test_huge_exponents_exact():
    assert BigBound(38, 90 * 2 ** 60) < BigBound(1, 2 ** 72)
    assert not BigBound(5, 2 ** 72) < BigBound(1, 2 ** 72)
    assert BigBound(6, 277) * 4 == BigBound(24, 277)
    assert BigBound(Fraction(1, 10 ** 50), 2 ** 80) > BigBound(10 ** 50, 2 ** 80 - 200)
    with pytest.raises(ValueError):
        BigBound(0, 3)


def _free_count_brute(size, l):
    """Elements of length l, l-2, ... in the free group on size/2 generators."""
    def reduced(k):
        if k == 0:
            return 1
        return sum(1 for w in itertools.product(range(size), repeat=k)
                   if all(w[i + 1] != (w[i] ^ 1) for i in range(k - 1)))
    return sum(reduced(k) for k in range(l, -1, -2))


@pytest.mark.parametrize("size,l", [(4, 1), (4, 2), (4, 5), (6, 3), (6, 4), (6, 6)])
def test_free_word_count(size, l):
    assert free_word_count(size, l) == _free_count_brute(size, l)
    assert BigBound(free_word_count(size, l), 0) < free_word_count_bound(size, l)


def test_growth_exponent_and_constants():
    assert growth_exponent(0.5) == pytest.approx(abs(math.log(0.5)) / math.log1p(0.5 / 24))
    assert float(lps_gap()) == pytest.approx(1 - math.sqrt(5) / 3, abs=1e-15)
    assert float(annulus_M()) == pytest.approx(4 * math.pi * RHO ** 2, rel=1e-15)


def _row(ledger, name):
    for n, f, v, c in ledger.rows:
        if n == name:
            return v, c
    raise KeyError(name)


@pytest.mark.parametrize("eta", [2 ** -4, 2 ** -8, 2 ** -14])
def test_expander_ledger_chain(eta):
    L = expander_size_bound(eta)
    assert L.passed
    M = 4 * math.pi * RHO ** 2
    assert float(_row(L, "M")[0]) == pytest.approx(M, rel=1e-14)
    assert float(_row(L, "delta stated")[0]) == pytest.approx(eta / (12 * M ** 3), rel=1e-14)
    assert float(_row(L, "beta stated")[0]) == pytest.approx(eta ** 2 / (36 * M ** 5), rel=1e-14)
    final = _row(L, "final bound")[0]
    assert final.coef == 38 and final.base == 5
    stated = 3 * 2 ** 37 * abs(math.log(eta) - 16) / eta ** 2
    assert float(final.exponent) == pytest.approx(stated, rel=1e-14)
    # the informational row records the known gap in the definition-based β
    assert _row(L, "beta from definition exceeds eta^2/2^32 (holds?)") == (False, None)


def test_expander_ledger_eta_one():
    L = expander_size_bound(1)
    assert float(_row(L, "final bound")[0].exponent) == 3 * 2 ** 37 * 16


def test_tarski_ledger():
    L = tarski_piece_bound()
    assert L.passed
    side, ok = _row(L, "small cube side")
    assert float(side) == pytest.approx(math.sqrt(6) / 6, abs=1e-15) and ok
    cnt, ok = _row(L, "|T'| covering count")
    assert float(cnt) == pytest.approx((2 * RHO / (math.sqrt(6) / 6)) ** 3) and float(cnt) < 800 and ok
    assert _row(L, "|T|")[0] == 6400
    assert _row(L, "eta")[0] == Fraction(1, 12800)
    v, ok = _row(L, "38·5^(90·2^60) < 5^(2^72), exact")
    assert ok and BigBound(38, 90 * 2 ** 60) < BigBound(1, 2 ** 72)
    assert _row(L, "exponent gap 2^72 − 90·2^60")[0] == 2 ** 72 - 90 * 2 ** 60
    assert float(_row(L, "exponent at eta=2^-14, log base 2, in units of 2^60")[0]) == pytest.approx(2880)


def test_sphere_ledger():
    L = sphere_remark_bound()
    assert L.passed
    assert _row(L, "l")[0] == 255
    assert _row(L, "|Q^l| (free group count)")[0] == _free_count_brute_formula(255)
    assert _row(L, "pieces ≤ 2|T||R| < 24·5^277")[0] == BigBound(24, 277)
    assert _row(L, "|R| = |Q^l ∪ {e}| < 6·5^277")[0] == BigBound(6, 277)


def _free_count_brute_formula(l):
    # reduced words of length k over 6 letters: 6·5^(k-1); sum over k ≡ l mod 2
    return sum(6 * 5 ** (k - 1) for k in range(l, 0, -2)) + (1 if l % 2 == 0 else 0)


def test_ledger_json_and_markdown():
    doc = json.loads(ledgers_json(2 ** -14))
    assert all(d["passed"] for d in doc)
    md = all_ledgers(2 ** -14)[1].markdown()
    assert md.startswith("### ") and "| constant | formula | value | check |" in md
    assert "FAIL" not in md
