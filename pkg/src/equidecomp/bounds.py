"""Huge size bounds of the form coefficient · base^exponent, and the constant ledgers.

Exponents are exact integers where the formula gives one, otherwise
200-bit mpmath floats.  Integer-exponent comparisons are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import mpmath

PREC_BITS = 200


def _mp():
    return mpmath.workprec(PREC_BITS)


@dataclass(frozen=True)
class BigBound:
    coef: Fraction
    exponent: object          # int or mpmath.mpf
    base: int = 5

    def __post_init__(self):
        c = Fraction(self.coef)
        if c <= 0:
            raise ValueError("coefficient must be positive")
        object.__setattr__(self, "coef", c)
        if isinstance(self.exponent, Fraction) and self.exponent.denominator == 1:
            object.__setattr__(self, "exponent", int(self.exponent))

    @property
    def exact(self) -> bool:
        return isinstance(self.exponent, int)

    def log_base(self):
        """log_base of the value, as a 200-bit float."""
        with _mp():
            return mpmath.log(mpmath.mpf(self.coef.numerator) / self.coef.denominator, self.base) + \
                mpmath.mpf(self.exponent)

    def _cmp(self, other: "BigBound") -> int:
        if self.base == other.base and self.exact and other.exact:
            return _exact_cmp(self.coef, self.exponent, other.coef, other.exponent, self.base)
        with _mp():
            a = self.log_base() * mpmath.log(self.base)
            b = other.log_base() * mpmath.log(other.base)
            return (a > b) - (a < b)

    def __lt__(self, other):
        return self._cmp(_as_bound(other, self.base)) < 0

    def __le__(self, other):
        return self._cmp(_as_bound(other, self.base)) <= 0

    def __gt__(self, other):
        return self._cmp(_as_bound(other, self.base)) > 0

    def __ge__(self, other):
        return self._cmp(_as_bound(other, self.base)) >= 0

    def __eq__(self, other):
        if not isinstance(other, (BigBound, int, Fraction)):
            return NotImplemented
        return self._cmp(_as_bound(other, self.base)) == 0

    def __hash__(self):
        return hash((self.coef, str(self.exponent), self.base))

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return BigBound(self.coef * other, self.exponent, self.base)
        if isinstance(other, BigBound) and other.base == self.base:
            if self.exact and other.exact:
                e = self.exponent + other.exponent
            else:
                with _mp():
                    e = mpmath.mpf(self.exponent) + mpmath.mpf(other.exponent)
            return BigBound(self.coef * other.coef, e, self.base)
        return NotImplemented

    __rmul__ = __mul__

    def __float__(self):
        with _mp():
            v = mpmath.power(self.base, self.log_base())
        return float(v) if v < mpmath.mpf("1e308") else math.inf

    def to_json(self) -> dict:
        return {"coef": str(self.coef), "base": self.base, "exponent": str(self.exponent),
                "log_base": mpmath.nstr(self.log_base(), 30)}

    def __str__(self):
        e = self.exponent if self.exact else mpmath.nstr(self.exponent, 20)
        return f"{self.coef}·{self.base}^{e}"


def _as_bound(x, base: int) -> BigBound:
    if isinstance(x, BigBound):
        return x
    if isinstance(x, (int, Fraction)):
        return BigBound(Fraction(x), 0, base)
    raise TypeError(f"cannot compare BigBound with {type(x).__name__}")


def _exact_cmp(a: Fraction, m: int, b: Fraction, n: int, base: int) -> int:
    """Sign of a·base^m − b·base^n, exactly."""
    if m < n:
        return -_exact_cmp(b, n, a, m, base)
    d = m - n
    ratio = b / a                      # compare base^d with ratio
    if d > max(1, math.ceil(ratio).bit_length()):
        return 1                       # base^d ≥ 2^d > ratio
    lhs = Fraction(base) ** d
    return (lhs > ratio) - (lhs < ratio)


def free_word_count(size: int, l: int) -> int:
    """Exact number of distinct products of exactly l letters of a free symmetric set."""
    s1 = size - 1
    if l % 2:
        return size * (s1 ** (l + 1) - 1) // (s1 * s1 - 1)
    return 1 + size * s1 * (s1 ** l - 1) // (s1 * s1 - 1)


def free_word_count_bound(size: int, l: int) -> BigBound:
    """Strict upper bound ((s−1)/(s−2))·(s−1)^l on ``free_word_count`` (l ≥ 1)."""
    return BigBound(Fraction(size - 1, size - 2), int(l), size - 1)


def growth_exponent(x):
    """|log x| / log(1 + x/24) (base free), 200-bit."""
    with _mp():
        x = mpmath.mpf(x)
        return abs(mpmath.log(x)) / mpmath.log1p(x / 24)


def l_for_growth_mp(c, eta, q_size: int) -> int:
    with _mp():
        base = 1 + mpmath.mpf(c) * mpmath.mpf(eta) / q_size
        target = 1 / mpmath.mpf(eta)
        l = int(mpmath.floor(mpmath.log(target) / mpmath.log(base)))
        while base ** l <= target:
            l += 1
        while l > 1 and base ** (l - 1) > target:
            l -= 1
        return max(l, 1)


def lps_gap():
    with _mp():
        return 1 - mpmath.sqrt(5) / 3


def rho_mp():
    with _mp():
        return 1 + mpmath.sqrt(2) / 2


def annulus_M():
    with _mp():
        return 4 * mpmath.pi * rho_mp() ** 2


def _s(x, digits: int = 25):
    if isinstance(x, bool):
        return x
    if isinstance(x, (int, Fraction)):
        return str(x)
    if isinstance(x, BigBound):
        return x.to_json()
    return mpmath.nstr(x, digits)


@dataclass
class Ledger:
    title: str
    rows: list   # (name, formula, value, check or None)

    def add(self, name, formula, value, check=None):
        self.rows.append((name, formula, value, check))

    @property
    def passed(self) -> bool:
        return all(c for _, _, _, c in self.rows if c is not None)

    def to_json(self) -> dict:
        return {"title": self.title, "passed": self.passed,
                "rows": [{"name": n, "formula": f, "value": _s(v), "check": c} for n, f, v, c in self.rows]}

    def markdown(self) -> str:
        out = [f"### {self.title}", "", "| constant | formula | value | check |", "|---|---|---|---|"]
        for n, f, v, c in self.rows:
            val = _s(v)
            if isinstance(val, dict):
                val = f"{val['coef']}·{val['base']}^{val['exponent']}"
            mark = "" if c is None else ("pass" if c else "FAIL")
            out.append(f"| {n} | {f} | {val} | {mark} |")
        return "\n".join(out)


def expander_size_bound(eta) -> Ledger:
    """Size ledger for the composed annulus expander at a given η."""
    L = Ledger(f"annulus expander size at eta={eta}", [])
    with _mp():
        eta = mpmath.mpf(eta)
        M = annulus_M()
        eps = eta / (3 * M ** 2)
        delta = eps / (4 * M)
        beta_def = delta * eps / (2 * M)
        delta_st = eta / (12 * M ** 3)
        beta_st = eta ** 2 / (36 * M ** 5)
        L.add("M", "4πρ²", M)
        L.add("epsilon", "η/(3M²)", eps)
        L.add("delta", "ε/(4M)", delta)
        L.add("delta stated", "η/(12M³)", delta_st, bool(abs(delta - delta_st) <= delta * mpmath.mpf(2) ** -150))
        L.add("beta from definition", "δε/(2M) = η²/(72M⁶)", beta_def)
        L.add("beta stated", "η²/(36M⁵)", beta_st)
        L.add("beta stated equals delta*epsilon", "δε", delta * eps,
              bool(abs(delta * eps - beta_st) <= beta_st * mpmath.mpf(2) ** -150))
        L.add("beta stated exceeds eta^2/2^32", "η²/2³² < η²/(36M⁵)", eta ** 2 / 2 ** 32, bool(eta ** 2 / 2 ** 32 < beta_st))
        # informational: the chain only goes through with the stated beta
        L.add("beta from definition exceeds eta^2/2^32 (holds?)", "η²/2³² < η²/(72M⁶)",
              bool(eta ** 2 / 2 ** 32 < beta_def))
        c = lps_gap()
        for tag, beta in (("stated", beta_st), ("definition", beta_def)):
            a = growth_exponent(beta)
            b = growth_exponent(delta)
            log5 = lambda v: mpmath.log(v, 5)
            # three-term sum in log5 form
            terms = [log5(36) + a + b, log5(6) + a, log5(6) + b]
            top = max(terms)
            three = top + log5(sum(mpmath.power(5, t - top) for t in terms))
            chain = log5(38) + 2 * a
            L.add(f"three-term size, beta {tag}", "36·5^(a+b) + 6·5^a + 6·5^b (log5)", three)
            L.add(f"38*5^(2a), beta {tag}", "38·5^(2|log β|/log(1+β/24)) (log5)", chain, bool(three < chain))
            inter = 48 * mpmath.mpf(2) ** 32 * abs(4 * mpmath.log(eta) - 64) / eta ** 2
            L.add(f"2a below intermediate exponent, beta {tag}", "2a ≤ 48·2³²|4 log η − 64|/η²", 2 * a,
                  bool(2 * a <= inter) if tag == "stated" else None)
        a_st = growth_exponent(beta_st)
        stated_nat = 3 * mpmath.mpf(2) ** 37 * abs(mpmath.log(eta) - 16) / eta ** 2
        stated_log2 = 3 * mpmath.mpf(2) ** 37 * abs(mpmath.log(eta, 2) - 16) / eta ** 2
        algebra = 3 * mpmath.mpf(2) ** 38 * abs(mpmath.log(eta) - 16) / eta ** 2
        inter = 48 * mpmath.mpf(2) ** 32 * abs(4 * mpmath.log(eta) - 64) / eta ** 2
        L.add("intermediate exponent", "48·2³²|4 log η − 64|/η²", inter)
        L.add("stated final exponent (natural log)", "3·2³⁷|log η − 16|/η²", stated_nat)
        L.add("stated final exponent (log base 2)", "3·2³⁷|log₂ η − 16|/η²", stated_log2)
        L.add("intermediate equals 3·2³⁸ form", "48·2³²·4 = 3·2³⁸", algebra,
              bool(abs(algebra - inter) <= inter * mpmath.mpf(2) ** -150))
        L.add("stated final bound dominates 38·5^(2a)", "2a ≤ 3·2³⁷|log η − 16|/η²", 2 * a_st,
              bool(2 * a_st <= stated_nat))
        L.add("final bound", "38·5^(3·2³⁷|log η−16|/η²)", BigBound(38, stated_nat))
        # |Q^l| for the leaf-wise word sets
        for tag, x in (("beta", beta_st), ("delta", delta)):
            l = l_for_growth_mp(c, x, 6)
            cnt = free_word_count_bound(6, l)
            cap = BigBound(6, growth_exponent(x))
            L.add(f"l for {tag}", "min l: (1 + cx/6)^l > 1/x", l)
            L.add(f"|Q^l| for {tag} below 6·5^(|log x|/log(1+x/24))", "(5/4)·5^l < 6·5^(...)", cnt, bool(cnt < cap))
    return L


def tarski_piece_bound() -> Ledger:
    """Constants of the cube/ball piece bound and the final exponent comparison."""
    L = Ledger("cube versus ball piece bound", [])
    with _mp():
        rho = rho_mp()
        side = (rho - 1) / mpmath.sqrt(3)
        L.add("small cube side", "(ρ − 1)/√3", side, bool(abs(side - mpmath.sqrt(6) / 6) < mpmath.mpf(10) ** -50))
        tprime = (2 * rho / side) ** 3
        L.add("|T'| covering count", "(2ρ/(√6/6))³ < 800", tprime, bool(tprime < 800))
        L.add("|T|", "8·800", 6400, True)
        eta = Fraction(1, 2 * 6400)
        L.add("eta", "1/(2|T|)", eta, eta == Fraction(1, 12800))
        L.add("1/12800 < 2^-14 (holds?)", "1/12800 < 2⁻¹⁴", Fraction(1, 12800) < Fraction(1, 2 ** 14))
        L.add("1/12800 > 2^-14 (bound at 2^-14 dominates)", "2⁻¹⁴ < 1/12800", Fraction(1, 2 ** 14),
              Fraction(1, 2 ** 14) < Fraction(1, 12800))
        for name, e in (("1/12800", mpmath.mpf(1) / 12800), ("2^-14", mpmath.mpf(2) ** -14)):
            nat = 3 * mpmath.mpf(2) ** 37 * abs(mpmath.log(e) - 16) / e ** 2
            lg2 = 3 * mpmath.mpf(2) ** 37 * abs(mpmath.log(e, 2) - 16) / e ** 2
            L.add(f"exponent at eta={name}, natural log, in units of 2^60", "3·2³⁷|log η−16|/η² / 2⁶⁰",
                  nat / mpmath.mpf(2) ** 60)
            L.add(f"exponent at eta={name}, log base 2, in units of 2^60", "3·2³⁷|log₂ η−16|/η² / 2⁶⁰",
                  lg2 / mpmath.mpf(2) ** 60)
            full = BigBound(2 * 6400 * 38, nat)
            L.add(f"2|T|·38·5^E below 5^(2^72), eta={name}", "pieces ≤ |ST ∪ TS| ≤ 2|T||S|", full,
                  bool(full < BigBound(1, 2 ** 72)))
            a = growth_exponent(e ** 2 / (36 * annulus_M() ** 5))
            raw = BigBound(2 * 6400 * 38, 2 * a)
            L.add(f"unsimplified 2|T|·38·5^(2a) below 5^(2^72), eta={name}", "2|T|·38·5^(2a)", raw,
                  bool(raw < BigBound(1, 2 ** 72)))
    stated = BigBound(38, 90 * 2 ** 60)
    L.add("stated bound", "38·5^(90·2⁶⁰)", stated)
    L.add("38·5^(90·2^60) < 5^(2^72), exact", "exact integer exponents", BigBound(1, 2 ** 72),
          stated < BigBound(1, 2 ** 72))
    L.add("exponent gap 2^72 − 90·2^60", "must exceed log₅ 38", 2 ** 72 - 90 * 2 ** 60,
          5 ** 3 > 38 and 2 ** 72 - 90 * 2 ** 60 >= 3)
    return L


def sphere_remark_bound() -> Ledger:
    """Sphere variant: 1/6-expanding set from the six LPS rotations and the piece count."""
    L = Ledger("sphere piece bound", [])
    c = lps_gap()
    l = l_for_growth_mp(c, mpmath.mpf(1) / 6, 6)
    L.add("l", "min l: (1 + cη/6)^l > 1/η, c = 1 − √5/3, η = 1/6", l)
    count = free_word_count(6, l)
    L.add("|Q^l| (free group count)", "Σ_{k ≡ l mod 2} N(k)", count)
    L.add("|Q^l| below 6·5^(|log η|/log(1+η/24))", "formula bound", BigBound(6, growth_exponent(mpmath.mpf(1) / 6)),
          BigBound(count, 0) < BigBound(6, growth_exponent(mpmath.mpf(1) / 6)))
    R = count + 1  # adjoin the identity
    L.add("|R| = |Q^l ∪ {e}| < 6·5^277", "exact", BigBound(6, 277), R < 6 * 5 ** 277)
    T_size = 2
    pieces = 2 * T_size * R
    L.add("pieces ≤ 2|T||R| < 24·5^277", "|T| = 2", BigBound(24, 277), pieces < 24 * 5 ** 277)
    return L


def all_ledgers(eta) -> list[Ledger]:
    return [expander_size_bound(eta), tarski_piece_bound(), sphere_remark_bound()]


def ledgers_json(eta) -> str:
    return json.dumps([lg.to_json() for lg in all_ledgers(eta)], indent=2)
