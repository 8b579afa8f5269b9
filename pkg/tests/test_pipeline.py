import copy
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from equidecomp.graphing import bipartite_graphing
from equidecomp.group import GeneratorSet, Word, sl2_generators, torus_translations
from equidecomp.pipeline import (CertPiece, CoveringError, ExpansionFailure,
                                 MeasureMismatch, PipelineError, chain_certificates, choose_eta,
                                 trusted_gap_source, compact_tokens, cover_set, default_torus_instance,
                                 disjointify, equidecompose, expand_tokens, finite_gap_source,
                                 planar_reduction_instance, reduce_to_open, validate_certificate)
from equidecomp.predicates import Box
from equidecomp.space import RationalTorus


@pytest.fixture(scope="module")
def small_cert():
    q = 8
    model = RationalTorus(q)
    A, B, shifts = default_torus_instance()
    return equidecompose(model, A, B, cover_set(q, shifts), finite_gap_source(sl2_generators(q)))


def test_small_instance_validates(small_cert):
    c = small_cert
    assert c.validation.ok, c.validation.problems
    assert c.residue_mass == 0
    assert c.metadata["piece_count"] == c.piece_count <= c.metadata["S_size"]
    assert c.metadata["expansion"]["passed"]
    assert c.metadata["orbitwise"] is True
    doc = json.loads(c.dumps())
    assert doc["schema"] == "equidecomp.certificate/v1" and doc["piece_count"] == c.piece_count


def _tampered(cert, how):
    c = copy.copy(cert)
    pieces = [CertPiece(p.points.copy(), p.image.copy(), p.motion, p.word, p.label) for p in cert.pieces]
    c.pieces = pieces
    if how == "image":
        i = next(k for k, p in enumerate(pieces) if len(p.image) > 1)
        pieces[i].image[[0, 1]] = pieces[i].image[[1, 0]]
    elif how == "drop":
        pieces.pop()
    elif how == "motion":
        j = next(k for k in range(1, len(pieces)) if pieces[k].motion.key() != pieces[0].motion.key())
        pieces[0] = CertPiece(pieces[0].points, pieces[0].image, pieces[j].motion, pieces[0].word)
    elif how == "duplicate":
        pieces.append(pieces[0])
    return c


@pytest.mark.parametrize("how", ["image", "drop", "motion", "duplicate"])
def test_validator_detects_tampering(small_cert, how):
    res = validate_certificate(_tampered(small_cert, how))
    assert not res.ok and res.problems


def test_validator_checks_words(small_cert):
    c = copy.copy(small_cert)
    c.pieces = list(small_cert.pieces)
    p = c.pieces[0]
    c.pieces[0] = CertPiece(p.points, p.image, p.motion, p.word + Word.letter("Q", 0), p.label)
    assert not validate_certificate(c).ok


def test_measure_mismatch():
    model = RationalTorus(8)
    A = Box((0, 0), (Fraction(1, 2), 1))
    B = Box((Fraction(1, 2), 0), (1, Fraction(3, 4)))
    with pytest.raises(MeasureMismatch):
        equidecompose(model, A, B, cover_set(8, [(Fraction(1, 2), 0)]), finite_gap_source(sl2_generators(8)))


def test_covering_error_witness():
    model = RationalTorus(8)
    A = Box((0, 0), (Fraction(1, 4), 1))
    B = Box((Fraction(1, 2), 0), (Fraction(3, 4), 1))
    T = cover_set(8, [(Fraction(1, 8), 0)])
    with pytest.raises(CoveringError) as info:
        equidecompose(model, A, B, T, finite_gap_source(sl2_generators(8)))
    w = info.value.witness
    assert model.contains(B).mask[w] or model.contains(A).mask[w]


def test_cover_set_must_be_symmetric():
    model = RationalTorus(8)
    A, B, _ = default_torus_instance()
    bad = GeneratorSet(tuple(cover_set(8, [(Fraction(1, 2), 0)])) + (torus_translations(8, 8)[0],), name="T")
    with pytest.raises(PipelineError):
        equidecompose(model, A, B, bad, finite_gap_source(sl2_generators(8)))


def test_no_gap_is_rejected():
    model = RationalTorus(8)
    A, B, shifts = default_torus_instance()
    with pytest.raises(ExpansionFailure):
        equidecompose(model, A, B, cover_set(8, shifts), trusted_gap_source(sl2_generators(8), 0.0))


def test_expansion_failure_reports_failing_set():
    # every SL(2, Z) word fixes the origin, so a test family hitting it alone must be rejected
    model = RationalTorus(16)
    A, B, shifts = default_torus_instance()
    with pytest.raises(ExpansionFailure) as info:
        equidecompose(model, A, B, cover_set(16, shifts), finite_gap_source(sl2_generators(16)))
    rep = info.value.report
    assert not rep.passed
    bad = info.value.failing
    assert len(bad) >= 1


def test_self_equidecomposition_uses_doubling():
    q = 20
    model = RationalTorus(q)
    A = Box((0, 0), (Fraction(1, 2), 1))
    cert = equidecompose(model, A, A, cover_set(q, [(Fraction(1, 2), 0)]), finite_gap_source(sl2_generators(q)))
    assert cert.metadata["doubled"] and cert.validation.ok and cert.residue_mass == 0


def test_disjointify_edge_count():
    T = RationalTorus(6)
    r = np.random.default_rng(0)
    A = T.from_mask(r.random(T.n) < 0.5)
    B = T.from_mask(r.random(T.n) < 0.5)
    S = sl2_generators(6)
    prob = disjointify(A, B, S)
    G = bipartite_graphing(prob.A, prob.B, prob.S)
    brute = sum(int(np.count_nonzero(B.mask[T.action(g)[A.indices()]])) for g in S)
    assert G.n_edges == brute
    assert prob.A.isdisjoint(prob.B)


def test_chain_certificates():
    q = 8
    model = RationalTorus(q)
    A, B, shifts = default_torus_instance()
    T = cover_set(q, shifts)
    src = finite_gap_source(sl2_generators(q))
    ab = equidecompose(model, A, B, T, src)
    C = Box((Fraction(1, 2), 0), (1, 1))
    bc = equidecompose(model, ab.B, model.contains(C), T, src)
    ac = chain_certificates(ab, bc)
    res = validate_certificate(ac)
    assert res.ok, res.problems
    assert ac.piece_count <= ab.piece_count * bc.piece_count == ac.metadata["piece_bound"]
    with pytest.raises(PipelineError):
        chain_certificates(bc, ab)


def test_choose_eta():
    assert choose_eta(Fraction(1, 2), 3) == pytest.approx(0.99 * min(1 / 6, 1 / 6))
    assert choose_eta(Fraction(1, 10), 1) == pytest.approx(0.99 / 30)


@pytest.mark.parametrize("q", [4, 5, 8])
def test_reduce_to_open(q):
    model, A, T, C_open = planar_reduction_instance(q)
    assert len(T) == 5
    cert = reduce_to_open(A, T, C_open, model)
    assert cert.piece_count == len(T) + 1     # k + 2 pieces with k = |T| − 1
    assert cert.validation.ok, cert.validation.problems
    assert cert.metadata["pullback_equals_C"]
    # exhaustive check by coordinates: pieces partition A, images partition A' ∪ C
    Am = model.contains(A).mask
    cover = np.zeros(model.n, int)
    for p in cert.pieces:
        cover[p.points] += 1
    assert np.array_equal(cover, Am.astype(int))
    hit = np.zeros(model.n, int)
    for p in cert.pieces:
        hit[p.image] += 1
    assert np.array_equal(hit, cert.B.mask.astype(int))


def test_reduce_to_open_not_covered():
    model, A, T, _ = planar_reduction_instance(4)
    far = Box((2, 2), (Fraction(5, 2), Fraction(5, 2)))
    with pytest.raises(CoveringError):
        reduce_to_open(A, T, far, model)


words = st.lists(st.tuples(st.sampled_from(["Q", "T"]), st.integers(0, 5), st.booleans()), max_size=40)


@given(words, st.integers(0, 6))
def test_compact_tokens_roundtrip(letters, reps):
    w = Word(tuple(letters)) + Word(tuple(letters[:2]) * reps)
    assert expand_tokens(compact_tokens(w)) == w


def test_compact_tokens_collapses_runs():
    w = Word((("Q", 0, False), ("Q", 1, False)) * 5)
    assert compact_tokens(w) == "(Q0 Q1)^5"
