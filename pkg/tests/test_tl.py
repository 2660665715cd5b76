"""Exact diagram-algebra checks: relations, rewriting, words, closures.

Everything here is arithmetic over Laurent polynomials in the loop weight,
so every assertion is exact equality; there are no tolerances.
"""

import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from rigidpa.tl import (
    EWord,
    LaurentPoly,
    TLDiagram,
    TLElement,
    all_diagrams,
    full_closure_trace,
    gap_propagate_left,
    multi_step_blocks,
    multi_step_word,
    rewrite_fixed_point,
    tl_right_closure,
    vblock_letters,
    vblocks_to_tl,
    vblocks_to_word,
    word_to_tl,
)

D = LaurentPoly.delta


# ---------------------------------------------------------------------------
# Laurent coefficients


def test_laurent_ring_basics():
    x = D(2) + LaurentPoly.scalar(3) * D(-1)
    y = D(1) - LaurentPoly.one()
    assert x * y == y * x
    assert x * (y + D(5)) == x * y + x * D(5)
    assert (x - x) == LaurentPoly.zero()
    assert not LaurentPoly.zero()
    assert D(0) == LaurentPoly.one() == 1
    assert x**3 == x * x * x
    assert x.evaluate(2.0) == pytest.approx(4 + 1.5)


@given(
    st.dictionaries(st.integers(-4, 4), st.integers(-9, 9), max_size=5),
    st.dictionaries(st.integers(-4, 4), st.integers(-9, 9), max_size=5),
    st.floats(0.5, 4.0),
)
def test_laurent_evaluate_is_ring_hom(ca, cb, delta):
    a = LaurentPoly({k: v for k, v in ca.items()})
    b = LaurentPoly({k: v for k, v in cb.items()})
    assert (a * b).evaluate(delta) == pytest.approx(
        a.evaluate(delta) * b.evaluate(delta), rel=1e-12, abs=1e-12
    )
    assert (a + b).evaluate(delta) == pytest.approx(
        a.evaluate(delta) + b.evaluate(delta), rel=1e-12, abs=1e-12
    )


# ---------------------------------------------------------------------------
# Diagrams


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


@pytest.mark.parametrize("n", range(1, 6))
def test_diagram_count_is_catalan(n):
    assert len(all_diagrams(n)) == catalan(n)


def test_identity_and_generator_pairings():
    n = 4
    ident = TLDiagram.identity(n)
    assert ident.pairs() == [(i, 2 * n + 1 - i) for i in range(1, n + 1)]
    gen = TLDiagram.generator(2, n)
    assert (2, 3) in gen.pairs() and (2 * n - 2, 2 * n - 1) in gen.pairs()


def test_nonplanar_pairing_rejected():
    with pytest.raises(AssertionError):
        TLDiagram.from_pairs(2, [(1, 3), (2, 4)])


def test_star_is_involution():
    for d in all_diagrams(3):
        assert d.star().star() == d
    assert TLDiagram.generator(1, 3).star() == TLDiagram.generator(1, 3)


# ---------------------------------------------------------------------------
# Algebra relations (exact, n <= 5)


@pytest.mark.parametrize("n", range(2, 6))
def test_generator_relations(n):
    for i in range(1, n):
        ei = TLElement.generator(i, n)
        assert ei * ei == D(1) * ei
        for j in range(1, n):
            ej = TLElement.generator(j, n)
            if abs(i - j) == 1:
                assert ei * ej * ei == ei
            elif i != j:
                assert ei * ej == ej * ei


@pytest.mark.parametrize("n", range(2, 6))
def test_word_products_match_composition(n):
    rng = random.Random(n)
    for _ in range(20):
        w1 = [rng.randrange(1, n) for _ in range(rng.randrange(4))]
        w2 = [rng.randrange(1, n) for _ in range(rng.randrange(1, 4))]
        assert word_to_tl(w1 + w2, n) == word_to_tl(w1, n) * word_to_tl(w2, n)


@given(st.integers(2, 5), st.data())
@settings(max_examples=60, deadline=None)
def test_star_antiautomorphism(n, data):
    letters = st.lists(st.integers(1, n - 1), max_size=6)
    a = word_to_tl(data.draw(letters), n)
    b = word_to_tl(data.draw(letters), n)
    assert (a * b).star() == b.star() * a.star()


@given(st.integers(2, 5), st.data())
@settings(max_examples=40, deadline=None)
def test_full_closure_is_tracial(n, data):
    letters = st.lists(st.integers(1, n - 1), max_size=6)
    a = word_to_tl(data.draw(letters), n)
    b = word_to_tl(data.draw(letters), n)
    assert full_closure_trace(a * b) == full_closure_trace(b * a)


def test_word_letter_range_enforced():
    with pytest.raises(AssertionError):
        word_to_tl([3], 3)


# ---------------------------------------------------------------------------
# EWord parsing


def test_eword_parse_roundtrip():
    w = EWord.parse("2, 1 3 2")
    assert w.letters == (2, 1, 3, 2)
    assert EWord.parse(str(w)) == w
    assert len(w) == 4 and list(w) == [2, 1, 3, 2]


# ---------------------------------------------------------------------------
# Descending blocks and the two rewriting moves


def blocks_strategy():
    """Random lists of descending blocks with letters in a small window."""
    block = st.tuples(st.integers(1, 6), st.integers(1, 6))
    return st.lists(block, min_size=1, max_size=5)


@given(blocks_strategy())
@settings(max_examples=80, deadline=None)
def test_rewrite_steps_preserve_value(blocks):
    blocks = [tuple(b) for b in blocks]
    n = 8
    _, trace = rewrite_fixed_point(list(blocks))
    vals = [vblocks_to_tl(b, n) for b in trace]
    for prev, nxt in zip(vals, vals[1:]):
        assert prev == nxt


def test_gap_propagate_drops_empty_blocks_first():
    blocks = [(3, 2), (1, 2), (4, 4)]
    assert gap_propagate_left(blocks) == [(3, 2), (4, 4)]


def test_gap_propagate_fixed_point_is_stable():
    blocks, trace = rewrite_fixed_point([(4, 2), (5, 4), (2, 1)])
    assert gap_propagate_left(blocks) == blocks
    assert trace[0] == [(4, 2), (5, 4), (2, 1)]
    n = 8
    assert vblocks_to_tl(trace[0], n) == vblocks_to_tl(blocks, n)


def test_simp_rewrites_fire_on_canonical_shapes():
    # V_{4,2} V_{5,4} V_{1,1}: the second move's shape with a=4,b=2,c=5,d=1.
    out = gap_propagate_left([(4, 2), (5, 4), (1, 1)])
    assert out == [(4, 1), (5, 4)]
    assert vblocks_to_tl([(4, 2), (5, 4), (1, 1)], 7) == vblocks_to_tl(out, 7)
    # V_{3,1} V_{4,4} V_{2,2}: the first move's shape with d=2.
    out = gap_propagate_left([(3, 1), (4, 4), (2, 2)])
    assert out == [(3, 2), (0, 1), (4, 4), (1, 2)]
    assert vblocks_to_tl([(3, 1), (4, 4), (2, 2)], 6) == vblocks_to_tl(out, 6)


# ---------------------------------------------------------------------------
# Multi-step words


def test_multi_step_word_small_cases():
    assert multi_step_word(-1, 1) == EWord((2, 1, 3, 2))
    assert multi_step_word(0, 1) == EWord((2,))
    assert multi_step_blocks(1, 2) == [(3, 3)]
    assert multi_step_blocks(-1, 2) == [(3, 1), (4, 2), (5, 3)]


def test_multi_step_word_rejects_bad_range():
    with pytest.raises(AssertionError):
        multi_step_word(2, 2)
    with pytest.raises(AssertionError):
        multi_step_word(-2, 1)


@pytest.mark.parametrize("i,j", [(-1, 1), (0, 1), (-1, 2), (0, 2), (1, 2), (-1, 3)])
def test_multi_step_word_is_scaled_idempotent(i, j):
    n = 2 * j - i + 1
    w = word_to_tl(multi_step_word(i, j), n)
    assert w * w == D(j - i) * w


@pytest.mark.parametrize("i,j", [(-1, 1), (0, 1), (-1, 2), (1, 2)])
def test_multi_step_word_is_self_adjoint(i, j):
    n = 2 * j - i + 1
    w = word_to_tl(multi_step_word(i, j), n)
    assert w.star() == w


def test_multi_step_block_word_agreement():
    for i, j in [(-1, 1), (0, 2), (-1, 3)]:
        assert vblocks_to_word(multi_step_blocks(i, j)) == multi_step_word(i, j)
        for r, s in multi_step_blocks(i, j):
            assert vblock_letters((r, s)) == list(range(r, s - 1, -1))


# ---------------------------------------------------------------------------
# Closures


@pytest.mark.parametrize("n", range(1, 6))
def test_right_closure_of_identity(n):
    assert tl_right_closure(TLElement.one(n)) == D(1) * TLElement.one(n - 1)


@pytest.mark.parametrize("n", range(2, 6))
def test_right_closure_of_last_generator(n):
    assert tl_right_closure(TLElement.generator(n - 1, n)) == TLElement.one(n - 1)


def test_full_closure_counts_loops():
    assert full_closure_trace(TLElement.one(3)) == D(3)
    assert full_closure_trace(TLElement.generator(1, 3)) == D(2)
    w = word_to_tl([1, 2, 1], 3)
    assert full_closure_trace(w) == full_closure_trace(word_to_tl([1], 3))


@pytest.mark.parametrize("j", [1, 2, 3])
def test_one_strand_closure_shifts_multi_step_word(j):
    """Closing the last strand turns the word on [-1,j] into the word on [0,j]."""
    n = 2 * j + 2
    closed = tl_right_closure(word_to_tl(multi_step_word(-1, j), n))
    assert closed == word_to_tl(multi_step_word(0, j), n - 1)


@pytest.mark.parametrize("j", [1, 2])
def test_multi_step_word_shift_identity(j):
    """w(-1,j) v_j = v_{j+1} w(1,j+1) with v_m the descending word E_m...E_1."""
    n = 2 * j + 3
    v_j = word_to_tl(list(range(j, 0, -1)), n)
    v_j1 = word_to_tl(list(range(j + 1, 0, -1)), n)
    lhs = word_to_tl(multi_step_word(-1, j), n) * v_j
    rhs = v_j1 * word_to_tl(multi_step_word(1, j + 1), n)
    assert lhs == rhs


# ---------------------------------------------------------------------------
# Mixed-coefficient elements


def test_linear_combinations_multiply_bilinearly():
    n = 3
    e1 = TLElement.generator(1, n)
    e2 = TLElement.generator(2, n)
    x = D(1) * e1 + LaurentPoly.scalar(2) * e2
    y = e1 - D(-1) * e2
    assert x * y == (D(1) * (e1 * e1) + LaurentPoly.scalar(2) * (e2 * e1)
                     - (e1 * e2) - LaurentPoly.scalar(2) * D(-1) * (e2 * e2))


def test_element_scalar_and_hash_consistency():
    n = 3
    a = word_to_tl([1, 2], n)
    b = word_to_tl([1, 2], n)
    assert a == b and hash(a) == hash(b)
    assert a + (-a) == TLElement.zero(n)
    assert not TLElement.zero(n)
