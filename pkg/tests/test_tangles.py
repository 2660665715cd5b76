"""Layered-tangle structure: validation, shading, angles, isotopy moves."""

import pytest
from hypothesis import given, settings, strategies as st

from rigidpa.errors import ShadingError, TangleArityError
from rigidpa.tangles import (
    Layer,
    Tangle,
    compose,
    half_turn_tangle,
    identity_tangle,
    inclusion_tangle,
    isotopy_normalize,
    jones_tangle,
    left_closure_tangle,
    multiplication_tangle,
    parse_tangle,
    reflect,
    region_color,
    render_tangle,
    right_closure_tangle,
    shift_tangle,
    total_angle,
    validate,
)

BUILDERS = [
    identity_tangle(3),
    multiplication_tangle(2),
    inclusion_tangle(2),
    jones_tangle(2),
    right_closure_tangle(2),
    left_closure_tangle(2),
    shift_tangle(2),
    half_turn_tangle(2),
    identity_tangle(2, "-"),
    jones_tangle(3, "-"),
]


# ---------------------------------------------------------------------------
# Validation and shading


def test_validate_counts_and_top():
    t = Tangle("+", 2, (Layer("TI", 1), Layer("TS", 2, 4, "-", "x"), Layer("TE", 3)))
    counts = validate(t)
    assert counts == (2, 4, 4, 2)
    assert t.top == 2


@pytest.mark.parametrize("t", BUILDERS)
def test_stock_tangles_validate(t):
    counts = validate(t)
    assert counts[0] == t.bottom and counts[-1] == t.top


def test_cap_out_of_range():
    with pytest.raises(TangleArityError):
        validate(Tangle("+", 2, (Layer("TE", 2),)))


def test_cup_out_of_range():
    with pytest.raises(TangleArityError):
        validate(Tangle("+", 1, (Layer("TI", 3),)))


def test_box_exceeding_strands():
    with pytest.raises(TangleArityError):
        validate(Tangle("+", 2, (Layer("TS", 2, 4, "-", "x"),)))


def test_box_in_wrong_region_color():
    # one strand west of the box flips the region color
    with pytest.raises(ShadingError):
        validate(Tangle("+", 3, (Layer("TS", 2, 4, "+", "x"),)))
    validate(Tangle("+", 3, (Layer("TS", 2, 4, "-", "x"),)))


def test_region_color_alternates():
    assert region_color("+", 0) == "+"
    assert region_color("+", 1) == "-"
    assert region_color("-", 2) == "-"
    assert region_color("-", 3) == "+"


def test_builder_shapes():
    assert jones_tangle(2).bottom == 3 and jones_tangle(2).top == 3
    assert inclusion_tangle(2).bottom == 3 and inclusion_tangle(2).top == 3
    assert right_closure_tangle(2).bottom == 1 and right_closure_tangle(2).top == 1
    assert left_closure_tangle(2).sign == "-"
    assert left_closure_tangle(2).layers[1].sign == "+"
    assert shift_tangle(2).sign == "-" and shift_tangle(2).bottom == 3
    assert [l.label for l in multiplication_tangle(2).layers] == ["y", "x"]


# ---------------------------------------------------------------------------
# Composition


def test_compose_splices_at_box():
    m = compose(multiplication_tangle(2), 1, jones_tangle(1))
    validate(m)
    kinds = [l.kind for l in m.layers]
    assert kinds == ["TS", "TE", "TI"]
    assert m.layers[0].label == "y"


def test_compose_checks_inner_shape():
    with pytest.raises(TangleArityError):
        compose(multiplication_tangle(2), 0, identity_tangle(3))
    with pytest.raises(ShadingError):
        compose(shift_tangle(2), 0, identity_tangle(2, "-"))
    with pytest.raises(AssertionError):
        compose(identity_tangle(2), 0, identity_tangle(2))


def test_compose_offsets_inner_positions():
    outer = shift_tangle(2)  # box at position 2
    inner = jones_tangle(1)  # layers at position 1
    out = compose(outer, 0, inner)
    assert [(l.kind, l.pos) for l in out.layers] == [("TE", 2), ("TI", 2)]


# ---------------------------------------------------------------------------
# String tracing and rotation angles


def test_identity_strings_are_straight():
    strings = total_angle(identity_tangle(3))
    assert len(strings) == 3
    for s in strings:
        assert s.half_turns == 0
        assert len(s.sites) >= 1


def test_jones_tangle_turns():
    strings = {s.ends: s.half_turns for s in total_angle(jones_tangle(2))}
    assert strings[(("bottom", 2), ("bottom", 3))] == 1
    assert strings[(("top", 2), ("top", 3))] == 1
    assert strings[(("bottom", 1), ("top", 1))] == 0


def test_closed_loop_has_full_turn():
    loop = Tangle("+", 0, (Layer("TI", 1), Layer("TE", 1)))
    (s,) = total_angle(loop)
    assert s.ends == ("loop",) and abs(s.half_turns) == 2


def test_closure_composite_traces_mixed_strings():
    c = compose(right_closure_tangle(2), 0, identity_tangle(2))
    by_ends = {s.ends: s.half_turns for s in total_angle(c)}
    assert by_ends[(("bottom", 1), ("top", 1))] == 0
    assert abs(by_ends[("loop",)]) == 2


def test_half_turn_tangle_turns_by_one():
    for s in total_angle(half_turn_tangle(2)):
        assert abs(s.half_turns) == 1


@pytest.mark.parametrize("t", BUILDERS)
def test_reflect_preserves_angles(t):
    before = sorted(s.half_turns for s in total_angle(t))
    after = sorted(s.half_turns for s in total_angle(reflect(t)))
    assert before == after


@pytest.mark.parametrize("t", BUILDERS)
def test_reflect_is_involutive(t):
    assert reflect(reflect(t)) == t
    assert reflect(t).bottom == t.top and reflect(t).top == t.bottom


def test_sites_name_vertical_segments():
    for s in total_angle(right_closure_tangle(2)):
        for gap, pos, parity in s.sites:
            assert gap >= 0 and pos >= 1 and isinstance(parity, bool)


# ---------------------------------------------------------------------------
# Isotopy normalization


@pytest.mark.parametrize("t", BUILDERS)
def test_normalize_is_idempotent(t):
    n1 = isotopy_normalize(t)
    assert isotopy_normalize(n1) == n1
    assert n1.bottom == t.bottom and n1.top == t.top
    validate(n1)


@pytest.mark.parametrize("t", BUILDERS)
def test_normalize_preserves_angles(t):
    before = sorted(s.half_turns for s in total_angle(t))
    after = sorted(s.half_turns for s in total_angle(isotopy_normalize(t)))
    assert before == after


def test_zigzags_cancel():
    left = Tangle("+", 1, (Layer("TI", 2), Layer("TE", 1)))
    right = Tangle("+", 1, (Layer("TI", 1), Layer("TE", 2)))
    assert isotopy_normalize(left) == identity_tangle(1)
    assert isotopy_normalize(right) == identity_tangle(1)


def test_distant_layers_reach_common_normal_form():
    a = Tangle("+", 6, (Layer("TE", 5), Layer("TE", 1)))
    b = Tangle("+", 6, (Layer("TE", 1), Layer("TE", 3)))
    assert isotopy_normalize(a) == isotopy_normalize(b)


@st.composite
def random_tangle(draw):
    """Grow a valid tangle by appending feasible layers."""
    bottom = draw(st.integers(0, 3))
    sign = draw(st.sampled_from("+-"))
    layers = []
    c = bottom
    for _ in range(draw(st.integers(0, 5))):
        kinds = ["TI"] + (["TE"] if c >= 2 else []) + (["TS"] if c >= 1 else [])
        kind = draw(st.sampled_from(kinds))
        if kind == "TI":
            layers.append(Layer("TI", draw(st.integers(1, c + 1))))
            c += 2
        elif kind == "TE":
            layers.append(Layer("TE", draw(st.integers(1, c - 1))))
            c -= 2
        else:
            a = draw(st.integers(1, min(c, 2)))
            pos = draw(st.integers(1, c - a + 1))
            layers.append(Layer("TS", pos, 2 * a, region_color(sign, pos - 1), "x"))
    return Tangle(sign, bottom, tuple(layers))


@given(random_tangle())
@settings(max_examples=80, deadline=None)
def test_random_tangles_normalize_consistently(t):
    validate(t)
    n = isotopy_normalize(t)
    validate(n)
    assert isotopy_normalize(n) == n
    assert n.bottom == t.bottom and n.top == t.top
    assert sorted(s.half_turns for s in total_angle(n)) == sorted(
        s.half_turns for s in total_angle(t)
    )
    assert len(n.boxes()) == len(t.boxes())


# ---------------------------------------------------------------------------
# Text format


@pytest.mark.parametrize("t", BUILDERS)
def test_parse_render_roundtrip(t):
    assert parse_tangle(render_tangle(t)) == t


def test_parse_rejects_garbage():
    with pytest.raises(TangleArityError):
        parse_tangle("not a tangle")
    with pytest.raises(TangleArityError):
        parse_tangle("tangle sign=+ bottom=2\nXX 1")
    with pytest.raises(TangleArityError):
        parse_tangle("tangle sign=+ bottom=2\nTS 1 sign=+")
    with pytest.raises(TangleArityError):
        parse_tangle("tangle bottom=2\nTI 1")


def test_parse_checks_validity():
    with pytest.raises(TangleArityError):
        parse_tangle("tangle sign=+ bottom=1\nTE 1")
