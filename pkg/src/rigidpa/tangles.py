"""Layered rigid planar tangles.

A tangle is a stack of elementary layers read bottom to top over a shaded
strip.  With ``c`` strands entering a layer from below:

``TI m``
    cup insertion between positions m-1 and m; the new strands sit at
    positions m and m+1 and everything to their right shifts by two.
``TE m``
    cap joining the strands at positions m and m+1.
``TS m arity=2a sign=s label=x``
    a rectangular box whose bottom edge absorbs the a strands at positions
    m..m+a-1 and whose top edge emits a strands at the same positions.  Box
    boundary points are numbered clockwise, 1..a along the bottom from left
    to right and a+1..2a along the top from right to left.

Regions are shaded checkerboard fashion starting from the outer sign at the
far left, so the region just west of a box at position m has color sign0
for odd m and the opposite color for even m; the box sign must match that
color.

Strings are oriented by the shading (a segment runs upward exactly when the
region to its east is the shaded one), and the total rotation angle of a
string is a whole multiple of pi: each cup or cap contributes +pi or -pi
according to the direction it is traversed.  Rigid isotopy, implemented
here as wiggle cancellation plus order normalization of far-apart layers,
preserves every string's total angle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import ShadingError, TangleArityError


@dataclass(frozen=True)
class Layer:
    kind: str  # "TI" | "TE" | "TS"
    pos: int  # 1-based strand position
    arity: int = 0  # TS only: number of boundary points, even
    sign: str = ""  # TS only: "+" or "-"
    label: str = ""  # TS only: key into a label assignment

    def __post_init__(self):
        assert self.kind in ("TI", "TE", "TS"), self.kind
        assert self.pos >= 1
        if self.kind == "TS":
            assert self.arity >= 2 and self.arity % 2 == 0, "box arity must be even"
            assert self.sign in ("+", "-")

    @property
    def strands(self) -> int:
        """Number of strands the box covers (TS only)."""
        assert self.kind == "TS"
        return self.arity // 2

    def delta_count(self) -> int:
        return {"TI": 2, "TE": -2, "TS": 0}[self.kind]

    def __repr__(self) -> str:
        if self.kind == "TS":
            lab = f" label={self.label}" if self.label else ""
            return f"TS {self.pos} arity={self.arity} sign={self.sign}{lab}"
        return f"{self.kind} {self.pos}"


@dataclass(frozen=True)
class Tangle:
    sign: str  # outer sign at the far left region
    bottom: int  # strands on the bottom boundary
    layers: tuple[Layer, ...] = ()

    def __post_init__(self):
        assert self.sign in ("+", "-")
        assert self.bottom >= 0

    @property
    def top(self) -> int:
        return self.bottom + sum(l.delta_count() for l in self.layers)

    def boxes(self) -> list[tuple[int, Layer]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.kind == "TS"]

    def __repr__(self) -> str:
        head = f"tangle sign={self.sign} bottom={self.bottom}"
        return "\n".join([head] + [repr(l) for l in self.layers])


def region_color(sign: str, strands_west: int) -> str:
    """Color of the region lying east of the given number of strands."""
    if strands_west % 2 == 0:
        return sign
    return "-" if sign == "+" else "+"


def validate(t: Tangle) -> tuple[int, ...]:
    """Check arity chaining and shading; return the strand counts between layers.

    The returned tuple has one entry per boundary between layers, so its
    length is len(layers) + 1 and the last entry is the top arity.
    """
    counts = [t.bottom]
    c = t.bottom
    for i, l in enumerate(t.layers):
        if l.kind == "TI":
            if not (1 <= l.pos <= c + 1):
                raise TangleArityError(f"layer {i}: cup at {l.pos} with {c} strands")
            c += 2
        elif l.kind == "TE":
            if not (1 <= l.pos <= c - 1):
                raise TangleArityError(f"layer {i}: cap at {l.pos} with {c} strands")
            c -= 2
        else:
            a = l.strands
            if not (1 <= l.pos and l.pos + a - 1 <= c):
                raise TangleArityError(
                    f"layer {i}: box at {l.pos} covering {a} of {c} strands"
                )
            west = region_color(t.sign, l.pos - 1)
            if west != l.sign:
                raise ShadingError(
                    f"layer {i}: box sign {l.sign} in a {west} region at position {l.pos}"
                )
        counts.append(c)
    return tuple(counts)


# ---------------------------------------------------------------------------
# String tracing and total rotation angles

@dataclass(frozen=True)
class StringTrace:
    """One string of a tangle.

    ``ends`` holds the two endpoints, each ("bottom", i), ("top", i) or
    ("box", layer_index, point), or the single marker ("loop",) for a
    closed string.  ``half_turns`` is the total rotation angle in units of
    pi along the shading orientation.  ``sites`` lists sample vertical
    segments (gap_index, position, parity_is_odd) usable for inserting a
    one-strand box on this string; gap g means between layers g-1 and g.
    """

    ends: tuple
    half_turns: int
    sites: tuple = ()


def _seg_up(sign: str, pos: int) -> bool:
    # a segment runs upward when the region to its east is shaded ("-")
    return region_color(sign, pos) == "-"


class _Wire:
    """A maximal vertical segment: constant parity, turns only at its ends."""

    __slots__ = ("low", "high", "sites")

    def __init__(self):
        self.low = None  # ("end", label) | ("turn", turn_id)
        self.high = None
        self.sites: list[tuple[int, int, bool]] = []


def total_angle(t: Tangle) -> tuple[StringTrace, ...]:
    """Trace every string and return its endpoints and total angle.

    Each cup or cap carries a fixed turn of +-pi read off from the shading
    when it is laid down: a cup whose west leg points down turns by +pi
    (else -pi), a cap whose west leg points up turns by -pi (else +pi).  A
    string's angle is the sum over its turns, so closed loops pick up
    +-2pi and straight-through strands 0.
    """
    validate(t)
    sign = t.sign
    wires: list[_Wire] = []
    turns: list[tuple[int, _Wire, _Wire]] = []  # (theta, wire_a, wire_b)
    finished: list[_Wire] = []

    def fresh(low) -> _Wire:
        w = _Wire()
        w.low = low
        return w

    for i in range(1, t.bottom + 1):
        wires.append(fresh(("end", ("bottom", i))))

    for li, l in enumerate(t.layers):
        for p, w in enumerate(wires, start=1):
            w.sites.append((li, p, p % 2 == 1))
        m = l.pos
        if l.kind == "TI":
            theta = -1 if _seg_up(sign, m) else +1
            left, right = _Wire(), _Wire()
            tid = len(turns)
            left.low = right.low = ("turn", tid)
            turns.append((theta, left, right))
            wires[m - 1 : m - 1] = [left, right]
        elif l.kind == "TE":
            theta = -1 if _seg_up(sign, m) else +1
            a, b = wires[m - 1], wires[m]
            tid = len(turns)
            a.high = b.high = ("turn", tid)
            turns.append((theta, a, b))
            finished.extend((a, b))
            del wires[m - 1 : m + 1]
        else:
            n = l.strands
            for k, w in enumerate(wires[m - 1 : m - 1 + n]):
                w.high = ("end", ("box", li, k + 1))  # bottom points, west first
                finished.append(w)
            fresh_wires = [
                fresh(("end", ("box", li, 2 * n - k))) for k in range(n)
            ]  # top points run east to west
            wires[m - 1 : m - 1 + n] = fresh_wires
    ngaps = len(t.layers)
    for p, w in enumerate(wires, start=1):
        w.sites.append((ngaps, p, p % 2 == 1))
        w.high = ("end", ("top", p))
        finished.append(w)

    # stitch wires into strings through the shared turn ids
    def partner(w: _Wire, attach) -> tuple[_Wire, tuple]:
        _theta, a, b = turns[attach[1]]
        other = b if a is w else a
        # continue out the far side of the partner wire
        out = other.high if other.low == attach else other.low
        return other, out

    seen: set[int] = set()
    told: list[StringTrace] = []
    for w in finished:
        if id(w) in seen:
            continue
        if w.low[0] == "end":
            first, out = w.low[1], w.high
        elif w.high[0] == "end":
            first, out = w.high[1], w.low
        else:
            continue  # interior wire, reached from a terminal or a loop
        theta = 0
        sites: list[tuple[int, int, bool]] = []
        cur = w
        ends = [first]
        while True:
            seen.add(id(cur))
            sites.extend(cur.sites)
            if out[0] == "end":
                ends.append(out[1])
                break
            theta += turns[out[1]][0]
            cur, out = partner(cur, out)
        told.append(StringTrace(tuple(sorted(ends)), theta, tuple(sites)))
    for w in finished:
        if id(w) in seen:
            continue
        # leftover components are closed loops
        theta = 0
        sites = []
        cur, out = w, w.high
        while id(cur) not in seen:
            seen.add(id(cur))
            sites.extend(cur.sites)
            theta += turns[out[1]][0]
            cur, out = partner(cur, out)
        told.append(StringTrace(("loop",), theta, tuple(sites)))

    def order(s: StringTrace):
        return tuple(e if isinstance(e, tuple) else (e,) for e in s.ends)

    return tuple(sorted(told, key=order))


# ---------------------------------------------------------------------------
# Composition and reflection


def reflect(t: Tangle) -> Tangle:
    """Flip the tangle upside down; cups become caps and boxes stay put.

    Involutive, and the partition function of the reflection on starred
    labels is the adjoint of the original.
    """
    out = []
    for l in reversed(t.layers):
        if l.kind == "TI":
            out.append(Layer("TE", l.pos))
        elif l.kind == "TE":
            out.append(Layer("TI", l.pos))
        else:
            out.append(l)
    return Tangle(t.sign, t.top, tuple(out))


def compose(outer: Tangle, box_index: int, inner: Tangle) -> Tangle:
    """Substitute ``inner`` for the box_index-th box (in layer order).

    The inner tangle must carry the box's sign as its outer sign and split
    the box's boundary evenly: a strands on the bottom, a on top.
    """
    validate(outer)
    validate(inner)
    boxes = outer.boxes()
    assert 0 <= box_index < len(boxes), "no such box"
    li, box = boxes[box_index]
    a = box.strands
    if inner.sign != box.sign:
        raise ShadingError(
            f"inner sign {inner.sign} does not match box sign {box.sign}"
        )
    if inner.bottom != a or inner.top != a:
        raise TangleArityError(
            f"inner tangle is {inner.bottom}->{inner.top}, box needs {a}->{a}"
        )
    off = box.pos - 1
    spliced = tuple(replace(l, pos=l.pos + off) for l in inner.layers)
    out = Tangle(
        outer.sign, outer.bottom, outer.layers[:li] + spliced + outer.layers[li + 1 :]
    )
    validate(out)
    return out


# ---------------------------------------------------------------------------
# Rigid isotopy normalization


def _footprint_out(l: Layer) -> tuple[float, float]:
    """Interval the layer owns in its output frame."""
    if l.kind == "TI":
        return (l.pos, l.pos + 1)
    if l.kind == "TE":
        return (l.pos - 0.5, l.pos - 0.5)
    return (l.pos, l.pos + l.strands - 1)


def _footprint_in(l: Layer) -> tuple[float, float]:
    """Interval the layer owns in its input frame."""
    if l.kind == "TI":
        return (l.pos - 0.5, l.pos - 0.5)
    if l.kind == "TE":
        return (l.pos, l.pos + 1)
    return (l.pos, l.pos + l.strands - 1)


def _try_swap(lower: Layer, upper: Layer) -> Optional[tuple[Layer, Layer]]:
    """Swap two vertically adjacent layers when the upper one lies strictly
    to the left; returns (new_lower, new_upper) or None."""
    f1 = _footprint_out(lower)
    f2 = _footprint_in(upper)
    if f2[1] < f1[0]:
        return upper, replace(lower, pos=lower.pos + upper.delta_count())
    return None


def _try_cancel(lower: Layer, upper: Layer) -> bool:
    """A cup directly under a cap one position over is a wiggle; both go."""
    return (
        lower.kind == "TI"
        and upper.kind == "TE"
        and abs(upper.pos - lower.pos) == 1
    )


def isotopy_normalize(t: Tangle) -> Tangle:
    """Cancel wiggles and sort far-apart layers into a canonical order.

    Only rigid moves are used: a cup-cap zigzag at adjacent positions is
    straightened, and layers with disjoint footprints are reordered with
    the leftmost lowest.  A cup directly under a cap at the same position
    is a closed loop and is kept; so is every cap-then-cup pattern.  The
    result is a fixed point: normalizing twice equals normalizing once.
    """
    validate(t)
    layers = list(t.layers)
    changed = True
    guard = 0
    while changed:
        changed = False
        guard += 1
        assert guard < 4 * (len(layers) + 2) ** 2, "normalization failed to settle"
        i = 0
        while i + 1 < len(layers):
            if _try_cancel(layers[i], layers[i + 1]):
                del layers[i : i + 2]
                changed = True
                i = max(i - 1, 0)
                continue
            swapped = _try_swap(layers[i], layers[i + 1])
            if swapped is not None:
                layers[i], layers[i + 1] = swapped
                changed = True
                i = max(i - 1, 0)
                continue
            i += 1
    out = Tangle(t.sign, t.bottom, tuple(layers))
    validate(out)
    return out


# ---------------------------------------------------------------------------
# Text form


def parse_tangle(text: str) -> Tangle:
    """Parse the layer list format produced by render_tangle.

    Example::

        tangle sign=+ bottom=4
        TI 2
        TS 1 arity=4 sign=+ label=x
        TE 3
    """
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("tangle"):
        raise TangleArityError("first line must be the tangle header")
    head = dict(re.findall(r"(\w+)=([+\-\w]+)", lines[0]))
    if "sign" not in head or "bottom" not in head:
        raise TangleArityError("header needs sign= and bottom=")
    layers = []
    for ln in lines[1:]:
        parts = ln.split()
        kind = parts[0]
        if kind not in ("TI", "TE", "TS"):
            raise TangleArityError(f"unknown layer kind {kind!r}")
        pos = int(parts[1])
        kv = dict(re.findall(r"(\w+)=([+\-\w]+)", ln))
        if kind == "TS":
            if "arity" not in kv or "sign" not in kv:
                raise TangleArityError("TS layer needs arity= and sign=")
            layers.append(
                Layer("TS", pos, int(kv["arity"]), kv["sign"], kv.get("label", ""))
            )
        else:
            layers.append(Layer(kind, pos))
    t = Tangle(head["sign"], int(head["bottom"]), tuple(layers))
    validate(t)
    return t


def render_tangle(t: Tangle) -> str:
    return repr(t) + "\n"


# ---------------------------------------------------------------------------
# Stock tangles


def identity_tangle(k: int, sign: str = "+") -> Tangle:
    return Tangle(sign, k, ())


def multiplication_tangle(k: int, sign: str = "+", upper: str = "x", lower: str = "y") -> Tangle:
    """Product tangle for x.y on k strands: y's box below x's box."""
    box = lambda lab: Layer("TS", 1, 2 * k, sign, lab)
    return Tangle(sign, k, (box(lower), box(upper)))


def inclusion_tangle(k: int, sign: str = "+", label: str = "x") -> Tangle:
    """One straight strand added at the right of an arity-2k box."""
    return Tangle(sign, k + 1, (Layer("TS", 1, 2 * k, sign, label),))


def jones_tangle(k: int, sign: str = "+") -> Tangle:
    """Cap then cup at position k on k+1 strands, the k-th Jones projection
    shape (loop normalized: the evaluator produces d times the projection)."""
    return Tangle(sign, k + 1, (Layer("TE", k), Layer("TI", k)))


def right_closure_tangle(k: int, sign: str = "+", label: str = "x") -> Tangle:
    """Close the last strand of an arity-2k box around the right."""
    assert k >= 1
    return Tangle(
        sign,
        k - 1,
        (
            Layer("TI", k),
            Layer("TS", 1, 2 * k, sign, label),
            Layer("TE", k),
        ),
    )


def left_closure_tangle(k: int, sign: str = "+", label: str = "x") -> Tangle:
    """Close the first strand of an arity-2k box around the left.

    The box keeps its own sign, so the outer sign is the opposite color.
    """
    assert k >= 1
    outer = "-" if sign == "+" else "+"
    return Tangle(
        outer,
        k - 1,
        (
            Layer("TI", 1),
            Layer("TS", 2, 2 * k, sign, label),
            Layer("TE", 1),
        ),
    )


def shift_tangle(k: int, sign: str = "+", label: str = "x") -> Tangle:
    """One straight strand added at the left of an arity-2k box; the box
    sign stays put so the outer sign flips."""
    outer = "-" if sign == "+" else "+"
    return Tangle(outer, k + 1, (Layer("TS", 2, 2 * k, sign, label),))


def half_turn_tangle(m: int, sign: str = "+", label: str = "x") -> Tangle:
    """Rotate an arity-2m box by a half turn: nested cups feed its bottom,
    nested caps drain its top, pairing box point j with boundary point
    m+1-j on each edge."""
    assert m >= 1
    cups = tuple(Layer("TI", p) for p in range(1, m + 1))
    caps = tuple(Layer("TE", p) for p in range(2 * m, m, -1))
    mid = (Layer("TS", m + 1, 2 * m, sign, label),)
    t = Tangle(sign, m, cups + mid + caps)
    validate(t)
    return t
