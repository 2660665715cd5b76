"""Exact Temperley-Lieb diagram algebra over Laurent polynomials in the loop weight.

A diagram on n strands is a crossingless perfect matching of 2n boundary
points, numbered 1..n along the bottom from left to right and n+1..2n along
the top from right to left, so that 1..2n is the boundary cycle and
planarity is exactly the balanced-bracket condition on that cycle.  The
generator E_i joins (i, i+1) on the bottom, the mirrored pair on top, and
runs every other strand straight through.  With d the loop weight (kept
symbolic, coefficients in Q) the generators satisfy

    E_i E_i          = d * E_i
    E_i E_{i+1} E_i  = E_i
    E_i E_j          = E_j E_i     (|i - j| >= 2)

Products stack the left factor on top of the right factor; every closed
loop formed in the middle is erased against a factor of d.  A worked
example, the two step projection word at n = 4:

    >>> w = word_to_tl([2, 1, 3, 2], 4)
    >>> w * w == LaurentPoly.delta(2) * w
    True

Closing the rightmost strand of that word turns it into the one step word
on 3 strands, with no stray power of d:

    >>> tl_right_closure(w) == word_to_tl([2], 3)
    True
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator


# ---------------------------------------------------------------------------
# Laurent polynomials in the loop weight


class LaurentPoly:
    """Laurent polynomial in the loop weight d with Fraction coefficients.

    Stored sparsely as exponent -> coefficient with no zero entries, so
    equality is plain dict equality.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs: dict[int, Fraction] | None = None):
        c: dict[int, Fraction] = {}
        for k, v in (coeffs or {}).items():
            v = Fraction(v)
            if v:
                c[int(k)] = v
        self.c = c

    @classmethod
    def zero(cls) -> "LaurentPoly":
        return cls()

    @classmethod
    def one(cls) -> "LaurentPoly":
        return cls({0: Fraction(1)})

    @classmethod
    def delta(cls, power: int = 1) -> "LaurentPoly":
        """The monomial d**power."""
        return cls({power: Fraction(1)})

    @classmethod
    def scalar(cls, value) -> "LaurentPoly":
        return cls({0: Fraction(value)})

    def __bool__(self) -> bool:
        return bool(self.c)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = LaurentPoly.scalar(other)
        if not isinstance(other, LaurentPoly):
            return NotImplemented
        return self.c == other.c

    def __hash__(self):
        return hash(frozenset(self.c.items()))

    def __add__(self, other: "LaurentPoly") -> "LaurentPoly":
        out = dict(self.c)
        for k, v in other.c.items():
            out[k] = out.get(k, Fraction(0)) + v
        return LaurentPoly(out)

    def __neg__(self) -> "LaurentPoly":
        return LaurentPoly({k: -v for k, v in self.c.items()})

    def __sub__(self, other: "LaurentPoly") -> "LaurentPoly":
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            other = LaurentPoly.scalar(other)
        if isinstance(other, TLElement):
            return other.__rmul__(self)
        if not isinstance(other, LaurentPoly):
            return NotImplemented
        out: dict[int, Fraction] = {}
        for k1, v1 in self.c.items():
            for k2, v2 in other.c.items():
                k = k1 + k2
                out[k] = out.get(k, Fraction(0)) + v1 * v2
        return LaurentPoly(out)

    __rmul__ = __mul__

    def __pow__(self, m: int) -> "LaurentPoly":
        assert m >= 0
        out = LaurentPoly.one()
        for _ in range(m):
            out = out * self
        return out

    def evaluate(self, delta: float) -> float:
        """Numeric value at a concrete loop weight."""
        return float(sum(float(v) * delta**k for k, v in self.c.items()))

    def to_json(self) -> dict[str, list[int]]:
        return {str(k): [v.numerator, v.denominator] for k, v in sorted(self.c.items())}

    def __repr__(self) -> str:
        if not self.c:
            return "0"
        bits = []
        for k in sorted(self.c, reverse=True):
            v = self.c[k]
            if k == 0:
                bits.append(f"{v}")
            elif v == 1:
                bits.append(f"d^{k}" if k != 1 else "d")
            else:
                bits.append(f"{v}*d^{k}" if k != 1 else f"{v}*d")
        return " + ".join(bits)


# ---------------------------------------------------------------------------
# Diagrams


@dataclass(frozen=True)
class TLDiagram:
    """Crossingless pairing of 2n points, bottom 1..n then top n+1..2n clockwise.

    ``pair`` has length 2n + 1 with a 0 sentinel at index 0 and
    pair[pair[p]] == p for every point p.
    """

    n: int
    pair: tuple[int, ...]

    def __post_init__(self):
        n2 = 2 * self.n
        assert len(self.pair) == n2 + 1 and self.pair[0] == 0
        for p in range(1, n2 + 1):
            q = self.pair[p]
            assert 1 <= q <= n2 and q != p and self.pair[q] == p, f"bad pairing at {p}"
        # planarity: balanced brackets along the boundary cycle
        stack: list[int] = []
        for p in range(1, n2 + 1):
            if self.pair[p] > p:
                stack.append(p)
            else:
                assert stack and stack[-1] == self.pair[p], f"crossing at {p}"
                stack.pop()
        assert not stack

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "TLDiagram":
        pair = [0] * (2 * n + 1)
        for a, b in pairs:
            pair[a], pair[b] = b, a
        return cls(n, tuple(pair))

    @classmethod
    def identity(cls, n: int) -> "TLDiagram":
        return cls.from_pairs(n, [(i, 2 * n + 1 - i) for i in range(1, n + 1)])

    @classmethod
    def generator(cls, i: int, n: int) -> "TLDiagram":
        """The diagram of E_i: cup at (i, i+1), cap above it, rest through."""
        assert 1 <= i <= n - 1, f"generator index {i} out of range for n={n}"
        pairs = [(i, i + 1), (2 * n - i, 2 * n + 1 - i)]
        pairs += [(j, 2 * n + 1 - j) for j in range(1, n + 1) if j not in (i, i + 1)]
        return cls.from_pairs(n, pairs)

    def pairs(self) -> list[tuple[int, int]]:
        return [(p, self.pair[p]) for p in range(1, 2 * self.n + 1) if p < self.pair[p]]

    def star(self) -> "TLDiagram":
        """Vertical reflection, the diagram of the adjoint."""
        n2 = 2 * self.n
        sigma = lambda p: n2 + 1 - p
        pair = [0] * (n2 + 1)
        for p in range(1, n2 + 1):
            pair[sigma(p)] = sigma(self.pair[p])
        return TLDiagram(self.n, tuple(pair))

    def is_identity(self) -> bool:
        return self == TLDiagram.identity(self.n)

    def __repr__(self) -> str:
        return "[" + " ".join(f"{a}-{b}" for a, b in self.pairs()) + "]"


@functools.cache
def all_diagrams(n: int) -> tuple[TLDiagram, ...]:
    """Every diagram on n strands; there are Catalan(n) of them."""

    def matchings(points: tuple[int, ...]) -> Iterator[list[tuple[int, int]]]:
        if not points:
            yield []
            return
        first = points[0]
        for j in range(1, len(points), 2):
            left, right = points[1:j], points[j + 1 :]
            for m1 in matchings(left):
                for m2 in matchings(right):
                    yield [(first, points[j])] + m1 + m2

    return tuple(
        TLDiagram.from_pairs(n, m) for m in matchings(tuple(range(1, 2 * n + 1)))
    )


def _compose_diagrams(upper: TLDiagram, lower: TLDiagram) -> tuple[TLDiagram, int]:
    """Glue lower's top edge to upper's bottom edge; return (diagram, loops).

    Interface: lower point 2n+1-i meets upper point i for i = 1..n, since top
    points run right to left.  Boundary of the result keeps lower's bottom
    numbering and upper's top numbering.
    """
    n = upper.n
    assert lower.n == n, "strand count mismatch"
    n2 = 2 * n

    def step(side: str, p: int) -> tuple[str, int]:
        d = upper if side == "U" else lower
        return side, d.pair[p]

    def cross(side: str, p: int) -> tuple[str, int]:
        if side == "L":
            return "U", n2 + 1 - p
        return "L", n2 + 1 - p

    def is_boundary(side: str, p: int) -> bool:
        return (side == "L" and p <= n) or (side == "U" and p > n)

    seen: set[tuple[str, int]] = set()
    new_pairs: list[tuple[int, int]] = []
    for start in [("L", p) for p in range(1, n + 1)] + [
        ("U", p) for p in range(n + 1, n2 + 1)
    ]:
        if start in seen:
            continue
        seen.add(start)
        side, p = step(*start)
        while not is_boundary(side, p):
            seen.add((side, p))
            side, p = cross(side, p)
            seen.add((side, p))
            side, p = step(side, p)
        seen.add((side, p))
        new_pairs.append((min(start[1], p), max(start[1], p)))
    # remaining interface points close up into loops
    loops = 0
    interior = [("L", p) for p in range(n + 1, n2 + 1)] + [
        ("U", p) for p in range(1, n + 1)
    ]
    for node in interior:
        if node in seen:
            continue
        loops += 1
        side, p = node
        while (side, p) not in seen:
            seen.add((side, p))
            side, p = step(side, p)
            seen.add((side, p))
            side, p = cross(side, p)
    return TLDiagram.from_pairs(n, new_pairs), loops


# ---------------------------------------------------------------------------
# Linear combinations


class TLElement:
    """Finite Laurent-linear combination of diagrams on a common strand count."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict[TLDiagram, LaurentPoly] | None = None):
        self.n = n
        t: dict[TLDiagram, LaurentPoly] = {}
        for d, c in (terms or {}).items():
            assert d.n == n, "strand count mismatch"
            if c:
                t[d] = c
        self.terms = t

    @classmethod
    def zero(cls, n: int) -> "TLElement":
        return cls(n)

    @classmethod
    def one(cls, n: int) -> "TLElement":
        return cls(n, {TLDiagram.identity(n): LaurentPoly.one()})

    @classmethod
    def generator(cls, i: int, n: int) -> "TLElement":
        return cls(n, {TLDiagram.generator(i, n): LaurentPoly.one()})

    @classmethod
    def from_diagram(cls, d: TLDiagram) -> "TLElement":
        return cls(d.n, {d: LaurentPoly.one()})

    def __eq__(self, other) -> bool:
        if not isinstance(other, TLElement):
            return NotImplemented
        return self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, frozenset((d, c) for d, c in self.terms.items())))

    def __add__(self, other: "TLElement") -> "TLElement":
        assert self.n == other.n
        out = dict(self.terms)
        for d, c in other.terms.items():
            out[d] = out.get(d, LaurentPoly.zero()) + c
        return TLElement(self.n, out)

    def __neg__(self) -> "TLElement":
        return TLElement(self.n, {d: -c for d, c in self.terms.items()})

    def __sub__(self, other: "TLElement") -> "TLElement":
        return self + (-other)

    def __rmul__(self, scalar) -> "TLElement":
        if isinstance(scalar, (int, Fraction)):
            scalar = LaurentPoly.scalar(scalar)
        assert isinstance(scalar, LaurentPoly)
        return TLElement(self.n, {d: scalar * c for d, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, LaurentPoly)):
            return self.__rmul__(other)
        assert isinstance(other, TLElement) and self.n == other.n
        out: dict[TLDiagram, LaurentPoly] = {}
        for d1, c1 in self.terms.items():
            for d2, c2 in other.terms.items():
                d, loops = _compose_diagrams(d1, d2)
                c = c1 * c2 * LaurentPoly.delta(loops)
                out[d] = out.get(d, LaurentPoly.zero()) + c
        return TLElement(self.n, out)

    def star(self) -> "TLElement":
        return TLElement(self.n, {d.star(): c for d, c in self.terms.items()})

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        keyed = sorted(self.terms.items(), key=lambda t: t[0].pair)
        return " + ".join(f"({c}) * {d}" for d, c in keyed)


def tl_compose(a: TLElement, b: TLElement) -> TLElement:
    """Bilinear product, a stacked on top of b, loops traded for powers of d."""
    return a * b


# ---------------------------------------------------------------------------
# Words in the generators


@dataclass(frozen=True)
class EWord:
    """A word in the generators, e.g. EWord.parse("2 1 3 2") for E2 E1 E3 E2."""

    letters: tuple[int, ...]

    @classmethod
    def parse(cls, text: str) -> "EWord":
        toks = [t for t in re.split(r"[,\s]+", text.strip()) if t]
        return cls(tuple(int(t) for t in toks))

    def __str__(self) -> str:
        return " ".join(str(i) for i in self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __len__(self):
        return len(self.letters)


@functools.cache
def _word_to_tl_cached(letters: tuple[int, ...], n: int) -> TLElement:
    out = TLElement.one(n)
    for i in letters:
        out = out * TLElement.generator(i, n)
    return out


def word_to_tl(word: Iterable[int] | EWord, n: int) -> TLElement:
    """Evaluate a generator word left to right, leftmost letter on top."""
    letters = tuple(word.letters if isinstance(word, EWord) else word)
    assert all(1 <= i <= n - 1 for i in letters), f"letters out of range for n={n}"
    return _word_to_tl_cached(letters, n)


# ---------------------------------------------------------------------------
# Descending blocks V_{r,s} = E_r E_{r-1} ... E_s and gap propagation

VBlock = tuple[int, int]


def vblock_letters(block: VBlock) -> list[int]:
    r, s = block
    return list(range(r, s - 1, -1)) if r >= s else []


def vblocks_to_word(blocks: Iterable[VBlock]) -> EWord:
    letters: list[int] = []
    for b in blocks:
        letters.extend(vblock_letters(b))
    return EWord(tuple(letters))


def vblocks_to_tl(blocks: Iterable[VBlock], n: int) -> TLElement:
    return word_to_tl(vblocks_to_word(blocks), n)


def apply_simp1(blocks: list[VBlock], t: int) -> list[VBlock]:
    """Rewrite V_{a,b} V_{c,d+2} V_{d,e} -> V_{a,d} V_{d-2,b} V_{c,d+2} V_{d-1,e}.

    A gap just above the third block propagates into the first block and
    widens; requires a >= d > b, c >= d + 2, d >= e.
    """
    (a, b), (c, s2), (d, e) = blocks[t], blocks[t + 1], blocks[t + 2]
    assert s2 == d + 2 and a >= d > b and c >= d + 2 and d >= e, "simp1 shape"
    return blocks[:t] + [(a, d), (d - 2, b), (c, d + 2), (d - 1, e)] + blocks[t + 3 :]


def apply_simp2(blocks: list[VBlock], t: int) -> list[VBlock]:
    """Rewrite V_{a,b} V_{c,b+2} V_{b-1,d} -> V_{a,d} V_{c,b+2}.

    The middle block commutes with the third, which then concatenates onto
    the first; requires a >= b, b - 1 >= d, c >= b + 2.
    """
    (a, b), (c, s2), (r3, d) = blocks[t], blocks[t + 1], blocks[t + 2]
    assert s2 == b + 2 and r3 == b - 1 and a >= b and b - 1 >= d and c >= b + 2, (
        "simp2 shape"
    )
    return blocks[:t] + [(a, d), (c, b + 2)] + blocks[t + 3 :]


def _simp1_applicable(blocks: list[VBlock], t: int) -> bool:
    if t + 2 >= len(blocks):
        return False
    (a, b), (c, s2), (d, e) = blocks[t], blocks[t + 1], blocks[t + 2]
    if any(r < s for r, s in (blocks[t], blocks[t + 1], blocks[t + 2])):
        return False
    return s2 == d + 2 and a >= d > b and c >= d + 2 and d >= e


def _simp2_applicable(blocks: list[VBlock], t: int) -> bool:
    if t + 2 >= len(blocks):
        return False
    (a, b), (c, s2), (r3, d) = blocks[t], blocks[t + 1], blocks[t + 2]
    if any(r < s for r, s in (blocks[t], blocks[t + 1], blocks[t + 2])):
        return False
    return s2 == b + 2 and r3 == b - 1 and a >= b and b - 1 >= d and c >= b + 2


def gap_propagate_left(blocks: list[VBlock]) -> list[VBlock]:
    """One rewrite at the leftmost applicable site; unchanged input at a fixed point.

    Empty blocks (r < s) are dropped first, then simp1, then simp2, each
    scanned left to right.  Every step preserves the word's value.
    """
    for t, (r, s) in enumerate(blocks):
        if r < s:
            return blocks[:t] + blocks[t + 1 :]
    for t in range(len(blocks)):
        if _simp1_applicable(blocks, t):
            return apply_simp1(blocks, t)
    for t in range(len(blocks)):
        if _simp2_applicable(blocks, t):
            return apply_simp2(blocks, t)
    return blocks


def rewrite_fixed_point(
    blocks: list[VBlock],
) -> tuple[list[VBlock], list[list[VBlock]]]:
    """Drive gap_propagate_left to a fixed point, recording every intermediate."""
    trace = [list(blocks)]
    while True:
        nxt = gap_propagate_left(blocks)
        if nxt == blocks:
            return blocks, trace
        blocks = nxt
        trace.append(list(blocks))


# ---------------------------------------------------------------------------
# Multi-step projection words


def multi_step_blocks(i: int, j: int) -> list[VBlock]:
    """Block form of the word E_{[i,j]}: V_{j+1,i+2} V_{j+2,i+3} ... V_{2j-i,j+1}."""
    assert i >= -1 and j > i, f"bad multi-step range ({i},{j})"
    return [(j + 1 + t, i + 2 + t) for t in range(j - i)]


def multi_step_word(i: int, j: int) -> EWord:
    """Generator word whose rescaling by d**-(j-i) is the multi-step projection."""
    return vblocks_to_word(multi_step_blocks(i, j))


# ---------------------------------------------------------------------------
# Closures


def tl_right_closure(x: TLElement) -> TLElement:
    """Join the rightmost top point to the rightmost bottom point.

    Realizes d times the conditional expectation down one strand: a loop
    (factor d) forms exactly when the two joined points were already
    connected.
    """
    n = x.n
    assert n >= 1, "nothing to close"
    n2 = 2 * n
    out = TLElement.zero(n - 1)
    for diag, coeff in x.terms.items():
        pair = list(diag.pair)
        extra = 0
        if pair[n] == n + 1:
            extra = 1
            kept = [
                (a, b) for a, b in diag.pairs() if a not in (n, n + 1) and b not in (n, n + 1)
            ]
        else:
            a, b = pair[n], pair[n + 1]
            kept = [
                (p, q)
                for p, q in diag.pairs()
                if p not in (n, n + 1) and q not in (n, n + 1)
            ]
            kept.append((min(a, b), max(a, b)))
        relabel = lambda p: p if p <= n - 1 else p - 2
        small = TLDiagram.from_pairs(
            n - 1, [(relabel(a), relabel(b)) for a, b in kept]
        )
        out = out + TLElement(
            n - 1, {small: coeff * LaurentPoly.delta(extra)}
        )
    return out


def full_closure_trace(x: TLElement) -> LaurentPoly:
    """Close every strand around the right, innermost first; d per closed loop."""
    while x.n > 0:
        x = tl_right_closure(x)
    empty = TLDiagram(0, (0,))
    return x.terms.get(empty, LaurentPoly.zero())
