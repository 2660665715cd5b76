"""Multi-matrix inclusions and the iterated basic construction.

An inclusion N `⊆` M of finite-dimensional multi-matrix algebras is given
by block sizes, an embedding multiplicity matrix and a faithful state
density.  From that data we build the unique state-compatible
conditional expectation, Pimsner-Popa bases, the index, and the Jones
tower M `⊂` M_1 `⊂` M_2 `⊂` ... with each level represented concretely as
matrices on the GNS space of the level below.

Conventions used throughout:

* level k = -1 is N, level 0 is M (concrete D x D matrices), and level
  k >= 1 consists of operators on H_k = L^2(M_{k-1}, phi_{k-1}), i.e.
  square matrices of size dim M_{k-1}.
* every state is evaluated through a density matrix: phi_k(z) =
  Tr(z K_k), with K_0 the fixture density and K_{k+1} derived from the
  pull-down formula for E_{M_k}.
* "hat" maps an algebra element to its coordinate vector in the
  orthonormal basis of the level's L^2 space; "unhat" inverts it.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np

from .errors import (
    DimensionBudgetError,
    NonFaithfulStateError,
    VerificationError,
)

Array = np.ndarray

# Construction-time verification tolerance.  Test files pin their own.
_CHECK_TOL = 1e-9
# Eigenvalue floor for inverse powers of provably-invertible elements;
# hitting it means the input was not what it claimed to be.
_SPECTRUM_FLOOR = 1e-12
# Abort tower construction past this algebra dimension.
DIMENSION_BUDGET = 10_000


def dag(a: Array) -> Array:
    """Adjoint of a matrix."""
    return a.conj().T


def _vec(a: Array) -> Array:
    return np.asarray(a, dtype=complex).reshape(-1)


def _norm(a: Array) -> float:
    return float(np.linalg.norm(np.asarray(a)))


def close(a, b, tol: float = _CHECK_TOL) -> bool:
    """Entrywise closeness for matrices or scalars."""
    return _norm(np.asarray(a) - np.asarray(b)) <= tol * (1.0 + _norm(b))


def psd_power(a: Array, t: float, floor: float = _SPECTRUM_FLOOR) -> Array:
    """a**t for a positive element, by Hermitian eigendecomposition.

    Negative powers require the spectrum to stay above ``floor``; a
    violation raises instead of silently clamping.  Nonnegative powers
    clip tiny negative eigenvalues (roundoff) at zero.
    """
    h = (a + dag(a)) / 2.0
    evals, vects = np.linalg.eigh(h)
    if t < 0:
        if np.min(evals) <= floor:
            raise VerificationError(
                f"element is not safely positive invertible "
                f"(min eigenvalue {np.min(evals):.3e}) for power {t}"
            )
    else:
        evals = np.clip(evals, 0.0, None)
    return (vects * np.power(evals, t)) @ dag(vects)


def psd_pinv_sqrt(a: Array, floor: float = _SPECTRUM_FLOOR) -> Array:
    """Pseudo-inverse square root of a positive-semidefinite element.

    Zero modes are allowed (they correspond to the support projection
    shrinking); eigenvalues below ``floor`` are treated as zero.
    """
    h = (a + dag(a)) / 2.0
    evals, vects = np.linalg.eigh(h)
    inv = np.where(evals > floor, 1.0 / np.sqrt(np.where(evals > floor, evals, 1.0)), 0.0)
    return (vects * inv) @ dag(vects)


def _independent_rows(vs: Array, tol: float = 1e-9) -> list[int]:
    """Indices of a greedy linearly independent subset of the rows.

    Twice-reorthogonalized Gram-Schmidt with batched projections.
    """
    n, m = vs.shape
    q = np.zeros((0, m), complex)
    kept: list[int] = []
    for i in range(n):
        v = vs[i]
        r = v.copy()
        for _ in range(2):
            if len(q):
                r = r - q.T @ (q.conj() @ r)
        nr = _norm(r)
        if nr > tol * (1.0 + _norm(v)):
            kept.append(i)
            q = np.vstack([q, r[None, :] / nr])
    return kept


def _independent_subset(mats: list[Array], tol: float = 1e-9) -> list[Array]:
    """Greedy selection of a linearly independent subset, in order."""
    vs = np.stack([_vec(m) for m in mats])
    return [mats[i] for i in _independent_rows(vs, tol)]


def pp_gram_schmidt(spanning: list[Array], expect, embed=None, tol: float = 1e-9):
    """Gram-Schmidt for the expectation-valued form (x, y) -> E(x* y).

    Returns (basis, supports): elements b with E(b_i* b_j) = delta_ij q_i
    where each q_i is the support projection of the normalized residue.
    Orthonormal elements (q = 1) arise whenever E(y* y) is invertible.
    ``embed`` re-represents expectation values inside the larger algebra
    when the two live on different spaces (identity by default).
    """
    if embed is None:
        embed = lambda v: v  # noqa: E731
    basis: list[Array] = []
    supports: list[Array] = []
    for x in spanning:
        y = np.asarray(x, dtype=complex)
        for _ in range(2):
            for b in basis:
                y = y - b @ embed(expect(dag(b) @ y))
        q = expect(dag(y) @ y)
        if _norm(q) <= tol * (1.0 + _norm(x)):
            continue
        b = y @ embed(psd_pinv_sqrt(q))
        basis.append(b)
        supports.append(expect(dag(b) @ b))
    return basis, supports


# ---------------------------------------------------------------------------
# Inclusions


def _parse_fraction(s) -> float:
    if isinstance(s, str):
        return float(Fraction(s))
    return float(s)


@dataclass
class Inclusion:
    """A multi-matrix inclusion N `⊆` M with state and expectation.

    M = `⊕`_c Mat(m_c) sits inside Mat(D) block-diagonally, D = `Σ` m_c.
    N = `⊕`_i Mat(n_i) embeds into block c with multiplicity mult[i][c],
    copies laid out consecutively in block order.  The state is
    phi(x) = Tr(rho x) with rho diagonal in the chosen basis.
    """

    name: str
    small_dims: tuple[int, ...]
    big_dims: tuple[int, ...]
    mult: tuple[tuple[int, ...], ...]
    rho_diag: Array

    D: int = field(init=False)
    rho: Array = field(init=False)
    m_basis: list = field(init=False)
    n_basis: list = field(init=False)

    def __post_init__(self):
        self.big_offsets = []
        off = 0
        for m in self.big_dims:
            self.big_offsets.append(off)
            off += m
        self.D = off
        for i, row in enumerate(self.mult):
            for c, t in enumerate(row):
                if t < 0:
                    raise ValueError("multiplicities must be nonnegative")
        for c, m in enumerate(self.big_dims):
            filled = sum(self.mult[i][c] * n for i, n in enumerate(self.small_dims))
            if filled != m:
                raise ValueError(
                    f"block {c}: embedding fills {filled} of {m} dimensions"
                )
        self.rho_diag = np.asarray([_parse_fraction(x) for x in self.rho_diag], float)
        if self.rho_diag.shape != (self.D,):
            raise ValueError("density diagonal has wrong length")
        if abs(float(np.sum(self.rho_diag)) - 1.0) > 1e-12:
            raise ValueError("density must have unit trace")
        self.rho = np.diag(self.rho_diag).astype(complex)
        self.m_basis = self._matrix_units_m()
        self.n_basis = self._embedded_units_n()
        self._expectation = None
        self._pp = None

    # -- basis plumbing ----------------------------------------------------

    def _matrix_units_m(self):
        out = []
        for c, m in enumerate(self.big_dims):
            o = self.big_offsets[c]
            for a in range(m):
                for b in range(m):
                    u = np.zeros((self.D, self.D), complex)
                    u[o + a, o + b] = 1.0
                    out.append(u)
        return out

    def _block_rows(self, i: int, c: int) -> list[int]:
        """Row indices of all copies of N-block i inside M-block c."""
        o = self.big_offsets[c]
        for ii, n in enumerate(self.small_dims):
            copies = self.mult[ii][c]
            if ii == i:
                return [o + t * n + a for t in range(copies) for a in range(n)]
            o += copies * n
        return []

    def _embedded_units_n(self):
        out = []
        for i, n in enumerate(self.small_dims):
            for a in range(n):
                for b in range(n):
                    u = np.zeros((self.D, self.D), complex)
                    for c in range(len(self.big_dims)):
                        rows = self._block_rows(i, c)
                        copies = self.mult[i][c]
                        for t in range(copies):
                            u[rows[t * n + a], rows[t * n + b]] = 1.0
                    out.append(u)
        return out

    @property
    def dim_m(self) -> int:
        return len(self.m_basis)

    @property
    def dim_n(self) -> int:
        return len(self.n_basis)

    def unit(self) -> Array:
        return np.eye(self.D, dtype=complex)

    # -- state -------------------------------------------------------------

    def phi(self, x: Array) -> complex:
        return complex(np.trace(self.rho @ x))

    def check_faithful(self):
        if np.min(self.rho_diag) <= _SPECTRUM_FLOOR:
            raise NonFaithfulStateError(
                f"{self.name}: state density has a vanishing eigenvalue"
            )

    # -- conditional expectation -------------------------------------------

    def E(self, x: Array) -> Array:
        """The unique phi-compatible conditional expectation onto N."""
        if self._expectation is None:
            self._expectation = self._build_expectation()
        return self._expectation(x)

    def _build_expectation(self):
        self.check_faithful()
        nb = self.n_basis
        gram = np.array([[self.phi(dag(a) @ b) for b in nb] for a in nb])
        try:
            gram_inv = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise NonFaithfulStateError(
                f"{self.name}: state degenerate on N"
            ) from exc
        stack = np.stack(nb)

        def expectation(x: Array) -> Array:
            rhs = np.array([self.phi(dag(a) @ x) for a in nb])
            coeff = gram_inv @ rhs
            return np.tensordot(coeff, stack, axes=(0, 0))

        self._verify_expectation(expectation)
        return expectation

    def _verify_expectation(self, expectation):
        one = self.unit()
        if not close(expectation(one), one):
            raise VerificationError(f"{self.name}: E(1) != 1")
        for x in self.m_basis:
            ex = expectation(x)
            if not close(expectation(ex), ex):
                raise VerificationError(f"{self.name}: E not idempotent")
            if not close(expectation(dag(x)), dag(ex)):
                raise VerificationError(f"{self.name}: E not *-compatible")
            if abs(self.phi(ex) - self.phi(x)) > _CHECK_TOL:
                raise VerificationError(f"{self.name}: phi o E != phi")
        # Bimodularity over N, on generator triples.
        for a in self.n_basis:
            for x in self.m_basis:
                for b in self.n_basis:
                    lhs = expectation(a @ x @ b)
                    rhs = a @ expectation(x) @ b
                    if not close(lhs, rhs):
                        raise VerificationError(
                            f"{self.name}: E is not an N-bimodule map"
                        )

    # -- Pimsner-Popa basis and index ----------------------------------------

    def pp_basis(self) -> list[Array]:
        """A Pimsner-Popa basis for M over N (cached)."""
        if self._pp is None:
            basis, _ = pp_gram_schmidt(self.m_basis, self.E)
            self._pp = basis
        return self._pp

    def pp_basis_variant(self, seed: int = 7) -> list[Array]:
        """A second Pimsner-Popa basis from a randomized spanning set.

        Used to certify that basis-summation formulas are basis
        independent.
        """
        rng = np.random.default_rng(seed)
        d = len(self.m_basis)
        mix = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        q, _ = np.linalg.qr(mix)
        stack = np.stack(self.m_basis)
        spanning = [np.tensordot(q[:, j], stack, axes=(0, 0)) for j in range(d)]
        basis, _ = pp_gram_schmidt(spanning, self.E)
        return basis

    def index_element(self) -> Array:
        return sum(b @ dag(b) for b in self.pp_basis())

    def index(self) -> float:
        """Ind(E) = `Σ` b b*; scalar for connected inclusions."""
        ind = self.index_element()
        scale = complex(np.trace(ind)) / self.D
        if not close(ind, scale * self.unit(), 1e-8):
            warnings.warn(
                f"{self.name}: index element is central but not scalar; "
                "returning its trace-average",
                stacklevel=2,
            )
        return float(scale.real)

    @property
    def delta(self) -> float:
        return float(np.sqrt(self.index()))

    @property
    def tau(self) -> float:
        return 1.0 / self.index()

    def e_inverse(self, x: Array) -> Array:
        """The basis realization of E^{-1}: x -> `Σ`_b b x b*."""
        return sum(b @ x @ dag(b) for b in self.pp_basis())


# ---------------------------------------------------------------------------
# Fixture loading


def load_inclusion(source: str) -> Inclusion:
    """Load an inclusion config by bundled fixture name or file path."""
    text = None
    try:
        candidate = resources.files("rigidpa").joinpath(f"fixtures/{source}.json")
        if candidate.is_file():
            text = candidate.read_text()
    except (TypeError, ValueError, OSError):
        text = None
    if text is None:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    cfg = json.loads(text)
    return inclusion_from_config(cfg)


def inclusion_from_config(cfg: dict) -> Inclusion:
    density = []
    for block in cfg["density"]:
        density.extend(block)
    return Inclusion(
        name=cfg.get("name", "inclusion"),
        small_dims=tuple(cfg["small_blocks"]),
        big_dims=tuple(cfg["big_blocks"]),
        mult=tuple(tuple(row) for row in cfg["multiplicity"]),
        rho_diag=density,
    )


def fixture_names() -> list[str]:
    return ["trace2", "state2", "diag"]


# ---------------------------------------------------------------------------
# Tower levels


@dataclass
class _Level:
    """Machinery of one algebra level in a fixed matrix representation.

    Level 0 is M itself (D x D matrices); level k >= 1 consists of
    operators on H_k = C^{dim of level k-1}.
    """

    k: int
    basis: list
    onb: list
    K: Array
    jones: list
    pp: list = None
    supports: list = None

    def __post_init__(self):
        self.dim = len(self.basis)
        self.h = self.basis[0].shape[0]
        self._hat_rows = np.stack([_vec(u).conj() for u in self.onb])
        self._onb_stack = np.stack(self.onb)

    def unit(self) -> Array:
        return np.eye(self.h, dtype=complex)

    def phi(self, z: Array) -> complex:
        return complex(np.trace(z @ self.K))

    def hat(self, y: Array) -> Array:
        """Coordinates of y in the orthonormal basis of L^2(level)."""
        return self._hat_rows @ _vec(y @ self.K)

    def hat_batch(self, mats: Array) -> Array:
        """hat applied along the first axis of a stack of matrices."""
        mk = np.asarray(mats, dtype=complex) @ self.K
        return mk.reshape(mk.shape[0], -1) @ self._hat_rows.T

    def unhat(self, v: Array) -> Array:
        return np.tensordot(np.asarray(v), self._onb_stack, axes=(0, 0))

    def lift(self, x: Array) -> Array:
        """Left-multiplication matrix of x on L^2(level)."""
        prods = np.asarray(x, dtype=complex)[None, :, :] @ self._onb_stack
        return self.hat_batch(prods).T

    def lift_batch(self, mats: Array) -> Array:
        """lift along the first axis, chunked to bound peak memory."""
        mats = np.asarray(mats, dtype=complex)
        n = mats.shape[0]
        chunk = max(1, int(3e7 / (self.dim * self.h * self.h)))
        out = np.empty((n, self.dim, self.dim), complex)
        for lo in range(0, n, chunk):
            part = mats[lo : lo + chunk]
            prods = part[:, None, :, :] @ self._onb_stack[None, :, :, :]
            flat = self.hat_batch(prods.reshape(-1, self.h, self.h))
            cols = flat.reshape(part.shape[0], self.dim, self.dim)
            out[lo : lo + chunk] = cols.transpose(0, 2, 1)
        return out

    def gram(self, xs: list) -> Array:
        """Gram matrix [phi(x_i* x_j)] of level elements."""
        return np.array([[self.phi(dag(a) @ b) for b in xs] for a in xs])


def _orthonormalize(basis: list, K: Array, name: str) -> list:
    """phi-orthonormal combinations of a linearly independent basis."""
    root = psd_power(np.asarray(K), 0.5)
    cols = np.stack([_vec(x @ root) for x in basis], axis=1)
    q, r = np.linalg.qr(cols)
    diag = np.abs(np.diag(r))
    if np.min(diag) <= 1e-10 * max(1.0, np.max(diag)):
        raise NonFaithfulStateError(f"{name}: state degenerate on the level span")
    inv = np.linalg.inv(r)
    stack = np.stack(basis)
    return [np.tensordot(inv[:, j], stack, axes=(0, 0)) for j in range(len(basis))]


class TowerContext:
    """The Jones tower of an inclusion, materialized to a given depth.

    ``levels[k]`` carries level k's basis, orthonormal basis, state
    density, Jones projections e_1..e_k (represented on H_k), the
    Pimsner-Popa basis of level k over level k-1, and the pull-down
    conditional expectation one step down.
    """

    def __init__(self, incl: Inclusion, depth: int):
        if depth < 1:
            raise ValueError("tower depth must be >= 1")
        incl.check_faithful()
        self.incl = incl
        self.depth = depth
        self.delta = incl.delta
        self.tau = incl.tau
        level0 = _Level(
            k=0,
            basis=list(incl.m_basis),
            onb=_orthonormalize(incl.m_basis, incl.rho, incl.name),
            K=incl.rho,
            jones=[],
        )
        level0.pp = incl.pp_basis()
        level0.supports = [incl.E(dag(b) @ b) for b in incl.pp_basis()]
        self.levels = [level0]
        self._e_down = [incl.E]
        self._e_tensors = [None]
        for k in range(1, depth + 1):
            self._build_level(k)

    # -- construction ------------------------------------------------------

    def _build_level(self, k: int):
        prev = self.levels[k - 1]
        pp_prev = self.pp(k - 1)
        estimate = prev.dim * len(pp_prev)
        if estimate > DIMENSION_BUDGET:
            raise DimensionBudgetError(
                f"level {k} span estimate {estimate} exceeds budget "
                f"{DIMENSION_BUDGET}"
            )
        e_prev = self._e_down[k - 1]
        if k == 1:
            embed_below = lambda v: v  # noqa: E731  (N sits inside M as is)
        else:
            embed_below = self.levels[k - 2].lift
        e_k = np.stack(
            [prev.hat(embed_below(e_prev(u))) for u in prev.onb], axis=1
        )
        jones = [prev.lift(e) for e in prev.jones] + [e_k]

        tau = self.tau
        pp_stack = np.stack(pp_prev)
        pp_hat = prev.hat_batch(pp_stack)
        dags = np.stack([dag(b) for b in pp_prev])
        f_mat = tau * np.einsum(
            "ipq,bqp->bi", prev._onb_stack, dags @ prev.K, optimize=True
        )
        K = pp_hat.T @ f_mat
        skew = _norm(K - dag(K))
        if skew > _CHECK_TOL * (1.0 + _norm(K)):
            raise VerificationError(f"level {k}: state density not Hermitian")
        K = (K + dag(K)) / 2.0

        lifted_basis = prev.lift_batch(np.stack(prev.basis))
        lifted_pp = prev.lift_batch(pp_stack)
        eb = np.einsum("ij,bkj->bik", e_k, lifted_pp.conj(), optimize=True)
        spanning = np.einsum(
            "aij,bjk->abik", lifted_basis, eb, optimize=True
        ).reshape(-1, prev.dim, prev.dim)
        evals, vects = np.linalg.eigh(K)
        keep = evals > _SPECTRUM_FLOOR
        thin = vects[:, keep] * np.sqrt(evals[keep])
        coords = (spanning @ thin).reshape(spanning.shape[0], -1)
        basis = [spanning[i] for i in _independent_rows(coords)]

        w_terms = np.einsum("ipq,bqr->bipr", prev._onb_stack, dags, optimize=True)
        d_tensor = tau * np.einsum("bm,bipr->impr", pp_hat, w_terms, optimize=True)

        def e_down(z: Array, _d=d_tensor) -> Array:
            return np.tensordot(np.asarray(z, dtype=complex), _d, axes=([0, 1], [0, 1]))

        level = _Level(
            k=k,
            basis=basis,
            onb=_orthonormalize(basis, K, f"{self.incl.name} level {k}"),
            K=K,
            jones=jones,
        )
        self.levels.append(level)
        self._e_down.append(e_down)
        self._e_tensors.append(d_tensor)
        self._spot_check(k)

    def _spot_check(self, k: int):
        level = self.levels[k]
        prev = self.levels[k - 1]
        e = level.jones[-1]
        if not close(e @ e, e) or not close(dag(e), e):
            raise VerificationError(f"level {k}: e_{k} is not a projection")
        if not close(level.phi(level.unit()), 1.0):
            raise VerificationError(f"level {k}: state not normalized")
        if not close(level.phi(e), self.tau):
            raise VerificationError(f"level {k}: phi(e_{k}) != tau")
        x = prev.basis[min(1, prev.dim - 1)]
        lx = prev.lift(x)
        ex = self._e_down[k - 1](x)
        if k >= 2:
            ex = self.levels[k - 2].lift(ex)
        if not close(e @ lx @ e, prev.lift(ex) @ e):
            raise VerificationError(f"level {k}: e x e != E(x) e")
        one = self._e_down[k](level.unit())
        if not close(one, prev.unit()):
            raise VerificationError(f"level {k}: E_down(1) != 1")

    # -- accessors ---------------------------------------------------------

    def level(self, k: int) -> _Level:
        if not 0 <= k <= self.depth:
            raise ValueError(f"level {k} outside materialized range")
        return self.levels[k]

    def dim(self, k: int) -> int:
        return self.level(k).dim

    def phi(self, k: int, z: Array) -> complex:
        return self.level(k).phi(z)

    def unit(self, k: int) -> Array:
        return self.level(k).unit()

    def e_down(self, k: int):
        """E_{M_{k-1}} as an element map from level k to level k-1."""
        if not 1 <= k <= self.depth:
            raise ValueError(f"no expectation below level {k}")
        return self._e_down[k]

    def expect_to(self, k_from: int, k_to: int, z: Array) -> Array:
        """Iterated conditional expectation from level k_from to k_to.

        k_to = -1 lands in N (through the inclusion's expectation).
        """
        out = np.asarray(z, dtype=complex)
        for k in range(k_from, max(k_to, 0), -1):
            out = self._e_down[k](out)
        if k_to == -1:
            out = self.incl.E(out)
        return out

    def lift(self, k: int, x: Array) -> Array:
        """Represent a level k-1 element on H_k."""
        return self.level(k - 1).lift(x)

    def lift_to(self, k_from: int, k_to: int, x: Array) -> Array:
        out = np.asarray(x, dtype=complex)
        for k in range(k_from + 1, k_to + 1):
            out = self.lift(k, out)
        return out

    def jones_on(self, k: int) -> list:
        """The projections e_1..e_k represented on H_k."""
        return self.level(k).jones

    def e_word(self, k: int, letters) -> Array:
        """Product of normalized projections E_i = delta e_i on H_k."""
        out = self.unit(k)
        for i in letters:
            out = out @ (self.delta * self.level(k).jones[i - 1])
        return out

    def pp(self, k: int) -> list:
        """Pimsner-Popa basis of level k over level k-1 (B_k); lazy at
        the top level, where nothing else needs it."""
        lvl = self.level(k)
        if lvl.pp is None:
            pp, supports = pp_gram_schmidt(
                lvl.basis, self._e_down[k], embed=self.levels[k - 1].lift
            )
            lvl.pp = pp
            lvl.supports = supports
        return lvl.pp

    # -- frontier (level depth+1 machinery without materializing it) -------

    def frontier(self, j: int) -> "Frontier":
        return Frontier(self, j)


class Frontier:
    """Operators on H_{j+1} = L^2(M_j) built from level-j data only.

    Provides the lift into B(H_{j+1}), the Jones projection e_{j+1},
    the pull-down expectation onto level j, and the modular matrices
    (S, Delta, J) of phi_j -- enough to work one level above the
    materialized tower at no extra storage cost.
    """

    def __init__(self, tc: TowerContext, j: int):
        if not 0 <= j <= tc.depth:
            raise ValueError("frontier level outside tower")
        self.tc = tc
        self.j = j
        lvl = tc.level(j)
        self.level = lvl
        self.h = lvl.dim
        if j == 0:
            vals = np.stack([tc.incl.E(u) for u in lvl.onb])
        else:
            vals = np.tensordot(
                lvl._onb_stack, tc._e_tensors[j], axes=([1, 2], [0, 1])
            )
            vals = tc.level(j - 1).lift_batch(vals)
        self.e_next = lvl.hat_batch(vals).T
        self._e_tensor = None
        self._s = None
        self._delta = None

    def lift(self, x: Array) -> Array:
        return self.level.lift(x)

    def jones_all(self) -> list:
        """e_1..e_{j+1} on H_{j+1}."""
        return [self.lift(e) for e in self.level.jones] + [self.e_next]

    def e_down(self, z: Array) -> Array:
        """E_{M_j} from the frontier back into level j."""
        lvl = self.level
        if self._e_tensor is None:
            pp = self.tc.pp(self.j)
            pp_hat = lvl.hat_batch(np.stack(pp))
            dags = np.stack([dag(b) for b in pp])
            w_terms = np.einsum("ipq,bqr->bipr", lvl._onb_stack, dags, optimize=True)
            self._e_tensor = self.tc.tau * np.einsum(
                "bm,bipr->impr", pp_hat, w_terms, optimize=True
            )
        return np.tensordot(
            np.asarray(z, dtype=complex), self._e_tensor, axes=([0, 1], [0, 1])
        )

    def e_word(self, letters) -> Array:
        js = self.jones_all()
        out = np.eye(self.h, dtype=complex)
        for i in letters:
            out = out @ (self.tc.delta * js[i - 1])
        return out

    # -- modular matrices of phi_j on H_{j+1} ------------------------------

    def s_matrix(self) -> Array:
        """Matrix of the conjugation x-hat -> (x*)-hat (acts with conj)."""
        if self._s is None:
            lvl = self.level
            dags = np.stack([dag(u) for u in lvl.onb])
            self._s = lvl.hat_batch(dags).T
        return self._s

    def delta_matrix(self) -> Array:
        """The modular operator Delta of phi_j as a matrix on H_{j+1}:
        entries phi(u_j u_i*)."""
        if self._delta is None:
            lvl = self.level
            us = lvl._onb_stack.reshape(lvl.dim, -1)
            vs = np.stack(
                [_vec((dag(u) @ lvl.K).T) for u in lvl.onb]
            )
            d = vs @ us.T
            self._delta = (d + dag(d)) / 2.0
        return self._delta

    def j_matrix(self) -> Array:
        """Antiunitary J = S Delta^{-1/2}; acts as v -> J_m conj(v)."""
        return self.s_matrix() @ np.conj(psd_power(self.delta_matrix(), -0.5))

    def j_conjugate(self, a: Array) -> Array:
        """The linear operator J a J."""
        jm = self.j_matrix()
        return jm @ np.conj(a) @ np.conj(jm)

    def mirror_jones(self) -> list:
        """e_1 .. e_{2j+1} on H_{j+1}: tower projections below the
        middle, their modular mirrors e_{j+1+r} = J e_{j+1-r} J above.
        """
        base = self.jones_all()
        out = list(base)
        for r in range(1, self.j + 1):
            out.append(self.j_conjugate(base[self.j - r]))
        return out

    def mirror_word(self, letters) -> Array:
        js = self.mirror_jones()
        out = np.eye(self.h, dtype=complex)
        for i in letters:
            out = out @ (self.tc.delta * js[i - 1])
        return out


# ---------------------------------------------------------------------------
# Module-level operations


def conditional_expectation(incl: Inclusion, x: Array) -> Array:
    return incl.E(x)


def index(incl: Inclusion) -> float:
    return incl.index()


def pimsner_popa_basis(incl: Inclusion) -> list:
    return incl.pp_basis()


def tower(incl: Inclusion, depth: int) -> TowerContext:
    return TowerContext(incl, depth)


def basic_construction(incl: Inclusion, tc: TowerContext | None = None):
    """Build M_1 = <M, e_1> on L^2(M) and certify its characterization.

    Returns (basis of M_1, e_1, E_M).  Verified properties: the e_1
    compression rule, M `∩` {e_1}' = N, J e_1 J = e_1, M_1 = J N' J, and
    M_1 = span M e_1 M with E_M(e_1) = tau.
    """
    tc = tc or TowerContext(incl, 1)
    lvl0 = tc.level(0)
    lvl1 = tc.level(1)
    e1 = lvl1.jones[0]
    e_m = tc.e_down(1)

    for x in incl.m_basis:
        lx = lvl0.lift(x)
        if not close(e1 @ lx @ e1, lvl0.lift(incl.E(x)) @ e1):
            raise VerificationError("basic construction: e1 x e1 != E(x) e1")

    # M cap {e1}' = N: solve the commutation condition inside M.
    comm_cols = []
    for x in incl.m_basis:
        lx = lvl0.lift(x)
        comm_cols.append(_vec(lx @ e1 - e1 @ lx))
    cmat = np.stack(comm_cols, axis=1)
    svals = np.linalg.svd(cmat, compute_uv=False)
    null_dim = int(np.sum(svals <= 1e-9 * max(1.0, svals[0])))
    if null_dim != incl.dim_n:
        raise VerificationError(
            f"basic construction: dim(M cap {{e1}}') = {null_dim}, "
            f"expected dim N = {incl.dim_n}"
        )
    for n in incl.n_basis:
        ln = lvl0.lift(n)
        if not close(ln @ e1, e1 @ ln):
            raise VerificationError("basic construction: N does not commute with e1")

    front = tc.frontier(0)
    if not close(front.j_conjugate(e1), e1):
        raise VerificationError("basic construction: J e1 J != e1")

    # M_1 = J N' J as subspaces of B(L^2(M)).
    d = lvl0.dim
    eye = np.eye(d, dtype=complex)
    rows = []
    for n in incl.n_basis:
        ln = lvl0.lift(n)
        rows.append(np.kron(ln, eye) - np.kron(eye, ln.T))
    big = np.concatenate(rows, axis=0)
    _, svals, vh = np.linalg.svd(big, full_matrices=False)
    commutant_vecs = [
        np.conj(vh[i])
        for i in range(len(svals))
        if svals[i] <= 1e-9 * max(1.0, float(svals[0]))
    ]
    mirrored = np.stack(
        [_vec(front.j_conjugate(v.reshape(d, d))) for v in commutant_vecs],
        axis=1,
    )
    span_m1 = np.stack([_vec(b) for b in lvl1.basis], axis=1)
    proj, *_ = np.linalg.lstsq(span_m1, mirrored, rcond=None)
    if not close(span_m1 @ proj, mirrored):
        raise VerificationError("basic construction: J N' J != span M e1 M")
    if len(commutant_vecs) != lvl1.dim:
        raise VerificationError(
            f"basic construction: dim J N' J = {len(commutant_vecs)} != {lvl1.dim}"
        )

    if not close(e_m(e1), tc.tau * lvl0.unit()):
        raise VerificationError("basic construction: E_M(e1) != tau")

    return lvl1.basis, e1, e_m


def pull_down(tc: TowerContext, z: Array, k: int = 1) -> Array:
    """The element x of level k-1 with z e_k = x e_k, for z in level k."""
    lvl_prev = tc.level(k - 1)
    omega = lvl_prev.hat(lvl_prev.unit())
    x = lvl_prev.unhat(np.asarray(z) @ omega)
    e_k = tc.jones_on(k)[-1]
    lx = lvl_prev.lift(x)
    if not close(np.asarray(z) @ e_k, lx @ e_k):
        raise VerificationError("pull-down identity failed")
    alt = tc.e_down(k)(np.asarray(z) @ e_k) / tc.tau
    if not close(alt, x):
        raise VerificationError("pull-down disagrees with tau^-1 E(z e)")
    return x


def theta(tc: TowerContext, xs) -> Array:
    """theta(x_1 (x) ... (x) x_{k+1}) in level k, x_i concrete in M.

    Both orderings -- ascending v_1..v_k between the factors and the
    starred descending one -- are computed and must agree.
    """
    xs = [np.asarray(x, dtype=complex) for x in xs]
    k = len(xs) - 1
    if k == 0:
        return xs[0]
    if k > tc.depth:
        raise ValueError("theta target level outside tower")
    lifted = [tc.lift_to(0, k, x) for x in xs]
    vs = [tc.e_word(k, range(j, 0, -1)) for j in range(1, k + 1)]
    out = lifted[0]
    for j in range(1, k + 1):
        out = out @ vs[j - 1] @ lifted[j]
    alt = lifted[0]
    for j in range(1, k + 1):
        alt = alt @ dag(vs[k - j]) @ lifted[j]
    if not close(alt, out):
        raise VerificationError("theta: the two product forms disagree")
    return out


def theta_over_n_basis(tc: TowerContext, k: int) -> list:
    """The family theta(b_{i_1} (x) ... (x) b_{i_{k+1}}) over the
    Pimsner-Popa basis of M over N: a basis for level k over N.
    """
    from itertools import product as iproduct

    b0 = tc.incl.pp_basis()
    out = []
    for tup in iproduct(range(len(b0)), repeat=k + 1):
        out.append(theta(tc, [b0[i] for i in tup]))
    return out


def tensor_cond_exp(tc: TowerContext, k: int, xs) -> Array:
    """E_{M_{k-1}}(theta(x_1 (x) ... (x) x_{k+1})) by the merge rule.

    For k = 2r-1 the two middle factors multiply and a delta^{-1}
    appears; for k = 2r they merge through E_N instead.
    """
    xs = [np.asarray(x, dtype=complex) for x in xs]
    if len(xs) != k + 1:
        raise ValueError("need k+1 tensor factors")
    if k == 0:
        return tc.incl.E(xs[0])
    r = (k + 1) // 2
    merged = list(xs)
    if k % 2 == 1:
        mid = merged[r - 1] @ merged[r]
        scale = 1.0 / tc.delta
    else:
        mid = merged[r - 1] @ tc.incl.E(merged[r])
        scale = 1.0
    merged[r - 1 : r + 1] = [mid]
    return scale * theta(tc, merged)


def commutant_expectation(tc: TowerContext, x: Array, k: int,
                          basis: list | None = None) -> Array:
    """E'(x) = tau `Σ`_b b x b* onto M' `∩` M_k, for x commuting with N."""
    bs = basis if basis is not None else tc.incl.pp_basis()
    lifted = [tc.lift_to(0, k, b) for b in bs]
    for n in tc.incl.n_basis:
        ln = tc.lift_to(0, k, n)
        if not close(ln @ x, np.asarray(x) @ ln):
            raise VerificationError("commutant expectation input is not in N'")
    out = np.zeros_like(np.asarray(x, dtype=complex))
    for b in lifted:
        out = out + b @ x @ dag(b)
    return tc.tau * out


def conjugation_chain(tc: TowerContext, x: Array, k: int, steps: int) -> Array:
    """Iterated basis-conjugation averages pushing N' `∩` M_k into
    M_{steps-1}' `∩` M_k: step s uses the Pimsner-Popa basis of level
    s-1 over level s-2.
    """
    out = np.asarray(x, dtype=complex)
    for s in range(steps):
        if s == 0:
            bs = [tc.lift_to(0, k, b) for b in tc.incl.pp_basis()]
        else:
            bs = [tc.lift_to(s, k, b) for b in tc.pp(s)]
        out = tc.tau * sum(b @ out @ dag(b) for b in bs)
    return out


def multi_step_rep(tc: TowerContext, j: int, k: int, z: Array, y: Array) -> Array:
    """The vector pi^k_j(z) y-hat in L^2(M_j).

    pi^k_j(z) y-hat = delta^{k-j} (iterated E down to M_j)(z y e-word),
    where the word implements the expectation onto level 2j-k.
    """
    if not j <= k <= 2 * j + 1:
        raise ValueError("multi-step representation needs j <= k <= 2j+1")
    from . import tl

    i = 2 * j - k
    word = tl.multi_step_word(i, j).letters if k > j else ()
    ew = tc.e_word(k, word)
    prod = np.asarray(z) @ tc.lift_to(j, k, y) @ ew
    elt = tc.expect_to(k, j, prod) * (tc.delta ** (k - j))
    return tc.level(j).hat(elt)


def multi_step_matrix(tc: TowerContext, j: int, k: int, z: Array) -> Array:
    """Matrix of pi^k_j(z) on L^2(M_j), columns over the level-j ONB."""
    cols = [multi_step_rep(tc, j, k, z, u) for u in tc.level(j).onb]
    return np.stack(cols, axis=1)


def shift_compatibility(tc: TowerContext, j: int, t: int, R: Array,
                        samples: int = 6, seed: int = 3) -> float:
    """Residual of pi_{j+t}(R) = pi_j(R) (x) id^t on theta-realized
    vectors; R is given at level 2j+1.
    """
    if t < 0:
        raise ValueError("tensor padding must be nonnegative")
    k = 2 * j + 1
    jt = j + t
    if k > tc.depth or jt > tc.depth:
        raise ValueError("tower too shallow for the requested shift")
    if k < jt:
        # R already lies inside M_{j+t}; the wide rep is left multiplication.
        r_wide, k_wide = tc.lift_to(k, jt, R), jt
    else:
        r_wide, k_wide = R, k
    rng = np.random.default_rng(seed)
    b0 = tc.incl.m_basis
    worst = 0.0
    for _ in range(samples):
        ys = []
        for _ in range(jt + 1):
            coeff = rng.normal(size=len(b0)) + 1j * rng.normal(size=len(b0))
            ys.append(np.tensordot(coeff, np.stack(b0), axes=(0, 0)))
        lhs = multi_step_rep(tc, jt, k_wide, r_wide, theta(tc, ys))
        head = theta(tc, ys[: j + 1])
        acted = tc.level(j).unhat(multi_step_rep(tc, j, k, R, head))
        tail = tc.lift_to(j, jt, acted)
        for m in range(j + 1, jt + 1):
            vm = tc.e_word(jt, range(m, 0, -1))
            tail = tail @ vm @ tc.lift_to(0, jt, ys[m])
        rhs = tc.level(jt).hat(tail)
        worst = max(worst, _norm(lhs - rhs) / max(1.0, _norm(rhs)))
    return worst


def local_index(incl: Inclusion, p: Array):
    """Local index data at a projection p in N' `∩` M.

    Returns (bound, E_p) with bound = E(p) E^{-1}(p) evaluated as a
    scalar when possible, and E_p(x) = E(p)^{-1} E(x) p certified to be
    a conditional expectation p M p -> N p.
    """
    p = np.asarray(p, dtype=complex)
    if not close(p @ p, p) or not close(dag(p), p):
        raise VerificationError("local index needs a projection")
    for n in incl.n_basis:
        if not close(n @ p, p @ n):
            raise VerificationError("projection must commute with N")
    ep = incl.E(p)
    evals = np.linalg.eigvalsh((ep + dag(ep)) / 2.0)
    if np.min(evals) <= _SPECTRUM_FLOOR:
        raise VerificationError("E(p) is singular; local index undefined")
    ep_inv = psd_power(ep, -1.0)
    bound_elt = ep @ incl.e_inverse(p)
    scale = complex(np.trace(bound_elt)) / incl.D
    bound = float(scale.real) if close(bound_elt, scale * incl.unit(), 1e-8) else bound_elt

    def e_p(x: Array) -> Array:
        return ep_inv @ incl.E(x) @ p

    # Certify E_p on p M p.
    if not close(e_p(p), p):
        raise VerificationError("E_p is not unital on the corner")
    cut = [p @ m @ p for m in incl.m_basis]
    for x in cut:
        ex = e_p(x)
        if not close(e_p(ex), ex):
            raise VerificationError("E_p is not idempotent")
        h = e_p(dag(x) @ x)
        if np.min(np.linalg.eigvalsh((h + dag(h)) / 2.0)) < -1e-9:
            raise VerificationError("E_p is not positive")
    for n in incl.n_basis:
        a = n @ p
        for x in cut[: min(4, len(cut))]:
            if not close(e_p(a @ x), a @ e_p(x)) or not close(e_p(x @ a), e_p(x) @ a):
                raise VerificationError("E_p is not Np-bimodular")
    return bound, e_p


def cut_down_index(incl: Inclusion, p: Array) -> float:
    """Ind(E_p) via a Pimsner-Popa basis of p M p over N p."""
    _, e_p = local_index(incl, p)
    cut = [p @ m @ p for m in incl.m_basis]
    basis, _ = pp_gram_schmidt(cut, e_p)
    ind = sum(b @ dag(b) for b in basis)
    rank = float(np.trace(p).real)
    return float(np.trace(ind).real / rank)


def deform_expectation(incl: Inclusion, w: Array, tol: float = 1e-9):
    """Deform (E, phi) by a positive invertible w in N' `∩` M.

    Rescales w so that phi(w^{1/2}) = phi(w^{-1/2}) = lambda^{-1}, then
    returns (new inclusion, lambda, w_used).  The new inclusion carries
    the state phi-bar = lambda phi(w^{-1/2} .) whose compatible
    expectation is E-bar(x) = lambda E(w^{-1/2} x); both are certified.
    """
    w = np.asarray(w, dtype=complex)
    if not close(dag(w), w):
        raise VerificationError("deformation element must be self-adjoint")
    for n in incl.n_basis:
        if not close(n @ w, w @ n):
            raise VerificationError("deformation element must commute with N")
    evals = np.linalg.eigvalsh((w + dag(w)) / 2.0)
    if np.min(evals) <= _SPECTRUM_FLOOR:
        raise VerificationError("deformation element must be positive invertible")
    up = incl.phi(psd_power(w, 0.5)).real
    dn = incl.phi(psd_power(w, -0.5)).real
    if abs(up - dn) > tol * max(up, dn):
        w = (dn / up) * w
        up = incl.phi(psd_power(w, 0.5)).real
        dn = incl.phi(psd_power(w, -0.5)).real
        if abs(up - dn) > tol * max(up, dn):
            raise VerificationError("deformation element cannot be normalized")
    lam = 1.0 / up
    w_root_inv = psd_power(w, -0.5)

    def e_bar(x: Array) -> Array:
        return lam * incl.E(w_root_inv @ np.asarray(x))

    one = incl.unit()
    if not close(e_bar(one), one, tol):
        raise VerificationError("deformed expectation is not unital")
    for x in incl.m_basis:
        ex = e_bar(x)
        if not close(e_bar(ex), ex, 1e-8):
            raise VerificationError("deformed expectation is not idempotent")

    rho_bar = lam * psd_power(w, -0.25) @ incl.rho @ psd_power(w, -0.25)
    diag = np.diag(rho_bar).real
    if not close(rho_bar, np.diag(diag), tol):
        raise VerificationError(
            "deformed density is not diagonal in the fixture basis"
        )
    new_incl = Inclusion(
        name=f"{incl.name}-deformed",
        small_dims=incl.small_dims,
        big_dims=incl.big_dims,
        mult=incl.mult,
        rho_diag=diag,
    )
    for x in incl.m_basis:
        if not close(new_incl.E(x), e_bar(x), 1e-8):
            raise VerificationError(
                "deformed expectation disagrees with the rebuilt inclusion"
            )
    return new_incl, lam, w
