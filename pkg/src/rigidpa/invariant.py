"""Standard invariant of a tower: relative commutants, the compatible
state pair (phi, phi'), Radon-Nikodym derivatives between them, the
modular operator, the rotation family, and extremality.

Everything acts on concrete matrices from a :class:`TowerContext`.
Elements of M_j' cap M_k are level-k matrices; maps between box spaces
are computed in the orthonormal hat coordinates of each level, where
the state inner product is the standard one.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as _iproduct

import numpy as np

from .errors import VerificationError
from .towers import (
    TowerContext,
    commutant_expectation,
    conjugation_chain,
    close,
    dag,
    multi_step_matrix,
    psd_power,
    theta,
    theta_over_n_basis,
)
from . import tl

Array = np.ndarray

_NULL_TOL = 1e-9
_CHECK_TOL = 1e-8


def _norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a)))


def _cache(tc: TowerContext) -> dict:
    store = getattr(tc, "_invariant_cache", None)
    if store is None:
        store = {}
        tc._invariant_cache = store
    return store


def _frontier(tc: TowerContext, k: int):
    store = _cache(tc)
    key = ("frontier", k)
    if key not in store:
        store[key] = tc.frontier(k)
    return store[key]


# ---------------------------------------------------------------------------
# Relative commutants


def _algebra_generators(tc: TowerContext, j: int, k: int) -> list:
    """Generators of M_j represented on H_k (j = -1 denotes N)."""
    if j == -1:
        gens = [tc.lift_to(0, k, n) for n in tc.incl.n_basis]
    else:
        gens = [tc.lift_to(0, k, m) for m in tc.incl.m_basis]
        gens += [tc.level(k).jones[i] for i in range(j)]
    kept = []
    for g in gens:
        sc = np.trace(g) / g.shape[0]
        if not close(g, sc * np.eye(g.shape[0])):
            kept.append(g)
    return kept


def relative_commutant_vectors(tc: TowerContext, j: int, k: int) -> Array:
    """Hat coordinates of an orthonormal basis of M_j' cap M_k.

    Columns are orthonormal for the level-k state inner product; the
    span is the commutator nullspace of the M_j generators.
    """
    store = _cache(tc)
    key = ("rc", j, k)
    if key in store:
        return store[key]
    if not -1 <= j <= k <= tc.depth:
        raise ValueError("relative commutant outside the tower")
    lvl = tc.level(k)
    gens = _algebra_generators(tc, j, k)
    if not gens:
        u = np.eye(lvl.dim, dtype=complex)
    else:
        blocks = []
        stack = lvl._onb_stack
        chunk = max(1, int(3e7 / (lvl.h * lvl.h)))
        for g in gens:
            rows = np.empty((lvl.dim, lvl.dim), dtype=complex)
            for lo in range(0, lvl.dim, chunk):
                part = stack[lo : lo + chunk]
                comm = g[None, :, :] @ part - part @ g[None, :, :]
                rows[lo : lo + chunk] = lvl.hat_batch(comm)
            blocks.append(rows.T)
        mat = np.vstack(blocks)
        _, svals, vh = np.linalg.svd(mat)
        scale = max(1.0, svals[0] if len(svals) else 1.0)
        rank = int(np.sum(svals > _NULL_TOL * scale))
        u = vh[rank:].conj().T
    if u.shape[1] == 0:
        raise VerificationError("relative commutant is empty, unit is missing")
    store[key] = u
    return u


def relative_commutant(tc: TowerContext, j: int, k: int) -> list:
    """Orthonormal basis of M_j' cap M_k as level-k matrices."""
    u = relative_commutant_vectors(tc, j, k)
    lvl = tc.level(k)
    return [lvl.unhat(u[:, i]) for i in range(u.shape[1])]


def commutant_projection(tc: TowerContext, j: int, k: int, x: Array) -> Array:
    """State-orthogonal projection of a level-k element onto M_j' cap M_k."""
    u = relative_commutant_vectors(tc, j, k)
    lvl = tc.level(k)
    return lvl.unhat(u @ (dag(u) @ lvl.hat(x)))


# ---------------------------------------------------------------------------
# The state pair and Radon-Nikodym derivatives


def trace_pair(tc: TowerContext, k: int):
    """The level-k state phi and its commutant companion phi'.

    phi' pushes the argument through the full chain of basis
    conjugation averages (one per tower step) before applying phi; on
    N' cap M_k it is the left-closure state of the calculus.
    """
    def phi(x: Array) -> complex:
        return tc.phi(k, x)

    def phi_prime(x: Array) -> complex:
        return tc.phi(k, conjugation_chain(tc, x, k, k + 1))

    return phi, phi_prime


def rn_derivative(tc: TowerContext, j: int, k: int) -> Array:
    """The positive invertible w in M_j' cap M_k with phi'(x) = phi(wx).

    Solved from the nondegenerate pairing (a, b) -> phi(ab) on the
    relative commutant; verified positive, invertible, and correct
    before returning.
    """
    store = _cache(tc)
    key = ("rn", j, k)
    if key in store:
        return store[key]
    basis = relative_commutant(tc, j, k)
    _, phi_prime = trace_pair(tc, k)
    lvl = tc.level(k)
    n = len(basis)
    pair = np.empty((n, n), dtype=complex)
    for a, va in enumerate(basis):
        for b, vb in enumerate(basis):
            pair[a, b] = lvl.phi(vb @ va)
    rhs = np.array([phi_prime(v) for v in basis])
    coeff = np.linalg.solve(pair, rhs)
    w = np.tensordot(coeff, np.stack(basis), axes=(0, 0))
    if not close(w, dag(w)):
        raise VerificationError("Radon-Nikodym derivative is not self-adjoint")
    w = (w + dag(w)) / 2.0
    evals = np.linalg.eigvalsh(w)
    if np.min(evals) <= 1e-12:
        raise VerificationError(
            f"Radon-Nikodym derivative is not positive invertible "
            f"(min eigenvalue {np.min(evals):.3e})"
        )
    worst = max(
        abs(phi_prime(v) - lvl.phi(w @ v)) for v in basis
    )
    if worst > _CHECK_TOL:
        raise VerificationError(
            f"Radon-Nikodym defining identity fails (residual {worst:.3e})"
        )
    store[key] = w
    return w


def rn_step(tc: TowerContext, i: int) -> Array:
    """The single-step derivative w_i in M_{i-2}' cap M_{i-1}."""
    if i < 1:
        raise ValueError("step derivatives start at w_1")
    return rn_derivative(tc, i - 2, i - 1)


def rn_product(tc: TowerContext, k: int) -> Array:
    """w_1 w_2 ... w_k, each factor lifted to level k-1."""
    out = tc.unit(k - 1)
    for i in range(1, k + 1):
        out = out @ tc.lift_to(i - 1, k - 1, rn_step(tc, i))
    return out


# ---------------------------------------------------------------------------
# Modular operator


def modular_delta(tc: TowerContext, k: int, t: float, x: Array) -> Array:
    """Delta_k^t applied to a level-k element of N' cap M_k.

    Computed through the modular matrix of the level-k state on hat
    coordinates; the relative commutants are invariant subspaces, so
    the restriction is exact.
    """
    fr = _frontier(tc, k)
    lvl = tc.level(k)
    dm = psd_power(fr.delta_matrix(), t)
    return lvl.unhat(dm @ lvl.hat(x))


def modular_delta_conjugation(tc: TowerContext, k: int, t: float,
                              x: Array) -> Array:
    """Delta_k^t as conjugation by the Radon-Nikodym derivative:
    w^{-t/2} x w^{t/2} with w taken on N' cap M_k."""
    w = rn_derivative(tc, -1, k)
    return psd_power(w, -t / 2.0) @ x @ psd_power(w, t / 2.0)


def modular_delta_basis(tc: TowerContext, k: int, x: Array,
                        inverse: bool = False) -> Array:
    """Delta_k^{+-1} by the basis sum over theta words of level k:
    sum_b b E_N(x b*) (inverse: sum_b E_N(b x) b*)."""
    out = np.zeros_like(np.asarray(x, dtype=complex))
    for b in theta_over_n_basis(tc, k):
        if inverse:
            en = tc.expect_to(k, -1, b @ x)
            out = out + tc.lift_to(0, k, en) @ dag(b)
        else:
            en = tc.expect_to(k, -1, x @ dag(b))
            out = out + b @ tc.lift_to(0, k, en)
    return out


# ---------------------------------------------------------------------------
# Rotations


def _theta_hats(tc: TowerContext, k: int):
    """Hat coordinates of the theta word family of level k, with the
    pseudoinverse used to expand elements in tuple coordinates."""
    store = _cache(tc)
    key = ("theta-hats", k)
    if key in store:
        return store[key]
    b0 = tc.incl.pp_basis()
    lvl = tc.level(k)
    nb = len(b0)
    cols = np.empty((lvl.dim, nb ** (k + 1)), dtype=complex)
    for idx, tup in enumerate(_iproduct(range(nb), repeat=k + 1)):
        cols[:, idx] = lvl.hat(theta(tc, [b0[i] for i in tup]))
    pinv = np.linalg.pinv(cols, rcond=1e-10)
    store[key] = (cols, pinv, nb)
    return store[key]


def _shift_permutation(nb: int, k: int) -> Array:
    """Index permutation sending tuple (t0..tk) to (t1..tk, t0)."""
    idx = np.arange(nb ** (k + 1))
    return (idx % nb ** k) * nb + idx // nb ** k


def rotation_on_tensors(tc: TowerContext, xs, basis: list | None = None) -> Array:
    """The rotation on a theta word: sum_b theta(E_N(b x_1) x_2 (x) x_3
    (x) ... (x) b*)."""
    xs = [np.asarray(x, dtype=complex) for x in xs]
    bs = basis if basis is not None else tc.incl.pp_basis()
    if len(xs) == 1:
        return np.sum(
            [tc.incl.E(b @ xs[0]) @ dag(b) for b in bs], axis=0
        )
    out = None
    for b in bs:
        head = tc.incl.E(b @ xs[0]) @ xs[1]
        term = theta(tc, [head] + xs[2:] + [dag(b)])
        out = term if out is None else out + term
    return out


def _rotation_hat_matrix(tc: TowerContext, k: int,
                         basis: list | None = None) -> Array:
    """Matrix of the rotation on hat coordinates of level k, built from
    its action on the theta word family."""
    cols, pinv, nb = _theta_hats(tc, k)
    b0 = tc.incl.pp_basis()
    bs = basis if basis is not None else b0
    n_tup = nb ** (k + 1)
    act = np.zeros((tc.dim(k), n_tup), dtype=complex)
    if tc.incl.dim_n == 1 and basis is None:
        # Scalar E_N: the rotated word is index bookkeeping plus the
        # expansion of each b* over the word alphabet.
        flat = np.stack([b.reshape(-1) for b in b0], axis=1)
        gamma = np.linalg.lstsq(flat, np.stack(
            [dag(b).reshape(-1) for b in b0], axis=1), rcond=None)[0]
        scal = np.array([[complex(tc.incl.phi(bi @ bt)) for bt in b0]
                         for bi in b0])
        tails = nb ** (k - 1) if k >= 1 else 1
        for idx in range(n_tup):
            t1, rest = divmod(idx, nb ** k)
            if k == 0:
                for i in range(nb):
                    act[:, idx] += scal[i, t1] * gamma[:, i].sum() * 0
                act[:, idx] = np.sum(
                    [scal[i, t1] * cols[:, m] * gamma[m, i]
                     for i in range(nb) for m in range(nb)], axis=0)
                continue
            for i in range(nb):
                coef = scal[i, t1]
                if coef == 0:
                    continue
                for m in range(nb):
                    g = gamma[m, i]
                    if g == 0:
                        continue
                    act[:, idx] += coef * g * cols[:, rest * nb + m]
    else:
        lvl = tc.level(k)
        for idx, tup in enumerate(_iproduct(range(nb), repeat=k + 1)):
            word = [b0[i] for i in tup]
            act[:, idx] = lvl.hat(rotation_on_tensors(tc, word, basis=bs))
    return act @ pinv


def rotation(tc: TowerContext, k: int, x: Array,
             basis: list | None = None) -> Array:
    """The rotation of a (k+1)-box: delta^2 E_{M_k}(v_{k+1} E'(x v_{k+1})),
    with E' the expectation onto the M-commutant one level up.

    Below the top of the tower this is evaluated literally on level
    k+1; at the top it is evaluated through theta word coordinates.
    """
    x = np.asarray(x, dtype=complex)
    if k == 0:
        bs = basis if basis is not None else tc.incl.pp_basis()
        return np.sum([tc.incl.E(b @ x) @ dag(b) for b in bs], axis=0)
    if k < tc.depth:
        v = tc.e_word(k + 1, range(k + 1, 0, -1))
        ce = commutant_expectation(tc, tc.lift(k + 1, x) @ v, k + 1,
                                   basis=basis)
        return tc.delta ** 2 * tc.expect_to(k + 1, k, v @ ce)
    lvl = tc.level(k)
    rm = _rotation_hat_matrix(tc, k, basis=basis)
    return lvl.unhat(rm @ lvl.hat(x))


def rotation_matrix(tc: TowerContext, k: int) -> tuple:
    """Matrix of the rotation restricted to N' cap M_k, in the
    orthonormal commutant coordinates; returns (matrix, coordinates)."""
    store = _cache(tc)
    key = ("rotmat", k)
    if key in store:
        return store[key]
    u = relative_commutant_vectors(tc, -1, k)
    lvl = tc.level(k)
    if k == tc.depth:
        mat = dag(u) @ _rotation_hat_matrix(tc, k) @ u
    else:
        cols = [lvl.hat(rotation(tc, k, lvl.unhat(u[:, i])))
                for i in range(u.shape[1])]
        mat = dag(u) @ np.stack(cols, axis=1)
    store[key] = (mat, u)
    return store[key]


def tilde_rotation(tc: TowerContext, k: int, x: Array) -> Array:
    """Central rotation: cyclic shift of theta word coordinates followed
    by the state-orthogonal projection onto N' cap M_k."""
    cols, pinv, nb = _theta_hats(tc, k)
    lvl = tc.level(k)
    perm = _shift_permutation(nb, k)
    u = relative_commutant_vectors(tc, -1, k)
    shifted = cols[:, perm] @ (pinv @ lvl.hat(x))
    return lvl.unhat(u @ (dag(u) @ shifted))


def tilde_rotation_matrix(tc: TowerContext, k: int) -> tuple:
    """Matrix of the central rotation on N' cap M_k; returns
    (matrix, coordinates)."""
    store = _cache(tc)
    key = ("tilde-rotmat", k)
    if key in store:
        return store[key]
    cols, pinv, nb = _theta_hats(tc, k)
    perm = _shift_permutation(nb, k)
    u = relative_commutant_vectors(tc, -1, k)
    mat = dag(u) @ (cols[:, perm] @ (pinv @ u))
    store[key] = (mat, u)
    return store[key]


def two_param_rotation(tc: TowerContext, k: int, r: float, s: float,
                       x: Array) -> Array:
    """The rotation dressed with derivative powers:
    w_{k-2,k}^r rho_k(x) w_{-1,1}^s."""
    if k < 1:
        raise ValueError("the dressed rotation starts at one-string boxes")
    out = rotation(tc, k, x)
    wr = rn_derivative(tc, k - 2, k)
    ws = tc.lift_to(1, k, rn_derivative(tc, -1, 1))
    return psd_power(wr, r) @ out @ psd_power(ws, s)


_TILDE_CANDIDATES = (
    (0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0),
    (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5), (-0.5, -0.5),
    (1.0, -1.0), (-1.0, 1.0), (0.0, 0.0), (1.0, 1.0),
)


def locate_tilde_parameters(tc: TowerContext, k: int,
                            candidates=_TILDE_CANDIDATES) -> tuple:
    """The (r, s) pair whose dressed rotation reproduces the central
    rotation, solved on the commutant basis; returns (r, s, residual)."""
    tmat, u = tilde_rotation_matrix(tc, k)
    lvl = tc.level(k)
    best = None
    for r, s in candidates:
        worst = 0.0
        for i in range(u.shape[1]):
            v = lvl.unhat(u[:, i])
            got = lvl.hat(two_param_rotation(tc, k, r, s, v))
            want = u @ tmat[:, i]
            worst = max(worst, _norm(got - want))
        if best is None or worst < best[2]:
            best = (r, s, worst)
    return best


# ---------------------------------------------------------------------------
# Extremality


def extremality_report(tc: TowerContext, tol: float = 1e-6) -> dict:
    """Evaluate the equivalent extremality criteria independently.

    (i) the state pair agrees on N' cap M; (ii) the step derivatives up
    the tower are trivial; (iii) the commutant projection of e_1 is the
    scalar tau; (iv)/(v) the rotation equals the central rotation on
    every box space / on one box space.  Disagreement between the
    criteria is a hard failure.
    """
    residuals = {}
    unit0 = tc.incl.unit()
    residuals["state_pair"] = _norm(rn_derivative(tc, -1, 0) - unit0)
    steps = []
    for i in range(1, tc.depth + 2):
        w = rn_step(tc, i)
        steps.append(_norm(w - np.eye(w.shape[0])))
    residuals["tower_states"] = max(steps)
    e1 = tc.level(1).jones[0]
    proj = commutant_projection(tc, 0, 1, e1)
    residuals["jones_projection"] = _norm(proj - tc.tau * tc.unit(1))
    rot_all = []
    for k in range(1, tc.depth):
        rmat, u = rotation_matrix(tc, k)
        tmat, _ = tilde_rotation_matrix(tc, k)
        rot_all.append(_norm(rmat - tmat))
    residuals["rotations_all"] = max(rot_all)
    residuals["rotations_one"] = rot_all[0]
    flags = {name: bool(res <= tol) for name, res in residuals.items()}
    votes = set(flags.values())
    if len(votes) != 1:
        raise VerificationError(
            f"extremality criteria disagree: {flags} ({residuals})"
        )
    return {
        "extremal": flags["state_pair"],
        "criteria": flags,
        "residuals": residuals,
    }


def modified_jones(tc: TowerContext, i: int, k: int | None = None) -> Array:
    """The derivative-corrected Jones projection w_i^{1/2} e_i w_i^{1/2}
    represented on level k (default: level i)."""
    if k is None:
        k = i
    if not 1 <= i <= k <= tc.depth:
        raise ValueError("modified projection outside the tower")
    w = rn_step(tc, i)
    root = tc.lift_to(i - 1, k, psd_power(w, 0.5))
    return root @ tc.level(k).jones[i - 1] @ root


# ---------------------------------------------------------------------------
# The conjugate-linear click and the shift


def _pi(tc: TowerContext, k: int, z: Array) -> Array:
    """The multi-step representation of a level-(2k+1) element on the
    level-k hat space."""
    return multi_step_matrix(tc, k, 2 * k + 1, z)


def _pi_pullback(tc: TowerContext, k: int, mat: Array) -> Array:
    """Invert the multi-step representation over N' cap M_{2k+1}."""
    store = _cache(tc)
    key = ("pi-cols", k)
    if key not in store:
        basis = relative_commutant(tc, -1, 2 * k + 1)
        cols = np.stack([_pi(tc, k, v).reshape(-1) for v in basis], axis=1)
        store[key] = (basis, cols)
    basis, cols = store[key]
    coeff, *_ = np.linalg.lstsq(cols, np.asarray(mat).reshape(-1), rcond=None)
    resid = _norm(cols @ coeff - np.asarray(mat).reshape(-1))
    if resid > _CHECK_TOL * max(1.0, _norm(mat)):
        raise VerificationError(
            f"operator does not come from the relative commutant "
            f"(residual {resid:.3e})"
        )
    return np.tensordot(coeff, np.stack(basis), axes=(0, 0))


def j_map(tc: TowerContext, k: int, z: Array, inverse: bool = False) -> Array:
    """One click of the conjugate-linear rotation on N' cap M_{2k+1}:
    S* z* S* (inverse: S z* S) through the level-k conjugation matrix."""
    s = _frontier(tc, k).s_matrix()
    zm = _pi(tc, k, z)
    if inverse:
        out = s @ zm.T @ np.conj(s)
    else:
        out = s.T @ zm.T @ np.conj(s.T)
    return _pi_pullback(tc, k, out)


def r_map_basis(tc: TowerContext, k: int, z: Array) -> Array:
    """S z* S by the basis sum: tau^{-k-1} sum_b E_{M_k}(p b z) p b*
    with p the projection implementing E_N from level 2k+1."""
    top = 2 * k + 1
    word = tl.multi_step_word(-1, k).letters
    p = tc.e_word(top, word) / tc.delta ** (k + 1)
    bs = theta_over_n_basis(tc, k) if k >= 1 else tc.incl.pp_basis()
    out = np.zeros((tc.dim(top), tc.dim(top)), dtype=complex)
    for b in bs:
        bl = tc.lift_to(k, top, b)
        em = tc.expect_to(top, k, p @ bl @ z)
        out = out + tc.lift_to(k, top, em) @ p @ dag(bl)
    return out / tc.tau ** (k + 1)


def shift_map_matrix(tc: TowerContext, z: Array) -> Array:
    """The two-string shift of a two-box, as an operator on the level-1
    hat space: S_1 (S_0 z S_0) S_1."""
    s0 = _frontier(tc, 0).s_matrix()
    mid = s0 @ np.conj(_pi(tc, 0, z)) @ np.conj(s0)
    elt = _pi_pullback(tc, 0, mid)
    s1 = _frontier(tc, 1).s_matrix()
    wide = multi_step_matrix(tc, 1, 3, tc.lift_to(1, 3, elt))
    return s1 @ np.conj(wide) @ np.conj(s1)


# ---------------------------------------------------------------------------
# Summary container


@dataclass(frozen=True)
class InvariantData:
    """Immutable summary of the standard invariant of a tower."""

    depth: int
    plus_dims: tuple
    minus_dims: tuple
    w_spectra: tuple
    z_spectra: tuple
    extremal: bool
    criteria: dict
    residuals: dict
    rotation_residuals: dict


def build_invariant(tc: TowerContext) -> InvariantData:
    """Assemble the reportable facts about a tower's standard invariant."""
    plus = []
    for k in range(1, tc.depth + 2):
        plus.append(int(relative_commutant_vectors(tc, -1, k - 1).shape[1]))
    minus = []
    for k in range(1, tc.depth + 1):
        minus.append(int(relative_commutant_vectors(tc, 0, k).shape[1]))
    w_spec = []
    for i in range(1, tc.depth + 2):
        w_spec.append(tuple(np.linalg.eigvalsh(rn_step(tc, i)).tolist()))
    z_spec = []
    for k in range(1, tc.depth + 1):
        z_spec.append(tuple(
            np.linalg.eigvalsh(rn_derivative(tc, -1, k - 1)).tolist()
        ))
    report = extremality_report(tc)
    rot = {}
    for k in range(1, tc.depth):
        rmat, u = rotation_matrix(tc, k)
        fr = _frontier(tc, k)
        dm = dag(u) @ psd_power(fr.delta_matrix(), -1.0) @ u
        rot[k] = _norm(np.linalg.matrix_power(rmat, k + 1) - dm)
    return InvariantData(
        depth=tc.depth,
        plus_dims=tuple(plus),
        minus_dims=tuple(minus),
        w_spectra=tuple(w_spec),
        z_spectra=tuple(z_spec),
        extremal=report["extremal"],
        criteria=report["criteria"],
        residuals=report["residuals"],
        rotation_residuals=rot,
    )
