"""Sup-norm shortest vectors and heights on the space of unimodular lattices.

Convention: the coset of g corresponds to the lattice spanned by the ROWS of
g^{-1}.  For g = a_t u_x the rows are (e^{-t} q, e^{t/d}(q x + p)) over
integer (q, p), the simultaneous-approximation lattice; this is the choice
under which the Dani correspondence holds verbatim, and the approximability
cross-check pins it.

Delta(g) is the sup norm of a shortest nonzero lattice vector, found by
Lovasz reduction plus exhaustive enumeration over the Euclidean ball that
certifiably contains every sup-norm minimizer; l(g) = -log Delta(g).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flows import GroupElement

DIMENSION_LIMIT = 6
SINGULAR_TOL = 1e-250
# Euclidean radius guard: any vector with sup norm <= best satisfies
# |v|_2^2 <= k best^2; the tiny inflation absorbs roundoff in the Gram data.
BALL_INFLATION = 1.0 + 1e-9


@dataclass(frozen=True)
class CompactWindow:
    """Sublevel window Y_L = {x : l(x) <= L}; compact by Mahler's criterion."""

    level: float

    def __post_init__(self):
        object.__setattr__(self, "level", float(self.level))

    @property
    def min_delta(self) -> float:
        return math.exp(-self.level)

    @property
    def q_const(self) -> float:
        return self.level

    def contains_height(self, l: float) -> bool:
        # closed sublevel set: boundary heights count as inside
        return l <= self.level


def _canonical(coeffs: np.ndarray) -> np.ndarray:
    for v in coeffs:
        if v != 0:
            return coeffs if v > 0 else -coeffs
    return coeffs


def _lex_min(candidates: list[np.ndarray]) -> np.ndarray:
    return min(candidates, key=lambda c: tuple(int(v) for v in c))


def lll_reduce(basis: np.ndarray, delta: float = 0.99) -> tuple[np.ndarray, np.ndarray]:
    """Lovasz-reduce the rows of ``basis``; returns (reduced, U) with
    reduced = U @ basis and U integer unimodular."""
    b = np.array(basis, dtype=float)
    k = b.shape[0]
    u = np.eye(k, dtype=np.int64)

    def gram():
        mu = np.zeros((k, k))
        star = np.zeros_like(b)
        norms = np.zeros(k)
        for i in range(k):
            v = b[i].copy()
            for j in range(i):
                if norms[j] > SINGULAR_TOL:
                    mu[i, j] = (b[i] @ star[j]) / norms[j]
                v = v - mu[i, j] * star[j]
            star[i] = v
            norms[i] = v @ v
        return mu, norms

    mu, norms = gram()
    if np.min(norms) < SINGULAR_TOL:
        raise ValueError("numerically singular basis")
    i = 1
    guard = 0
    while i < k:
        guard += 1
        if guard > 10_000:
            break
        changed = False
        for j in range(i - 1, -1, -1):
            q = round(mu[i, j])
            if q:
                b[i] -= q * b[j]
                u[i] -= q * u[j]
                changed = True
        if changed:
            mu, norms = gram()
        if norms[i] >= (delta - mu[i, i - 1] ** 2) * norms[i - 1]:
            i += 1
        else:
            b[[i - 1, i]] = b[[i, i - 1]]
            u[[i - 1, i]] = u[[i, i - 1]]
            mu, norms = gram()
            i = max(i - 1, 1)
    return b, u


def _enumerate_sup(reduced: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """All coefficient vectors (w.r.t. the reduced rows) achieving the minimal
    sup norm, by depth-first search over the certified Euclidean ball."""
    k = reduced.shape[0]
    mu = np.zeros((k, k))
    star = np.zeros_like(reduced)
    norms = np.zeros(k)
    for i in range(k):
        v = reduced[i].copy()
        for j in range(i):
            mu[i, j] = (reduced[i] @ star[j]) / norms[j]
            v = v - mu[i, j] * star[j]
        star[i] = v
        norms[i] = v @ v
        if norms[i] < SINGULAR_TOL:
            raise ValueError("numerically singular basis")

    best = float(np.min(np.max(np.abs(reduced), axis=1)))
    found: list[np.ndarray] = []
    xs = np.zeros(k, dtype=np.int64)

    def visit(i: int, partial: float):
        nonlocal best, found
        r2 = k * best * best * BALL_INFLATION
        if partial > r2:
            return
        if i < 0:
            if not np.any(xs):
                return
            sup = float(np.max(np.abs(xs @ reduced)))
            if sup < best:
                best = sup
                found = [xs.copy()]
            elif sup == best:
                found.append(xs.copy())
            return
        center = -float(np.dot(mu[i + 1 :, i], xs[i + 1 :])) if i < k - 1 else 0.0
        span = math.sqrt(max(r2 - partial, 0.0) / norms[i])
        lo = math.ceil(center - span)
        hi = math.floor(center + span)
        order = sorted(range(lo, hi + 1), key=lambda x: abs(x - center))
        for x in order:
            xs[i] = x
            visit(i - 1, partial + norms[i] * (x - center) ** 2)
        xs[i] = 0

    visit(k - 1, 0.0)
    if not found:
        # the initial best (a basis row) was already minimal and the strict
        # search never re-recorded it; rebuild the witness set at that value
        for i in range(k):
            if float(np.max(np.abs(reduced[i]))) == best:
                e = np.zeros(k, dtype=np.int64)
                e[i] = 1
                found.append(e)
    return best, found


def _lagrange_2x2(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = b.astype(float).copy()
    u = np.eye(2, dtype=np.int64)
    for _ in range(64):
        n0 = m[0] @ m[0]
        n1 = m[1] @ m[1]
        if n0 > n1:
            m[[0, 1]] = m[[1, 0]]
            u[[0, 1]] = u[[1, 0]]
            n0, n1 = n1, n0
        if n0 < SINGULAR_TOL:
            raise ValueError("numerically singular basis")
        q = round((m[1] @ m[0]) / n0)
        if q == 0:
            break
        m[1] -= q * m[0]
        u[1] -= q * u[0]
    return m, u


_2X2_COEFFS = ((1, 0), (0, 1), (1, 1), (1, -1))


def _shortest_2x2(m00: float, m01: float, m10: float, m11: float) -> tuple[float, int, int]:
    """Fast path: sup-norm shortest vector of a 2x2 row basis in plain floats.

    After Lagrange reduction every sup minimizer is among b1, b2, b1 +/- b2
    (any other combination has Euclidean norm above sqrt(2) |b1|_2).
    Returns (delta, c0, c1) with coefficients in the ORIGINAL basis.
    """
    u00, u01, u10, u11 = 1, 0, 0, 1
    for _ in range(64):
        n0 = m00 * m00 + m01 * m01
        n1 = m10 * m10 + m11 * m11
        if n0 > n1:
            m00, m01, m10, m11 = m10, m11, m00, m01
            u00, u01, u10, u11 = u10, u11, u00, u01
            n0 = n1
        if n0 < SINGULAR_TOL:
            raise ValueError("numerically singular basis")
        q = round((m10 * m00 + m11 * m01) / n0)
        if q == 0:
            break
        m10 -= q * m00
        m11 -= q * m01
        u10 -= q * u00
        u11 -= q * u01
    best = -1.0
    bc0 = bc1 = 0
    for a, bq in _2X2_COEFFS:
        v0 = a * m00 + bq * m10
        v1 = a * m01 + bq * m11
        sup = abs(v0) if abs(v0) >= abs(v1) else abs(v1)
        if best < 0.0 or sup < best:
            best = sup
            bc0 = a * u00 + bq * u10
            bc1 = a * u01 + bq * u11
    if bc0 < 0 or (bc0 == 0 and bc1 < 0):
        bc0, bc1 = -bc0, -bc1
    return best, bc0, bc1


def shortest_of_basis(basis: np.ndarray) -> tuple[float, np.ndarray]:
    """Certified sup-norm shortest vector of the lattice spanned by the rows.

    Returns (delta, witness) where witness are integer coefficients w.r.t.
    the given rows, sign-normalized (first nonzero positive) and tie-broken
    lexicographically.
    """
    b = np.asarray(basis, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("basis must be square")
    k = b.shape[0]
    if k > DIMENSION_LIMIT:
        raise ValueError(f"dimension {k} above certified range {DIMENSION_LIMIT}")
    if not np.all(np.isfinite(b)):
        raise ValueError("basis has non-finite entries")
    if k == 2:
        delta, c0, c1 = _shortest_2x2(b[0, 0], b[0, 1], b[1, 0], b[1, 1])
        return delta, np.array([c0, c1], dtype=np.int64)
    reduced, u = lll_reduce(b)
    delta, coeff_list = _enumerate_sup(reduced)
    witnesses = [_canonical(c @ u) for c in coeff_list]
    return delta, _lex_min(witnesses)


_BRUTE_GRIDS: dict[tuple[int, int], np.ndarray] = {}


def _brute_grid(k: int, bound: int) -> np.ndarray:
    key = (k, bound)
    if key not in _BRUTE_GRIDS:
        r = np.arange(-bound, bound + 1, dtype=np.int8 if bound < 127 else np.int64)
        grids = np.meshgrid(*([r] * k), indexing="ij")
        _BRUTE_GRIDS[key] = np.stack([g.ravel() for g in grids], axis=1)
    return _BRUTE_GRIDS[key]


def brute_force_shortest(basis: np.ndarray, coeff_bound: int = 25) -> tuple[float, np.ndarray]:
    """Oracle route: exhaustive search over the integer box |c_i| <= bound.

    Deliberately independent of the reduction-based path so the two can be
    compared; only valid when some minimizer has coefficients in the box.
    """
    b = np.asarray(basis, dtype=float)
    k = b.shape[0]
    grid = _brute_grid(k, coeff_bound)
    best = math.inf
    cands: list[np.ndarray] = []
    chunk = 1 << 20
    for lo in range(0, grid.shape[0], chunk):
        c = grid[lo : lo + chunk].astype(float)
        sup = np.max(np.abs(c @ b), axis=1)
        sup[np.all(c == 0.0, axis=1)] = math.inf
        m = float(sup.min())
        if m < best:
            best = m
            cands = []
        if m == best:
            rows = grid[lo : lo + chunk][sup == best]
            cands.extend(_canonical(r.astype(np.int64)) for r in rows)
    return best, _lex_min(cands)


def dual_basis(point) -> np.ndarray:
    """Working lattice basis of a coset: the rows of g^{-1}."""
    g = point if isinstance(point, GroupElement) else GroupElement(point)
    return g.inverse().matrix


def shortest_vector(point) -> tuple[float, np.ndarray]:
    return shortest_of_basis(dual_basis(point))


def height(point) -> float:
    delta, _ = shortest_vector(point)
    return -math.log(delta)


def in_window(point, window: CompactWindow) -> bool:
    return window.contains_height(height(point))


@dataclass(frozen=True)
class LatticePoint:
    element: GroupElement
    dual_basis: np.ndarray
    delta: float
    height: float
    witness: np.ndarray


def lattice_point(point) -> LatticePoint:
    g = point if isinstance(point, GroupElement) else GroupElement(point)
    basis = dual_basis(g)
    delta, witness = shortest_of_basis(basis)
    return LatticePoint(
        element=g,
        dual_basis=basis,
        delta=delta,
        height=-math.log(delta),
        witness=witness,
    )
