"""Brute-force psi-approximability scanning and the hit <-> height bridge.

A hit at q is ||q x - p||_inf < psi(q) with p the coordinatewise nearest
integer vector (ties to even).  Rational x gets exact Fraction arithmetic,
with psi(q) entering as the exact binary value of its double evaluation;
everything else runs in correctly-rounded doubles.

The bridge: a hit balances the lattice vector (e^{-t} q, e^{t/d}(q x - p))
at t* = d/(d+1) (log q - log E), forcing the orbit height l(a_t u_x) up to
r(t*); conversely any time with l >= r + tol hands back a witness (q, p)
with q <= e^{t - r(t)} and error below psi(q) by the factor e^{-tol}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dani import ApproxFunction, RateFunction
from .flows import diagonal_point
from .ifs import IfsSystem, diameter_estimate, sample_fractal
from .lattices import height, shortest_vector

_Q_CHUNK = 1 << 15


@dataclass(frozen=True)
class HitRecord:
    q: int
    p: np.ndarray
    error: float  # ||x - p/q||_inf
    margin: float  # psi(q)/q - error
    witness_time: float  # inf when error is exactly zero

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be a positive integer")


@dataclass(frozen=True)
class CrossCheckReport:
    x: np.ndarray
    d: int
    q_max: int
    tol: float
    hits_checked: int
    degenerate_skipped: int
    below_domain_skipped: int
    direct_violations: list
    times_checked: int
    crossings: int
    converse_violations: list

    @property
    def violations(self) -> int:
        return len(self.direct_violations) + len(self.converse_violations)


@dataclass(frozen=True)
class BandStat:
    k: int
    q_lo: int
    q_hi: int
    n_points: int
    n_certain: int
    n_uncertain: int

    @property
    def fraction(self) -> float:
        return self.n_certain / self.n_points if self.n_points else 0.0


def parse_point(text: str):
    """Parse "0.5", "3/7", "golden", or comma-separated components.

    Returns (float d-vector, list of Fractions or None); the exact list is
    present only when every component is rational.
    """
    parts = [p.strip() for p in text.split(",")]
    floats = np.empty(len(parts))
    exact: list[Fraction] | None = []
    for i, p in enumerate(parts):
        if p == "golden":
            floats[i] = (math.sqrt(5.0) - 1.0) / 2.0
            exact = None
        else:
            frac = Fraction(p)
            floats[i] = float(frac)
            if exact is not None:
                exact.append(frac)
    return floats, exact


def _make_record(q: int, p: np.ndarray, err_q: float, psi_q: float, d: int) -> HitRecord:
    if err_q == 0.0:
        t_star = math.inf
    else:
        t_star = d / (d + 1) * (math.log(q) - math.log(err_q))
    return HitRecord(
        q=q,
        p=p,
        error=err_q / q,
        margin=(psi_q - err_q) / q,
        witness_time=t_star,
    )


def scan_hits(x, psi: ApproxFunction, q_max: int, x_exact: Sequence[Fraction] | None = None) -> list[HitRecord]:
    """All q in [1, q_max] with ||q x - p||_inf < psi(q), nearest p.

    With x_exact the comparison is carried out in exact rational arithmetic
    (psi(q) as the exact value of its double); otherwise in doubles.
    """
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    out: list[HitRecord] = []
    if x_exact is not None:
        if len(x_exact) != d:
            raise ValueError("x_exact length mismatch")
        for q in range(1, q_max + 1):
            qx = [q * xe for xe in x_exact]
            p = [round(v) for v in qx]
            err = max(abs(v - pi) for v, pi in zip(qx, p))
            psi_q = float(psi(q))
            if err < Fraction(psi_q):
                out.append(
                    _make_record(q, np.array(p, dtype=int), float(err), psi_q, d)
                )
        return out
    qs_all = np.arange(1, q_max + 1)
    for lo in range(0, q_max, _Q_CHUNK):
        qs = qs_all[lo : lo + _Q_CHUNK]
        qx = qs[:, None] * x[None, :]
        p = np.rint(qx)
        err = np.max(np.abs(qx - p), axis=1)
        psi_q = np.asarray(psi(qs.astype(float)), dtype=float)
        for i in np.flatnonzero(err < psi_q):
            out.append(
                _make_record(
                    int(qs[i]), p[i].astype(int), float(err[i]), float(psi_q[i]), d
                )
            )
    return out


def dani_cross_check(
    x,
    psi: ApproxFunction,
    d: int,
    q_max: int,
    tol: float = 1e-6,
    x_exact: Sequence[Fraction] | None = None,
    t_window: tuple[float, float] | None = None,
    grid_step: float = 0.05,
) -> CrossCheckReport:
    """Hit times push the orbit above r; crossings hand back hits.

    Direct: every non-degenerate hit must satisfy l(a_{t*} u_x) >= r(t*) - tol.
    Converse: on a t grid restricted to t - r(t) <= log q_max, every time
    with l >= r + tol must yield a witness with 1 <= q <= e^t + 1 and
    ||q x - p||_inf < psi(q).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != d:
        raise ValueError("x has wrong dimension")
    rate = RateFunction.from_psi(psi, d)
    t0 = rate.t_start
    hits = scan_hits(x, psi, q_max, x_exact=x_exact)
    direct_violations = []
    degenerate = 0
    below_domain = 0
    checked = 0
    for hit in hits:
        if not math.isfinite(hit.witness_time):
            degenerate += 1
            continue
        if hit.witness_time < t0:
            below_domain += 1
            continue
        l_val = height(diagonal_point(x, hit.witness_time))
        r_val = float(rate(hit.witness_time))
        checked += 1
        if l_val < r_val - tol:
            direct_violations.append((hit.q, hit.witness_time, l_val, r_val))
    if t_window is None:
        t_window = (t0 + 1e-6, d / (d + 1) * math.log(q_max) + 5.0)
    lo, hi = t_window
    lo = max(lo, t0 + 1e-9)
    ts = np.arange(lo, hi, grid_step)
    converse_violations = []
    crossings = 0
    times_checked = 0
    for t in ts:
        r_val = float(rate(t))
        if t - r_val > math.log(q_max) - 1e-9:
            continue  # witness q could exceed the scan range
        times_checked += 1
        point = diagonal_point(x, float(t))
        delta, coeffs = shortest_vector(point)
        l_val = -math.log(delta)
        if l_val < r_val + tol:
            continue
        crossings += 1
        q = int(coeffs[0])
        p = -np.asarray(coeffs[1:], dtype=int)
        err = float(np.max(np.abs(q * x - p))) if q != 0 else math.inf
        psi_q = float(psi(q)) if q >= 1 else math.nan
        if q < 1 or q > math.exp(t) + 1.0 or not err < psi_q:
            converse_violations.append((float(t), q, err, psi_q))
    return CrossCheckReport(
        x=x,
        d=d,
        q_max=q_max,
        tol=tol,
        hits_checked=checked,
        degenerate_skipped=degenerate,
        below_domain_skipped=below_domain,
        direct_violations=direct_violations,
        times_checked=times_checked,
        crossings=crossings,
        converse_violations=converse_violations,
    )


def survey(
    sys: IfsSystem,
    psi: ApproxFunction,
    sample_count: int,
    q_max: int,
    depth: int | None = None,
    seed: int = 0,
) -> list[BandStat]:
    """Per-point hit presence in dyadic q bands over a fractal sample.

    A band hit is `certain` only when its margin survives the coding
    truncation radius kappa^depth * diam; points whose best margin in a band
    is inside that radius are reported `uncertain`, not counted as hits.
    """
    if sample_count < 0 or q_max < 1:
        raise ValueError("need sample_count >= 0 and q_max >= 1")
    if sample_count == 0:
        return []
    if depth is None:
        depth = sys.default_depth()
    points = sample_fractal(sys, sample_count, depth=depth, seed=seed)
    trunc = sys.kappa**depth * diameter_estimate(sys)
    n_bands = q_max.bit_length()
    stats = []
    for k in range(n_bands):
        q_lo = 2**k
        q_hi = min(2 ** (k + 1) - 1, q_max)
        if q_lo > q_max:
            break
        certain = np.zeros(sample_count, dtype=bool)
        uncertain = np.zeros(sample_count, dtype=bool)
        qs_all = np.arange(q_lo, q_hi + 1)
        # keep the (N, chunk, d) block near 2^22 floats
        chunk = max(1, (1 << 22) // max(1, sample_count * sys.dimension))
        for lo in range(0, qs_all.size, chunk):
            qs = qs_all[lo : lo + chunk].astype(float)
            psi_q = np.asarray(psi(qs), dtype=float)
            qx = points[:, None, :] * qs[None, :, None]  # (N, chunk, d)
            err = np.max(np.abs(qx - np.rint(qx)), axis=2)
            margin = psi_q[None, :] - err
            guard = qs[None, :] * trunc
            certain |= np.any(margin > guard, axis=1)
            uncertain |= np.any(np.abs(margin) <= guard, axis=1)
        uncertain &= ~certain
        stats.append(
            BandStat(
                k=k,
                q_lo=q_lo,
                q_hi=q_hi,
                n_points=sample_count,
                n_certain=int(certain.sum()),
                n_uncertain=int(uncertain.sum()),
            )
        )
    return stats
