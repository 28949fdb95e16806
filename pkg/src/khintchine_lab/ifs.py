"""Contracting similarity systems and Bernoulli sampling on their attractors.

A system is a finite list of maps ``phi_s(x) = ratio * x @ rotation_s +
translation_s`` acting on row vectors, all sharing one contraction ratio,
together with a positive probability weight per map.  Points of the attractor
are addressed by symbol words: the coding point of ``(b_1, ..., b_n)`` is
``phi_{b_1} o ... o phi_{b_n}`` applied to a base point, which converges
geometrically in the word length.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ORTHOGONALITY_TOL = 1e-12
COMMON_RATIO_TOL = 1e-14
WEIGHT_SUM_TOL = 1e-12

# Depth at which 52 bits of mantissa are exhausted twice over; used as the
# default sampling depth so that truncation sits far below double precision.
_SAMPLE_DEPTH_BITS = 52


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SimilarityMap:
    """One contraction ``x -> ratio * (x @ rotation) + translation``.

    ``rotation`` must be orthogonal (reflections included); ``ratio`` must lie
    strictly between 0 and 1.
    """

    ratio: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.atleast_2d(np.asarray(self.rotation, dtype=float))
        trans = np.atleast_1d(np.asarray(self.translation, dtype=float))
        if rot.ndim != 2 or rot.shape[0] != rot.shape[1]:
            raise ValueError("rotation must be a square matrix")
        d = rot.shape[0]
        if trans.shape != (d,):
            raise ValueError(f"translation must have length {d}, got {trans.shape}")
        gram_err = np.max(np.abs(rot @ rot.T - np.eye(d)))
        if gram_err > ORTHOGONALITY_TOL:
            raise ValueError(f"rotation is not orthogonal (|R R^T - I| = {gram_err:.3e})")
        ratio = float(self.ratio)
        if not (0.0 < ratio < 1.0):
            raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
        object.__setattr__(self, "ratio", ratio)
        object.__setattr__(self, "rotation", _freeze(rot))
        object.__setattr__(self, "translation", _freeze(trans))

    @property
    def dimension(self) -> int:
        return self.rotation.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.ratio * (x @ self.rotation) + self.translation

    def fixed_point(self) -> np.ndarray:
        """Unique solution of ``p = phi(p)``."""
        d = self.dimension
        a = np.eye(d) - self.ratio * self.rotation
        return np.linalg.solve(a.T, self.translation)


def compose(first: SimilarityMap, second: SimilarityMap) -> SimilarityMap:
    """Composite map ``x -> first(second(x))``; ratios multiply."""
    if first.dimension != second.dimension:
        raise ValueError("cannot compose maps of different dimensions")
    ratio = first.ratio * second.ratio
    rotation = second.rotation @ first.rotation
    translation = first.ratio * (second.translation @ first.rotation) + first.translation
    return SimilarityMap(ratio=ratio, rotation=rotation, translation=translation)


@dataclass(frozen=True)
class IfsSystem:
    """Finite similarity system with a common ratio and Bernoulli weights."""

    maps: tuple[SimilarityMap, ...]
    weights: np.ndarray

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ValueError("system needs at least one map")
        d = maps[0].dimension
        for m in maps:
            if m.dimension != d:
                raise ValueError("all maps must share one dimension")
        kappa = maps[0].ratio
        for m in maps:
            if abs(m.ratio - kappa) > COMMON_RATIO_TOL:
                raise ValueError(
                    f"maps must share one contraction ratio: {m.ratio} vs {kappa}"
                )
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.shape != (len(maps),):
            raise ValueError("need exactly one weight per map")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def dimension(self) -> int:
        return self.maps[0].dimension

    @property
    def kappa(self) -> float:
        return self.maps[0].ratio

    @property
    def alphabet_size(self) -> int:
        return len(self.maps)

    def base_point(self) -> np.ndarray:
        """Default coding base: the fixed point of the first map."""
        return self.maps[0].fixed_point()

    def default_depth(self) -> int:
        """Word length at which truncation error drops below double precision."""
        return 2 * math.ceil(_SAMPLE_DEPTH_BITS * math.log(2.0) / abs(math.log(self.kappa)))


def cantor_product(d: int) -> IfsSystem:
    """d-fold product of the middle-thirds system: maps ``(x + v)/3`` for
    ``v`` ranging over ``{0, 2}^d``, uniform weights ``2^-d``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    eye = np.eye(d)
    maps = []
    for v in itertools.product((0.0, 2.0), repeat=d):
        maps.append(
            SimilarityMap(ratio=1.0 / 3.0, rotation=eye, translation=np.asarray(v) / 3.0)
        )
    weights = np.full(len(maps), 1.0 / len(maps))
    return IfsSystem(maps=tuple(maps), weights=weights)


def _validate_word(sys: IfsSystem, word: Sequence[int]) -> np.ndarray:
    w = np.asarray(word, dtype=int)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("word must be a nonempty 1-d sequence of symbols")
    if np.any((w < 0) | (w >= sys.alphabet_size)):
        raise ValueError("word contains symbols outside the alphabet")
    return w


def diameter_estimate(sys: IfsSystem, depth: int = 8) -> float:
    """Cheap certified over-estimate of the attractor diameter.

    Spans the cylinder centers at the given depth and pads by the worst-case
    distance of an attractor point from its cylinder center.  The crude a
    priori bound ``diam <= 2 * max_s |phi_s(p0) - p0| / (1 - kappa)`` supplies
    the padding scale.
    """
    p0 = sys.base_point()
    step = max(float(np.linalg.norm(m(p0) - p0)) for m in sys.maps)
    crude = 2.0 * step / (1.0 - sys.kappa)
    if crude == 0.0:
        return 0.0
    # Keep the center enumeration bounded for large alphabets.
    while sys.alphabet_size ** depth > 200_000 and depth > 1:
        depth -= 1
    pts = p0[None, :]
    for _ in range(depth):
        pts = np.concatenate([m(pts) for m in sys.maps], axis=0)
    span = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return span + 2.0 * sys.kappa**depth * crude


def coding_point(
    sys: IfsSystem, word: Sequence[int], base: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Apply ``phi_{b_1} o ... o phi_{b_n}`` to the base point.

    Returns the point together with the truncation bound
    ``kappa**n * diameter_estimate``, which dominates the distance to any
    infinite extension of the word.
    """
    w = _validate_word(sys, word)
    p = sys.base_point() if base is None else np.asarray(base, dtype=float)
    for s in w[::-1]:
        p = sys.maps[s](p)
    bound = sys.kappa ** len(w) * diameter_estimate(sys)
    return p, bound


def sample_words(
    sys: IfsSystem, depth: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """i.i.d. symbol words, one row per sample, drawn with the system weights."""
    if depth < 1 or count < 1:
        raise ValueError("depth and count must be positive")
    return rng.choice(sys.alphabet_size, size=(count, depth), p=sys.weights)


def points_of_words(sys: IfsSystem, words: np.ndarray, base: np.ndarray | None = None) -> np.ndarray:
    """Vectorized coding points for a batch of equal-length words."""
    words = np.asarray(words, dtype=int)
    if words.ndim != 2:
        raise ValueError("words must be a 2-d array")
    count, depth = words.shape
    p0 = sys.base_point() if base is None else np.asarray(base, dtype=float)
    pts = np.broadcast_to(p0, (count, sys.dimension)).copy()
    for i in range(depth - 1, -1, -1):
        col = words[:, i]
        for s in range(sys.alphabet_size):
            mask = col == s
            if mask.any():
                pts[mask] = sys.maps[s](pts[mask])
    return pts


# Fixed chunk size: the sample stream for a given seed must not depend on how
# many points the caller asks for at once.
_SAMPLE_CHUNK = 1 << 17


def sample_fractal(
    sys: IfsSystem, count: int, depth: int | None = None, seed: int = 0
) -> np.ndarray:
    """Draw ``count`` points of the attractor from the Bernoulli measure.

    Deterministic in ``seed``; each point is the coding point of an i.i.d.
    word of the given length (defaulting to the double-precision depth).
    """
    if count < 1:
        raise ValueError("count must be positive")
    if depth is None:
        depth = sys.default_depth()
    rng = np.random.default_rng(seed)
    out = np.empty((count, sys.dimension))
    done = 0
    while done < count:
        k = min(_SAMPLE_CHUNK, count - done)
        words = sample_words(sys, depth, k, rng)
        out[done : done + k] = points_of_words(sys, words)
        done += k
    return out


# ---------------------------------------------------------------------------
# hypothesis checks


@dataclass(frozen=True)
class HypothesesReport:
    common_ratio: str
    open_set: str
    irreducible: str
    notes: tuple[str, ...] = ()

    def verdicts(self) -> dict:
        return {
            "common_ratio": self.common_ratio,
            "open_set": self.open_set,
            "irreducible": self.irreducible,
        }


def attractor_bounding_box(maps: Sequence[SimilarityMap], iterations: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Tight axis-aligned bounding box of the attractor, found by iterating the
    box-hull operator of the system until it stabilizes."""
    p0 = maps[0].fixed_point()
    step = max(float(np.linalg.norm(m(p0) - p0)) for m in maps)
    kmax = max(m.ratio for m in maps)
    radius = step / (1.0 - kmax) + 1.0e-9
    lo = p0 - radius
    hi = p0 + radius
    for _ in range(iterations):
        centers = (lo + hi) / 2.0
        halves = (hi - lo) / 2.0
        new_lo = np.full_like(lo, np.inf)
        new_hi = np.full_like(hi, -np.inf)
        for m in maps:
            c = m(centers)
            h = m.ratio * (halves @ np.abs(m.rotation))
            new_lo = np.minimum(new_lo, c - h)
            new_hi = np.maximum(new_hi, c + h)
        if np.allclose(new_lo, lo, rtol=0.0, atol=1e-16) and np.allclose(
            new_hi, hi, rtol=0.0, atol=1e-16
        ):
            lo, hi = new_lo, new_hi
            break
        lo, hi = new_lo, new_hi
    return lo, hi


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = lo.size
    combos = np.array(list(itertools.product((0, 1), repeat=d)), dtype=float)
    return lo + combos * (hi - lo)


def _separated(corners_a: np.ndarray, corners_b: np.ndarray, axes: np.ndarray, tol: float) -> bool:
    # Separating-axis test restricted to face normals; exact when both shapes
    # are axis-aligned, conservative otherwise.
    for ax in axes:
        pa = corners_a @ ax
        pb = corners_b @ ax
        if pa.max() <= pb.min() + tol or pb.max() <= pa.min() + tol:
            return True
    return False


def _axis_aligned(maps: Sequence[SimilarityMap], tol: float = 1e-12) -> bool:
    for m in maps:
        r = np.abs(m.rotation)
        if np.max(np.abs(r - np.rint(r))) > tol:
            return False
    return True


def check_hypotheses(system_or_maps, depth: int = 6) -> HypothesesReport:
    """Semi-decidable diagnostics for the standing assumptions.

    * common ratio and contraction: decidable, pass/fail;
    * open set condition, tested against the open bounding box of the
      attractor: pass if the box images are contained and pairwise disjoint;
      if the candidate fails, depth-``depth`` cylinder boxes are compared and
      the verdict is fail only when an overlap of their interiors is certain
      (axis-aligned systems), otherwise inconclusive;
    * irreducibility: pass if the affine span of the semigroup orbit of the
      first map's fixed point is full, inconclusive otherwise.
    """
    if isinstance(system_or_maps, IfsSystem):
        maps = list(system_or_maps.maps)
    else:
        maps = list(system_or_maps)
    if not maps:
        raise ValueError("need at least one map")
    d = maps[0].dimension
    notes: list[str] = []

    kappa = maps[0].ratio
    ratios_ok = all(abs(m.ratio - kappa) <= COMMON_RATIO_TOL for m in maps)
    contracting = all(0.0 < m.ratio < 1.0 for m in maps)
    common_ratio = "pass" if (ratios_ok and contracting) else "fail"
    if not ratios_ok:
        notes.append("maps do not share a single contraction ratio")

    # Open set condition against the open attractor bounding box.
    lo, hi = attractor_bounding_box(maps)
    scale = float(np.max(hi - lo)) or 1.0
    tol = 1e-12 * scale
    corners = _box_corners(lo, hi)
    images = [m(corners) for m in maps]
    contained = all(
        np.all(img >= lo - tol) and np.all(img <= hi + tol) for img in images
    )
    axes = np.eye(d)
    extra_axes = [m.rotation for m in maps]
    all_axes = np.concatenate([axes] + extra_axes, axis=0)
    disjoint = True
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            if not _separated(images[i], images[j], all_axes, tol):
                disjoint = False
    if contained and disjoint:
        open_set = "pass"
    else:
        open_set = _refine_osc(maps, lo, hi, depth, tol, notes)

    # Irreducibility via the affine span of the orbit of a fixed point.
    irreducible = _irreducibility(maps, depth, notes)

    return HypothesesReport(
        common_ratio=common_ratio,
        open_set=open_set,
        irreducible=irreducible,
        notes=tuple(notes),
    )


def _refine_osc(maps, lo, hi, depth, tol, notes) -> str:
    d = maps[0].dimension
    k = len(maps)
    depth_eff = depth
    while k**depth_eff > 512 and depth_eff > 1:
        depth_eff -= 1
    if depth_eff != depth:
        notes.append(f"cylinder refinement capped at depth {depth_eff}")
    corners = _box_corners(lo, hi)
    # depth-n cylinder boxes of the candidate open set, tagged by first symbol
    boxes = [(s, maps[s](corners)) for s in range(k)]
    for _ in range(depth_eff - 1):
        boxes = [(tag, m(c)) for tag, c in boxes for m in maps]
    exact = _axis_aligned(maps)
    axes = np.eye(d)
    overlap_found = False
    for i in range(len(boxes)):
        tag_i, ci = boxes[i]
        ilo, ihi = ci.min(axis=0), ci.max(axis=0)
        for j in range(i + 1, len(boxes)):
            tag_j, cj = boxes[j]
            if tag_i == tag_j:
                continue
            jlo, jhi = cj.min(axis=0), cj.max(axis=0)
            widths = np.minimum(ihi, jhi) - np.maximum(ilo, jlo)
            if np.all(widths > tol):
                overlap_found = True
                break
        if overlap_found:
            break
    if overlap_found and exact:
        return "fail"
    if overlap_found:
        notes.append("rotated cylinder boxes overlap; separation undecided")
        return "inconclusive"
    notes.append("candidate box failed but no cylinder overlap detected")
    return "inconclusive"


def _irreducibility(maps, depth, notes) -> str:
    d = maps[0].dimension
    p0 = maps[0].fixed_point()
    frontier = [p0]
    basis: list[np.ndarray] = []
    rank = 0
    seen = 1
    for _ in range(depth):
        nxt = []
        for p in frontier:
            for m in maps:
                q = m(p)
                nxt.append(q)
                v = q - p0
                # incremental Gram-Schmidt against the accumulated span
                for b in basis:
                    v = v - (v @ b) * b
                norm = np.linalg.norm(v)
                if norm > 1e-9:
                    basis.append(v / norm)
                    rank += 1
                    if rank == d:
                        return "pass"
        frontier = nxt
        seen += len(nxt)
        if seen > 20_000:
            notes.append("orbit enumeration capped")
            break
    notes.append(f"orbit affine rank {rank} < {d}")
    return "inconclusive"


# ---------------------------------------------------------------------------
# JSON round trip

_SYSTEM_KEYS = {"dimension", "ratio", "maps", "weights"}
_MAP_KEYS = {"rotation", "translation"}


def system_to_json(sys: IfsSystem) -> dict:
    return {
        "dimension": sys.dimension,
        "ratio": sys.kappa,
        "maps": [
            {
                "rotation": [float(v) for v in m.rotation.ravel()],
                "translation": [float(v) for v in m.translation],
            }
            for m in sys.maps
        ],
        "weights": [float(w) for w in sys.weights],
    }


def system_from_json(doc: dict) -> IfsSystem:
    if not isinstance(doc, dict):
        raise ValueError("system description must be a JSON object")
    unknown = set(doc) - _SYSTEM_KEYS
    if unknown:
        raise ValueError(f"unknown system keys: {sorted(unknown)}")
    missing = _SYSTEM_KEYS - set(doc)
    if missing:
        raise ValueError(f"missing system keys: {sorted(missing)}")
    d = doc["dimension"]
    if not isinstance(d, int) or d < 1:
        raise ValueError("dimension must be a positive integer")
    ratio = doc["ratio"]
    if not isinstance(ratio, (int, float)):
        raise ValueError("ratio must be a number")
    maps_doc = doc["maps"]
    if not isinstance(maps_doc, list) or not maps_doc:
        raise ValueError("maps must be a nonempty list")
    maps = []
    for i, entry in enumerate(maps_doc):
        if not isinstance(entry, dict):
            raise ValueError(f"maps[{i}] must be an object")
        unknown = set(entry) - _MAP_KEYS
        if unknown:
            raise ValueError(f"maps[{i}] has unknown keys: {sorted(unknown)}")
        rot = entry.get("rotation")
        trans = entry.get("translation")
        if not isinstance(rot, list) or len(rot) != d * d:
            raise ValueError(f"maps[{i}].rotation must be a row-major list of {d * d} numbers")
        if not isinstance(trans, list) or len(trans) != d:
            raise ValueError(f"maps[{i}].translation must be a list of {d} numbers")
        maps.append(
            SimilarityMap(
                ratio=float(ratio),
                rotation=np.asarray(rot, dtype=float).reshape(d, d),
                translation=np.asarray(trans, dtype=float),
            )
        )
    weights = doc["weights"]
    if not isinstance(weights, list) or len(weights) != len(maps):
        raise ValueError("weights must be a list with one entry per map")
    return IfsSystem(maps=tuple(maps), weights=np.asarray(weights, dtype=float))


def load_system(path) -> IfsSystem:
    with open(path, "r", encoding="utf-8") as fh:
        return system_from_json(json.load(fh))


def save_system(sys: IfsSystem, path) -> None:
    Path(path).write_text(json.dumps(system_to_json(sys), indent=2) + "\n", encoding="utf-8")
