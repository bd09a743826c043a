"""Association of OCR codes with detected symbols and fusion of the
equipment-list evidence into the detector's class probabilities."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ingest import EquipmentRow, OcrCode, Rulebook
from .model import ClassVocabularies, PlantInstance

__all__ = [
    "CodeAssignment",
    "match_cutoff",
    "match_codes",
    "equip_distribution",
    "fuse_probs",
    "fuse_instance",
]

logger = logging.getLogger(__name__)

# above this size (codes x detections) the exhaustive search hands over to
# the augmenting-path solver
EXHAUSTIVE_LIMIT = 8


@dataclass(frozen=True)
class CodeAssignment:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_codes: tuple[int, ...]
    unmatched_detections: tuple[int, ...]
    cutoff: float

    @property
    def total_distance(self) -> float:
        return math.fsum(d for _, _, d in self.pairs)

    def detection_of(self, code_index: int) -> int | None:
        for c, d, _ in self.pairs:
            if c == code_index:
                return d
        return None


def match_cutoff(inst: PlantInstance, cutoff_factor: float) -> float:
    """``cutoff_factor`` times the median bounding-box diagonal."""
    if inst.n == 0:
        return 0.0
    return float(cutoff_factor * np.median([d.diagonal for d in inst.detections]))


def _distances(codes, inst) -> np.ndarray:
    if not codes or inst.n == 0:
        return np.zeros((len(codes), inst.n))
    pts = np.array([(c.x, c.y) for c in codes], dtype=np.float64)
    cen = np.array([d.centroid for d in inst.detections], dtype=np.float64)
    return np.hypot(pts[:, None, 0] - cen[None, :, 0], pts[:, None, 1] - cen[None, :, 1])


def _exhaustive(dist: np.ndarray, allowed: np.ndarray) -> list[tuple[int, int]]:
    """Depth-first search over partial one-to-one maps.

    Objective: most pairs, then least total distance.  Codes are visited in
    index order and each tries detections by ascending id before staying
    unmatched; only strict improvements replace the incumbent, which makes
    the lexicographically first optimum win ties.
    """
    m, n = dist.shape
    best: tuple[int, float] | None = None
    best_pairs: list[tuple[int, int]] = []
    # codes from i onwards that could still be matched
    suffix = [0] * (m + 1)
    for i in range(m - 1, -1, -1):
        suffix[i] = suffix[i + 1] + int(allowed[i].any())
    used = [False] * n
    cur: list[tuple[int, int]] = []

    def visit(i, count, cost):
        nonlocal best, best_pairs
        if best is not None:
            bound = count + min(suffix[i], n - count)
            # distances are non-negative: cost can only grow from here
            if bound < best[0] or (bound == best[0] and cost >= best[1]):
                return
        if i == m:
            best = (count, cost)
            best_pairs = list(cur)
            return
        for j in range(n):
            if allowed[i, j] and not used[j]:
                used[j] = True
                cur.append((i, j))
                visit(i + 1, count + 1, cost + dist[i, j])
                cur.pop()
                used[j] = False
        visit(i + 1, count, cost)

    visit(0, 0, 0.0)
    return best_pairs


def _augmenting(dist: np.ndarray, allowed: np.ndarray) -> list[tuple[int, int]]:
    # forbidden pairs act as "unmatched" (cost 0); a large bonus on allowed
    # pairs makes cardinality dominate the distance sum
    bonus = float(dist[allowed].sum()) + 1.0 if allowed.any() else 1.0
    cost = np.where(allowed, dist - bonus, 0.0)
    rows, cols = linear_sum_assignment(cost)
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if allowed[i, j])


def match_codes(codes: list[OcrCode], inst: PlantInstance, cutoff_factor: float) -> CodeAssignment:
    """Optimal one-to-one association of OCR codes with detections.

    Each code point is compared with bounding-box centroids; pairs farther
    than ``cutoff_factor`` x median box diagonal are not allowed.  Among
    allowed assignments the one with most pairs and then the smallest total
    Euclidean distance is returned.
    """
    cutoff = match_cutoff(inst, cutoff_factor)
    dist = _distances(codes, inst)
    allowed = dist <= cutoff
    m, n = dist.shape
    if m == 0 or n == 0 or not allowed.any():
        pairs_idx: list[tuple[int, int]] = []
    elif m <= EXHAUSTIVE_LIMIT and n <= EXHAUSTIVE_LIMIT:
        pairs_idx = _exhaustive(dist, allowed)
    else:
        pairs_idx = _augmenting(dist, allowed)
    pairs = tuple((i, j, float(dist[i, j])) for i, j in pairs_idx)
    matched_c = {i for i, _ in pairs_idx}
    matched_d = {j for _, j in pairs_idx}
    return CodeAssignment(pairs,
                          tuple(i for i in range(m) if i not in matched_c),
                          tuple(j for j in range(n) if j not in matched_d),
                          cutoff)


def equip_distribution(row: EquipmentRow | None, rulebook: Rulebook, vocab: ClassVocabularies,
                       gamma: float) -> np.ndarray:
    """Class distribution implied by an equipment-list row.

    ``gamma`` on the catalogue class of the row and the rest spread evenly;
    uniform when the row is missing or not in the catalogue.
    """
    size = vocab.n_components
    c = None if row is None else rulebook.resolve(row.type_label, row.subtype_label)
    if c is None or size == 1:
        return np.full(size, 1.0 / size)
    out = np.full(size, (1.0 - gamma) / (size - 1))
    out[c] = gamma
    return out


def fuse_probs(p_sgg, p_equip, beta: float) -> np.ndarray:
    """Normalized ``beta * p_sgg + (1 - beta) * p_equip``."""
    p_sgg = np.asarray(p_sgg, dtype=np.float64)
    p_equip = np.asarray(p_equip, dtype=np.float64)
    if p_sgg.shape != p_equip.shape:
        raise ValueError(f"length mismatch: {p_sgg.shape} vs {p_equip.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    mix = beta * p_sgg + (1.0 - beta) * p_equip
    return mix / mix.sum()


def fuse_instance(inst: PlantInstance, codes: list[OcrCode], equipment: list[EquipmentRow],
                  rulebook: Rulebook, beta: float, gamma: float,
                  cutoff_factor: float) -> tuple[PlantInstance, CodeAssignment]:
    """Match codes to symbols, look them up in the equipment list and fuse.

    Detections without a matched, catalogued equipment row keep their
    probabilities untouched.
    """
    assignment = match_codes(codes, inst, cutoff_factor)
    by_code: dict[str, EquipmentRow] = {}
    for row in equipment:
        by_code.setdefault(row.code, row)
    probs = inst.probs.copy()
    for ci, det, _ in assignment.pairs:
        row = by_code.get(codes[ci].code)
        if row is None:
            logger.info("OCR code %r has no equipment row", codes[ci].code)
            continue
        if rulebook.resolve(row.type_label, row.subtype_label) is None:
            logger.info("equipment %r (%s/%s) not in the catalogue", row.code,
                        row.type_label, row.subtype_label)
            continue
        evidence = equip_distribution(row, rulebook, inst.vocab, gamma)
        probs[det] = fuse_probs(probs[det], evidence, beta)
    return inst.with_probs(probs), assignment
