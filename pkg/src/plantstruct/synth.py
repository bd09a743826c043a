"""Synthetic ground-truth plants, noise models and evaluation metrics.

Ground truth is sampled from the registry statistics held by a fitted
:class:`PlausibilityModel`; :func:`corrupt_instance` degrades the exact
evidence, and the metrics score a reconstruction against the truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .ingest import AnnealingSchedule, EquipmentRow, LineRule, OcrCode, RegistryRecord, Rulebook, \
    RunConfig, SectionRule, dumps_json
from .model import ClassVocabularies, Detection, HierarchicalStructure, PlantInstance, \
    canonical_key, canonicalize
from .objective import PlausibilityModel, fit_plausibility
from .optimizer import count_candidates

__all__ = [
    "NoiseSpec",
    "EvalReport",
    "sample_structure",
    "corrupt_instance",
    "synth_documents",
    "truth_triplets",
    "component_accuracy",
    "section_score",
    "typed_section_accuracy",
    "recall_at_k",
    "evaluate",
    "noise_spec",
    "run_bench",
    "random_problem",
]

SYNTH_STREAM = 0x5717
CORRUPT_STREAM = 0xC022
# bench noise level -> probability of flattening a graph entry
EDGE_FLIP_PER_NOISE = 0.2
BOX = 40.0


@dataclass(frozen=True)
class NoiseSpec:
    sigma_prob: float = 0.0
    p_edge_flip: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_prob >= 0:
            raise ValueError("sigma_prob must be >= 0")
        if not 0.0 <= self.p_edge_flip <= 1.0:
            raise ValueError("p_edge_flip must lie in [0, 1]")


@dataclass(frozen=True)
class EvalReport:
    component_accuracy: float
    section_score: float
    regulation_section_acc: float | None
    measurement_section_acc: float | None
    recall_at_k: Mapping[int, float] = field(default_factory=dict)

    def to_document(self) -> dict:
        doc = {
            "component_accuracy": self.component_accuracy,
            "section_score": self.section_score,
            "regulation_section_acc": self.regulation_section_acc,
            "measurement_section_acc": self.measurement_section_acc,
        }
        for k, v in sorted(self.recall_at_k.items()):
            doc[f"R@{k}"] = v
        return doc

    def dumps(self) -> bytes:
        return dumps_json(self.to_document())


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def _draw(table: Mapping[tuple, float], rng) -> tuple:
    keys = list(table)
    if not keys:
        raise ValueError("cannot sample from an empty table")
    p = np.array([table[k] for k in keys])
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _layout(n: int, section_of: list[int], line_of: list[int], rng) -> list[tuple]:
    # one column per section, lines stacked vertically, components in rows
    boxes: list[tuple] = [None] * n  # type: ignore[list-item]
    row_in_section: dict[int, int] = {}
    for i in range(n):
        k = section_of[i]
        r = row_in_section.get(k, 0)
        row_in_section[k] = r + 1
        x = 200.0 * k + float(rng.uniform(-4, 4))
        y = 600.0 * line_of[k] + 90.0 * r + float(rng.uniform(-4, 4))
        boxes[i] = (x, y, BOX, BOX)
    return boxes


def sample_structure(model: PlausibilityModel, vocab: ClassVocabularies, rng,
                     max_lines: int = 3, identifiable: bool = False,
                     max_tries: int = 1000) -> tuple[HierarchicalStructure, PlantInstance]:
    """Sample a plant from the registry statistics.

    Line count is uniform in ``1..max_lines``; line types follow the
    registry line-type frequencies, and section compositions and component
    classes are drawn from the observed entries of the model tables.  With
    ``identifiable=True`` plants in which two lines share a section type are
    redrawn: such lines can swap sections without changing the objective.

    Returns the canonical truth and an exact instance: one-hot class
    probabilities, complete connectivity inside sections and one-hot
    relations at the true section class.
    """
    freq = np.array(model.line_type_freq)
    for _ in range(max_tries):
        n_lines = int(rng.integers(1, max_lines + 1))
        lines = []
        for _ in range(n_lines):
            l = int(rng.choice(len(freq), p=freq / freq.sum()))
            lines.append((l, _draw(model.line_table[l], rng)))
        if identifiable:
            owners: dict[int, int] = {}
            clash = False
            for j, (_, types) in enumerate(lines):
                for t in types:
                    clash |= owners.setdefault(t, j) != j
            if clash:
                continue
        break
    else:
        raise RuntimeError("no identifiable plant found; relax the registry or max_lines")

    section_of: list[int] = []
    yc: list[int] = []
    yt: list[int] = []
    line_of: list[int] = []
    for j, (_, types) in enumerate(lines):
        for t in types:
            k = len(yt)
            yt.append(t)
            line_of.append(j)
            for c in _draw(model.section_table[t], rng):
                section_of.append(k)
                yc.append(c)
    n = len(yc)
    perm = rng.permutation(n)  # position p holds original component perm[p]
    section_of = [section_of[q] for q in perm]
    yc = [yc[q] for q in perm]
    truth = canonicalize(HierarchicalStructure.from_assignment(
        section_of, line_of, yc, yt, [l for l, _ in lines]))

    so, lo, ycs, yts, _ = canonical_key(truth)
    boxes = _layout(n, list(so), list(lo), rng)
    probs = np.zeros((n, vocab.n_components))
    probs[np.arange(n), ycs] = 1.0
    same = np.equal.outer(np.array(so), np.array(so)) & ~np.eye(n, dtype=bool)
    g_conn = same.astype(float)
    g_rel = np.zeros((n, n, vocab.n_sections))
    for i in range(n):
        for j in range(n):
            if same[i, j]:
                g_rel[i, j, yts[so[i]]] = 1.0
    dets = tuple(Detection(i, boxes[i], probs[i]) for i in range(n))
    return truth, PlantInstance(vocab, dets, g_conn, g_rel)


def corrupt_instance(inst: PlantInstance, spec: NoiseSpec) -> PlantInstance:
    """Mix class probabilities towards uniform with weight
    ``sigma/(1+sigma)`` and flatten graph entries to 0.5 with probability
    ``p_edge_flip``."""
    rng = np.random.default_rng([spec.seed, CORRUPT_STREAM])
    n, n_c = inst.n, inst.vocab.n_components
    w = 1.0 if math.isinf(spec.sigma_prob) else spec.sigma_prob / (1.0 + spec.sigma_prob)
    probs = inst.probs
    if w > 0:
        probs = (1.0 - w) * probs + w / n_c
    flip_conn = rng.random((n, n)) < spec.p_edge_flip
    flip_rel = rng.random(inst.g_rel.shape) < spec.p_edge_flip
    g_conn = np.where(flip_conn, 0.5, inst.g_conn)
    g_rel = np.where(flip_rel, 0.5, inst.g_rel)
    dets = tuple(Detection(d.id, d.bbox, p) for d, p in zip(inst.detections, probs))
    return PlantInstance(inst.vocab, dets, g_conn, g_rel)


def synth_documents(truth: HierarchicalStructure, inst: PlantInstance,
                    rulebook: Rulebook) -> tuple[list[EquipmentRow], list[OcrCode]]:
    """Equipment list and OCR codes consistent with the truth: one row per
    component with its catalogue characteristics, one code printed just
    right of each symbol."""
    by_class = {e.component_class: (pair, e) for pair, e in rulebook.catalogue.items()}
    rows, codes = [], []
    for i, det in enumerate(inst.detections):
        code = str(101 + i)
        c = truth.component_class[i]
        pair, entry = by_class.get(c, (inst.vocab.component_classes[c], None))
        chars = entry.mandatory_characteristics if entry else ()
        rows.append(EquipmentRow(code, pair[0], pair[1], f"{pair[0]} {pair[1]}".strip(),
                                 {ch: "1" for ch in chars}))
        x, y, w, h = det.bbox
        codes.append(OcrCode(code, x + w + 6.0, y + h / 2.0))
    return rows, codes


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _check_ids(pred: HierarchicalStructure, truth: HierarchicalStructure):
    a = sorted(c for m in pred.sections.values() for c in m)
    b = sorted(c for m in truth.sections.values() for c in m)
    if a != b:
        raise ValueError("prediction and truth cover different component ids")


def component_accuracy(pred: HierarchicalStructure, truth: HierarchicalStructure) -> float:
    _check_ids(pred, truth)
    ids = sorted(truth.component_class)
    return sum(pred.component_class[i] == truth.component_class[i] for i in ids) / len(ids)


def _best_matches(pred: HierarchicalStructure, truth: HierarchicalStructure):
    """For every true section (canonical order): (true members, true class,
    true line class, best predicted section class, overlap).

    The best match has the largest intersection (lowest canonical id on
    ties); overlap is intersection over union, so merging unrelated
    components into one predicted section is penalized.
    """
    _check_ids(pred, truth)
    p = canonicalize(pred)
    t = canonicalize(truth)
    p_sets = [set(p.sections[k]) for k in sorted(p.sections)]
    line_of = t.line_of
    out = []
    for k in sorted(t.sections):
        members = set(t.sections[k])
        inter = [len(members & s) for s in p_sets]
        best = int(np.argmax(inter))  # first maximum = lowest canonical id
        union = len(members) + len(p_sets[best]) - inter[best]
        out.append((members, t.section_class[k], t.line_class[line_of[k]],
                    p.section_class[best], inter[best] / union))
    return out


def section_score(pred: HierarchicalStructure, truth: HierarchicalStructure) -> float:
    """Size-weighted mean over true sections of their overlap with the
    best-matching predicted section."""
    matches = _best_matches(pred, truth)
    sizes = [len(m[0]) for m in matches]
    return sum(m[4] * s for m, s in zip(matches, sizes)) / sum(sizes)


def typed_section_accuracy(pred: HierarchicalStructure, truth: HierarchicalStructure,
                           line_type: int) -> float | None:
    """Fraction of true sections on lines of ``line_type`` whose best match
    has the right section class and an overlap of at least one half.
    ``None`` when the truth has no such section."""
    hits = [m[3] == m[1] and m[4] >= 0.5
            for m in _best_matches(pred, truth) if m[2] == line_type]
    if not hits:
        return None
    return sum(hits) / len(hits)


def truth_triplets(truth: HierarchicalStructure) -> set[tuple[int, int, int]]:
    """(subject, object, section class) for every ordered same-section pair."""
    out = set()
    for k, members in truth.sections.items():
        t = truth.section_class[k]
        for i in members:
            for j in members:
                if i != j:
                    out.add((i, j, t))
    return out


def recall_at_k(g_rel_pred: np.ndarray, truth: set[tuple[int, int, int]], k: int) -> float:
    """Share of true triplets among the ``k`` highest-scoring entries
    (ties broken by row-major index)."""
    if not truth:
        raise ValueError("empty truth set")
    g = np.asarray(g_rel_pred)
    order = np.argsort(-g.reshape(-1), kind="stable")[:max(k, 0)]
    flat = {int(np.ravel_multi_index(t, g.shape)) for t in truth}
    return len(flat.intersection(order.tolist())) / len(flat)


def evaluate(pred: HierarchicalStructure, truth: HierarchicalStructure,
             g_rel_pred: np.ndarray | None, vocab: ClassVocabularies,
             ks=(20, 50, 100)) -> EvalReport:
    def typed(label):
        if label not in vocab.line_classes:
            return None
        return typed_section_accuracy(pred, truth, vocab.line_index(label))

    recall = {}
    triplets = truth_triplets(truth)
    if g_rel_pred is not None and triplets:
        recall = {k: recall_at_k(g_rel_pred, triplets, k) for k in ks}
    return EvalReport(component_accuracy(pred, truth), section_score(pred, truth),
                      typed("regulation"), typed("measurement"), recall)


# ---------------------------------------------------------------------------
# benchmark sweep
# ---------------------------------------------------------------------------

def noise_spec(level: float, seed: int) -> NoiseSpec:
    """Bench noise level: class-probability noise ``level`` and graph
    flattening probability ``EDGE_FLIP_PER_NOISE * level`` (capped at 1)."""
    return NoiseSpec(level, min(1.0, EDGE_FLIP_PER_NOISE * level), seed)


def run_bench(model: PlausibilityModel, rulebook: Rulebook, config: RunConfig,
              noise_levels=(0.0, 0.1, 0.3, 1.0), n_instances: int = 20, seed: int = 0,
              identifiable: bool = False, with_documents: bool = False) -> list[dict]:
    """Sample ``n_instances`` plants, corrupt each at every noise level,
    reconstruct and evaluate.  One row per (instance, noise level)."""
    from .pipeline import reconstruct

    vocab = model.vocab
    rows = []
    for idx in range(n_instances):
        rng = np.random.default_rng([seed, SYNTH_STREAM, idx])
        truth, clean = sample_structure(model, vocab, rng, identifiable=identifiable)
        equipment, codes = synth_documents(truth, clean, rulebook) if with_documents else ([], [])
        for level in noise_levels:
            noisy = corrupt_instance(clean, noise_spec(level, seed * 1_000_003 + idx))
            rec = reconstruct(noisy, codes, equipment, rulebook, model, config)
            rep = evaluate(rec.report.best, truth, noisy.g_rel, vocab)
            row = {"instance": idx, "noise": level, "n_components": clean.n,
                   "exact": rec.report.best == truth, "total": rec.report.best_score.total}
            row.update(rep.to_document())
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# random small problems (oracle comparisons)
# ---------------------------------------------------------------------------

def _subset(rng, size: int, lo: int, hi: int) -> list[int]:
    k = int(rng.integers(lo, min(hi, size) + 1))
    return sorted(int(v) for v in rng.choice(size, size=k, replace=False))


def random_problem(rng, n_max: int = 5, c_max: int = 4, t_max: int = 3, n_lines: int = 2,
                   max_candidates: int = 10**8, n_min: int = 1):
    """Random instance, rulebook and fitted registry model on generic
    vocabularies, sized so that exhaustive search stays below
    ``max_candidates``.  Evidence is noisy around a hidden partition."""
    while True:
        n = int(rng.integers(n_min, n_max + 1))
        n_c = int(rng.integers(1, c_max + 1))
        n_t = int(rng.integers(1, t_max + 1))
        if count_candidates(n, n_c, n_t, n_lines) <= max_candidates:
            break
    vocab = ClassVocabularies(tuple((f"c{i}", "") for i in range(n_c)),
                              tuple(f"s{i}" for i in range(n_t)),
                              ("measurement", "regulation", "aux", "spare")[:n_lines]
                              if n_lines <= 4 else tuple(f"l{i}" for i in range(n_lines)))
    sec_rules = {}
    for t in range(n_t):
        if rng.random() < 0.8:
            mand = _subset(rng, n_c, 0, 2)
            rest = [c for c in range(n_c) if c not in mand]
            opt = [c for c in rest if rng.random() < 0.5]
            sec_rules[t] = SectionRule(frozenset(mand), frozenset(opt))
    line_rules = {}
    for l in range(n_lines):
        need: dict[int, int] = {}
        for _ in range(int(rng.integers(0, 3))):
            t = int(rng.integers(n_t))
            need[t] = need.get(t, 0) + 1
        opt = [t for t in range(n_t) if t not in need and rng.random() < 0.5]
        line_rules[l] = LineRule(need, frozenset(opt))
    rulebook = Rulebook(vocab, sec_rules, line_rules)

    records = []
    for p in range(int(rng.integers(1, 6))):
        lines = []
        for _ in range(int(rng.integers(1, 3))):
            secs = []
            for _ in range(int(rng.integers(1, 4))):
                ms = tuple(sorted(int(c) for c in rng.integers(0, n_c, int(rng.integers(1, 4)))))
                secs.append((int(rng.integers(n_t)), ms))
            lines.append((int(rng.integers(n_lines)), tuple(secs)))
        records.append(RegistryRecord(f"P{p}", tuple(lines)))
    model = fit_plausibility(records, vocab)

    hidden = rng.integers(0, max(1, n // 2 + 1), n)
    same = np.equal.outer(hidden, hidden)
    g_conn = np.where(same, rng.uniform(0.5, 1.0, (n, n)), rng.uniform(0.0, 0.5, (n, n)))
    g_rel = rng.dirichlet(np.ones(n_t), (n, n)) * np.where(same, 1.0, 0.5)[:, :, None]
    probs = rng.dirichlet(np.full(n_c, 0.7), n)
    dets = tuple(Detection(i, (50.0 * i, 0.0, 30.0, 30.0), probs[i]) for i in range(n))
    inst = PlantInstance(vocab, dets, g_conn, np.clip(g_rel, 0.0, 1.0))
    return inst, rulebook, model
