"""Objective function for hierarchy reconstruction.

    S = l1*E_node + l2*E_edge + l3*E_struct - l4*E_norm - l5*E_reg

The per-term functions (``e_node`` ... ``e_reg``) are direct, readable
implementations working on a :class:`HierarchicalStructure`.  ``score``
goes through :class:`ScoreEvaluator`, a cached evaluator over canonical
structure keys that the optimizer also uses; the two paths are checked
against each other in the tests.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .ingest import ParseError, RegistryRecord, Rulebook, RunConfig, dumps_json, _load_json
from .model import ClassVocabularies, HierarchicalStructure, PlantInstance, StructureKey, \
    canonical_key, validate_structure

__all__ = [
    "EXTRA_CLASS_PENALTY",
    "PlausibilityModel",
    "EnergyBreakdown",
    "phi_section",
    "phi_line",
    "fit_plausibility",
    "e_node",
    "e_edge",
    "e_struct",
    "e_norm",
    "e_reg",
    "score",
    "ScoreEvaluator",
]

EXTRA_CLASS_PENALTY = 0.1


# ---------------------------------------------------------------------------
# regulation compliance
# ---------------------------------------------------------------------------

def phi_section(section_class: int, component_classes: Iterable[int], rulebook: Rulebook) -> float:
    """Compliance of a section's component-class multiset with its rule.

    Fraction of mandatory classes present, minus 0.1 for every present class
    that is neither mandatory nor optional, clamped to [0, 1].
    """
    if not 0 <= section_class < rulebook.vocab.n_sections:
        raise ValueError(f"unknown section class {section_class}")
    rule = rulebook.section_rules.get(section_class)
    if rule is None:
        return 1.0
    present = set(component_classes)
    coverage = len(rule.mandatory & present) / len(rule.mandatory) if rule.mandatory else 1.0
    extras = present - rule.mandatory - rule.optional
    return min(1.0, max(0.0, coverage - EXTRA_CLASS_PENALTY * len(extras)))


def phi_line(line_class: int, section_classes: Iterable[int], rulebook: Rulebook) -> float:
    """Line counterpart of :func:`phi_section`; the minimum section-type
    multiset is covered with multiplicity."""
    if not 0 <= line_class < rulebook.vocab.n_lines:
        raise ValueError(f"unknown line class {line_class}")
    rule = rulebook.line_rules.get(line_class)
    if rule is None:
        return 1.0
    counts = Counter(section_classes)
    need = sum(rule.min_sections.values())
    if need:
        coverage = sum(min(counts[t], r) for t, r in rule.min_sections.items()) / need
    else:
        coverage = 1.0
    extras = set(counts) - set(rule.min_sections) - rule.optional
    return min(1.0, max(0.0, coverage - EXTRA_CLASS_PENALTY * len(extras)))


# ---------------------------------------------------------------------------
# registry plausibility
# ---------------------------------------------------------------------------

Multiset = tuple[int, ...]


@dataclass(frozen=True)
class PlausibilityModel:
    """Laplace-smoothed composition frequencies learned from the registry.

    ``section_table[t][ms]`` is the probability of the sorted component-class
    multiset ``ms`` for section type ``t``; every unseen multiset shares
    ``section_floor[t]``.  Line tables hold section-type multisets per line
    type.  ``line_type_freq`` is the empirical line-type distribution.
    """

    vocab: ClassVocabularies
    section_table: Mapping[int, Mapping[Multiset, float]]
    section_floor: Mapping[int, float]
    line_table: Mapping[int, Mapping[Multiset, float]]
    line_floor: Mapping[int, float]
    line_type_freq: tuple[float, ...]
    smoothing: float = 1.0
    epsilon: float = 1e-9

    def section_prob(self, section_class: int, multiset: Multiset) -> float:
        return self.section_table[section_class].get(multiset, self.section_floor[section_class])

    def line_prob(self, line_class: int, multiset: Multiset) -> float:
        return self.line_table[line_class].get(multiset, self.line_floor[line_class])

    def log_section(self, section_class: int, multiset: Multiset) -> float:
        return max(math.log(self.section_prob(section_class, multiset)), math.log(self.epsilon))

    def log_line(self, line_class: int, multiset: Multiset) -> float:
        return max(math.log(self.line_prob(line_class, multiset)), math.log(self.epsilon))

    def to_document(self) -> dict:
        v = self.vocab
        comp = v.component_labels

        def table(tab, floor, names, member_names):
            return {
                names[t]: {
                    "unseen": floor[t],
                    "observed": {";".join(member_names[c] for c in ms): p
                                 for ms, p in tab[t].items()},
                }
                for t in sorted(tab)
            }

        return {
            "smoothing": self.smoothing,
            "epsilon": self.epsilon,
            "component_classes": list(comp),
            "section_classes": list(v.section_classes),
            "line_classes": list(v.line_classes),
            "line_type_freq": {v.line_classes[l]: f for l, f in enumerate(self.line_type_freq)},
            "section_table": table(self.section_table, self.section_floor,
                                   v.section_classes, comp),
            "line_table": table(self.line_table, self.line_floor, v.line_classes,
                                v.section_classes),
        }

    def dumps(self) -> bytes:
        return dumps_json(self.to_document())

    @classmethod
    def loads(cls, data: bytes | str) -> PlausibilityModel:
        from .ingest import _vocab_from_doc

        doc = _load_json(data)
        vocab = _vocab_from_doc(doc)

        def resolve(fn, label, path):
            try:
                return fn(label)
            except KeyError as exc:
                raise ParseError(str(exc.args[0]), path) from None

        def table(name, outer, inner):
            tab, floor = {}, {}
            raw = doc.get(name)
            if not isinstance(raw, dict):
                raise ParseError("expected an object", name)
            for label, entry in raw.items():
                t = resolve(outer, label, f"{name}.{label}")
                try:
                    floor[t] = float(entry["unseen"])
                    observed = entry["observed"]
                except (KeyError, TypeError, ValueError):
                    raise ParseError("expected {unseen, observed}", f"{name}.{label}") from None
                tab[t] = {}
                for key, p in observed.items():
                    ms = tuple(sorted(resolve(inner, x, f"{name}.{label}.{key}")
                                      for x in key.split(";") if x))
                    tab[t][ms] = float(p)
            return tab, floor

        sec_tab, sec_floor = table("section_table", vocab.section_index, vocab.component_index)
        line_tab, line_floor = table("line_table", vocab.line_index, vocab.section_index)
        for t in range(vocab.n_sections):
            if t not in sec_tab:
                raise ParseError(f"no table for section class {vocab.section_classes[t]!r}",
                                 "section_table")
        for l in range(vocab.n_lines):
            if l not in line_tab:
                raise ParseError(f"no table for line class {vocab.line_classes[l]!r}",
                                 "line_table")
        freq_doc = doc.get("line_type_freq", {})
        freq = tuple(float(freq_doc.get(name, 0.0)) for name in vocab.line_classes)
        return cls(vocab, sec_tab, sec_floor, line_tab, line_floor, freq,
                   float(doc.get("smoothing", 1.0)), float(doc.get("epsilon", 1e-9)))


def _smoothed(counts: Counter, smoothing: float) -> tuple[dict, float]:
    total = sum(counts.values())
    vocab_size = len(counts) + 1  # observed multisets plus one slot for "unseen"
    denom = total + smoothing * vocab_size
    table = {ms: (n + smoothing) / denom for ms, n in sorted(counts.items())}
    return table, smoothing / denom


def fit_plausibility(records: list[RegistryRecord], vocab: ClassVocabularies,
                     smoothing: float = 1.0, epsilon: float = 1e-9) -> PlausibilityModel:
    """Count section and line compositions in the registry and smooth them.

    Records sharing a plant id with identical content are the same plant
    registered twice and are counted once.
    """
    if not records:
        raise ValueError("empty registry")
    if not smoothing > 0:
        raise ValueError("smoothing must be positive")
    unique: dict[str, RegistryRecord] = {}
    for r in records:
        prev = unique.get(r.plant_id)
        if prev is None:
            unique[r.plant_id] = r
        elif prev != r:
            raise ValueError(f"plant {r.plant_id!r} appears twice with different content")

    sec_counts = {t: Counter() for t in range(vocab.n_sections)}
    line_counts = {l: Counter() for l in range(vocab.n_lines)}
    for r in unique.values():
        for l, secs in r.lines:
            if not 0 <= l < vocab.n_lines:
                raise ValueError(f"record {r.plant_id!r}: unknown line class {l}")
            line_counts[l][tuple(sorted(t for t, _ in secs))] += 1
            for t, ms in secs:
                if not 0 <= t < vocab.n_sections:
                    raise ValueError(f"record {r.plant_id!r}: unknown section class {t}")
                if any(not 0 <= c < vocab.n_components for c in ms):
                    raise ValueError(f"record {r.plant_id!r}: unknown component class")
                sec_counts[t][tuple(sorted(ms))] += 1

    sec_tab, sec_floor, line_tab, line_floor = {}, {}, {}, {}
    for t, cnt in sec_counts.items():
        sec_tab[t], sec_floor[t] = _smoothed(cnt, smoothing)
    for l, cnt in line_counts.items():
        line_tab[l], line_floor[l] = _smoothed(cnt, smoothing)
    n_lines = sum(sum(c.values()) for c in line_counts.values())
    freq = tuple(sum(line_counts[l].values()) / n_lines for l in range(vocab.n_lines))
    return PlausibilityModel(vocab, sec_tab, sec_floor, line_tab, line_floor, freq,
                             float(smoothing), float(epsilon))


# ---------------------------------------------------------------------------
# energy terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyBreakdown:
    e_node: float
    e_edge: float
    e_struct: float
    e_norm: float
    e_reg: float
    total: float

    @classmethod
    def combine(cls, e_node, e_edge, e_struct, e_norm, e_reg, lambdas) -> EnergyBreakdown:
        l1, l2, l3, l4, l5 = lambdas
        total = l1 * e_node + l2 * e_edge + l3 * e_struct - l4 * e_norm - l5 * e_reg
        return cls(e_node, e_edge, e_struct, e_norm, e_reg, total)

    def as_dict(self) -> dict[str, float]:
        return {"e_node": self.e_node, "e_edge": self.e_edge, "e_struct": self.e_struct,
                "e_norm": self.e_norm, "e_reg": self.e_reg, "total": self.total}


def _members(s: HierarchicalStructure):
    for k in sorted(s.sections):
        yield k, s.sections[k]


def e_node(s: HierarchicalStructure, inst: PlantInstance, eps: float) -> float:
    """Sum of clamped log class probabilities of the assigned classes."""
    return sum(math.log(max(float(inst.detections[i].probs[s.component_class[i]]), eps))
               for i in range(inst.n))


def e_edge(s: HierarchicalStructure, inst: PlantInstance, eps: float) -> float:
    """Connection and typed-relation log evidence over ordered pairs of
    components sharing a section."""
    total = 0.0
    for k, members in _members(s):
        t = s.section_class[k]
        for i in members:
            for j in members:
                if i != j:
                    total += math.log(max(float(inst.g_conn[i, j]), eps)
                                      * max(float(inst.g_rel[i, j, t]), eps))
    return total


def _section_multisets(s: HierarchicalStructure):
    for k, members in _members(s):
        yield s.section_class[k], tuple(sorted(s.component_class[c] for c in members))


def _line_multisets(s: HierarchicalStructure):
    for j in sorted(s.lines):
        yield s.line_class[j], tuple(sorted(s.section_class[k] for k in s.lines[j]))


def e_struct(s: HierarchicalStructure, inst: PlantInstance, model: PlausibilityModel) -> float:
    """Mean section log-plausibility plus mean line log-plausibility."""
    secs = [model.log_section(t, ms) for t, ms in _section_multisets(s)]
    lines = [model.log_line(l, ms) for l, ms in _line_multisets(s)]
    return sum(secs) / len(secs) + sum(lines) / len(lines)


def e_norm(s: HierarchicalStructure, inst: PlantInstance, rulebook: Rulebook, eps: float) -> float:
    phi_t = [phi_section(t, ms, rulebook) for t, ms in _section_multisets(s)]
    phi_l = [phi_line(l, ms, rulebook) for l, ms in _line_multisets(s)]
    mean = 0.5 * sum(phi_t) / len(phi_t) + 0.5 * sum(phi_l) / len(phi_l)
    return 0.0 - math.log(max(mean, eps))  # 0.0 - x avoids -0.0


def e_reg(s: HierarchicalStructure, alphas) -> float:
    a1, a2, a3 = alphas
    return (a1 * len(s.sections) + a2 * len(s.lines)
            + a3 * sum(len(m) ** 2 for m in s.sections.values()))


class ScoreEvaluator:
    """Cached objective over canonical structure keys.

    Section- and line-level terms are memoized by (class, multiset) and
    whole-structure totals by key, which is what makes the local search
    affordable.  Instances are read-only after construction.
    """

    def __init__(self, inst: PlantInstance, rulebook: Rulebook, model: PlausibilityModel,
                 config: RunConfig):
        self.inst = inst
        self.rulebook = rulebook
        self.model = model
        self.config = config
        eps = config.epsilon
        self._logp = np.log(np.maximum(inst.probs, eps)).tolist()
        edge = np.log(np.maximum(inst.g_conn, eps)[:, :, None] * np.maximum(inst.g_rel, eps))
        n = inst.n
        if n:
            edge[np.arange(n), np.arange(n), :] = 0.0
        self._edge_t = [edge[:, :, t] for t in range(inst.vocab.n_sections)]
        self._edge_cache: dict = {}
        self._sec_cache: dict = {}
        self._line_cache: dict = {}
        self._totals: dict[StructureKey, float] = {}
        self.evaluations = 0

    def _edge(self, members: tuple[int, ...], t: int) -> float:
        key = (members, t)
        v = self._edge_cache.get(key)
        if v is None:
            if len(members) < 2:
                v = 0.0
            else:
                idx = np.array(members)
                v = float(self._edge_t[t][np.ix_(idx, idx)].sum())
            self._edge_cache[key] = v
        return v

    def _section(self, t: int, ms: Multiset) -> tuple[float, float]:
        key = (t, ms)
        v = self._sec_cache.get(key)
        if v is None:
            v = (self.model.log_section(t, ms), phi_section(t, ms, self.rulebook))
            self._sec_cache[key] = v
        return v

    def _line(self, l: int, ms: Multiset) -> tuple[float, float]:
        key = (l, ms)
        v = self._line_cache.get(key)
        if v is None:
            v = (self.model.log_line(l, ms), phi_line(l, ms, self.rulebook))
            self._line_cache[key] = v
        return v

    def breakdown(self, key: StructureKey) -> EnergyBreakdown:
        section_of, line_of, yc, yt, yl = key
        self.evaluations += 1
        n_sec, n_line = len(yt), len(yl)
        members: list[list[int]] = [[] for _ in range(n_sec)]
        for i, k in enumerate(section_of):
            members[k].append(i)
        lines: list[list[int]] = [[] for _ in range(n_line)]
        for k, j in enumerate(line_of):
            lines[j].append(yt[k])

        logp = self._logp
        node = sum(logp[i][c] for i, c in enumerate(yc))
        edge = 0.0
        struct_s = 0.0
        phi_s = 0.0
        sq = 0
        for k in range(n_sec):
            m = tuple(members[k])
            sq += len(m) * len(m)
            edge += self._edge(m, yt[k])
            ls, ph = self._section(yt[k], tuple(sorted([yc[i] for i in m])))
            struct_s += ls
            phi_s += ph
        struct_l = 0.0
        phi_l = 0.0
        for j in range(n_line):
            ll, ph = self._line(yl[j], tuple(sorted(lines[j])))
            struct_l += ll
            phi_l += ph
        struct = struct_s / n_sec + struct_l / n_line
        norm = 0.0 - math.log(max(0.5 * phi_s / n_sec + 0.5 * phi_l / n_line, self.config.epsilon))
        a1, a2, a3 = self.config.alphas
        reg = a1 * n_sec + a2 * n_line + a3 * sq
        return EnergyBreakdown.combine(node, edge, struct, norm, reg, self.config.lambdas)

    def total(self, key: StructureKey) -> float:
        v = self._totals.get(key)
        if v is None:
            v = self.breakdown(key).total
            self._totals[key] = v
        return v


def score(s: HierarchicalStructure, inst: PlantInstance, rulebook: Rulebook,
          model: PlausibilityModel, config: RunConfig) -> EnergyBreakdown:
    """All five energy terms and the weighted total for a valid structure."""
    problems = validate_structure(s, inst)
    if problems:
        raise ValueError("invalid structure: " + "; ".join(problems))
    return ScoreEvaluator(inst, rulebook, model, config).breakdown(canonical_key(s))
