"""Core domain types: vocabularies, detections, plant instances and the
three-level hierarchy (components -> sections -> lines).

A hierarchy is stored set-theoretically (section -> members, line -> member
sections) so that malformed structures, e.g. overlapping sections, can be
represented and reported by :func:`validate_structure`.  Ids are opaque;
two structures are equal when their canonical forms are equal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ClassVocabularies",
    "Detection",
    "PlantInstance",
    "HierarchicalStructure",
    "StructureKey",
    "validate_structure",
    "canonicalize",
    "canonical_key",
]

# (section_of, line_of, component_class, section_class, line_class), dense ids
StructureKey = tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...],
                     tuple[int, ...], tuple[int, ...]]

PROB_RENORM_TOL = 1e-3


def _label(pair: tuple[str, str]) -> str:
    kind, sub = pair
    return f"{kind}/{sub}" if sub else kind


def split_label(label: str) -> tuple[str, str]:
    """Split ``"type/subtype"`` (or a bare ``"type"``) into a pair."""
    kind, _, sub = label.partition("/")
    return kind.strip(), sub.strip()


@dataclass(frozen=True)
class ClassVocabularies:
    """Ordered class labels for components, sections and lines.

    Component classes are (type, subtype) couples; the string form used in
    documents is ``"type/subtype"``.
    """

    component_classes: tuple[tuple[str, str], ...]
    section_classes: tuple[str, ...]
    line_classes: tuple[str, ...]

    def __post_init__(self):
        comps = tuple((str(t), str(s)) for t, s in self.component_classes)
        object.__setattr__(self, "component_classes", comps)
        object.__setattr__(self, "section_classes", tuple(map(str, self.section_classes)))
        object.__setattr__(self, "line_classes", tuple(map(str, self.line_classes)))
        for name, labels in (("component_classes", self.component_labels),
                             ("section_classes", self.section_classes),
                             ("line_classes", self.line_classes)):
            if not labels:
                raise ValueError(f"{name} must be non-empty")
            if len(set(labels)) != len(labels):
                raise ValueError(f"{name} contains duplicate labels")

    @property
    def component_labels(self) -> tuple[str, ...]:
        return tuple(_label(p) for p in self.component_classes)

    @property
    def n_components(self) -> int:
        return len(self.component_classes)

    @property
    def n_sections(self) -> int:
        return len(self.section_classes)

    @property
    def n_lines(self) -> int:
        return len(self.line_classes)

    def component_index(self, label: str | Sequence[str]) -> int:
        pair = split_label(label) if isinstance(label, str) else tuple(label)
        try:
            return self.component_classes.index(pair)
        except ValueError:
            raise KeyError(f"unknown component class {_label(pair)!r}") from None

    def section_index(self, label: str) -> int:
        try:
            return self.section_classes.index(label)
        except ValueError:
            raise KeyError(f"unknown section class {label!r}") from None

    def line_index(self, label: str) -> int:
        try:
            return self.line_classes.index(label)
        except ValueError:
            raise KeyError(f"unknown line class {label!r}") from None


@dataclass(frozen=True)
class Detection:
    """One detected symbol: bounding box ``(x, y, w, h)`` and class
    probabilities over the component vocabulary.

    Probabilities whose sum is off by at most 1e-3 are renormalized;
    larger deviations are rejected.
    """

    id: int
    bbox: tuple[float, float, float, float]
    probs: np.ndarray

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4:
            raise ValueError(f"detection {self.id}: bbox needs 4 values")
        if not (bbox[2] > 0 and bbox[3] > 0):
            raise ValueError(f"detection {self.id}: bbox width/height must be positive")
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size == 0 or not np.all(np.isfinite(p)):
            raise ValueError(f"detection {self.id}: probs must be finite and non-empty")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"detection {self.id}: probs outside [0, 1]")
        total = p.sum()
        if abs(total - 1.0) > PROB_RENORM_TOL:
            raise ValueError(f"detection {self.id}: probs sum to {total:.6g}, not 1")
        # leave sums that are already 1 to within rounding alone so that
        # load/dump round trips are stable
        if abs(total - 1.0) > 1e-12:
            p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "probs", p)

    @property
    def centroid(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.bbox[2], self.bbox[3]))


@dataclass(frozen=True)
class PlantInstance:
    """Fused evidence for one plant.

    Parameters
    ----------
    vocab : ClassVocabularies
    detections : sequence of Detection
        Detection ``i`` must carry ``id == i``.
    g_conn : ndarray, shape (N, N)
        Direct-connection probabilities. The diagonal is forced to zero.
    g_rel : ndarray, shape (N, N, n_section_classes)
        Typed-relation probabilities.
    """

    vocab: ClassVocabularies
    detections: tuple[Detection, ...]
    g_conn: np.ndarray
    g_rel: np.ndarray

    def __post_init__(self):
        dets = tuple(self.detections)
        n = len(dets)
        for i, d in enumerate(dets):
            if d.id != i:
                raise ValueError(f"detections[{i}] has id {d.id}; ids must be 0..N-1 in order")
            if d.probs.size != self.vocab.n_components:
                raise ValueError(f"detections[{i}].probs has length {d.probs.size}, "
                                 f"expected {self.vocab.n_components}")
        conn = np.array(self.g_conn, dtype=np.float64).reshape(n, n) if n else np.zeros((0, 0))
        rel = np.array(self.g_rel, dtype=np.float64)
        if rel.size == 0:
            rel = rel.reshape(n, n, self.vocab.n_sections)
        if conn.shape != (n, n):
            raise ValueError(f"g_conn has shape {conn.shape}, expected {(n, n)}")
        if rel.shape != (n, n, self.vocab.n_sections):
            raise ValueError(f"g_rel has shape {rel.shape}, expected {(n, n, self.vocab.n_sections)}")
        for name, arr in (("g_conn", conn), ("g_rel", rel)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"{name} has values outside [0, 1]")
        np.fill_diagonal(conn, 0.0)
        conn.setflags(write=False)
        rel.setflags(write=False)
        object.__setattr__(self, "detections", dets)
        object.__setattr__(self, "g_conn", conn)
        object.__setattr__(self, "g_rel", rel)

    @property
    def n(self) -> int:
        return len(self.detections)

    @property
    def probs(self) -> np.ndarray:
        """Class-probability matrix, shape (N, n_component_classes)."""
        if not self.detections:
            return np.zeros((0, self.vocab.n_components))
        return np.stack([d.probs for d in self.detections])

    def with_probs(self, probs: np.ndarray) -> PlantInstance:
        """Copy of the instance with replaced class probabilities."""
        dets = tuple(Detection(d.id, d.bbox, p) for d, p in zip(self.detections, probs))
        return PlantInstance(self.vocab, dets, self.g_conn, self.g_rel)


def _as_map(values: Mapping[int, int] | Sequence[int]) -> dict[int, int]:
    if isinstance(values, Mapping):
        return {int(k): int(v) for k, v in values.items()}
    return {i: int(v) for i, v in enumerate(values)}


@dataclass(frozen=True, eq=False)
class HierarchicalStructure:
    """The triplet (sections, lines, classes).

    ``sections`` maps a section id to its member component ids and
    ``lines`` maps a line id to its member section ids.  The class maps
    assign a vocabulary index to every component, section and line.
    """

    sections: Mapping[int, tuple[int, ...]]
    lines: Mapping[int, tuple[int, ...]]
    component_class: Mapping[int, int]
    section_class: Mapping[int, int]
    line_class: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "sections",
                           {int(k): tuple(int(c) for c in v) for k, v in self.sections.items()})
        object.__setattr__(self, "lines",
                           {int(k): tuple(int(s) for s in v) for k, v in self.lines.items()})
        for name in ("component_class", "section_class", "line_class"):
            object.__setattr__(self, name, _as_map(getattr(self, name)))

    @classmethod
    def from_assignment(cls, section_of, line_of, component_class, section_class,
                        line_class) -> HierarchicalStructure:
        """Build from the functional form: component -> section and
        section -> line maps (mappings or dense sequences)."""
        section_of = _as_map(section_of)
        line_of = _as_map(line_of)
        sections: dict[int, list[int]] = {}
        for c in sorted(section_of):
            sections.setdefault(section_of[c], []).append(c)
        lines: dict[int, list[int]] = {}
        for s in sorted(line_of):
            lines.setdefault(line_of[s], []).append(s)
        return cls({k: tuple(v) for k, v in sections.items()},
                   {k: tuple(v) for k, v in lines.items()},
                   component_class, section_class, line_class)

    @classmethod
    def from_key(cls, key: StructureKey) -> HierarchicalStructure:
        section_of, line_of, yc, yt, yl = key
        return cls.from_assignment(section_of, line_of, yc, yt, yl)

    @property
    def section_of(self) -> dict[int, int]:
        """Component -> section map (last writer wins on overlap)."""
        return {c: k for k in sorted(self.sections) for c in self.sections[k]}

    @property
    def line_of(self) -> dict[int, int]:
        return {s: j for j in sorted(self.lines) for s in self.lines[j]}

    @property
    def n_sections(self) -> int:
        return len(self.sections)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def key(self) -> StructureKey:
        """Canonical encoding; equal keys mean semantically equal structures."""
        return canonical_key(self)

    def __eq__(self, other):
        if not isinstance(other, HierarchicalStructure):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


def validate_structure(s: HierarchicalStructure, inst: PlantInstance | None = None,
                       n: int | None = None) -> list[str]:
    """Check the partition axioms and class assignments.

    Returns the list of violated axioms; an empty list means the structure
    is valid.  The component count comes from ``inst`` (or ``n``); without
    either, the members of the sections define the component set.
    """
    out: list[str] = []
    if inst is not None:
        n = inst.n
    seen: dict[int, list[int]] = {}
    for k in sorted(s.sections):
        for c in s.sections[k]:
            seen.setdefault(c, []).append(k)
    if n is None:
        n = max(seen, default=-1) + 1
    universe = set(range(n))

    unknown = sorted(set(seen) - universe)
    if unknown:
        out.append(f"unknown component ids {unknown}")
    missing = sorted(universe - set(seen))
    if missing:
        out.append(f"partition not covering: components {missing} unassigned")
    for c in sorted(seen):
        if len(seen[c]) > 1:
            out.append(f"overlap: component {c} in sections {seen[c]}")
    for k in sorted(s.sections):
        if not s.sections[k]:
            out.append(f"empty section {k}")

    sec_seen: dict[int, list[int]] = {}
    for j in sorted(s.lines):
        for k in s.lines[j]:
            sec_seen.setdefault(k, []).append(j)
    unknown = sorted(set(sec_seen) - set(s.sections))
    if unknown:
        out.append(f"lines reference unknown sections {unknown}")
    missing = sorted(set(s.sections) - set(sec_seen))
    if missing:
        out.append(f"line partition not covering: sections {missing} unassigned")
    for k in sorted(sec_seen):
        if len(sec_seen[k]) > 1:
            out.append(f"line overlap: section {k} in lines {sec_seen[k]}")
    for j in sorted(s.lines):
        if not s.lines[j]:
            out.append(f"empty line {j}")

    vocab = inst.vocab if inst is not None else None
    checks = (
        ("component", sorted(universe | set(seen)), s.component_class,
         vocab.n_components if vocab else None),
        ("section", sorted(s.sections), s.section_class, vocab.n_sections if vocab else None),
        ("line", sorted(s.lines), s.line_class, vocab.n_lines if vocab else None),
    )
    for what, ids, classes, size in checks:
        absent = [i for i in ids if i not in classes]
        if absent:
            out.append(f"missing {what} class for {absent}")
        if size is not None:
            bad = [i for i in ids if i in classes and not 0 <= classes[i] < size]
            if bad:
                out.append(f"{what} class out of range for {bad}")
    return out


def canonical_key(s: HierarchicalStructure) -> StructureKey:
    """Renumber sections by smallest member and lines by smallest member
    section (after section renumbering).  Requires a valid structure."""
    problems = validate_structure(s)
    if problems:
        raise ValueError("cannot canonicalize invalid structure: " + "; ".join(problems))
    order = sorted(s.sections, key=lambda k: min(s.sections[k]))
    sec_new = {old: new for new, old in enumerate(order)}
    n = sum(len(v) for v in s.sections.values())
    section_of = [0] * n
    for old, new in sec_new.items():
        for c in s.sections[old]:
            section_of[c] = new
    line_order = sorted(s.lines, key=lambda j: min(sec_new[k] for k in s.lines[j]))
    line_new = {old: new for new, old in enumerate(line_order)}
    line_of = [0] * len(order)
    for old, new in line_new.items():
        for k in s.lines[old]:
            line_of[sec_new[k]] = new
    return (tuple(section_of), tuple(line_of),
            tuple(s.component_class[c] for c in range(n)),
            tuple(s.section_class[k] for k in order),
            tuple(s.line_class[j] for j in line_order))


def canonicalize(s: HierarchicalStructure) -> HierarchicalStructure:
    """Structure with dense ids ordered by smallest member component id."""
    return HierarchicalStructure.from_key(canonical_key(s))
