"""Parsing and serialization of the external documents.

Structured documents are JSON; the equipment list and the registry are
comma-delimited UTF-8 tables.  Every parser raises :class:`ParseError`
carrying the path of the offending element, e.g. ``g_rel[0][1][2]``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np

from .model import ClassVocabularies, Detection, HierarchicalStructure, PlantInstance, split_label

__all__ = [
    "ParseError",
    "EquipmentRow",
    "OcrCode",
    "SectionRule",
    "LineRule",
    "Rulebook",
    "RegistryRecord",
    "AnnealingSchedule",
    "RunConfig",
    "parse_vocab",
    "parse_scene_graph",
    "dump_scene_graph",
    "parse_equipment",
    "dump_equipment",
    "parse_ocr_codes",
    "dump_ocr_codes",
    "parse_regulations",
    "dump_regulations",
    "parse_registry",
    "dump_registry",
    "parse_config",
    "dump_config",
    "parse_structure",
    "dump_structure",
    "structure_to_document",
    "structure_from_document",
    "dumps_json",
]


class ParseError(ValueError):
    """Malformed input document.  ``path`` locates the offending element."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def dumps_json(doc: Any) -> bytes:
    """Deterministic JSON encoding used for every emitted document."""
    return (json.dumps(doc, indent=2, sort_keys=False, ensure_ascii=False,
                       allow_nan=False) + "\n").encode("utf-8")


def _load_json(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}") from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}") from None
    return data


def _get(doc: Mapping, key: str, path: str = ""):
    if not isinstance(doc, Mapping):
        raise ParseError("expected an object", path)
    if key not in doc:
        raise ParseError(f"missing field {key!r}", path)
    return doc[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"expected a number, got {value!r}", path)
    value = float(value)
    if not math.isfinite(value):
        raise ParseError("non-finite number", path)
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ParseError("expected a list", path)
    return value


# ---------------------------------------------------------------------------
# vocabularies and scene graph
# ---------------------------------------------------------------------------

def _component_pair(value, path: str) -> tuple[str, str]:
    if isinstance(value, str):
        pair = split_label(value)
    elif isinstance(value, list) and len(value) == 2 and all(isinstance(v, str) for v in value):
        pair = (value[0], value[1])
    else:
        raise ParseError("component class must be 'type/subtype' or [type, subtype]", path)
    if not pair[0]:
        raise ParseError("component class has an empty type", path)
    return pair


def _vocab_from_doc(doc) -> ClassVocabularies:
    comps = [_component_pair(v, f"component_classes[{i}]")
             for i, v in enumerate(_list(_get(doc, "component_classes"), "component_classes"))]
    secs = _list(_get(doc, "section_classes"), "section_classes")
    lines = _list(_get(doc, "line_classes"), "line_classes")
    for name, labels in (("section_classes", secs), ("line_classes", lines)):
        for i, v in enumerate(labels):
            if not isinstance(v, str) or not v:
                raise ParseError("expected a non-empty string", f"{name}[{i}]")
    try:
        return ClassVocabularies(tuple(comps), tuple(secs), tuple(lines))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def _vocab_to_doc(vocab: ClassVocabularies) -> dict:
    return {
        "component_classes": list(vocab.component_labels),
        "section_classes": list(vocab.section_classes),
        "line_classes": list(vocab.line_classes),
    }


def parse_vocab(data: bytes | str) -> ClassVocabularies:
    """Read the three vocabularies from any JSON document carrying them
    (a scene graph or a standalone vocabulary file)."""
    return _vocab_from_doc(_load_json(data))


def parse_scene_graph(data: bytes | str) -> PlantInstance:
    doc = _load_json(data)
    vocab = _vocab_from_doc(doc)
    dets_doc = _list(_get(doc, "detections"), "detections")
    n = len(dets_doc)
    n_y, n_t = vocab.n_components, vocab.n_sections
    detections = []
    for i, d in enumerate(dets_doc):
        path = f"detections[{i}]"
        det_id = _get(d, "id", path)
        if det_id != i or isinstance(det_id, bool):
            raise ParseError(f"id must equal position {i}", f"{path}.id")
        bbox = _list(_get(d, "bbox", path), f"{path}.bbox")
        if len(bbox) != 4:
            raise ParseError("bbox must be [x, y, w, h]", f"{path}.bbox")
        bbox = [_number(v, f"{path}.bbox[{k}]") for k, v in enumerate(bbox)]
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise ParseError("bbox width and height must be positive", f"{path}.bbox")
        probs = _list(_get(d, "probs", path), f"{path}.probs")
        if len(probs) != n_y:
            raise ParseError(f"dimension mismatch: {len(probs)} probs for {n_y} classes",
                             f"{path}.probs")
        probs = [_number(v, f"{path}.probs[{k}]") for k, v in enumerate(probs)]
        for k, v in enumerate(probs):
            if not 0.0 <= v <= 1.0:
                raise ParseError(f"value {v} out of [0, 1]", f"{path}.probs[{k}]")
        try:
            detections.append(Detection(i, tuple(bbox), np.array(probs)))
        except ValueError as exc:
            raise ParseError(str(exc), path) from None

    conn = _list(_get(doc, "g_conn"), "g_conn")
    if len(conn) != n:
        raise ParseError(f"dimension mismatch: {len(conn)} rows for N={n}", "g_conn")
    g_conn = np.zeros((n, n))
    for i, row in enumerate(conn):
        row = _list(row, f"g_conn[{i}]")
        if len(row) != n:
            raise ParseError(f"dimension mismatch: {len(row)} columns for N={n}", f"g_conn[{i}]")
        for j, v in enumerate(row):
            v = _number(v, f"g_conn[{i}][{j}]")
            if not 0.0 <= v <= 1.0:
                raise ParseError(f"value {v} out of [0, 1]", f"g_conn[{i}][{j}]")
            g_conn[i, j] = v

    rel = _list(_get(doc, "g_rel"), "g_rel")
    if len(rel) != n:
        raise ParseError(f"dimension mismatch: {len(rel)} rows for N={n}", "g_rel")
    g_rel = np.zeros((n, n, n_t))
    for i, row in enumerate(rel):
        row = _list(row, f"g_rel[{i}]")
        if len(row) != n:
            raise ParseError(f"dimension mismatch: {len(row)} columns for N={n}", f"g_rel[{i}]")
        for j, cell in enumerate(row):
            cell = _list(cell, f"g_rel[{i}][{j}]")
            if len(cell) != n_t:
                raise ParseError(f"dimension mismatch: {len(cell)} relation types for "
                                 f"{n_t} section classes", f"g_rel[{i}][{j}]")
            for k, v in enumerate(cell):
                v = _number(v, f"g_rel[{i}][{j}][{k}]")
                if not 0.0 <= v <= 1.0:
                    raise ParseError(f"value {v} out of [0, 1]", f"g_rel[{i}][{j}][{k}]")
                g_rel[i, j, k] = v
    return PlantInstance(vocab, tuple(detections), g_conn, g_rel)


def scene_graph_to_document(inst: PlantInstance) -> dict:
    doc = _vocab_to_doc(inst.vocab)
    doc["detections"] = [
        {"id": d.id, "bbox": [float(v) for v in d.bbox], "probs": [float(v) for v in d.probs]}
        for d in inst.detections
    ]
    doc["g_conn"] = inst.g_conn.tolist()
    doc["g_rel"] = inst.g_rel.tolist()
    return doc


def dump_scene_graph(inst: PlantInstance) -> bytes:
    return dumps_json(scene_graph_to_document(inst))


# ---------------------------------------------------------------------------
# equipment list and OCR codes
# ---------------------------------------------------------------------------

EQUIPMENT_COLUMNS = ("code", "type", "subtype", "description")


@dataclass(frozen=True)
class EquipmentRow:
    code: str
    type_label: str
    subtype_label: str
    description: str = ""
    specs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.code:
            raise ValueError("equipment code must be non-empty")
        object.__setattr__(self, "specs", dict(self.specs))


def parse_equipment(data: bytes | str) -> list[EquipmentRow]:
    """Read the equipment table.  Columns after the four fixed ones are
    folded verbatim into ``specs``; duplicate codes are kept with a warning."""
    reader = csv.reader(io.StringIO(_text(data)))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header row", "line 1") from None
    header = [h.strip() for h in header]
    for col in EQUIPMENT_COLUMNS:
        if col not in header:
            raise ParseError(f"missing mandatory column {col!r}", "line 1")
    idx = {h: i for i, h in enumerate(header)}
    extra = [h for h in header if h not in EQUIPMENT_COLUMNS]
    rows: list[EquipmentRow] = []
    seen: set[str] = set()
    for lineno, record in enumerate(reader, start=2):
        if not any(cell.strip() for cell in record):
            continue
        if len(record) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(record)}", f"line {lineno}")
        code = record[idx["code"]].strip()
        if not code:
            raise ParseError("empty code", f"line {lineno}")
        if code in seen:
            warnings.warn(f"duplicate equipment code {code!r} at line {lineno}", stacklevel=2)
        seen.add(code)
        rows.append(EquipmentRow(code, record[idx["type"]].strip(), record[idx["subtype"]].strip(),
                                 record[idx["description"]],
                                 {h: record[idx[h]] for h in extra}))
    return rows


def dump_equipment(rows: list[EquipmentRow]) -> bytes:
    extra: list[str] = []
    for r in rows:
        for k in r.specs:
            if k not in extra:
                extra.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(EQUIPMENT_COLUMNS) + extra)
    for r in rows:
        w.writerow([r.code, r.type_label, r.subtype_label, r.description]
                   + [r.specs.get(k, "") for k in extra])
    return buf.getvalue().encode("utf-8")


@dataclass(frozen=True)
class OcrCode:
    code: str
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("OCR coordinates must be finite")


def parse_ocr_codes(data: bytes | str) -> list[OcrCode]:
    doc = _list(_load_json(data), "")
    out = []
    for i, item in enumerate(doc):
        path = f"[{i}]"
        code = _get(item, "code", path)
        if not isinstance(code, str):
            raise ParseError("code must be a string", f"{path}.code")
        out.append(OcrCode(code, _number(_get(item, "x", path), f"{path}.x"),
                           _number(_get(item, "y", path), f"{path}.y")))
    return out


def dump_ocr_codes(codes: list[OcrCode]) -> bytes:
    return dumps_json([{"code": c.code, "x": float(c.x), "y": float(c.y)} for c in codes])


# ---------------------------------------------------------------------------
# regulations rulebook
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectionRule:
    mandatory: frozenset[int]
    optional: frozenset[int] = frozenset()


@dataclass(frozen=True)
class LineRule:
    # section-type index -> minimum count
    min_sections: Mapping[int, int]
    optional: frozenset[int] = frozenset()


@dataclass(frozen=True)
class CatalogueEntry:
    component_class: int
    mandatory_characteristics: tuple[str, ...] = ()


@dataclass(frozen=True)
class Rulebook:
    """Composition requirements for sections and lines, plus the equipment
    catalogue mapping (type, subtype) couples onto component classes.

    Section or line types without a rule are unconstrained.
    """

    vocab: ClassVocabularies
    section_rules: Mapping[int, SectionRule]
    line_rules: Mapping[int, LineRule]
    catalogue: Mapping[tuple[str, str], CatalogueEntry] = field(default_factory=dict)

    def __post_init__(self):
        v = self.vocab
        for t, rule in self.section_rules.items():
            if not 0 <= t < v.n_sections:
                raise ValueError(f"section rule for unknown class index {t}")
            for c in rule.mandatory | rule.optional:
                if not 0 <= c < v.n_components:
                    raise ValueError(f"section rule references unknown component class {c}")
        for l, rule in self.line_rules.items():
            if not 0 <= l < v.n_lines:
                raise ValueError(f"line rule for unknown class index {l}")
            for t in set(rule.min_sections) | rule.optional:
                if not 0 <= t < v.n_sections:
                    raise ValueError(f"line rule references unknown section class {t}")
        for entry in self.catalogue.values():
            if not 0 <= entry.component_class < v.n_components:
                raise ValueError("catalogue references unknown component class")

    def resolve(self, type_label: str, subtype_label: str) -> int | None:
        entry = self.catalogue.get((type_label.strip(), subtype_label.strip()))
        return None if entry is None else entry.component_class


def _labels(value, path: str) -> list[str]:
    items = _list(value, path)
    for i, v in enumerate(items):
        if not isinstance(v, str):
            raise ParseError("expected a string", f"{path}[{i}]")
    return items


def parse_regulations(data: bytes | str, vocab: ClassVocabularies) -> Rulebook:
    doc = _load_json(data)

    def comp(label, path):
        try:
            return vocab.component_index(label)
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), path) from None

    def sect(label, path):
        try:
            return vocab.section_index(label)
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), path) from None

    section_rules: dict[int, SectionRule] = {}
    for i, item in enumerate(_list(doc.get("sections", []), "sections")):
        path = f"sections[{i}]"
        t = sect(_get(item, "type", path), f"{path}.type")
        if t in section_rules:
            raise ParseError("duplicate section rule", f"{path}.type")
        mand = [comp(v, f"{path}.mandatory[{k}]")
                for k, v in enumerate(_labels(item.get("mandatory", []), f"{path}.mandatory"))]
        opt = [comp(v, f"{path}.optional[{k}]")
               for k, v in enumerate(_labels(item.get("optional", []), f"{path}.optional"))]
        section_rules[t] = SectionRule(frozenset(mand), frozenset(opt))

    line_rules: dict[int, LineRule] = {}
    for i, item in enumerate(_list(doc.get("lines", []), "lines")):
        path = f"lines[{i}]"
        label = _get(item, "type", path)
        try:
            l = vocab.line_index(label)
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), f"{path}.type") from None
        if l in line_rules:
            raise ParseError("duplicate line rule", f"{path}.type")
        counts: dict[int, int] = {}
        for k, v in enumerate(_labels(item.get("min_sections", []), f"{path}.min_sections")):
            t = sect(v, f"{path}.min_sections[{k}]")
            counts[t] = counts.get(t, 0) + 1
        opt = [sect(v, f"{path}.optional[{k}]")
               for k, v in enumerate(_labels(item.get("optional", []), f"{path}.optional"))]
        line_rules[l] = LineRule(counts, frozenset(opt))

    catalogue: dict[tuple[str, str], CatalogueEntry] = {}
    for i, item in enumerate(_list(doc.get("catalogue", []), "catalogue")):
        path = f"catalogue[{i}]"
        pair = (str(_get(item, "type", path)).strip(), str(item.get("subtype", "")).strip())
        c = comp(list(pair), path)
        chars = tuple(_labels(item.get("mandatory_characteristics", []),
                              f"{path}.mandatory_characteristics"))
        catalogue[pair] = CatalogueEntry(c, chars)
    return Rulebook(vocab, section_rules, line_rules, catalogue)


def dump_regulations(rb: Rulebook) -> bytes:
    v = rb.vocab
    comp = v.component_labels
    doc = {
        "sections": [
            {"type": v.section_classes[t],
             "mandatory": [comp[c] for c in sorted(r.mandatory)],
             "optional": [comp[c] for c in sorted(r.optional)]}
            for t, r in sorted(rb.section_rules.items())
        ],
        "lines": [
            {"type": v.line_classes[l],
             "min_sections": [v.section_classes[t] for t in sorted(r.min_sections)
                              for _ in range(r.min_sections[t])],
             "optional": [v.section_classes[t] for t in sorted(r.optional)]}
            for l, r in sorted(rb.line_rules.items())
        ],
        "catalogue": [
            {"type": pair[0], "subtype": pair[1],
             "mandatory_characteristics": list(e.mandatory_characteristics)}
            for pair, e in rb.catalogue.items()
        ],
    }
    return dumps_json(doc)


# ---------------------------------------------------------------------------
# plant registry
# ---------------------------------------------------------------------------

REGISTRY_COLUMNS = ("plant_id", "line_idx", "line_type", "section_idx", "section_type",
                    "component_classes")

# (section type, sorted component-class multiset)
SectionRecord = tuple[int, tuple[int, ...]]


@dataclass(frozen=True)
class RegistryRecord:
    """Hierarchy of one registered plant, with classes resolved to indices."""

    plant_id: str
    lines: tuple[tuple[int, tuple[SectionRecord, ...]], ...]

    def __post_init__(self):
        if not self.lines:
            raise ValueError(f"registry record {self.plant_id!r} has no lines")
        lines = tuple((int(l), tuple((int(t), tuple(sorted(int(c) for c in ms)))
                                     for t, ms in secs))
                      for l, secs in self.lines)
        for l, secs in lines:
            if not secs:
                raise ValueError(f"registry record {self.plant_id!r} has an empty line")
            for _, ms in secs:
                if not ms:
                    raise ValueError(f"registry record {self.plant_id!r} has an empty section")
        object.__setattr__(self, "lines", lines)


def parse_registry(data: bytes | str, vocab: ClassVocabularies) -> list[RegistryRecord]:
    reader = csv.reader(io.StringIO(_text(data)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("missing header row", "line 1") from None
    for col in REGISTRY_COLUMNS:
        if col not in header:
            raise ParseError(f"missing mandatory column {col!r}", "line 1")
    idx = {h: i for i, h in enumerate(header)}
    plants: dict[str, dict[int, tuple[str, dict[int, tuple[str, list[str]]]]]] = {}
    where: dict[tuple[str, int, int], int] = {}
    for lineno, rec in enumerate(reader, start=2):
        if not any(cell.strip() for cell in rec):
            continue
        path = f"line {lineno}"
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(rec)}", path)
        pid = rec[idx["plant_id"]].strip()
        try:
            li = int(rec[idx["line_idx"]])
            si = int(rec[idx["section_idx"]])
        except ValueError:
            raise ParseError("line_idx and section_idx must be integers", path) from None
        ltype = rec[idx["line_type"]].strip()
        stype = rec[idx["section_type"]].strip()
        comps = [c.strip() for c in rec[idx["component_classes"]].split(";") if c.strip()]
        if not comps:
            raise ParseError("section without component classes", path)
        plant = plants.setdefault(pid, {})
        if li in plant and plant[li][0] != ltype:
            raise ParseError(f"line {li} of plant {pid!r} has conflicting types", path)
        line = plant.setdefault(li, (ltype, {}))
        if si in line[1]:
            raise ParseError(f"duplicate section {si} in line {li} of plant {pid!r}", path)
        line[1][si] = (stype, comps)
        where[(pid, li, si)] = lineno

    records = []
    for pid, plant in plants.items():
        lines = []
        for li in sorted(plant):
            ltype, secs = plant[li]
            try:
                l = vocab.line_index(ltype)
            except KeyError as exc:
                raise ParseError(str(exc.args[0]), f"line {where[(pid, li, min(secs))]}") from None
            sections = []
            for si in sorted(secs):
                stype, comps = secs[si]
                path = f"line {where[(pid, li, si)]}"
                try:
                    t = vocab.section_index(stype)
                    ms = tuple(sorted(vocab.component_index(c) for c in comps))
                except KeyError as exc:
                    raise ParseError(str(exc.args[0]), path) from None
                sections.append((t, ms))
            lines.append((l, tuple(sections)))
        records.append(RegistryRecord(pid, tuple(lines)))
    return records


def dump_registry(records: list[RegistryRecord], vocab: ClassVocabularies) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REGISTRY_COLUMNS)
    comp = vocab.component_labels
    for r in records:
        for li, (l, secs) in enumerate(r.lines):
            for si, (t, ms) in enumerate(secs):
                w.writerow([r.plant_id, li, vocab.line_classes[l], si, vocab.section_classes[t],
                            ";".join(comp[c] for c in ms)])
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnealingSchedule:
    t0: float = 1.0
    cooling: float = 0.995
    iters: int = 20000
    restarts: int = 8


@dataclass(frozen=True)
class RunConfig:
    """Weights and search settings.  Every field has a documented default."""

    lambdas: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)
    alphas: tuple[float, float, float] = (0.05, 0.05, 0.01)
    beta: float = 0.5
    gamma: float = 0.9
    epsilon: float = 1e-9
    match_cutoff_factor: float = 1.5
    annealing: AnnealingSchedule = AnnealingSchedule()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "alphas", tuple(float(v) for v in self.alphas))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if len(self.lambdas) != 5 or any(not math.isfinite(v) or v < 0 for v in self.lambdas):
            out.append("lambdas must be five non-negative numbers")
        if len(self.alphas) != 3 or any(not math.isfinite(v) or v < 0 for v in self.alphas):
            out.append("alphas must be three non-negative numbers")
        if not 0.0 <= self.beta <= 1.0:
            out.append("beta must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            out.append("gamma must lie in (0, 1)")
        if not 0.0 < self.epsilon <= 1e-3:
            out.append("epsilon must lie in (0, 1e-3]")
        if not self.match_cutoff_factor > 0:
            out.append("match_cutoff_factor must be positive")
        a = self.annealing
        if not a.t0 > 0:
            out.append("annealing.t0 must be positive")
        if not 0.0 < a.cooling < 1.0:
            out.append("annealing.cooling must lie in (0, 1)")
        if a.iters < 1:
            out.append("annealing.iters must be >= 1")
        if a.restarts < 1:
            out.append("annealing.restarts must be >= 1")
        if not 0 <= self.seed < 2**64:
            out.append("seed must be a 64-bit unsigned integer")
        return out

    def with_annealing(self, **kw) -> RunConfig:
        return replace(self, annealing=replace(self.annealing, **kw))


def parse_config(data: bytes | str) -> RunConfig:
    text = _text(data).strip()
    doc = _load_json(text) if text else {}
    if not isinstance(doc, Mapping):
        raise ParseError("config must be an object")
    known = {f.name for f in fields(RunConfig)}
    for key in doc:
        if key not in known:
            raise ParseError(f"unknown key {key!r}", key)
    kw: dict[str, Any] = {}
    for key in ("lambdas", "alphas"):
        if key in doc:
            kw[key] = tuple(_number(v, f"{key}[{i}]") for i, v in enumerate(_list(doc[key], key)))
            expected = 5 if key == "lambdas" else 3
            if len(kw[key]) != expected:
                raise ParseError(f"expected {expected} values", key)
            for i, v in enumerate(kw[key]):
                if v < 0:
                    raise ParseError(f"negative weight {v}", f"{key}[{i}]")
    for key in ("beta", "gamma", "epsilon", "match_cutoff_factor"):
        if key in doc:
            kw[key] = _number(doc[key], key)
    if "seed" in doc:
        seed = doc["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ParseError("seed must be an integer", "seed")
        kw["seed"] = seed
    if "annealing" in doc:
        ann = doc["annealing"]
        if not isinstance(ann, Mapping):
            raise ParseError("expected an object", "annealing")
        akw: dict[str, Any] = {}
        names = {f.name for f in fields(AnnealingSchedule)}
        for key, value in ann.items():
            if key not in names:
                raise ParseError(f"unknown key {key!r}", f"annealing.{key}")
            if key in ("iters", "restarts"):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ParseError("expected an integer", f"annealing.{key}")
                akw[key] = value
            else:
                akw[key] = _number(value, f"annealing.{key}")
        kw["annealing"] = AnnealingSchedule(**akw)
    try:
        return RunConfig(**kw)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def config_to_document(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    doc["lambdas"] = list(cfg.lambdas)
    doc["alphas"] = list(cfg.alphas)
    return doc


def dump_config(cfg: RunConfig) -> bytes:
    return dumps_json(config_to_document(cfg))


# ---------------------------------------------------------------------------
# hierarchy documents
# ---------------------------------------------------------------------------

def structure_to_document(s: HierarchicalStructure, vocab: ClassVocabularies) -> dict:
    """Nested lines -> sections -> components form with class labels."""
    comp = vocab.component_labels
    lines = []
    for j in sorted(s.lines):
        secs = []
        for k in s.lines[j]:
            secs.append({
                "id": k,
                "class": vocab.section_classes[s.section_class[k]],
                "components": [{"id": c, "class": comp[s.component_class[c]]}
                               for c in s.sections.get(k, ())],
            })
        lines.append({"id": j, "class": vocab.line_classes[s.line_class[j]], "sections": secs})
    return {"lines": lines}


def structure_from_document(doc, vocab: ClassVocabularies) -> HierarchicalStructure:
    """Inverse of :func:`structure_to_document`.  Overlaps are preserved so
    that validation can report them."""
    sections: dict[int, list[int]] = {}
    lines: dict[int, list[int]] = {}
    yc: dict[int, int] = {}
    yt: dict[int, int] = {}
    yl: dict[int, int] = {}

    def _id(value, path):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError("id must be an integer", path)
        return value

    for i, line in enumerate(_list(_get(doc, "lines"), "lines")):
        path = f"lines[{i}]"
        j = _id(_get(line, "id", path), f"{path}.id")
        try:
            yl[j] = vocab.line_index(_get(line, "class", path))
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), f"{path}.class") from None
        members = lines.setdefault(j, [])
        for a, sec in enumerate(_list(_get(line, "sections", path), f"{path}.sections")):
            spath = f"{path}.sections[{a}]"
            k = _id(_get(sec, "id", spath), f"{spath}.id")
            members.append(k)
            try:
                yt[k] = vocab.section_index(_get(sec, "class", spath))
            except KeyError as exc:
                raise ParseError(str(exc.args[0]), f"{spath}.class") from None
            comps = sections.setdefault(k, [])
            for b, c in enumerate(_list(_get(sec, "components", spath), f"{spath}.components")):
                cpath = f"{spath}.components[{b}]"
                cid = _id(_get(c, "id", cpath), f"{cpath}.id")
                comps.append(cid)
                try:
                    yc[cid] = vocab.component_index(_get(c, "class", cpath))
                except KeyError as exc:
                    raise ParseError(str(exc.args[0]), f"{cpath}.class") from None
    return HierarchicalStructure({k: tuple(v) for k, v in sections.items()},
                                 {j: tuple(v) for j, v in lines.items()}, yc, yt, yl)


def parse_structure(data: bytes | str, vocab: ClassVocabularies) -> HierarchicalStructure:
    """Read a hierarchy from a structure document or a result document
    (which nests it under ``hierarchy``)."""
    doc = _load_json(data)
    if isinstance(doc, Mapping) and "hierarchy" in doc:
        doc = doc["hierarchy"]
    return structure_from_document(doc, vocab)


def dump_structure(s: HierarchicalStructure, vocab: ClassVocabularies) -> bytes:
    return dumps_json(structure_to_document(s, vocab))
