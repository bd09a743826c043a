"""End-to-end reconstruction: code matching, evidence fusion, search."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Mapping

from . import __version__
from .fusion import CodeAssignment, fuse_instance
from .ingest import EquipmentRow, OcrCode, Rulebook, RunConfig, config_to_document
from .model import PlantInstance
from .objective import PlausibilityModel
from .optimizer import SearchReport, anneal, brute_force

__all__ = ["Reconstruction", "reconstruct", "missing_characteristics", "provenance_header",
           "result_document"]


@dataclass(frozen=True)
class Reconstruction:
    report: SearchReport
    fused: PlantInstance
    assignment: CodeAssignment
    equipment_of: Mapping[int, EquipmentRow]


def reconstruct(inst: PlantInstance, codes: list[OcrCode], equipment: list[EquipmentRow],
                rulebook: Rulebook, model: PlausibilityModel, config: RunConfig,
                exact: bool = False) -> Reconstruction:
    """Fuse equipment evidence into ``inst`` and search for the best
    hierarchy (``exact=True`` uses the brute-force oracle instead)."""
    fused, assignment = fuse_instance(inst, codes, equipment, rulebook, config.beta,
                                      config.gamma, config.match_cutoff_factor)
    search = brute_force if exact else anneal
    report = search(fused, rulebook, model, config)
    by_code: dict[str, EquipmentRow] = {}
    for row in equipment:
        by_code.setdefault(row.code, row)
    equipment_of = {}
    for ci, det, _ in assignment.pairs:
        row = by_code.get(codes[ci].code)
        if row is not None:
            equipment_of[det] = row
    return Reconstruction(report, fused, assignment, equipment_of)


def missing_characteristics(row: EquipmentRow, rulebook: Rulebook) -> list[str]:
    """Mandatory catalogue characteristics absent from the row's specs."""
    entry = rulebook.catalogue.get((row.type_label, row.subtype_label))
    if entry is None:
        return []
    have = {k for k, v in row.specs.items() if str(v).strip()}
    return [c for c in entry.mandatory_characteristics if c not in have]


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def provenance_header(config: RunConfig | None, inputs: Mapping[str, bytes]) -> dict:
    header = {"tool": "plantstruct", "version": __version__}
    if config is not None:
        canon = json.dumps(config_to_document(config), sort_keys=True).encode()
        header["config_sha256"] = _sha256(canon)
    header["inputs"] = {name: _sha256(data) for name, data in sorted(inputs.items())}
    return header


def result_document(rec: Reconstruction, rulebook: Rulebook, config: RunConfig,
                    inputs: Mapping[str, bytes]) -> dict:
    vocab = rec.fused.vocab
    doc = {"header": provenance_header(config, inputs)}
    doc.update(rec.report.to_document(vocab))
    doc["matching"] = {
        "pairs": [{"code_index": c, "detection": d, "distance": dist}
                  for c, d, dist in rec.assignment.pairs],
        "unmatched_codes": list(rec.assignment.unmatched_codes),
        "unmatched_detections": list(rec.assignment.unmatched_detections),
        "cutoff": rec.assignment.cutoff,
    }
    doc["equipment"] = [
        {"detection": det, "code": row.code,
         "missing_characteristics": missing_characteristics(row, rulebook)}
        for det, row in sorted(rec.equipment_of.items())
    ]
    return doc
