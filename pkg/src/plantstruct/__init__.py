"""Reconstruction of gas-plant hierarchies (components, sections, lines)
from scene-graph, equipment-list, regulation and registry evidence."""

__version__ = "0.1.0"

from .model import (ClassVocabularies, Detection, HierarchicalStructure, PlantInstance,
                    canonicalize, validate_structure)
from .ingest import (EquipmentRow, OcrCode, ParseError, RegistryRecord, Rulebook, RunConfig,
                     parse_config, parse_equipment, parse_ocr_codes, parse_registry,
                     parse_regulations, parse_scene_graph)
from .fusion import equip_distribution, fuse_probs, match_codes
from .objective import (EnergyBreakdown, PlausibilityModel, e_edge, e_node, e_norm, e_reg,
                        e_struct, fit_plausibility, phi_line, phi_section, score)
from .optimizer import SearchReport, anneal, brute_force, initial_solution
from .pipeline import reconstruct

__all__ = [
    "ClassVocabularies", "Detection", "HierarchicalStructure", "PlantInstance",
    "canonicalize", "validate_structure",
    "EquipmentRow", "OcrCode", "ParseError", "RegistryRecord", "Rulebook", "RunConfig",
    "parse_config", "parse_equipment", "parse_ocr_codes", "parse_registry",
    "parse_regulations", "parse_scene_graph",
    "equip_distribution", "fuse_probs", "match_codes",
    "EnergyBreakdown", "PlausibilityModel", "e_edge", "e_node", "e_norm", "e_reg", "e_struct",
    "fit_plausibility", "phi_line", "phi_section", "score",
    "SearchReport", "anneal", "brute_force", "initial_solution",
    "reconstruct",
]
