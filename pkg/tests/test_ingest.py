from __future__ import annotations

import json
import warnings

import numpy as np
import pytest

from plantstruct.datasets import reference_bytes, reference_registry
from plantstruct.ingest import (AnnealingSchedule, ParseError, RunConfig, dump_config,
                                dump_equipment, dump_ocr_codes, dump_registry, dump_regulations,
                                dump_scene_graph, dump_structure, parse_config, parse_equipment,
                                parse_ocr_codes, parse_registry, parse_regulations,
                                parse_scene_graph, parse_structure)
from plantstruct.model import HierarchicalStructure

from conftest import F1


def scene_doc(n=1, n_t=2):
    return {
        "component_classes": ["a/x", "b"],
        "section_classes": [f"s{i}" for i in range(n_t)],
        "line_classes": ["measurement", "regulation"],
        "detections": [{"id": i, "bbox": [i, 0, 2, 2], "probs": [0.25, 0.75]} for i in range(n)],
        "g_conn": [[0.5] * n for _ in range(n)],
        "g_rel": [[[0.1] * n_t for _ in range(n)] for _ in range(n)],
    }


class TestSceneGraph:
    def test_minimal(self):
        inst = parse_scene_graph(json.dumps(scene_doc(1)))
        assert inst.n == 1
        assert inst.g_conn.shape == (1, 1) and inst.g_conn[0, 0] == 0.0

    def test_out_of_range_names_indices(self):
        doc = scene_doc(2)
        doc["g_rel"][0][1][1] = 1.2
        with pytest.raises(ParseError) as err:
            parse_scene_graph(json.dumps(doc))
        assert err.value.path == "g_rel[0][1][1]"
        assert "1.2" in str(err.value)

    def test_round_trip_bytes(self):
        # probabilities are renormalized on load, so compare after one pass
        once = dump_scene_graph(parse_scene_graph((F1 / "scene_graph.json").read_bytes()))
        assert dump_scene_graph(parse_scene_graph(once)) == once

    def test_round_trip_n3(self):
        doc = scene_doc(3)
        doc["g_conn"] = [[0, 0.2, 0.3], [0.4, 0, 0.6], [0.7, 0.8, 0]]
        first = dump_scene_graph(parse_scene_graph(json.dumps(doc)))
        assert dump_scene_graph(parse_scene_graph(first)) == first

    @pytest.mark.parametrize("mutate, path", [
        (lambda d: d.pop("g_conn"), ""),
        (lambda d: d["detections"][0].pop("bbox"), "detections[0]"),
        (lambda d: d["detections"][0].update(probs=[1.0]), "detections[0].probs"),
        (lambda d: d["g_conn"].append([0.0]), "g_conn"),
        (lambda d: d["g_rel"][0][0].append(0.0), "g_rel[0][0]"),
        (lambda d: d["detections"][0].update(id=3), "detections[0].id"),
    ])
    def test_errors_carry_path(self, mutate, path):
        doc = scene_doc(1)
        mutate(doc)
        with pytest.raises(ParseError) as err:
            parse_scene_graph(json.dumps(doc))
        assert err.value.path == path

    def test_not_json(self):
        with pytest.raises(ParseError):
            parse_scene_graph(b"{not json")


class TestEquipment:
    def test_two_rows(self):
        rows = parse_equipment("code,type,subtype,description\n1,valve,ball,a\n2,filter,,b\n")
        assert [r.code for r in rows] == ["1", "2"]
        assert rows[1].subtype_label == ""

    def test_empty_body(self):
        assert parse_equipment("code,type,subtype,description\n") == []

    def test_extra_columns_verbatim(self):
        rows = parse_equipment("code,type,subtype,description,DN,note\n"
                               "7,valve,ball,x, DN100 ,a;b\n")
        assert rows[0].specs == {"DN": " DN100 ", "note": "a;b"}

    def test_missing_column(self):
        with pytest.raises(ParseError, match="description"):
            parse_equipment("code,type,subtype\n1,a,b\n")

    def test_duplicate_code_warns_and_keeps_both(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rows = parse_equipment("code,type,subtype,description\n1,a,,x\n1,b,,y\n")
        assert len(rows) == 2
        assert any("duplicate" in str(w.message) for w in caught)

    def test_round_trip(self):
        raw = (F1 / "equipment.csv").read_bytes()
        assert dump_equipment(parse_equipment(raw)) == raw


class TestOcr:
    def test_round_trip(self):
        codes = parse_ocr_codes((F1 / "ocr.json").read_bytes())
        assert codes[0].code == "P-101"
        assert parse_ocr_codes(dump_ocr_codes(codes)) == codes

    def test_bad_coordinate(self):
        with pytest.raises(ParseError) as err:
            parse_ocr_codes('[{"code": "1", "x": "a", "y": 0}]')
        assert err.value.path == "[0].x"


class TestRegulations:
    def test_filtering_rule_resolves(self, vocab, rulebook):
        t = vocab.section_index("filtering")
        assert vocab.component_index("filter/cartridge") in rulebook.section_rules[t].mandatory
        assert rulebook.resolve("meter", "turbine") == vocab.component_index("meter/turbine")
        assert rulebook.resolve("pump", "") is None

    def test_round_trip(self, vocab, rulebook):
        again = parse_regulations(dump_regulations(rulebook), vocab)
        assert again == rulebook

    def test_unknown_class(self, vocab):
        doc = {"sections": [{"type": "filtering", "mandatory": ["pump/centrifugal"]}],
               "lines": [], "catalogue": []}
        with pytest.raises(ParseError, match="pump/centrifugal"):
            parse_regulations(json.dumps(doc), vocab)


class TestRegistry:
    def test_reference_registry(self):
        records = reference_registry()
        assert len(records) == 12
        assert records[0].plant_id == "R001"

    def test_round_trip(self, vocab):
        records = reference_registry()
        assert parse_registry(dump_registry(records, vocab), vocab) == records

    def test_unknown_section_type(self, vocab):
        data = ("plant_id,line_idx,line_type,section_idx,section_type,component_classes\n"
                "P,0,measurement,0,compression,valve/ball\n")
        with pytest.raises(ParseError, match="compression") as err:
            parse_registry(data, vocab)
        assert err.value.path == "line 2"

    def test_conflicting_line_type(self, vocab):
        data = ("plant_id,line_idx,line_type,section_idx,section_type,component_classes\n"
                "P,0,measurement,0,inlet,valve/ball\nP,0,regulation,1,outlet,valve/check\n")
        with pytest.raises(ParseError, match="conflicting"):
            parse_registry(data, vocab)


class TestConfig:
    def test_empty_is_default(self):
        assert parse_config(b"") == RunConfig()
        assert parse_config("{}") == RunConfig()

    def test_documented_defaults(self):
        cfg = RunConfig()
        assert cfg.lambdas == (1.0,) * 5
        assert cfg.alphas == (0.05, 0.05, 0.01)
        assert (cfg.beta, cfg.gamma, cfg.epsilon, cfg.match_cutoff_factor) == (0.5, 0.9, 1e-9, 1.5)
        assert cfg.annealing == AnnealingSchedule(1.0, 0.995, 20000, 8)
        assert cfg.seed == 0 and cfg.problems() == []

    def test_round_trip(self):
        cfg = parse_config('{"seed": 7, "annealing": {"restarts": 1}, "beta": 0.25}')
        assert cfg.seed == 7 and cfg.annealing.restarts == 1 and cfg.annealing.iters == 20000
        assert parse_config(dump_config(cfg)) == cfg

    @pytest.mark.parametrize("doc, fragment", [
        ('{"lambdas": [1, 1, -1, 1, 1]}', "negative"),
        ('{"lambdas": [1, 1]}', "expected 5"),
        ('{"colour": 1}', "unknown key"),
        ('{"annealing": {"cooling": 1.5}}', "cooling"),
        ('{"annealing": {"iters": 0}}', "iters"),
        ('{"seed": 1.5}', "integer"),
        ('[1]', "object"),
    ])
    def test_rejects(self, doc, fragment):
        with pytest.raises(ParseError, match=fragment):
            parse_config(doc)


class TestStructureDocuments:
    def test_round_trip(self, vocab):
        s = HierarchicalStructure.from_assignment([0, 0, 1], [0, 0], [2, 0, 7], [1, 4], [0])
        assert parse_structure(dump_structure(s, vocab), vocab) == s

    def test_result_document_accepted(self, vocab):
        from conftest import GOLDEN
        s = parse_structure((GOLDEN / "f1_result.json").read_bytes(), vocab)
        assert sorted(len(m) for m in s.sections.values()) == [1, 2]


def test_packaged_files_present():
    for name in ("vocab.json", "regulations.json", "registry.csv"):
        assert reference_bytes(name)
    assert np.isclose(sum(1 for _ in reference_registry()), 12)
