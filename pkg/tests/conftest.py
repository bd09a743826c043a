from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from plantstruct.datasets import reference_model, reference_rulebook, reference_vocab
from plantstruct.ingest import LineRule, RegistryRecord, Rulebook, RunConfig, SectionRule
from plantstruct.model import ClassVocabularies, Detection, PlantInstance
from plantstruct.objective import fit_plausibility

HERE = Path(__file__).parent
F1 = HERE / "fixtures" / "f1"
GOLDEN = HERE / "golden"


@pytest.fixture(scope="session")
def vocab():
    return reference_vocab()


@pytest.fixture(scope="session")
def rulebook():
    return reference_rulebook()


@pytest.fixture(scope="session")
def model():
    return reference_model()


@pytest.fixture
def f1_paths():
    return {
        "scene_graph": F1 / "scene_graph.json",
        "equipment": F1 / "equipment.csv",
        "ocr": F1 / "ocr.json",
        "config": F1 / "config.json",
    }


def tiny_vocab(n_c=3, n_t=2, n_l=2) -> ClassVocabularies:
    return ClassVocabularies(tuple((f"c{i}", "") for i in range(n_c)),
                             tuple(f"s{i}" for i in range(n_t)),
                             ("measurement", "regulation", "aux")[:n_l])


def make_instance(vocab: ClassVocabularies, probs, g_conn=None, g_rel=None) -> PlantInstance:
    probs = np.asarray(probs, dtype=float)
    n = probs.shape[0]
    dets = tuple(Detection(i, (10.0 * i, 0.0, 4.0, 4.0), probs[i]) for i in range(n))
    if g_conn is None:
        g_conn = np.ones((n, n))
    if g_rel is None:
        g_rel = np.ones((n, n, vocab.n_sections))
    return PlantInstance(vocab, dets, np.asarray(g_conn, float), np.asarray(g_rel, float))


@pytest.fixture
def tiny():
    """3 component classes, 2 section classes, 2 line classes, with a
    rulebook and a two-plant registry."""
    v = tiny_vocab()
    rb = Rulebook(v, {0: SectionRule(frozenset({0, 1}), frozenset({2})),
                      1: SectionRule(frozenset({2}))},
                  {0: LineRule({0: 1}), 1: LineRule({1: 2})})
    records = [RegistryRecord("A", ((0, ((0, (0, 1)), (1, (2,)))),)),
               RegistryRecord("B", ((0, ((0, (0, 1)),)), (1, ((1, (2,)), (1, (2, 2)))))),
               ]
    return v, rb, fit_plausibility(records, v)


@pytest.fixture
def config():
    return RunConfig()
