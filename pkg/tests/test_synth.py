from __future__ import annotations

import math

import numpy as np
import pytest

from plantstruct.ingest import RegistryRecord, RunConfig
from plantstruct.model import HierarchicalStructure, canonicalize
from plantstruct.objective import fit_plausibility
from plantstruct.synth import (EvalReport, NoiseSpec, component_accuracy, corrupt_instance,
                               evaluate, noise_spec, random_problem, recall_at_k, run_bench,
                               sample_structure, section_score, synth_documents, truth_triplets,
                               typed_section_accuracy)

from conftest import tiny_vocab


def hs(sections, lines, yc, yt, yl):
    def as_map(v):
        return v if isinstance(v, dict) else dict(enumerate(v))
    return HierarchicalStructure(sections, lines, as_map(yc), as_map(yt), as_map(yl))


class TestSample:
    def test_single_composition_registry(self):
        v = tiny_vocab()
        rec = RegistryRecord("X", ((1, ((0, (0, 1)), (1, (2, 2)))),))
        m = fit_plausibility([rec], v)
        rng = np.random.default_rng(0)
        for _ in range(20):
            truth, inst = sample_structure(m, v, rng)
            assert set(truth.line_class.values()) == {1}
            for k, mem in truth.sections.items():
                ms = sorted(truth.component_class[c] for c in mem)
                assert ms == ([0, 1] if truth.section_class[k] == 0 else [2, 2])

    def test_deterministic(self, model, vocab):
        a = sample_structure(model, vocab, np.random.default_rng(5))
        b = sample_structure(model, vocab, np.random.default_rng(5))
        assert a[0] == b[0]
        assert np.array_equal(a[1].g_rel, b[1].g_rel)

    def test_exact_instance(self, model, vocab):
        truth, inst = sample_structure(model, vocab, np.random.default_rng(1))
        assert canonicalize(truth) == truth
        assert np.all(inst.probs.max(axis=1) == 1.0)
        for k, mem in truth.sections.items():
            for i in mem:
                assert inst.probs[i, truth.component_class[i]] == 1.0
                for j in mem:
                    if i != j:
                        assert inst.g_conn[i, j] == 1.0
                        assert inst.g_rel[i, j, truth.section_class[k]] == 1.0
        assert inst.g_rel.sum() == inst.g_conn.sum()

    def test_line_type_frequencies(self, model, vocab):
        rng = np.random.default_rng(12)
        counts = np.zeros(vocab.n_lines)
        for _ in range(1000):
            truth, _ = sample_structure(model, vocab, rng, max_lines=1)
            counts[truth.line_class[0]] += 1
        for l, p in enumerate(model.line_type_freq):
            assert abs(counts[l] - 1000 * p) <= 3 * math.sqrt(1000 * p * (1 - p))

    def test_identifiable(self, model, vocab):
        rng = np.random.default_rng(3)
        for _ in range(30):
            truth, _ = sample_structure(model, vocab, rng, identifiable=True)
            seen = {}
            for k, j in truth.line_of.items():
                assert seen.setdefault(truth.section_class[k], j) == j


class TestCorrupt:
    def clean(self, model, vocab):
        return sample_structure(model, vocab, np.random.default_rng(2))[1]

    def test_identity(self, model, vocab):
        inst = self.clean(model, vocab)
        out = corrupt_instance(inst, NoiseSpec(0.0, 0.0, 9))
        assert np.array_equal(out.probs, inst.probs)
        assert np.array_equal(out.g_conn, inst.g_conn) and np.array_equal(out.g_rel, inst.g_rel)

    def test_infinite_limit(self, model, vocab):
        inst = self.clean(model, vocab)
        out = corrupt_instance(inst, NoiseSpec(math.inf, 0.0, 0))
        assert np.allclose(out.probs, 1.0 / vocab.n_components)

    def test_mixing_weight(self, model, vocab):
        inst = self.clean(model, vocab)
        out = corrupt_instance(inst, NoiseSpec(1.0, 0.0, 0))
        assert np.allclose(out.probs, 0.5 * inst.probs + 0.5 / vocab.n_components)

    def test_flips_and_determinism(self, model, vocab):
        inst = self.clean(model, vocab)
        a = corrupt_instance(inst, NoiseSpec(0.3, 0.5, 4))
        b = corrupt_instance(inst, NoiseSpec(0.3, 0.5, 4))
        assert a.g_rel.tobytes() == b.g_rel.tobytes() and a.probs.tobytes() == b.probs.tobytes()
        changed = a.g_rel != inst.g_rel
        assert np.all(a.g_rel[changed] == 0.5)
        assert 0.3 < np.mean(a.g_rel == 0.5) < 0.7
        c = corrupt_instance(inst, NoiseSpec(0.3, 0.5, 5))
        assert not np.array_equal(a.g_rel, c.g_rel)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(-1.0)
        with pytest.raises(ValueError):
            NoiseSpec(0.0, 1.5)
        assert noise_spec(1.0, 0) == NoiseSpec(1.0, 0.2, 0)


class TestMetrics:
    def truth(self):
        return hs({0: (0, 1, 2), 1: (3,)}, {0: (0,), 1: (1,)}, [0, 1, 2, 0], [0, 1], [0, 1])

    def test_component_accuracy(self):
        t = self.truth()
        assert component_accuracy(t, t) == 1.0
        p = hs(t.sections, t.lines, [0, 1, 2, 1], [0, 1], [0, 1])
        assert component_accuracy(p, t) == 0.75
        p = hs(t.sections, t.lines, [1, 2, 0, 1], [0, 1], [0, 1])
        assert component_accuracy(p, t) == 0.0

    def test_id_mismatch(self):
        t = self.truth()
        with pytest.raises(ValueError):
            component_accuracy(hs({0: (0, 1)}, {0: (0,)}, [0, 0], [0], [0]), t)

    def test_section_score(self):
        t = self.truth()
        assert section_score(t, t) == 1.0
        p = hs({0: (0, 1), 1: (2,), 2: (3,)}, {0: (0, 1, 2)}, [0, 1, 2, 0], [0, 0, 0], [0])
        assert section_score(p, t) == pytest.approx(0.75)
        # {3} is found inside {2, 3}: half of that section is foreign
        p = hs({0: (0, 1), 1: (2, 3)}, {0: (0, 1)}, [0, 1, 2, 0], [0, 0], [0])
        assert section_score(p, t) == pytest.approx((3 * 2 / 3 + 1 * 0.5) / 4)
        singles = hs({i: (i,) for i in range(4)}, {0: (0, 1, 2, 3)}, [0] * 4, [0] * 4, [0])
        one = hs({0: (0, 1, 2, 3)}, {0: (0,)}, [0] * 4, [0], [0])
        assert section_score(one, singles) == pytest.approx(0.25)

    def test_section_score_permutation_invariant(self):
        t = self.truth()
        p = hs({5: (3,), 2: (0, 1), 7: (2,)}, {0: (5, 2, 7)}, [0, 1, 2, 0], {5: 0, 2: 1, 7: 0},
               [0])
        assert section_score(p, t) == section_score(canonicalize(p), t) == pytest.approx(0.75)

    def test_typed_accuracy(self):
        t = self.truth()
        assert typed_section_accuracy(t, t, 0) == 1.0
        wrong = hs(t.sections, t.lines, [0, 1, 2, 0], [1, 1], [0, 1])
        assert typed_section_accuracy(wrong, t, 0) == 0.0
        assert typed_section_accuracy(wrong, t, 1) == 1.0
        only_m = hs({0: (0, 1)}, {0: (0,)}, [0, 0], [0], [0])
        assert typed_section_accuracy(only_m, only_m, 1) is None

    def test_recall(self):
        g = np.zeros((2, 2, 2))
        g[0, 1, 1] = 0.9
        assert recall_at_k(g, {(0, 1, 1)}, 1) == 1.0
        assert recall_at_k(g, {(1, 0, 1)}, 8) == 1.0
        # ties keep row-major order: (1, 0, 1) is flat index 5, ranked sixth
        assert recall_at_k(g, {(1, 0, 1)}, 5) == 0.0
        assert recall_at_k(g, {(1, 0, 1)}, 6) == 1.0
        with pytest.raises(ValueError):
            recall_at_k(g, set(), 3)

    def test_recall_full_coverage(self):
        rng = np.random.default_rng(0)
        g = rng.uniform(size=(3, 3, 2))
        truth = {(0, 1, 0), (2, 1, 1)}
        assert recall_at_k(g, truth, 18) == 1.0

    def test_triplets(self):
        t = self.truth()
        assert len(truth_triplets(t)) == 6
        assert (0, 2, 0) in truth_triplets(t)

    def test_evaluate_perfect(self, model, vocab):
        truth, inst = sample_structure(model, vocab, np.random.default_rng(4))
        rep = evaluate(truth, truth, inst.g_rel, vocab)
        assert rep.component_accuracy == rep.section_score == 1.0
        n_true = len(truth_triplets(truth))
        for k, v in rep.recall_at_k.items():
            assert v == min(k, n_true) / n_true
        doc = EvalReport(1.0, 1.0, None, 1.0, {20: 0.5}).to_document()
        assert doc["R@20"] == 0.5 and doc["regulation_section_acc"] is None


class TestDocuments:
    def test_documents_resolve(self, model, vocab, rulebook):
        truth, inst = sample_structure(model, vocab, np.random.default_rng(6))
        rows, codes = synth_documents(truth, inst, rulebook)
        assert len(rows) == len(codes) == inst.n
        for i, row in enumerate(rows):
            assert rulebook.resolve(row.type_label, row.subtype_label) == truth.component_class[i]


class TestBench:
    def test_zero_noise_rows(self, model, rulebook):
        cfg = RunConfig().with_annealing(iters=500, restarts=1)
        rows = run_bench(model, rulebook, cfg, noise_levels=(0.0,), n_instances=3)
        assert len(rows) == 3
        assert all(r["component_accuracy"] == 1.0 for r in rows)
        again = run_bench(model, rulebook, cfg, noise_levels=(0.0,), n_instances=3)
        assert rows == again


def test_random_problem_bounds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        inst, rb, m = random_problem(rng)
        assert 1 <= inst.n <= 5
        assert inst.vocab.n_components <= 4 and inst.vocab.n_sections <= 3
        assert inst.vocab.n_lines == 2
