"""Randomized invariants (hypothesis)."""
from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from plantstruct.fusion import fuse_probs
from plantstruct.ingest import LineRule, RegistryRecord, Rulebook, RunConfig, SectionRule
from plantstruct.model import HierarchicalStructure, canonical_key, canonicalize
from plantstruct.objective import e_node, fit_plausibility, score
from plantstruct.synth import random_problem, recall_at_k, section_score

from conftest import make_instance, tiny_vocab

SETTINGS = settings(max_examples=60, deadline=None)


@st.composite
def structures(draw, n_max=6, n_c=3, n_t=2, n_l=2, n_min=1):
    n = draw(st.integers(n_min, n_max))
    sec = draw(st.lists(st.integers(0, n - 1), min_size=n, max_size=n))
    used = sorted(set(sec))
    line_of = {k: draw(st.integers(0, len(used) - 1)) for k in used}
    lines_used = sorted(set(line_of.values()))
    # arbitrary (non-canonical) ids
    sec_ids = {k: 10 * k + 3 for k in used}
    line_ids = {j: 7 * j + 1 for j in lines_used}
    sections = {sec_ids[k]: tuple(i for i in range(n) if sec[i] == k) for k in used}
    lines = {line_ids[j]: tuple(sec_ids[k] for k in used if line_of[k] == j) for j in lines_used}
    yc = {i: draw(st.integers(0, n_c - 1)) for i in range(n)}
    yt = {sec_ids[k]: draw(st.integers(0, n_t - 1)) for k in used}
    yl = {line_ids[j]: draw(st.integers(0, n_l - 1)) for j in lines_used}
    return HierarchicalStructure(sections, lines, yc, yt, yl)


@SETTINGS
@given(structures())
def test_canonicalize_idempotent(s):
    c = canonicalize(s)
    assert canonicalize(c) == c
    assert canonical_key(c) == canonical_key(s)


@SETTINGS
@given(structures(), st.integers(0, 2**32 - 1))
def test_score_label_invariant_and_signed(s, seed):
    rng = np.random.default_rng(seed)
    v = tiny_vocab()
    n = len(s.component_class)
    inst = make_instance(v, rng.dirichlet(np.ones(3), size=n), g_conn=rng.uniform(size=(n, n)),
                         g_rel=rng.uniform(size=(n, n, 2)))
    rb, m = _tiny_rb_model()
    a = score(s, inst, rb, m, RunConfig())
    b = score(canonicalize(s), inst, rb, m, RunConfig())
    assert a == b
    assert a.e_node <= 0 and a.e_edge <= 0 and a.e_struct <= 0
    assert a.e_norm >= 0 and a.e_reg >= 0


def _tiny_rb_model():
    v = tiny_vocab()
    rb = Rulebook(v, {0: SectionRule(frozenset({0, 1}), frozenset({2})),
                      1: SectionRule(frozenset({2}))},
                  {0: LineRule({0: 1}), 1: LineRule({1: 2})})
    recs = [RegistryRecord("A", ((0, ((0, (0, 1)), (1, (2,)))),)),
            RegistryRecord("B", ((1, ((1, (2,)), (1, (2, 2)))),))]
    return rb, fit_plausibility(recs, v)


@SETTINGS
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_fuse_probs_is_distribution(k, seed, beta):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    out = fuse_probs(p, q, beta)
    assert np.all(out >= 0) and abs(out.sum() - 1) <= 1e-9
    assert np.argmax(fuse_probs(p, p, beta)) == np.argmax(p)


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9))
def test_e_node_monotone(seed, bump):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(3), size=3)
    v = tiny_vocab()
    s = HierarchicalStructure.from_assignment([0, 0, 1], [0, 0], [0, 1, 2], [0, 0], [0])
    before = e_node(s, make_instance(v, probs), 1e-9)
    raised = probs.copy()
    target = raised[1, 1] + bump * (1 - raised[1, 1])
    rest = np.delete(raised[1], 1)
    rest = rest / rest.sum() * (1 - target) if rest.sum() > 0 else rest
    raised[1] = np.insert(rest, 1, target)
    assert e_node(s, make_instance(v, raised), 1e-9) >= before - 1e-15


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
def test_recall_monotone(seed, k1, k2):
    rng = np.random.default_rng(seed)
    g = rng.uniform(size=(3, 3, 4))
    truth = {(int(a), int(b), int(c)) for a, b, c in rng.integers(0, [3, 3, 4], size=(5, 3))}
    lo, hi = sorted((k1, k2))
    assert recall_at_k(g, truth, lo) <= recall_at_k(g, truth, hi)


@SETTINGS
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(structures(n, n_min=n),
                                                      structures(n, n_min=n))))
def test_section_score_bounds(pair):
    a, b = pair
    v = section_score(a, b)
    assert 0.0 <= v <= 1.0
    assert section_score(a, a) == 1.0
    assert section_score(canonicalize(a), b) == v


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_problem_valid(seed):
    inst, rb, m = random_problem(np.random.default_rng(seed))
    assert np.all((inst.g_conn >= 0) & (inst.g_conn <= 1))
    assert m.vocab == inst.vocab == rb.vocab
