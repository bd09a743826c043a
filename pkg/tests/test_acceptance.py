"""Acceptance suite: one PASS/FAIL line per criterion.

Budgets and tolerances are pinned here.  Run with ``pytest -s`` (or read
the captured report lines) to see the summary.
"""
from __future__ import annotations

import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from plantstruct.datasets import reference_model, reference_rulebook
from plantstruct.egrtr import forward, gradient_check, init_state, random_trace
from plantstruct.fusion import match_codes
from plantstruct.ingest import (LineRule, OcrCode, RegistryRecord, Rulebook, RunConfig,
                                SectionRule)
from plantstruct.model import Detection, HierarchicalStructure, PlantInstance
from plantstruct.objective import (e_edge, e_node, e_norm, e_reg, e_struct, fit_plausibility,
                                   phi_line, phi_section, score)
from plantstruct.optimizer import anneal, brute_force
from plantstruct.synth import random_problem, recall_at_k, run_bench

from conftest import F1, make_instance, tiny_vocab
from helpers import permutation_oracle

ORACLE_SEED = 2024
ORACLE_CASES = 100
ORACLE_CONFIG = RunConfig().with_annealing(iters=2000, restarts=4)
RECOVERY_CONFIG = RunConfig().with_annealing(iters=3000, restarts=2)
DEGRADE_CONFIG = RunConfig().with_annealing(iters=1000, restarts=2)
NOISE_LEVELS = (0.0, 0.1, 0.3, 1.0)
DEGRADE_TOL = 0.02
TRIVIAL_TOL = 1e-12
GRAD_TOL = 1e-4


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def hs(sections, lines, yc, yt, yl):
    return HierarchicalStructure(sections, lines, dict(enumerate(yc)), dict(enumerate(yt)),
                                 dict(enumerate(yl)))


def test_1_oracle_equivalence(report):
    rng = np.random.default_rng(ORACLE_SEED)
    t0 = time.perf_counter()
    hits = 0
    for _ in range(ORACLE_CASES):
        inst, rb, m = random_problem(rng)
        assert inst.n <= 5 and inst.vocab.n_components <= 4 and inst.vocab.n_sections <= 3
        found = anneal(inst, rb, m, ORACLE_CONFIG).best
        optimum = brute_force(inst, rb, m, ORACLE_CONFIG).best_score.total
        hits += score(found, inst, rb, m, ORACLE_CONFIG).total == optimum
    elapsed = time.perf_counter() - t0
    report(1, hits >= 95 and elapsed < 60.0,
           f"{hits}/{ORACLE_CASES} exact optima, {elapsed:.1f} s")


def test_2_zero_noise_recovery(report):
    model, rb = reference_model(), reference_rulebook()
    rows = run_bench(model, rb, RECOVERY_CONFIG, noise_levels=(0.0,), n_instances=50,
                     identifiable=True)
    exact = sum(r["exact"] for r in rows)
    acc = min(r["component_accuracy"] for r in rows)
    sec = min(r["section_score"] for r in rows)
    report(2, exact == 50 and acc == 1.0 and sec == 1.0,
           f"{exact}/50 exact, min component_accuracy {acc}, min section_score {sec}")


def test_3_graceful_degradation(report):
    model, rb = reference_model(), reference_rulebook()
    rows = run_bench(model, rb, DEGRADE_CONFIG, noise_levels=NOISE_LEVELS, n_instances=100)
    means = [float(np.mean([r["section_score"] for r in rows if r["noise"] == lv]))
             for lv in NOISE_LEVELS]
    ok = all(b <= a + DEGRADE_TOL for a, b in zip(means, means[1:]))
    report(3, ok, "mean section_score " + ", ".join(
        f"{lv}: {m:.4f}" for lv, m in zip(NOISE_LEVELS, means)))


def _trivial_cases():
    v = tiny_vocab()
    a, b, c = 0, 1, 2
    eps = 1e-9
    one = make_instance(v, np.eye(3))
    pair = hs({0: (0, 1)}, {0: (0,)}, [0, 1], [1], [0])
    half_node = make_instance(tiny_vocab(2), [[0.5, 0.5], [0.5, 0.5]])
    half_conn = make_instance(v, np.eye(3)[:2], g_conn=np.full((2, 2), 0.5))
    rb = Rulebook(v, {0: SectionRule(frozenset({a, b})), 1: SectionRule(frozenset({a}))},
                  {0: LineRule({0: 1}), 1: LineRule({1: 2})})
    vacuous = Rulebook(v, {}, {0: LineRule({})})
    compliant = Rulebook(v, {0: SectionRule(frozenset({a, b})), 1: SectionRule(frozenset({c}))},
                         {0: LineRule({0: 1}, frozenset({1}))})
    two_secs = hs({0: (0, 1), 1: (2,)}, {0: (0, 1)}, [a, b, c], [0, 1], [0])
    sizes_23 = hs({0: (0, 1), 1: (2, 3, 4)}, {0: (0, 1)}, [0] * 5, [0, 0], [0])
    singles = hs({i: (i,) for i in range(4)}, {0: (0, 1), 1: (2, 3)}, [0] * 4, [0] * 4, [0, 0])
    m = fit_plausibility([RegistryRecord("A", ((0, ((0, (a, b)), (1, (c,)))),))], v)
    four = make_instance(v, np.eye(3)[[0, 1, 2, 0]])
    s1 = hs({0: (0, 1), 1: (2, 3)}, {0: (0, 1)}, [a, b, c, a], [0, 1], [0])
    s2 = hs({0: (0, 2), 1: (1, 3)}, {0: (0, 1)}, [a, c, b, a], [0, 1], [0])
    norm_half = Rulebook(v, {}, {0: LineRule({1: 1})})
    norm_zero = Rulebook(v, {0: SectionRule(frozenset({c}))}, {0: LineRule({1: 1})})
    only_node = replace(RunConfig(), lambdas=(1.0, 0.0, 0.0, 0.0, 0.0))
    probe = make_instance(v, [[0.6, 0.3, 0.1], [0.2, 0.2, 0.6]], g_conn=np.full((2, 2), 0.4))
    bd = score(hs({0: (0, 1)}, {0: (0,)}, [a, c], [1], [0]), probe, rb, m, only_node)
    cancel = replace(RunConfig(), alphas=(0.0, 0.0, 0.0), lambdas=(1.0, 1.0, 2.5, 1.0, 1.0))
    bc = score(two_secs, one, compliant, m, cancel)
    return [
        ("e_node certain", e_node(hs({0: (0, 1, 2)}, {0: (0,)}, [0, 1, 2], [0], [0]), one, eps),
         0.0),
        ("e_node halves", e_node(hs({0: (0, 1)}, {0: (0,)}, [0, 1], [0], [0]), half_node, eps),
         2 * math.log(0.5)),
        ("e_node clamp", e_node(hs({0: (0,)}, {0: (0,)}, [1], [0], [0]),
                                make_instance(tiny_vocab(2), [[1.0, 0.0]]), eps), math.log(eps)),
        ("e_edge singletons", e_edge(hs({0: (0,), 1: (1,), 2: (2,)}, {0: (0, 1, 2)}, [0, 1, 2],
                                        [0, 0, 0], [0]), one, eps), 0.0),
        ("e_edge certain", e_edge(pair, make_instance(v, np.eye(3)[:2]), eps), 0.0),
        ("e_edge half", e_edge(pair, half_conn, eps), 2 * math.log(0.5)),
        ("phi_section full", phi_section(0, [a, b], rb), 1.0),
        ("phi_section half", phi_section(0, [a], rb), 0.5),
        ("phi_section extra", phi_section(1, [a, c], rb), 0.9),
        ("phi_line single", phi_line(0, [0], rb), 1.0),
        ("phi_line multiplicity", phi_line(1, [1], rb), 0.5),
        ("phi_line vacuous", phi_line(0, [], vacuous), 1.0),
        ("e_norm compliant", e_norm(two_secs, one, compliant, eps), 0.0),
        ("e_norm half", e_norm(hs({0: (0, 1, 2)}, {0: (0,)}, [a, b, c], [0], [0]), one,
                               norm_half, eps), math.log(2)),
        ("e_norm clamp", e_norm(hs({0: (0, 1)}, {0: (0,)}, [a, a], [0], [0]), one, norm_zero,
                                eps), -math.log(eps)),
        ("e_reg formula", e_reg(sizes_23, (1, 1, 1)), 16.0),
        ("e_reg zero", e_reg(sizes_23, (0, 0, 0)), 0.0),
        ("e_reg singletons", e_reg(singles, (0.3, 0.7, 1.0)), 0.3 * 4 + 0.7 * 2 + 4),
        ("e_struct composition", e_struct(s1, four, m), e_struct(s2, four, m)),
        ("score isolation", bd.total, bd.e_node),
        ("score cancellation", bc.total, 2.5 * bc.e_struct),
    ]


def test_4_energy_terms(report):
    cases = _trivial_cases()
    bad = [name for name, got, want in cases if not abs(got - want) <= TRIVIAL_TOL]
    report(4, not bad, f"{len(cases) - len(bad)}/{len(cases)} examples within {TRIVIAL_TOL}"
           + (f", failing: {bad}" if bad else ""))


def test_5_egrtr_shapes(report):
    t0 = time.perf_counter()
    runs, problems = 0, []
    for n in range(2, 9):
        for d in (4, 8, 16, 32):
            for L in range(1, 5):
                if n < L + 1:
                    continue
                for seed in range(3):
                    s = init_state(n, d, L, h=2, seed=seed)
                    t = forward(random_trace(n, d, L, seed=seed), s)
                    n_t = s["mlp_rel.W2"].shape[1]
                    ok = (t.g_rel.shape == (n, n, n_t) and t.g_conn.shape == (n, n)
                          and np.all((t.g_rel >= 0) & (t.g_rel <= 1))
                          and np.all((t.g_conn >= 0) & (t.g_conn <= 1))
                          and np.all((t.gates > 0) & (t.gates < 1))
                          and all(np.all(t.r_prime[l] == t.r_prime[l, 0, 0])
                                  for l in range(L + 1)))
                    runs += 1
                    if not ok:
                        problems.append((n, d, L, seed))
    elapsed = time.perf_counter() - t0
    report(5, not problems and elapsed < 30.0,
           f"{runs - len(problems)}/{runs} configurations, {elapsed:.1f} s"
           + (f", failing: {problems[:5]}" if problems else ""))


def test_6_gradient_check(report):
    s = init_state(3, 8, 2, seed=0)
    t = forward(random_trace(3, 8, 2, seed=100), s)
    errs = gradient_check(t.r_a, t.r_z, t.experts, s, step=1e-5)
    report(6, errs["max"] < GRAD_TOL, f"max relative error {errs['max']:.2e}")


def test_7_matching_oracle(report):
    rng = np.random.default_rng(7)
    vocab = tiny_vocab()
    agree = 0
    for _ in range(200):
        n, m = (int(x) for x in rng.integers(1, 7, size=2))
        dets = tuple(Detection(i, (x - 10.0, y - 10.0, 20.0, 20.0), np.full(3, 1 / 3))
                     for i, (x, y) in enumerate(rng.uniform(0, 60, (n, 2))))
        inst = PlantInstance(vocab, dets, np.zeros((n, n)), np.zeros((n, n, vocab.n_sections)))
        codes = [OcrCode(str(i), *rng.uniform(0, 60, size=2)) for i in range(m)]
        got = match_codes(codes, inst, 1.5)
        want = permutation_oracle(codes, inst, 1.5)
        cost = math.fsum(math.dist((codes[i].x, codes[i].y), inst.detections[j].centroid)
                         for i, j in want)
        agree += len(got.pairs) == len(want) and abs(got.total_distance - cost) <= 1e-9
    report(7, agree == 200, f"{agree}/200 fixtures match the enumeration minimum")


def _cli(*argv) -> bytes:
    out = subprocess.run([sys.executable, "-c", "import sys; from plantstruct.cli import main; "
                          "sys.exit(main(sys.argv[1:]))", *argv],
                         capture_output=True, check=True)
    return out.stdout


def test_8_determinism(report, tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text('{"annealing": {"iters": 400, "restarts": 1}}')
    commands = {
        "reconstruct": ["reconstruct", "--scene-graph", str(F1 / "scene_graph.json"),
                        "--equipment", str(F1 / "equipment.csv"), "--ocr", str(F1 / "ocr.json"),
                        "--config", str(F1 / "config.json")],
        "bench": ["bench", "--instances", "3", "--config", str(cfg)],
        "egrtr-demo": ["egrtr-demo", "--seed", "4"],
    }
    same = {name: _cli(*argv) == _cli(*argv) for name, argv in commands.items()}
    report(8, all(same.values()), ", ".join(f"{k}: {'identical' if v else 'differs'}"
                                            for k, v in same.items()))


def test_9_recall_monotone(report):
    rng = np.random.default_rng(9)
    ok = 0
    for _ in range(50):
        n, t = (int(x) for x in rng.integers(2, 6, size=2))
        g = rng.uniform(size=(n, n, t))
        flat = rng.choice(n * n * t, size=int(rng.integers(1, 8)), replace=False)
        truth = {tuple(int(v) for v in np.unravel_index(f, (n, n, t))) for f in flat}
        values = [recall_at_k(g, truth, k) for k in range(1, n * n * t + 1)]
        ok += all(a <= b for a, b in zip(values, values[1:])) and values[-1] == 1.0
    report(9, ok == 50, f"{ok}/50 tensors non-decreasing in K")

