"""Search for the highest-scoring hierarchy.

``anneal`` runs seeded simulated annealing with restarts over canonical
structure keys; ``brute_force`` is the exact oracle for small instances.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .ingest import Rulebook, RunConfig, structure_to_document
from .model import ClassVocabularies, HierarchicalStructure, PlantInstance, StructureKey, \
    canonical_key, validate_structure
from .objective import EnergyBreakdown, PlausibilityModel, ScoreEvaluator, phi_line, phi_section
from .partitions import restricted_growth_strings, stirling2

__all__ = [
    "MOVE_WEIGHTS",
    "Move",
    "SearchReport",
    "InstanceTooLarge",
    "initial_solution",
    "propose_move",
    "apply_move",
    "anneal",
    "brute_force",
    "count_candidates",
    "optimize_lines",
]

logger = logging.getLogger(__name__)

MOVE_WEIGHTS = {
    "reassign-component": 0.30,
    "split-section": 0.10,
    "merge-sections": 0.10,
    "relabel-component": 0.15,
    "relabel-section": 0.10,
    "relabel-line": 0.05,
    "move-section-to-line": 0.10,
    "split-line": 0.05,
    "merge-lines": 0.05,
}
_KINDS = tuple(MOVE_WEIGHTS)
_WEIGHT_LIST = tuple(MOVE_WEIGHTS[k] for k in _KINDS)

# sub-stream tag mixed into the search seed
SEARCH_STREAM = 0x5EA2C4

BRUTE_FORCE_MAX_N = 7
BRUTE_FORCE_MAX_CANDIDATES = 10**8


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Move:
    kind: str
    payload: tuple


@dataclass(frozen=True)
class SearchReport:
    best: HierarchicalStructure
    best_score: EnergyBreakdown
    iterations: int
    restarts: int
    accepted_moves: int
    seed: int
    candidates: int | None = None
    evaluations: int = 0

    def to_document(self, vocab: ClassVocabularies) -> dict:
        stats = {
            "iterations": self.iterations,
            "restarts": self.restarts,
            "accepted_moves": self.accepted_moves,
            "seed": self.seed,
            "evaluations": self.evaluations,
        }
        if self.candidates is not None:
            stats["candidates"] = self.candidates
        return {
            "hierarchy": structure_to_document(self.best, vocab),
            "energy": self.best_score.as_dict(),
            "search": stats,
        }


# ---------------------------------------------------------------------------
# initial grouping
# ---------------------------------------------------------------------------

def initial_solution(inst: PlantInstance, rulebook: Rulebook | None = None,
                     threshold: float = 0.5) -> HierarchicalStructure:
    """Sections from connected components of the thresholded connectivity
    graph, argmax classes, everything in one line of class 0."""
    n = inst.n
    if n < 1:
        raise ValueError("need at least one component")
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    ii, jj = np.nonzero(inst.g_conn >= threshold)
    for i, j in zip(ii.tolist(), jj.tolist()):
        if i != j:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots: dict[int, int] = {}
    section_of = []
    for i in range(n):
        section_of.append(roots.setdefault(find(i), len(roots)))
    yc = [int(np.argmax(d.probs)) for d in inst.detections]
    members: list[list[int]] = [[] for _ in roots]
    for i, k in enumerate(section_of):
        members[k].append(i)
    yt = []
    for m in members:
        if len(m) < 2:
            yt.append(0)
            continue
        idx = np.array(m)
        block = inst.g_rel[np.ix_(idx, idx)]
        off = ~np.eye(len(m), dtype=bool)
        yt.append(int(np.argmax(block[off].mean(axis=0))))
    return HierarchicalStructure.from_assignment(section_of, [0] * len(members), yc, yt, [0])


# ---------------------------------------------------------------------------
# moves
# ---------------------------------------------------------------------------

def _canon(section_of, sec_line: dict, yc, yt: dict, yl: dict) -> StructureKey:
    """Canonical key from loose ids; emptied sections and lines vanish."""
    sec_new: dict[int, int] = {}
    so = []
    for s in section_of:
        if s not in sec_new:
            sec_new[s] = len(sec_new)
        so.append(sec_new[s])
    line_new: dict[int, int] = {}
    lo = []
    yt_out = []
    for s in sec_new:  # insertion order == canonical order
        j = sec_line[s]
        if j not in line_new:
            line_new[j] = len(line_new)
        lo.append(line_new[j])
        yt_out.append(yt[s])
    return tuple(so), tuple(lo), tuple(yc), tuple(yt_out), tuple(yl[j] for j in line_new)


def _randint(size: int, rng) -> int:
    """Uniform integer in ``[0, size)`` from one double; avoids the
    per-call overhead of ``Generator.integers`` in the hot loop."""
    return min(int(rng.random() * size), size - 1)


def _random_proper_subset(items: list[int], rng) -> tuple[int, ...]:
    """Uniform non-empty proper subset of ``items`` (len >= 2)."""
    while True:
        mask = rng.random(len(items)) < 0.5
        if 0 < mask.sum() < len(items):
            return tuple(x for x, b in zip(items, mask) if b)


def _applicable(key: StructureKey, sizes) -> tuple[bool, ...]:
    section_of, line_of, yc, yt, yl = key
    n_c, n_t, n_l = sizes
    k, m = len(yt), len(yl)
    return (
        k >= 2,                  # reassign-component
        len(section_of) > k,     # split-section
        k >= 2,                  # merge-sections
        n_c >= 2,                # relabel-component
        n_t >= 2,                # relabel-section
        n_l >= 2,                # relabel-line
        m >= 2,                  # move-section-to-line
        k > m,                   # split-line
        m >= 2,                  # merge-lines
    )


def _other(current: int, size: int, rng) -> int:
    v = _randint(size - 1, rng)
    return v + 1 if v >= current else v


def _pair(size: int, rng) -> tuple[int, int]:
    a = _randint(size, rng)
    b = _other(a, size, rng)
    return min(a, b), max(a, b)


def _pick_kind(ok, rng) -> str:
    total = sum(w for w, flag in zip(_WEIGHT_LIST, ok) if flag)
    u = rng.random() * total
    last = None
    for kind, w, flag in zip(_KINDS, _WEIGHT_LIST, ok):
        if flag:
            last = kind
            u -= w
            if u < 0:
                return kind
    return last


def _propose(key: StructureKey, sizes, rng) -> Move | None:
    ok = _applicable(key, sizes)
    if not any(ok):
        return None
    kind = _pick_kind(ok, rng)
    section_of, line_of, yc, yt, yl = key
    n = len(section_of)
    k, m = len(yt), len(yl)
    if kind == "reassign-component":
        i = _randint(n, rng)
        return Move(kind, (i, _other(section_of[i], k, rng)))
    if kind == "split-section":
        counts = [0] * k
        for x in section_of:
            counts[x] += 1
        choices = [t for t in range(k) if counts[t] >= 2]
        sec = choices[_randint(len(choices), rng)]
        members = [i for i in range(n) if section_of[i] == sec]
        return Move(kind, (sec, _random_proper_subset(members, rng)))
    if kind == "merge-sections":
        return Move(kind, _pair(k, rng))
    if kind == "relabel-component":
        i = _randint(n, rng)
        return Move(kind, (i, _other(yc[i], sizes[0], rng)))
    if kind == "relabel-section":
        sec = _randint(k, rng)
        return Move(kind, (sec, _other(yt[sec], sizes[1], rng)))
    if kind == "relabel-line":
        j = _randint(m, rng)
        return Move(kind, (j, _other(yl[j], sizes[2], rng)))
    if kind == "move-section-to-line":
        sec = _randint(k, rng)
        return Move(kind, (sec, _other(line_of[sec], m, rng)))
    if kind == "split-line":
        counts = [0] * m
        for x in line_of:
            counts[x] += 1
        choices = [j for j in range(m) if counts[j] >= 2]
        j = choices[_randint(len(choices), rng)]
        secs = [t for t in range(k) if line_of[t] == j]
        return Move(kind, (j, _random_proper_subset(secs, rng)))
    return Move(kind, _pair(m, rng))  # merge-lines


def _sizes(inst: PlantInstance) -> tuple[int, int, int]:
    v = inst.vocab
    return v.n_components, v.n_sections, v.n_lines


def propose_move(s: HierarchicalStructure, inst: PlantInstance, rng) -> Move | None:
    """Sample a move kind by :data:`MOVE_WEIGHTS` among the kinds applicable
    to ``s``, then a uniform payload.  ``None`` when nothing applies (every
    vocabulary has one class and the structure is a single component)."""
    return _propose(canonical_key(s), _sizes(inst), rng)


def _apply(key: StructureKey, move: Move) -> StructureKey:
    section_of, line_of, yc, yt, yl = key
    so = list(section_of)
    sec_line = dict(enumerate(line_of))
    ytd = dict(enumerate(yt))
    yld = dict(enumerate(yl))
    ycl = list(yc)
    kind, p = move.kind, move.payload
    if kind == "reassign-component":
        so[p[0]] = p[1]
    elif kind == "split-section":
        s, moved = p
        new = len(yt)
        for i in moved:
            so[i] = new
        sec_line[new] = sec_line[s]
        ytd[new] = ytd[s]
    elif kind == "merge-sections":
        a, b = p
        so = [a if x == b else x for x in so]
    elif kind == "relabel-component":
        ycl[p[0]] = p[1]
    elif kind == "relabel-section":
        ytd[p[0]] = p[1]
    elif kind == "relabel-line":
        yld[p[0]] = p[1]
    elif kind == "move-section-to-line":
        sec_line[p[0]] = p[1]
    elif kind == "split-line":
        j, moved = p
        new = len(yl)
        for s in moved:
            sec_line[s] = new
        yld[new] = yld[j]
    elif kind == "merge-lines":
        a, b = p
        sec_line = {s: (a if j == b else j) for s, j in sec_line.items()}
    else:
        raise ValueError(f"unknown move kind {kind!r}")
    return _canon(so, sec_line, ycl, ytd, yld)


def apply_move(s: HierarchicalStructure, move: Move) -> HierarchicalStructure:
    """Apply ``move`` to the canonical form of ``s``.  Groups left empty are
    deleted, so the result is always a valid structure."""
    return HierarchicalStructure.from_key(_apply(canonical_key(s), move))


# ---------------------------------------------------------------------------
# exact line assignment for fixed sections
# ---------------------------------------------------------------------------

LINE_SEARCH_MAX_CANDIDATES = 20000


def line_candidate_count(k: int, n_l: int) -> int:
    return sum(stirling2(k, m) * n_l ** m for m in range(1, k + 1))


def optimize_lines(key: StructureKey, ev: ScoreEvaluator, cache: dict | None = None,
                   max_candidates: int = LINE_SEARCH_MAX_CANDIDATES) -> StructureKey:
    """Best regrouping of the sections of ``key`` into typed lines.

    Sections and all classes below line level are kept.  Every partition of
    the sections into lines is tried with every line-class vector; ``key``
    is returned unchanged when that exceeds ``max_candidates`` or nothing
    scores strictly better.
    """
    section_of, _, yc, yt, _ = key
    n_l = ev.inst.vocab.n_lines
    k = len(yt)
    if line_candidate_count(k, n_l) > max_candidates:
        return key
    cache = {} if cache is None else cache
    lc = cache.get(yt)
    if lc is None:
        lc = cache[yt] = _LineCandidates(yt, n_l, ev.model, ev.rulebook, ev.config,
                                          cache.setdefault("lines", {}))
    members: list[list[int]] = [[] for _ in range(k)]
    for i, s in enumerate(section_of):
        members[s].append(i)
    phi_t = sum(ev._section(yt[s], tuple(sorted(yc[i] for i in members[s])))[1]
                for s in range(k)) / k
    cfg = ev.config
    vals = lc.add + cfg.lambdas[3] * np.log(np.maximum(0.5 * phi_t + 0.5 * lc.phi, cfg.epsilon))
    top = float(vals.max())
    tol = 1e-9 * max(1.0, abs(top))
    best_key, best_total = key, ev.total(key)
    for c in np.flatnonzero(vals >= top - tol)[:64]:
        line_rgs, yl = lc.key(int(c))
        cand = (section_of, tuple(line_rgs), yc, yt, tuple(yl))
        total = ev.total(cand)
        if _better(total, cand, best_total, best_key):
            best_key, best_total = cand, total
    return best_key


# ---------------------------------------------------------------------------
# simulated annealing
# ---------------------------------------------------------------------------

def _better(total: float, key: StructureKey, best_total: float, best_key: StructureKey) -> bool:
    return total > best_total or (total == best_total and key < best_key)


def anneal(inst: PlantInstance, rulebook: Rulebook, model: PlausibilityModel, config: RunConfig,
           threshold: float = 0.5, evaluator: ScoreEvaluator | None = None) -> SearchReport:
    """Maximize the objective by Metropolis search with restarts.

    Every restart starts from :func:`initial_solution` (lines regrouped by
    :func:`optimize_lines`) with its own generator seeded by
    ``(config.seed, restart)``.  Each restart's best is line-polished the
    same way, and the best canonical structure over all restarts is
    returned (ties go to the smaller canonical key).
    """
    ev = evaluator or ScoreEvaluator(inst, rulebook, model, config)
    sizes = _sizes(inst)
    sched = config.annealing
    line_cache: dict = {}
    start = canonical_key(initial_solution(inst, rulebook, threshold))
    start = optimize_lines(start, ev, line_cache)
    start_total = ev.total(start)
    best_key, best_total = start, start_total
    iterations = accepted = 0
    for r in range(sched.restarts):
        rng = np.random.default_rng([config.seed, SEARCH_STREAM, r])
        cur, cur_total = start, start_total
        r_key, r_total = cur, cur_total
        temp = sched.t0
        for _ in range(sched.iters):
            move = _propose(cur, sizes, rng)
            if move is None:
                break
            iterations += 1
            nxt = _apply(cur, move)
            nxt_total = ev.total(nxt)
            delta = nxt_total - cur_total
            if delta >= 0 or (temp > 0 and rng.random() < math.exp(delta / temp)):
                cur, cur_total = nxt, nxt_total
                accepted += 1
                if _better(cur_total, cur, r_total, r_key):
                    r_key, r_total = cur, cur_total
            temp *= sched.cooling
        polished = optimize_lines(r_key, ev, line_cache)
        if polished != r_key:
            r_key, r_total = polished, ev.total(polished)
        if _better(r_total, r_key, best_total, best_key):
            best_key, best_total = r_key, r_total
        logger.debug("restart %d: best %.6f", r, r_total)
    return SearchReport(HierarchicalStructure.from_key(best_key), ev.breakdown(best_key),
                        iterations, sched.restarts, accepted, config.seed,
                        evaluations=ev.evaluations)


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

def count_candidates(n: int, n_c: int, n_t: int, n_l: int) -> int:
    """Number of (sections, lines, classes) triplets over n components."""
    total = 0
    for k in range(1, n + 1):
        lines = sum(stirling2(k, m) * n_l ** m for m in range(1, k + 1))
        total += stirling2(n, k) * n_t ** k * lines
    return total * n_c ** n


class _LineCandidates:
    """All (line partition, line classes) for a fixed section-class vector,
    with their line-level contributions.

    Candidates are ordered by partition (restricted growth string order),
    then by line-class vector in lexicographic order.  ``memo`` caches the
    per-line (compliance, log plausibility) across instances of this class.
    """

    def __init__(self, yt: tuple[int, ...], n_l: int, model, rulebook, config,
                 memo: dict | None = None):
        l3 = config.lambdas[2]
        l5 = config.lambdas[4]
        a2 = config.alphas[1]
        memo = {} if memo is None else memo
        k = len(yt)
        self.n_l = n_l
        self.partitions: list[tuple[int, ...]] = []
        offsets, rgs_ids, phis, adds = [], [], [], []
        count = 0
        for rgs_id, rgs in enumerate(restricted_growth_strings(k)):
            m = max(rgs) + 1
            phi = np.zeros((n_l,) * m)
            ll = np.zeros((n_l,) * m)
            for j in range(m):
                ms = tuple(sorted(yt[t] for t in range(k) if rgs[t] == j))
                row = memo.get(ms)
                if row is None:
                    row = memo[ms] = (
                        np.array([phi_line(l, ms, rulebook) for l in range(n_l)]),
                        np.array([model.log_line(l, ms) for l in range(n_l)]),
                    )
                shape = [1] * m
                shape[j] = n_l
                phi = phi + row[0].reshape(shape)
                ll = ll + row[1].reshape(shape)
            self.partitions.append(tuple(rgs))
            offsets.append(count)
            size = n_l ** m
            count += size
            rgs_ids.append(np.full(size, rgs_id))
            phis.append((phi / m).reshape(-1))
            adds.append((l3 * (ll / m) - l5 * a2 * m).reshape(-1))
        self.offsets = np.array(offsets)
        self.rgs_id = np.concatenate(rgs_ids)
        self.phi = np.concatenate(phis)
        self.add = np.concatenate(adds)

    def __len__(self) -> int:
        return len(self.rgs_id)

    def key(self, c: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(line restricted growth string, line classes) of candidate ``c``."""
        r = int(self.rgs_id[c])
        rgs = self.partitions[r]
        m = max(rgs) + 1
        yl = np.unravel_index(int(c - self.offsets[r]), (self.n_l,) * m)
        return rgs, tuple(int(v) for v in yl)


def brute_force(inst: PlantInstance, rulebook: Rulebook, model: PlausibilityModel,
                config: RunConfig, max_candidates: int = BRUTE_FORCE_MAX_CANDIDATES,
                tie_pool: int = 256) -> SearchReport:
    """Exact maximizer by exhaustive enumeration.

    Every set partition of the components (restricted growth strings), every
    section-class vector, every partition of sections into lines with every
    line-class vector, and every component-class vector is scored.  The
    component-class vectors are scored as one array per (partition,
    section classes); since the regulation term couples them to the line
    side only through the mean section compliance, vectors sharing that
    mean are reduced to their best member before being crossed with the
    line candidates.  Near-ties of the array arithmetic are rescored with
    :class:`ScoreEvaluator`; remaining ties go to the smallest canonical key.
    """
    n = inst.n
    n_c, n_t, n_l = _sizes(inst)
    if n < 1:
        raise ValueError("need at least one component")
    if n > BRUTE_FORCE_MAX_N:
        raise InstanceTooLarge(f"N={n} exceeds the brute-force limit of {BRUTE_FORCE_MAX_N}")
    total_count = count_candidates(n, n_c, n_t, n_l)
    if total_count > max_candidates:
        raise InstanceTooLarge(f"{total_count} candidates exceed the limit of {max_candidates}")

    ev = ScoreEvaluator(inst, rulebook, model, config)
    l1, l2, l3, l4, l5 = config.lambdas
    a1, _, a3 = config.alphas
    eps = config.epsilon

    ycs = np.array(list(itertools.product(range(n_c), repeat=n)), dtype=np.int64)
    n_y = len(ycs)
    logp = np.log(np.maximum(inst.probs, eps))
    node = logp[np.arange(n)[None, :], ycs].sum(axis=1)
    order_idx = np.arange(n_y)
    powers = n_c ** np.arange(n)

    section_cache: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def section_arrays(members: tuple[int, ...]):
        hit = section_cache.get(members)
        if hit is not None:
            return hit
        sub = np.sort(ycs[:, list(members)], axis=1)
        codes = sub @ powers[: len(members)]
        uniq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
        logsec = np.empty((n_t, len(uniq)))
        phis = np.empty((n_t, len(uniq)))
        for u, row in enumerate(first):
            ms = tuple(int(c) for c in sub[row])
            for t in range(n_t):
                logsec[t, u] = model.log_section(t, ms)
                phis[t, u] = phi_section(t, ms, rulebook)
        out = (logsec[:, inv], phis[:, inv])
        section_cache[members] = out
        return out

    line_cache: dict[tuple[int, ...], _LineCandidates] = {}
    line_memo: dict = {}
    best_internal = -math.inf
    pool: list[tuple[float, StructureKey]] = []
    counted = 0

    for rgs in restricted_growth_strings(n):
        k = max(rgs) + 1
        members = [tuple(i for i in range(n) if rgs[i] == s) for s in range(k)]
        arrays = [section_arrays(m) for m in members]
        edges = [[ev._edge(m, t) for t in range(n_t)] for m in members]
        reg_part = a1 * k + a3 * sum(len(m) ** 2 for m in members)
        for yt in itertools.product(range(n_t), repeat=k):
            lc = line_cache.get(yt)
            if lc is None:
                lc = line_cache[yt] = _LineCandidates(yt, n_l, model, rulebook, config, line_memo)
            counted += n_y * len(lc)
            phi_mean = sum(arrays[s][1][yt[s]] for s in range(k)) / k
            sec_mean = sum(arrays[s][0][yt[s]] for s in range(k)) / k
            add_c = l1 * node + l3 * sec_mean
            const = l2 * sum(edges[s][yt[s]] for s in range(k)) - l5 * reg_part
            # best component-class vector per distinct mean compliance;
            # the first index among equals is the lexicographically smallest
            u_phi, inv = np.unique(phi_mean, return_inverse=True)
            order = np.lexsort((order_idx, -add_c, inv))
            heads = order[np.r_[True, inv[order][1:] != inv[order][:-1]]]
            best_c = add_c[heads]
            mix = 0.5 * u_phi[:, None] + 0.5 * lc.phi[None, :]
            totals = (const + best_c[:, None] + lc.add[None, :]
                      + l4 * np.log(np.maximum(mix, eps)))
            group_max = float(totals.max())
            tol = 1e-9 * max(1.0, abs(group_max), abs(best_internal))
            if group_max < best_internal - tol:
                continue
            if group_max > best_internal:
                best_internal = group_max
                pool = [p for p in pool if p[0] >= best_internal - tol]
            a_idx, c_idx = np.nonzero(totals >= best_internal - tol)
            sel = np.lexsort((c_idx, heads[a_idx], lc.rgs_id[c_idx]))[:tie_pool]
            for q in sel:
                a, c = int(a_idx[q]), int(c_idx[q])
                line_rgs, yl = lc.key(c)
                key = (tuple(rgs), tuple(line_rgs), tuple(int(v) for v in ycs[heads[a]]),
                       tuple(yt), tuple(yl))
                pool.append((float(totals[a, c]), key))
            if len(pool) > tie_pool:
                pool.sort(key=lambda p: p[1])
                pool = pool[:tie_pool]

    best_key = None
    best_total = -math.inf
    for _, key in pool:
        total = ev.total(key)
        if best_key is None or _better(total, key, best_total, best_key):
            best_key, best_total = key, total
    assert counted == total_count, (counted, total_count)
    return SearchReport(HierarchicalStructure.from_key(best_key), ev.breakdown(best_key),
                        iterations=0, restarts=0, accepted_moves=0, seed=config.seed,
                        candidates=counted, evaluations=ev.evaluations)
