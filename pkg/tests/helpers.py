"""Independent enumeration of every hierarchical structure on tiny instances."""
from __future__ import annotations

import itertools
import math

import numpy as np

from plantstruct.model import HierarchicalStructure


def set_partitions(items):
    """All partitions of ``items`` as lists of blocks (recursive insertion)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for b in range(len(part)):
            yield part[:b] + [[first] + part[b]] + part[b + 1:]


def all_structures(n, n_c, n_t, n_l):
    for sec_blocks in set_partitions(range(n)):
        sections = {k: tuple(sorted(b)) for k, b in enumerate(sec_blocks)}
        for line_blocks in set_partitions(range(len(sections))):
            lines = {j: tuple(sorted(b)) for j, b in enumerate(line_blocks)}
            for yc in itertools.product(range(n_c), repeat=n):
                for yt in itertools.product(range(n_t), repeat=len(sections)):
                    for yl in itertools.product(range(n_l), repeat=len(lines)):
                        yield HierarchicalStructure(sections, lines, dict(enumerate(yc)),
                                                    dict(enumerate(yt)), dict(enumerate(yl)))


def permutation_oracle(codes, inst, factor):
    """Best partial one-to-one map of codes onto detections, by enumeration.

    Every code picks a detection or nothing; non-injective picks and pairs
    beyond the cutoff are discarded.  Ranked by pair count, then total
    distance; the first candidate in enumeration order wins ties.
    """
    cutoff = factor * float(np.median([d.diagonal for d in inst.detections]))
    dist = [[math.hypot(c.x - d.centroid[0], c.y - d.centroid[1]) for d in inst.detections]
            for c in codes]
    best = None
    for pick in itertools.product([*range(inst.n), None], repeat=len(codes)):
        chosen = [j for j in pick if j is not None]
        if len(set(chosen)) != len(chosen):
            continue
        pairs = [(i, j) for i, j in enumerate(pick) if j is not None]
        if any(dist[i][j] > cutoff for i, j in pairs):
            continue
        rank = (-len(pairs), math.fsum(dist[i][j] for i, j in pairs))
        if best is None or rank < best[0]:
            best = (rank, pairs)
    return best[1]
