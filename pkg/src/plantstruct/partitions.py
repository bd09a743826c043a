"""Set-partition enumeration via restricted growth strings."""
from __future__ import annotations

from functools import lru_cache
from typing import Iterator

__all__ = ["restricted_growth_strings", "stirling2", "bell"]


def restricted_growth_strings(n: int) -> Iterator[tuple[int, ...]]:
    """Yield every set partition of ``range(n)`` as a restricted growth
    string ``a`` (``a[0] = 0``, ``a[i] <= max(a[:i]) + 1``), in
    lexicographic order.  Block ids equal the order of first appearance,
    i.e. blocks are numbered by their smallest element.
    """
    if n == 0:
        yield ()
        return
    a = [0] * n
    # m[i] = max(a[:i+1])
    m = [0] * n
    while True:
        yield tuple(a)
        i = n - 1
        while i > 0 and a[i] == m[i - 1] + 1:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        m[i] = max(m[i - 1], a[i])
        for j in range(i + 1, n):
            a[j] = 0
            m[j] = m[i]


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """Number of partitions of an n-set into k non-empty blocks."""
    if n == k:
        return 1
    if n == 0 or k == 0:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def bell(n: int) -> int:
    return sum(stirling2(n, k) for k in range(n + 1))
