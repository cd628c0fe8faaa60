from __future__ import annotations

import math
from itertools import product


def proxy_brute_force_pmf(n: int, p: float) -> dict[int, float]:
    """Exact law of the literal proxy statistic by enumerating every
    indicator state (pairs own the triples via their two smallest labels)."""
    pairs = [(i, j) for j in range(n) for i in range(j)]
    triples = [(i, j, k) for i, j, k in product(range(n), repeat=3) if i < j < k]
    pmf: dict[int, float] = {}
    q = p * p
    for pair_bits in product((0, 1), repeat=len(pairs)):
        w_pairs = math.prod(p if b else 1 - p for b in pair_bits)
        pair_on = dict(zip(pairs, pair_bits))
        for tri_bits in product((0, 1), repeat=len(triples)):
            w = w_pairs * math.prod(q if b else 1 - q for b in tri_bits)
            y = sum(pair_on[(i, j)] * b for (i, j, k), b in zip(triples, tri_bits))
            pmf[y] = pmf.get(y, 0.0) + w
    return pmf
