"""Canonical indexing of vertices, edges and triples of labelled graphs.

Everything downstream (exact enumeration, coupling simulation, pattern
checks) speaks in terms of the structures defined here:

* vertices are 0-based labels ``0..n-1``;
* edges are ascending pairs ``(i, j)``, ranked colexicographically, so a
  graph is a bitset of length ``n(n-1)/2`` (stored as a Python int --
  growing n extends ranks without remapping);
* triples are ascending ``(v1, v2, v3)``, also in colex order.

The centred triangle indicator of a triple v is ``X_v = [triangle at v] - p^3``
and the local neighbourhood of v is the set of triples sharing at least one
edge with v, i.e. sharing >= 2 vertices.  ``local_sum`` gives the sums of
centred indicators over those neighbourhoods, which is what the coupling
construction consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError

EdgeId = tuple[int, int]
TripleId = tuple[int, int, int]


def edge_rank(e: EdgeId, n: int) -> int:
    """Colex rank of edge (i, j), i < j: rank = j(j-1)/2 + i."""
    i, j = e
    if not (0 <= i < j < n):
        raise InputError(f"edge {e} invalid for n={n}")
    return j * (j - 1) // 2 + i


def edge_unrank(rank: int) -> EdgeId:
    """Inverse of edge_rank (independent of n)."""
    j = int((1 + math.isqrt(1 + 8 * rank)) // 2)
    while j * (j - 1) // 2 > rank:
        j -= 1
    i = rank - j * (j - 1) // 2
    return (i, j)


def triple_rank(v: TripleId) -> int:
    """Colex rank of an ascending triple; stable as n grows."""
    a, b, c = v
    return c * (c - 1) * (c - 2) // 6 + b * (b - 1) // 2 + a


def num_edges(n: int) -> int:
    return n * (n - 1) // 2


def num_triples(n: int) -> int:
    return math.comb(n, 3)


def validate_triple(v: TripleId, n: int) -> None:
    if len(v) != 3 or not (0 <= v[0] < v[1] < v[2] < n):
        raise InputError(f"triple {v} must be strictly ascending in [0, {n})")


def all_triples(n: int) -> list[TripleId]:
    """All ascending triples in colex order (matches triple_rank)."""
    return sorted(combinations(range(n), 3), key=triple_rank)


def triple_edges(v: TripleId) -> list[EdgeId]:
    a, b, c = v
    return [(a, b), (a, c), (b, c)]


@dataclass(frozen=True)
class Graph:
    """Immutable labelled graph: vertex count plus packed edge-indicator bitset.

    ``edges`` has bit ``edge_rank((i,j))`` set iff the edge is present.
    """

    n: int
    edges: int

    def __post_init__(self) -> None:
        if self.n < 3:
            raise InputError(f"need n >= 3, got {self.n}")
        if self.edges < 0 or self.edges >> num_edges(self.n):
            raise InputError("edge bits set beyond n(n-1)/2")

    @classmethod
    def from_edge_list(cls, n: int, edge_list: Iterable[EdgeId]) -> "Graph":
        bits = 0
        for i, j in edge_list:
            if i == j:
                raise InputError(f"self-loop ({i},{j})")
            if i > j:
                i, j = j, i
            bits |= 1 << edge_rank((i, j), n)
        return cls(n, bits)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n, 0)

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, (1 << num_edges(n)) - 1)

    def has_edge(self, i: int, j: int) -> bool:
        if i > j:
            i, j = j, i
        return bool(self.edges >> edge_rank((i, j), self.n) & 1)

    def edge_count(self) -> int:
        return self.edges.bit_count()

    def edge_list(self) -> list[EdgeId]:
        return [edge_unrank(r) for r in range(num_edges(self.n)) if self.edges >> r & 1]

    def adjacency_rows(self) -> list[int]:
        """Row i as an int bitmask over neighbour labels."""
        rows = [0] * self.n
        for i, j in self.edge_list():
            rows[i] |= 1 << j
            rows[j] |= 1 << i
        return rows


def triangle_count(g: Graph) -> int:
    """Exact number of triples whose three induced edges are all present.

    Counts common neighbours over present edges; each triangle is hit once
    per edge, hence the division by 3.
    """
    rows = g.adjacency_rows()
    total = 0
    for i, j in g.edge_list():
        total += (rows[i] & rows[j]).bit_count()
    return total // 3


def _check_p(p: float) -> None:
    if not (0.0 < p < 1.0):
        raise InputError(f"p must be in (0,1), got {p}")


def has_triangle(g: Graph, v: TripleId) -> bool:
    validate_triple(v, g.n)
    mask = 0
    for e in triple_edges(v):
        mask |= 1 << edge_rank(e, g.n)
    return (g.edges & mask) == mask


def centered_indicator(g: Graph, p: float, v: TripleId) -> float:
    """X_v = I[triangle at v] - p^3.

    Both branch values are exact in binary64 for the products of up to four
    indicators taken downstream.
    """
    _check_p(p)
    return (1.0 - p**3) if has_triangle(g, v) else -(p**3)


def neighborhood(
    v: TripleId, n: int, w_opt: Optional[TripleId] = None
) -> set[TripleId]:
    """Triples sharing >= 2 vertices with v (hence >= 1 edge); union with
    the neighbourhood of w when w_opt is given.

    Includes v itself, so the size is exactly 3(n-3)+1.
    """
    validate_triple(v, n)
    out = {u for u in combinations(range(n), 3) if len(set(u) & set(v)) >= 2}
    if w_opt is not None:
        validate_triple(w_opt, n)
        if w_opt not in out:
            raise InputError(f"{w_opt} is not in the neighborhood of {v}")
        out |= {u for u in combinations(range(n), 3) if len(set(u) & set(w_opt)) >= 2}
    return out


def local_sum(
    g: Graph, p: float, v: TripleId, w_opt: Optional[TripleId] = None
) -> float:
    """Y_v (or Y_{v,w}): sum of centred indicators over the neighbourhood."""
    return float(
        math.fsum(centered_indicator(g, p, u) for u in sorted(neighborhood(v, g.n, w_opt)))
    )


def edge_union_size(triples: Sequence[TripleId]) -> int:
    """Number of distinct edges induced by a list of triples."""
    if not triples:
        raise InputError("need at least one triple")
    edges: set[EdgeId] = set()
    for v in triples:
        edges.update(triple_edges(v))
    return len(edges)


def w_statistic(g: Graph, p: float, sigma: float) -> float:
    """W = (T - C(n,3) p^3) / sigma, the standardised triangle count."""
    _check_p(p)
    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    return (triangle_count(g) - num_triples(g.n) * p**3) / sigma


# ---------------------------------------------------------------------------
# Serialization (CLI fixture format): first line "n", then one "i j" per line.
# ---------------------------------------------------------------------------


def parse_graph_text(text: str) -> Graph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InputError("empty graph file")
    n = int(lines[0])
    edge_list = []
    for ln in lines[1:]:
        i, j = (int(tok) for tok in ln.split())
        edge_list.append((i, j))
    return Graph.from_edge_list(n, edge_list)


def format_graph_text(g: Graph) -> str:
    lines = [str(g.n)]
    lines.extend(f"{i} {j}" for i, j in g.edge_list())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Vectorised triple machinery shared by the oracle and the coupling simulator.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TripleBasis:
    """Precomputed index structures for all triples of an n-vertex graph.

    Arrays are aligned with the colex order of all_triples(n).  The
    neighbourhood sums are evaluated through edge cofactors rather than a
    dense triple-by-triple matrix:

        S_e  = sum_{u >= e} X_u          (X @ e2t)
        Y_v  = sum_{e in v} S_e - 2 X_v

    (the three per-edge families partition nu_v minus v, each containing v
    itself).  For w in nu_v with shared edge {a,b}, v = {a,b,c}, w = {a,b,d},
    the neighbourhood intersection is exactly the {a,b} family plus the two
    bridging triples {a,c,d}, {b,c,d}, so

        Y_{v,w} = Y_v + Y_w - S_{ab} - X_{acd} - X_{bcd}.

    Both identities keep the batched paths at O(n_tri * n_edges) memory.
    """

    n: int
    triples: tuple[TripleId, ...]
    edge_ranks: np.ndarray    # (n_tri, 3) int64
    e2t: np.ndarray           # (n_tri, n_edges) float64 0/1, triple >= edge
    nu_indices: np.ndarray    # (n_tri, 3(n-3)+1) int64, sorted neighbourhoods
    pair_v: np.ndarray        # (n_pair,) int64; pairs flattened v-major
    pair_w: np.ndarray        # (n_pair,) int64
    pair_shared: np.ndarray   # (n_pair,) int64 shared-edge rank, -1 if w == v
    pair_u1: np.ndarray       # (n_pair,) int64 bridging triple index, -1 if w == v
    pair_u2: np.ndarray       # (n_pair,) int64

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_v)

    @property
    def nu_size(self) -> int:
        return 3 * (self.n - 3) + 1

    def triangle_bits(self, edge_bits: np.ndarray) -> np.ndarray:
        """Map edge-indicator rows (m, n_edges) to triangle-indicator rows
        (m, n_tri); uint8 output."""
        e = edge_bits
        r = self.edge_ranks
        return (e[:, r[:, 0]] & e[:, r[:, 1]] & e[:, r[:, 2]]).astype(np.uint8)

    def x_matrix(self, tri_bits: np.ndarray, p: float) -> np.ndarray:
        """Centred indicators X for triangle-bit rows."""
        return tri_bits.astype(np.float64) - p**3

    def y_matrix(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(S, Y): edge cofactor sums and neighbourhood sums, rows = graphs."""
        s = x @ self.e2t
        r = self.edge_ranks
        y = s[:, r[:, 0]] + s[:, r[:, 1]] + s[:, r[:, 2]] - 2.0 * x
        return s, y

    def ypair_columns(
        self, x: np.ndarray, s: np.ndarray, y: np.ndarray, pair_idx: np.ndarray
    ) -> np.ndarray:
        """Y_{v,w} for the selected pair indices (vectorised gathers)."""
        pv = self.pair_v[pair_idx]
        pw = self.pair_w[pair_idx]
        same = pv == pw
        shared = np.where(same, 0, self.pair_shared[pair_idx])
        u1 = np.where(same, 0, self.pair_u1[pair_idx])
        u2 = np.where(same, 0, self.pair_u2[pair_idx])
        corr = np.where(same[None, :], y[:, pv], s[:, shared] + x[:, u1] + x[:, u2])
        return y[:, pv] + y[:, pw] - corr


@lru_cache(maxsize=4)
def triple_basis(n: int) -> TripleBasis:
    triples = tuple(all_triples(n))
    index = {v: k for k, v in enumerate(triples)}
    n_tri = len(triples)

    edge_ranks = np.array(
        [[edge_rank(e, n) for e in triple_edges(v)] for v in triples], dtype=np.int64
    )
    e2t = np.zeros((n_tri, num_edges(n)), dtype=np.float64)
    for k in range(n_tri):
        e2t[k, edge_ranks[k]] = 1.0

    nu_lists = []
    for v in triples:
        nu_lists.append(sorted(neighborhood(v, n), key=triple_rank))
    nu_indices = np.array(
        [[index[u] for u in lst] for lst in nu_lists], dtype=np.int64
    )

    pv, pw, shared, u1s, u2s = [], [], [], [], []
    for k, v in enumerate(triples):
        for w in nu_lists[k]:
            pv.append(k)
            pw.append(index[w])
            if w == v:
                shared.append(-1)
                u1s.append(-1)
                u2s.append(-1)
            else:
                a, b = sorted(set(v) & set(w))
                (c,) = set(v) - {a, b}
                (d,) = set(w) - {a, b}
                shared.append(edge_rank((a, b), n))
                u1s.append(index[tuple(sorted((a, c, d)))])
                u2s.append(index[tuple(sorted((b, c, d)))])

    return TripleBasis(
        n=n,
        triples=triples,
        edge_ranks=edge_ranks,
        e2t=e2t,
        nu_indices=nu_indices,
        pair_v=np.array(pv, dtype=np.int64),
        pair_w=np.array(pw, dtype=np.int64),
        pair_shared=np.array(shared, dtype=np.int64),
        pair_u1=np.array(u1s, dtype=np.int64),
        pair_u2=np.array(u2s, dtype=np.int64),
    )


@lru_cache(maxsize=8)
def _scatter_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    # colex edge rank (i<j) = j(j-1)/2 + i enumerates the strict lower
    # triangle (j, i) in row-major order, i.e. np.tril_indices order
    return np.tril_indices(n, -1)


def batch_triangle_counts(edge_bits: np.ndarray, n: int) -> np.ndarray:
    """Triangle counts for a batch of graphs given as edge-bit rows.

    Uses one batched float32 matmul: T = sum(A .* A^2) / 6.  Entries of A@A
    are common-neighbour counts <= n < 2^24, so float32 is exact; the final
    reduction runs in float64.
    """
    m = edge_bits.shape[0]
    rows, cols = _scatter_indices(n)
    a = np.zeros((m, n, n), dtype=np.float32)
    a[:, rows, cols] = edge_bits
    a += a.transpose(0, 2, 1)
    common = a @ a  # batched sgemm; entries are common-neighbour counts
    t6 = np.einsum("bij,bij->b", common, a, dtype=np.float64)
    return np.rint(t6 / 6.0).astype(np.int64)
