"""Deterministic, stream-splittable sampling of G(n,p) and the proxy model.

All randomness comes from a counter-based construction: the 64-bit value of
any draw is ``finalize(key + GOLDEN * counter)`` where ``finalize`` is the
splitmix64 output mix, ``key`` is derived from (seed, stream, purpose) and
``counter`` encodes (sample index, within-sample offset).  This makes every
sample a pure function of (config, index) -- workers can generate disjoint
index ranges in any order and reproduce any single draw in isolation.

Edge bits are uniform 64-bit values thresholded against floor(p * 2^64); the
resulting Bernoulli bias is below 2^-64, negligible against Monte Carlo
error at any attainable sample count.

The proxy model replaces each triangle indicator with I_{ij} * I_{ijk} where
I_{ij} ~ Be(p) is owned by the two smallest labels of the triple and
I_{ijk} ~ Be(p^2), all independent.  Given the pair (i, j), the inner sum
over k is Binomial(n-1-j, p^2) (0-based labels), so one uniform per
(pair, sample) drives an exact inverse-CDF draw of the whole group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError
from .graphs import Graph, num_edges

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

# purpose tags keep independent uses of the same (seed, stream) decorrelated
PURPOSE_GNP_EDGE = 0
PURPOSE_PROXY_EDGE = 1
PURPOSE_PROXY_GROUP = 2
PURPOSE_COUPLING_V = 3
PURPOSE_COUPLING_VPRIME = 4


def _finalize(z: np.uint64) -> np.uint64:
    """splitmix64 output mix (bijective, full avalanche); scalar form.
    uint64 arithmetic wraps mod 2^64 by design."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> U64(30))) * _MIX1
        z = (z ^ (z >> U64(27))) * _MIX2
        return z ^ (z >> U64(31))


def derive_key(seed: int, stream: int, purpose: int = 0) -> np.uint64:
    """64-bit subkey for (seed, stream, purpose); each level is one
    splitmix64 step, so nearby seeds/streams give unrelated keys."""
    with np.errstate(over="ignore"):
        k = _finalize(U64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + _GOLDEN)
        k = _finalize(k + U64(stream & 0xFFFFFFFFFFFFFFFF) * _GOLDEN)
        return _finalize(k + U64(purpose) * _GOLDEN)


def _mix_counters_inplace(z: np.ndarray, key: np.uint64) -> np.ndarray:
    """splitmix64 of (key + GOLDEN * counter), destroying the counter array.

    In-place update chain; about 2x faster than the expression form on
    cache-sized batches, which is what the hot G(n,p) path feeds it.
    uint64 arithmetic wraps mod 2^64 by design.
    """
    with np.errstate(over="ignore"):
        z *= _GOLDEN
        z += key
        t = z >> U64(30)
        z ^= t
        z *= _MIX1
        np.right_shift(z, U64(27), out=t)
        z ^= t
        z *= _MIX2
        np.right_shift(z, U64(31), out=t)
        z ^= t
        return z


def uniform_bits(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    """Uniform uint64 words for an array of counters (non-destructive)."""
    return _mix_counters_inplace(counters.astype(np.uint64, copy=True), key)


def uniform_f64(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) with 53 random bits."""
    return (uniform_bits(key, counters) >> U64(11)) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class SamplerConfig:
    """Fully determines a sample sequence: (n, p, seed, stream)."""

    n: int
    p: float
    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        if self.n < 3:
            raise InputError(f"need n >= 3, got {self.n}")
        if not (0.0 < self.p < 1.0):
            raise InputError(f"p must be in (0,1), got {self.p}")
        if self.stream < 0:
            raise InputError("stream index must be >= 0")


def _threshold(p: float) -> np.uint64:
    return U64(min(int(p * 2.0**64), 2**64 - 1))


def gnp_edge_bits(cfg: SamplerConfig, start: int, count: int) -> np.ndarray:
    """Edge-indicator rows for samples start..start+count-1; shape
    (count, n(n-1)/2), dtype uint8.  Row k is a pure function of
    (cfg, start + k)."""
    if start < 0 or count < 0:
        raise InputError("start and count must be >= 0")
    ne = num_edges(cfg.n)
    key = derive_key(cfg.seed, cfg.stream, PURPOSE_GNP_EDGE)
    ctr = np.arange(start * ne, (start + count) * ne, dtype=np.uint64)
    bits = _mix_counters_inplace(ctr, key) < _threshold(cfg.p)
    return bits.view(np.uint8).reshape(count, ne)


def sample_gnp(cfg: SamplerConfig, index: int) -> Graph:
    """One G(n,p) draw; bit-for-bit reproducible from (cfg, index)."""
    if index < 0:
        raise InputError("index must be >= 0")
    row = gnp_edge_bits(cfg, index, 1)[0]
    bits = 0
    for r in np.flatnonzero(row):
        bits |= 1 << int(r)
    return Graph(cfg.n, bits)


# ---------------------------------------------------------------------------
# Proxy model of the Remark: Y = sum_{i<j<k} I_{ij} I_{ijk}
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _binom_cdf(m: int, q: float) -> np.ndarray:
    """CDF of Binomial(m, q) as a length-(m+1) array (exact comb-based pmf)."""
    pmf = [math.comb(m, j) * q**j * (1.0 - q) ** (m - j) for j in range(m + 1)]
    cdf = np.cumsum(np.array(pmf))
    cdf[-1] = 1.0  # guard so inverse-CDF lookups never land past m
    return cdf


def proxy_samples(cfg: SamplerConfig, start: int, count: int) -> np.ndarray:
    """Draws of the proxy statistic Y for samples start..start+count-1.

    Pair (i, j), i < j, owns the triples {i, j, k} with k > j, so its group
    is I_{ij} * Binomial(n-1-j, p^2); groups are independent across pairs.
    """
    if start < 0 or count < 0:
        raise InputError("start and count must be >= 0")
    n, p = cfg.n, cfg.p
    npairs = num_edges(n)
    edge_key = derive_key(cfg.seed, cfg.stream, PURPOSE_PROXY_EDGE)
    group_key = derive_key(cfg.seed, cfg.stream, PURPOSE_PROXY_GROUP)

    ctr = np.arange(start * npairs, (start + count) * npairs, dtype=np.uint64)
    edge_on = (
        _mix_counters_inplace(ctr.copy(), edge_key) < _threshold(p)
    ).reshape(count, npairs)
    u = (
        (_mix_counters_inplace(ctr, group_key) >> U64(11)) * (1.0 / (1 << 53))
    ).reshape(count, npairs)

    y = np.zeros(count, dtype=np.int64)
    # pairs with the same j share the group size n-1-j; rank(i,j) = j(j-1)/2+i
    for j in range(1, n):
        size = n - 1 - j
        if size == 0:
            continue
        lo = j * (j - 1) // 2
        cdf = _binom_cdf(size, p * p)
        counts = np.searchsorted(cdf, u[:, lo : lo + j], side="right")
        y += (counts * edge_on[:, lo : lo + j]).sum(axis=1)
    return y


def sample_proxy(cfg: SamplerConfig, index: int) -> int:
    """One draw of the proxy statistic Y."""
    if index < 0:
        raise InputError("index must be >= 0")
    return int(proxy_samples(cfg, index, 1)[0])
