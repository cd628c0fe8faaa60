"""Brute-force enumeration oracle for small G(n,p).

Every graph on n <= 7 vertices is visited with its exact probability
p^k (1-p)^(E-k); any expectation over G(n,p) becomes a finite weighted sum.
This is the ground truth against which closed forms, coupling identities
and Monte Carlo estimators are verified.

Weights are computed per edge-count class in log space (no underflow at
extreme p), and final reductions use exact compensated summation
(math.fsum), so accumulated error is O(eps) independent of the 2^E term
count.

The coupling quantities follow the construction used throughout the
toolkit: V uniform on triples, V' uniform on the neighbourhood nu_V,

    W  = sum_v X_v / sigma          G  = -C(n,3) X_V / sigma
    D  = -Y_V / sigma               D~ = -(3(n-3)+1) X_{V'} / sigma
    D' = -Y_{V,V'} / sigma          S  = C(n,3)(3(n-3)+1)/sigma^2 *
                                         (Var X if V'=V else Cov2)

and the inner conditional expectations in the r-terms are taken given the
full edge configuration (which upper-bounds the W-conditional variances).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CapacityError, InputError
from .graphs import Graph, TripleBasis, num_edges, triple_basis
from .moments import exact_moments, normal_cdf

MAX_ORACLE_N = 7

_FUNCTION_FAMILY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "1": lambda x: np.ones_like(x, dtype=np.complex128),
    "x": lambda x: x.astype(np.complex128),
    "x2": lambda x: (x * x).astype(np.complex128),
    "sin": lambda x: np.sin(x).astype(np.complex128),
}


def resolve_test_function(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Named test functions: '1', 'x', 'x2', 'sin', or 'exp:<t>' for e^{itx}."""
    if name in _FUNCTION_FAMILY:
        return _FUNCTION_FAMILY[name]
    if name.startswith("exp:"):
        t = float(name.split(":", 1)[1])
        return lambda x: np.exp(1j * t * x)
    raise InputError(f"unknown test function {name!r}")


def fsum_array(a: np.ndarray) -> float:
    """Compensated sum of a float array (exact rounding via math.fsum)."""
    return math.fsum(a.tolist())


def fsum_complex(a: np.ndarray) -> complex:
    return complex(math.fsum(a.real.tolist()), math.fsum(a.imag.tolist()))


def _check_capacity(n: int, limit: int = MAX_ORACLE_N) -> None:
    if n < 3:
        raise InputError(f"need n >= 3, got {n}")
    if n > limit:
        raise CapacityError(f"exact enumeration supports n <= {limit}, got {n}")


@dataclass(frozen=True)
class OracleArrays:
    """Per-n enumeration tables: all edge masks and triangle indicators."""

    n: int
    masks: np.ndarray     # (G,) uint32, G = 2^{n(n-1)/2}
    popcount: np.ndarray  # (G,) uint8
    tri_bits: np.ndarray  # (G, n_tri) uint8
    basis: TripleBasis


@lru_cache(maxsize=2)
def oracle_arrays(n: int) -> OracleArrays:
    _check_capacity(n)
    ne = num_edges(n)
    masks = np.arange(1 << ne, dtype=np.uint32)
    pop = np.bitwise_count(masks).astype(np.uint8)
    tb = triple_basis(n)
    r = tb.edge_ranks
    tri = np.empty((masks.size, tb.n_triples), dtype=np.uint8)
    for k in range(tb.n_triples):
        want = np.uint32((1 << r[k, 0]) | (1 << r[k, 1]) | (1 << r[k, 2]))
        tri[:, k] = (masks & want) == want
    return OracleArrays(n=n, masks=masks, popcount=pop, tri_bits=tri, basis=tb)


def graph_weights(n: int, p: float, popcount: np.ndarray) -> np.ndarray:
    """G(n,p) weight of each graph, computed per popcount class in log space."""
    if not (0.0 < p < 1.0):
        raise InputError(f"p must be in (0,1), got {p}")
    ne = num_edges(n)
    k = np.arange(ne + 1, dtype=np.float64)
    class_w = np.exp(k * math.log(p) + (ne - k) * math.log1p(-p))
    return class_w[popcount]


# ---------------------------------------------------------------------------
# Exact distribution of T and Kolmogorov distance of W
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactDistribution:
    n: int
    p: float
    atoms: tuple[tuple[int, float], ...]  # (t, prob), sorted by t, probs > 0

    def mean(self) -> float:
        return math.fsum(t * q for t, q in self.atoms)

    def var(self) -> float:
        m = self.mean()
        return math.fsum((t - m) ** 2 * q for t, q in self.atoms)

    def total_prob(self) -> float:
        return math.fsum(q for _, q in self.atoms)


def enumerate_distribution(n: int, p: float) -> ExactDistribution:
    """Exact law of the triangle count T under G(n,p)."""
    arr = oracle_arrays(n)
    w = graph_weights(n, p, arr.popcount)
    t_all = arr.tri_bits.sum(axis=1, dtype=np.int64)
    atoms = []
    for t in range(arr.basis.n_triples + 1):
        sel = w[t_all == t]
        if sel.size:
            q = fsum_array(sel)
            if q > 0.0:
                atoms.append((t, q))
    return ExactDistribution(n=n, p=p, atoms=tuple(atoms))


def exact_dk(n: int, p: float) -> float:
    """Exact Kolmogorov distance between the law of W = (T - ET)/sd(T) and
    the standard normal: for a discrete law the sup is attained at atoms,
    from the left or the right."""
    dist = enumerate_distribution(n, p)
    mom = exact_moments(n, p)
    ts = np.array([t for t, _ in dist.atoms], dtype=np.float64)
    qs = np.array([q for _, q in dist.atoms], dtype=np.float64)
    x = (ts - mom.mean_t) / mom.sigma
    cdf = np.cumsum(qs)
    phi = np.asarray(normal_cdf(x))
    left = np.concatenate(([0.0], cdf[:-1]))
    return float(np.max(np.maximum(np.abs(cdf - phi), np.abs(left - phi))))


# ---------------------------------------------------------------------------
# Generic exact expectation
# ---------------------------------------------------------------------------


def exact_expectation(
    n: int, p: float, functional: Callable[[Graph], complex]
) -> complex:
    """Exact E[h(G)] for an arbitrary graph functional (slow generic path;
    the structured routines below are vectorised)."""
    arr = oracle_arrays(n)
    w = graph_weights(n, p, arr.popcount)
    vals = np.fromiter(
        (complex(functional(Graph(n, int(m)))) for m in arr.masks),
        dtype=np.complex128,
        count=arr.masks.size,
    )
    return fsum_complex(w * vals)


# ---------------------------------------------------------------------------
# Internal per-(n, p) coupling tables
# ---------------------------------------------------------------------------


class _CouplingTables:
    """Materialised per-graph arrays for n <= 6: centred indicators X,
    neighbourhood sums Y, and pair sums Y_{v,w}."""

    def __init__(self, n: int, p: float):
        _check_capacity(n, limit=6)
        self.arr = oracle_arrays(n)
        self.n = n
        self.p = p
        tb = self.arr.basis
        mom = exact_moments(n, p)
        self.mom = mom
        self.sigma = mom.sigma
        self.c3 = tb.n_triples
        self.kappa = 3 * (n - 3) + 1  # |nu_v|
        self.weights = graph_weights(n, p, self.arr.popcount)

        self.x = tb.x_matrix(self.arr.tri_bits, p)            # (G, n_tri)
        s, self.y = tb.y_matrix(self.x)                       # (G, n_tri)
        all_pairs = np.arange(tb.n_pairs)
        self.y_pair = tb.ypair_columns(self.x, s, self.y, all_pairs)  # (G, n_pair)
        self.w_stat = (
            self.arr.tri_bits.sum(axis=1, dtype=np.float64) - self.c3 * p**3
        ) / self.sigma
        # S and sigma_{v,w} along the flattened (v, w in nu_v) pair list
        same = tb.pair_v == tb.pair_w
        self.sigma_vw = np.where(same, mom.var_x, mom.cov_overlap2)
        self.s_pair = self.c3 * self.kappa / self.sigma**2 * self.sigma_vw


@lru_cache(maxsize=8)
def _tables(n: int, p: float) -> _CouplingTables:
    return _CouplingTables(n, p)


# ---------------------------------------------------------------------------
# Characteristic-function ODE check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OdeCheck:
    t: float
    phi: complex
    phi_prime: complex
    a_t: complex
    b_t: complex
    residual: float


def exact_chf_ode(n: int, p: float, t: float) -> OdeCheck:
    """Exact check of phi'(t) = -t (1 + a(t)) phi(t) + b(t) with

        a(t) = E{G (e^{itD} - 1 - itD)} / (it)
        b(t) = i E{(G(e^{itD} - 1) - E G(e^{itD} - 1)) e^{itW}}.

    All expectations are finite sums over (graph, V); the identity is exact,
    so any residual beyond float accumulation is an implementation bug.
    At t = 0 the limiting convention a = b = 0, residual 0 applies.
    """
    _check_capacity(n)
    if t == 0.0:
        return OdeCheck(t=0.0, phi=1.0 + 0j, phi_prime=0j, a_t=0j, b_t=0j, residual=0.0)
    arr = oracle_arrays(n)
    tb = arr.basis
    mom = exact_moments(n, p)
    sigma = mom.sigma
    c3 = tb.n_triples
    w = graph_weights(n, p, arr.popcount)
    t_counts = arr.tri_bits.sum(axis=1, dtype=np.float64)
    w_stat = (t_counts - c3 * p**3) / sigma
    e_itw = np.exp(1j * t * w_stat)

    phi = fsum_complex(w * e_itw)
    phi_prime = 1j * fsum_complex(w * w_stat * e_itw)

    # inner conditional means over V, streamed per triple to bound memory
    inner_full = np.zeros(arr.masks.size, dtype=np.complex128)   # G(e^{itD}-1-itD)
    inner_lin = np.zeros(arr.masks.size, dtype=np.complex128)    # G(e^{itD}-1)
    kappa = tb.nu_size
    tri_f = arr.tri_bits
    for k in range(tb.n_triples):
        x_k = tri_f[:, k].astype(np.float64) - p**3
        y_k = tri_f[:, tb.nu_indices[k]].sum(axis=1, dtype=np.float64) - kappa * p**3
        g_k = -(c3 / sigma) * x_k
        itd = 1j * t * (-y_k / sigma)
        e_itd = np.exp(itd)
        inner_lin += g_k * (e_itd - 1.0)
        inner_full += g_k * (e_itd - 1.0 - itd)
    inner_lin /= c3
    inner_full /= c3

    a_t = fsum_complex(w * inner_full) / (1j * t)
    mean_lin = fsum_complex(w * inner_lin)
    b_t = 1j * fsum_complex(w * (inner_lin - mean_lin) * e_itw)
    residual = abs(phi_prime + t * (1.0 + a_t) * phi - b_t)
    return OdeCheck(t=t, phi=phi, phi_prime=phi_prime, a_t=a_t, b_t=b_t, residual=residual)


# ---------------------------------------------------------------------------
# Coupling identity verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingReport:
    n: int
    p: float
    eq5_residuals: dict
    per_graph_gd_residual: float   # max_g |E[G D~ | g] - E[G D | g]|
    e_s_enumerated: float
    e_s_analytic: float
    weak_extended_residuals: dict  # h name -> |E[(G D~ - S) h(W'')]|


def verify_couplings(
    n: int, p: float, f_family: Iterable[str] = ("1", "x", "x2", "sin")
) -> CouplingReport:
    """Exact residuals of the coupling identities at desk scale (n <= 6).

    (i)   E{G f(W')} - E{G f(W)} = E{W f(W)} for each named f;
    (ii)  E[G D~ | graph] = E[G D | graph] for every graph (average over V, V');
    (iii) E S = 1, enumerated over (V, V') and in closed form;
    (iv)  E[(G D~ - S) h(W'')] = 0 for each named h (the testable surrogate
          of the matching W''-conditional expectations).
    """
    tab = _tables(n, p)
    w = tab.weights
    tb = tab.arr.basis
    g_over_v = -(tab.c3 / tab.sigma) * tab.x  # (G, n_tri), G as function of (g, V)

    eq5 = {}
    for name in f_family:
        f = resolve_test_function(name)
        fw = f(tab.w_stat)
        lhs_terms = np.zeros(w.size, dtype=np.complex128)
        for k in range(tab.c3):
            wp = tab.w_stat - tab.y[:, k] / tab.sigma
            lhs_terms += g_over_v[:, k] * (f(wp) - fw)
        lhs = fsum_complex(w * lhs_terms / tab.c3)
        rhs = fsum_complex(w * tab.w_stat * fw)
        eq5[name] = abs(lhs - rhs)

    # (ii) both sides per graph, each by its own literal average
    lhs_g = np.zeros(w.size, dtype=np.float64)
    for m in range(tb.n_pairs):
        v_idx, w_idx = tb.pair_v[m], tb.pair_w[m]
        dtilde = -(tab.kappa / tab.sigma) * tab.x[:, w_idx]
        lhs_g += g_over_v[:, v_idx] * dtilde
    lhs_g /= tab.c3 * tab.kappa
    rhs_g = np.mean(g_over_v * (-tab.y / tab.sigma), axis=1)
    per_graph = float(np.max(np.abs(lhs_g - rhs_g)))

    e_s_enum = float(np.mean(tab.s_pair))
    e_s_analytic = (
        tab.c3
        * (tab.mom.var_x + 3.0 * (n - 3) * tab.mom.cov_overlap2)
        / tab.mom.var_t
    )

    weak = {}
    for name in f_family:
        h = resolve_test_function(name)
        acc = np.zeros(w.size, dtype=np.complex128)
        for m in range(tb.n_pairs):
            v_idx, w_idx = tb.pair_v[m], tb.pair_w[m]
            gdt = (
                tab.c3
                * tab.kappa
                / tab.sigma**2
                * tab.x[:, v_idx]
                * tab.x[:, w_idx]
            )
            wpp = tab.w_stat - tab.y_pair[:, m] / tab.sigma
            acc += (gdt - tab.s_pair[m]) * h(wpp)
        weak[name] = abs(fsum_complex(w * acc / (tab.c3 * tab.kappa)))

    return CouplingReport(
        n=n,
        p=p,
        eq5_residuals=eq5,
        per_graph_gd_residual=per_graph,
        e_s_enumerated=e_s_enum,
        e_s_analytic=e_s_analytic,
        weak_extended_residuals=weak,
    )


# ---------------------------------------------------------------------------
# Exact r-terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RTermsExact:
    n: int
    p: float
    r1: float
    r2_by_t: dict          # t -> r2(t) = sqrt(Var_g inner)/|t|
    r2: float              # sup over the grid
    r31: float
    r32: float
    r33: float
    r3: float
    r41_by_t: dict         # t -> raw variance of the graph-conditional mean
    r42_by_t: dict
    r43_by_t: dict
    r4: float              # sup-combined per the extended bound recipe


def _weighted_cvar(w: np.ndarray, z: np.ndarray) -> float:
    """Population variance of a complex graph functional under weights w."""
    mean = fsum_complex(w * z)
    return fsum_array(w * np.abs(z - mean) ** 2)


def exact_r_terms(n: int, p: float, t_grid: Sequence[float]) -> RTermsExact:
    """Exact coupling r-terms: inner expectations averaged exactly over
    (V, V'), outer moments and variances summed exactly over all graphs."""
    t_grid = [float(t) for t in t_grid]
    if not t_grid or any(t == 0.0 for t in t_grid):
        raise InputError("t_grid must be nonempty with t != 0")
    tab = _tables(n, p)
    w = tab.weights
    sig = tab.sigma

    absx = np.abs(tab.x)
    r1_per_g = (absx * tab.y**2).sum(axis=1) / sig**3
    r1 = fsum_array(w * r1_per_g)

    xv = tab.x[:, tab.arr.basis.pair_v]
    xw = tab.x[:, tab.arr.basis.pair_w]
    r32_per_g = (np.abs(xv * xw) * np.abs(tab.y_pair)).sum(axis=1) / sig**3
    r33_per_g = (tab.sigma_vw * np.abs(tab.y_pair)).sum(axis=1) / sig**3
    r32 = fsum_array(w * r32_per_g)
    r33 = fsum_array(w * r33_per_g)
    r3 = 0.5 * r1 + r32 + r33

    r2_by_t, r41_by_t, r42_by_t, r43_by_t = {}, {}, {}, {}
    for t in t_grid:
        phase_v = np.exp(-1j * t / sig * tab.y)
        inner2 = -(tab.x * (phase_v - 1.0)).sum(axis=1) / sig
        inner41 = -(tab.x * (phase_v - 1.0 + 1j * t / sig * tab.y)).sum(axis=1) / sig
        phase_p = np.exp(-1j * t / sig * tab.y_pair)
        inner42 = (xv * xw * (phase_p - 1.0)).sum(axis=1) / sig**2
        inner43 = (tab.sigma_vw * (phase_p - 1.0)).sum(axis=1) / sig**2
        r2_by_t[t] = math.sqrt(_weighted_cvar(w, inner2)) / abs(t)
        r41_by_t[t] = _weighted_cvar(w, inner41)
        r42_by_t[t] = _weighted_cvar(w, inner42)
        r43_by_t[t] = _weighted_cvar(w, inner43)

    r4 = (
        max(math.sqrt(r41_by_t[t]) / t**2 for t in t_grid)
        + max(math.sqrt(r42_by_t[t]) / abs(t) for t in t_grid)
        + max(math.sqrt(r43_by_t[t]) / abs(t) for t in t_grid)
    )
    return RTermsExact(
        n=n,
        p=p,
        r1=r1,
        r2_by_t=r2_by_t,
        r2=max(r2_by_t.values()),
        r31=r1,
        r32=r32,
        r33=r33,
        r3=r3,
        r41_by_t=r41_by_t,
        r42_by_t=r42_by_t,
        r43_by_t=r43_by_t,
        r4=r4,
    )
