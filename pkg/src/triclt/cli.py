"""Batch CLI: experiment orchestration, empirical d_K, rate fits, records.

Subcommands
-----------
moments    exact MomentReport per (n, p)
bound      regime rates and Theorem-style bound evaluation from given r-terms
sample-dk  Monte Carlo W samples -> empirical Kolmogorov distance per n
oracle     exact-oracle reports (distribution, exact d_K, ODE residuals)
coupling   MC r-term estimates and assembled coupling bound
patterns   pattern-class tables, moment-bound checks (CSV mirror)
rate-fit   log-log slope fit over previously written records
proxy      independent-indicator proxy model: exact moments + MC d_K

Every record echoes its configuration and carries a content hash over all
deterministic fields (timestamps excluded), so identical (seed, config)
reruns are bit-identical and hashable as such.  Output is JSON lines; the
patterns subcommand also writes a CSV mirror.

Exit codes: 0 ok, 1 usage, 2 config, 3 capacity, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import CapacityError, ConfigError, InputError, NumericError
from .graphs import batch_triangle_counts
from .moments import (
    BoundInputs,
    exact_moments,
    normal_cdf,
    proxy_exact,
    regime_rates,
    theorem2_bound,
)
from .oracle import enumerate_distribution, exact_chf_ode, exact_dk, verify_couplings
from .coupling import assemble_bound, estimate_r, r3_theoretical, DEFAULT_T_GRID
from .patterns import enumerate_classes, moment_bound_check, pattern_cov_check
from .sampler import SamplerConfig, gnp_edge_bits, proxy_samples

OUTPUT_DIR_ENV = "TRICLT_OUT"
DEFAULT_DKW_DELTA = 0.01


# ---------------------------------------------------------------------------
# Empirical Kolmogorov distance and rate fitting
# ---------------------------------------------------------------------------


def empirical_dk(w_samples: Sequence[float], delta: float = DEFAULT_DKW_DELTA) -> dict:
    """sup_x |ECDF(x) - Phi(x)| evaluated at the sample points (left and
    right limits), plus the DKW band sqrt(ln(2/delta) / (2m))."""
    w = np.sort(np.asarray(w_samples, dtype=np.float64))
    m = w.size
    if m < 2:
        raise InputError("need at least two samples")
    if not (0.0 < delta < 1.0):
        raise InputError("delta must be in (0,1)")
    phi = np.asarray(normal_cdf(w))
    hi = np.arange(1, m + 1) / m
    lo = np.arange(0, m) / m
    dk = float(np.max(np.maximum(np.abs(hi - phi), np.abs(lo - phi))))
    return {"dk": dk, "dkw_band": math.sqrt(math.log(2.0 / delta) / (2.0 * m))}


def rate_fit(points: Sequence[tuple[float, float]]) -> dict:
    """Least squares of ln(dk) on ln(n): slope, intercept, r_squared."""
    if len(points) < 3:
        raise InputError("need at least 3 points")
    ns = np.array([q[0] for q in points], dtype=np.float64)
    ds = np.array([q[1] for q in points], dtype=np.float64)
    if np.any(ns <= 0) or np.any(ds <= 0):
        raise InputError("rate_fit needs positive values")
    x = np.log(ns)
    y = np.log(ds)
    xc = x - x.mean()
    slope = float((xc @ (y - y.mean())) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": slope, "intercept": intercept, "r_squared": r2}


# ---------------------------------------------------------------------------
# Monte Carlo W samples (stream-partitioned, deterministic merge)
# ---------------------------------------------------------------------------


def _chunk_size(n: int) -> int:
    # small chunks keep the splitmix pass inside cache at large n
    if n >= 192:
        return 64
    if n >= 96:
        return 256
    if n >= 48:
        return 2048
    return 4096


def sample_w(n: int, p: float, samples: int, seed: int, streams: int = 1) -> np.ndarray:
    """W = (T - ET)/sd(T) for `samples` G(n,p) draws, standardised with the
    exact moments.  Work is split across `streams` counter-based streams and
    merged in fixed stream order, so the result is independent of how the
    streams would be scheduled."""
    if samples < 1 or streams < 1:
        raise ConfigError("samples and streams must be >= 1")
    mom = exact_moments(n, p)
    out = np.empty(samples, dtype=np.float64)
    share = samples // streams
    sizes = [share + (1 if s < samples - share * streams else 0) for s in range(streams)]
    pos = 0
    for s, size in enumerate(sizes):
        cfg = SamplerConfig(n=n, p=p, seed=seed, stream=s)
        done = 0
        step = _chunk_size(n)
        while done < size:
            c = min(step, size - done)
            bits = gnp_edge_bits(cfg, done, c)
            t_counts = batch_triangle_counts(bits, n)
            out[pos : pos + c] = (t_counts - mom.mean_t) / mom.sigma
            pos += c
            done += c
    return out


def sample_proxy_w(
    n: int, p: float, samples: int, seed: int, streams: int = 1
) -> np.ndarray:
    """Standardised proxy draws (Y - EY)/sd(Y), exact proxy moments."""
    if samples < 1 or streams < 1:
        raise ConfigError("samples and streams must be >= 1")
    rep = proxy_exact(n, p)
    out = np.empty(samples, dtype=np.float64)
    share = samples // streams
    sizes = [share + (1 if s < samples - share * streams else 0) for s in range(streams)]
    pos = 0
    step = max(128, (1 << 22) // (n * (n - 1) // 2))
    for s, size in enumerate(sizes):
        cfg = SamplerConfig(n=n, p=p, seed=seed, stream=s)
        done = 0
        while done < size:
            c = min(step, size - done)
            y = proxy_samples(cfg, done, c)
            out[pos : pos + c] = (y - rep.mean_y) / math.sqrt(rep.var_y)
            pos += c
            done += c
    return out


# ---------------------------------------------------------------------------
# Experiment configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    n_list: tuple[int, ...] = ()
    p_rule: dict = field(default_factory=dict)   # {"kind": "fixed"|"power", ...}
    samples: int = 10_000
    seed: int = 1
    streams: int = 1
    t_grid: tuple[float, ...] = ()
    out: Optional[str] = None
    delta: float = DEFAULT_DKW_DELTA
    form: str = "extended"
    r_tilde_policy: str = "theoretical"
    anchors: tuple[str, ...] = ("r411", "r414")
    cov_check: bool = False
    couplings: bool = False
    quantity: str = "empirical_dk"
    input_path: Optional[str] = None
    r_inputs: dict = field(default_factory=dict)

    def resolve_p(self, n: int) -> float:
        rule = self.p_rule
        if not rule:
            raise ConfigError("no p rule given (use --p)")
        if rule["kind"] == "fixed":
            p = float(rule["value"])
        elif rule["kind"] == "power":
            p = float(rule["c"]) * float(n) ** (-float(rule["alpha"]))
            p = min(max(p, 1e-12), 1.0 - 1e-12)  # clamp into (0,1)
            if n * p < 4.0:
                raise ConfigError(
                    f"power rule gives n*p = {n * p:.3f} < 4 at n={n}; "
                    "outside the sparse-regime sanity range"
                )
        else:
            raise ConfigError(f"unknown p rule {rule!r}")
        if not (0.0 < p < 1.0):
            raise ConfigError(f"p={p} outside (0,1)")
        return p


def _canonical_payload(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ResultRecord:
    config: dict
    quantity: str
    n: Optional[int]
    p: Optional[float]
    value: Optional[float]
    std_error: Optional[float]
    regime: Optional[str]
    extra: dict
    tool_version: str = __version__
    timestamp: float = 0.0

    def content_hash(self) -> str:
        payload = {
            "config": self.config,
            "quantity": self.quantity,
            "n": self.n,
            "p": self.p,
            "value": self.value,
            "std_error": self.std_error,
            "regime": self.regime,
            "extra": self.extra,
            "tool_version": self.tool_version,
        }
        return hashlib.sha256(_canonical_payload(payload).encode()).hexdigest()

    def to_json(self) -> str:
        body = dataclasses.asdict(self)
        body["content_hash"] = self.content_hash()
        return json.dumps(body, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        body = json.loads(line)
        body.pop("content_hash", None)
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in body.items() if k in known})


def _mkrecord(cfg: ExperimentConfig, quantity: str, **kw) -> ResultRecord:
    config_echo = dataclasses.asdict(cfg)
    config_echo.pop("out", None)
    config_echo.pop("input_path", None)
    return ResultRecord(
        config=config_echo,
        quantity=quantity,
        n=kw.get("n"),
        p=kw.get("p"),
        value=kw.get("value"),
        std_error=kw.get("std_error"),
        regime=kw.get("regime"),
        extra=kw.get("extra", {}),
        timestamp=time.time(),
    )


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def _run_moments(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    for n in cfg.n_list:
        p = cfg.resolve_p(n)
        mom = exact_moments(n, p)
        rates = regime_rates(n, p)
        records.append(
            _mkrecord(
                cfg,
                "var_T",
                n=n,
                p=p,
                value=mom.var_t,
                regime=rates.regime,
                extra={
                    "mean_T": mom.mean_t,
                    "sigma": mom.sigma,
                    "var_X": mom.var_x,
                    "cov_overlap2": mom.cov_overlap2,
                },
            )
        )
    return records


def _run_bound(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    for n in cfg.n_list:
        p = cfg.resolve_p(n)
        rates = regime_rates(n, p)
        extra = {
            "thm1_rate": rates.thm1_rate,
            "wasserstein_rate": rates.wasserstein_rate,
            "s2": rates.s2,
            "r3_theoretical": r3_theoretical(n, p),
        }
        value = None
        r = cfg.r_inputs
        if r:
            if cfg.form == "extended":
                inputs = BoundInputs(
                    r3=r.get("r3", 0.0),
                    r3_tilde=r.get("r3_tilde", r.get("r3", 0.0)),
                    r4=r.get("r4", 0.0),
                )
            else:
                inputs = BoundInputs(
                    r1=r.get("r1", 0.0),
                    r1_tilde=r.get("r1_tilde", r.get("r1", 0.0)),
                    r2=r.get("r2", 0.0),
                )
            value = theorem2_bound(inputs, cfg.form)
            extra["form"] = cfg.form
            extra["r_inputs"] = dict(r)
        records.append(
            _mkrecord(cfg, "bound", n=n, p=p, value=value, regime=rates.regime, extra=extra)
        )
    return records


def _run_sample_dk(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    for n in cfg.n_list:
        p = cfg.resolve_p(n)
        w = sample_w(n, p, cfg.samples, cfg.seed, cfg.streams)
        res = empirical_dk(w, cfg.delta)
        records.append(
            _mkrecord(
                cfg,
                "empirical_dk",
                n=n,
                p=p,
                value=res["dk"],
                std_error=res["dkw_band"],
                regime=regime_rates(n, p).regime,
                extra={"samples": cfg.samples, "delta": cfg.delta},
            )
        )
    return records


def _run_oracle(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    t_grid = cfg.t_grid or (0.5, 1.0, 2.0, 4.0)
    for n in cfg.n_list:
        p = cfg.resolve_p(n)
        dist = enumerate_distribution(n, p)
        records.append(
            _mkrecord(
                cfg,
                "exact_distribution",
                n=n,
                p=p,
                value=dist.mean(),
                extra={
                    "atoms": [[t, q] for t, q in dist.atoms],
                    "variance": dist.var(),
                },
            )
        )
        records.append(_mkrecord(cfg, "exact_dk", n=n, p=p, value=exact_dk(n, p)))
        for t in t_grid:
            chk = exact_chf_ode(n, p, t)
            records.append(
                _mkrecord(
                    cfg,
                    "ode_residual",
                    n=n,
                    p=p,
                    value=chk.residual,
                    extra={"t": t, "phi": [chk.phi.real, chk.phi.imag]},
                )
            )
        if cfg.couplings:
            rep = verify_couplings(n, p)
            records.append(
                _mkrecord(
                    cfg,
                    "coupling_residuals",
                    n=n,
                    p=p,
                    value=max(
                        max(rep.eq5_residuals.values()),
                        rep.per_graph_gd_residual,
                        abs(rep.e_s_enumerated - 1.0),
                        max(rep.weak_extended_residuals.values()),
                    ),
                    extra={
                        "eq5": {k: v for k, v in rep.eq5_residuals.items()},
                        "per_graph_gd": rep.per_graph_gd_residual,
                        "e_s": rep.e_s_enumerated,
                        "weak": {k: v for k, v in rep.weak_extended_residuals.items()},
                    },
                )
            )
    return records


def _run_coupling(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    t_grid = cfg.t_grid or DEFAULT_T_GRID
    for n in cfg.n_list:
        p = cfg.resolve_p(n)
        if cfg.form == "extended":
            est3 = estimate_r(n, p, cfg.samples, t_grid, "r3", cfg.seed)
            est4 = estimate_r(n, p, cfg.samples, t_grid, "r4", cfg.seed)
            estimates = {"r3": est3["r3"], "r4": est4["r4"]}
            detail = {
                "r31": est3["r31"].value,
                "r32": est3["r32"].value,
                "r33": est3["r33"].value,
                "r41": est4["r41"].value,
                "r42": est4["r42"].value,
                "r43": est4["r43"].value,
            }
        else:
            est1 = estimate_r(n, p, cfg.samples, t_grid, "r1", cfg.seed)
            est2 = estimate_r(n, p, cfg.samples, t_grid, "r2", cfg.seed)
            estimates = {"r1": est1["r1"], "r2": est2["r2"]}
            detail = {"r1": est1["r1"].value, "r2": est2["r2"].value}
        w = sample_w(n, p, cfg.samples, cfg.seed, cfg.streams)
        dk_res = empirical_dk(w, cfg.delta)
        report = assemble_bound(
            n,
            p,
            estimates,
            r_tilde_policy=cfg.r_tilde_policy,
            form=cfg.form,
            t_grid=t_grid,
            empirical_dk=dk_res["dk"],
            dk_band=dk_res["dkw_band"],
            metadata={"seed": cfg.seed, "samples": cfg.samples},
        )
        records.append(
            _mkrecord(
                cfg,
                "coupling_bound",
                n=n,
                p=p,
                value=report.bound,
                regime=report.regime,
                extra={
                    "r_values": report.r_values,
                    "components": detail,
                    "r_tilde": report.r_tilde,
                    "r_tilde_policy": report.r_tilde_policy,
                    "r_tilde_adjusted": report.r_tilde_adjusted,
                    "thm1_rate": report.thm1_rate,
                    "r3_theoretical": report.r3_theory,
                    "empirical_dk": report.empirical_dk,
                    "dk_band": report.dk_band,
                    "std_errors": {k: v.std_error for k, v in estimates.items()},
                },
            )
        )
    return records


def _run_patterns(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    p_grid = [round(0.05 * k, 2) for k in range(1, 20)]
    for anchor in cfg.anchors:
        classes = enumerate_classes(anchor)
        rows = []
        for idx, cls in enumerate(classes):
            measured = None
            ratio = None
            se = None
            if cfg.cov_check and cfg.n_list:
                n = cfg.n_list[0]
                p = cfg.resolve_p(n)
                span_ok = max(x for t in cls.representative.triples() for x in t) < n
                if span_ok and n <= 7:
                    rep = pattern_cov_check(cls, n, p, t=1.0, mode="exact")
                    measured, ratio, se = rep.cov_abs, rep.ratio, 0.0
            mb = moment_bound_check(list(cls.representative.triples()), p_grid)
            rows.append(
                {
                    "class_id": idx,
                    "lemma": cls.lemma_tag,
                    "m": cls.m,
                    "multiplicity_order": cls.multiplicity_order,
                    "small_p_exponent": cls.small_p_exponent,
                    "bound_small_p": cls.bound_small_p,
                    "bound_large_p": cls.bound_large_p,
                    "representative": [list(t) for t in cls.representative.triples()],
                    "moment_bound_ok": all(r.ok for r in mb),
                    "measured": measured,
                    "ratio": ratio,
                    "std_error": se,
                }
            )
        records.append(
            _mkrecord(
                cfg,
                f"pattern_classes_{anchor}",
                value=float(len(classes)),
                extra={"rows": rows},
            )
        )
    return records


def _run_rate_fit(cfg: ExperimentConfig) -> list[ResultRecord]:
    if not cfg.input_path:
        raise ConfigError("rate-fit needs --input pointing at a records file")
    points = []
    with open(cfg.input_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            body = json.loads(line)
            if body.get("quantity") == cfg.quantity and body.get("value"):
                points.append((float(body["n"]), float(body["value"])))
    if len(points) < 3:
        raise ConfigError(
            f"found {len(points)} usable records for quantity {cfg.quantity!r}"
        )
    fit = rate_fit(points)
    return [
        _mkrecord(
            cfg,
            "rate_fit",
            value=fit["slope"],
            extra={
                "intercept": fit["intercept"],
                "r_squared": fit["r_squared"],
                "points": [[a, b] for a, b in points],
                "fit_quantity": cfg.quantity,
            },
        )
    ]


def _run_proxy(cfg: ExperimentConfig) -> list[ResultRecord]:
    records = []
    for n in cfg.n_list:
        p = cfg.resolve_p(n)
        rep = proxy_exact(n, p)
        records.append(
            _mkrecord(
                cfg,
                "proxy_exact",
                n=n,
                p=p,
                value=rep.var_y,
                extra={
                    "mean_Y": rep.mean_y,
                    "var_Y_display": rep.var_y_display,
                    "gamma": rep.gamma,
                    "be_bound": rep.be_bound,
                },
            )
        )
        if cfg.samples:
            w = sample_proxy_w(n, p, cfg.samples, cfg.seed, cfg.streams)
            res = empirical_dk(w, cfg.delta)
            records.append(
                _mkrecord(
                    cfg,
                    "proxy_dk",
                    n=n,
                    p=p,
                    value=res["dk"],
                    std_error=res["dkw_band"],
                    extra={"samples": cfg.samples},
                )
            )
    return records


_SUBCOMMANDS = {
    "moments": _run_moments,
    "bound": _run_bound,
    "sample-dk": _run_sample_dk,
    "oracle": _run_oracle,
    "coupling": _run_coupling,
    "patterns": _run_patterns,
    "rate-fit": _run_rate_fit,
    "proxy": _run_proxy,
}


def run(config: ExperimentConfig) -> tuple[int, list[ResultRecord]]:
    """Dispatch one experiment; returns (exit_code, records)."""
    if config.subcommand not in _SUBCOMMANDS:
        raise InputError(f"unknown subcommand {config.subcommand!r}")
    if config.subcommand not in ("rate-fit", "patterns") and not config.n_list:
        raise ConfigError("need at least one n (use --n)")
    records = _SUBCOMMANDS[config.subcommand](config)
    if not all(
        (r.value is None or math.isfinite(r.value)) for r in records
    ):
        raise NumericError("non-finite value in emitted records")
    return 0, records


# ---------------------------------------------------------------------------
# Argument / config-file parsing
# ---------------------------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse API
        raise _UsageError(message)


def parse_p_rule(text: str) -> dict:
    if text.startswith("fixed:"):
        return {"kind": "fixed", "value": float(text.split(":", 1)[1])}
    if text.startswith("power:"):
        c, alpha = text.split(":", 1)[1].split(",")
        return {"kind": "power", "c": float(c), "alpha": float(alpha)}
    try:
        return {"kind": "fixed", "value": float(text)}
    except ValueError as exc:
        raise ConfigError(f"cannot parse p rule {text!r}") from exc


def _parse_list(text: str, cast) -> tuple:
    return tuple(cast(tok) for tok in text.split(",") if tok.strip())


def _read_config_file(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line {raw.rstrip()!r}")
            key, value = (tok.strip() for tok in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def build_config(argv: Sequence[str]) -> ExperimentConfig:
    parser = _Parser(prog="triclt", description=__doc__)
    parser.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    parser.add_argument("--n", help="comma-separated vertex counts")
    parser.add_argument("--p", help="p rule: fixed:VALUE or power:C,ALPHA")
    parser.add_argument("--samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--streams", type=int)
    parser.add_argument("--t-grid", help="comma-separated t values")
    parser.add_argument("--out")
    parser.add_argument("--config", help="key = value config file (flags win)")
    parser.add_argument("--delta", type=float)
    parser.add_argument("--form", choices=["simple", "extended"])
    parser.add_argument("--r-tilde-policy", choices=["estimate", "theoretical"])
    parser.add_argument("--anchors", help="pattern anchors, e.g. r411,r414")
    parser.add_argument("--cov-check", action="store_true", default=None)
    parser.add_argument("--couplings", action="store_true", default=None)
    parser.add_argument("--quantity")
    parser.add_argument("--input", dest="input_path")
    for key in ("r1", "r1-tilde", "r2", "r3", "r3-tilde", "r4"):
        parser.add_argument(f"--{key}", type=float)
    ns = parser.parse_args(list(argv))

    merged: dict = {}
    if ns.config:
        merged.update(_read_config_file(ns.config))

    def pick(flag_value, key, cast=None, default=None):
        if flag_value is not None:
            return flag_value
        if key in merged:
            return cast(merged[key]) if cast else merged[key]
        return default

    try:
        n_list = pick(
            _parse_list(ns.n, int) if ns.n else None, "n", lambda s: _parse_list(s, int), ()
        )
        p_rule = pick(
            parse_p_rule(ns.p) if ns.p else None, "p", parse_p_rule, {}
        )
        t_grid = pick(
            _parse_list(ns.t_grid, float) if ns.t_grid else None,
            "t_grid",
            lambda s: _parse_list(s, float),
            (),
        )
        r_inputs = {}
        for key in ("r1", "r1_tilde", "r2", "r3", "r3_tilde", "r4"):
            val = getattr(ns, key, None)
            if val is None and key in merged:
                val = float(merged[key])
            if val is not None:
                r_inputs[key] = float(val)
        cfg = ExperimentConfig(
            subcommand=ns.subcommand,
            n_list=tuple(n_list),
            p_rule=dict(p_rule),
            samples=int(pick(ns.samples, "samples", int, 10_000)),
            seed=int(pick(ns.seed, "seed", int, 1)),
            streams=int(pick(ns.streams, "streams", int, 1)),
            t_grid=tuple(t_grid),
            out=pick(ns.out, "out"),
            delta=float(pick(ns.delta, "delta", float, DEFAULT_DKW_DELTA)),
            form=pick(ns.form, "form", str, "extended"),
            r_tilde_policy=pick(ns.r_tilde_policy, "r_tilde_policy", str, "theoretical"),
            anchors=tuple(
                pick(
                    _parse_list(ns.anchors, str) if ns.anchors else None,
                    "anchors",
                    lambda s: _parse_list(s, str),
                    ("r411", "r414"),
                )
            ),
            cov_check=bool(pick(ns.cov_check, "cov_check", lambda s: s == "true", False)),
            couplings=bool(pick(ns.couplings, "couplings", lambda s: s == "true", False)),
            quantity=pick(ns.quantity, "quantity", str, "empirical_dk"),
            input_path=pick(ns.input_path, "input"),
            r_inputs=r_inputs,
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _output_path(cfg: ExperimentConfig) -> Optional[str]:
    if cfg.out:
        return cfg.out
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        return os.path.join(env_dir, f"{cfg.subcommand}.jsonl")
    return None


def _write_records(cfg: ExperimentConfig, records: list[ResultRecord]) -> None:
    path = _output_path(cfg)
    lines = [r.to_json() for r in records]
    if path is None:
        for line in lines:
            print(line)
        return
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    if cfg.subcommand == "patterns":
        csv_path = os.path.splitext(path)[0] + ".csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(
                "anchor,class_id,lemma,m,multiplicity_order,bound_family,"
                "measured,ratio\n"
            )
            for rec in records:
                anchor = rec.quantity.replace("pattern_classes_", "")
                for row in rec.extra["rows"]:
                    fh.write(
                        f"{anchor},{row['class_id']},{row['lemma']},{row['m']},"
                        f"{row['multiplicity_order']},{row['bound_small_p']},"
                        f"{'' if row['measured'] is None else row['measured']},"
                        f"{'' if row['ratio'] is None else row['ratio']}\n"
                    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = build_config(argv)
        code, records = run(cfg)
        _write_records(cfg, records)
        return code
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except InputError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
