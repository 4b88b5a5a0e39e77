"""Experiment drivers, configuration, seeding and result files.

Each experiment turns a seed (or a planted-instance index) into rows, and a
pure summary function turns rows back into statistics, so any summary can
be recomputed from a written result file.  Seeds run in a thread pool and
are merged in seed order, which makes the output independent of the
thread count.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from numpy.random import Generator, Philox
from scipy import stats

from . import __version__
from .errors import (
    DomainError,
    InsufficientLandscapeError,
    NotFoundError,
    NumericalQualityError,
    RangeOverflowError,
    TraplocError,
)
from .landscape import (
    Landscape,
    PlantedLandscape,
    TrapSource,
    ell_of_t,
    first_exceedence,
    hyperbolic_exceedence,
    records_upto,
    scan,
)
from .localise import (
    audit_R1_R2,
    balance_bounds,
    build_snapshot,
    favourable_event,
    reloc_time,
    validate_eps,
)
from .logreal import LogMagnitude
from .quenched import (
    balance_time,
    balance_time_segment,
    build,
    choose_truncation,
    distribution_at,
    escape_bound,
    half_line_decomposition,
    restricted_mixing_time,
)
from .tails import AuxFunction, TailModel, check_assumptions, n_series_diagnostic, parse_aux, parse_model

SCHEMA_VERSION = 1
DEFAULT_EPS: tuple[float | None, ...] = (0.05, 0.1, 0.05, 0.5, None, 1e-3, 0.1, 0.01)
PLANTED_STREAM = 3  # Philox stream for planted-instance jitter
QUENCHED_MAX_SITES = 5000


class ConfigError(DomainError):
    """Invalid configuration; ``flag`` names the offending option."""

    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


# ------------------------------------------------------------------ configuration

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: str = "stretched-log:0.3"
    aux: str = "default"
    seed: int = 0
    seeds: int = 1
    i_max: int | None = None
    t_min: float = 1e2
    t_max: float = 1e10
    t_steps: int = 32
    n_min: int = 2
    n_max: int = 6
    eps: tuple[float | None, ...] = DEFAULT_EPS
    N: int | None = None
    options: tuple[tuple[str, Any], ...] = ()
    out: str | None = None
    format: str = "csv"

    def __post_init__(self) -> None:
        object.__setattr__(self, "eps", tuple(None if e is None else float(e) for e in self.eps))
        object.__setattr__(self, "options", tuple(sorted((str(k), v) for k, v in dict(self.options).items())))

    # -- derived
    @property
    def tail_model(self) -> TailModel:
        return parse_model(self.model)

    @property
    def aux_function(self) -> AuxFunction:
        return parse_aux(self.aux)

    @property
    def N_value(self) -> int:
        return self.N if self.N is not None else self.tail_model.analytic_N().N

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.seed, self.seed + self.seeds))

    def ln_t_grid(self) -> np.ndarray:
        return np.linspace(math.log(self.t_min), math.log(self.t_max), self.t_steps)

    def option(self, key: str, default: Any = None) -> Any:
        return dict(self.options).get(key, default)

    def resolved_i_max(self) -> int:
        if self.i_max is not None:
            return int(self.i_max)
        return EXPERIMENTS[self.experiment].default_i_max

    # -- identity and serialisation
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps"] = list(self.eps)
        d["options"] = {k: v for k, v in self.options}
        d["i_max"] = self.resolved_i_max() if self.experiment in EXPERIMENTS else self.i_max
        return d

    def hash(self) -> str:
        ident = self.to_dict()
        ident.pop("out")
        blob = json.dumps(ident, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown configuration key")
        d = dict(data)
        if "eps" in d and d["eps"] is not None:
            d["eps"] = tuple(d["eps"])
        if "options" in d and isinstance(d["options"], dict):
            d["options"] = tuple(d["options"].items())
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {self.experiment!r} (known: {', '.join(EXPERIMENTS)})")
        try:
            model = parse_model(self.model)
        except DomainError as exc:
            raise ConfigError("--model", str(exc)) from None
        try:
            parse_aux(self.aux)
        except DomainError as exc:
            raise ConfigError("--aux", str(exc)) from None
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError("--seed", f"must be a nonnegative integer, got {self.seed!r}")
        if not (isinstance(self.seeds, int) and self.seeds >= 1):
            raise ConfigError("--seeds", f"must be a positive integer, got {self.seeds!r}")
        if self.i_max is not None and not (int(self.i_max) == self.i_max and self.i_max >= 1):
            raise ConfigError("--imax", f"must be a positive integer, got {self.i_max!r}")
        if not (self.t_min > 0 and math.isfinite(self.t_min)):
            raise ConfigError("--tmin", f"must be positive and finite, got {self.t_min!r}")
        if not (self.t_max >= self.t_min and math.isfinite(self.t_max)):
            raise ConfigError("--tmax", f"must be finite and at least tmin, got {self.t_max!r}")
        if not (isinstance(self.t_steps, int) and self.t_steps >= 1):
            raise ConfigError("--tsteps", f"must be a positive integer, got {self.t_steps!r}")
        if not (2 <= self.n_min <= self.n_max):
            raise ConfigError("--nmin", f"need 2 <= nmin <= nmax, got {self.n_min}, {self.n_max}")
        if len(self.eps) != 8:
            raise ConfigError("--eps0", "expected eight parameters eps0..eps7")
        for i, e in enumerate(self.eps):
            if e is not None and not 0 < e < 1:
                raise ConfigError(f"--eps{i}", f"must lie in (0, 1), got {e!r}")
        if self.N is not None and self.N < 2:
            raise ConfigError("--N", f"must be at least 2, got {self.N!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError("--format", f"must be csv or json, got {self.format!r}")
        if self.experiment == "quenched" and self.resolved_i_max() > QUENCHED_MAX_SITES:
            raise ConfigError("--imax", f"quenched runs on at most {QUENCHED_MAX_SITES} sites")
        if self.experiment == "balanced":
            try:
                validate_eps(self.eps, 2)
            except DomainError as exc:
                raise ConfigError("--eps1", str(exc)) from None
        _ = model


# ------------------------------------------------------------------ results

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    columns: list[tuple[str, str]]
    rows: list[dict]
    summary: dict
    provenance: dict
    errors: list[dict] = field(default_factory=list)

    @property
    def has_numerical_failure(self) -> bool:
        return any(e["kind"] == "numerical" for e in self.errors)

    def to_json(self) -> dict:
        return _finite_json({
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "provenance": self.provenance,
            "columns": [{"name": n, "doc": d} for n, d in self.columns],
            "rows": self.rows,
            "summary": self.summary,
            "errors": self.errors,
        })


def _finite_json(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_json(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite_json(obj.item())
    return obj


_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def load_result_json(text: str) -> dict:
    """Parse emitted JSON, restoring the non-finite floats encoded as strings."""

    def restore(obj):
        if isinstance(obj, str):
            return _NONFINITE.get(obj, obj)
        if isinstance(obj, dict):
            return {k: restore(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [restore(v) for v in obj]
        return obj

    doc = json.loads(text)
    doc["rows"] = restore(doc["rows"])
    doc["summary"] = restore(doc["summary"])
    return doc


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_csv_cell(x) for x in v)
    return str(v)


def render_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    docs = " | ".join(f"{n}: {d}" for n, d in result.columns)
    buf.write(f"# {docs}\r\n")
    w = csv.writer(buf)
    names = [n for n, _ in result.columns]
    w.writerow(names)
    for r in result.rows:
        w.writerow([_csv_cell(r.get(n)) for n in names])
    return buf.getvalue()


def render_json(result: ExperimentResult) -> str:
    return json.dumps(result.to_json(), indent=1, allow_nan=False) + "\n"


def render(result: ExperimentResult, fmt: str | None = None) -> str:
    fmt = fmt or result.config.format
    return render_csv(result) if fmt == "csv" else render_json(result)


def write_result(result: ExperimentResult, path: str | None = None, fmt: str | None = None) -> str:
    text = render(result, fmt)
    path = path or result.config.out
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def result_schema() -> dict:
    return json.loads(resources.files("traploc").joinpath("data/result.schema.json").read_text())


def load_calibration() -> dict:
    return json.loads(resources.files("traploc").joinpath("data/calibration.json").read_text())


# ------------------------------------------------------------------ experiment registry

RowsFn = Callable[[ExperimentConfig, int, list], None]
SummaryFn = Callable[[ExperimentConfig, list], dict]


@dataclass(frozen=True)
class Experiment:
    name: str
    columns: list[tuple[str, str]]
    rows: RowsFn
    summarize: SummaryFn
    default_i_max: int = 10**5


EXPERIMENTS: dict[str, Experiment] = {}


def _register(name: str, columns, default_i_max: int = 10**5):
    def deco(fn):
        def wrap(summarize):
            EXPERIMENTS[name] = Experiment(name, columns, fn, summarize, default_i_max)
            return summarize
        fn.summary = wrap
        return fn
    return deco


def _error_kind(exc: Exception) -> str:
    if isinstance(exc, NumericalQualityError):
        return "numerical"
    if isinstance(exc, (RangeOverflowError, InsufficientLandscapeError, NotFoundError)):
        return "skipped"
    return "failed"


def _run_seed(cfg: ExperimentConfig, exp: Experiment, seed: int) -> tuple[list, dict | None]:
    sink: list[dict] = []
    try:
        exp.rows(cfg, seed, sink)
    except TraplocError as exc:
        return sink, {
            "seed": seed,
            "kind": _error_kind(exc),
            "error": type(exc).__name__,
            "message": str(exc),
            "rows_kept": len(sink),
        }
    return sink, None


def default_threads() -> int:
    env = os.environ.get("TRAPLOC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("TRAPLOC_THREADS", f"must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("TRAPLOC_THREADS", f"must be a positive integer, got {env!r}")
        return n
    return 1


def run(config: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Run an experiment; per-seed errors are collected, partial rows kept."""
    config.validate()
    exp = EXPERIMENTS[config.experiment]
    threads = default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ConfigError("--threads", f"must be a positive integer, got {threads!r}")
    seeds = config.seed_list
    if threads == 1 or len(seeds) == 1:
        parts = [_run_seed(config, exp, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _run_seed(config, exp, s), seeds))
    rows = [r for part, _ in parts for r in part]
    errors = [e for _, e in parts if e is not None]
    summary = exp.summarize(config, rows)
    trunc = [r["truncation_error"] for r in rows if r.get("truncation_error") is not None]
    provenance = {
        "config_hash": config.hash(),
        "code_version": __version__,
        "seeds_run": len(seeds),
        "seeds_with_errors": len(errors),
        "rows": len(rows),
        "max_truncation_error": max(trunc) if trunc else None,
    }
    return ExperimentResult(config, list(exp.columns), rows, summary, provenance, errors)


def resummarize(config: ExperimentConfig, rows: list[dict]) -> dict:
    return EXPERIMENTS[config.experiment].summarize(config, rows)


# ------------------------------------------------------------------ shared helpers

def _median(xs) -> float | None:
    xs = [float(x) for x in xs]
    return float(np.median(xs)) if xs else None


def _frac(flags) -> float | None:
    flags = list(flags)
    return sum(bool(f) for f in flags) / len(flags) if flags else None


def _landscape(cfg: ExperimentConfig, seed: int) -> Landscape:
    return Landscape(cfg.tail_model, seed)


def _checkpoints(i_max: int) -> list[int]:
    cps = [10**k for k in range(1, 19) if 10**k < i_max]
    return cps + [i_max]


def ks_exp1(xs: Sequence[float]) -> float:
    """Kolmogorov-Smirnov distance of a sample to the unit exponential law."""
    x = np.sort(np.asarray(xs, dtype=float))
    if x.size == 0:
        return math.nan
    F = -np.expm1(-x)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def domination_deficit(xs: Sequence[float]) -> float:
    """``sup_x (1 - e^{-x}) - F_emp(x)``: how far the sample CDF falls below Exp(1)."""
    x = np.sort(np.asarray(xs, dtype=float))
    if x.size == 0:
        return math.nan
    F = -np.expm1(-x)
    # just left of the k-th order statistic the empirical CDF equals k/n
    return float(max(0.0, np.max(F - np.arange(x.size) / x.size)))


# ------------------------------------------------------------------ sample

_SAMPLE_COLS = [
    ("seed", "landscape seed"),
    ("position", "site index (0-based)"),
    ("ln_sigma", "natural log of the trap depth"),
    ("tail_uniform", "1 - 1/L(sigma), uniform on (0,1) under the model"),
]


@_register("sample", _SAMPLE_COLS, default_i_max=1000)
def _sample_rows(cfg, seed, sink):
    ln = _landscape(cfg, seed).ln_traps(0, cfg.resolved_i_max())
    u = -np.expm1(-cfg.tail_model.ln_L(ln))
    for i, (v, w) in enumerate(zip(ln, u)):
        sink.append({"seed": seed, "position": i, "ln_sigma": float(v), "tail_uniform": float(w)})


@_sample_rows.summary
def _sample_summary(cfg, rows):
    u = [r["tail_uniform"] for r in rows]
    ks = float(stats.kstest(u, "uniform").statistic) if u else None
    return {"sites": len(rows), "ks_tail_vs_inverse_L": ks}


# ------------------------------------------------------------------ records

_RECORD_COLS = [
    ("seed", "landscape seed"),
    ("n", "record number (1-based)"),
    ("position", "record site r_n (0-based)"),
    ("index", "1-based index r_n + 1"),
    ("ln_sigma", "log depth of the record"),
    ("ln_L", "ln L(sigma_(n))"),
    ("gap", "ln L(sigma_(n)) - ln L(sigma_(n-1)); blank for n = 1"),
    ("index_ratio", "(r_n + 1) / L(sigma_(n-1)); blank for n = 1"),
    ("gap_ratio", "(r_n - r_(n-1)) / L(sigma_(n-1)); blank for n = 1"),
    ("bracket_ok", "L(sigma_(n-1))/n^2 <= r_n + 1 <= 2 L(sigma_(n-1)) ln n; blank for n < 3"),
]


@_register("records", _RECORD_COLS, default_i_max=10**5)
def _records_rows(cfg, seed, sink):
    model = cfg.tail_model
    sk = scan(_landscape(cfg, seed), cfg.resolved_i_max(), K=1).skeleton
    prev = None
    for n, e in enumerate(sk.entries, start=1):
        lnL = float(model.ln_L(e.sigma.ln_value))
        row = {"seed": seed, "n": n, "position": e.r, "index": e.r + 1, "ln_sigma": e.sigma.ln_value, "ln_L": lnL,
               "gap": None, "index_ratio": None, "gap_ratio": None, "bracket_ok": None}
        if prev is not None:
            p_r, p_lnL = prev
            row["gap"] = lnL - p_lnL
            row["index_ratio"] = math.exp(math.log(e.r + 1) - p_lnL)
            row["gap_ratio"] = math.exp(math.log(e.r - p_r) - p_lnL)
            if n >= 3:
                lo = p_lnL - 2 * math.log(n)
                hi = p_lnL + math.log(2 * math.log(n))
                row["bracket_ok"] = lo <= math.log(e.r + 1) <= hi
        sink.append(row)
        prev = (e.r, lnL)


@_records_rows.summary
def _records_summary(cfg, rows):
    gaps = [r["gap"] for r in rows if r["gap"] is not None]
    idx = [r["index_ratio"] for r in rows if r["index_ratio"] is not None]
    gr = [r["gap_ratio"] for r in rows if r["gap_ratio"] is not None]
    br = [r["bracket_ok"] for r in rows if r["bracket_ok"] is not None]
    return {
        "records": len(rows),
        "gaps": len(gaps),
        "ks_gap_vs_exp1": ks_exp1(gaps) if gaps else None,
        "domination_deficit_index_ratio": domination_deficit(idx) if idx else None,
        "domination_deficit_gap_ratio": domination_deficit(gr) if gr else None,
        "bracket_violation_fraction": (1.0 - _frac(br)) if br else None,
    }


# ------------------------------------------------------------------ sum-max

_SUMMAX_COLS = [
    ("seed", "landscape seed"),
    ("i", "number of traps scanned"),
    ("ln_S", "ln of the partial sum S_i"),
    ("ln_m", "ln of the running maximum m_i"),
    ("ratio", "S_i / m_i"),
    ("ln_excess", "ln((S_i - m_i) / m_i), resolving ratios that round to 1"),
    ("max_ratio", "max of S_j / m_j over j <= i"),
    ("window_max_ratio", "max of S_j / m_j over j since the previous checkpoint"),
    ("ln_S_N", "ln of S_i with the N-1 largest traps removed"),
    ("n_records", "records seen so far"),
]


@_register("sum-max", _SUMMAX_COLS, default_i_max=10**7)
def _summax_rows(cfg, seed, sink):
    N = cfg.N_value
    res = scan(_landscape(cfg, seed), cfg.resolved_i_max(), K=max(8, N), checkpoints=_checkpoints(cfg.resolved_i_max()))
    for s in res.snapshots:
        sink.append({
            "seed": seed, "i": s.i, "ln_S": s.ln_S, "ln_m": s.ln_m, "ratio": s.ratio,
            "ln_excess": s.ln_S_k(2) - s.ln_m,
            "max_ratio": math.exp(s.max_ln_ratio), "window_max_ratio": math.exp(s.window_max_ln_ratio),
            "ln_S_N": s.ln_S_k(N) if N <= len(s.top_k) + 1 else None, "n_records": s.n_records,
        })


@_summax_rows.summary
def _summax_summary(cfg, rows):
    thr = float(cfg.option("ratio_threshold", 1.5))
    by_i: dict[int, list] = {}
    for r in rows:
        by_i.setdefault(r["i"], []).append(r)
    per = []
    for i in sorted(by_i):
        rs = by_i[i]
        ratios = [r["ratio"] for r in rs]
        per.append({
            "i": i,
            "seeds": len(rs),
            "min_ratio": min(ratios),
            "median_ratio": _median(ratios),
            "median_ln_excess": _median(r["ln_excess"] for r in rs),
            "max_ratio": max(ratios),
            "frac_max_ratio_above": _frac(r["max_ratio"] > thr for r in rs),
            "frac_window_max_above": _frac(r["window_max_ratio"] > thr for r in rs),
        })
    return {"ratio_threshold": thr, "all_ratios_at_least_one": all(r["ratio"] >= 1.0 for r in rows), "checkpoints": per}


# ------------------------------------------------------------------ complete localisation

_LOC_COLS = [
    ("seed", "landscape seed"),
    ("t", "time"),
    ("ln_t", "ln t"),
    ("ln_ell", "ln ell_t, the level with ell L(ell) = t"),
    ("Z", "first site whose trap exceeds ell_t"),
    ("j", "hyperbolic exceedence index j_t"),
    ("z_I", "deepest trap before j_t"),
    ("z_O", "end of the chain started at z_I"),
    ("O_t", "outer boundary z_O + h_t max(t/sigma_zO, 1)"),
    ("ln_D", "ln of the lower boundary D_t"),
    ("gamma_size", "|Gamma_t|"),
    ("gamma", "sites of Gamma_t (space separated)"),
    ("singleton", "Gamma_t = {Z_t}"),
    ("Z_is_zI", "Z_t = z_I"),
    ("invariants_ok", "z_I, z_O in Gamma_t, D_t <= sigma_zI and |Gamma_t| >= 1"),
]


def _snapshot_row(src: TrapSource, seed: int, ln_t: float, aux: AuxFunction, i_cap: int) -> dict:
    s = build_snapshot(src, LogMagnitude(ln_t), aux, i_cap)
    g = set(s.gamma_set)
    ln_zI = float(src.ln_traps(s.z_I, s.z_I + 1)[0])
    ok = s.z_I in g and s.z_O in g and s.D_t.ln_value <= ln_zI and len(g) >= 1
    return {
        "seed": seed, "t": math.exp(ln_t), "ln_t": float(ln_t),
        "ln_ell": None if s.ell_t is None else s.ell_t.ln_value,
        "Z": s.Z_t, "j": s.j_t, "z_I": s.z_I, "z_O": s.z_O, "O_t": s.O_t, "ln_D": s.D_t.ln_value,
        "gamma_size": len(s.gamma_set), "gamma": list(s.gamma_set),
        "singleton": s.gamma_set == [s.Z_t], "Z_is_zI": s.Z_t == s.z_I, "invariants_ok": bool(ok),
    }


@_register("complete-loc", _LOC_COLS)
def _loc_rows(cfg, seed, sink):
    src = _landscape(cfg, seed)
    aux = cfg.aux_function
    i_cap = int(cfg.option("i_cap", 1 << 22))
    for x in cfg.ln_t_grid():
        sink.append(_snapshot_row(src, seed, float(x), aux, i_cap))


@_loc_rows.summary
def _loc_summary(cfg, rows):
    by_t: dict[float, list] = {}
    for r in rows:
        by_t.setdefault(r["ln_t"], []).append(r)
    per = [{
        "ln_t": lt,
        "seeds": len(rs),
        "frac_singleton": _frac(r["singleton"] for r in rs),
        "frac_Z_is_zI": _frac(r["Z_is_zI"] for r in rs),
        "mean_gamma_size": float(np.mean([r["gamma_size"] for r in rs])),
        "max_gamma_size": max(r["gamma_size"] for r in rs),
    } for lt, rs in sorted(by_t.items())]
    return {
        "snapshots": len(rows),
        "invariant_violations": sum(not r["invariants_ok"] for r in rows),
        "per_time": per,
    }


# ------------------------------------------------------------------ gamma cardinality

_GCARD_COLS = [
    ("seed", "landscape seed"),
    ("n", "record number; t lies in [t_(n-1), t_n)"),
    ("t", "time"),
    ("ln_t", "ln t"),
    ("gamma_size", "|Gamma_t|"),
    ("z_I", "deepest trap before j_t"),
    ("z_O", "end of the chain"),
    ("gamma", "sites of Gamma_t"),
]


@_register("gamma-card", _GCARD_COLS)
def _gcard_rows(cfg, seed, sink):
    src = _landscape(cfg, seed)
    aux = cfg.aux_function
    i_cap = int(cfg.option("i_cap", 1 << 22))
    per = int(cfg.option("points_per_interval", 8))
    n_lo = max(cfg.n_min, 3)
    sk = records_upto(src, cfg.n_max, i_cap)
    ln_t = {n: reloc_time(sk, n, aux).ln_value for n in range(n_lo - 1, cfg.n_max + 1)}
    for n in range(n_lo, cfg.n_max + 1):
        a, b = ln_t[n - 1], ln_t[n]
        for x in a + (b - a) * np.arange(per) / per:
            s = build_snapshot(src, LogMagnitude(float(x)), aux, i_cap)
            sink.append({"seed": seed, "n": n, "t": math.exp(x), "ln_t": float(x), "gamma_size": len(s.gamma_set),
                         "z_I": s.z_I, "z_O": s.z_O, "gamma": list(s.gamma_set)})


@_gcard_rows.summary
def _gcard_summary(cfg, rows):
    N = cfg.N_value
    sizes = [r["gamma_size"] for r in rows]
    hist: dict[str, int] = {}
    for s in sizes:
        hist[str(s)] = hist.get(str(s), 0) + 1
    return {
        "N": N,
        "points": len(sizes),
        "frac_size_le_N": _frac(s <= N for s in sizes),
        "count_size_eq_N": sum(s == N for s in sizes),
        "max_size": max(sizes) if sizes else None,
        "histogram": dict(sorted(hist.items(), key=lambda kv: int(kv[0]))),
    }


# ------------------------------------------------------------------ relocalisation audit

_AUDIT_COLS = [
    ("seed", "landscape seed"),
    ("n", "record number"),
    ("ln_t_n", "ln of the relocalisation time t_n"),
    ("r_prev", "r_(n-1)"),
    ("r_n", "r_n"),
    ("O_n", "outer boundary of the chain from r_(n-1) at t_n"),
    ("ln_D_n", "ln of the lower boundary (threshold sigma_(n-1)/h)"),
    ("R1_size", "|R_1|: traps deeper than sigma_(n-1) beyond r_n and before O_n"),
    ("R2_size", "|R_2|: traps in [D_n, sigma_(n-1)) before O_n"),
    ("size", "|R_1| + |R_2|"),
    ("R2_alt_size", "|R_2| with the threshold sigma_(n-1) (no division by h)"),
    ("size_alt", "|R_1| + |R_2| under the alternative threshold"),
    ("R1", "sites of R_1"),
    ("R2", "sites of R_2"),
]


@_register("audit", _AUDIT_COLS)
def _audit_rows(cfg, seed, sink):
    src = _landscape(cfg, seed)
    aux = cfg.aux_function
    i_cap = int(cfg.option("i_cap", 1 << 22))
    for n in range(cfg.n_min, cfg.n_max + 1):
        a = audit_R1_R2(src, n, aux, i_cap)
        sink.append({
            "seed": seed, "n": n, "ln_t_n": a.ln_t_n, "r_prev": a.r_prev, "r_n": a.r_n, "O_n": a.O_n,
            "ln_D_n": a.D_n.ln_value, "R1_size": len(a.R1), "R2_size": len(a.R2), "size": a.size,
            "R2_alt_size": len(a.R2_alt), "size_alt": len(a.R1) + len(a.R2_alt), "R1": a.R1, "R2": a.R2,
        })


@_audit_rows.summary
def _audit_summary(cfg, rows):
    N = cfg.N_value
    return {
        "N": N,
        "audits": len(rows),
        "frac_size_zero": _frac(r["size"] == 0 for r in rows),
        "frac_size_le_N_minus_2": _frac(r["size"] <= N - 2 for r in rows),
        "frac_size_alt_zero": _frac(r["size_alt"] == 0 for r in rows),
        "max_size": max((r["size"] for r in rows), default=None),
    }


# ------------------------------------------------------------------ favoured-site trajectory

_FAV_COLS = [
    ("seed", "landscape seed"),
    ("kind", "grid, or a marker: balance (P(tau_(r_n) <= t) = 1/N) or reloc (t_n)"),
    ("n", "record number of a marker; blank on the grid"),
    ("t", "time"),
    ("ln_t", "ln t"),
    ("sup_mass", "largest single-site probability at time t, walk started at 0"),
    ("argmax", "site carrying sup_mass"),
    ("gamma_mass", "probability of Gamma_t"),
    ("gamma_size", "|Gamma_t|"),
    ("record_mass", "probability of the record sites"),
    ("truncation_error", "bound on the mass lost past the reflecting wall"),
    ("B", "reflecting wall used for the half-line"),
]


def trajectory_rows(src: TrapSource, ln_grid: Iterable[float], aux: AuxFunction | None, N: int, *,
                    seed: int = 0, markers: bool = False, budget: float = 1e-8, B_max: int = 4000,
                    i_cap: int = 1 << 22, wall: int | None = None) -> list[dict]:
    """Mass on the most favoured site along a time grid, plus optional markers.

    One decomposition of ``[0, B]`` serves every time; ``B`` is chosen for
    the largest time so the truncation bound holds on the whole grid.  An
    explicit ``wall`` fixes ``B`` instead (the rows still report the bound).
    """
    ln_grid = [float(x) for x in ln_grid]
    lo, hi = min(ln_grid), max(ln_grid)
    B = wall if wall is not None else choose_truncation(src, hi, budget, B_max).B
    dec = half_line_decomposition(src, B)
    ln_s = dec.segment.ln_sigma
    B = dec.segment.b
    prior = np.concatenate(([-np.inf], np.maximum.accumulate(ln_s)[:-1]))
    rec = np.flatnonzero(ln_s > prior)

    def point(kind: str, n: int | None, x: float) -> dict:
        p = distribution_at(dec, 0, LogMagnitude(x)).probs
        k = int(np.argmax(p))
        g_mass = g_size = None
        if aux is not None:
            gs = build_snapshot(src, LogMagnitude(x), aux, i_cap).gamma_set
            g_size = len(gs)
            inside = [g for g in gs if g <= B]
            g_mass = float(np.sum(p[inside])) if inside else 0.0
        return {
            "seed": seed, "kind": kind, "n": n, "t": math.exp(x), "ln_t": x, "sup_mass": float(p[k]), "argmax": k,
            "gamma_mass": g_mass, "gamma_size": g_size, "record_mass": float(np.sum(p[rec])),
            "truncation_error": math.exp(escape_bound(ln_s, B, x)), "B": int(B),
        }

    rows = [point("grid", None, x) for x in ln_grid]
    if markers:
        extra = []
        for j in range(1, rec.size):
            n = j + 1
            bt = balance_time_segment(ln_s[: rec[j] + 1], N)
            if lo <= bt.ln_t <= hi:
                extra.append(point("balance", n, bt.ln_t))
        if aux is not None and rec.size >= 2:
            sk = records_upto(src, int(rec.size), B + 1)
            for n in range(2, rec.size + 1):
                x = reloc_time(sk, n, aux).ln_value
                if lo <= x <= hi:
                    extra.append(point("reloc", n, x))
        rows.extend(extra)
        rows.sort(key=lambda r: r["ln_t"])
    return rows


def trajectory_checks(rows: list[dict], N: int, window: float = 1.0, high: float = 0.9, dip_margin: float = 0.1) -> dict:
    """Dips near balance markers and recovery between consecutive markers, per seed."""
    out = {"dips_checked": 0, "dips_ok": 0, "between_checked": 0, "between_ok": 0, "seeds_checked": 0, "seeds_ok": 0,
           "failures": []}
    by_seed: dict[int, list] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r)
    for seed, rs in sorted(by_seed.items()):
        bal = sorted(r["ln_t"] for r in rs if r["kind"] == "balance")
        if not bal:
            continue
        seed_ok = True
        for b in bal:
            near = [r["sup_mass"] for r in rs if abs(r["ln_t"] - b) <= window]
            ok = min(near) < 1.0 / N + dip_margin
            out["dips_checked"] += 1
            out["dips_ok"] += ok
            if not ok:
                seed_ok = False
                out["failures"].append({"seed": seed, "check": "dip", "ln_t": b, "min_sup_mass": min(near)})
        for a, b in zip(bal[:-1], bal[1:]):
            mid = [r["sup_mass"] for r in rs if r["kind"] == "grid" and a < r["ln_t"] < b]
            if not mid:
                continue
            ok = max(mid) > high
            out["between_checked"] += 1
            out["between_ok"] += ok
            if not ok:
                seed_ok = False
                out["failures"].append({"seed": seed, "check": "between", "ln_t": [a, b], "max_sup_mass": max(mid)})
        out["seeds_checked"] += 1
        out["seeds_ok"] += seed_ok
    return out


@_register("favoured", _FAV_COLS)
def _fav_rows(cfg, seed, sink):
    rows = trajectory_rows(
        _landscape(cfg, seed), cfg.ln_t_grid(), cfg.aux_function, cfg.N_value, seed=seed,
        markers=bool(cfg.option("markers", False)), budget=float(cfg.option("budget", 1e-8)),
        B_max=int(cfg.option("b_max", 4000)), i_cap=int(cfg.option("i_cap", 1 << 22)),
    )
    sink.extend(rows)


@_fav_rows.summary
def _fav_summary(cfg, rows):
    N = cfg.N_value
    grid = [r for r in rows if r["kind"] == "grid"]
    out = {
        "N": N,
        "grid_points": len(grid),
        "frac_sup_mass_above_0.9": _frac(r["sup_mass"] > 0.9 for r in grid),
        "median_sup_mass": _median(r["sup_mass"] for r in grid),
        "median_gamma_mass": _median(r["gamma_mass"] for r in grid if r["gamma_mass"] is not None),
        "max_truncation_error": max((r["truncation_error"] for r in rows), default=None),
    }
    out["trajectory_checks"] = trajectory_checks(rows, N, float(cfg.option("dip_window", 1.0)))
    return out


@_register("record-mass", _FAV_COLS)
def _recmass_rows(cfg, seed, sink):
    _fav_rows(cfg, seed, sink)


@_recmass_rows.summary
def _recmass_summary(cfg, rows):
    grid = [r for r in rows if r["kind"] == "grid"]
    rm = [r["record_mass"] for r in grid]
    return {
        "grid_points": len(grid),
        "frac_record_mass_above_0.9": _frac(x > 0.9 for x in rm),
        "min_record_mass": min(rm) if rm else None,
        "median_record_mass": _median(rm),
        "max_truncation_error": max((r["truncation_error"] for r in rows), default=None),
    }


# ------------------------------------------------------------------ balanced localisation on planted instances

_BAL_COLS = [
    ("seed", "planted-instance index"),
    ("N", "number of near-record sites"),
    ("i", "site number 1..N"),
    ("z", "site position"),
    ("ln_sigma", "log trap depth at the site"),
    ("is_record", "whether the site is a record of the landscape"),
    ("mass", "probability of the site at the balance time"),
    ("lower", "closed-form lower bound for the mass"),
    ("upper", "closed-form upper bound for the mass"),
    ("within", "lower <= mass <= upper"),
    ("event", "whether every clause of the favourable event holds"),
    ("ln_t_balance", "ln of the time with P(tau_zN <= t) = 1/N"),
    ("cdf_residual", "|P(tau_zN <= t) - 1/N| at that time"),
    ("scaled_balance", "balance time / (Lambda sigma_(n-1))"),
    ("balance_lo", "closed-form lower bound for scaled_balance"),
    ("balance_hi", "closed-form upper bound for scaled_balance"),
    ("scaled_mixing", "restricted mixing time at 8 sqrt(eps0) / (Lambda sigma_(n-1)); 0 if already mixed"),
    ("mixing_bound", "closed-form bound for scaled_mixing"),
    ("mixing_applicable", "whether 2 eps4 <= eps0 <= 1/N"),
]


def planted_instance(model: TailModel, N: int, eps: Sequence[float | None], seed: int = 0, *,
                     ln_prev: float = 8.0, spacing: int = 20) -> tuple[PlantedLandscape, tuple[float, ...]]:
    """A landscape on which the favourable event holds for ``n = 2``.

    ``z_1 = 0`` carries the first record, ``N - 2`` near-records follow at
    spacing ``spacing``, the next record sits in the middle of the allowed
    gap window and everything else is shallow background.  ``seed`` jitters
    the background.
    """
    e = validate_eps(eps, 2)
    rng = Generator(Philox(key=[seed, PLANTED_STREAM]))
    Lam = math.exp(float(model.ln_L(ln_prev + math.log1p(-e[0]))))
    gap = int(Lam * (1.0 / e[1] + 1.0 / e[2]) / 2.0)
    inner = [spacing * i for i in range(1, N - 1)]
    zN = (inner[-1] if inner else 0) + gap
    length = zN + int(Lam / e[6]) + 5
    # background at most e^-3 per site keeps both window sums small
    v = rng.uniform(-5.0, -3.0, length)
    v[0] = ln_prev
    for k, z in enumerate(inner):
        v[z] = ln_prev + math.log1p(-e[0] * (k + 1) / N)
    v[zN] = ln_prev - math.log(e[5]) + 2.0
    return PlantedLandscape(v, model), e


def balanced_instance_rows(src: TrapSource, eps: Sequence[float], N: int, seed: int = 0) -> list[dict]:
    fs = favourable_event(src, 2, eps, N=N)
    bt = balance_time(src, fs)
    zN = fs.z[-1]
    dec = build(src.ln_traps(0, zN + 1), 0, "reflecting", "reflecting")
    p = distribution_at(dec, 0, LogMagnitude(bt.ln_t)).probs
    bb = balance_bounds(fs.eps, N)
    ln_scale = fs.ln_Lambda + fs.ln_sigma_prev
    scaled = math.exp(bt.ln_t - ln_scale)
    mix = restricted_mixing_time(src, fs, 8.0 * math.sqrt(fs.eps[0]))
    scaled_mix = math.exp(mix.ln_t - ln_scale) if mix.ln_t > -math.inf else 0.0
    ln_all = src.ln_traps(0, zN + 1)
    prior = np.concatenate(([-np.inf], np.maximum.accumulate(ln_all)[:-1]))
    others = max(bb.other_site_lower, 0.0)
    rows = []
    for i, z in enumerate(fs.z, start=1):
        if i == N:
            lo, hi = bb.final_site_lower, 1.0 / N
        else:
            lo = others
            hi = 1.0 - max(bb.final_site_lower, 0.0) - (N - 2) * others
        m = float(p[z])
        rows.append({
            "seed": seed, "N": N, "i": i, "z": int(z), "ln_sigma": float(ln_all[z]),
            "is_record": bool(ln_all[z] > prior[z]), "mass": m, "lower": lo, "upper": hi, "within": lo <= m <= hi,
            "event": fs.event, "ln_t_balance": bt.ln_t, "cdf_residual": bt.residual, "scaled_balance": scaled,
            "balance_lo": bb.balance_lo, "balance_hi": bb.balance_hi, "scaled_mixing": scaled_mix,
            "mixing_bound": bb.mixing_scaled_upper, "mixing_applicable": bb.mixing_applicable,
        })
    return rows


@_register("balanced", _BAL_COLS)
def _balanced_rows(cfg, seed, sink):
    N = cfg.N_value
    src, e = planted_instance(cfg.tail_model, N, cfg.eps, seed,
                              ln_prev=float(cfg.option("ln_prev", 8.0)), spacing=int(cfg.option("spacing", 20)))
    sink.extend(balanced_instance_rows(src, e, N, seed))


@_balanced_rows.summary
def _balanced_summary(cfg, rows):
    inst: dict[int, list] = {}
    for r in rows:
        inst.setdefault(r["seed"], []).append(r)
    first = [rs[0] for rs in inst.values()]
    middle = [r for r in rows if 1 < r["i"] < r["N"]]
    return {
        "instances": len(inst),
        "events": sum(r["event"] for r in first),
        "all_within": all(r["within"] for r in rows) if rows else None,
        "max_cdf_residual": max((r["cdf_residual"] for r in first), default=None),
        "balance_bracket_ok": all(r["balance_lo"] < r["scaled_balance"] < r["balance_hi"] for r in first),
        "mixing_bound_ok": all(r["scaled_mixing"] <= r["mixing_bound"] for r in first if r["mixing_applicable"]),
        "middle_sites_not_records": all(not r["is_record"] for r in middle) if middle else None,
        "max_deviation_from_uniform": max((abs(r["mass"] - 1.0 / r["N"]) for r in rows), default=None),
    }


# ------------------------------------------------------------------ quenched law on a seeded segment

_QUENCHED_COLS = [
    ("seed", "landscape seed"),
    ("t", "time"),
    ("ln_t", "ln t"),
    ("position", "site"),
    ("prob", "P(X_t = position), walk from 0 on [0, imax-1] with reflecting ends"),
]


@_register("quenched", _QUENCHED_COLS, default_i_max=64)
def _quenched_rows(cfg, seed, sink):
    ln = _landscape(cfg, seed).ln_traps(0, cfg.resolved_i_max())
    dec = build(ln, 0, "reflecting", "reflecting")
    for x in cfg.ln_t_grid():
        p = distribution_at(dec, 0, LogMagnitude(float(x))).probs
        for pos, v in enumerate(p):
            sink.append({"seed": seed, "t": math.exp(x), "ln_t": float(x), "position": pos, "prob": float(v)})


@_quenched_rows.summary
def _quenched_summary(cfg, rows):
    sums: dict[tuple, float] = {}
    for r in rows:
        key = (r["seed"], r["ln_t"])
        sums[key] = sums.get(key, 0.0) + r["prob"]
    return {"laws": len(sums), "max_row_sum_error": max((abs(s - 1.0) for s in sums.values()), default=None)}


# ------------------------------------------------------------------ assumption checks

_ASSUME_COLS = [
    ("check", "name of the diagnostic"),
    ("ln_t", "ln t where the check applies; blank otherwise"),
    ("k", "multiple of ln h (h-condition) or series exponent"),
    ("side", "upper or lower for the h-condition"),
    ("value", "numeric value of the diagnostic"),
    ("ok", "whether the diagnostic is satisfied; blank if not a pass/fail quantity"),
    ("verdict", "series verdict (converges, diverges, inconclusive)"),
]


@_register("check-assumptions", _ASSUME_COLS)
def _assume_rows(cfg, seed, sink):
    model, aux = cfg.tail_model, cfg.aux_function
    lu = np.linspace(math.log(cfg.t_min), math.log(cfg.t_max), cfg.t_steps)
    lv = np.log(np.array([0.5, 2.0, 10.0]))
    n_max = int(cfg.option("n_max", 10**5))
    rep = check_assumptions(model, aux, lu, lv, lu, n_max=n_max)
    sink.append({"check": "slow_variation_max", "value": rep.slow_variation_max})
    sink.append({"check": "second_order_max", "value": rep.second_order_max})
    bad = {(f["ln_t"], f["k"], f["side"]): f["excess"] for f in rep.h_condition_failures}
    for x in lu:
        for k in range(1, 5):
            for side in ("upper", "lower"):
                key = (float(x), k, side)
                sink.append({"check": "h_condition", "ln_t": float(x), "k": k, "side": side,
                             "value": bad.get(key, 0.0), "ok": key not in bad})
    for x, v in rep.h3_values:
        sink.append({"check": "h3_value", "ln_t": x, "value": v})
    for d in rep.h4_series:
        sink.append({"check": f"series {d.label}", "value": d.partial_sum, "verdict": d.verdict})
    N = model.analytic_N().N
    for ell in range(2, 7):
        d = n_series_diagnostic(model, ell, n_max)
        sink.append({"check": "n_series", "k": ell, "value": d.decade_growth, "verdict": d.verdict,
                     "ok": (d.verdict == "converges") if ell >= N else (d.verdict == "diverges")})


@_assume_rows.summary
def _assume_summary(cfg, rows):
    def val(name):
        return next((r["value"] for r in rows if r["check"] == name), None)
    h = [r for r in rows if r["check"] == "h_condition"]
    ns = [r for r in rows if r["check"] == "n_series"]
    return {
        "analytic_N": cfg.tail_model.analytic_N().N,
        "slow_variation_max": val("slow_variation_max"),
        "second_order_max": val("second_order_max"),
        "h_conditions_hold": all(r["ok"] for r in h),
        "h_condition_failures": sum(not r["ok"] for r in h),
        "n_series_consistent": all(r["ok"] for r in ns),
        "note": "numerical diagnostic; not a proof",
    }


# ------------------------------------------------------------------ landscape statistics

def exceedence_ratios(model: TailModel, seeds: Iterable[int], ln_L_level: float = math.log(1e4),
                      i_cap: int = 1 << 26) -> list[float]:
    """``i_x / L(x)`` per seed at the level with ``ln L(x) = ln_L_level`` (1-based ``i_x``)."""
    ln_x = float(model.ln_Linv(ln_L_level))
    out = []
    for seed in seeds:
        pos, _ = first_exceedence(Landscape(model, seed), ln_x, i_cap)
        out.append(math.exp(math.log(pos + 1) - ln_L_level))
    return out


def hyperbolic_coincidence(model: TailModel, aux: AuxFunction, seed: int, ln_t: float,
                           i_cap: int = 1 << 26) -> bool:
    """Whether ``i_(ell_t) = j_t = j_t^-`` with all three read as 1-based indices."""
    src = Landscape(model, seed)
    ix, _ = first_exceedence(src, ell_of_t(model, ln_t), i_cap)
    j, j_minus = hyperbolic_exceedence(src, ln_t, aux, i_cap)
    return ix + 1 == j == j_minus + 1


def favourable_hits(model: TailModel, seed: int, eps: Sequence[float | None], n_min: int = 3,
                    n_max: int = 40, i_cap: int = 1 << 22) -> list[int]:
    """Record numbers ``n`` at which the favourable event holds, up to the landscape budget."""
    src = Landscape(model, seed)
    hits = []
    for n in range(n_min, n_max + 1):
        try:
            fav = favourable_event(src, n, eps, i_cap=i_cap)
        except (NotFoundError, InsufficientLandscapeError):
            break
        if fav.event:
            hits.append(n)
    return hits


def asymptotic_eps(eps: float) -> tuple[float, ...]:
    """Parameter family ``(e^2, e^6, e^7, e, default, e^2, e^6, e)``."""
    return (eps**2, eps**6, eps**7, eps, None, eps**2, eps**6, eps)


def _quantiles(xs: Sequence[float]) -> dict:
    q = np.quantile(np.asarray(xs, dtype=float), [0.05, 0.25, 0.5, 0.75, 0.95])
    return dict(zip(["q05", "q25", "median", "q75", "q95"], (float(v) for v in q)))


def landscape_pilots(seeds: Sequence[int]) -> dict:
    """Statistics of the streaming searches that are not experiments of their own."""
    half = TailModel("stretched-log", 0.5)
    aux = AuxFunction()
    ratios = exceedence_ratios(half, seeds)
    coin = {f"{t:g}": _frac(hyperbolic_coincidence(half, aux, s, math.log(t)) for s in seeds) for t in (1e3, 1e12)}
    model = TailModel("stretched-log", 0.55)
    eps = asymptotic_eps(0.5)
    hits = [favourable_hits(model, s, eps) for s in seeds]
    return {
        "exceedence_ratio_gamma_0.5": _quantiles(ratios),
        "hyperbolic_coincidence_gamma_0.5": coin,
        "favourable_hits_gamma_0.55_eps_0.5": {
            "seeds_with_hit": sum(bool(h) for h in hits),
            "total_hits": sum(len(h) for h in hits),
            "hits_per_seed": sum(len(h) for h in hits) / len(hits),
        },
    }


# ------------------------------------------------------------------ calibration

CALIBRATION_SEEDS = 100


def pilot_configs() -> dict[str, ExperimentConfig]:
    n = CALIBRATION_SEEDS
    return {
        "sum_max_gamma_0.7": ExperimentConfig("sum-max", "stretched-log:0.7", seeds=n, i_max=10**7),
        "sum_max_gamma_0.3": ExperimentConfig("sum-max", "stretched-log:0.3", seeds=n, i_max=10**7),
        "audit_gamma_0.3": ExperimentConfig("audit", "stretched-log:0.3", seeds=n, n_min=5, n_max=12),
        "gamma_card_gamma_0.55": ExperimentConfig("gamma-card", "stretched-log:0.55", seeds=n, n_min=3, n_max=8),
        "complete_loc_gamma_0.3": ExperimentConfig("complete-loc", "stretched-log:0.3", seeds=n,
                                                   t_min=1e3, t_max=1e10, t_steps=8),
        "records_gamma_0.5": ExperimentConfig("records", "stretched-log:0.5", seeds=n, i_max=10**6),
    }


def calibrate(threads: int = 1, only: Sequence[str] | None = None, previous: dict | None = None) -> dict:
    """Pilot runs on seeds 0..99 whose statistics become regression targets.

    With ``only``, just those pilots are rerun and merged into ``previous``.
    """
    n = CALIBRATION_SEEDS
    out = {"schema_version": SCHEMA_VERSION, "code_version": __version__, "pilot_seeds": [0, n - 1],
           "pilots": {}}
    if only is not None and previous is not None:
        out["pilots"] = dict(previous["pilots"])
        out["landscape"] = previous["landscape"]
    for name, cfg in pilot_configs().items():
        if only is not None and name not in only:
            continue
        res = run(cfg, threads)
        out["pilots"][name] = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "summary": res.summary,
                               "errors": len(res.errors)}
    if only is None or "landscape" in only:
        out["landscape"] = landscape_pilots(range(n))
    return _finite_json(out)
