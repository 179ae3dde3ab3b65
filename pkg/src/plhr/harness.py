"""Declarative experiment runner for the model problems and the benchmark tables."""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from .basenull import base_null_solve
from .multigrid import av_mg_operator, build_hierarchy, inv_mg_operator
from .operators import (DENSE_LIMIT, IdentityOperator, dense_av_inverse, dense_spectrum,
                        fd_laplacian_2d, fd_laplacian_spectrum, fe_laplacian_q1,
                        perturbed_preconditioner)
from .solvers import (SolverConfig, bgd_solve, bplhr_real_solve, bplhr_solve, initial_block,
                      plhr_solve)

log = logging.getLogger(__name__)

PROBLEMS = ("fd", "fe", "matrix-market")
SOLVERS = ("plhr", "bplhr", "bplhr_real", "bgd", "base_null")
PRECONDITIONERS = ("av_mg", "inv_mg", "dense_abs", "dense_plain", "perturbed", "identity")
FLAVORS = ("abs", "plain")
HISTORY_HEADER = ("iter", "pair_index", "residual_norm", "rayleigh_quotient")
ORACLE_LIMIT = 3000      # largest non-FD pencil for which a dense oracle is computed


class ConfigError(ValueError):
    """Invalid or out-of-scope experiment configuration."""


@dataclass
class ExperimentConfig:
    problem: str = "fd"
    omega: int = 7
    ne: int = 50
    matrix_a: str | None = None
    matrix_b: str | None = None
    sigma: float | list = 400.0
    solver: str = "bplhr_real"
    extraction: str = "t_harmonic"
    prec: str = "av_mg"
    eps: float = 0.0
    flavor: str = "abs"
    k: int = 1
    k_track: int | None = None
    tol: float = 1e-6
    maxit: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    m_max: int | None = None
    s_vectors: bool = True
    locking: bool = False
    lambda_q: float | None = None
    omega_coarse: int = 4
    out: str | None = None
    name: str = "experiment"

    def __post_init__(self):
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    @property
    def sigmas(self) -> list:
        s = self.sigma
        return [float(x) for x in s] if isinstance(s, (list, tuple)) else [float(s)]

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if self.prec not in PRECONDITIONERS:
            raise ConfigError(f"prec must be one of {PRECONDITIONERS}")
        if self.flavor not in FLAVORS:
            raise ConfigError(f"flavor must be one of {FLAVORS}")
        if self.prec in ("av_mg", "inv_mg") and self.problem != "fd":
            raise ConfigError(f"{self.prec} is only available for the fd problem")
        if self.prec in ("av_mg", "inv_mg") and self.omega <= self.omega_coarse:
            raise ConfigError("omega must exceed the coarse level omega_coarse")
        if self.problem == "matrix-market" and not self.matrix_a:
            raise ConfigError("matrix-market problem needs matrix_a")
        if self.prec in ("dense_abs", "dense_plain", "perturbed") and self.problem == "fd" \
                and (2 ** self.omega - 1) ** 2 > DENSE_LIMIT:
            raise ConfigError(f"{self.prec} needs a dense factorization; fd omega={self.omega} is too large")
        if self.eps < 0:
            raise ConfigError("eps must be nonnegative")
        if self.solver == "base_null" and self.k != 1:
            raise ConfigError("base_null computes a single vector (k = 1)")
        if self.solver == "plhr" and self.k != 1:
            raise ConfigError("plhr is the single-vector method; use bplhr for k > 1")
        if not self.sigmas:
            raise ConfigError("at least one sigma is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        try:
            self.solver_config(self.sigmas[0], self.seeds[0])
        except (ValueError, NotImplementedError) as exc:
            raise ConfigError(str(exc)) from exc

    def solver_config(self, sigma, seed) -> SolverConfig:
        return SolverConfig(sigma=sigma, k=self.k, k_track=self.k_track, tol=self.tol, maxit=self.maxit,
                            seed=seed, extraction=self.extraction, locking=self.locking,
                            s_vectors=self.s_vectors, m_max=self.m_max)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunRecord:
    sigma: float
    seed: int
    status: str                     # converged | not_converged | failed
    iterations: int
    values: list
    residuals: list
    wall_time: float
    history: list                   # rows (iter, pair_index, residual_norm, rayleigh_quotient)
    oracle_error: float | None = None
    error: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("history")
        d["history_rows"] = len(self.history)
        return d


@dataclass
class RunReport:
    config: dict
    runs: list
    wall_time: float
    environment: dict
    label: str = ""

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.runs)

    @property
    def any_converged(self) -> bool:
        return any(r.converged for r in self.runs)

    def aggregate(self) -> dict:
        """Iteration bands (min/median/max over converged seeds) per sigma."""
        out = {}
        for sigma in dict.fromkeys(r.sigma for r in self.runs):
            runs = [r for r in self.runs if r.sigma == sigma]
            its = [r.iterations for r in runs if r.converged]
            entry = {"runs": len(runs), "converged": len(its)}
            if its:
                entry.update(min=int(np.min(its)), median=float(np.median(its)), max=int(np.max(its)))
            out[_key(sigma)] = entry
        return out

    def to_dict(self) -> dict:
        return {"label": self.label, "config": self.config, "environment": self.environment,
                "wall_time": self.wall_time, "aggregate": self.aggregate(),
                "runs": [r.summary() for r in self.runs]}

    def write_json(self, path):
        Path(path).write_text(json.dumps(_jsonable(self.to_dict()), indent=2))


def _key(sigma):
    return repr(float(sigma))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def environment_stamp() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "platform": platform.platform()}


def build_problem(cfg: ExperimentConfig):
    if cfg.problem == "fd":
        return fd_laplacian_2d(cfg.omega)
    if cfg.problem == "fe":
        return fe_laplacian_q1(cfg.ne)
    from .mmio import load_matrix_market
    return load_matrix_market(cfg.matrix_a, cfg.matrix_b)


def build_oracle(cfg: ExperimentConfig, pencil):
    if cfg.problem == "fd":
        return fd_laplacian_spectrum(cfg.omega)
    if pencil.n <= ORACLE_LIMIT:
        return dense_spectrum(pencil)
    return None


def build_preconditioner(cfg: ExperimentConfig, pencil, sigma, seed, cache=None):
    """Preconditioner for one (sigma, seed); seed only matters for ``perturbed``."""
    cache = {} if cache is None else cache
    if cfg.prec == "identity":
        return IdentityOperator(pencil.n)
    if cfg.prec in ("av_mg", "inv_mg"):
        key = ("mg", sigma)
        if key not in cache:
            cache[key] = build_hierarchy(cfg.omega, cfg.omega_coarse, sigma)
        hier = cache[key]
        return av_mg_operator(hier) if cfg.prec == "av_mg" else inv_mg_operator(hier)
    if cfg.prec in ("dense_abs", "dense_plain"):
        return dense_av_inverse(pencil, sigma, "abs" if cfg.prec == "dense_abs" else "plain")
    from .operators import _shifted_eigh
    key = ("eig", sigma)
    if key not in cache:
        cache[key] = _shifted_eigh(pencil, sigma)
    return perturbed_preconditioner(pencil, sigma, cfg.eps, seed, cfg.flavor, _eig=cache[key])


def _history_rows(result) -> list:
    rows = []
    for it, (rqs, res) in enumerate(result.history, start=1):
        for j in range(len(rqs)):
            rows.append((it, j, float(res[j]), float(rqs[j])))
    return rows


def _oracle_error(oracle, sigma, values, residuals, tol):
    """Largest relative distance from a converged value to the oracle spectrum."""
    if oracle is None:
        return None
    conv = [v for v, r in zip(values, residuals) if r <= tol]
    if not conv:
        return None
    lam = oracle.eigenvalues
    err = [np.min(np.abs(lam - v)) / max(abs(v), np.finfo(float).tiny) for v in conv]
    return float(np.max(err))


def execute_run(cfg: ExperimentConfig, pencil, sigma, seed, cache=None, oracle=None) -> RunRecord:
    """One solver run. Failures are recorded rather than raised."""
    t0 = time.perf_counter()
    try:
        T = build_preconditioner(cfg, pencil, sigma, seed, cache)
        if cfg.solver == "base_null":
            return _run_base_null(cfg, pencil, T, sigma, seed, oracle, t0)
        scfg = cfg.solver_config(sigma, seed)
        solver = {"plhr": plhr_solve, "bplhr": bplhr_solve, "bplhr_real": bplhr_real_solve,
                  "bgd": bgd_solve}[cfg.solver]
        res = solver(pencil, T, scfg)
    except Exception as exc:  # recorded per seed so that sweeps keep going
        log.warning("run sigma=%g seed=%d failed: %s", sigma, seed, exc)
        return RunRecord(sigma, seed, "failed", 0, [], [], time.perf_counter() - t0, [], error=repr(exc))
    vals, resid = res.tracked()
    return RunRecord(sigma, seed, "converged" if res.converged else "not_converged", res.iterations,
                     [float(v) for v in vals], [float(r) for r in resid], time.perf_counter() - t0,
                     _history_rows(res), _oracle_error(oracle, sigma, vals, resid, cfg.tol),
                     diagnostics=_jsonable({k: v for k, v in res.diagnostics.items()
                                            if isinstance(v, (int, float, str, bool, list))}))


def _run_base_null(cfg, pencil, T, sigma, seed, oracle, t0):
    lambda_q = cfg.lambda_q
    if lambda_q is None:
        if oracle is None:
            raise ConfigError("base_null needs lambda_q or a spectrum oracle")
        lambda_q = float(oracle.nearest(sigma, 1)[0])
    v0 = initial_block(pencil, 1, seed)[:, 0]
    r = base_null_solve(pencil, T, lambda_q, v0, tol=cfg.tol, maxit=cfg.maxit)
    rows = [(i, 0, float(res), float(rq)) for i, (res, rq)
            in enumerate(zip(r.eig_residuals[1:], r.rayleigh_quotients[1:]), start=1)]
    status = "converged" if r.converged else "not_converged"
    return RunRecord(sigma, seed, status, r.iterations, [float(r.rayleigh_quotients[-1])],
                     [float(r.eig_residuals[-1])], time.perf_counter() - t0, rows,
                     error=r.reason)


def _run_group(args):
    cfg, sigma, seeds = args
    pencil = build_problem(cfg)
    oracle = build_oracle(cfg, pencil)
    cache = {}
    return [execute_run(cfg, pencil, sigma, s, cache, oracle) for s in seeds]


def _run_all(jobs_list, jobs):
    if jobs <= 1 or len(jobs_list) <= 1:
        return [_run_group(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_group, jobs_list))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, out=None) -> RunReport:
    """Run every (sigma, seed) pair, then write summary JSON and history CSVs to ``out``."""
    cfg.validate()
    t0 = time.perf_counter()
    groups = _run_all([(cfg, sigma, cfg.seeds) for sigma in cfg.sigmas], jobs)
    runs = [r for g in groups for r in g]
    report = RunReport(cfg.to_dict(), runs, time.perf_counter() - t0, environment_stamp(), cfg.name)
    out = out if out is not None else cfg.out
    if out is not None:
        write_outputs(report, out)
    return report


def write_outputs(report: RunReport, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.label or "experiment"
    report.write_json(out / f"{stem}_summary.json")
    for i in range(len(report.runs)):
        r = report.runs[i]
        emit_history(report, out / f"{stem}_history_sigma{r.sigma:g}_seed{r.seed}.csv", run=i)


def emit_history(report: RunReport, path, run: int = 0):
    """Write the per-iteration history of one run as CSV (shortest round-trip floats)."""
    rows = report.runs[run].history if report.runs else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for it, j, res, rq in rows:
            w.writerow((it, j, repr(float(res)), repr(float(rq))))
    return Path(path)


def read_history(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != HISTORY_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [(int(a), int(b), float(c), float(d)) for a, b, c, d in rd]


# ---------------------------------------------------------------------------
# benchmark tables
# ---------------------------------------------------------------------------

TABLE_ROWS = (
    ("BPLHR", "AV", "T-harm.", "bplhr_real", "av_mg", "t_harmonic"),
    ("BPLHR", "AV", "harm.", "bplhr_real", "av_mg", "harmonic"),
    ("BPLHR", "Indef.", "harm.", "bplhr_real", "inv_mg", "harmonic"),
    ("BGD", "AV", "harm.", "bgd", "av_mg", "harmonic"),
    ("BGD", "Indef.", "harm.", "bgd", "inv_mg", "harmonic"),
)

TABLES = {
    "table1": {"sigmas": [400.0, 450.0, 500.0, 550.0, 600.0, 650.0, 700.0], "wanted": 10, "tol": 1e-6,
               "omega": 7, "reference": {"BPLHR/AV/T-harm.": [57, 81, 68, 133, 117, 190, 278],
                                     "BPLHR/AV/harm.": [563, None, 493, 635, None, None, None],
                                     "BPLHR/Indef./harm.": [30, 40, 45, None, 59, 338, 424],
                                     "BGD/AV/harm.": [209, None, 533, None, 493, None, None],
                                     "BGD/Indef./harm.": [36, 46, 57, None, 376, 763, None]}},
    "table2": {"sigmas": [800.0, 900.0, 1000.0, 1100.0, 1200.0, 1300.0, 1400.0], "wanted": 20, "tol": 1e-6,
               "omega": 7, "reference": {"BPLHR/AV/T-harm.": [270, 168, 177, 344, 365, 363, 192],
                                     "BPLHR/AV/harm.": [590, 417, 377, 625, 437, 217, 287],
                                     "BPLHR/Indef./harm.": [None] * 7,
                                     "BGD/AV/harm.": [331, 305, 356, 666, 509, 481, 443],
                                     "BGD/Indef./harm.": [230, 818, 837, None, None, None, None]}},
    "table3": {"omegas": [6, 7, 8, 9], "sigma": 400.0, "wanted": 4, "tol": 1e-4,
               "reference": {"BPLHR/AV/T-harm.": [41, 42, 43, 42]}},
}


def table_configs(which: str, seeds=(0, 1, 2), rows=None, maxit=1000, omegas=None, sigmas=None):
    """(label, ExperimentConfig) pairs for a benchmark table.

    Real-arithmetic BPLHR and BGD run with one extra block column beyond the
    wanted pairs and track only the wanted ones; BGD keeps at most 6k basis
    vectors.
    """
    if which not in TABLES:
        raise ConfigError(f"unknown table {which!r}; choose from {sorted(TABLES)}")
    tab = TABLES[which]
    k = tab["wanted"] + 1
    out = []
    if which == "table3":
        for omega in (omegas or tab["omegas"]):
            cfg = ExperimentConfig(problem="fd", omega=omega, sigma=tab["sigma"], solver="bplhr_real",
                                   prec="av_mg", extraction="t_harmonic", k=k, k_track=tab["wanted"],
                                   tol=tab["tol"], maxit=maxit, seeds=list(seeds), name=f"table3_omega{omega}")
            out.append((f"omega={omega}", cfg))
        return out
    wanted_rows = TABLE_ROWS if rows is None else [r for r in TABLE_ROWS if "/".join(r[:3]) in rows]
    if rows is not None and len(wanted_rows) != len(rows):
        raise ConfigError(f"unknown rows {sorted(set(rows) - {'/'.join(r[:3]) for r in TABLE_ROWS})}")
    for scheme, prec_label, rr, solver, prec, extraction in wanted_rows:
        label = f"{scheme}/{prec_label}/{rr}"
        cfg = ExperimentConfig(problem="fd", omega=tab["omega"], sigma=list(sigmas or tab["sigmas"]),
                               solver=solver, prec=prec, extraction=extraction, k=k, k_track=tab["wanted"],
                               tol=tab["tol"], maxit=maxit, seeds=list(seeds), m_max=6 * k,
                               name=f"{which}_{scheme}_{prec_label}_{rr}".replace(".", ""))
        out.append((label, cfg))
    return out


@dataclass
class TableReport:
    which: str
    rows: dict          # label -> RunReport
    wall_time: float

    def cells(self) -> dict:
        """label -> list of median iteration counts per column, '-' where a seed failed."""
        table = {}
        for label, rep in self.rows.items():
            agg = rep.aggregate()
            table[label] = [(int(round(e["median"])) if e["converged"] == e["runs"] else "-")
                            for e in agg.values()]
        return table

    def columns(self) -> list:
        if self.which == "table3":
            return [lbl.split("=")[1] for lbl in self.rows]
        first = next(iter(self.rows.values()))
        return [float(c) for c in first.aggregate()]

    def format(self) -> str:
        cells = self.cells()
        lines = []
        if self.which == "table3":
            lines.append("omega " + " ".join(f"{c:>6}" for c in self.columns()))
            lines.append("iters " + " ".join(f"{str(v[0]):>6}" for v in cells.values()))
            return "\n".join(lines)
        lines.append(f"{'scheme':<22}" + "".join(f"{c:>7g}" for c in self.columns()))
        for label, vals in cells.items():
            lines.append(f"{label:<22}" + "".join(f"{str(v):>7}" for v in vals))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"table": self.which, "wall_time": self.wall_time, "columns": self.columns(),
                "cells": self.cells(), "reference": TABLES[self.which]["reference"],
                "rows": {label: rep.to_dict() for label, rep in self.rows.items()}}

    def write_json(self, path):
        Path(path).write_text(json.dumps(_jsonable(self.to_dict()), indent=2))


def reproduce_table(which: str, seeds=(0, 1, 2), jobs: int = 1, out=None, rows=None,
                    maxit: int = 1000, omegas=None, sigmas=None) -> TableReport:
    """Run a benchmark table. A cell is '-' unless every seed converged within maxit."""
    t0 = time.perf_counter()
    configs = table_configs(which, seeds, rows, maxit, omegas, sigmas)
    work = [(cfg, sigma, cfg.seeds) for _, cfg in configs for sigma in cfg.sigmas]
    groups = iter(_run_all(work, jobs))
    reports = {}
    for label, cfg in configs:
        runs = [r for _ in cfg.sigmas for r in next(groups)]
        reports[label] = RunReport(cfg.to_dict(), runs, sum(r.wall_time for r in runs),
                                   environment_stamp(), label)
    table = TableReport(which, reports, time.perf_counter() - t0)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        table.write_json(out / f"{which}_summary.json")
    return table
