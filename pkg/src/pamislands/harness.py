"""Experiment configuration, per-cell pipeline, sweeps and report files.

A cell is one (seed, t) pair.  Every cell samples its field, solves, builds
the islands, splits and checks, and returns one flat row; the verification
report is assembled from those rows only, so a report can be rebuilt from
the CSV files alone (see `assess` and the `verify` subcommand).
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .islands import IslandParams, attach_gamma_star, decompose
from .lattice import Box
from .pamsolve import macrobox_radius, solve_pam, split_contributions
from .randfield import DoubleExp, PotentialField, TailModel, height, parse_model, sample_field, save_field
from .shape import OptimalShape, build_optimal_shape, island_radius
from .verify import (
    VerificationReport,
    decay_profile,
    island_eigenfunction,
    mass_concentration,
    potential_shape_check,
    solution_shape_check,
    superposition_bound_check,
    trend_check,
    u2_negligibility,
)

log = logging.getLogger(__name__)

FLOAT_FMT = "%.12g"

CELL_HEADER = [
    "seed", "t", "T", "n_sites", "status",
    "h_T", "h_t", "psi_d_log_t", "psi_d_log_T", "h_t_minus_psi",
    "log_U", "log_U_over_t", "residual", "residual_T", "chi",
    "n_Z", "n_archipelagos", "max_archipelago", "n_optimal", "n_gamma", "n_gamma_star",
    "gamma_min_distance", "frak_d", "huge_radius", "gap", "gap_floor",
    "r_eps0", "mass_fraction_eps0", "d_R_potential", "d_R_solution",
    "split_recon_error", "split_min_component", "boundary_leak",
    "u1_fraction", "u2_fraction", "u3_fraction", "log_u2_mass", "log_u2_bound", "u2_bound_slack",
    "lambda_B_minus_gamma_shifted", "thm41_checked", "thm41_max_violation", "thm41_violations",
    "tail_ratio", "tail_bound", "decay_slope", "decay_c", "flags",
]
MASS_HEADER = ["seed", "t", "eps", "r", "mass_fraction"]
TREND_HEADER = [
    "t", "n_ok", "median_mass_fraction", "median_d_R_potential", "median_d_R_solution",
    "median_abs_h_t_minus_psi", "median_abs_residual", "median_abs_residual_T",
    "median_gap", "median_u2_fraction", "median_n_gamma", "max_n_gamma", "median_gamma_min_distance",
    "median_decay_slope",
]
CHECK_HEADER = ["name", "kind", "value", "threshold", "passed", "params"]
PROFILE_HEADER = ["k", "f", "v", "V", "w"]
SWEEP_HEADER = ["axis", "value", "chi"] + TREND_HEADER

# hard thresholds, all exact finite-t statements up to float slack
RECON_TOL = 1e-10
NEG_TOL = 1e-12
SLACK = 1e-10


# -- configuration -------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    d: int = 1
    model: str = "doubleexp:rho=4.0"
    t_grid: list = field(default_factory=lambda: [20.0, 40.0, 60.0, 80.0, 100.0])
    seeds: list = field(default_factory=lambda: list(range(20)))
    a: float = 1.0
    delta: float | None = None  # None: min(a/4, rho log 2 / 2)
    big_R: int = 6
    R: int = 3
    eta: float = 0.2
    eps: list = field(default_factory=lambda: [0.1])
    shape_radius: int = 20
    shape_tol: float = 1e-10
    tol: float = 1e-10
    method: str = "uniformization"
    box_rule: str = "paper"  # paper: t log^2 t; custom: t log^box_exponent t
    box_exponent: float = 2.0
    split: bool = True
    thm41_max_sites: int = 5000
    dump_fields: bool = False
    out: str = "runs/experiment"

    def __post_init__(self):
        self.t_grid = [float(t) for t in self.t_grid]
        self.seeds = [int(s) for s in self.seeds]
        self.eps = [float(e) for e in self.eps]

    @property
    def tail(self) -> TailModel:
        return parse_model(self.model)

    @property
    def rho(self) -> float:
        m = self.tail
        return m.rho if isinstance(m, DoubleExp) else math.inf

    @property
    def exponent(self) -> float:
        return 2.0 if self.box_rule == "paper" else float(self.box_exponent)

    @property
    def params(self) -> IslandParams:
        kw = dict(big_R=self.big_R, R=self.R, eta=self.eta)
        if self.delta is not None:
            kw["delta"] = self.delta
        return IslandParams.defaults(self.rho, self.a, **kw)

    def validate(self) -> "ExperimentConfig":
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if self.box_rule not in ("paper", "custom"):
            raise ValueError("box_rule must be 'paper' or 'custom'")
        if self.method not in ("krylov", "eigen", "uniformization"):
            raise ValueError(f"unknown method {self.method!r}")
        p = self.params  # checks delta < a/2 and 0 < R < big_R
        p.check_rho(self.rho)
        if any(t <= 1 for t in self.t_grid):
            raise ValueError("t must exceed 1 (the box rule takes log t)")
        if self.t_grid:
            side = 2 * macrobox_radius(min(self.t_grid), self.exponent) + 1
            if not self.big_R < side:
                raise ValueError(f"big_R={self.big_R} must be below the smallest box side {side}")
        if not all(0 < e < 1 for e in self.eps) or not self.eps:
            raise ValueError("eps values must lie in (0, 1)")
        if self.R > self.shape_radius:
            raise ValueError("the shape radius must be at least R")
        return self

    def deviations(self) -> list:
        out = []
        if self.box_rule != "paper" and self.exponent != 2.0:
            out.append(f"box_exponent={self.exponent:g} (paper box is t log^2 t)")
        return out

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        d = self.as_dict()
        d.pop("out")
        d.pop("dump_fields")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")


@functools.lru_cache(maxsize=32)
def cached_shape(rho: float, d: int, R: int, tol: float) -> OptimalShape:
    return build_optimal_shape(rho, d, R, tol)


def shape_for(cfg: ExperimentConfig) -> OptimalShape:
    return cached_shape(cfg.rho, cfg.d, cfg.shape_radius, cfg.shape_tol)


# -- one cell ------------------------------------------------------------------------


def _nan_row(seed, t, status: str) -> dict:
    row = {k: math.nan for k in CELL_HEADER}
    row.update(seed=seed, t=t, status=status, flags="")
    return row


def run_cell(cfg: ExperimentConfig, seed: int, t: float, field: PotentialField | None = None, out_dir: Path | None = None) -> tuple[dict, list]:
    """The whole pipeline for one (seed, t); returns (cell row, mass rows).

    `field` replaces the sampled disorder (planted instances); it must cover
    the outer box when the split is on, else B_T.
    """
    d, rho = cfg.d, cfg.rho
    model = cfg.tail
    T = macrobox_radius(t, cfg.exponent)
    box = Box.centered(d, T)
    outer = Box.centered(d, 2 * T + 1) if cfg.split else box
    if field is None:
        field = sample_field(model, outer, seed)
    elif not outer.issubset(field.box):
        outer = box if box.issubset(field.box) else None
        if outer is None:
            raise ValueError("the supplied field does not cover B_T")
    xi = field if field.box == box else field.restrict(box)
    shape = shape_for(cfg)
    chi, p = shape.chi, cfg.params
    row = _nan_row(seed, t, "ok")
    flags = []

    h_T = height(xi)
    h_t = height(xi, Box.centered(d, int(math.floor(t))))
    psi_t = float(model.psi(d * math.log(t)))
    u = solve_pam(xi, box, t, method=cfg.method, tol=cfg.tol)
    logU = u.log_total_mass
    row.update(T=T, n_sites=len(box), h_T=h_T, h_t=h_t, psi_d_log_t=psi_t,
               psi_d_log_T=float(model.psi(d * math.log(T))), h_t_minus_psi=h_t - psi_t,
               log_U=logU, log_U_over_t=logU / t, residual=logU / t - h_t + chi,
               residual_T=logU / t - h_T + chi, chi=chi)

    dec = decompose(xi, T, h_T, chi, p, rho)
    attach_gamma_star(dec, u, t)
    s = dec.summary()
    row.update(n_Z=s["n_Z"], n_archipelagos=s["n_archipelagos"], max_archipelago=s["max_archipelago"],
               n_optimal=s["n_optimal"], n_gamma=s["n_gamma"], n_gamma_star=s["n_gamma_star"],
               gamma_min_distance=s["gamma_min_distance"], frak_d=p.frak_d(T, rho),
               huge_radius=s["huge_radius"], gap=dec.gap, gap_floor=p.gap_floor(T, d))
    flags += dec.flags

    gs = dec.gamma_star
    mass_rows = []
    for k, eps in enumerate(cfg.eps):
        r = island_radius(shape, eps)
        frac = mass_concentration(u, gs, r)
        mass_rows.append({"seed": seed, "t": t, "eps": eps, "r": r, "mass_fraction": frac})
        if k == 0:
            row.update(r_eps0=r, mass_fraction_eps0=frac)
    if len(gs):
        row["d_R_potential"] = potential_shape_check(xi, gs, h_T, shape, p.R)[0]
        row["d_R_solution"] = solution_shape_check(u, gs, shape, p.R)[0]

    if cfg.split and outer is not None:
        sp = split_contributions(field, box, dec.gamma, t, outer_box=outer, tol=cfg.tol)
        fr = sp.mass_fractions()
        un = u2_negligibility(sp, h_T, chi)
        row.update(split_recon_error=sp.reconstruction_error(), split_min_component=sp.min_component(),
                   boundary_leak=sp.boundary_leak, u1_fraction=fr["u1"], u2_fraction=un["u2_fraction"],
                   u3_fraction=fr["u3"], log_u2_mass=un["log_u2_mass"], log_u2_bound=un["log_bound"],
                   u2_bound_slack=un["slack"], lambda_B_minus_gamma_shifted=un["lambda_shifted"])
        if len(dec.gamma) and len(box) <= cfg.thm41_max_sites:
            sb = superposition_bound_check(xi, box, dec.gamma, t, r=0, split=sp)
            row.update(thm41_checked=1, thm41_max_violation=sb["max_violation"],
                       thm41_violations=sb["n_violations"] + (0 if sb["aggregate_ok"] else 1),
                       tail_ratio=sb["tail_ratio"], tail_bound=sb["tail_bound"])
        else:
            row["thm41_checked"] = 0
    if len(dec.gamma):
        slopes, cs = [], []
        sites = box.sites()
        for y in dec.gamma:
            _, vy = island_eigenfunction(xi, box, dec.gamma, y)
            near = np.abs(sites - y).max(axis=1) <= dec.huge_radius
            dp = decay_profile(vy[near], sites[near], y, p.q(d))
            slopes.append(dp["slope"])
            cs.append(dp["c"])
        row.update(decay_slope=float(np.nanmedian(slopes)), decay_c=float(np.nanmedian(cs)))
    if logU / t > h_T + SLACK:
        flags.append("rate_exceeds_height")
    row["flags"] = ";".join(flags)

    if cfg.dump_fields and out_dir is not None:
        cd = Path(out_dir) / "cells"
        cd.mkdir(parents=True, exist_ok=True)
        save_field(xi, cd / f"field_s{seed}_t{t:g}.csv")
        np.savez_compressed(cd / f"solution_s{seed}_t{t:g}.npz", values=u.values, log_scale=u.log_scale,
                            sites=box.sites(), gamma=dec.gamma, gamma_star=gs)
    return row, mass_rows


def _safe_cell(args):
    cfg, seed, t, out_dir = args
    try:
        return run_cell(cfg, seed, t, out_dir=out_dir)
    except Exception as exc:  # recorded per cell, the sweep goes on
        log.warning("cell seed=%s t=%s failed: %s", seed, t, exc)
        return _nan_row(seed, t, f"error:{type(exc).__name__}:{exc}".replace(",", ";")[:200]), []


# -- assessment ----------------------------------------------------------------------


def _f(x) -> float:
    try:
        return float(x)
    except (TypeError, ValueError):
        return math.nan


def _median(vals) -> float:
    v = np.array([_f(x) for x in vals], dtype=float)
    v = v[~np.isnan(v)]
    return float(np.median(v)) if v.size else math.nan


def trend_table(rows: list) -> list:
    """Per-t medians over seeds of the successful cells."""
    out = []
    for t in sorted({_f(r["t"]) for r in rows}):
        ok = [r for r in rows if _f(r["t"]) == t and r["status"] == "ok"]
        col = lambda k: [r[k] for r in ok]
        out.append({
            "t": t, "n_ok": len(ok),
            "median_mass_fraction": _median(col("mass_fraction_eps0")),
            "median_d_R_potential": _median(col("d_R_potential")),
            "median_d_R_solution": _median(col("d_R_solution")),
            "median_abs_h_t_minus_psi": _median(np.abs([_f(x) for x in col("h_t_minus_psi")])),
            "median_abs_residual": _median(np.abs([_f(x) for x in col("residual")])),
            "median_abs_residual_T": _median(np.abs([_f(x) for x in col("residual_T")])),
            "median_gap": _median(col("gap")),
            "median_u2_fraction": _median(col("u2_fraction")),
            "median_n_gamma": _median(col("n_gamma")),
            "max_n_gamma": float(np.nanmax([_f(x) for x in col("n_gamma")])) if ok else math.nan,
            "median_gamma_min_distance": _median(col("gamma_min_distance")),
            "median_decay_slope": _median(col("decay_slope")),
        })
    return out


def assess(rows: list, run_id: str, chi: float | None = None) -> VerificationReport:
    """Hard checks per cell plus trend checks across the t-grid."""
    rep = VerificationReport(run_id)
    for r in rows:
        tag = dict(seed=int(_f(r["seed"])), t=_f(r["t"]))
        if r["status"] != "ok":
            rep.add("cell_completed", 0, 1, False, "hard", inputs=tag, status=r["status"], **tag)
            continue
        if _f(r["log_U_over_t"]) > _f(r["h_T"]) + SLACK:
            rep.add("rate_below_height", _f(r["log_U_over_t"]) - _f(r["h_T"]), SLACK, False, "hard", inputs=tag, **tag)
        if not math.isnan(_f(r["split_recon_error"])):
            rep.add("split_reconstruction", _f(r["split_recon_error"]), RECON_TOL, _f(r["split_recon_error"]) <= RECON_TOL, "hard", inputs=tag, **tag)
            rep.add("split_nonnegative", _f(r["split_min_component"]), -NEG_TOL, _f(r["split_min_component"]) >= -NEG_TOL, "hard", inputs=tag, **tag)
            rep.add("u2_parseval_bound", _f(r["u2_bound_slack"]), 0.0, _f(r["u2_bound_slack"]) >= -SLACK, "hard", inputs=tag, **tag)
        if _f(r["thm41_checked"]) == 1:
            rep.add("superposition_bound", _f(r["thm41_violations"]), 0, _f(r["thm41_violations"]) == 0, "hard", inputs=tag, **tag)
    table = trend_table(rows)
    rep.trends["table"] = table
    if len(table) >= 2:
        ts = [row["t"] for row in table]
        get = lambda k: [row[k] for row in table]
        trend_check(rep, "mass_fraction_nondecreasing", ts, get("median_mass_fraction"), "nondecreasing")
        trend_check(rep, "d_R_potential_decreasing", ts, get("median_d_R_potential"), "decreasing")
        trend_check(rep, "d_R_solution_decreasing", ts, get("median_d_R_solution"), "decreasing")
        trend_check(rep, "h_minus_psi_decreasing", ts, get("median_abs_h_t_minus_psi"), "decreasing")
        trend_check(rep, "residual_decreasing", ts, get("median_abs_residual"), "decreasing")
        trend_check(rep, "u2_fraction_decreasing", ts, get("median_u2_fraction"), "decreasing")
    if table:
        last = table[-1]
        t = last["t"]
        mf = last["median_mass_fraction"]
        rep.add("mass_fraction_at_tmax", mf, 0.8, bool(mf >= 0.8), "trend", t=t)
        sep = last["median_gamma_min_distance"]
        rep.add("gamma_separation_at_tmax", sep, math.sqrt(t), bool(sep >= math.sqrt(t)), "trend", t=t)
        ng = last["median_n_gamma"]
        rep.add("gamma_count_at_tmax", ng, math.sqrt(t), bool(ng <= math.sqrt(t)), "trend", t=t)
        if chi is not None:
            res = last["median_abs_residual"]
            rep.add("residual_at_tmax", res, 0.5 * chi, bool(res < 0.5 * chi), "trend", t=t)
    return rep


# -- experiment ----------------------------------------------------------------------


@dataclass
class RunArtifacts:
    config: ExperimentConfig
    rows: list
    mass_rows: list
    report: VerificationReport
    shape: OptimalShape
    files: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, write: bool = True, figures: bool = True) -> RunArtifacts:
    cfg.validate()
    shape = shape_for(cfg)
    out_dir = Path(cfg.out)
    jobs = [(cfg, s, t, out_dir) for s in cfg.seeds for t in cfg.t_grid]
    log.info("running %d cells on %d thread(s)", len(jobs), threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_safe_cell, jobs))
    else:
        results = [_safe_cell(j) for j in jobs]
    rows = [r for r, _ in results]
    mass_rows = [m for _, ms in results for m in ms]
    rep = assess(rows, cfg.digest(), shape.chi)
    art = RunArtifacts(cfg, rows, mass_rows, rep, shape)
    if write:
        emit_report(art, out_dir, figures=figures)
    return art


# -- files ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if float(v).is_integer() and abs(v) < 1e15:
            return str(int(v))
        return FLOAT_FMT % float(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True, default=str)
    return str(v)


def write_csv(path, header: list, rows: list) -> str:
    """Fixed header, '%.12g' floats, '\\n' line ends; returns the sha256 of the bytes."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in header])
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def profile_rows(shape: OptimalShape) -> list:
    """1-d profile f, v and the axis slices of V_rho and w_rho through the origin."""
    k = np.arange(-shape.R, shape.R + 1)
    v = np.asarray(shape.profile_v, dtype=float)
    f = np.asarray(shape.profile_f, dtype=float)
    V = f + (shape.dim - 1) * f[shape.R]
    w = v / v[shape.R]
    return [{"k": int(a), "f": float(b), "v": float(c), "V": float(e), "w": float(g)}
            for a, b, c, e, g in zip(k, f, v, V, w)]


def emit_report(art: RunArtifacts, out_dir, figures: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["cells.csv"] = write_csv(out / "cells.csv", CELL_HEADER, art.rows)
    files["mass.csv"] = write_csv(out / "mass.csv", MASS_HEADER, art.mass_rows)
    files["trends.csv"] = write_csv(out / "trends.csv", TREND_HEADER, art.report.trends.get("table", []))
    checks = [{"name": c.name, "kind": c.kind, "value": c.value, "threshold": c.threshold,
               "passed": c.passed, "params": c.params} for c in art.report.checks]
    files["checks.csv"] = write_csv(out / "checks.csv", CHECK_HEADER, checks)
    files["profile.csv"] = write_csv(out / "profile.csv", PROFILE_HEADER, profile_rows(art.shape))
    meta = {
        "config": art.config.as_dict(), "config_digest": art.config.digest(), "seeds": art.config.seeds,
        "deviations": art.config.deviations(), "chi": art.shape.chi, "files": files,
        "hard_failures": len(art.report.hard_failures), "trend_flags": len(art.report.trend_failures),
        "slopes": {k: v["slope"] for k, v in art.report.trends.items() if k != "table"},
    }
    (out / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    (out / "report.txt").write_text(art.report.text() + "\n")
    if figures:
        from .plotting import render_run
        render_run(out)
    art.files = files
    return files


def load_run(run_dir) -> tuple[ExperimentConfig, list]:
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "report.json").read_text())
    cfg = ExperimentConfig.from_dict(meta["config"])
    return cfg, read_csv(run_dir / "cells.csv")


# -- sweeps --------------------------------------------------------------------------

AXES = ("rho", "a", "delta", "t")


def with_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "rho":
        return dataclasses.replace(cfg, model=DoubleExp(float(value)).descriptor())
    if axis == "a":
        return dataclasses.replace(cfg, a=float(value))
    if axis == "delta":
        return dataclasses.replace(cfg, delta=float(value))
    if axis == "t":
        return dataclasses.replace(cfg, t_grid=[float(value)])
    raise ValueError(f"axis must be one of {AXES}")


def sweep(cfg: ExperimentConfig, axis: str, values, threads: int = 1, write: bool = True, figures: bool = True) -> list:
    """One experiment per axis value; returns the aggregated per-(value, t) medians."""
    rows = []
    base = Path(cfg.out)
    for v in values:
        c = with_axis(cfg, axis, v)
        c.out = str(base / f"{axis}={v:g}")
        art = run_experiment(c, threads=threads, write=write, figures=figures)
        for tr in art.report.trends["table"]:
            rows.append({"axis": axis, "value": float(v), "chi": art.shape.chi, **tr})
    if write:
        base.mkdir(parents=True, exist_ok=True)
        write_csv(base / "sweep.csv", SWEEP_HEADER, rows)
        if figures:
            from .plotting import render_sweep
            render_sweep(base / "sweep.csv", base)
    return rows
