"""Command line: shape, simulate, islands, verify, sweep.

Exit status is 1 when any hard check fails (or, with --strict, when a trend
check is flagged), 0 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ExperimentConfig, write_csv

log = logging.getLogger("pamislands")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [int(s) for s in args.seed]
    if getattr(args, "t", None):
        cfg.t_grid = [float(t) for t in args.t]
    if args.out:
        cfg.out = args.out
    return cfg.validate()


def _exit(report, strict: bool) -> int:
    print(report.text() if len(report.checks) < 60 else _summary(report))
    return 0 if report.ok(strict) else 1


def _summary(report) -> str:
    hard = report.hard_failures
    lines = [f"run {report.run_id}: {len(report.checks)} checks, {len(hard)} hard failures, "
             f"{len(report.trend_failures)} trend flags"]
    for c in report.checks:
        if c.kind != "hard" or not c.passed:
            mark = "PASS" if c.passed else ("FAIL" if c.kind == "hard" else "FLAG")
            lines.append(f"  [{mark}] {c.name}: {c.value:.6g} (threshold {c.threshold:.6g}) {c.params or ''}")
    return "\n".join(lines)


# -- subcommands ---------------------------------------------------------------------


def cmd_shape(args) -> int:
    from .plotting import plot_shape
    from .shape import build_optimal_shape, chi_dual, chi_primal, island_radius

    rho = math.inf if args.rho in ("inf", "infinity") else float(args.rho)
    shape = build_optimal_shape(rho, args.d, args.R, args.tol)
    out = Path(args.out or "shape_out")
    out.mkdir(parents=True, exist_ok=True)
    info = {"rho": rho, "d": args.d, "R": args.R, "chi": shape.chi, "lambda_V": shape.lambda_V,
            "lambda_V_dotted": shape.lambda_V_dotted, "eigen_residual": shape.eigen_residual,
            "radius": {f"{e:g}": island_radius(shape, e) for e in args.eps}}
    if args.routes and math.isfinite(rho):
        info["chi_primal"] = chi_primal(rho, args.R, args.d).chi
        info["chi_dual"] = chi_dual(rho, args.R, args.d).chi
    if math.isfinite(rho):
        write_csv(out / "profile.csv", harness.PROFILE_HEADER, harness.profile_rows(shape))
        plot_shape(shape, out / "profile.png")
    (out / "shape.json").write_text(json.dumps(info, indent=2, default=str) + "\n")
    print(json.dumps(info, indent=2, default=str))
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    art = harness.run_experiment(cfg, threads=args.threads, figures=not args.no_figures)
    print(f"wrote {cfg.out}")
    return _exit(art.report, args.strict)


def cmd_islands(args) -> int:
    from .islands import attach_gamma_star, capital_gaps, decompose
    from .lattice import Box
    from .pamsolve import macrobox_radius, solve_pam
    from .randfield import height, load_field, sample_field

    cfg = _config(args)
    seed = cfg.seeds[0]
    t = cfg.t_grid[0]
    T = macrobox_radius(t, cfg.exponent)
    box = Box.centered(cfg.d, T)
    xi = load_field(args.field) if args.field else sample_field(cfg.tail, box, seed)
    if xi.box != box:
        box = xi.box
    shape = harness.shape_for(cfg)
    h = height(xi)
    dec = decompose(xi, T, h, shape.chi, cfg.params, cfg.rho)
    u = solve_pam(xi, box, t, method=cfg.method, tol=cfg.tol)
    attach_gamma_star(dec, u, t)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    opt = dec.optimal_capitals
    huge = dict(zip(map(tuple, opt.tolist()), dec.huge_eigenvalues))
    g = set(map(tuple, dec.gamma.tolist()))
    gs = set(map(tuple, dec.gamma_star.tolist()))
    rows = []
    for c, lam, is_opt in zip(dec.capitals.tolist(), dec.large_eigenvalues, dec.optimal):
        c = tuple(c)
        rows.append({"site": " ".join(map(str, c)), "xi": xi.value(c), "lambda_large": lam,
                     "optimal": int(is_opt), "lambda_huge": huge.get(c, math.nan),
                     "in_gamma": int(c in g), "in_gamma_star": int(c in gs)})
    write_csv(out / "capitals.csv", ["site", "xi", "lambda_large", "optimal", "lambda_huge", "in_gamma", "in_gamma_star"], rows)
    gaps = capital_gaps(xi, dec, shape.lambda_V - shape.lambda_V_dotted)
    summary = {**dec.summary(), "t": t, "seed": seed, "chi": shape.chi, "gap_floor": cfg.params.gap_floor(T, cfg.d),
               "frak_d": cfg.params.frak_d(T, cfg.rho), "capital_gaps": gaps}
    (out / "islands.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    print(json.dumps(summary, indent=2, default=str))
    return 0


def cmd_verify(args) -> int:
    run = Path(args.run)
    cfg, rows = harness.load_run(run)
    rep = harness.assess(rows, cfg.digest(), json.loads((run / "report.json").read_text())["chi"])
    write_csv(run / "verify_trends.csv", harness.TREND_HEADER, rep.trends["table"])
    (run / "verify_report.txt").write_text(rep.text() + "\n")
    return _exit(rep, args.strict)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [float(v) for v in args.values.split(",")] if args.values else cfg.t_grid
    rows = harness.sweep(cfg, args.axis, values, threads=args.threads, figures=not args.no_figures)
    worst = 0
    for v in values:
        sub = Path(cfg.out) / f"{args.axis}={v:g}"
        c, cells = harness.load_run(sub)
        rep = harness.assess(cells, c.digest(), None)
        worst = max(worst, 0 if rep.ok(args.strict) else 1)
    for r in rows:
        print(f"{r['axis']}={r['value']:g} t={r['t']:g} chi={r['chi']:.6f} mass={r['median_mass_fraction']:.4g} "
              f"dR_pot={r['median_d_R_potential']:.4g} decay={r['median_decay_slope']:.4g}")
    return worst


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pamislands", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON experiment config")
            sp.add_argument("--seed", type=int, nargs="+", help="override the seed list")
            sp.add_argument("--t", type=float, nargs="+", help="override the t-grid")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--strict", action="store_true", help="trend flags also fail the exit code")

    s = sub.add_parser("shape", help="optimal shape, chi and island radii")
    s.add_argument("--rho", default="4")
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--R", type=int, default=20)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.01])
    s.add_argument("--routes", action="store_true", help="also run the primal and dual optimizers")
    common(s, config=False)
    s.set_defaults(func=cmd_shape)

    s = sub.add_parser("simulate", help="run the full pipeline over seeds and the t-grid")
    common(s)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("islands", help="island decomposition for one (seed, t)")
    common(s)
    s.add_argument("--field", help="saved field file instead of sampling")
    s.set_defaults(func=cmd_islands)

    s = sub.add_parser("verify", help="rebuild the verification report from a run directory")
    s.add_argument("run", help="run directory written by simulate")
    common(s, config=False)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="one experiment per value of a parameter axis")
    common(s)
    s.add_argument("--axis", choices=harness.AXES, default="t")
    s.add_argument("--values", help="comma separated axis values (default: the t-grid)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
