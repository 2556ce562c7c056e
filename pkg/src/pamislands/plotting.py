"""Figures rendered from the CSV artifacts of a run (never from live objects)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for k in rows[0] if rows else []:
        try:
            cols[k] = np.array([float(r[k]) for r in rows])
        except ValueError:
            cols[k] = np.array([r[k] for r in rows])
    return cols


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_profile(profile_csv, out_png):
    c = _columns(profile_csv)
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(9, 3.5))
    a0.plot(c["k"], c["V"], "o-", ms=3, label=r"$V_\rho$")
    a0.set_xlabel("k")
    a0.set_ylim(max(np.nanmin(c["V"]), -40), 1)
    a0.legend()
    a1.semilogy(c["k"], c["w"], "o-", ms=3, label=r"$w_\rho$")
    a1.semilogy(c["k"], c["v"], "s--", ms=3, label=r"$v_\rho$")
    a1.set_xlabel("k")
    a1.legend()
    _save(fig, out_png)


def plot_trends(trends_csv, out_dir):
    c = _columns(trends_csv)
    if not c:
        return []
    t = c["t"]
    out_dir = Path(out_dir)
    made = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, c["median_mass_fraction"], "o-")
    ax.axhline(0.8, ls=":", c="gray")
    ax.set_xlabel("t")
    ax.set_ylabel(r"median mass in $B_r(\Gamma^*)$")
    ax.set_ylim(-0.02, 1.02)
    _save(fig, out_dir / "mass_concentration.png")
    made.append("mass_concentration.png")

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, c["median_d_R_potential"], "o-", label="potential")
    ax.plot(t, c["median_d_R_solution"], "s-", label="solution")
    ax.set_xlabel("t")
    ax.set_ylabel(r"median $d_R$")
    ax.legend()
    _save(fig, out_dir / "d_R.png")
    made.append("d_R.png")

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, c["median_abs_residual"], "o-", label=r"$|t^{-1}\log U - h_t + \chi|$")
    ax.plot(t, c["median_abs_residual_T"], "s--", label="macrobox height")
    ax.plot(t, c["median_abs_h_t_minus_psi"], "^:", label=r"$|h_t - \psi(d\log t)|$")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    _save(fig, out_dir / "residual.png")
    made.append("residual.png")

    fig, ax = plt.subplots(figsize=(5, 3.5))
    g = c["median_gap"]
    ok = np.isfinite(g) & (g > 0)
    if ok.any():
        ax.semilogy(t[ok], g[ok], "o-")
    ax.set_xlabel("t")
    ax.set_ylabel("median spectral gap")
    _save(fig, out_dir / "gap.png")
    made.append("gap.png")
    return made


def render_run(run_dir):
    run_dir = Path(run_dir)
    plot_profile(run_dir / "profile.csv", run_dir / "profile.png")
    return ["profile.png"] + plot_trends(run_dir / "trends.csv", run_dir)


def render_sweep(sweep_csv, out_dir):
    c = _columns(sweep_csv)
    if not c:
        return
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(9, 3.5))
    vals = np.unique(c["value"])
    chi = [c["chi"][c["value"] == v][0] for v in vals]
    a0.plot(vals, chi, "o-")
    a0.set_xlabel(str(c["axis"][0]))
    a0.set_ylabel(r"$\chi$")
    for v in vals:
        sel = c["value"] == v
        a1.plot(c["t"][sel], c["median_mass_fraction"][sel], "o-", label=f"{v:g}")
    a1.set_xlabel("t")
    a1.set_ylabel("median mass fraction")
    a1.legend(fontsize=7)
    _save(fig, Path(out_dir) / "sweep.png")


def plot_shape(shape, out_png):
    """Direct profile figure for the `shape` subcommand."""
    k = np.arange(-shape.R, shape.R + 1)
    v = np.asarray(shape.profile_v, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(k, v / v[shape.R], "o-", ms=3)
    ax.set_title(f"rho={shape.rho:g}, chi={shape.chi:.6f}" if math.isfinite(shape.rho) else "rho=inf")
    ax.set_xlabel("k")
    _save(fig, out_png)
