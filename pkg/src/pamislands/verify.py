"""Numerical checks of the localization picture and of the finite-t inequalities.

Hard checks are exact statements at finite t and must hold up to float
slack.  Trend checks are asymptotic statements and are judged by the sign of
a Theil-Sen slope across the t-grid.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.stats import theilslopes

from .lattice import Box, as_site_array, cube_neighborhood_array
from .pamsolve import SolutionField, SolutionSplit, split_contributions
from .randfield import PotentialField
from .shape import OptimalShape, d_R_metric
from .spectral import anchor_component, hamiltonian, principal_eigenpair, principal_eigenvalue

SLACK = 1e-10


# -- report -----------------------------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    kind: str = "hard"  # hard | trend | diagnostic
    params: dict = field(default_factory=dict)
    digest: str = ""


@dataclass
class VerificationReport:
    run_id: str
    checks: list = field(default_factory=list)
    trends: dict = field(default_factory=dict)

    def add(self, name, value, threshold, passed, kind="hard", inputs=None, **params) -> Check:
        c = Check(name, float(value), float(threshold), bool(passed), kind, params, digest(inputs) if inputs is not None else "")
        self.checks.append(c)
        return c

    @property
    def hard_failures(self) -> list:
        return [c for c in self.checks if c.kind == "hard" and not c.passed]

    @property
    def trend_failures(self) -> list:
        return [c for c in self.checks if c.kind == "trend" and not c.passed]

    def ok(self, strict: bool = False) -> bool:
        return not self.hard_failures and not (strict and self.trend_failures)

    def as_dict(self) -> dict:
        return {"run_id": self.run_id, "checks": [asdict(c) for c in self.checks], "trends": self.trends}

    def text(self) -> str:
        lines = [f"run {self.run_id}"]
        for c in self.checks:
            mark = "PASS" if c.passed else ("FAIL" if c.kind == "hard" else "FLAG")
            lines.append(f"  [{mark}] {c.kind:<10s} {c.name}: {c.value:.6g} (threshold {c.threshold:.6g})")
        return "\n".join(lines)


def digest(obj) -> str:
    """Short sha256 of arrays or JSON-able objects."""
    h = hashlib.sha256()
    if isinstance(obj, np.ndarray):
        h.update(np.ascontiguousarray(obj).tobytes())
    else:
        h.update(json.dumps(obj, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def theil_sen(x, y) -> float:
    """Theil-Sen slope, nan when fewer than two finite points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(theilslopes(y[ok], x[ok])[0])


def trend_check(report: VerificationReport, name: str, x, y, direction: str) -> Check:
    """direction 'decreasing' passes on slope < 0, 'nondecreasing' on slope >= 0."""
    s = theil_sen(x, y)
    passed = (s < 0) if direction == "decreasing" else (s >= 0)
    report.trends[name] = {"x": list(map(float, x)), "y": list(map(float, y)), "slope": s}
    return report.add(name, s, 0.0, bool(passed and math.isfinite(s)), "trend", direction=direction)


# -- Theorem 1.2 style checks ---------------------------------------------------------------


def mass_concentration(u: SolutionField, gamma_star, r: int) -> float:
    """Fraction of U(t) carried by B_r(Gamma*)."""
    if len(gamma_star) == 0:
        return 0.0
    s = cube_neighborhood_array(as_site_array(gamma_star, u.box.d), r)
    s = s[u.box.contains(s)]
    return float(u.values[u.box.index_of(s)].sum() / u.values.sum())


def _window(box: Box, y, R: int):
    off = Box.centered(box.d, R).sites()
    s = off + np.asarray(y, dtype=np.int64)
    inside = box.contains(s)
    return s, inside


def potential_shape_check(xi: PotentialField, gamma_star, h: float, shape: OptimalShape, R: int) -> tuple[float, list]:
    """max over y of d_R(xi(y + .) - h, V_rho); sites outside the box count as -inf."""
    if len(gamma_star) == 0:
        return 0.0, []
    target = shape.V_on(R)
    out = []
    for y in as_site_array(gamma_star, xi.d):
        s, inside = _window(xi.box, y, R)
        f = np.full(len(s), -np.inf)
        f[inside] = xi.at(s[inside]) - h
        out.append(d_R_metric(f, target))
    return max(out), out


def solution_shape_check(u: SolutionField, gamma_star, shape: OptimalShape, R: int) -> tuple[float, list]:
    """max over y of d_R(log u(t, y + .) - log u(t, y), log w_rho)."""
    if len(gamma_star) == 0:
        return 0.0, []
    with np.errstate(divide="ignore"):
        target = np.log(shape.w_on(R))
    lv = u.log_values()
    out = []
    for y in as_site_array(gamma_star, u.box.d):
        s, inside = _window(u.box, y, R)
        f = np.full(len(s), -np.inf)
        f[inside] = lv[u.box.index_of(s[inside])]
        centre = lv[u.box.index_of(y[None, :])[0]]
        if not np.isfinite(centre):
            out.append(math.nan)
            continue
        out.append(d_R_metric(f - centre, target))
    return max(out), out


# -- Theorem 4.1 ---------------------------------------------------------------------------


def island_eigenfunction(xi: PotentialField, box: Box, gamma, y):
    """(lambda_y, v_y on box order) in (B minus Gamma) + y, v_y(y) = 1.

    The domain is cut down to the nearest-neighbour component of y; the
    eigenfunction is zero on every other component since walks from there
    cannot reach y.
    """
    sites = box.sites()
    V = xi.at(sites).copy() if box != xi.box else xi.values.copy()
    g = as_site_array(gamma, box.d)
    V[box.index_of(g)] = -np.inf
    iy = box.index_of(np.asarray(y, dtype=np.int64)[None, :])[0]
    V[iy] = xi.value(tuple(y))
    s, v = anchor_component(sites, V, y)
    lam = principal_eigenvalue(s, v)
    full = np.zeros(len(sites))
    full[box.index_of(s)] = anchored_eigenvector(s, v, lam, y)
    return lam, full


def anchored_eigenvector(s, v, lam: float, y, margin: float = 1e-6) -> np.ndarray:
    """Eigenvector for lam scaled to 1 at y.

    If lam clears the principal eigenvalue of the domain without y by
    `margin`, (lam - Delta - V) off y is a well-conditioned M-matrix and the
    linear solve keeps tiny entries accurate.  Otherwise the eigenfunction
    nearly vanishes at y and the normalized eigenvector is rescaled instead.
    """
    iy = int(np.flatnonzero(np.all(s == np.asarray(y), axis=1))[0])
    rest = np.delete(np.arange(len(s)), iy)
    out = np.ones(len(s))
    if rest.size == 0:
        return out
    lam_rest = principal_eigenvalue(s[rest], v[rest])
    if lam - lam_rest > margin * (1.0 + abs(lam)):
        H = hamiltonian(s, v).tocsr()
        M = (lam * sp.identity(rest.size, format="csr") - H[rest][:, rest]).tocsc()
        out[rest] = spsolve(M, np.asarray(H[rest][:, [iy]].todense()).ravel())
        return out
    pair = principal_eigenpair(s, v)
    e = pair.vector
    return e / e[iy]


def superposition_bound_check(xi: PotentialField, box: Box, gamma, t: float, r: int = 0, split: SolutionSplit | None = None) -> dict:
    """Pointwise w <= sum_y w(t,y) ||v_y||^2 v_y and the aggregate ratio bound, with w = u3."""
    gamma = as_site_array(gamma, box.d)
    if split is None:
        split = split_contributions(xi, box, gamma, t, outer_box=box, leak_tol=math.inf)
    idx = split.outer_box.index_of(box.sites())
    w = split.u3[idx]
    rhs = np.zeros_like(w)
    tail_factors = []
    outside = ~_in_neighbourhood(box, gamma, r)
    for y in gamma:
        lam, vy = island_eigenfunction(xi, box, gamma, y)
        n2 = float(np.sum(vy**2))
        wy = w[box.index_of(y[None, :])[0]]
        rhs += wy * n2 * vy
        tail_factors.append(n2 * float(vy[outside].sum()))
    scale = max(float(w.max()), 1e-300)
    viol = w - rhs
    ratio = float(w[outside].sum() / w.sum()) if w.sum() > 0 else 0.0
    bound = max(tail_factors) if tail_factors else 0.0
    return {
        "max_violation": float(viol.max() / scale),
        "n_violations": int(np.sum(viol > SLACK * scale)),
        "tail_ratio": ratio,
        "tail_bound": bound,
        "aggregate_ok": ratio <= bound + SLACK,
        "passed": bool(np.all(viol <= SLACK * scale) and ratio <= bound + SLACK),
    }


def _in_neighbourhood(box: Box, gamma: np.ndarray, r: int) -> np.ndarray:
    mask = np.zeros(len(box), dtype=bool)
    if len(gamma):
        s = cube_neighborhood_array(gamma, r)
        s = s[box.contains(s)]
        mask[box.index_of(s)] = True
    return mask


def eigenfunction_rep_check(xi: PotentialField, box: Box, gamma, y, n_paths: int = 100000, seed: int = 0, n_probes: int = 5, max_jumps: int = 100000) -> list[dict]:
    """Eigen-solver v_y against a Monte Carlo estimate of its path representation.

    v_y(x) = E_x exp(int_0^{tau_y} (xi - lambda_y)) 1{tau_y = tau_Gamma < exit from B},
    probed at the n_probes sites of y's component nearest to y.
    """
    gamma = as_site_array(gamma, box.d)
    y = np.asarray(y, dtype=np.int64)
    lam, vy = island_eigenfunction(xi, box, gamma, y)
    sites = box.sites()
    values = xi.at(sites)
    gmask = _in_neighbourhood(box, gamma, 0)
    iy = box.index_of(y[None, :])[0]
    cand = np.flatnonzero((vy > 0) & ~gmask)
    dist = np.abs(sites[cand] - y).sum(axis=1)
    probes = cand[np.lexsort((cand, dist))][:n_probes]
    rng = np.random.default_rng(seed)
    d = box.d
    rows = []
    for p in probes:
        pos = np.repeat(sites[p][None, :], n_paths, axis=0)
        logw = np.zeros(n_paths)
        hit_y = np.zeros(n_paths, dtype=bool)
        running = np.ones(n_paths, dtype=bool)
        for _ in range(max_jumps):
            idx = np.flatnonzero(running)
            if idx.size == 0:
                break
            hold = rng.exponential(1.0 / (2 * d), size=idx.size)
            logw[idx] += (values[box.index_of(pos[idx])] - lam) * hold
            axis = rng.integers(0, d, size=idx.size)
            pos[idx, axis] += rng.integers(0, 2, size=idx.size) * 2 - 1
            inside = box.contains(pos[idx])
            running[idx[~inside]] = False
            k = idx[inside]
            at = box.index_of(pos[k])
            stop = gmask[at]
            hit_y[k[stop & (at == iy)]] = True
            running[k[stop]] = False
        flagged = bool(running.any())
        wts = np.where(hit_y, np.exp(np.minimum(logw, 700.0)), 0.0)
        est = float(wts.mean())
        se = float(wts.std(ddof=1) / math.sqrt(n_paths))
        rel_se = se / est if est > 0 else math.inf
        rows.append({
            "probe": tuple(int(c) for c in sites[p]), "eigen": float(vy[p]), "mc": est, "stderr": se,
            "z": (est - vy[p]) / se if se > 0 else math.inf,
            "flagged": flagged or rel_se > 0.5,
        })
    return rows


def decay_profile(vy: np.ndarray, sites: np.ndarray, y, q: float) -> dict:
    """Least-squares slope of log v_y against l1 distance to y, and c = slope / log q."""
    y = np.asarray(y, dtype=np.int64)
    pos = vy > 0
    dist = np.abs(sites[pos] - y).sum(axis=1).astype(float)
    lv = np.log(vy[pos])
    if np.unique(dist).size < 2:
        return {"slope": math.nan, "r2": math.nan, "c": math.nan, "negative": False}
    A = np.c_[dist, np.ones_like(dist)]
    coef, *_ = np.linalg.lstsq(A, lv, rcond=None)
    pred = A @ coef
    ss = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 - float(np.sum((lv - pred) ** 2)) / ss if ss > 0 else 1.0
    return {"slope": float(coef[0]), "r2": r2, "c": float(coef[0] / math.log(q)), "negative": bool(coef[0] < 0)}


def localization_compare(xi: PotentialField, box: Box, gamma, y, R: int) -> dict:
    """Signed gaps between v_y and the B_R(y) eigenfunction v_y^(R) on B_R(y)."""
    y = np.asarray(y, dtype=np.int64)
    lam, vy = island_eigenfunction(xi, box, gamma, y)
    s, inside = _window(box, y, R)
    s = s[inside]
    pair = principal_eigenpair(s, xi.at(s), anchor=tuple(y))
    local = vy[box.index_of(s)]
    diff = local - pair.vector
    return {"max_gap": float(diff.max()), "min_gap": float(diff.min()), "lambda_y": lam, "lambda_R": pair.eigenvalue}


def u2_negligibility(split: SolutionSplit, h: float, chi: float) -> dict:
    """sum_B u2 / U, the Parseval-type bound on sum_B u2, and lambda_{B minus Gamma}(xi - h) against -chi."""
    lhs, rhs = split.u2_mass_bound()
    log_U = math.log(float(split.full.sum())) + split.log_scale
    return {
        "u2_fraction": math.exp(lhs - log_U) if math.isfinite(lhs) else 0.0,
        "log_u2_mass": lhs, "log_bound": rhs, "slack": rhs - lhs,
        "bound_ok": bool(lhs <= rhs + SLACK),
        "lambda_shifted": split.lambda_B_minus_gamma - h, "minus_chi": -chi,
    }
