"""Dirichlet solutions of du/dt = Delta u + xi u with u(0) = delta_0.

Solutions are stored as (values, log_scale) with u = values * e^{log_scale};
log_scale is t times the maximum of xi on the domain, so values stay of
order one even when U(t) itself is far beyond double range.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .lattice import Box, as_site_array
from .randfield import PotentialField, TailModel, height, sample_field
import scipy.sparse as sp

from .spectral import neighbor_pairs, principal_eigenvalue, semigroup_apply, uniformized_expmv

log = logging.getLogger(__name__)


@dataclass
class SolutionField:
    t: float
    box: Box
    values: np.ndarray  # scaled, in box.sites() order
    log_scale: float = 0.0
    method: str = "krylov"

    @property
    def u(self) -> np.ndarray:
        """Unscaled values (may overflow for large t)."""
        with np.errstate(over="ignore", invalid="ignore"):
            return self.values * np.exp(self.log_scale)

    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(self.values, 0.0)) + self.log_scale

    def at(self, sites) -> np.ndarray:
        """Scaled values at the given sites (same log_scale)."""
        return self.values[self.box.index_of(as_site_array(sites, self.box.d))]

    @property
    def log_total_mass(self) -> float:
        s = float(np.sum(self.values))
        return math.log(s) + self.log_scale if s > 0 else -math.inf


def _origin_vector(box: Box) -> np.ndarray:
    f0 = np.zeros(len(box))
    f0[box.index_of(np.zeros((1, box.d), dtype=np.int64))[0]] = 1.0
    return f0


def _field_on(xi: PotentialField, box: Box) -> np.ndarray:
    if not box.issubset(xi.box):
        raise ValueError("the potential does not cover the requested box")
    return xi.values if box == xi.box else xi.at(box.sites())


def solve_pam(xi: PotentialField, box: Box | None = None, t: float = 1.0, method: str = "uniformization", tol: float = 1e-12, shift: float | None = None, mask=None) -> SolutionField:
    """u(t, .) on `box` with zero boundary condition, started from delta_0.

    The default method, uniformization, is accurate entrywise.  Krylov and
    eigen are accurate only relative to the norm of u, which is not enough
    when a mode behind a deep trough starts below roundoff and later takes
    over the mass; they are kept as cross-checks.

    `mask` (boolean, box order) removes sites from the domain, which is how
    Dirichlet conditions on interior sets are imposed.
    """
    box = xi.box if box is None else box
    if not bool(box.contains(np.zeros((1, box.d), dtype=np.int64))[0]):
        raise ValueError("the origin must lie in the box")
    V = _field_on(xi, box).copy()
    if mask is not None:
        V[~np.asarray(mask, dtype=bool)] = -np.inf
    fin = V[np.isfinite(V)]
    if shift is None:
        shift = float(fin.max()) if fin.size else 0.0
    vals, ls = semigroup_apply(box.sites(), V, t, _origin_vector(box), method=method, shift=shift, tol=tol, return_log=True)
    return SolutionField(t, box, vals, shift * t + ls, method)


def total_mass(u: SolutionField) -> float:
    """U(t) = sum of u(t, x); inf when it exceeds double range (see log_total_mass)."""
    lm = u.log_total_mass
    try:
        return math.exp(lm)
    except OverflowError:
        return math.inf


# -- three-way split --------------------------------------------------------------


@dataclass
class SolutionSplit:
    t: float
    box: Box
    outer_box: Box
    gamma: np.ndarray
    u1: np.ndarray  # all on outer_box.sites(), sharing log_scale
    u2: np.ndarray
    u3: np.ndarray
    full: np.ndarray
    log_scale: float
    lambda_B_minus_gamma: float
    boundary_leak: float
    log_u2_mass: float = -math.inf
    info: dict = field(default_factory=dict)

    def reconstruction_error(self) -> float:
        """max |u1+u2+u3 - u| / max u, u from the independent reference solve."""
        return float(np.max(np.abs(self.u1 + self.u2 + self.u3 - self.full)) / np.max(self.full))

    def min_component(self) -> float:
        """Most negative entry among u1, u2, u3, relative to max u."""
        return float(min(self.u1.min(), self.u2.min(), self.u3.min()) / np.max(self.full))

    def u2_mass_bound(self) -> tuple[float, float]:
        """(log sum_B u2, log(sqrt|B|) + t lambda_{B minus Gamma})."""
        lhs = self.log_u2_mass
        rhs = 0.5 * math.log(len(self.box)) + self.t * self.lambda_B_minus_gamma
        return lhs, rhs

    def mass_fractions(self) -> dict:
        tot = float(self.full.sum())
        return {k: float(getattr(self, k).sum() / tot) for k in ("u1", "u2", "u3")}


def path_class_generator(sites: np.ndarray, V: np.ndarray, in_B: np.ndarray, in_gamma: np.ndarray):
    """Forward generator of the walk on sites x {avoided Gamma, hit Gamma, left B}.

    A walk starts in class 2 (class 3 if it starts on Gamma), moves to class
    3 on entering Gamma and to class 1 on leaving B; classes never revert.
    Returns (M, state_site, state_class) with M acting on column vectors of
    path weights, so e^{tM} delta_start carries u1, u2, u3 side by side.
    """
    n = len(sites)
    fin = np.isfinite(V)
    allowed = {2: fin & in_B & ~in_gamma, 3: fin & in_B, 1: fin}
    state_site, state_class = [], []
    index = {}
    for c in (1, 2, 3):
        idx = np.flatnonzero(allowed[c])
        index[c] = np.full(n, -1)
        index[c][idx] = np.arange(len(state_site), len(state_site) + idx.size)
        state_site.extend(idx)
        state_class.extend([c] * idx.size)
    state_site = np.asarray(state_site, dtype=np.int64)
    state_class = np.asarray(state_class)
    i, j = neighbor_pairs(sites)
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    rows, cols = [], []
    # class 1 stays in class 1
    ok = fin[src] & fin[dst]
    rows.append(index[1][dst[ok]]); cols.append(index[1][src[ok]])
    # class 3: to class 1 when leaving B, otherwise class 3
    ok = allowed[3][src] & fin[dst]
    rows.append(np.where(in_B[dst[ok]], index[3][dst[ok]], index[1][dst[ok]])); cols.append(index[3][src[ok]])
    # class 2: to class 1 outside B, class 3 on Gamma, else class 2
    ok = allowed[2][src] & fin[dst]
    dd = dst[ok]
    target = np.where(~in_B[dd], index[1][dd], np.where(in_gamma[dd], index[3][dd], index[2][dd]))
    rows.append(target); cols.append(index[2][src[ok]])
    rows = np.concatenate(rows); cols = np.concatenate(cols)
    m = len(state_site)
    d = sites.shape[1]
    off = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(m, m))
    M = off + sp.diags(V[state_site] - 2.0 * d, format="csr")
    return M, state_site, state_class


def split_contributions(xi: PotentialField, box: Box, gamma, t: float, outer_box: Box | None = None, reference: str = "uniformization", tol: float = 1e-12, leak_tol: float = 1e-8) -> SolutionSplit:
    """u = u1 + u2 + u3 on the outer box, each from its own path class.

    u2: paths staying in B and avoiding Gamma; u3: paths staying in B and
    hitting Gamma; u1: paths that leave B (but not the outer box), standing
    in for the escape term.  The three are propagated together by
    uniformization, so each is nonnegative and accurate entrywise.  `full`
    is an independent solve on the outer box (method `reference`) against
    which the sum is compared.  The outer box defaults to twice the side of B.
    """
    d = box.d
    gamma = as_site_array(gamma, d) if len(gamma) else np.zeros((0, d), dtype=np.int64)
    if gamma.shape[0] and not np.all(box.contains(gamma)):
        raise ValueError("Gamma must lie inside B")
    if outer_box is None:
        outer_box = Box(box.center, 2 * box.radius + 1)
    if not box.issubset(outer_box):
        raise ValueError("B must lie inside the outer box")
    if not bool(box.contains(np.zeros((1, d), dtype=np.int64))[0]):
        raise ValueError("the origin must lie in B")
    sites = outer_box.sites()
    V = _field_on(xi, outer_box)
    in_B = box.contains(sites)
    in_gamma = np.zeros(len(sites), dtype=bool)
    if gamma.shape[0]:
        in_gamma[outer_box.index_of(gamma)] = True
    M, st_site, st_class = path_class_generator(sites, V, in_B, in_gamma)
    o = outer_box.index_of(np.zeros((1, d), dtype=np.int64))[0]
    start_class = 3 if in_gamma[o] else 2
    p0 = np.zeros(M.shape[0])
    p0[np.flatnonzero((st_site == o) & (st_class == start_class))] = 1.0
    p, scale = uniformized_expmv(M, p0, t, return_log=True)
    comps = {}
    for c in (1, 2, 3):
        sel = st_class == c
        comps[c] = np.bincount(st_site[sel], weights=p[sel], minlength=len(sites))
    ref = solve_pam(xi, outer_box, t, method=reference, tol=tol)
    full = ref.values * np.exp(ref.log_scale - scale)
    layer = np.any(np.abs(sites - np.asarray(outer_box.center)) == outer_box.radius, axis=1)
    total = comps[1] + comps[2] + comps[3]
    leak = float(total[layer].sum() / total.sum())
    if leak > leak_tol:
        warnings.warn(f"outer box too small: boundary mass fraction {leak:.2e}", stacklevel=2)
    Vb = V.copy()
    Vb[~(in_B & ~in_gamma)] = -np.inf
    lam = principal_eigenvalue(sites, Vb)
    s2 = float(comps[2].sum())
    log_u2 = math.log(s2) + scale if s2 > 0 else -math.inf
    return SolutionSplit(t, box, outer_box, gamma, comps[1], comps[2], comps[3], full, scale, lam, leak, log_u2)


# -- Monte Carlo Feynman-Kac ---------------------------------------------------------


@dataclass
class MCEstimate:
    box: Box
    mean: np.ndarray  # u(t, x) estimates in box order
    stderr: np.ndarray
    n_paths: int
    killed_fraction: float
    total: float = math.nan  # estimate of U(t)
    total_stderr: float = math.nan


def _simulate_batch(values, box: Box, t: float, n: int, rng: np.random.Generator):
    d = box.d
    pos = np.zeros((n, d), dtype=np.int64)
    clock = np.zeros(n)
    logw = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    running = np.ones(n, dtype=bool)
    while running.any():
        idx = np.flatnonzero(running)
        hold = rng.exponential(1.0 / (2 * d), size=idx.size)
        rem = t - clock[idx]
        dt = np.minimum(hold, rem)
        logw[idx] += values[box.index_of(pos[idx])] * dt
        clock[idx] += dt
        jumping = hold < rem
        running[idx[~jumping]] = False
        j = idx[jumping]
        axis = rng.integers(0, d, size=j.size)
        pos[j, axis] += rng.integers(0, 2, size=j.size) * 2 - 1
        out = j[~box.contains(pos[j])]
        alive[out] = False
        running[out] = False
    return pos, logw, alive


def feynman_kac_mc(xi: PotentialField, t: float, n_paths: int, seed: int, box: Box | None = None, batch: int = 20000) -> MCEstimate:
    """u(t, x) = E_0[exp(int_0^t xi(X_s) ds) 1{X_t = x}] for every x at once.

    X is the continuous-time simple random walk with total jump rate 2d,
    killed on leaving the box.  Batches get independent streams spawned from
    `seed`.
    """
    box = xi.box if box is None else box
    values = _field_on(xi, box)
    n = len(box)
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    killed = 0
    t1 = t2 = 0.0
    sizes = [batch] * (n_paths // batch) + ([n_paths % batch] if n_paths % batch else [])
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    for m, ss in zip(sizes, streams):
        pos, logw, alive = _simulate_batch(values, box, t, m, np.random.default_rng(ss))
        killed += int((~alive).sum())
        w = np.exp(logw[alive])
        k = box.index_of(pos[alive])
        np.add.at(s1, k, w)
        np.add.at(s2, k, w * w)
        t1 += float(w.sum())
        t2 += float((w * w).sum())
    mean = s1 / n_paths
    var = np.maximum(s2 / n_paths - mean**2, 0.0)
    tm = t1 / n_paths
    tv = max(t2 / n_paths - tm**2, 0.0)
    return MCEstimate(box, mean, np.sqrt(var / max(n_paths - 1, 1)), n_paths, killed / n_paths,
                      tm, math.sqrt(tv / max(n_paths - 1, 1)))


# -- second-order asymptotics ------------------------------------------------------------


def macrobox_radius(t: float, exponent: float = 2.0) -> int:
    """floor(t log^exponent t); the default exponent 2 gives the box B_{t log^2 t}."""
    return max(1, int(math.floor(t * math.log(t) ** exponent)))


def mass_asymptotics_series(model: TailModel, t_grid, seeds, chi: float, d: int = 1, box_exponent: float = 2.0, method: str = "uniformization") -> list[dict]:
    """Per (seed, t): h on B_{t log^2 t}, (1/t) log U(t) and the residual (1/t) log U - h + chi.

    h_t (the maximum over B_t) and the residual against it are reported too.
    """
    rows = []
    for seed in seeds:
        for t in t_grid:
            box = Box.centered(d, macrobox_radius(t, box_exponent))
            xi = sample_field(model, box, seed)
            h = height(xi)
            h_t = height(xi, Box.centered(d, int(math.floor(t))))
            u = solve_pam(xi, box, t, method=method, tol=1e-10)
            rate = u.log_total_mass / t
            rows.append({
                "seed": seed, "t": t, "h": h, "h_t": h_t, "log_U_over_t": rate,
                "residual": rate - h + chi, "residual_t": rate - h_t + chi,
                "psi_d_log_t": float(model.psi(d * math.log(t))),
            })
            if rate > h + 1e-9:
                log.warning("(1/t) log U exceeds h for seed %s, t %s", seed, t)
    return rows
