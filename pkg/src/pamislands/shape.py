"""Optimal potential shapes and the two variational problems behind chi(rho).

Three routes to chi are provided and are meant to be cross-checked:

* the profile equation Delta v + 2 rho v log v = 0 on [-R, R] (zero outside),
  for which chi_R = d * rho * log ||v||_2^2;
* primal ascent of lambda(V) - rho log L(V) over potentials on B_R;
* entropic mirror descent of I(p) + rho J(p) over probability fields on B_R.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .lattice import Box
from .spectral import (
    hamiltonian,
    log_script_L,
    principal_eigenpair,
    principal_eigenvalue,
    neighbor_pairs,
)

log = logging.getLogger(__name__)


class ShapeError(RuntimeError):
    pass


class UniquenessWarning(UserWarning):
    pass


# -- profile equation ------------------------------------------------------------


@dataclass
class Profile:
    rho: float
    R: int
    log_v: np.ndarray  # on k = -R..R
    residual: float
    newton_steps: int

    @property
    def k(self) -> np.ndarray:
        return np.arange(-self.R, self.R + 1)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def log_norm2(self) -> float:
        """log ||v||_2^2."""
        return float(logsumexp(2.0 * self.log_v))


def gaussian_guess(rho: float, k: np.ndarray) -> np.ndarray:
    """log of exp(1/2 - rho k^2 / 2), the continuum solution."""
    return 0.5 - 0.5 * rho * np.asarray(k, dtype=float) ** 2


def _profile_system(u: np.ndarray, rho: float):
    # Equation divided by v: e^{u(k+1)-u(k)} + e^{u(k-1)-u(k)} - 2 + 2 rho u(k) = 0
    up = np.append(u[1:], -np.inf)
    um = np.insert(u[:-1], 0, -np.inf)
    a = np.exp(up - u)
    b = np.exp(um - u)
    f = a + b - 2.0 + 2.0 * rho * u
    n = u.size
    ab = np.zeros((3, n))
    ab[0, 1:] = a[:-1]
    ab[1] = 2.0 * rho - a - b
    ab[2, :-1] = b[1:]
    return f, ab


def _newton(u: np.ndarray, rho: float, tol: float, maxit: int = 100):
    for it in range(1, maxit + 1):
        f, ab = _profile_system(u, rho)
        nf = np.max(np.abs(f))
        if nf < tol:
            return u, it - 1, True
        du = solve_banded((1, 1), ab, -f)
        s = 1.0
        while s > 1e-6:
            fn, _ = _profile_system(u + s * du, rho)
            if np.all(np.isfinite(fn)) and np.max(np.abs(fn)) < nf:
                break
            s *= 0.5
        u = u + s * du
        if np.max(np.abs(s * du)) < 1e-15 * (1 + np.max(np.abs(u))):
            f, _ = _profile_system(u, rho)
            return u, it, bool(np.max(np.abs(f)) < 1e3 * tol)
    return u, maxit, False


def profile_residual(log_v: np.ndarray, rho: float) -> float:
    """sup-norm of Delta v + 2 rho v log v with zero outside the grid."""
    v = np.exp(log_v)
    lap = np.append(v[1:], 0.0) + np.insert(v[:-1], 0, 0.0) - 2.0 * v
    return float(np.max(np.abs(lap + 2.0 * rho * v * log_v)))


def solve_profile_1d(rho: float, R: int, tol: float = 1e-12, rho_start: float = 0.5, growth: float = 1.3) -> Profile:
    """Symmetric positive solution of Delta v + 2 rho v log v = 0 on [-R, R].

    Newton in log v starts from the Gaussian guess at min(rho, rho_start),
    where that guess is accurate, and follows the branch up to rho by
    continuation.
    """
    if not (0 < rho < math.inf):
        raise ValueError("solve_profile_1d needs finite rho > 0")
    k = np.arange(-R, R + 1)
    r = min(rho, rho_start)
    u, steps, ok = _newton(gaussian_guess(r, k), r, tol)
    total = steps
    while ok and r < rho:
        r = min(rho, r * growth)
        u, steps, ok = _newton(u, r, tol)
        total += steps
    if not ok:
        raise ShapeError(
            f"Newton diverged on the profile equation (rho={rho}, R={R}); "
            "raise R, or rho (uniqueness is only known for large rho)"
        )
    u = 0.5 * (u + u[::-1])
    res = profile_residual(u, rho)
    if res > max(tol, 1e-13) * 10:
        raise ShapeError(f"profile residual {res:.2e} above tolerance")
    if np.any(np.diff(u[R:]) >= 0):
        raise ShapeError("profile is not decreasing away from the origin")
    return Profile(rho, R, u, res, total)


# -- optimal shape -----------------------------------------------------------------


@dataclass
class OptimalShape:
    rho: float
    dim: int
    R: int
    chi: float
    lambda_V: float
    lambda_V_dotted: float
    profile_log_v: np.ndarray | None
    profile_f: np.ndarray | None
    V: np.ndarray  # on Box.centered(dim, R).sites()
    w: np.ndarray  # same order, w(0) = 1
    chi_profile: float
    richardson_gap: float
    eigen_residual: float
    notes: list = field(default_factory=list)

    @property
    def box(self) -> Box:
        return Box.centered(self.dim, self.R)

    @property
    def profile_v(self):
        return None if self.profile_log_v is None else np.exp(self.profile_log_v)

    def V_on(self, radius: int) -> np.ndarray:
        """V_rho on the centered box of the given radius (<= R)."""
        return self._restrict(self.V, radius)

    def w_on(self, radius: int) -> np.ndarray:
        return self._restrict(self.w, radius)

    def _restrict(self, arr, radius):
        if radius > self.R:
            raise ValueError(f"shape only known on radius {self.R}")
        sub = Box.centered(self.dim, radius)
        return arr[self.box.index_of(sub.sites())]


def _tensor_sum(f: np.ndarray, d: int) -> np.ndarray:
    out = f
    for _ in range(d - 1):
        out = np.add.outer(out, f)
    return np.asarray(out).ravel()


def _profile_chi(p: Profile, d: int) -> float:
    return d * p.rho * p.log_norm2


def build_optimal_shape(rho: float, d: int = 1, R: int = 20, tol: float = 1e-10) -> OptimalShape:
    """V_rho, w_rho and chi on B_R from the 1-d profile, tensorized to Z^d.

    f(k) = rho log(v(k)^2 / ||v||^2), V(x) = sum_i f(x_i) and
    w(x) = prod_i v(x_i) / v(0)^d.  chi is -lambda_{B_R}(V) from an
    eigen-solve; the profile value d rho log ||v||^2 must agree with it.
    """
    box = Box.centered(d, R)
    if math.isinf(rho):
        V = np.full(len(box), -math.inf)
        w = np.zeros(len(box))
        origin = box.index_of(np.zeros((1, d), dtype=int))[0]
        V[origin] = 0.0
        w[origin] = 1.0
        return OptimalShape(
            rho, d, R, 2.0 * d, -2.0 * d, -math.inf, None, None, V, w,
            2.0 * d, 0.0, 0.0,
        )
    prof = solve_profile_1d(rho, R, tol=min(tol, 1e-12))
    f = rho * (2.0 * prof.log_v - prof.log_norm2)
    V = _tensor_sum(f, d)
    logw = _tensor_sum(prof.log_v - prof.log_v[R], d)
    w = np.exp(logw)
    sites = box.sites()
    pair = principal_eigenpair(sites, V, tol=tol)
    chi = -pair.eigenvalue
    chi_prof = _profile_chi(prof, d)
    # residual of (Delta + V) w = -chi w, scaled to w(0) = 1
    H = hamiltonian(sites, V)
    resid = float(np.max(np.abs(H @ w + chi * w)))
    if resid > tol * (1 + np.max(np.abs(V))):
        raise ShapeError(f"eigen-residual {resid:.2e} of w_rho above tolerance")
    # neighbouring radius as a convergence (Richardson-style) check
    prof_small = solve_profile_1d(rho, max(R - 2, 1))
    rich = abs(chi_prof - _profile_chi(prof_small, d))
    origin = box.index_of(np.zeros((1, d), dtype=int))[0]
    Vdot = V.copy()
    Vdot[origin] = -math.inf
    lam_dot = principal_eigenvalue(sites, Vdot)
    return OptimalShape(
        rho, d, R, chi, -chi, lam_dot, prof.log_v, f, V, w, chi_prof, rich, resid,
    )


def chi_limit(rho: float, d: int = 1, boundary_tol: float = 1e-10, R0: int = 12) -> float:
    """chi(rho) with R grown until the profile boundary value is below boundary_tol."""
    if math.isinf(rho):
        return 2.0 * d
    R = R0
    while True:
        prof = solve_profile_1d(rho, R)
        if prof.v[-1] < boundary_tol or R > 400:
            return _profile_chi(prof, d)
        R *= 2


# -- primal and dual routes -----------------------------------------------------------


@dataclass
class PrimalResult:
    chi: float
    V: np.ndarray
    v: np.ndarray  # unit l2 eigenfunction
    iterations: int
    first_order_gap: float
    values: list


def _primal_run(sites, V0, rho, tol, maxit):
    V = V0 - rho * log_script_L(V0, rho)
    last = -math.inf
    for it in range(1, maxit + 1):
        pair = principal_eigenpair(sites, V)
        obj = pair.eigenvalue - rho * log_script_L(V, rho)
        v2 = pair.vector**2
        p = np.exp(V / rho - log_script_L(V, rho))
        gap = float(np.max(np.abs(p - v2)))
        if gap < tol and abs(obj - last) < 1e-15 * (1 + abs(obj)):
            break
        last = obj
        # ascent step: zero of the gradient v^2 - e^{V/rho}/L for the current v
        with np.errstate(divide="ignore"):
            V = rho * np.log(v2)
        V = np.maximum(V, -1e6)
    pair = principal_eigenpair(sites, V)
    p = np.exp(V / rho - log_script_L(V, rho))
    gap = float(np.max(np.abs(p - pair.vector**2)))
    return V, pair, gap, it


def chi_primal(rho: float, R: int, d: int = 1, tol: float = 1e-12, n_starts: int = 4, seed: int = 0, maxit: int = 100000) -> PrimalResult:
    """chi_R(rho) = -sup{lambda_{B_R}(V) : L(V) <= 1} by multi-start ascent.

    Each start iterates V <- rho log v_V^2, which sets the gradient
    v_V^2 - e^{V/rho}/L(V) of lambda - rho log L to zero for the current
    eigenfunction and never decreases the objective.  The result is shifted
    to L(V) = 1.
    """
    if math.isinf(rho):
        raise ValueError("chi_primal needs finite rho")
    box = Box.centered(d, R)
    sites = box.sites()
    r2 = (sites**2).sum(axis=1)
    rng = np.random.default_rng(seed)
    starts = [-0.5 * r2.astype(float)]
    for _ in range(n_starts - 1):
        starts.append(-0.5 * r2 + rng.normal(scale=1.0, size=r2.size))
    runs = []
    for V0 in starts:
        V, pair, gap, it = _primal_run(sites, V0, rho, tol, maxit)
        runs.append((-pair.eigenvalue + rho * log_script_L(V, rho), V, pair, gap, it))
    # best value, lexicographic tie-break on the start index
    best = min(range(len(runs)), key=lambda i: (runs[i][0], i))
    chi, V, pair, gap, it = runs[best]
    V = V - rho * log_script_L(V, rho)
    # sorted weights are invariant under lattice shifts and reflections
    ref = np.sort(np.exp(V / rho))
    for c, Vo, *_ in runs:
        if abs(c - chi) < 1e-9:
            other = np.sort(np.exp((Vo - rho * log_script_L(Vo, rho)) / rho))
            if np.max(np.abs(other - ref)) > 1e-6:
                warnings.warn("distinct optimal potentials found by multi-start", UniquenessWarning, stacklevel=2)
    if gap > 1e-6:
        raise ShapeError(f"primal ascent stalled; first-order gap {gap:.2e}")
    return PrimalResult(chi, V, pair.vector, it, gap, [r[0] for r in runs])


def dirichlet_energy(g: np.ndarray, sites: np.ndarray) -> float:
    """-<Delta g, g> with zero boundary condition outside `sites`."""
    d = sites.shape[1]
    i, j = neighbor_pairs(sites)
    return float(2 * d * np.sum(g**2) - 2.0 * np.sum(g[i] * g[j]))


def entropy(p: np.ndarray) -> float:
    """J(p) = -<p, log p> with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def dual_functional(p: np.ndarray, rho: float, sites: np.ndarray) -> tuple[float, float, float]:
    """(I + rho J, I, J) for a probability field p on `sites`."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise ValueError("p must be a probability field")
    I = dirichlet_energy(np.sqrt(p), sites)
    J = entropy(p)
    return I + rho * J, I, J


@dataclass
class DualResult:
    chi: float
    p: np.ndarray
    iterations: int
    stationarity: float


def chi_dual(rho: float, R: int, d: int = 1, tol: float = 1e-11, maxit: int = 200000) -> DualResult:
    """min of I + rho J over probability fields on B_R, by mirror descent.

    Steps are exponentiated-gradient updates of log p with a diagonal
    (per-site) step size and backtracking on the objective.  Stationarity is
    the p-weighted spread of the gradient, sqrt(sum p (g - <g>_p)^2): sites
    with tiny p cannot move the objective above roundoff, so an unweighted
    max stalls there.
    """
    box = Box.centered(d, R)
    sites = box.sites()
    i, j = neighbor_pairs(sites)
    n = len(sites)
    r2 = (sites**2).sum(axis=1)
    theta = -0.5 * rho * r2.astype(float)
    theta -= logsumexp(theta)

    def objective(th):
        g = np.exp(0.5 * th)
        p = g * g
        I = 2 * d * p.sum() - 2.0 * np.sum(g[i] * g[j])
        return I - rho * np.sum(p * th)

    def gradient(th):
        # d/dp_x of I + rho J
        ratio_sum = np.zeros(n)
        np.add.at(ratio_sum, i, np.exp(0.5 * (th[j] - th[i])))
        np.add.at(ratio_sum, j, np.exp(0.5 * (th[i] - th[j])))
        return 2 * d - ratio_sum - rho * (th + 1.0), ratio_sum

    val = objective(theta)
    stat = math.inf
    for it in range(1, maxit + 1):
        grad, ratio_sum = gradient(theta)
        p = np.exp(theta)
        mean = float(np.sum(p * grad))
        stat = math.sqrt(float(np.sum(p * (grad - mean) ** 2)))
        if stat < tol:
            break
        curvature = rho + 0.5 * ratio_sum
        step = 1.0
        while True:
            cand = theta - step * (grad - mean) / curvature
            cand -= logsumexp(cand)
            cv = objective(cand)
            # objective changes near the optimum are below roundoff, so allow that much slack
            if cv <= val + 1e-13 * max(1.0, abs(val)) or step < 1e-12:
                break
            step *= 0.5
        theta, val = cand, cv
    else:
        raise ShapeError(f"mirror descent did not converge (stationarity {stat:.2e})")
    return DualResult(float(val), np.exp(theta), it, stat)


def envelope_gap(p: np.ndarray, rho: float) -> float:
    """rho J(p) minus -<V, p> + rho log L(V) at V = rho log p (zero in exact arithmetic)."""
    p = np.asarray(p, dtype=float)
    nz = p > 0
    V = rho * np.log(p[nz])
    return entropy(p) * rho - (-np.sum(V * p[nz]) + rho * log_script_L(V, rho))


# -- island radius and d_R metric --------------------------------------------------------


def _tail_remainder_1d(log_v: np.ndarray) -> float:
    """Bound on sum_{|k| > R} v(k)/v(0) assuming ratios keep decreasing."""
    R = (log_v.size - 1) // 2
    last = log_v[-1] - log_v[R]
    q = math.exp(log_v[-1] - log_v[-2])
    if q >= 1:
        return math.inf
    return 2.0 * math.exp(last) * q / (1.0 - q)


def island_radius(shape: OptimalShape, eps: float) -> int:
    """Smallest r with ||w||_2^2 * sum_{x outside B_r} w(x) < eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if math.isinf(shape.rho):
        return 0
    d = shape.dim
    lv = shape.profile_log_v
    R = shape.R
    w1 = np.exp(lv - lv[R])  # 1-d factor of w
    norm2 = float(np.sum(w1**2)) ** d
    tot1 = float(w1.sum())
    rem1 = _tail_remainder_1d(lv)
    # outside B_R in d dims: at least one coordinate beyond R
    remainder = d * rem1 * (tot1 + rem1) ** (d - 1)
    if remainder * norm2 > eps / 10:
        raise ShapeError("truncation remainder too large for eps; raise the shape radius")
    for r in range(R + 1):
        inner1 = float(w1[R - r : R + r + 1].sum())
        outside = tot1**d - inner1**d
        if norm2 * (outside + remainder) < eps:
            return r
    raise ShapeError("no radius within the shape box satisfies the tail condition")


def d_R_metric(f, g) -> float:
    """max |e^f - e^g| over aligned arrays; e^{-inf} = 0."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    with np.errstate(over="ignore"):
        return float(np.max(np.abs(np.exp(f) - np.exp(g))))


# -- shape recognition (diagnostic) -------------------------------------------------------


def shape_recognition_threshold(rho: float, gamma: float, R: int, big_radii, n_samples: int = 200, seed: int = 0, d: int = 1) -> list[dict]:
    """Largest delta such that sampled V with lambda > -chi_big - 3 delta are gamma/2-close.

    Candidates on B_big are V_rho itself, random perturbations of it and
    V_rho with one far site raised, all renormalized to L = 1.  Candidates
    whose maximum is not at the origin are counted as precondition
    violations and skipped.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for big in big_radii:
        shape = build_optimal_shape(rho, d, big)
        sites = shape.box.sites()
        origin = shape.box.index_of(np.zeros((1, d), dtype=int))[0]
        inner = shape.box.index_of(Box.centered(d, R).sites())
        V0 = shape.V
        cands = [("shape", V0.copy())]
        for _ in range(n_samples):
            scale = rng.choice([0.01, 0.1, 0.5, 2.0])
            cands.append(("noise", V0 + scale * rng.normal(size=V0.size)))
        far = int(np.argmax((sites**2).sum(axis=1)))
        for level in (-4.0, -2.0, -1.0, -0.5):
            V = V0.copy()
            V[far] = level
            cands.append(("raised_far_site", V))
        delta_star = math.inf
        violations = 0
        worst = None
        for kind, V in cands:
            V = V - rho * log_script_L(V, rho)
            if np.argmax(V) != origin:
                violations += 1
                continue
            drop = -shape.chi - principal_eigenvalue(sites, V)
            dist = d_R_metric(V[inner], V0[inner])
            if dist >= gamma / 2:
                if drop / 3 < delta_star:
                    delta_star, worst = drop / 3, kind
        rows.append(
            {"big_radius": big, "chi_big": shape.chi, "delta_max": delta_star,
             "limiting_candidate": worst, "precondition_violations": violations,
             "n_candidates": len(cands)}
        )
    return rows


def chi_bruteforce(rho: float, R: int = 1, d: int = 1, lo: float = -12.0, n: int = 25, rounds: int = 12) -> float:
    """Grid oracle for chi_R on tiny boxes: max of lambda(V) - rho log L(V) over [lo, 0]^|B_R|.

    Each round re-centres a grid of n points per site on the incumbent
    and shrinks the spacing by a factor of 4.
    """
    sites = Box.centered(d, R).sites()
    m = len(sites)
    if n**m > 2e6:
        raise ValueError("box too large for the grid oracle")
    H0 = hamiltonian(sites, np.zeros(m)).toarray()
    center = np.full(m, lo / 2)
    half = -lo / 2
    best_val, best_V = -math.inf, center
    for _ in range(rounds):
        axes = [np.clip(np.linspace(c - half, c + half, n), lo, 0.0) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        mats = np.broadcast_to(H0, (len(grid), m, m)).copy()
        idx = np.arange(m)
        mats[:, idx, idx] += grid
        lam = np.linalg.eigvalsh(mats)[:, -1]
        obj = lam - rho * logsumexp(grid / rho, axis=1)
        k = int(np.argmax(obj))
        if obj[k] > best_val:
            best_val, best_V = float(obj[k]), grid[k]
        center = best_V
        half /= 4
    return -best_val
