"""High exceedances, archipelagos, optimal capitals, the spectral gap, Gamma and Gamma*.

Everything here is evaluated at a scale T (the macrobox radius): the box is
B_T, h is the height on B_T and the huge radius is ceil(log^2 T).  Site sets
are sorted (n, d) integer arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Box, as_site_array, component_labels, cube_neighborhood_array, min_pairwise_distance
from .randfield import PotentialField
from .spectral import SpectralError, principal_eigenvalue

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IslandParams:
    a: float = 1.0
    delta: float = 0.25
    big_R: int = 6  # the archipelago radius
    R: int = 3
    eta: float = 0.2

    def __post_init__(self):
        if not (self.a > 0 and self.delta > 0 and self.eta > 0):
            raise ValueError("a, delta and eta must be positive")
        if not self.delta < self.a / 2:
            raise ValueError("delta must be below a/2")
        if not (0 < self.R < self.big_R):
            raise ValueError("need 0 < R < big_R")

    @classmethod
    def defaults(cls, rho: float, a: float = 1.0, **kw) -> "IslandParams":
        """a = 1 and delta = min(a/4, rho log 2 / 2) unless overridden."""
        delta = kw.pop("delta", min(a / 4, rho * math.log(2) / 2))
        return cls(a=a, delta=delta, **kw)

    def check_rho(self, rho: float):
        if not self.delta < rho * math.log(2):
            raise ValueError("delta must be below rho log 2")

    @staticmethod
    def huge_radius(T: float) -> int:
        return int(math.ceil(math.log(T) ** 2))

    def K(self, chi: float, rho: float) -> int:
        """Bound on archipelago sizes, floor(e^{(chi + a)/rho}); unbounded for rho = inf."""
        if math.isinf(rho):
            return 1
        return int(math.floor(math.exp((chi + self.a) / rho)))

    def q(self, d: int) -> float:
        return 2 * d / (2 * d + self.a / 2)

    def frak_d(self, T: float, rho: float) -> float:
        """T^{2 e^{-delta/rho} - 1}, the growth rate of optimal-island distances."""
        e = 1.0 if math.isinf(rho) else math.exp(-self.delta / rho)
        return T ** (2 * e - 1)

    @staticmethod
    def gap_floor(T: float, d: int) -> float:
        return T ** (-2 * d)


@dataclass
class IslandDecomposition:
    T: float
    h: float
    chi: float
    params: IslandParams
    Z: np.ndarray
    archipelagos: list
    capitals: np.ndarray
    large_eigenvalues: np.ndarray  # lambda(B_bigR(archipelago)), one per capital
    optimal: np.ndarray  # boolean mask over capitals
    huge_radius: int
    huge_eigenvalues: np.ndarray  # over optimal capitals, nan where the solve failed
    gap_interval: tuple
    gap: float
    gamma: np.ndarray
    gamma_star: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def optimal_capitals(self) -> np.ndarray:
        return self.capitals[self.optimal]

    @property
    def gamma_min_distance(self) -> float:
        return min_pairwise_distance(map(tuple, self.gamma))

    def separation(self) -> float:
        """min over Gamma of the huge eigenvalue minus max over the other optimal capitals."""
        in_g = _member_mask(self.optimal_capitals, self.gamma)
        lam = self.huge_eigenvalues
        if not in_g.any() or in_g.all():
            return math.inf
        return float(lam[in_g].min() - lam[~in_g].max())

    def check_chain(self):
        """Gamma* within Gamma within optimal capitals within capitals within Z."""
        pairs = [(self.capitals, self.Z), (self.optimal_capitals, self.capitals), (self.gamma, self.optimal_capitals)]
        if self.gamma_star is not None:
            pairs.append((self.gamma_star, self.gamma))
        for sub, sup in pairs:
            if not _member_mask(sub, sup).all():
                raise AssertionError("island chain inclusion violated")
        return True

    def summary(self) -> dict:
        return {
            "T": self.T, "h": self.h, "n_Z": len(self.Z), "n_archipelagos": len(self.archipelagos),
            "n_optimal": int(self.optimal.sum()), "n_gamma": len(self.gamma),
            "n_gamma_star": -1 if self.gamma_star is None else len(self.gamma_star),
            "gap_lo": self.gap_interval[0], "gap_hi": self.gap_interval[1], "gap": self.gap,
            "gamma_min_distance": self.gamma_min_distance, "huge_radius": self.huge_radius,
            "max_archipelago": max((len(a) for a in self.archipelagos), default=0),
            "flags": ";".join(self.flags),
        }


def _member_mask(sub: np.ndarray, sup: np.ndarray) -> np.ndarray:
    if len(sub) == 0:
        return np.zeros(0, dtype=bool)
    if len(sup) == 0:
        return np.zeros(len(sub), dtype=bool)
    sset = set(map(tuple, np.asarray(sup).tolist()))
    return np.array([tuple(s) in sset for s in np.asarray(sub).tolist()])


def exceedance_set(xi: PotentialField, h: float, chi: float, a: float) -> np.ndarray:
    """{x in the box : xi(x) > h - chi - a}."""
    return xi.sites()[xi.values > h - chi - a]


def decompose_archipelagos(xi: PotentialField, Z: np.ndarray, big_R: int):
    """2 big_R-connected components of Z and their capitals (max xi, lexicographic tie-break)."""
    Z = as_site_array(Z, xi.d) if len(Z) else np.zeros((0, xi.d), dtype=np.int64)
    if len(Z) == 0:
        return [], np.zeros((0, xi.d), dtype=np.int64)
    labels = component_labels(Z, 2 * big_R)
    vals = xi.at(Z)
    archs, caps = [], []
    for k in range(labels.max() + 1):
        members = Z[labels == k]
        v = vals[labels == k]
        # members are sorted, so argmax returns the smallest among ties
        caps.append(members[int(np.argmax(v))])
        archs.append(members)
    # the big_R-neighbourhoods of distinct archipelagos are disjoint since
    # their sup-distance exceeds 2 big_R; checked cheaply on capitals' sets
    return archs, np.array(caps, dtype=np.int64).reshape(-1, xi.d)


def cluster_eigenvalue(xi: PotentialField, A: np.ndarray, radius: int) -> float:
    """lambda of xi on B_radius(A) intersected with the field's box."""
    s = cube_neighborhood_array(A, radius)
    s = s[xi.box.contains(s)]
    return principal_eigenvalue(s, xi.at(s))


def select_optimal_capitals(xi: PotentialField, archipelagos, h: float, chi: float, delta: float, big_R: int):
    """(eigenvalues of the big_R-neighbourhoods, mask of (delta, big_R)-optimal capitals)."""
    lam = np.full(len(archipelagos), np.nan)
    for k, A in enumerate(archipelagos):
        try:
            lam[k] = cluster_eigenvalue(xi, A, big_R)
        except SpectralError as exc:  # recorded; the capital is excluded
            log.warning("eigen-solve failed on archipelago %d: %s", k, exc)
    with np.errstate(invalid="ignore"):
        return lam, lam > h - chi - delta


def compute_spectral_gap(eigenvalues, h: float, chi: float, delta: float) -> tuple[tuple[float, float], float]:
    """Largest eigenvalue-free subinterval of [h - chi - delta/2, h - chi - delta/4].

    Ties go to the lowest interval.
    """
    lo, hi = h - chi - delta / 2, h - chi - delta / 4
    e = np.asarray(eigenvalues, dtype=float)
    inside = np.sort(e[(e > lo) & (e < hi)])
    pts = np.concatenate([[lo], inside, [hi]])
    lengths = np.diff(pts)
    k = int(np.argmax(lengths))  # first maximum = lowest
    return (float(pts[k]), float(pts[k + 1])), float(lengths[k])


def build_gamma(capitals: np.ndarray, huge_eigenvalues, gap_interval) -> np.ndarray:
    """Optimal capitals whose huge-cluster eigenvalue is at least sup I_gap."""
    lam = np.asarray(huge_eigenvalues, dtype=float)
    return capitals[lam >= gap_interval[1]]


def build_gamma_star(gamma: np.ndarray, log_u_gamma, t: float, eta: float, d: int) -> np.ndarray:
    """{y in Gamma : u(t, y) >= t^{-3 eta d} max_Gamma u}, from log u on Gamma."""
    if len(gamma) == 0:
        return gamma
    lu = np.asarray(log_u_gamma, dtype=float)
    return gamma[lu >= lu.max() - 3 * eta * d * math.log(t)]


def decompose(xi: PotentialField, T: float, h: float, chi: float, params: IslandParams, rho: float | None = None) -> IslandDecomposition:
    """The full construction on xi's box at scale T."""
    flags = []
    Z = exceedance_set(xi, h, chi, params.a)
    archs, caps = decompose_archipelagos(xi, Z, params.big_R)
    if rho is not None:
        K = params.K(chi, rho)
        big = [len(a) for a in archs if len(a) > K]
        if big:
            flags.append("archipelago_size_exceeds_K")
            log.info("archipelagos larger than K=%d: %s (pre-asymptotic)", K, big)
    lam_large, optimal = select_optimal_capitals(xi, archs, h, chi, params.delta, params.big_R)
    opt_caps = caps[optimal]
    rr = params.huge_radius(T)
    huge = np.array([cluster_eigenvalue(xi, z[None, :], rr) for z in opt_caps])
    if len(opt_caps) > 1 and min_pairwise_distance(map(tuple, opt_caps)) <= 2 * rr * xi.d:
        D = np.abs(opt_caps[:, None, :] - opt_caps[None, :, :]).max(axis=2)
        np.fill_diagonal(D, np.iinfo(np.int64).max)
        if D.min() <= 2 * rr:
            flags.append("huge_clusters_overlap")
    interval, g = compute_spectral_gap(huge, h, chi, params.delta)
    gamma = build_gamma(opt_caps, huge, interval)
    if len(gamma) == 0:
        flags.append("gamma_empty_pre_asymptotic")
    dec = IslandDecomposition(T, h, chi, params, Z, archs, caps, lam_large, optimal, rr, huge, interval, g, gamma, None, flags)
    floor = (params.delta / 4) / (1 + len(opt_caps))
    if g < floor - 1e-12:
        raise AssertionError("spectral gap below its combinatorial floor")
    dec.check_chain()
    return dec


def attach_gamma_star(dec: IslandDecomposition, u, t: float, eta: float | None = None) -> IslandDecomposition:
    """Fill in Gamma* from a SolutionField on a box containing Gamma."""
    eta = dec.params.eta if eta is None else eta
    if len(dec.gamma) == 0:
        dec.gamma_star = dec.gamma
        if "gamma_star_empty" not in dec.flags:
            dec.flags.append("gamma_star_empty")
        return dec
    lu = u.log_values()[u.box.index_of(dec.gamma)]
    dec.gamma_star = build_gamma_star(dec.gamma, lu, t, eta, u.box.d)
    dec.check_chain()
    return dec


def capital_gaps(xi: PotentialField, dec: IslandDecomposition, shape_gap: float) -> list[dict]:
    """Measured versions of the three eigenvalue gaps around each y in Gamma.

    For each y: lambda_y on (B minus Gamma) + y against (a) big clusters
    B_R(R-island) minus optimal capitals inside optimal archipelagos,
    (b) large clusters of non-optimal archipelagos, (c) huge clusters of
    optimal capitals outside Gamma.  Reported, not asserted.
    """
    from .spectral import anchor_component

    sites = xi.sites()
    gmask = np.zeros(len(sites), dtype=bool)
    if len(dec.gamma):
        gmask[xi.box.index_of(dec.gamma)] = True
    p = dec.params
    opt_caps = dec.optimal_capitals
    # (a) R-islands inside optimal archipelagos
    lam_a = -math.inf
    for A, is_opt in zip(dec.archipelagos, dec.optimal):
        if not is_opt:
            continue
        labels = component_labels(A, 2 * p.R)
        for k in range(labels.max() + 1):
            s = cube_neighborhood_array(A[labels == k], p.R)
            s = s[xi.box.contains(s)]
            s = s[~_member_mask(s, opt_caps)] if len(s) else s
            if len(s):
                lam_a = max(lam_a, principal_eigenvalue(s, xi.at(s)))
    lam_b = float(np.max(dec.large_eigenvalues[~dec.optimal], initial=-math.inf))
    in_g = _member_mask(opt_caps, dec.gamma)
    lam_c = float(np.max(dec.huge_eigenvalues[~in_g], initial=-math.inf)) if len(opt_caps) else -math.inf
    rows = []
    for y in dec.gamma:
        V = xi.values.copy()
        V[gmask] = -np.inf
        V[xi.box.index_of(y[None, :])[0]] = xi.value(tuple(y))
        s, v = anchor_component(sites, V, y)
        lam_y = principal_eigenvalue(s, v)
        rows.append({
            "y": tuple(int(c) for c in y), "lambda_y": lam_y,
            "gap_big": lam_y - lam_a, "gap_big_target": max(shape_gap / 4, 0.0),
            "gap_large": lam_y - lam_b, "gap_large_target": p.delta / 2,
            "gap_huge": lam_y - lam_c, "gap_huge_target": p.gap_floor(dec.T, xi.d),
        })
    return rows
