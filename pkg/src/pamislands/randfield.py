"""Tail models (F, phi, psi), reproducible i.i.d. potentials and field I/O.

A potential is sampled as xi(x) = psi(eta(x)) with eta(x) standard
exponential.  eta(x) is a pure function of (seed, x): each site gets its own
counter-based stream, so a field restricted to a sub-box does not depend on
the enclosing box or on evaluation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Box


class TailModel:
    """Distribution of xi(0) described by phi(r) = log 1/(1 - F(r))."""

    rho: float = math.inf

    def phi(self, r):
        raise NotImplementedError

    def psi(self, s):
        raise NotImplementedError

    def cdf(self, r):
        return -np.expm1(-np.asarray(self.phi(r), dtype=float))

    def survival(self, r):
        return np.exp(-np.asarray(self.phi(r), dtype=float))

    def descriptor(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class DoubleExp(TailModel):
    """Prob(xi(0) > r) = exp(-e^{r/rho})."""

    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(over="ignore"):
            out = np.exp(r / self.rho)
        if np.any(np.isinf(out) & np.isfinite(r)):
            raise OverflowError("phi overflows for the requested r")
        return out if out.ndim else float(out)

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        out = self.rho * np.log(s)
        return out if out.ndim else float(out)

    def descriptor(self) -> str:
        return f"doubleexp:rho={self.rho!r}"


@dataclass(frozen=True)
class Weibull(TailModel):
    """Prob(xi(0) > r) = exp(-r^alpha) for r >= 0; heavier than double-exponential."""

    alpha: float
    rho: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("Weibull tails need alpha > 1")

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        out = np.maximum(r, 0.0) ** self.alpha
        return out if out.ndim else float(out)

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        out = s ** (1.0 / self.alpha)
        return out if out.ndim else float(out)

    def descriptor(self) -> str:
        return f"weibull:alpha={self.alpha!r}"


class TabulatedF(TailModel):
    """F given on a grid; phi is interpolated linearly in r (monotone).

    Below the grid phi is 0; above it phi is extended with the slope of the
    last segment so that F < 1 everywhere.
    """

    PSI_TOL = 1e-12

    def __init__(self, r, F, rho: float = math.inf):
        r = np.asarray(r, dtype=float)
        F = np.asarray(F, dtype=float)
        if r.ndim != 1 or r.shape != F.shape or r.size < 2:
            raise ValueError("need matching 1-d grids with at least two points")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(F) < 0):
            raise ValueError("r must increase and F must be nondecreasing")
        if np.any(F >= 1) or np.any(F < 0):
            raise ValueError("F values must lie in [0, 1)")
        self.r = r
        self.F = F
        self.rho = rho
        self._phi = -np.log1p(-F)
        slope = (self._phi[-1] - self._phi[-2]) / (r[-1] - r[-2])
        if slope <= 0:
            raise ValueError("last grid segment must be strictly increasing")
        self._slope = slope

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.r, self._phi, left=0.0)
        above = r > self.r[-1]
        out = np.where(above, self._phi[-1] + self._slope * (r - self.r[-1]), out)
        out = np.where(r < self.r[0], 0.0, out)
        return out if out.ndim else float(out)

    def _psi_scalar(self, s: float) -> float:
        if s <= 0:
            raise ValueError("psi needs s > 0")
        if s > self._phi[-1]:
            return float(self.r[-1] + (s - self._phi[-1]) / self._slope)
        # leftmost grid index with phi >= s, then bisect inside the segment
        j = int(np.searchsorted(self._phi, s, side="left"))
        if j == 0:
            return float(self.r[0])
        lo, hi = self.r[j - 1], self.r[j]
        while hi - lo > self.PSI_TOL:
            mid = 0.5 * (lo + hi)
            if self.phi(mid) >= s:
                hi = mid
            else:
                lo = mid
        return float(hi)

    def psi(self, s):
        s_arr = np.asarray(s, dtype=float)
        out = np.vectorize(self._psi_scalar, otypes=[float])(s_arr)
        return out if out.ndim else float(out)

    def descriptor(self) -> str:
        return f"tabulated:n={self.r.size}"


def parse_model(desc: str) -> TailModel:
    """Inverse of `TailModel.descriptor` for the parametric families."""
    kind, _, rest = desc.partition(":")
    params = dict(kv.split("=") for kv in rest.split(",") if kv)
    if kind == "doubleexp":
        return DoubleExp(float(params["rho"]))
    if kind == "weibull":
        return Weibull(float(params["alpha"]))
    raise ValueError(f"cannot rebuild model from descriptor {desc!r}")


def phi_of(model: TailModel, r):
    return model.phi(r)


def psi_of(model: TailModel, s):
    return model.psi(s)


# -- per-site counter-based stream -------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, sites: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1) keyed on (seed, site); independent of array order."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    with np.errstate(over="ignore"):
        h = _mix64(np.full(sites.shape[0], np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) + _GOLDEN)
        h = _mix64(h ^ np.uint64(sites.shape[1]))
        for j in range(sites.shape[1]):
            h = _mix64((h + _GOLDEN) ^ sites[:, j].astype(np.uint64))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def site_exponentials(seed: int, sites: np.ndarray) -> np.ndarray:
    return -np.log(site_uniforms(seed, sites))


# -- potential fields ----------------------------------------------------------


@dataclass
class PotentialField:
    """Extended-real values over a box, stored in `box.sites()` order.

    -inf marks sites excluded from every effective domain.
    """

    box: Box
    values: np.ndarray
    seed: int | None = None
    model: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != len(self.box):
            raise ValueError("values do not match the box")

    @property
    def d(self) -> int:
        return self.box.d

    def at(self, sites) -> np.ndarray:
        return self.values[self.box.index_of(sites)]

    def value(self, site) -> float:
        return float(self.at(np.asarray([site]))[0])

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.box.shape)

    def restrict(self, sub: Box) -> "PotentialField":
        sites = sub.sites()
        return PotentialField(sub, self.at(sites), self.seed, self.model)

    def sites(self) -> np.ndarray:
        return self.box.sites()

    def shifted(self, c: float) -> "PotentialField":
        return PotentialField(self.box, self.values + c, self.seed, self.model)


def sample_field(model: TailModel, box: Box, seed: int) -> PotentialField:
    """xi(x) = psi(eta(x)) with eta(x) the per-site exponential variate."""
    eta = site_exponentials(seed, box.sites())
    return PotentialField(box, np.asarray(model.psi(eta), dtype=float), seed, model.descriptor())


def height(field: PotentialField, subbox: Box | None = None) -> float:
    """h = max of the field over `subbox` (whole domain by default)."""
    vals = field.values if subbox is None else field.at(subbox.sites())
    if vals.size == 0:
        raise ValueError("empty domain")
    return float(np.max(vals))


def tail_diagnostic(model: TailModel, s_grid, c_grid, tol: float = 1e-6) -> list[dict]:
    """Rows probing the regular-variation conditions on psi.

    For every s: psi(c s) - psi(s) against rho log c for each c, the
    increment psi(s + log s) - psi(s) and the ratio psi(s)/log s.
    """
    rows = []
    rho = getattr(model, "rho", math.inf)
    for s in np.asarray(s_grid, dtype=float):
        base = float(model.psi(s))
        inc = float(model.psi(s + math.log(s))) - base if s > 1 else float("nan")
        ratio = base / math.log(s) if s > 1 else float("nan")
        for c in np.asarray(c_grid, dtype=float):
            diff = float(model.psi(c * s)) - base
            target = rho * math.log(c) if math.isfinite(rho) else -math.inf
            dev = abs(diff - target) if math.isfinite(rho) else float("nan")
            rows.append(
                {
                    "s": float(s),
                    "c": float(c),
                    "psi_cs_minus_psi_s": diff,
                    "rho_log_c": target,
                    "scaling_deviation": dev,
                    "log_increment": inc,
                    "psi_over_log": ratio,
                    "scaling_flag": bool(math.isfinite(rho) and dev > tol),
                }
            )
    return rows


# -- export / import -----------------------------------------------------------


def _header(field: PotentialField) -> dict:
    return {
        "d": field.d,
        "radius": field.box.radius,
        "center": " ".join(str(c) for c in field.box.center),
        "seed": "" if field.seed is None else str(field.seed),
        "model": field.model or "",
    }


def save_field(field: PotentialField, path: str | Path) -> None:
    """CSV (header lines '# key=value', then coords and value) or .npz by suffix."""
    path = Path(path)
    hdr = _header(field)
    if path.suffix == ".npz":
        np.savez(path, values=field.values, **{k: np.asarray(str(v)) for k, v in hdr.items()})
        return
    with path.open("w", newline="") as fh:
        for k, v in hdr.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(field.d)] + ["value"])
        for site, val in zip(field.sites(), field.values):
            w.writerow([int(c) for c in site] + [repr(float(val))])


def load_field(path: str | Path) -> PotentialField:
    path = Path(path)
    if path.suffix == ".npz":
        z = np.load(path)
        hdr = {k: str(z[k]) for k in ("d", "radius", "center", "seed", "model")}
        values = z["values"]
    else:
        hdr = {}
        rows = []
        with path.open() as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    hdr[k] = v
                else:
                    rows.append(line)
        reader = csv.reader(rows)
        next(reader)
        values = np.array([float(r[-1]) for r in reader])
    center = tuple(int(c) for c in hdr["center"].split())
    box = Box(center, int(hdr["radius"]))
    if len(center) != int(hdr["d"]):
        raise ValueError("header dimension mismatch")
    seed = int(hdr["seed"]) if hdr.get("seed") else None
    return PotentialField(box, values, seed, hdr.get("model") or None)
