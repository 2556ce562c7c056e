"""The lattice Hamiltonian Delta + V with zero boundary condition.

Every routine takes a site array of shape (n, d) together with potential
values aligned with it.  Sites carrying V = -inf are removed from the
operator before any linear algebra happens.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal, expm
from scipy.sparse.csgraph import connected_components as _graph_components
from scipy.sparse.linalg import eigsh
from scipy.special import gammaln
from scipy.stats import poisson

from .lattice import Box, as_site_array

log = logging.getLogger(__name__)

DENSE_LIMIT = 1500


class SpectralError(RuntimeError):
    pass


class EmptyDomain(SpectralError):
    pass


@dataclass
class SpectralPair:
    """Principal eigenvalue with its nonnegative eigenfunction on `sites`."""

    eigenvalue: float
    sites: np.ndarray
    vector: np.ndarray
    normalization: str = "l2"
    residual: float = 0.0

    def value_at(self, site) -> float:
        idx = _locate(self.sites, np.atleast_2d(site))
        return float(self.vector[idx[0]]) if idx[0] >= 0 else 0.0

    def as_dict(self) -> dict:
        return {tuple(int(c) for c in s): float(v) for s, v in zip(self.sites, self.vector)}

    def on(self, sites: np.ndarray) -> np.ndarray:
        """Eigenfunction evaluated on arbitrary sites (zero off the domain)."""
        idx = _locate(self.sites, np.atleast_2d(sites))
        out = np.zeros(len(idx))
        ok = idx >= 0
        out[ok] = self.vector[idx[ok]]
        return out


def _keys(sites: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
    rel = sites - lo
    key = np.zeros(sites.shape[0], dtype=np.int64)
    for j in range(sites.shape[1]):
        key = key * span[j] + rel[:, j]
    return key


def _locate(sites: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row index of each query site in `sites` or -1."""
    if sites.shape[0] == 0:
        return -np.ones(query.shape[0], dtype=np.int64)
    lo = np.minimum(sites.min(axis=0), query.min(axis=0)) - 1
    span = np.maximum(sites.max(axis=0), query.max(axis=0)) - lo + 2
    ks = _keys(sites, lo, span)
    kq = _keys(query, lo, span)
    order = np.argsort(ks, kind="stable")
    pos = np.searchsorted(ks[order], kq)
    pos = np.clip(pos, 0, len(ks) - 1)
    hit = ks[order][pos] == kq
    return np.where(hit, order[pos], -1)


def neighbor_pairs(sites: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j), i < j, of nearest neighbors within `sites`."""
    n, d = sites.shape
    rows, cols = [], []
    for j in range(d):
        shifted = sites.copy()
        shifted[:, j] += 1
        idx = _locate(sites, shifted)
        ok = idx >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(idx[ok])
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows), np.concatenate(cols)


def effective_domain(sites, V) -> tuple[np.ndarray, np.ndarray]:
    """Drop sites with V = -inf; returns (sites, V) restricted to {V > -inf}."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    V = np.asarray(V, dtype=float).ravel()
    if V.size != sites.shape[0]:
        raise ValueError("potential and sites are not aligned")
    if np.any(np.isnan(V)) or np.any(np.isposinf(V)):
        raise ValueError("potential must be finite or -inf")
    keep = np.isfinite(V)
    return sites[keep], V[keep]


def hamiltonian(sites: np.ndarray, V: np.ndarray) -> sp.csr_matrix:
    """Sparse Delta + V on `sites` (all finite), zero outside."""
    n, d = sites.shape
    i, j = neighbor_pairs(sites)
    off = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    return (off + off.T + sp.diags(V - 2.0 * d)).tocsr()


def _is_chain(sites: np.ndarray) -> bool:
    return sites.shape[1] == 1 and np.all(np.diff(sites[:, 0]) > 0)


def _chain_offdiag(sites: np.ndarray) -> np.ndarray:
    return (np.diff(sites[:, 0]) == 1).astype(float)


def _top_eigenpairs(sites: np.ndarray, V: np.ndarray, k: int):
    """Largest k eigenvalues (ascending) and orthonormal eigenvectors."""
    n, d = sites.shape
    k = min(k, n)
    if _is_chain(sites):
        lam, vec = eigh_tridiagonal(
            V - 2.0 * d, _chain_offdiag(sites), select="i", select_range=(n - k, n - 1)
        )
        return lam, vec
    H = hamiltonian(sites, V)
    if n <= DENSE_LIMIT or k >= n - 1:
        lam, vec = eigh(H.toarray(), subset_by_index=[n - k, n - 1])
        return lam, vec
    sigma = 2.0 * d + float(V.max()) + 1.0
    shifted = H + sigma * sp.identity(n, format="csr")
    lam, vec = eigsh(shifted, k=k, which="LA", v0=np.ones(n), tol=1e-13, maxiter=50 * n)
    order = np.argsort(lam)
    return lam[order] - sigma, vec[:, order]


def leading_eigenpairs(sites, V, k: int = 8):
    """Top-k eigenpairs of Delta + V on the effective domain (descending)."""
    s, v = effective_domain(sites, V)
    if s.shape[0] == 0:
        raise EmptyDomain("empty effective domain")
    lam, vec = _top_eigenpairs(s, v, k)
    return lam[::-1], vec[:, ::-1], s


def principal_eigenpair(sites, V, anchor=None, tol: float = 1e-10) -> SpectralPair:
    """Largest eigenvalue of Delta + V on {V > -inf} within `sites`.

    The eigenfunction is nonnegative.  With `anchor` given it is scaled to
    equal 1 there; otherwise it has unit l2 norm.  An empty effective domain
    gives eigenvalue -inf.
    """
    s, v = effective_domain(sites, V)
    d = np.atleast_2d(np.asarray(sites)).shape[1]
    if s.shape[0] == 0:
        return SpectralPair(-math.inf, s, np.zeros(0), "empty")
    lam, vec = _top_eigenpairs(s, v, 1)
    lam = float(lam[-1])
    e = np.abs(vec[:, -1])
    e /= np.linalg.norm(e)
    H = hamiltonian(s, v)
    resid = float(np.max(np.abs(H @ e - lam * e)))
    scale = float(np.max(np.abs(v))) + 2 * d
    if resid > max(tol, 1e-13) * scale * 10:
        raise SpectralError(f"eigen-residual {resid:.3e} above tolerance")
    norm = "l2"
    if anchor is not None:
        idx = _locate(s, np.atleast_2d(np.asarray(anchor, dtype=np.int64)))[0]
        if idx < 0:
            raise SpectralError("anchor is not in the effective domain")
        if e[idx] <= 1e-12 * e.max():
            raise SpectralError("anchor lies in a component where the principal eigenfunction vanishes")
        e = e / e[idx]
        norm = f"anchor={tuple(int(c) for c in np.ravel(anchor))}"
    return SpectralPair(lam, s, e, norm, resid)


def principal_eigenvalue(sites, V) -> float:
    """lambda_A(V); -inf for an empty effective domain."""
    s, v = effective_domain(sites, V)
    n = s.shape[0]
    if n == 0:
        return -math.inf
    if _is_chain(s):
        lam = eigh_tridiagonal(
            v - 2.0, _chain_offdiag(s), eigvals_only=True, select="i", select_range=(n - 1, n - 1)
        )
        return float(lam[-1])
    return float(_top_eigenpairs(s, v, 1)[0][-1])


def anchor_component(sites, V, anchor) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor connected component of {V > -inf} containing `anchor`."""
    s, v = effective_domain(sites, V)
    idx = _locate(s, np.atleast_2d(np.asarray(anchor, dtype=np.int64)))[0]
    if idx < 0:
        raise SpectralError("anchor is not in the effective domain")
    i, j = neighbor_pairs(s)
    adj = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(len(v), len(v)))
    _, labels = _graph_components(adj, directed=False)
    keep = labels == labels[idx]
    return s[keep], v[keep]


def box_values(field, box: Box) -> tuple[np.ndarray, np.ndarray]:
    """(sites, values) of `field` on `box` intersected with the field domain."""
    sites = box.sites()
    inside = field.box.contains(sites)
    sites = sites[inside]
    return sites, field.at(sites)


def dotted_principal_eigenvalue(box: Box, V, dot, tol: float = 1e-10) -> float:
    """Principal eigenvalue on box minus {dot}; V aligned with `box.sites()`."""
    sites = box.sites()
    V = np.asarray(V, dtype=float).copy()
    idx = box.index_of(np.atleast_2d(dot))[0]
    V[idx] = -math.inf
    return principal_eigenpair(sites, V, tol=tol).eigenvalue


def script_L(V, rho: float, strict: bool = False) -> float:
    """Sum of e^{V/rho}; for rho = inf the number of finite entries.

    Values above 0 are outside the admissible class; they are accepted with a
    warning unless `strict`.
    """
    V = np.asarray(V, dtype=float).ravel()
    if np.any(V[np.isfinite(V)] > 0):
        if strict:
            raise ValueError("V must be <= 0")
        warnings.warn("script_L evaluated outside the admissible class V <= 0", stacklevel=2)
    if math.isinf(rho):
        return float(np.count_nonzero(np.isfinite(V)))
    with np.errstate(over="ignore"):
        return float(np.sum(np.exp(V / rho)))


def log_script_L(V, rho: float) -> float:
    """log of `script_L` computed stably (finite rho)."""
    V = np.asarray(V, dtype=float).ravel()
    V = V[np.isfinite(V)] / rho
    if V.size == 0:
        return -math.inf
    m = V.max()
    return float(m + np.log(np.sum(np.exp(V - m))))


# -- propagation ---------------------------------------------------------------


def _lanczos_expv(matvec, v: np.ndarray, tau: float, m: int):
    """Lanczos approximations of e^{tau A} v with dimensions m and m + 4."""
    n = v.size
    beta = np.linalg.norm(v)
    mm = min(m + 4, n)
    Q = np.zeros((n, mm + 1))
    alpha = np.zeros(mm)
    betas = np.zeros(mm)
    Q[:, 0] = v / beta
    kmax = mm
    for j in range(mm):
        w = matvec(Q[:, j])
        alpha[j] = Q[:, j] @ w
        w -= alpha[j] * Q[:, j]
        if j > 0:
            w -= betas[j - 1] * Q[:, j - 1]
        # full reorthogonalization keeps the small bases clean
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        betas[j] = np.linalg.norm(w)
        if betas[j] < 1e-14 * beta:
            kmax = j + 1
            break
        Q[:, j + 1] = w / betas[j]

    def approx(k):
        k = min(k, kmax)
        T = np.diag(alpha[:k]) + np.diag(betas[: k - 1], 1) + np.diag(betas[: k - 1], -1)
        return beta * (Q[:, :k] @ expm(tau * T)[:, 0])

    exact = kmax < mm
    return approx(m), approx(mm), exact


def krylov_expmv(A: sp.spmatrix, v: np.ndarray, t: float, tol: float = 1e-10, m: int = 30, max_steps: int = 100000, cap: float = 10.0, return_log: bool = False):
    """e^{tA} v for symmetric sparse A by Lanczos with adaptive substeps.

    A substep is accepted when the m- and (m+4)-dimensional approximations
    agree to `tol` relative to the norm of the step result; substeps are
    capped at tau ||A||_1 <= cap.  The iterate is renormalized after every
    substep, so with `return_log` the pair (y, s) with e^{tA} v = y e^s is
    returned and nothing under- or overflows.
    """
    out = np.asarray(v, dtype=float).copy()
    scale = 0.0
    nrm0 = np.linalg.norm(out)
    if t == 0 or nrm0 == 0:
        return (out, 0.0) if return_log else out
    out /= nrm0
    scale = math.log(nrm0)
    normA = float(abs(A).sum(axis=1).max())
    tau_max = cap / max(normA, 1e-300)
    tau = min(t, 8.0 / max(normA, 1e-300), tau_max)
    done = 0.0
    steps = 0
    matvec = A.dot
    while done < t:
        steps += 1
        if steps > max_steps:
            raise SpectralError(f"Krylov propagation did not converge after {max_steps} substeps")
        tau = min(tau, t - done)
        ym, yk, exact = _lanczos_expv(matvec, out, tau, m)
        err = np.linalg.norm(yk - ym)
        nrm = np.linalg.norm(yk)
        if nrm == 0 or not np.isfinite(nrm):
            raise SpectralError("Krylov step lost the iterate")
        if exact or err <= tol * nrm:
            out = yk / nrm
            scale += math.log(nrm)
            done += tau
            if err < 0.1 * tol * nrm:
                tau = min(1.5 * tau, tau_max)
        else:
            tau *= 0.5
            if tau < 1e-14 * t:
                raise SpectralError("Krylov substep underflow")
    if return_log:
        return out, scale
    with np.errstate(over="ignore"):
        return out * np.exp(scale)


def uniformized_expmv(M: sp.spmatrix, v: np.ndarray, t: float, chunk: float = 30.0, tail: float = 1e-30, return_log: bool = False):
    """e^{tM} v for a Metzler matrix M (nonnegative off the diagonal) and v >= 0.

    Uniformization: after shifting M by its largest row sum, take
    c >= max(-diag) and P = I + M/c, which is nonnegative and substochastic;
    then e^{tM} = e^{-ct} sum_k (ct)^k/k! P^k.  Every term is nonnegative, so
    the result is computed without cancellation and small entries keep
    their relative accuracy.  Time is cut into chunks with c tau <= chunk
    and the iterate is renormalized after each chunk.
    """
    M = sp.csr_matrix(M)
    out = np.asarray(v, dtype=float).copy()
    if np.any(out < 0):
        raise ValueError("uniformization needs a nonnegative vector")
    # shift by the largest row sum so that P below is substochastic
    top = float(np.asarray(M.sum(axis=1)).max()) if M.shape[0] else 0.0
    scale = t * top
    M = M - top * sp.identity(M.shape[0], format="csr")
    c = max(float(-M.diagonal().min()), 1e-12)
    P = sp.identity(M.shape[0], format="csr") + M / c
    nrm = out.max() if out.size else 0.0
    if t == 0 or nrm == 0:
        return (out, 0.0) if return_log else out
    out /= nrm
    scale += math.log(nrm)
    n_chunks = max(1, int(math.ceil(c * t / chunk)))
    tau = t / n_chunks
    lam = c * tau
    kmax = int(math.ceil(lam + 12.0 * math.sqrt(lam) + 40.0))
    k = np.arange(kmax + 1)
    weights = np.exp(k * math.log(lam) - lam - gammaln(k + 1)) if lam > 0 else (k == 0).astype(float)
    if lam > 0 and poisson.sf(kmax, lam) > tail:
        raise SpectralError("Poisson truncation too short")
    for _ in range(n_chunks):
        term = out
        acc = weights[0] * term
        for w in weights[1:]:
            term = P @ term
            acc += w * term
        m = acc.max()
        if m <= 0:
            raise SpectralError("uniformization lost the iterate")
        out = acc / m
        scale += math.log(m)
    if return_log:
        return out, scale
    with np.errstate(over="ignore"):
        return out * np.exp(scale)


def semigroup_apply(sites, V, t: float, f0, method: str = "krylov", shift: float = 0.0, tol: float = 1e-10, return_log: bool = False):
    """e^{t (Delta + V - shift)} f0 on `sites`, zero outside.

    Sites with V = -inf get zero.  `shift` lets callers keep e^{t shift}
    as a separate logarithmic scale; with `return_log` the result comes back
    as (y, s) meaning y e^s, with y of unit size.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    V = np.asarray(V, dtype=float).ravel()
    f0 = np.asarray(f0, dtype=float).ravel()
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = np.zeros_like(f0)
    keep = np.isfinite(V)
    ls = 0.0
    s, v = sites[keep], V[keep] - shift
    if t == 0 or s.shape[0] == 0:
        out[keep] = f0[keep]
        return (out, ls) if return_log else out
    g = f0[keep]
    if method == "eigen":
        if _is_chain(s):
            lam, Q = eigh_tridiagonal(v - 2.0 * s.shape[1], _chain_offdiag(s))
        else:
            lam, Q = np.linalg.eigh(hamiltonian(s, v).toarray())
        ls = float(t * lam.max()) if return_log else 0.0
        out[keep] = Q @ (np.exp(t * lam - ls) * (Q.T @ g))
    elif method in ("krylov", "uniformization"):
        if method == "krylov":
            out[keep], ls = krylov_expmv(hamiltonian(s, v), g, t, tol=tol, return_log=True)
        else:
            out[keep], ls = uniformized_expmv(hamiltonian(s, v), g, t, return_log=True)
        if not return_log:
            with np.errstate(over="ignore"):
                out *= np.exp(ls)
            ls = 0.0
    else:
        raise ValueError(f"unknown method {method!r}")
    return (out, ls) if return_log else out


def eigen_expansion(sites, V, t: float, f0, k: int | None = None, shift: float = 0.0):
    """Truncated expansion sum_k e^{lambda_k t} <e_k, f0> e_k over the top k modes."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    V = np.asarray(V, dtype=float).ravel()
    f0 = np.asarray(f0, dtype=float).ravel()
    keep = np.isfinite(V)
    n = int(keep.sum())
    lam, vec, _ = leading_eigenpairs(sites[keep], V[keep] - shift, k=n if k is None else k)
    out = np.zeros_like(f0)
    out[keep] = vec @ (np.exp(t * lam) * (vec.T @ f0[keep]))
    return out


def resolvent_solve(sites, V, gamma: float) -> np.ndarray:
    """Solve [Delta + V - gamma] v = gamma - V on the domain, zero outside.

    1 + v(x) is the expectation of exp{int_0^{exit} (V - gamma)} started at x.
    """
    s, v = effective_domain(sites, V)
    lam = principal_eigenvalue(s, v)
    if not gamma > lam:
        raise SpectralError(f"gamma={gamma} must exceed the principal eigenvalue {lam}")
    H = hamiltonian(s, v) - gamma * sp.identity(len(v), format="csr")
    sol = sp.linalg.spsolve(H.tocsc(), gamma - v)
    out = np.zeros(np.atleast_2d(sites).shape[0])
    out[np.isfinite(np.asarray(V, dtype=float).ravel())] = sol
    return out


def resolvent_bound(n_sites: int, d: int, gamma: float, lam: float) -> float:
    """2d |A| / (gamma - lambda_A)."""
    return 2.0 * d * n_sites / (gamma - lam)


def eigenvalue_gradient(sites, V, gap_tol: float = 1e-8) -> np.ndarray:
    """Gradient of V -> lambda_A(V): the squared unit eigenfunction."""
    s, v = effective_domain(sites, V)
    if s.shape[0] == 0:
        raise EmptyDomain("empty effective domain")
    lam, vec = _top_eigenpairs(s, v, 2)
    if len(lam) == 2 and lam[-1] - lam[-2] <= gap_tol:
        raise SpectralError("principal eigenvalue is (nearly) degenerate")
    g = vec[:, -1] ** 2
    out = np.zeros(np.atleast_2d(sites).shape[0])
    out[np.isfinite(np.asarray(V, dtype=float).ravel())] = g
    return out


def subbox_eigenvalue_scan(box: Box, V, n: int) -> dict:
    """lambda_B(V) against the largest principal eigenvalue over subboxes B_n(x) cap B."""
    if n > box.radius:
        raise ValueError("n must not exceed the box radius")
    V = np.asarray(V, dtype=float).ravel()
    sites = box.sites()
    full = principal_eigenvalue(sites, V)
    best = -math.inf
    best_at = None
    for x in sites:
        sub = Box(tuple(x), n)
        mask = sub.contains(sites)
        lam = principal_eigenvalue(sites[mask], V[mask])
        if lam > best:
            best, best_at = lam, tuple(int(c) for c in x)
    if best > full + 1e-9 * (1 + abs(full)):
        raise SpectralError("domain monotonicity violated in subbox scan")
    return {"lambda_box": full, "lambda_subbox_max": best, "argmax": best_at, "gap": full - best, "n": n}
