"""Box geometry on Z^d, cube neighborhoods and r-connectivity."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable

import numpy as np
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

Site = tuple[int, ...]
SiteSet = frozenset  # frozenset[Site]


def as_site_array(sites: Iterable[Site] | np.ndarray, d: int | None = None) -> np.ndarray:
    """Return sites as a lexicographically sorted, duplicate-free (n, d) int array."""
    if isinstance(sites, np.ndarray):
        arr = np.asarray(sites, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[:, None]
    else:
        lst = list(sites)
        if not lst:
            return np.zeros((0, d or 1), dtype=np.int64)
        arr = np.asarray(lst, dtype=np.int64).reshape(len(lst), -1)
    if arr.shape[0] == 0:
        return arr.reshape(0, arr.shape[1] if arr.ndim == 2 else (d or 1))
    return np.unique(arr, axis=0)


def to_siteset(arr: np.ndarray) -> frozenset:
    return frozenset(tuple(int(c) for c in row) for row in np.asarray(arr))


def sorted_sites(A: Iterable[Site]) -> list[Site]:
    return sorted(A)


def ell1_norm(x: Site) -> int:
    return int(sum(abs(int(c)) for c in x))


@dataclass(frozen=True)
class Box:
    """B_R(center) = center + [-R, R]^d intersected with Z^d."""

    center: Site
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("box radius must be nonnegative")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @classmethod
    def centered(cls, d: int, radius: int) -> "Box":
        return cls((0,) * d, int(radius))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    def __len__(self) -> int:
        return self.side**self.d

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.int64) - self.radius

    def sites(self) -> np.ndarray:
        """All sites in lexicographic order, shape (|B|, d)."""
        axes = [np.arange(c - self.radius, c + self.radius + 1) for c in self.center]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)

    def contains(self, sites: np.ndarray) -> np.ndarray:
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        return np.all(np.abs(sites - np.asarray(self.center)) <= self.radius, axis=1)

    def index_of(self, sites: np.ndarray) -> np.ndarray:
        """Flat index of each site in `sites()` order; raises if a site is outside."""
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        if sites.shape[0] and not np.all(self.contains(sites)):
            raise IndexError("site outside box")
        rel = sites - self.lo
        if sites.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(rel.T), self.shape)

    def subbox(self, center: Site, radius: int) -> "Box":
        return Box(center, radius)

    def issubset(self, other: "Box") -> bool:
        off = np.abs(np.asarray(self.center) - np.asarray(other.center))
        return bool(np.all(off + self.radius <= other.radius))


def cube_neighborhood(A: Iterable[Site], R: int) -> frozenset:
    """B_R(A): union of the cubes B_R(y), y in A.  B_0(A) = A."""
    A = list(A)
    if not A:
        return frozenset()
    if R == 0:
        return frozenset(tuple(int(c) for c in y) for y in A)
    arr = as_site_array(A)
    d = arr.shape[1]
    offsets = np.array(list(product(range(-R, R + 1), repeat=d)), dtype=np.int64)
    allpts = (arr[:, None, :] + offsets[None, :, :]).reshape(-1, d)
    return to_siteset(np.unique(allpts, axis=0))


def cube_neighborhood_array(arr: np.ndarray, R: int) -> np.ndarray:
    """Array version of `cube_neighborhood`, sorted lexicographically."""
    arr = np.atleast_2d(np.asarray(arr, dtype=np.int64))
    if arr.shape[0] == 0:
        return arr
    d = arr.shape[1]
    offsets = np.array(list(product(range(-R, R + 1), repeat=d)), dtype=np.int64)
    return np.unique((arr[:, None, :] + offsets[None, :, :]).reshape(-1, d), axis=0)


def connected_components(A: Iterable[Site], r: int) -> list[frozenset]:
    """Maximal r-connected components, r-neighbors meaning sup-norm distance <= r.

    Components are ordered by their lexicographically smallest member.
    """
    if r < 1:
        raise ValueError("r must be a positive integer")
    arr = as_site_array(list(A))
    if arr.shape[0] == 0:
        return []
    labels = component_labels(arr, r)
    comps = [arr[labels == k] for k in range(labels.max() + 1)]
    # arr is sorted, so the first row of each component is its smallest member
    comps.sort(key=lambda c: tuple(c[0]))
    return [to_siteset(c) for c in comps]


def component_labels(arr: np.ndarray, r: int) -> np.ndarray:
    """Labels of r-connected components for a sorted site array.

    Labels are numbered in order of first appearance, so component 0 holds the
    lexicographically smallest site.
    """
    n = arr.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    tree = cKDTree(arr)
    pairs = tree.query_pairs(r + 1e-9, p=np.inf, output_type="ndarray")
    from scipy.sparse import coo_matrix

    adj = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else ([], ([], [])),
        shape=(n, n),
    )
    _, raw = _cc(adj, directed=False)
    # renumber by first appearance
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[raw]


def set_distance(A: Iterable[Site], B: Iterable[Site]) -> int:
    """Minimal l1 (lattice) distance between members of A and B."""
    a = as_site_array(list(A))
    b = as_site_array(list(B))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("set_distance needs nonempty arguments")
    best = None
    # chunk to bound memory
    for i in range(0, a.shape[0], 512):
        dist = np.abs(a[i : i + 512, None, :] - b[None, :, :]).sum(axis=2).min()
        best = dist if best is None else min(best, dist)
    return int(best)


def min_pairwise_distance(sites: Iterable[Site]) -> float:
    """Smallest l1 distance between distinct sites; inf for fewer than two sites."""
    arr = as_site_array(list(sites))
    if arr.shape[0] < 2:
        return float("inf")
    D = np.abs(arr[:, None, :] - arr[None, :, :]).sum(axis=2)
    D[np.diag_indices_from(D)] = np.iinfo(np.int64).max
    return float(D.min())


def distance_matrix(sites: Iterable[Site]) -> np.ndarray:
    arr = as_site_array(list(sites))
    return np.abs(arr[:, None, :] - arr[None, :, :]).sum(axis=2)
