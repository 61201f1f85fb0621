"""Orderings, predecessor-constrained exact k-NN, unconstrained k-NN, and an
IVF (inverted file) approximate index with a seeded k-means coarse quantizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

_BLOCK = 512  # rows per cdist block in the ordered search


@dataclass(frozen=True)
class Ordering:
    perm: np.ndarray  # bijection on 0..n-1
    seed: int

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        n = perm.shape[0]
        if sorted(perm.tolist()) != list(range(n)):
            raise ValueError("perm is not a permutation of 0..n-1")
        object.__setattr__(self, "perm", perm)

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    def positions(self) -> np.ndarray:
        """Inverse permutation: positions()[i] is where point i sits in the ordering."""
        pos = np.empty(self.n, dtype=np.int64)
        pos[self.perm] = np.arange(self.n)
        return pos


@dataclass
class ConditioningSets:
    """Per-point predecessor neighbor lists, ascending by distance, original index space."""

    m: int
    sets: list

    def to_padded(self) -> np.ndarray:
        """(n, m) int matrix padded with -1, for DVEB caching."""
        n = len(self.sets)
        out = np.full((n, self.m), -1, dtype=np.int64)
        for i, g in enumerate(self.sets):
            out[i, : len(g)] = g
        return out

    @classmethod
    def from_padded(cls, padded: np.ndarray) -> "ConditioningSets":
        padded = np.asarray(padded, dtype=np.int64)
        sets = [row[row >= 0].copy() for row in padded]
        return cls(m=padded.shape[1], sets=sets)


def random_ordering(n: int, seed: int) -> Ordering:
    """Uniform random permutation, deterministic per seed."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return Ordering(perm=np.random.default_rng(seed).permutation(n), seed=seed)


def _smallest(dist: np.ndarray, idx: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m smallest distances, ascending, ties broken by index."""
    if dist.shape[0] > m:
        keep = np.argpartition(dist, m - 1)[:m]
        dist, idx = dist[keep], idx[keep]
    order = np.lexsort((idx, dist))
    return idx[order]


def ordered_knn_exact(E: np.ndarray, ordering: Ordering, m: int) -> ConditioningSets:
    """Exact Euclidean m-NN among ordering predecessors, brute force in blocks."""
    E = np.asarray(E, dtype=np.float64)
    if m < 1:
        raise ValueError("m must be at least 1")
    perm = ordering.perm
    n = perm.shape[0]
    pe = E[perm]
    sets_by_orig = [None] * n
    for a in range(0, n, _BLOCK):
        b = min(a + _BLOCK, n)
        if b == 0:
            break
        D = cdist(pe[a:b], pe[:b], "sqeuclidean")
        for pos in range(a, b):
            if pos == 0:
                sets_by_orig[perm[0]] = np.empty(0, dtype=np.int64)
                continue
            row = D[pos - a, :pos]
            cand = perm[:pos]
            sets_by_orig[perm[pos]] = _smallest(row, cand, min(m, pos))
    return ConditioningSets(m=m, sets=sets_by_orig)


def knn_exact(E: np.ndarray, queries: np.ndarray, m: int):
    """Unconstrained exact m-NN of each query among the rows of E.

    Returns (indices, distances) as lists of ascending-distance arrays.
    """
    E = np.asarray(E, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = E.shape[0]
    k = min(m, n)
    all_idx = np.arange(n)
    idx_out, dist_out = [], []
    for a in range(0, queries.shape[0], _BLOCK):
        D = cdist(queries[a : a + _BLOCK], E, "sqeuclidean")
        for row in D:
            sel = _smallest(row, all_idx, k)
            idx_out.append(sel)
            dist_out.append(np.sqrt(row[sel]))
    return idx_out, dist_out


@dataclass
class IvfIndex:
    centroids: np.ndarray  # (n_list, d)
    lists: list  # member index arrays, one per centroid
    data: np.ndarray  # source embeddings the lists point into

    @property
    def n_list(self) -> int:
        return self.centroids.shape[0]


def _kmeans_pp_init(E: np.ndarray, n_list: int, rng) -> np.ndarray:
    n = E.shape[0]
    first = int(rng.integers(n))
    centroids = [E[first]]
    d2 = cdist(E, E[first : first + 1], "sqeuclidean")[:, 0]
    for _ in range(1, n_list):
        total = d2.sum()
        if total <= 0.0:
            nxt = int(rng.integers(n))  # all mass on chosen points: fall back to uniform
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centroids.append(E[nxt])
        d2 = np.minimum(d2, cdist(E, E[nxt : nxt + 1], "sqeuclidean")[:, 0])
    return np.array(centroids)


def ivf_build(E: np.ndarray, n_list: int, seed: int = 0, kmeans_iters: int = 25) -> IvfIndex:
    """Seeded k-means++ quantizer with a fixed Lloyd iteration count."""
    E = np.ascontiguousarray(np.asarray(E, dtype=np.float64))
    n = E.shape[0]
    if not 1 <= n_list <= n:
        raise ValueError(f"n_list must be in [1, {n}], got {n_list}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(E, n_list, rng)
    for _ in range(kmeans_iters):
        assign = np.argmin(cdist(E, centroids, "sqeuclidean"), axis=1)
        for c in range(n_list):
            members = assign == c
            if members.any():  # empty clusters keep their centroid
                centroids[c] = E[members].mean(axis=0)
    assign = np.argmin(cdist(E, centroids, "sqeuclidean"), axis=1)
    lists = [np.flatnonzero(assign == c) for c in range(n_list)]
    return IvfIndex(centroids=centroids, lists=lists, data=E)


def ivf_query(
    idx: IvfIndex,
    q: np.ndarray,
    m: int,
    n_probe: int,
    predecessor_filter=None,
) -> np.ndarray:
    """Exact m-NN restricted to the members of the n_probe nearest centroids'
    lists; optionally filtered to ordering predecessors.  May return fewer
    than m indices when the probed lists are small."""
    q = np.asarray(q, dtype=np.float64)
    if not 1 <= n_probe <= idx.n_list:
        raise ValueError(f"n_probe must be in [1, {idx.n_list}], got {n_probe}")
    cd = cdist(q.reshape(1, -1), idx.centroids, "sqeuclidean")[0]
    probes = _smallest(cd, np.arange(idx.n_list), n_probe)
    cand = np.concatenate([idx.lists[c] for c in probes]) if len(probes) else np.empty(0, np.int64)
    if predecessor_filter is not None:
        ordering, position = predecessor_filter
        pos = ordering.positions()
        cand = cand[pos[cand] < position]
    if cand.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    d = cdist(q.reshape(1, -1), idx.data[cand], "sqeuclidean")[0]
    return _smallest(d, cand, min(m, cand.shape[0]))


def ivf_conditioning_sets(idx: IvfIndex, ordering: Ordering, m: int, n_probe: int) -> ConditioningSets:
    """Training conditioning sets from the IVF index: per point, the m nearest
    probed predecessors.  Shares the ivf_query semantics with the inverse
    permutation computed once."""
    pos = ordering.positions()
    n = ordering.n
    cd = cdist(idx.data, idx.centroids, "sqeuclidean")
    sets = [None] * n
    all_lists = idx.lists
    for i in range(n):
        probes = _smallest(cd[i], np.arange(idx.n_list), n_probe)
        cand = np.concatenate([all_lists[c] for c in probes])
        cand = cand[pos[cand] < pos[i]]
        if cand.shape[0] == 0:
            sets[i] = np.empty(0, dtype=np.int64)
            continue
        d = cdist(idx.data[i : i + 1], idx.data[cand], "sqeuclidean")[0]
        sets[i] = _smallest(d, cand, min(m, cand.shape[0]))
    return ConditioningSets(m=m, sets=sets)
