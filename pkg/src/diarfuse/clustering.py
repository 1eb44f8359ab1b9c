"""Constrained clustering of local speaker embeddings.

Two stages: a soft-constrained agglomerative pass (cAHC) estimates how many
speakers there are, then COP-Kmeans re-clusters with that count fixed while
strictly forbidding two streams of one segment from sharing a cluster.
Embeddings are unit vectors; distances are cosine distances ``1 - dot``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import Infeasible

ALGORITHMS = ("cop_kmeans", "kmeans", "cahc", "ahc")
MAX_ORDER_ATTEMPTS = 10


@dataclass(frozen=True)
class ConstraintSet:
    """Cannot-link pairs over item indices.

    ``groups`` (optional) gives each item's segment; it is used to count
    segments that contain at least one violated pair.
    """

    n_items: int
    cannot_link: frozenset[tuple[int, int]] = frozenset()
    groups: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        pairs = set()
        for a, b in self.cannot_link:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self cannot-link pair ({a}, {b})")
            if not (0 <= a < self.n_items and 0 <= b < self.n_items):
                raise ValueError(f"pair ({a}, {b}) outside [0, {self.n_items})")
            pairs.add((min(a, b), max(a, b)))
        object.__setattr__(self, "cannot_link", frozenset(pairs))
        if self.groups is not None:
            groups = tuple(int(g) for g in self.groups)
            if len(groups) != self.n_items:
                raise ValueError("groups length must equal n_items")
            object.__setattr__(self, "groups", groups)

    @classmethod
    def from_groups(cls, groups: Sequence[int]) -> "ConstraintSet":
        """Every pair of items sharing a group is cannot-linked."""
        members: dict[int, list[int]] = {}
        for i, g in enumerate(groups):
            members.setdefault(int(g), []).append(i)
        pairs = frozenset(p for m in members.values() for p in itertools.combinations(m, 2))
        return cls(len(groups), pairs, tuple(int(g) for g in groups))

    @classmethod
    def empty(cls, n_items: int) -> "ConstraintSet":
        return cls(n_items)

    def partners(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_items)]
        for a, b in sorted(self.cannot_link):
            out[a].append(b)
            out[b].append(a)
        return out

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.n_items, self.n_items), dtype=np.float64)
        for a, b in self.cannot_link:
            m[a, b] = m[b, a] = 1.0
        return m


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]
    k: int
    violations: int = 0
    violating_segments: int = 0
    diagnostics: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))

    @property
    def n_items(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class ClusteringParams:
    stop_threshold: float = 0.6
    penalty: float = 2.0
    max_iter: int = 100
    seed: int = 0
    algorithm: str = "cop_kmeans"

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")


# ---------------------------------------------------------------------------
# helpers


def canonical_labels(labels: Iterable[int]) -> np.ndarray:
    """Rename clusters to 0, 1, ... in order of first appearance."""
    labels = np.asarray(list(labels), dtype=np.int64)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.ravel()]


def count_violations(labels: Sequence[int], constraints: ConstraintSet | None) -> tuple[int, int]:
    """Return ``(violated pairs, segments with a violated pair)``.

    Without segment groups each violated pair counts as its own segment.
    """
    if constraints is None or not constraints.cannot_link:
        return 0, 0
    violated = [(a, b) for a, b in constraints.cannot_link if labels[a] == labels[b]]
    if constraints.groups is None:
        return len(violated), len(violated)
    segs = {constraints.groups[a] for a, _ in violated}
    return len(violated), len(segs)


def make_assignment(
    labels: Iterable[int], constraints: ConstraintSet | None, diagnostics: Mapping[str, Any] | None = None
) -> ClusterAssignment:
    lab = canonical_labels(labels)
    k = int(lab.max()) + 1 if lab.size else 0
    v, vs = count_violations(lab, constraints)
    return ClusterAssignment(tuple(lab.tolist()), k, v, vs, dict(diagnostics or {}))


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def spherical_centroids(X: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Renormalized cluster means and cluster sizes."""
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    sizes = np.bincount(labels, minlength=k)
    return _unit(sums), sizes


def kmeans_objective(embeddings: np.ndarray, labels: Sequence[int]) -> float:
    """Sum of cosine distances from each item to its cluster's spherical centroid."""
    X = _unit(np.asarray(embeddings, dtype=np.float64))
    lab = np.asarray(labels, dtype=np.int64)
    k = int(lab.max()) + 1
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, lab, X)
    sizes = np.bincount(lab, minlength=k)
    return float(np.sum(sizes - np.linalg.norm(sums, axis=1)))


# ---------------------------------------------------------------------------
# distances and AHC


def cosine_distance_matrix(embeddings: np.ndarray) -> np.ndarray:
    """``d[i, j] = 1 - e_i . e_j`` for unit rows; exact zero diagonal, symmetric."""
    E = np.asarray(embeddings, dtype=np.float64)
    d = 1.0 - E @ E.T
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def constrained_ahc(
    dist: np.ndarray,
    constraints: ConstraintSet | None = None,
    stop_threshold: float = 0.6,
    penalty: float = 2.0,
) -> ClusterAssignment:
    """Average-linkage AHC with an additive penalty per spanning cannot-link pair.

    The cost of merging clusters A and B is their mean pairwise distance plus
    ``penalty`` times the number of cannot-link pairs between them. The cheapest
    pair is merged while its cost is below ``stop_threshold``. Equal costs go to
    the pair with the smallest first cluster index, then second.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    if n == 0:
        return ClusterAssignment((), 0)
    sums = dist.copy()
    links = constraints.matrix() if constraints is not None and constraints.cannot_link else np.zeros((n, n))
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    owner = np.arange(n)
    lower = np.tril(np.ones((n, n), dtype=bool))

    cost = sums / np.outer(sizes, sizes) + penalty * links
    cost[lower] = np.inf
    merges = []
    while alive.sum() > 1:
        flat = int(np.argmin(cost))
        i, j = divmod(flat, n)
        c = cost[i, j]
        if not c < stop_threshold:
            break
        merges.append((i, j, float(c)))
        sums[i, :] += sums[j, :]
        sums[:, i] = sums[i, :]
        links[i, :] += links[j, :]
        links[:, i] = links[i, :]
        sizes[i] += sizes[j]
        alive[j] = False
        owner[owner == j] = i
        cost[j, :] = np.inf
        cost[:, j] = np.inf
        row = sums[i, :] / (sizes[i] * sizes) + penalty * links[i, :]
        row[~alive] = np.inf
        cost[i, i + 1 :] = row[i + 1 :]
        cost[:i, i] = row[:i]
    return make_assignment(owner, constraints, {"merges": merges})


def plain_ahc(
    dist: np.ndarray, constraints: ConstraintSet | None = None, stop_threshold: float = 0.6
) -> ClusterAssignment:
    """Unconstrained average-linkage AHC; ``constraints`` only feed the violation counts."""
    return constrained_ahc(dist, constraints, stop_threshold, penalty=0.0)


def estimate_num_speakers(ahc_k: int, max_speakers: int) -> int:
    if ahc_k < 1 or max_speakers < 1:
        raise ValueError("ahc_k and max_speakers must be >= 1")
    return min(int(ahc_k), int(max_speakers))


# ---------------------------------------------------------------------------
# COP-Kmeans


def project_labels(X: np.ndarray, labels: Sequence[int], k: int) -> np.ndarray:
    """Reduce a partition to at most ``k`` clusters.

    The smallest cluster is folded into the cluster with the nearest centroid
    until ``k`` remain. Size ties go to the lower cluster id.
    """
    lab = canonical_labels(labels)
    while lab.max() + 1 > k:
        m = int(lab.max()) + 1
        cents, sizes = spherical_centroids(X, lab, m)
        small = int(np.argmin(sizes))
        d = 1.0 - cents @ cents[small]
        d[small] = np.inf
        target = int(np.argmin(d))
        lab[lab == small] = target
        lab = canonical_labels(lab)
    return lab


def _initial_centroids(
    X: np.ndarray, k: int, init_labels: Sequence[int] | None, rng: np.random.Generator
) -> np.ndarray:
    n = X.shape[0]
    if init_labels is not None:
        lab = project_labels(X, init_labels, k)
        cents, _ = spherical_centroids(X, lab, int(lab.max()) + 1)
        cents = list(cents)
    else:
        cents = [X[int(rng.integers(n))]]
    # farthest-point completion when the initial partition has fewer than k clusters
    while len(cents) < k:
        C = np.asarray(cents)
        nearest = np.min(1.0 - X @ C.T, axis=1)
        cents.append(X[int(np.argmax(nearest))])
    return np.asarray(cents)


def _update_centroids(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    cents, sizes = spherical_centroids(X, labels, k)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        # reseed empty clusters with the worst-fitting items of multi-member clusters
        resid = 1.0 - np.einsum("ij,ij->i", X, cents[labels])
        resid[sizes[labels] <= 1] = -np.inf
        for c, item in zip(empty, np.argsort(-resid, kind="stable")):
            cents[c] = X[item]
    return cents


def _assign(
    X: np.ndarray,
    cents: np.ndarray,
    partners: list[list[int]] | None,
    rng: np.random.Generator,
) -> np.ndarray:
    n, k = X.shape[0], cents.shape[0]
    dist = 1.0 - X @ cents.T
    choice = np.argsort(dist, axis=1, kind="stable")
    if partners is None:
        return choice[:, 0].copy()
    if k > 1:
        ranked = np.take_along_axis(dist, choice, axis=1)
        margin = ranked[:, 1] - ranked[:, 0]
    else:
        margin = np.zeros(n)
    order = np.lexsort((np.arange(n), -margin))
    failed = -1
    for attempt in range(MAX_ORDER_ATTEMPTS):
        if attempt:
            order = rng.permutation(n)
        labels = np.full(n, -1, dtype=np.int64)
        ok = True
        for i in order:
            blocked = {labels[p] for p in partners[i]}
            for c in choice[i]:
                if c not in blocked:
                    labels[i] = c
                    break
            else:
                failed, ok = int(i), False
                break
        if ok:
            return labels
    raise Infeasible(failed, f"item {failed} has every one of the {k} clusters blocked by cannot-link partners")


def _kmeans(
    embeddings: np.ndarray,
    constraints: ConstraintSet | None,
    k: int,
    init_labels,
    max_iter: int,
    seed: int,
    enforce: bool,
) -> ClusterAssignment:
    X = _unit(np.asarray(embeddings, dtype=np.float64))
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if constraints is not None and constraints.n_items != n:
        raise ValueError("constraint set size does not match the number of embeddings")
    partners = constraints.partners() if (enforce and constraints is not None) else None
    if partners is not None and k == 1 and constraints.cannot_link:
        a, _ = min(constraints.cannot_link)
        raise Infeasible(a, f"k=1 cannot satisfy cannot-link pairs (first involves item {a})")
    rng = np.random.default_rng(seed)
    init = getattr(init_labels, "labels", init_labels)
    cents = _initial_centroids(X, k, init, rng)
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        new = _assign(X, cents, partners, rng)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cents = _update_centroids(X, labels, k)
    diag = {"iterations": it, "objective": kmeans_objective(X, labels)}
    return make_assignment(labels, constraints, diag)


def cop_kmeans(
    embeddings: np.ndarray,
    constraints: ConstraintSet | None,
    k: int,
    init_labels: ClusterAssignment | Sequence[int] | None = None,
    max_iter: int = 100,
    seed: int = 0,
) -> ClusterAssignment:
    """Spherical k-means that never places cannot-linked items together.

    Each assignment pass visits items by decreasing margin (second-nearest minus
    nearest centroid distance) and gives each the nearest centroid not already
    holding one of its partners. If some item finds every cluster blocked, the
    pass is retried with reseeded random orders; after
    ``MAX_ORDER_ATTEMPTS`` failures :class:`Infeasible` is raised. Hitting
    ``max_iter`` is not an error.
    """
    return _kmeans(embeddings, constraints, k, init_labels, max_iter, seed, enforce=True)


def plain_kmeans(
    embeddings: np.ndarray,
    constraints: ConstraintSet | None,
    k: int,
    init_labels: ClusterAssignment | Sequence[int] | None = None,
    max_iter: int = 100,
    seed: int = 0,
) -> ClusterAssignment:
    """Same iteration as :func:`cop_kmeans` without blocking; violations are only counted."""
    return _kmeans(embeddings, constraints, k, init_labels, max_iter, seed, enforce=False)


# ---------------------------------------------------------------------------
# session-level procedure


def cluster_session(streams, max_speakers: int = 4, params: ClusteringParams | None = None) -> ClusterAssignment:
    """Cluster the selected streams of one channel.

    Cannot-links come from segment co-membership. cAHC (or plain AHC for the
    ``"ahc"`` baseline) estimates the count, capped at ``max_speakers``; the
    final labels come from COP-Kmeans, plain k-means, or the capped AHC
    partition, depending on ``params.algorithm``.
    """
    params = params or ClusteringParams()
    streams = list(streams)
    if not streams:
        raise ValueError("cluster_session needs at least one stream")
    X = np.stack([np.asarray(s.embedding, dtype=np.float64) for s in streams])
    cs = ConstraintSet.from_groups([s.segment_index for s in streams])
    dist = cosine_distance_matrix(_unit(X))
    if params.algorithm == "ahc":
        ahc = plain_ahc(dist, cs, params.stop_threshold)
    else:
        ahc = constrained_ahc(dist, cs, params.stop_threshold, params.penalty)
    k = estimate_num_speakers(ahc.k, max_speakers)
    if params.algorithm == "cop_kmeans":
        final = cop_kmeans(X, cs, k, ahc, params.max_iter, params.seed)
    elif params.algorithm == "kmeans":
        final = plain_kmeans(X, cs, k, ahc, params.max_iter, params.seed)
    else:
        final = make_assignment(project_labels(X, ahc.labels, k), cs)
    diagnostics = {
        "algorithm": params.algorithm,
        "n_streams": len(streams),
        "ahc_k": ahc.k,
        "k": final.k,
        "ahc_violations": ahc.violations,
        "ahc_violating_segments": ahc.violating_segments,
        "violations": final.violations,
        "violating_segments": final.violating_segments,
    }
    return ClusterAssignment(final.labels, final.k, final.violations, final.violating_segments, diagnostics)


__all__ = [
    "ALGORITHMS",
    "ClusterAssignment",
    "ClusteringParams",
    "ConstraintSet",
    "canonical_labels",
    "cluster_session",
    "constrained_ahc",
    "cop_kmeans",
    "cosine_distance_matrix",
    "count_violations",
    "estimate_num_speakers",
    "kmeans_objective",
    "make_assignment",
    "plain_ahc",
    "plain_kmeans",
    "project_labels",
]
