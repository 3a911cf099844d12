"""k-means clustering of daily charging profiles.

Two feature modes are supported: the raw 1,440-minute average profile and
a two-dimensional polar summary that projects the profile onto the daily
sine and cosine harmonics.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ev_data import MINUTES_PER_DAY, EvProfile

MODES = ("standard", "polar")
CLUSTER_SCHEMA = "flexgrid.cluster.v1"
SILHOUETTE_MAX_POINTS = 2000

_THETA = 2.0 * np.pi * (np.arange(MINUTES_PER_DAY) / 60.0) / 24.0
_SIN = np.sin(_THETA)
_COS = np.cos(_THETA)


class ClusteringError(ValueError):
    pass


@dataclass
class FeatureVector:
    user_id: str
    values: np.ndarray
    mode: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = MINUTES_PER_DAY if self.mode == "standard" else 2
        if self.mode not in MODES:
            raise ClusteringError(f"unknown feature mode {self.mode!r}")
        if self.values.shape != (expected,):
            raise ClusteringError(f"{self.mode} features need length {expected}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ClusteringError(f"non-finite feature for user {self.user_id}")


def feature_standard(profile: EvProfile) -> FeatureVector:
    return FeatureVector(profile.user_id, profile.avg_profile_kw.copy(), "standard")


def polar_coordinates(avg_profile_kw) -> np.ndarray:
    """(sine sum, cosine sum) of a 1,440-minute profile with t in hours."""
    p = np.asarray(avg_profile_kw, dtype=float)
    return np.array([_SIN @ p, _COS @ p])


def feature_polar(profile: EvProfile) -> FeatureVector:
    return FeatureVector(profile.user_id, polar_coordinates(profile.avg_profile_kw), "polar")


def make_features(profiles: Mapping[str, EvProfile], mode: str) -> list[FeatureVector]:
    if mode not in MODES:
        raise ClusteringError(f"unknown feature mode {mode!r}")
    fn = feature_standard if mode == "standard" else feature_polar
    return [fn(profiles[uid]) for uid in sorted(profiles)]


# ---------------------------------------------------------------------------
# Lloyd's algorithm


@dataclass
class ClusterModel:
    mode: str
    k: int
    centroids: np.ndarray
    assignments: dict[str, int]
    inertia_j_kw2: float
    seed: int
    n_iterations: int
    objective_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def inertia_root_kw(self) -> float:
        return math.sqrt(self.inertia_j_kw2)

    def members(self, cluster: int) -> list[str]:
        return sorted(u for u, c in self.assignments.items() if c == cluster)


def _stack(features: Sequence[FeatureVector]) -> tuple[list[str], np.ndarray, str]:
    if not features:
        raise ClusteringError("no features to cluster")
    modes = {f.mode for f in features}
    if len(modes) != 1:
        raise ClusteringError(f"mixed feature modes: {sorted(modes)}")
    ids = [f.user_id for f in features]
    if len(set(ids)) != len(ids):
        raise ClusteringError("duplicate user ids in features")
    # canonical order by user id: results do not depend on input order
    order = sorted(range(len(ids)), key=ids.__getitem__)
    X = np.vstack([features[i].values for i in order])
    if not np.all(np.isfinite(X)):
        raise ClusteringError("non-finite feature values")
    return [ids[i] for i in order], X, modes.pop()


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def objective(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Sum of squared distances of points to their assigned centroid."""
    diff = X - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center; take the first unused one
            choice = next(i for i in range(n) if i not in idx)
        else:
            r = rng.random() * total
            choice = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            choice = min(choice, n - 1)
        idx.append(choice)
        d2 = np.minimum(d2, ((X - X[choice]) ** 2).sum(1))
    return X[idx].copy()


def _repair_empty(X, labels, centroids, k):
    # an empty cluster takes the point farthest from its centroid (never a singleton's only member)
    for c in range(k):
        if not np.any(labels == c):
            dist = ((X - centroids[labels]) ** 2).sum(1)
            counts = np.bincount(labels, minlength=k)
            dist[counts[labels] <= 1] = -1.0
            labels[int(np.argmax(dist))] = c
    return labels


def _lloyd(X, centroids, max_iter, tol):
    n, k = X.shape[0], centroids.shape[0]
    labels = np.argmin(_sq_dists(X, centroids), axis=1)
    trace = [objective(X, labels, centroids)]
    it = 0
    for it in range(1, max_iter + 1):
        labels = _repair_empty(X, labels, centroids, k)
        new_centroids = np.vstack([X[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(1)).max())
        centroids = new_centroids

        # move a point only if strictly closer elsewhere, so ties never raise the objective
        d = _sq_dists(X, centroids)
        best = np.argmin(d, axis=1)
        move = d[np.arange(n), best] < d[np.arange(n), labels]
        labels = np.where(move, best, labels)
        trace.append(objective(X, labels, centroids))
        if shift < tol and not move.any():
            break
    if len(np.unique(labels)) < k:
        labels = _repair_empty(X, labels, centroids, k)
        centroids = np.vstack([X[labels == c].mean(axis=0) for c in range(k)])
        trace.append(objective(X, labels, centroids))
    return labels, centroids, trace, it


def kmeans(
    features: Sequence[FeatureVector],
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    init: np.ndarray | None = None,
) -> ClusterModel:
    """Lloyd iterations from a seeded k-means++ start (or a given ``init``)."""
    ids, X, mode = _stack(features)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} must lie in [1, {n}] (number of users)")
    if max_iter < 1 or tol <= 0:
        raise ClusteringError("max_iter must be >= 1 and tol > 0")
    if init is None:
        centroids = _kmeanspp(X, k, np.random.default_rng(seed))
    else:
        centroids = np.array(init, dtype=float)
        if centroids.shape != (k, X.shape[1]):
            raise ClusteringError("init has wrong shape")
    labels, centroids, trace, n_iter = _lloyd(X, centroids, max_iter, tol)
    # relabel clusters by first member in canonical order so outputs are stable
    order = list(dict.fromkeys(labels.tolist()))
    remap = {old: new for new, old in enumerate(order)}
    labels = np.array([remap[c] for c in labels])
    centroids = centroids[order]
    return ClusterModel(
        mode=mode,
        k=k,
        centroids=centroids,
        assignments={u: int(c) for u, c in zip(ids, labels)},
        inertia_j_kw2=objective(X, labels, centroids),
        seed=seed,
        n_iterations=n_iter,
        objective_trace=trace,
    )


def kmeans_best(features, k, seeds: Sequence[int], **kw) -> ClusterModel:
    best = None
    for s in seeds:
        m = kmeans(features, k, seed=s, **kw)
        if best is None or m.inertia_j_kw2 < best.inertia_j_kw2:
            best = m
    return best


def model_inertia(model: ClusterModel, features: Sequence[FeatureVector]) -> float:
    """Recompute the clustering objective from centroids and assignments."""
    ids, X, _ = _stack(features)
    labels = np.array([model.assignments[u] for u in ids])
    return objective(X, labels, model.centroids)


# ---------------------------------------------------------------------------
# Model selection


def silhouette(features, assignments: Mapping[str, int], seed: int = 0, max_points: int = SILHOUETTE_MAX_POINTS) -> float:
    """Mean silhouette with Euclidean distance.

    Singleton members score 0, as does a point with a = b = 0.  Above
    ``max_points`` a seeded subsample is scored.
    """
    ids, X, _ = _stack(features)
    labels = np.array([assignments[u] for u in ids])
    k = len(set(labels.tolist()))
    if k < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    if len(ids) > max_points:
        keep = np.sort(np.random.default_rng(seed).choice(len(ids), max_points, replace=False))
        X, labels = X[keep], labels[keep]
    D = np.sqrt(_sq_dists(X, X))
    np.fill_diagonal(D, 0.0)
    clusters = np.unique(labels)
    onehot = (labels[:, None] == clusters[None, :]).astype(float)
    sizes = onehot.sum(0)
    sums = D @ onehot
    own = np.searchsorted(clusters, labels)
    n = X.shape[0]
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes[None, :]
    mean_other[np.arange(n), own] = np.inf
    b = mean_other.min(1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


@dataclass
class SelectionRow:
    k: int
    inertia_j_kw2: float
    silhouette: float


def select_k(features, k_range: tuple[int, int], seeds_per_k: int = 10, max_iter: int = 300, tol: float = 1e-6,
             base_seed: int = 0):
    """Sweep k, keep the best-of-seeds model per k, pick k by silhouette.

    Each k+1 sweep also tries a warm start from the best k-solution with
    one extra centre at its worst-fit point, which makes the reported
    inertia non-increasing in k.  Seeds run from ``base_seed`` upwards.
    Returns ``(k_best, rows, models)``.
    """
    lo, hi = k_range
    if hi < lo:
        raise ClusteringError("empty k range")
    n = len(features)
    if lo < 2 or hi > n - 1:
        raise ClusteringError(f"k range [{lo}, {hi}] must lie within [2, {n - 1}]")
    ids, X, _ = _stack(features)
    rows: list[SelectionRow] = []
    models: dict[int, ClusterModel] = {}
    prev: ClusterModel | None = kmeans(features, lo - 1, seed=base_seed, max_iter=max_iter, tol=tol) if lo > 1 else None
    for k in range(lo, hi + 1):
        best = kmeans_best(features, k, range(base_seed, base_seed + seeds_per_k), max_iter=max_iter, tol=tol)
        if prev is not None:
            labels = np.array([prev.assignments[u] for u in ids])
            worst = int(np.argmax(((X - prev.centroids[labels]) ** 2).sum(1)))
            warm = kmeans(features, k, seed=base_seed, max_iter=max_iter, tol=tol,
                          init=np.vstack([prev.centroids, X[worst]]))
            if warm.inertia_j_kw2 < best.inertia_j_kw2:
                best = warm
        models[k] = best
        rows.append(SelectionRow(k, best.inertia_j_kw2, silhouette(features, best.assignments)))
        prev = best
    k_best = max(rows, key=lambda r: (r.silhouette, -r.k)).k
    return k_best, rows, models


def write_diagnostics(rows: Sequence[SelectionRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "inertia_j_kw2", "silhouette"])
        for r in rows:
            w.writerow([r.k, repr(float(r.inertia_j_kw2)), repr(float(r.silhouette))])


# ---------------------------------------------------------------------------
# Per-cluster statistics


@dataclass
class ClusterAggregates:
    centroid_profile_kw: np.ndarray  # (k, 1440)
    p_max_kw: np.ndarray  # (k,)
    frac_charging: np.ndarray  # (k, 1440)
    member_count: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return len(self.p_max_kw)

    def shares(self) -> np.ndarray:
        return self.member_count / self.member_count.sum()


def cluster_aggregates(model: ClusterModel, profiles: Mapping[str, EvProfile], per_user_pmax: Mapping[str, float] | None = None) -> ClusterAggregates:
    """Unweighted member means of profiles, charging fractions and peak powers."""
    if per_user_pmax is None:
        per_user_pmax = {u: p.p_max_kw for u, p in profiles.items()}
    cent, frac, pmax, count = [], [], [], []
    for c in range(model.k):
        members = model.members(c)
        missing = [u for u in members if u not in profiles or u not in per_user_pmax]
        if missing:
            raise ClusteringError(f"cluster {c}: no profile or p_max for {missing[:5]}")
        cent.append(np.mean([profiles[u].avg_profile_kw for u in members], axis=0))
        frac.append(np.mean([profiles[u].frac_charging for u in members], axis=0))
        pmax.append(float(np.mean([per_user_pmax[u] for u in members])))
        count.append(len(members))
    agg = ClusterAggregates(np.array(cent), np.array(pmax), np.clip(np.array(frac), 0.0, 1.0), np.array(count))
    if np.any(agg.p_max_kw <= 0):
        raise ClusteringError("cluster with non-positive p_max")
    return agg


# ---------------------------------------------------------------------------
# Model file


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def save_cluster_model(path, model: ClusterModel, aggregates: ClusterAggregates, extra: dict | None = None) -> None:
    doc = {
        "schema": CLUSTER_SCHEMA,
        "mode": model.mode,
        "k": model.k,
        "seed": model.seed,
        "n_iterations": model.n_iterations,
        "inertia_j_kw2": model.inertia_j_kw2,
        "inertia_root_kw": model.inertia_root_kw,
        "centroids": _floats(model.centroids),
        "assignments": dict(sorted(model.assignments.items())),
        "aggregates": {
            "centroid_profile_kw": _floats(aggregates.centroid_profile_kw),
            "frac_charging": _floats(aggregates.frac_charging),
            "p_max_kw": _floats(aggregates.p_max_kw),
            "member_count": [int(c) for c in aggregates.member_count],
        },
    }
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_cluster_model(path) -> tuple[ClusterModel, ClusterAggregates]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ClusteringError(f"cannot read cluster model {path}: {exc}") from exc
    if doc.get("schema") != CLUSTER_SCHEMA:
        raise ClusteringError(f"{path}: expected schema {CLUSTER_SCHEMA}, got {doc.get('schema')!r}")
    try:
        model = ClusterModel(
            mode=doc["mode"],
            k=int(doc["k"]),
            centroids=np.array(doc["centroids"], dtype=float),
            assignments={u: int(c) for u, c in doc["assignments"].items()},
            inertia_j_kw2=float(doc["inertia_j_kw2"]),
            seed=int(doc["seed"]),
            n_iterations=int(doc["n_iterations"]),
        )
        a = doc["aggregates"]
        agg = ClusterAggregates(
            np.array(a["centroid_profile_kw"], dtype=float),
            np.array(a["p_max_kw"], dtype=float),
            np.array(a["frac_charging"], dtype=float),
            np.array(a["member_count"], dtype=int),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ClusteringError(f"{path}: malformed cluster model: {exc}") from exc
    if agg.centroid_profile_kw.shape != (model.k, MINUTES_PER_DAY):
        raise ClusteringError(f"{path}: aggregates do not match k={model.k}")
    return model, agg
