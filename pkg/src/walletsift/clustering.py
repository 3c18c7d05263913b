"""K-means clustering with deterministic seeding, cluster-validity indices,
knee-point detection for picking k, and shuffle-split cross-validation.

All randomness flows through explicit integer seeds; identical inputs and
seeds give bit-identical results.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureMatrix


def _as_array(matrix) -> np.ndarray:
    if isinstance(matrix, FeatureMatrix):
        return matrix.values
    return np.asarray(matrix, dtype=float)


def _pairwise_sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, points x centers."""
    d = (
        np.einsum("ij,ij->i", x, x)[:, None]
        + np.einsum("ij,ij->i", centers, centers)[None, :]
        - 2.0 * (x @ centers.T)
    )
    np.maximum(d, 0.0, out=d)
    return d


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    iterations: int
    seed: int
    converged: bool
    wcss_history: list[float] = field(default_factory=list)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=float)
    first = int(rng.integers(m))
    centers[0] = x[first]
    sq = _pairwise_sq_dists(x, centers[0:1])[:, 0]
    for j in range(1, k):
        total = sq.sum()
        if total <= 0:
            # all remaining mass at existing centers; fall back to uniform
            idx = int(rng.integers(m))
        else:
            cut = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(sq), cut, side="right"))
            idx = min(idx, m - 1)
        centers[j] = x[idx]
        sq = np.minimum(sq, _pairwise_sq_dists(x, centers[j:j + 1])[:, 0])
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    """Lloyd iterations from given initial centers.

    Returns (centers, assignments, wcss, iterations, converged, history).
    Empty clusters are repaired by moving their centroid onto the point
    farthest from its current centroid, then iterating on.
    """
    k = centers.shape[0]
    centers = centers.copy()
    history: list[float] = []
    assignments = np.zeros(x.shape[0], dtype=np.int64)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        d = _pairwise_sq_dists(x, centers)
        assignments = d.argmin(axis=1)
        own = d[np.arange(x.shape[0]), assignments]
        counts = np.bincount(assignments, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(own.argmax())
            centers[j] = x[far]
            assignments[far] = j
            own[far] = 0.0
            counts = np.bincount(assignments, minlength=k)
        history.append(float(own.sum()))

        new_centers = np.empty_like(centers)
        for j in range(k):
            new_centers[j] = x[assignments == j].mean(axis=0)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            converged = True
            break
    d = _pairwise_sq_dists(x, centers)
    assignments = d.argmin(axis=1)
    own = d[np.arange(x.shape[0]), assignments]
    counts = np.bincount(assignments, minlength=k)
    for j in np.flatnonzero(counts == 0):
        far = int(own.argmax())
        centers[j] = x[far]
        assignments[far] = j
        own[far] = 0.0
    wcss_final = float(own.sum())
    history.append(wcss_final)
    return centers, assignments, wcss_final, iteration, converged, history


def kmeans_fit(matrix, k: int, seed: int, max_iter: int = 300, tol: float = 1e-6,
               init_centers: np.ndarray | None = None, restarts: int = 1) -> KMeansModel:
    """Lloyd's algorithm with k-means++ initialization from the seed.

    Deterministic for a given (data, k, seed, restarts). Every cluster index
    ends up used at least once. wcss_history records the objective after
    each assignment step and is non-increasing. With restarts > 1 the fit
    reruns from sub-seeds (seed + 7919*r) and keeps the lowest-WCSS result.
    """
    x = _as_array(matrix)
    m = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > m:
        raise ValueError(f"k={k} exceeds number of points m={m}")
    if init_centers is None and restarts > 1:
        best = None
        for r in range(restarts):
            candidate = kmeans_fit(x, k, seed=seed + 7919 * r, max_iter=max_iter, tol=tol)
            if best is None or candidate.wcss < best.wcss:
                best = candidate
        best.seed = seed
        return best
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng) if init_centers is None else np.asarray(init_centers, dtype=float)
    if centers.shape != (k, x.shape[1]):
        raise ValueError("init_centers shape mismatch")
    centers, assignments, wcss_value, iterations, converged, history = _lloyd(x, centers, max_iter, tol)
    return KMeansModel(
        k=k,
        centroids=centers,
        assignments=assignments,
        wcss=wcss_value,
        iterations=iterations,
        seed=seed,
        converged=converged,
        wcss_history=history,
    )


def wcss(matrix, centroids: np.ndarray, assignments) -> float:
    """Sum of squared distances of each point to its assigned centroid."""
    x = _as_array(matrix)
    a = np.asarray(assignments)
    k = np.asarray(centroids).shape[0]
    if a.size and (a.min() < 0 or a.max() >= k):
        raise ValueError("assignment index out of range")
    diff = x - np.asarray(centroids, dtype=float)[a]
    return float(np.einsum("ij,ij->", diff, diff))


def davies_bouldin(matrix, assignments) -> float:
    """Average over clusters of the worst (s_i + s_j) / d_ij ratio, where
    s is mean point-to-centroid distance and d is centroid separation."""
    x = _as_array(matrix)
    a = np.asarray(assignments)
    labels = np.unique(a)
    k = labels.size
    if k < 2:
        raise ValueError("davies_bouldin needs at least 2 clusters")
    expected = np.arange(a.max() + 1)
    if not np.array_equal(labels, expected):
        raise ValueError("empty cluster in assignments")
    centroids = np.vstack([x[a == j].mean(axis=0) for j in labels])
    spread = np.array([
        float(np.sqrt(((x[a == j] - centroids[j]) ** 2).sum(axis=1)).mean())
        for j in labels
    ])
    sep = np.sqrt(_pairwise_sq_dists(centroids, centroids))
    total = 0.0
    for i in range(k):
        ratios = [(spread[i] + spread[j]) / sep[i, j] for j in range(k) if j != i]
        total += max(ratios)
    return total / k


def silhouette(matrix, assignments, subsample_size: int = 0, seed: int = 0) -> float:
    """Mean silhouette score (b - a) / max(a, b).

    a is the mean distance to the point's own cluster (excluding itself),
    b the smallest mean distance to another cluster. Points in singleton
    clusters score 0. With subsample_size > 0, scores are averaged over a
    seeded without-replacement sample, but a and b are always measured
    against the full dataset.
    """
    x = _as_array(matrix)
    a = np.asarray(assignments)
    m = x.shape[0]
    labels, relabeled = np.unique(a, return_inverse=True)
    k = labels.size
    if k < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    if subsample_size and subsample_size < 2:
        raise ValueError("subsample_size must be 0 (full) or >= 2")

    if subsample_size and subsample_size < m:
        rng = np.random.default_rng(seed)
        sample = np.sort(rng.choice(m, size=subsample_size, replace=False))
    else:
        sample = np.arange(m)

    onehot = np.zeros((m, k))
    onehot[np.arange(m), relabeled] = 1.0
    counts = onehot.sum(axis=0)

    scores = np.zeros(sample.size)
    block = max(1, int(4_000_000 // max(m, 1)))
    for start in range(0, sample.size, block):
        idx = sample[start:start + block]
        d = np.sqrt(_pairwise_sq_dists(x[idx], x))
        cluster_sums = d @ onehot
        own = relabeled[idx]
        own_counts = counts[own]
        with np.errstate(invalid="ignore", divide="ignore"):
            a_val = cluster_sums[np.arange(idx.size), own] / (own_counts - 1)
        other = cluster_sums / counts[None, :]
        other[np.arange(idx.size), own] = np.inf
        b_val = other.min(axis=1)
        s = (b_val - a_val) / np.maximum(a_val, b_val)
        s[own_counts <= 1] = 0.0
        scores[start:start + idx.size] = s
    return float(scores.mean())


def elbow_knee(wcss_by_k, sensitivity: float = 1.0) -> int | None:
    """Knee of a decreasing convex curve by the normalized-difference
    method: rescale to the unit square, flip to concave-increasing, and
    accept the first local maximum of (y - x) whose difference curve later
    drops below the sensitivity threshold. Returns None when no knee
    qualifies (e.g. a straight line)."""
    points = list(wcss_by_k)
    if len(points) < 4:
        raise ValueError("need at least 4 (k, wcss) points")
    ks = [p[0] for p in points]
    ys = [p[1] for p in points]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k values must be strictly increasing")
    if any(b > a for a, b in zip(ys, ys[1:])):
        raise ValueError("wcss must be non-increasing in k")

    x = np.asarray(ks, dtype=float)
    y = np.asarray(ys, dtype=float)
    if y.max() == y.min():
        return None
    xn = (x - x.min()) / (x.max() - x.min())
    yn = (y - y.min()) / (y.max() - y.min())
    diff = (1.0 - yn) - xn

    n = diff.size
    maxima = [
        i for i in range(1, n - 1)
        if diff[i] >= diff[i - 1] and diff[i] >= diff[i + 1]
    ]
    if not maxima:
        return None
    mean_dx = float(np.diff(xn).mean())
    maxima_set = set(maxima)
    for lmx in maxima:
        threshold = diff[lmx] - sensitivity * mean_dx
        for j in range(lmx + 1, n):
            if j in maxima_set:
                break
            if diff[j] < threshold:
                return int(ks[lmx])
    return None


@dataclass
class KSelectionReport:
    ks: list[int]
    wcss: list[float]
    dbi: list[float]
    silhouette: list[float]
    knee_k: int | None
    chosen_k: int
    models: list[KMeansModel] = field(default_factory=list)

    def model_for(self, k: int) -> KMeansModel | None:
        for model in self.models:
            if model.k == k:
                return model
        return None

    def to_csv(self, destination=None) -> str | None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "wcss", "dbi", "silhouette"])
        for row in zip(self.ks, self.wcss, self.dbi, self.silhouette):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        if destination is None:
            return buf.getvalue()
        Path(destination).write_text(buf.getvalue(), encoding="utf-8")
        return None


def _worst_fit_point(x: np.ndarray, model: KMeansModel) -> np.ndarray:
    d = _pairwise_sq_dists(x, model.centroids)
    own = d[np.arange(x.shape[0]), model.assignments]
    return x[int(own.argmax())]


def select_k(matrix, k_range, seed: int, subsample_size: int = 2000,
             max_iter: int = 300, tol: float = 1e-6, restarts: int = 1) -> KSelectionReport:
    """Sweep k over k_range recording WCSS, Davies-Bouldin, and (subsampled)
    silhouette for each k, locate the WCSS knee, and pick a k.

    Each k is fit twice: fresh k-means++ and a warm start from the previous
    k's centroids plus its worst-fit point (which guarantees the WCSS curve
    is non-increasing); the better fit wins. chosen_k is the knee when a
    Davies-Bouldin local minimum sits within 1 of it, otherwise the best
    silhouette among {knee-1, knee, knee+1}; with no knee at all it falls
    back to the best silhouette overall. The full table is always reported
    so the choice can be overridden.
    """
    x = _as_array(matrix)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("empty k_range")
    if ks[0] < 2:
        raise ValueError("k_range must start at 2 or above")
    if ks[-1] > x.shape[0]:
        raise ValueError("k_range exceeds number of points")

    wcss_values: list[float] = []
    dbi_values: list[float] = []
    sil_values: list[float] = []
    fitted: list[KMeansModel] = []
    prev: KMeansModel | None = None
    for k in ks:
        best = kmeans_fit(x, k, seed=seed, max_iter=max_iter, tol=tol, restarts=restarts)
        if prev is not None and prev.k + 1 == k:
            warm_centers = np.vstack([prev.centroids, _worst_fit_point(x, prev)[None, :]])
            warm = kmeans_fit(x, k, seed=seed, max_iter=max_iter, tol=tol,
                              init_centers=warm_centers)
            if warm.wcss < best.wcss:
                best = warm
        fitted.append(best)
        wcss_values.append(best.wcss)
        dbi_values.append(davies_bouldin(x, best.assignments))
        sil_values.append(silhouette(x, best.assignments,
                                     subsample_size=subsample_size, seed=seed + k))
        prev = best

    knee = elbow_knee(list(zip(ks, wcss_values))) if len(ks) >= 4 else None

    def is_local_dbi_min(i: int) -> bool:
        left_ok = i == 0 or dbi_values[i] <= dbi_values[i - 1]
        right_ok = i == len(ks) - 1 or dbi_values[i] <= dbi_values[i + 1]
        return left_ok and right_ok

    if knee is None:
        chosen = ks[int(np.argmax(sil_values))]
    else:
        near_dbi_min = any(
            is_local_dbi_min(i) and abs(ks[i] - knee) <= 1
            for i in range(len(ks))
        )
        if near_dbi_min:
            chosen = knee
        else:
            window = [i for i in range(len(ks)) if abs(ks[i] - knee) <= 1]
            chosen = ks[max(window, key=lambda i: sil_values[i])]
    return KSelectionReport(
        ks=ks,
        wcss=wcss_values,
        dbi=dbi_values,
        silhouette=sil_values,
        knee_k=knee,
        chosen_k=chosen,
        models=fitted,
    )


@dataclass
class CrossValidationRow:
    split: int
    train_sse: float
    test_sse: float
    train_dbi: float
    test_dbi: float


@dataclass
class CrossValidationReport:
    rows: list[CrossValidationRow]
    summary: dict[str, float]

    def to_csv(self, destination=None) -> str | None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["split", "train_sse", "test_sse", "train_dbi", "test_dbi"])
        for r in self.rows:
            writer.writerow([r.split, repr(r.train_sse), repr(r.test_sse),
                             repr(r.train_dbi), repr(r.test_dbi)])
        if destination is None:
            return buf.getvalue()
        Path(destination).write_text(buf.getvalue(), encoding="utf-8")
        return None


def _compact_labels(a: np.ndarray) -> np.ndarray:
    _, relabeled = np.unique(a, return_inverse=True)
    return relabeled


def cross_validate(matrix, k: int, n_splits: int = 10, train_fraction: float = 0.8,
                   seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
                   restarts: int = 1) -> CrossValidationReport:
    """Shuffle-split validation: fit on the train part, score SSE and
    Davies-Bouldin on both parts, assigning held-out points to the nearest
    trained centroid. The summary also carries per-point SSE means so raw
    sums and normalized values are both available."""
    x = _as_array(matrix)
    m = x.shape[0]
    n_train = int(math.floor(m * train_fraction))
    n_test = m - n_train
    if n_test < k:
        raise ValueError(f"test split of {n_test} points is smaller than k={k}")
    rng = np.random.default_rng(seed)
    rows: list[CrossValidationRow] = []
    per_point: list[tuple[float, float]] = []
    for split in range(n_splits):
        perm = rng.permutation(m)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
        fit_seed = int(rng.integers(2 ** 63))
        model = kmeans_fit(x[train_idx], k, seed=fit_seed, max_iter=max_iter, tol=tol,
                           restarts=restarts)
        test_d = _pairwise_sq_dists(x[test_idx], model.centroids)
        test_assign = test_d.argmin(axis=1)
        test_sse = float(test_d[np.arange(test_idx.size), test_assign].sum())
        train_dbi = davies_bouldin(x[train_idx], model.assignments)
        test_dbi = davies_bouldin(x[test_idx], _compact_labels(test_assign))
        rows.append(CrossValidationRow(
            split=split,
            train_sse=model.wcss,
            test_sse=test_sse,
            train_dbi=train_dbi,
            test_dbi=test_dbi,
        ))
        per_point.append((model.wcss / n_train, test_sse / n_test))

    def stats(values):
        arr = np.asarray(values)
        return float(arr.mean()), float(arr.std())

    summary: dict[str, float] = {}
    for name, values in (
        ("train_sse", [r.train_sse for r in rows]),
        ("test_sse", [r.test_sse for r in rows]),
        ("train_dbi", [r.train_dbi for r in rows]),
        ("test_dbi", [r.test_dbi for r in rows]),
        ("train_sse_per_point", [p[0] for p in per_point]),
        ("test_sse_per_point", [p[1] for p in per_point]),
    ):
        mean, sd = stats(values)
        summary[f"{name}_mean"] = mean
        summary[f"{name}_sd"] = sd
    return CrossValidationReport(rows=rows, summary=summary)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label arrays must have the same length")
    n = a.size
    if n == 0:
        raise ValueError("empty labelings")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    contingency = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def save_model(model: KMeansModel, matrix: FeatureMatrix, destination,
               assignments_name: str = "assignments.csv") -> None:
    """Model export: JSON with standardized and raw-scale centroids plus a
    wallet,cluster assignment CSV next to it."""
    destination = Path(destination)
    raw_centroids = None
    if matrix.column_means is not None and matrix.column_sds is not None:
        raw_centroids = model.centroids * matrix.column_sds + matrix.column_means
    payload = {
        "k": model.k,
        "seed": model.seed,
        "feature_names": list(matrix.feature_names),
        "centroids_standardized": model.centroids.tolist(),
        "centroids_raw": raw_centroids.tolist() if raw_centroids is not None else None,
        "wcss": model.wcss,
        "iterations": model.iterations,
        "converged": model.converged,
        "assignments_file": assignments_name,
    }
    destination.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wallet", "cluster"])
    for wallet, cluster in zip(matrix.wallets, model.assignments):
        writer.writerow([wallet, int(cluster)])
    (destination.parent / assignments_name).write_text(buf.getvalue(), encoding="utf-8")


__all__ = [
    "KMeansModel",
    "KSelectionReport",
    "CrossValidationRow",
    "CrossValidationReport",
    "kmeans_fit",
    "wcss",
    "davies_bouldin",
    "silhouette",
    "elbow_knee",
    "select_k",
    "cross_validate",
    "adjusted_rand_index",
    "save_model",
]
