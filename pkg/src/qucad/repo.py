"""Model repository: performance-weighted L1 clustering offline, matching online."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calib import CalibrationSnapshot, CalibrationVector, build_noise_model, calibration_matrix, vectorize
from .compress import CompressConfig, admm_compress
from .qnn import Dataset, QnnModel, evaluate_accuracy

log = logging.getLogger(__name__)


class RepositoryError(ValueError):
    pass


def correlation_weights(C, p) -> np.ndarray:
    """|Pearson correlation| between each calibration column and the accuracies.

    Columns (or accuracy vectors) with zero variance get weight 0.
    """
    C = np.asarray(C, dtype=float)
    p = np.asarray(p, dtype=float)
    if C.ndim != 2 or len(C) < 2:
        raise RepositoryError("need at least two calibration rows")
    if len(p) != len(C) or not np.all(np.isfinite(p)):
        raise RepositoryError("accuracy vector must be finite and match the row count")
    dc = C - C.mean(axis=0)
    dp = p - p.mean()
    sxy = dp @ dc
    sxx = np.einsum("ij,ij->j", dc, dc)
    syy = dp @ dp
    denom = np.sqrt(sxx * syy)
    w = np.zeros(C.shape[1])
    ok = (sxx > 0) & (syy > 0) & (denom > 0)
    w[ok] = np.minimum(np.abs(sxy[ok]) / denom[ok], 1.0)
    return w


def _values(v):
    return v.values if isinstance(v, CalibrationVector) else np.asarray(v, dtype=float)


def weighted_distance(a, b, w) -> float:
    """Sum of per-dimension weighted absolute differences."""
    if isinstance(a, CalibrationVector) and isinstance(b, CalibrationVector) and a.schema != b.schema:
        raise RepositoryError("calibration vectors use different schemas")
    av, bv, wv = _values(a), _values(b), np.asarray(w, dtype=float)
    if not av.shape == bv.shape == wv.shape:
        raise RepositoryError("vector and weight dimensions differ")
    return float(wv @ np.abs(av - bv))


def _dist_matrix(X, centroids, w) -> np.ndarray:
    return np.abs(X[:, None, :] - centroids[None, :, :]) @ w


@dataclass
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    wsae: float
    history: list
    n_iter: int

    @property
    def K(self) -> int:
        return len(self.centroids)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def mean_distance(self, X) -> np.ndarray:
        d = _dist_matrix(np.asarray(X, dtype=float), self.centroids, self.weights)
        return np.array([d[self.labels == k, k].mean() for k in range(self.K)])

    def mean_accuracy(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.array([p[self.labels == k].mean() for k in range(self.K)])


def wsae(X, centroids, labels, w) -> float:
    X = np.asarray(X, dtype=float)
    return float(np.sum(np.abs(X - centroids[labels]) @ w))


def _seed_centroids(X, w, K, rng) -> list[int]:
    """k-means++ style seeding with probability proportional to weighted L1 distance.

    Stops early when every remaining point coincides with a chosen centroid.
    """
    chosen = [int(rng.integers(len(X)))]
    d = np.abs(X - X[chosen[0]]) @ w
    while len(chosen) < K:
        total = d.sum()
        if total <= 0:
            break
        i = int(rng.choice(len(X), p=d / total))
        chosen.append(i)
        d = np.minimum(d, np.abs(X - X[i]) @ w)
    return chosen


def weighted_kmeans(vectors, p=None, K: int = 6, seed: int = 0, weights=None, max_iter: int = 100) -> ClusterModel:
    """K-medians under the weighted L1 distance.

    Weights default to :func:`correlation_weights` of ``vectors`` against
    ``p``. Assignment picks the nearest centroid (lowest index on ties),
    centroids move to per-dimension member medians, and an emptied cluster is
    reseeded at the point farthest from its own centroid. The returned model
    may hold fewer than ``K`` clusters when the data has fewer distinct points.
    """
    X = np.array([_values(v) for v in vectors], dtype=float)
    n = len(X)
    if K < 1 or K > n:
        raise RepositoryError(f"K={K} must lie in [1, {n}]")
    w = correlation_weights(X, p) if weights is None else np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)
    centroids = X[_seed_centroids(X, w, K, rng)].copy()
    labels = np.full(n, -1)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        D = _dist_matrix(X, centroids, w)
        new = np.argmin(D, axis=1)
        keep = []
        for k in range(len(centroids)):
            if np.any(new == k):
                keep.append(k)
                continue
            own = D[np.arange(n), new]
            far = int(np.argmax(own))
            if own[far] > 0:
                new[far] = k
                keep.append(k)
        if len(keep) < len(centroids):
            remap = {k: j for j, k in enumerate(keep)}
            centroids = centroids[keep]
            new = np.array([remap[k] for k in new])
        converged = np.array_equal(new, labels)
        labels = new
        centroids = np.array([np.median(X[labels == k], axis=0) for k in range(len(centroids))])
        history.append(wsae(X, centroids, labels, w))
        if converged:
            break
    return ClusterModel(centroids, labels, w, history[-1], history, it)


# ---------------------------------------------------------------------------
# repository


@dataclass
class RepoEntry:
    centroid: np.ndarray
    snapshot: CalibrationSnapshot
    model: QnnModel
    mask: np.ndarray
    mean_acc: float
    mean_dist: float
    invalid: bool
    source: str = "offline"
    members: list = field(default_factory=list)


@dataclass
class Repository:
    entries: list
    weights: np.ndarray
    schema: tuple
    th_w: float
    acc_requirement: float = 0.5
    recompute_threshold: bool = False

    def distances(self, today) -> np.ndarray:
        v = _today_vector(today, self.schema)
        return np.array([weighted_distance(v, e.centroid, self.weights) for e in self.entries])

    def to_dict(self, model_refs=None) -> dict:
        refs = model_refs or [None] * len(self.entries)
        return {
            "weights": self.weights.tolist(),
            "schema": [[k, list(q) if isinstance(q, tuple) else q] for k, q in self.schema],
            "th_w": self.th_w,
            "acc_requirement": self.acc_requirement,
            "entries": [
                {
                    "centroid": e.centroid.tolist(), "snapshot": e.snapshot.to_dict(), "model_ref": ref,
                    "mask": np.asarray(e.mask).tolist(), "mean_acc": e.mean_acc, "mean_dist": e.mean_dist,
                    "invalid": e.invalid, "source": e.source, "members": list(map(int, e.members)),
                }
                for e, ref in zip(self.entries, refs)
            ],
        }

    def save(self, path) -> None:
        """Write the repository JSON plus one model file per entry next to it."""
        path = Path(path)
        refs = []
        for i, e in enumerate(self.entries):
            ref = f"{path.stem}_model{i}.json"
            e.model.save(path.parent / ref, mask=np.asarray(e.mask).tolist(), snapshot_id=e.snapshot.date)
            refs.append(ref)
        path.write_text(json.dumps(self.to_dict(refs), indent=1))

    @classmethod
    def load(cls, path) -> "Repository":
        path = Path(path)
        d = json.loads(path.read_text())
        schema = tuple((k, tuple(q) if isinstance(q, list) else q) for k, q in d["schema"])
        entries = [
            RepoEntry(np.array(e["centroid"]), CalibrationSnapshot.from_dict(e["snapshot"]),
                      QnnModel.load(path.parent / e["model_ref"]), np.array(e["mask"]), e["mean_acc"],
                      e["mean_dist"], e["invalid"], e["source"], e.get("members", []))
            for e in d["entries"]
        ]
        return cls(entries, np.array(d["weights"]), schema, d["th_w"], d["acc_requirement"])


def _today_vector(today, schema) -> np.ndarray:
    if isinstance(today, CalibrationSnapshot):
        return vectorize(today, schema).values
    if isinstance(today, CalibrationVector):
        if tuple(today.schema) != tuple(schema):
            raise RepositoryError("calibration schema does not match the repository")
        return today.values
    return np.asarray(today, dtype=float)


def history_accuracies(model: QnnModel, snapshots, val: Dataset, cost_model=None) -> np.ndarray:
    return np.array([evaluate_accuracy(model, val, build_noise_model(s, model.circuit.n_qubits), cost_model)
                     for s in snapshots])


def _cluster_history(snapshots, accuracies, K, seed):
    C, schema = calibration_matrix(snapshots)
    w = correlation_weights(C, accuracies)
    clusters = weighted_kmeans(C, accuracies, K, seed, weights=w)
    reps = []
    for k in range(clusters.K):
        idx = clusters.members(k)
        d = np.abs(C[idx] - clusters.centroids[k]) @ w
        reps.append((idx, int(idx[np.argmin(d)])))
    return C, schema, w, reps


def build_repository(model: QnnModel, snapshots, train: Dataset, val: Dataset, K: int = 6, A: float = 0.5,
                     compress_config: CompressConfig | None = None, accuracies=None, seed: int = 0,
                     compress: bool = True) -> Repository:
    """Cluster the calibration history and compress one model per cluster.

    Each cluster's representative is the member day nearest its median
    centroid, so compression always runs against a real snapshot. A cluster's
    mean accuracy is that of its compressed model averaged over member days.
    With ``compress=False`` only the weights and threshold are derived and the
    repository starts empty.
    """
    compress_config = compress_config or CompressConfig()
    cm = compress_config.cost_model
    if accuracies is None:
        accuracies = history_accuracies(model, snapshots, val, cm)
    C, schema, w, reps = _cluster_history(snapshots, accuracies, K, seed)
    th_w = max(float(np.mean(np.abs(C[idx] - C[rep]) @ w)) for idx, rep in reps)
    repo = Repository([], w, schema, th_w, A)
    if not compress:
        return repo
    n = model.circuit.n_qubits
    for k, (idx, rep) in enumerate(reps):
        compressed, mask = admm_compress(model, train, snapshots[rep], compress_config)
        accs = [evaluate_accuracy(compressed, val, build_noise_model(snapshots[i], n), cm) for i in idx]
        mean_acc = float(np.mean(accs))
        mean_dist = float(np.mean(np.abs(C[idx] - C[rep]) @ w))
        repo.entries.append(RepoEntry(C[rep].copy(), snapshots[rep], compressed, mask, mean_acc, mean_dist,
                                      mean_acc < A, "offline", idx.tolist()))
        log.info("cluster %d: %d days, rep %s, acc %.3f, dist %.4g", k, len(idx), snapshots[rep].date, mean_acc,
                 mean_dist)
    return repo


# ---------------------------------------------------------------------------
# online manager


@dataclass(frozen=True)
class OnlineDecision:
    kind: str  # "reuse" | "compress_new" | "fail"
    index: int
    distance: float
    report: str = ""

    def __post_init__(self):
        if self.kind not in ("reuse", "compress_new", "fail"):
            raise ValueError(f"unknown decision {self.kind!r}")


@dataclass
class OnlineContext:
    model: QnnModel
    train: Dataset
    val: Dataset
    compress_config: CompressConfig = field(default_factory=CompressConfig)


def add_online_entry(repo: Repository, today: CalibrationSnapshot, ctx: OnlineContext) -> int:
    """Compress for ``today`` and append it as a singleton online entry."""
    compressed, mask = admm_compress(ctx.model, ctx.train, today, ctx.compress_config)
    n = ctx.model.circuit.n_qubits
    acc = evaluate_accuracy(compressed, ctx.val, build_noise_model(today, n), ctx.compress_config.cost_model)
    repo.entries.append(RepoEntry(vectorize(today, repo.schema).values, today, compressed, mask, acc, 0.0,
                                  acc < repo.acc_requirement, "online", []))
    if repo.recompute_threshold:
        repo.th_w = max(e.mean_dist for e in repo.entries)
    return len(repo.entries) - 1


def match_online(repo: Repository, today: CalibrationSnapshot, ctx: OnlineContext) -> tuple[OnlineDecision, Repository]:
    """Reuse the nearest stored model, compress a new one, or report failure."""
    if not repo.entries:
        raise RepositoryError("repository is empty")
    dis = repo.distances(today)
    j = int(np.argmin(dis))
    if dis[j] > repo.th_w:
        k = add_online_entry(repo, today, ctx)
        return OnlineDecision("compress_new", k, float(dis[j])), repo
    e = repo.entries[j]
    if e.invalid:
        report = (f"calibration {today.date} matches entry {j} (centroid {e.snapshot.date}) whose mean accuracy "
                  f"{e.mean_acc:.3f} is below the requirement {repo.acc_requirement:.3f}")
        return OnlineDecision("fail", j, float(dis[j]), report), repo
    return OnlineDecision("reuse", j, float(dis[j])), repo
