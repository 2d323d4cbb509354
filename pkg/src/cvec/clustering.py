"""Spectral clustering of window embeddings and segment-level label assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .nets import FRAME_PERIOD
from .timeline import Segment, Timeline

TIE_TOLERANCE = 1e-12


def _unit_rows(X: np.ndarray, what: str = "embedding") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ContractError(f"zero-norm {what}")
    return X / norms


def cosine_affinity(embeddings) -> np.ndarray:
    """A[i, j] = (1 + cos(x_i, x_j)) / 2, diagonal exactly 1."""
    X = _unit_rows(embeddings)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ContractError("need at least two embeddings")
    A = np.clip((1.0 + X @ X.T) / 2.0, 0.0, 1.0)
    A = (A + A.T) / 2
    np.fill_diagonal(A, 1.0)
    return A


def refine_affinity(A: np.ndarray, p: float = 0.4, attenuation: float = 0.01) -> np.ndarray:
    """Attenuate entries below p * row max, symmetrise by max, restore the unit diagonal."""
    if not 0 < p < 1:
        raise ContractError("threshold fraction must be in (0, 1)")
    A = np.array(A, dtype=np.float64)
    off = A.copy()
    np.fill_diagonal(off, -np.inf)
    row_max = off.max(axis=1, keepdims=True) if A.shape[0] > 1 else np.ones((1, 1))
    B = np.where(A < p * row_max, A * attenuation, A)
    B = np.maximum(B, B.T)
    np.fill_diagonal(B, 1.0)
    return B


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    d = A.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(d), 0.0)
    L = np.eye(len(A)) - inv[:, None] * A * inv[None, :]
    return (L + L.T) / 2


@dataclass
class ClusterResult:
    labels: np.ndarray  # per-window cluster id in 0..k-1
    centroids: np.ndarray  # (k, E) unit-normalised member means, in the embedding space
    k: int
    eigenvalues: np.ndarray  # ascending Laplacian spectrum


def kmeans(X: np.ndarray, k: int, restarts: int = 50, seed: int = 0, iters: int = 100) -> tuple[np.ndarray, float]:
    """Lloyd's k-means with k-means++ seeding; the lowest-inertia restart wins (first on ties)."""
    rng = np.random.default_rng(seed)
    n = len(X)
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = [X[rng.integers(n)]]
        for _ in range(1, k):
            d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
            total = d2.sum()
            idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
            centers.append(X[idx])
        C = np.array(centers)
        labels = None
        for _ in range(iters):
            d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
            new = np.argmin(d2, axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                members = X[labels == j]
                if len(members):
                    C[j] = members.mean(axis=0)
        inertia = float(((X - C[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best, best_inertia = labels.copy(), inertia
    return _canonical(best), best_inertia


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters by first appearance so results do not depend on restart order."""
    mapping: dict[int, int] = {}
    for l in labels:
        mapping.setdefault(int(l), len(mapping))
    return np.array([mapping[int(l)] for l in labels])


def choose_k(eigenvalues: np.ndarray, k_max: int) -> int:
    """argmax over 2 <= k <= k_max of lambda_{k+1} - lambda_k (1-based, ascending); first on ties."""
    n = len(eigenvalues)
    hi = min(k_max, n - 1)
    if hi < 2:
        return min(2, n)
    gaps = [eigenvalues[k] - eigenvalues[k - 1] for k in range(2, hi + 1)]
    return 2 + int(np.argmax(gaps))


def choose_k_and_cluster(
    A: np.ndarray, k_max: int = 10, embeddings: np.ndarray | None = None, restarts: int = 50, seed: int = 0
) -> ClusterResult:
    if k_max < 2:
        raise ContractError("k_max must be at least 2")
    A = np.asarray(A, dtype=np.float64)
    n = len(A)
    if n < 2:
        raise ContractError("need at least two windows to cluster")
    vals, vecs = np.linalg.eigh(normalized_laplacian(A))
    k = choose_k(vals, k_max)
    V = vecs[:, :k]
    V = V / np.maximum(np.linalg.norm(V, axis=1, keepdims=True), 1e-12)
    labels, _ = kmeans(V, k, restarts=restarts, seed=seed)
    k = int(labels.max()) + 1
    source = V if embeddings is None else _unit_rows(embeddings)
    centroids = np.stack([source[labels == j].mean(axis=0) for j in range(k)])
    centroids = centroids / np.maximum(np.linalg.norm(centroids, axis=1, keepdims=True), 1e-12)
    return ClusterResult(labels, centroids, k, vals)


def nearest_cluster(vector: np.ndarray, centroids: np.ndarray) -> int:
    """Smallest cosine distance; the lowest cluster id wins near-ties."""
    v = _unit_rows(np.asarray(vector)[None])[0]
    cos = centroids @ v
    return int(np.flatnonzero(cos >= cos.max() - TIE_TOLERANCE)[0])


def cluster_label(j: int) -> str:
    return f"spk{j}"


def assign_segments(
    segments: Timeline, window_map: Sequence[Sequence[int]], embeddings: np.ndarray, clusters: ClusterResult
) -> Timeline:
    """One label per segment: the centroid nearest to the mean of the segment's window embeddings.

    ``window_map[i]`` lists the rows of ``embeddings`` that belong to segment i.
    """
    if len(window_map) != len(segments):
        raise ContractError("one window list per segment is required")
    X = _unit_rows(embeddings)
    out = []
    for seg, rows in zip(segments, window_map):
        if len(rows) == 0:
            raise ContractError(f"segment {seg.start}-{seg.end} owns no windows")
        j = nearest_cluster(X[list(rows)].mean(axis=0), clusters.centroids)
        out.append(Segment(seg.start, seg.end, cluster_label(j)))
    return Timeline(segments.rec_id, out)


def window_level_timeline(
    rec_id: str, spans: Sequence[tuple[int, int]], labels: Sequence[int]
) -> Timeline:
    """Windows become segments; overlapping neighbours are cut at the midpoint of their overlap.

    ``spans`` are (start, stop) frames in time order.
    """
    if len(spans) != len(labels):
        raise ContractError("one label per window span")
    out = []
    for i, (a, b) in enumerate(spans):
        lo, hi = a, b
        if i > 0 and spans[i - 1][1] > a:
            lo = (a + spans[i - 1][1]) // 2
        if i + 1 < len(spans) and spans[i + 1][0] < b:
            hi = (spans[i + 1][0] + b) // 2
        if hi > lo:
            out.append(Segment(lo * FRAME_PERIOD, hi * FRAME_PERIOD, cluster_label(int(labels[i]))))
    return Timeline(rec_id, out).merged()
