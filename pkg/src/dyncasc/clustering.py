"""Spectral embedding, spherical k-means and the dynamic clustering pipelines.

The main pipeline clusters each period of a similarity series: pick a
smoothing bandwidth, smooth, embed into the top-K eigenvector rows, normalize
nonzero rows to the unit sphere, run (1+eps)-approximate k-means, and assign
zero-norm rows to the first group.  Three reference pipelines are provided:
clustering the aggregated squared adjacency once (static labels), the same
dynamic pipeline without covariates, and clustering covariates alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, InfeasibleError, NumericalError
from .sbm import CovariateMatrix, DynamicNetwork, MembershipSeries
from .similarity import (
    SimilaritySeries,
    build_series,
    kernel_weights,
    lepski_bandwidth,
    smoothed_similarity,
)

logger = logging.getLogger(__name__)

_ZERO_ROW_TOL = 1e-12


# ---------------------------------------------------------------------------
# Spectral embedding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralEmbedding:
    """Top-K eigenvectors of a symmetric matrix with row-normalized copy.

    ``u`` has orthonormal columns ordered by decreasing |eigenvalue|, with a
    deterministic sign convention (the largest-magnitude entry of each column
    is positive).  ``u_plus`` holds the unit-normalized nonzero rows.
    """

    u: np.ndarray
    eigenvalues: np.ndarray
    nonzero_rows: np.ndarray
    u_plus: np.ndarray


def spectral_embed(matrix: np.ndarray, n_groups: int) -> SpectralEmbedding:
    s = np.asarray(matrix, dtype=float)
    n = s.shape[0]
    if s.ndim != 2 or s.shape[1] != n:
        raise ConfigurationError(f"similarity must be square, got {s.shape}")
    if not (0 < n_groups <= n):
        raise ConfigurationError(f"need 0 < K <= N, got K={n_groups}, N={n}")
    try:
        eigenvalues, vectors = np.linalg.eigh(0.5 * (s + s.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(-np.abs(eigenvalues), kind="stable")[:n_groups]
    values = eigenvalues[order]
    u = vectors[:, order]
    for col in range(u.shape[1]):
        pivot = int(np.argmax(np.abs(u[:, col])))
        if u[pivot, col] < 0:
            u[:, col] = -u[:, col]
    norms = np.linalg.norm(u, axis=1)
    nonzero = np.nonzero(norms > _ZERO_ROW_TOL)[0]
    u_plus = u[nonzero] / norms[nonzero, None]
    return SpectralEmbedding(u, values, nonzero, u_plus)


# ---------------------------------------------------------------------------
# Spherical k-means
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KMeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    objective: float
    degenerate: bool = False


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(
    points: np.ndarray, centers: np.ndarray, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray, float, bool]:
    n, k = points.shape[0], centers.shape[0]
    dim = points.shape[1]
    centers = centers.copy()
    points_sq = (points**2).sum(axis=1)
    prev_objective = np.inf
    prev_assign = None
    degenerate = False
    for _ in range(max_iter):
        d2 = points_sq[:, None] + (centers**2).sum(axis=1)[None, :] - 2.0 * (points @ centers.T)
        assign = np.argmin(d2, axis=1)  # ties resolve to the lowest index
        counts = np.bincount(assign, minlength=k)
        reseeded = False
        for c in np.nonzero(counts == 0)[0]:
            # Empty cluster: re-seed at the point farthest from its centroid,
            # unless no point can improve (duplicate data; flag degenerate).
            current = d2[np.arange(n), assign]
            far = int(np.argmax(current))
            if current[far] <= 1e-30:
                degenerate = True
                continue
            centers[c] = points[far]
            assign[far] = c
            counts = np.bincount(assign, minlength=k)
            reseeded = True
        for j in range(dim):
            sums = np.bincount(assign, weights=points[:, j], minlength=k)
            nonempty = counts > 0
            centers[nonempty, j] = sums[nonempty] / counts[nonempty]
        objective = float(np.sum((points - centers[assign]) ** 2))
        if not reseeded:
            # Lloyd iterations never increase the objective.
            assert objective <= prev_objective + 1e-9, (objective, prev_objective)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            return assign, centers, objective, degenerate
        prev_assign = assign
        prev_objective = objective
    return prev_assign, centers, prev_objective, degenerate


def spherical_kmeans(
    embedding: Union[SpectralEmbedding, np.ndarray],
    n_groups: int,
    eps: float = 0.01,
    restarts: int = 20,
    seed=None,
) -> KMeansResult:
    """k-means over unit-normalized embedding rows.

    Runs Lloyd's algorithm from ``restarts`` k-means++ initializations and
    keeps the best objective, which serves as the (1+eps) optimum proxy.
    """
    points = embedding.u_plus if isinstance(embedding, SpectralEmbedding) else np.asarray(embedding, dtype=float)
    n = points.shape[0]
    if n < n_groups:
        raise InfeasibleError(f"cannot form {n_groups} clusters from {n} rows")
    if restarts < 1:
        raise ConfigurationError("need at least one restart")
    rng = np.random.default_rng(seed)
    best: Optional[KMeansResult] = None
    for _ in range(restarts):
        centers = _kmeanspp_init(points, n_groups, rng)
        assign, centers, objective, degenerate = _lloyd(points, centers)
        if best is None or objective < best.objective:
            best = KMeansResult(assign, centers, objective, degenerate)
    return best


# ---------------------------------------------------------------------------
# Per-period clustering and the dynamic pipelines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineRun:
    """Memberships plus per-period diagnostics of one pipeline execution."""

    memberships: MembershipSeries
    bandwidths: np.ndarray
    alphas: np.ndarray

    @property
    def flags(self) -> tuple:
        return self.memberships.flags or ()


def cluster_similarity(
    matrix: np.ndarray,
    n_groups: int,
    eps: float = 0.01,
    restarts: int = 20,
    seed=None,
) -> tuple[np.ndarray, str]:
    """Cluster one (smoothed) similarity matrix; zero-norm rows get group 0.

    Returns the label vector and a diagnostic flag ("" when clean).
    """
    n = matrix.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    if np.max(np.abs(matrix), initial=0.0) <= _ZERO_ROW_TOL:
        # A null matrix has no informative eigenbasis: flagged fallback.
        return labels, "zero-similarity"
    embedding = spectral_embed(matrix, n_groups)
    n_plus = embedding.nonzero_rows.shape[0]
    if n_plus < n_groups:
        return labels, "insufficient-nonzero-rows"
    result = spherical_kmeans(embedding, n_groups, eps=eps, restarts=restarts, seed=seed)
    labels[embedding.nonzero_rows] = result.assignment
    return labels, ("kmeans-degenerate" if result.degenerate else "")


def cluster_similarity_series(
    matrices: np.ndarray,
    n_groups: int,
    kernel_order: int = 4,
    eps: float = 0.01,
    restarts: int = 20,
    seed: int = 0,
    alphas: Optional[np.ndarray] = None,
    lepski_norm: str = "spectral",
) -> PipelineRun:
    """Run the full per-period pipeline over a (T, N, N) similarity stack.

    A failed period is flagged and falls back to all-group-0 labels instead
    of aborting the sweep.
    """
    matrices = np.asarray(matrices, dtype=float)
    t_total, n = matrices.shape[0], matrices.shape[1]
    labels = np.zeros((t_total, n), dtype=np.int64)
    bandwidths = np.zeros(t_total, dtype=np.int64)
    flags = []
    for t in range(t_total):
        try:
            r_hat = lepski_bandwidth(matrices, t, kernel_order, norm=lepski_norm)
            smoothed = smoothed_similarity(matrices, t, kernel_weights(r_hat, kernel_order))
            labels[t], flag = cluster_similarity(
                smoothed, n_groups, eps=eps, restarts=restarts, seed=[seed, t]
            )
            bandwidths[t] = r_hat
        except (NumericalError, InfeasibleError) as exc:
            logger.warning("period %d failed (%s); falling back to one group", t, exc)
            labels[t] = 0
            flag = f"period-failed: {exc}"
        flags.append(flag)
    memberships = MembershipSeries(labels, tuple(flags))
    run_alphas = np.zeros(t_total) if alphas is None else np.asarray(alphas, dtype=float)
    return PipelineRun(memberships, bandwidths, run_alphas)


def run_casc_dc(
    network: Union[DynamicNetwork, np.ndarray],
    covariates: Optional[Union[np.ndarray, CovariateMatrix]],
    n_groups: int,
    eps: float = 0.01,
    kernel_order: int = 4,
    restarts: int = 20,
    seed: int = 0,
    series: Optional[SimilaritySeries] = None,
) -> PipelineRun:
    """Covariate-assisted dynamic spectral clustering with full diagnostics."""
    if series is None:
        series = build_series(network, covariates, n_groups)
    return cluster_similarity_series(
        series.similarities,
        n_groups,
        kernel_order=kernel_order,
        eps=eps,
        restarts=restarts,
        seed=seed,
        alphas=series.alphas,
    )


def casc_dc(
    network: Union[DynamicNetwork, np.ndarray],
    covariates: Optional[Union[np.ndarray, CovariateMatrix]],
    n_groups: int,
    eps: float = 0.01,
    kernel_order: int = 4,
    restarts: int = 20,
    seed: int = 0,
) -> MembershipSeries:
    """Covariate-assisted dynamic spectral clustering (labels only)."""
    return run_casc_dc(
        network, covariates, n_groups, eps=eps, kernel_order=kernel_order,
        restarts=restarts, seed=seed,
    ).memberships


def dsc_smoothed(
    network: Union[DynamicNetwork, np.ndarray],
    n_groups: int,
    kernel_order: int = 4,
    eps: float = 0.01,
    restarts: int = 20,
    seed: int = 0,
) -> MembershipSeries:
    """Dynamic spectral clustering of smoothed Laplacians, covariates off.

    Identical to :func:`casc_dc` with a null covariate matrix: the balance
    parameter degenerates to zero and the similarities reduce to the
    regularized Laplacians.
    """
    return casc_dc(
        network, None, n_groups, eps=eps, kernel_order=kernel_order,
        restarts=restarts, seed=seed,
    )


def dsc_aggregate(
    network: Union[DynamicNetwork, np.ndarray],
    n_groups: int,
    eps: float = 0.01,
    restarts: int = 20,
    seed: int = 0,
) -> MembershipSeries:
    """Static clustering of the aggregated squared adjacency.

    Sums A_t^2 over periods, removes the diagonal, degree-normalizes, embeds
    and clusters once; the single labeling is replicated across all periods.
    """
    adjacency = network.adjacency if isinstance(network, DynamicNetwork) else np.asarray(network)
    t_total, n = adjacency.shape[0], adjacency.shape[1]
    total = np.zeros((n, n))
    for t in range(t_total):
        a = adjacency[t].astype(float)
        total += a @ a
    np.fill_diagonal(total, 0.0)
    deg = total.sum(axis=1)
    tau = float(deg.mean())
    if tau == 0.0:
        flags = ("degenerate-empty-network",) * t_total
        return MembershipSeries(np.zeros((t_total, n), dtype=np.int64), flags)
    inv_sqrt = 1.0 / np.sqrt(deg + tau)
    normalized = total * np.outer(inv_sqrt, inv_sqrt)
    labels, flag = cluster_similarity(normalized, n_groups, eps=eps, restarts=restarts, seed=[seed, 0])
    return MembershipSeries(np.tile(labels, (t_total, 1)), (flag,) * t_total)


def dsc_covariates(
    covariates: Union[np.ndarray, CovariateMatrix],
    n_groups: int,
    n_periods: int,
    eps: float = 0.01,
    restarts: int = 20,
    seed: int = 0,
) -> MembershipSeries:
    """Static spectral clustering of the covariate gram matrix X X'."""
    x = covariates.values if isinstance(covariates, CovariateMatrix) else np.asarray(covariates, dtype=float)
    n = x.shape[0]
    gram = x @ x.T
    rank = int(np.linalg.matrix_rank(x)) if x.size else 0
    labels, flag = cluster_similarity(gram, n_groups, eps=eps, restarts=restarts, seed=[seed, 0])
    if rank < n_groups and not flag:
        flag = "rank-deficient-covariates"
    return MembershipSeries(np.tile(labels, (n_periods, 1)), (flag,) * n_periods)


# ---------------------------------------------------------------------------
# Number-of-groups selection by node-pair holdout
# ---------------------------------------------------------------------------


def select_k(
    series: Union[SimilaritySeries, np.ndarray],
    k_range: Sequence[int],
    folds: int = 5,
    seed: int = 0,
) -> int:
    """Pick K by cross-validated rank-K reconstruction of the similarities.

    For each fold a random set of node pairs is masked (symmetrically) in
    every period, masked entries are imputed with the observed off-diagonal
    mean, and the held-out squared reconstruction error of the rank-K
    eigen-approximation is accumulated.  Ties break toward smaller K.
    """
    mats = series.similarities if isinstance(series, SimilaritySeries) else np.asarray(series, dtype=float)
    if mats.ndim == 2:
        mats = mats[None, :, :]
    t_total, n = mats.shape[0], mats.shape[1]
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ConfigurationError("k_range is empty")
    if ks[0] < 1 or ks[-1] > n - 1:
        raise ConfigurationError(f"k_range must lie within [1, {n - 1}]")
    if folds < 2:
        raise ConfigurationError("need at least 2 folds")

    iu = np.triu_indices(n, k=1)
    scores = np.zeros(len(ks))
    for t in range(t_total):
        rng = np.random.default_rng([seed, t])
        fold_of_pair = rng.integers(0, folds, size=iu[0].shape[0])
        for f in range(folds):
            mask = fold_of_pair == f
            if not np.any(mask):
                continue
            rows, cols = iu[0][mask], iu[1][mask]
            work = mats[t].copy()
            observed_mean = (mats[t][iu][~mask]).mean() if np.any(~mask) else 0.0
            work[rows, cols] = observed_mean
            work[cols, rows] = observed_mean
            eigenvalues, vectors = np.linalg.eigh(work)
            order = np.argsort(-np.abs(eigenvalues))
            truth = mats[t][rows, cols]
            for idx, k in enumerate(ks):
                top = order[:k]
                approx = np.einsum(
                    "ij,j,ij->i", vectors[rows][:, top], eigenvalues[top], vectors[cols][:, top]
                )
                scores[idx] += float(np.sum((approx - truth) ** 2))
    return ks[int(np.argmin(scores))]
