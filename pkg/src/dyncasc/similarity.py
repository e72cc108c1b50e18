"""Per-period similarity matrices and their kernel smoothing over time.

A period's similarity is ``S_t = L_t + alpha_t * C_t`` where ``L_t`` is the
regularized graph Laplacian, ``C_t = X W_t X'`` with ``W_t = X' L_t X`` is the
covariate component, and ``alpha_t`` balances the two so that the covariate
perturbation never exceeds the informative eigengap of ``L_t``.  Smoothing
uses a one-sided discrete boundary kernel whose first ``l`` moments vanish;
its bandwidth is picked per period by a deviation test against all shorter
windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DegenerateGraphError
from .sbm import CovariateMatrix, DynamicNetwork

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Regularized Laplacian and covariate component
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplacianResult:
    laplacian: np.ndarray
    tau: float
    degenerate: bool

    def __iter__(self):  # allows ``L, tau, flag = regularized_laplacian(A)``
        return iter((self.laplacian, self.tau, self.degenerate))


def regularized_laplacian(adjacency: np.ndarray) -> LaplacianResult:
    """Degree-regularized normalized adjacency of one period.

    ``tau`` is the average node degree; entry (i, j) is
    ``A(i,j) / sqrt((d_i + tau) (d_j + tau))``.  An empty graph yields the
    zero matrix with tau = 0 and the degenerate flag set.
    """
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"adjacency must be square, got {a.shape}")
    deg = a.sum(axis=1)
    tau = float(deg.mean()) if deg.size else 0.0
    if tau == 0.0:
        return LaplacianResult(np.zeros_like(a), 0.0, True)
    inv_sqrt = 1.0 / np.sqrt(deg + tau)
    return LaplacianResult(a * np.outer(inv_sqrt, inv_sqrt), tau, False)


def covariate_component(
    covariates: Union[np.ndarray, CovariateMatrix], laplacian: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Covariate weight matrix ``W = X' L X`` and component ``C = X W X'``.

    ``C`` is symmetric but may be indefinite: negative weights are allowed so
    that covariates can pull dissimilar nodes together.
    """
    x = covariates.values if isinstance(covariates, CovariateMatrix) else np.asarray(covariates, dtype=float)
    if x.ndim != 2 or x.shape[0] != laplacian.shape[0]:
        raise ConfigurationError(
            f"covariates {x.shape} do not match Laplacian {laplacian.shape}"
        )
    weight = x.T @ laplacian @ x
    weight = 0.5 * (weight + weight.T)
    component = x @ weight @ x.T
    return weight, 0.5 * (component + component.T)


def tune_alpha(laplacian: np.ndarray, component: np.ndarray, n_groups: int) -> float:
    """Balance parameter: eigengap of L at K over the top |eigenvalue| of C.

    Returns 0 when the component is null or the gap is numerically negative.
    """
    n = laplacian.shape[0]
    if not (0 < n_groups < n):
        raise ConfigurationError(f"need 0 < K < N, got K={n_groups}, N={n}")
    lam = scipy.linalg.eigh(
        laplacian, eigvals_only=True, subset_by_index=(n - n_groups - 1, n - n_groups)
    )
    gap = float(lam[1] - lam[0])  # ascending order: lam[1] = lambda_K
    top = float(np.max(np.abs(np.linalg.eigvalsh(component)))) if component.size else 0.0
    if top <= 0.0:
        return 0.0
    return max(gap, 0.0) / top


# ---------------------------------------------------------------------------
# Discrete boundary kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelWeights:
    """Trailing-window weights on offsets -radius..0 with vanishing moments.

    ``exact`` stores the weights as exact rationals (the moment system has
    integer coefficients, so the unique polynomial solution is rational);
    ``weights`` is its float rendering used for arithmetic.  The normalized
    moment ``mean(i^k w_i)`` equals 1 for k = 0 and 0 for k = 1..order,
    exactly in rational arithmetic.
    """

    radius: int
    order: int
    weights: np.ndarray
    exact: tuple

    @property
    def w_max(self) -> float:
        return float(np.max(np.abs(self.weights)))

    def weight(self, offset: int) -> float:
        if not (-self.radius <= offset <= 0):
            raise ConfigurationError(f"offset {offset} outside window of radius {self.radius}")
        return float(self.weights[offset + self.radius])

    def moment(self, k: int) -> Fraction:
        """Exact normalized moment ``(1/|F_r|) sum_i i^k w_i``."""
        total = Fraction(0)
        for idx, w in enumerate(self.exact):
            i = idx - self.radius
            total += Fraction(i) ** k * w
        return total / (self.radius + 1)


def _solve_rational(matrix: list, rhs: list) -> list:
    """Gaussian elimination over the rationals with partial pivoting."""
    m = [row[:] for row in matrix]
    b = rhs[:]
    n = len(b)
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[pivot][col] == 0:
            raise ConfigurationError("moment system is singular")
        m[col], m[pivot] = m[pivot], m[col]
        b[col], b[pivot] = b[pivot], b[col]
        for row in range(col + 1, n):
            factor = m[row][col] / m[col][col]
            if factor == 0:
                continue
            for c in range(col, n):
                m[row][c] -= factor * m[col][c]
            b[row] -= factor * b[col]
    out = [Fraction(0)] * n
    for row in range(n - 1, -1, -1):
        acc = b[row]
        for c in range(row + 1, n):
            acc -= m[row][c] * out[c]
        out[row] = acc / m[row][row]
    return out


@lru_cache(maxsize=None)
def kernel_weights(radius: int, order: int) -> KernelWeights:
    """Solve the moment system for the polynomial-form trailing kernel.

    The weights are ``w(i) = sum_m a_m i^m`` on offsets i = -radius..0 with
    the polynomial degree truncated to min(order, radius); the truncation is
    logged when it bites.  Solved exactly over the rationals (results are
    cached; the float array is marked read-only).
    """
    if radius < 0 or order < 0:
        raise ConfigurationError("radius and order must be non-negative")
    effective = min(order, radius)
    if effective < order:
        logger.info("kernel order truncated from %d to %d (radius %d)", order, effective, radius)
    offsets = range(-radius, 1)
    # Moment system: for k = 0..effective,
    #   sum_m a_m sum_i i^(k+m) = (radius + 1) * [k == 0].
    power_sums = [
        Fraction(sum(i**p for i in offsets)) for p in range(2 * effective + 1)
    ]
    matrix = [
        [power_sums[k + m] for m in range(effective + 1)] for k in range(effective + 1)
    ]
    rhs = [Fraction(radius + 1) if k == 0 else Fraction(0) for k in range(effective + 1)]
    coeffs = _solve_rational(matrix, rhs)
    exact = tuple(
        sum((coeffs[m] * Fraction(i) ** m for m in range(effective + 1)), Fraction(0))
        for i in offsets
    )
    weights = np.array([float(w) for w in exact])
    weights.flags.writeable = False
    return KernelWeights(radius, effective, weights, exact)


# ---------------------------------------------------------------------------
# Similarity series, smoothing and bandwidth selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimilaritySeries:
    """Per-period similarity matrices and the pieces they were built from."""

    laplacians: np.ndarray  # (T, N, N)
    covariate_components: np.ndarray  # (T, N, N)
    alphas: np.ndarray  # (T,)
    similarities: np.ndarray  # (T, N, N)
    regularizers: np.ndarray  # (T,) tau values
    degenerate: np.ndarray  # (T,) bool, empty-graph periods

    @property
    def n_periods(self) -> int:
        return self.similarities.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.similarities.shape[1]


def build_series(
    network: Union[DynamicNetwork, np.ndarray],
    covariates: Optional[Union[np.ndarray, CovariateMatrix]],
    n_groups: int,
) -> SimilaritySeries:
    """Assemble the similarity series of a dynamic network.

    Covariates may be None (or empty), in which case every alpha is 0 and
    the similarities reduce to the Laplacians.  Degenerate (empty-graph)
    periods are flagged and carried along rather than raised.
    """
    adjacency = network.adjacency if isinstance(network, DynamicNetwork) else np.asarray(network)
    if adjacency.ndim != 3:
        raise ConfigurationError("network must be a (T, N, N) stack")
    t_total, n = adjacency.shape[0], adjacency.shape[1]
    x = None
    if covariates is not None:
        x = covariates.values if isinstance(covariates, CovariateMatrix) else np.asarray(covariates, dtype=float)
        if x.size == 0:
            x = None

    laplacians = np.zeros((t_total, n, n))
    components = np.zeros((t_total, n, n))
    alphas = np.zeros(t_total)
    taus = np.zeros(t_total)
    degenerate = np.zeros(t_total, dtype=bool)

    for t in range(t_total):
        lap, tau, bad = regularized_laplacian(adjacency[t])
        laplacians[t] = lap
        taus[t] = tau
        degenerate[t] = bad
        if x is not None and not bad:
            weight, comp = covariate_component(x, lap)
            components[t] = comp
            alphas[t] = _tune_alpha_factored(lap, x, weight, n_groups)
    similarities = laplacians + alphas[:, None, None] * components
    return SimilaritySeries(laplacians, components, alphas, similarities, taus, degenerate)


def _tune_alpha_factored(
    laplacian: np.ndarray, x: np.ndarray, weight: np.ndarray, n_groups: int
) -> float:
    """Same ratio as :func:`tune_alpha` but with the top |eigenvalue| of
    ``X W X'`` computed from the R x R problem (the component has rank <= R)."""
    n = laplacian.shape[0]
    if not (0 < n_groups < n):
        raise ConfigurationError(f"need 0 < K < N, got K={n_groups}, N={n}")
    lam = scipy.linalg.eigh(
        laplacian, eigvals_only=True, subset_by_index=(n - n_groups - 1, n - n_groups)
    )
    gap = float(lam[1] - lam[0])
    gram = x.T @ x
    gvals, gvecs = np.linalg.eigh(gram)
    gvals = np.clip(gvals, 0.0, None)
    half = gvecs @ (np.sqrt(gvals)[:, None] * gvecs.T)
    small = half @ weight @ half
    top = float(np.max(np.abs(np.linalg.eigvalsh(small)))) if small.size else 0.0
    if top <= 0.0:
        return 0.0
    return max(gap, 0.0) / top


def smoothed_similarity(
    series: Union[SimilaritySeries, np.ndarray],
    t: int,
    weights: KernelWeights,
    edge_policy: str = "shrink",
) -> np.ndarray:
    """Kernel-weighted average of ``S_{t-r} .. S_t``.

    For early periods with t < radius the default policy re-derives the
    kernel on the shorter available window; "strict" raises instead.
    """
    mats = series.similarities if isinstance(series, SimilaritySeries) else np.asarray(series)
    if not (0 <= t < mats.shape[0]):
        raise ConfigurationError(f"period {t} outside series of length {mats.shape[0]}")
    if t < weights.radius:
        if edge_policy == "strict":
            raise DegenerateGraphError(
                f"period {t} has fewer than {weights.radius} past periods"
            )
        weights = kernel_weights(t, weights.order)
    r = weights.radius
    window = mats[t - r : t + 1]
    out = np.tensordot(weights.weights, window, axes=(0, 0)) / (r + 1)
    return 0.5 * (out + out.T)


def spectral_norm(matrix: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration (symmetric input assumed)."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if n == 0:
        return 0.0
    # Deterministic start; the small ramp avoids starting orthogonal to the
    # leading eigenspace on sign-structured matrices.
    v = np.ones(n) + np.linspace(0.0, 0.5, n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = m @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        new_estimate = norm_w
        v = w / norm_w
        if abs(new_estimate - estimate) <= tol * max(new_estimate, 1.0):
            return float(new_estimate)
        estimate = new_estimate
    return float(estimate)


def _deviation_norm(a: np.ndarray, norm: str) -> float:
    if norm == "frobenius":
        return float(np.linalg.norm(a))
    return spectral_norm(a)


def lepski_bandwidth(
    series: Union[SimilaritySeries, np.ndarray],
    t: int,
    order: int,
    r_max: Optional[int] = None,
    norm: str = "spectral",
) -> int:
    """Adaptive bandwidth: the largest r whose smoothed estimate stays within
    a noise-scaled tolerance of every shorter-window estimate.

    The tolerance against window rho is
    ``4 * w_max * sqrt(N * max|S_t| / max(rho, 1))`` with ``w_max`` taken
    from the kernel actually in use at the tested r.  r = 0 is always
    admissible; the scan stops at the first failure.
    """
    mats = series.similarities if isinstance(series, SimilaritySeries) else np.asarray(series)
    t_total, n = mats.shape[0], mats.shape[1]
    if not (0 <= t < t_total):
        raise ConfigurationError(f"period {t} outside series of length {t_total}")
    cap = min(t, t_total // 2)
    if r_max is not None:
        cap = min(cap, r_max)
    if cap <= 0:
        return 0
    sup_entry = float(np.max(np.abs(mats[t])))
    kernels = [kernel_weights(r, order) for r in range(cap + 1)]
    smoothed = [smoothed_similarity(mats, t, kernels[r]) for r in range(cap + 1)]
    best = 0
    for r in range(1, cap + 1):
        w_max = kernels[r].w_max
        ok = True
        for rho in range(r):
            threshold = 4.0 * w_max * np.sqrt(n * sup_entry / max(rho, 1))
            if _deviation_norm(smoothed[r] - smoothed[rho], norm) > threshold:
                ok = False
                break
        if not ok:
            break
        best = r
    return best
