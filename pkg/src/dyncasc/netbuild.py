"""Return- and attribute-based network construction for asset panels.

Dynamic networks come from per-asset adaptive Lasso regressions of each
asset's standardized returns on all others inside a rolling or expanding
window; selected predictors become (OR-symmetrized) edges.  Static networks
connect assets that share a contract attribute (hash algorithm or proof
type).  Centrality helpers operate on either kind of adjacency.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse
import scipy.sparse.csgraph

from .errors import ConfigurationError, IngestError
from .sbm import CovariateMatrix, DynamicNetwork

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"


# ---------------------------------------------------------------------------
# Return panel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnPanel:
    """Daily simple returns, dates by assets.

    Entries are NaN outside an asset's active range (before its first or
    after its last observation).  Gaps inside the active range are forward
    filled at ingestion and the fill counts recorded in ``filled`` so they
    are never silent.
    """

    dates: tuple
    assets: tuple
    returns: np.ndarray
    standardized: bool = False
    filled: dict = field(default_factory=dict)

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        if returns.shape != (len(self.dates), len(self.assets)):
            raise ConfigurationError(
                f"returns {returns.shape} do not match {len(self.dates)} dates x "
                f"{len(self.assets)} assets"
            )
        if list(self.dates) != sorted(self.dates):
            raise ConfigurationError("dates must be increasing")
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "assets", tuple(self.assets))

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def row_of(self, date: str) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise IngestError(f"date {date} not in panel") from None

    def resolve_range(self, start: Optional[str], end: Optional[str]) -> tuple[int, int]:
        """Half-open row range covering [start, end] (inclusive dates)."""
        lo = 0 if start is None else int(np.searchsorted(np.array(self.dates), start, "left"))
        hi = self.n_days if end is None else int(np.searchsorted(np.array(self.dates), end, "right"))
        return lo, hi

    @classmethod
    def from_csv(cls, path) -> "ReturnPanel":
        try:
            frame = pd.read_csv(path)
        except Exception as exc:
            raise IngestError(f"cannot read returns CSV {path}: {exc}") from exc
        if frame.empty or frame.columns[0] != "date":
            raise IngestError(f"returns CSV must start with a 'date' column: {path}")
        dates = [str(d) for d in frame["date"]]
        if dates != sorted(dates) or len(set(dates)) != len(dates):
            raise IngestError(f"dates must be strictly increasing in {path}")
        assets = tuple(str(c) for c in frame.columns[1:])
        if not assets:
            raise IngestError(f"no asset columns in {path}")
        values = frame[list(frame.columns[1:])].to_numpy(dtype=float)
        filled = {}
        for j, asset in enumerate(assets):
            col = values[:, j]
            valid = ~np.isnan(col)
            if not valid.any():
                continue
            first, last = np.nonzero(valid)[0][[0, -1]]
            gaps = int(np.isnan(col[first : last + 1]).sum())
            if gaps:
                series = pd.Series(col[first : last + 1]).ffill()
                values[first : last + 1, j] = series.to_numpy()
                filled[asset] = gaps
                logger.warning("forward-filled %d gap(s) in asset %s", gaps, asset)
        return cls(tuple(dates), assets, values, filled=filled)

    def to_csv(self, path) -> None:
        frame = pd.DataFrame(self.returns, columns=list(self.assets))
        frame.insert(0, "date", list(self.dates))
        frame.to_csv(path, index=False, lineterminator="\n")


def standardize_columns(values: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance columns (population variance)."""
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (values - mean) / std


# ---------------------------------------------------------------------------
# Contract attributes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractAttributes:
    """Per-asset categorical contract information.

    ``algorithms[i]`` is a label or the literal "unknown"; ``proof_types[i]``
    is a (possibly empty) frozenset of labels.  Unknown never matches
    anything when building adjacencies.
    """

    ids: tuple
    algorithms: tuple
    proof_types: tuple

    def __post_init__(self):
        if not (len(self.ids) == len(self.algorithms) == len(self.proof_types)):
            raise ConfigurationError("attribute fields must be aligned")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "proof_types", tuple(frozenset(p) for p in self.proof_types))

    @property
    def n_assets(self) -> int:
        return len(self.ids)

    @classmethod
    def from_json(cls, path) -> "ContractAttributes":
        try:
            with Path(path).open(encoding="utf-8") as fh:
                records = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestError(f"cannot read attributes JSON {path}: {exc}") from exc
        if not isinstance(records, list):
            raise IngestError(f"attributes JSON must be an array of objects: {path}")
        ids, algorithms, proofs = [], [], []
        for idx, rec in enumerate(records):
            if "id" not in rec:
                raise IngestError(f"attribute record {idx} is missing 'id' in {path}")
            ids.append(str(rec["id"]))
            alg = str(rec.get("algorithm", UNKNOWN)).strip() or UNKNOWN
            algorithms.append(UNKNOWN if alg.lower() == UNKNOWN else alg)
            raw = rec.get("proof_types", [])
            if isinstance(raw, str):
                raw = [raw]
            cleaned = {str(p).strip() for p in raw if str(p).strip()}
            cleaned = {p for p in cleaned if p.lower() != UNKNOWN}
            proofs.append(frozenset(cleaned))
        return cls(tuple(ids), tuple(algorithms), tuple(proofs))

    def subset(self, ids: Sequence[str]) -> "ContractAttributes":
        index = {a: i for i, a in enumerate(self.ids)}
        missing = [a for a in ids if a not in index]
        if missing:
            raise IngestError(f"attributes missing for assets: {missing}")
        rows = [index[a] for a in ids]
        return ContractAttributes(
            tuple(ids),
            tuple(self.algorithms[r] for r in rows),
            tuple(self.proof_types[r] for r in rows),
        )


def contract_adjacency(attrs: ContractAttributes) -> np.ndarray:
    """Binary adjacency: edge iff a shared algorithm or proof type.

    The "unknown" algorithm marker and empty proof sets never match.
    """
    n = attrs.n_assets
    adj = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(i + 1, n):
            same_alg = (
                attrs.algorithms[i] != UNKNOWN
                and attrs.algorithms[i] == attrs.algorithms[j]
            )
            shared_proof = bool(attrs.proof_types[i] & attrs.proof_types[j])
            if same_alg or shared_proof:
                adj[i, j] = adj[j, i] = 1
    return adj


def covariate_dummies(attrs: ContractAttributes) -> CovariateMatrix:
    """One-hot encode algorithm and proof-type categories (lexicographic order).

    Unknown labels leave the corresponding row block all zero.
    """
    algorithms = sorted({a for a in attrs.algorithms if a != UNKNOWN})
    proofs = sorted(set().union(*attrs.proof_types) if attrs.proof_types else set())
    n = attrs.n_assets
    values = np.zeros((n, len(algorithms) + len(proofs)))
    for i in range(n):
        if attrs.algorithms[i] != UNKNOWN:
            values[i, algorithms.index(attrs.algorithms[i])] = 1.0
        for p in attrs.proof_types[i]:
            values[i, len(algorithms) + proofs.index(p)] = 1.0
    return CovariateMatrix(values, ("dummy",) * values.shape[1], bound=1.0)


# ---------------------------------------------------------------------------
# Adaptive Lasso
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LassoConfig:
    """Knobs of the two-stage adaptive Lasso."""

    gamma: float = 1.0
    ridge_scale: float = 1e-3
    weight_floor: float = 1e-8
    tol: float = 1e-7
    max_iter: int = 1000
    n_lambdas: int = 50
    lambda_min_ratio: float = 1e-4
    selection: str = "bic"  # "bic" | "cv"
    cv_folds: int = 5
    min_window: int = 60
    symmetrize: str = "or"  # "or" | "and"


DEFAULT_LASSO = LassoConfig()


@dataclass(frozen=True)
class LassoFit:
    """One asset's regression: coefficients over the other N-1 assets.

    ``coefficients`` aligns with the panel's assets with the target removed
    (standardized units); ``selected`` holds panel asset indices with
    coefficient magnitude above 1e-10; ``weights`` are the adaptive
    penalties (inf for predictors excluded from the window).
    """

    coefficients: np.ndarray
    intercept: float
    lam: float
    selected: frozenset
    weights: np.ndarray
    degenerate: bool = False


def _coordinate_descent(
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    lam: float,
    beta: np.ndarray,
    tol: float,
    max_iter: int,
) -> np.ndarray:
    """Cyclic coordinate descent for 0.5*||y - X b||^2 + lam * sum w|b|."""
    gram = x.T @ x
    xty = x.T @ y
    diag = np.diag(gram).copy()
    diag[diag == 0.0] = 1.0
    beta = beta.copy()
    p = beta.shape[0]
    for _ in range(max_iter):
        delta = 0.0
        for j in range(p):
            rho = xty[j] - gram[j] @ beta + diag[j] * beta[j]
            threshold = lam * weights[j]
            if rho > threshold:
                new = (rho - threshold) / diag[j]
            elif rho < -threshold:
                new = (rho + threshold) / diag[j]
            else:
                new = 0.0
            delta = max(delta, abs(new - beta[j]))
            beta[j] = new
        if delta < tol:
            break
    return beta


def _bic(y: np.ndarray, x: np.ndarray, beta: np.ndarray) -> float:
    n = y.shape[0]
    rss = float(np.sum((y - x @ beta) ** 2))
    df = int(np.count_nonzero(np.abs(beta) > 1e-10))
    return n * math.log(max(rss / n, 1e-30)) + df * math.log(n)


def adaptive_lasso_fit(
    panel: ReturnPanel,
    target: int,
    window: tuple[int, int],
    config: LassoConfig = DEFAULT_LASSO,
) -> LassoFit:
    """Two-stage adaptive Lasso of one asset's returns on all the others.

    Stage 1 is a ridge pilot (penalty scaled by the mean Gram diagonal);
    its coefficients set the adaptive weights 1/(|b|^gamma + floor).  Stage 2
    runs coordinate descent over a BIC-selected penalty from a log grid.
    All columns are standardized inside the window, so the intercept is 0.
    """
    lo, hi = window
    if not (0 <= lo < hi <= panel.n_days):
        raise ConfigurationError(f"window {window} outside panel of {panel.n_days} days")
    if not (0 <= target < panel.n_assets):
        raise ConfigurationError(f"target index {target} out of range")

    others = [j for j in range(panel.n_assets) if j != target]
    empty = LassoFit(
        np.zeros(len(others)), 0.0, 0.0, frozenset(), np.full(len(others), np.inf), True
    )

    col = panel.returns[lo:hi, target]
    rows = np.nonzero(~np.isnan(col))[0] + lo
    if rows.shape[0] < config.min_window:
        raise ConfigurationError(
            f"target has {rows.shape[0]} observations in the window; "
            f"need at least {config.min_window}"
        )
    y_raw = panel.returns[rows, target]
    if y_raw.std() <= 1e-12:
        return empty

    usable = [
        j for j in others
        if not np.isnan(panel.returns[rows, j]).any() and panel.returns[rows, j].std() > 1e-12
    ]
    if not usable:
        return empty

    y = standardize_columns(y_raw[:, None])[:, 0]
    x = standardize_columns(panel.returns[np.ix_(rows, usable)])
    n = y.shape[0]

    # Ridge pilot; the penalty is trace-scaled so it tracks the sample size.
    gram = x.T @ x
    lam_ridge = config.ridge_scale * float(np.trace(gram)) / gram.shape[0]
    pilot = np.linalg.solve(gram + lam_ridge * np.eye(gram.shape[0]), x.T @ y)
    weights = 1.0 / (np.abs(pilot) ** config.gamma + config.weight_floor)

    lam_max = float(np.max(np.abs(x.T @ y) / weights))
    if lam_max <= 0.0:
        return empty
    if config.n_lambdas == 1 and config.lambda_min_ratio == 0.0:
        grid = np.array([0.0])  # unpenalized fit on the pilot-weighted problem
    else:
        grid = np.geomspace(lam_max, lam_max * config.lambda_min_ratio, config.n_lambdas)

    beta = np.zeros(x.shape[1])
    best_lam, best_beta, best_score = grid[0], beta.copy(), np.inf
    if config.selection == "cv":
        folds = np.arange(n) % config.cv_folds
        for lam in grid:
            mse = 0.0
            for f in range(config.cv_folds):
                train, test = folds != f, folds == f
                b = _coordinate_descent(
                    x[train], y[train], weights, lam, beta, config.tol, config.max_iter
                )
                mse += float(np.mean((y[test] - x[test] @ b) ** 2))
            beta = _coordinate_descent(x, y, weights, lam, beta, config.tol, config.max_iter)
            if mse < best_score:
                best_score, best_lam, best_beta = mse, lam, beta.copy()
    else:
        for lam in grid:
            beta = _coordinate_descent(x, y, weights, lam, beta, config.tol, config.max_iter)
            score = _bic(y, x, beta)
            if score < best_score:
                best_score, best_lam, best_beta = score, lam, beta.copy()

    coefficients = np.zeros(len(others))
    full_weights = np.full(len(others), np.inf)
    position = {j: idx for idx, j in enumerate(others)}
    for local, j in enumerate(usable):
        coefficients[position[j]] = best_beta[local]
        full_weights[position[j]] = weights[local]
    selected = frozenset(j for j in usable if abs(coefficients[position[j]]) > 1e-10)
    return LassoFit(coefficients, 0.0, float(best_lam), selected, full_weights)


def return_network(
    panel: ReturnPanel,
    step: int = 1,
    window: int = 60,
    mode: str = "expanding",
    config: LassoConfig = DEFAULT_LASSO,
) -> DynamicNetwork:
    """Dynamic adjacency from per-asset adaptive Lasso selections.

    One period per window end (stepping by ``step`` days).  ``mode`` is
    "expanding" (grow from the start, the default) or "rolling" (fixed
    length ``window``).  Selections are symmetrized per ``config.symmetrize``
    ("or": an edge if either side selects the other).  Assets that cannot be
    fit in a period stay isolated and are logged, never fatal.
    """
    if mode not in ("expanding", "rolling"):
        raise ConfigurationError(f"unknown window mode {mode!r}")
    if step < 1 or window < 2:
        raise ConfigurationError("need step >= 1 and window >= 2")
    if panel.n_days < window:
        raise ConfigurationError(
            f"panel has {panel.n_days} days; the first window needs {window}"
        )
    ends = range(window - 1, panel.n_days, step)
    n = panel.n_assets
    slices = []
    for end in ends:
        lo = 0 if mode == "expanding" else end - window + 1
        selected_by = []
        for target in range(n):
            try:
                fit = adaptive_lasso_fit(panel, target, (lo, end + 1), config)
                selected_by.append(fit.selected)
            except ConfigurationError as exc:
                logger.warning("period end %d: asset %s left isolated (%s)",
                               end, panel.assets[target], exc)
                selected_by.append(frozenset())
        adj = np.zeros((n, n), dtype=np.int8)
        for i in range(n):
            for j in selected_by[i]:
                if config.symmetrize == "or":
                    adj[i, j] = adj[j, i] = 1
                elif i in selected_by[j]:
                    adj[i, j] = adj[j, i] = 1
        np.fill_diagonal(adj, 0)
        slices.append(adj)
    return DynamicNetwork(np.stack(slices), tuple(panel.assets))


# ---------------------------------------------------------------------------
# Centrality
# ---------------------------------------------------------------------------


class EigenvectorCentrality(NamedTuple):
    scores: np.ndarray
    eigenvalue: float
    disconnected: bool
    empty: bool


def eigenvector_centrality(adjacency: np.ndarray) -> EigenvectorCentrality:
    """Leading eigenvector of the largest connected component.

    Scores are non-negative, L2-normalized on the component and zero
    elsewhere; the disconnect flag is set whenever the graph has more than
    one component (isolated nodes included).
    """
    a = np.asarray(adjacency, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ConfigurationError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0) or np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
        raise ConfigurationError("adjacency must be symmetric and non-negative")
    if n == 0 or a.sum() == 0.0:
        return EigenvectorCentrality(np.zeros(n), 0.0, n > 1, True)
    n_comp, membership = scipy.sparse.csgraph.connected_components(
        scipy.sparse.csr_matrix(a), directed=False
    )
    largest = int(np.argmax(np.bincount(membership)))
    nodes = np.nonzero(membership == largest)[0]
    sub = a[np.ix_(nodes, nodes)]
    values, vectors = np.linalg.eigh(sub)
    vec = vectors[:, -1]
    if vec.sum() < 0:
        vec = -vec
    vec = np.maximum(vec, 0.0)
    vec /= np.linalg.norm(vec)
    scores = np.zeros(n)
    scores[nodes] = vec
    return EigenvectorCentrality(scores, float(values[-1]), n_comp > 1, False)


class DegreeCentrality(NamedTuple):
    scores: np.ndarray
    empty: bool


def degree_centrality_normalized(adjacency: np.ndarray) -> DegreeCentrality:
    """Row sums normalized to total one; empty graphs fall back to uniform.

    The normalization residual is folded into the largest entry so the
    compensated sum of the scores is exactly one.
    """
    a = np.asarray(adjacency, dtype=float)
    n = a.shape[0]
    if n == 0:
        return DegreeCentrality(np.zeros(0), True)
    deg = a.sum(axis=1)
    total = math.fsum(deg.tolist())
    if total == 0.0:
        scores = np.full(n, 1.0 / n)
        empty = True
    else:
        scores = deg / total
        empty = False
    anchor = int(np.argmax(scores))
    for _ in range(3):
        residual = math.fsum(scores.tolist()) - 1.0
        if residual == 0.0:
            break
        scores[anchor] -= residual
    return DegreeCentrality(scores, empty)
