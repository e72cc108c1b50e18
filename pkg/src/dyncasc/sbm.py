"""Domain types and a seeded simulator for dynamic degree-corrected blockmodels.

The generative model: at each period t an undirected binary graph on a fixed
vertex set is drawn with edge probability ``psi_i * psi_j * B_t(z_i, z_j)``,
where ``z`` are the (possibly churning) group labels, ``B_t`` is a sequence of
symmetric block probability matrices and ``psi`` are per-node degree weights
normalized to mean one within each group.  Node covariates are fixed over
time and bounded.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateGraphError

logger = logging.getLogger(__name__)

_SYM_TOL = 1e-12


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockProbabilitySeries:
    """Per-period K x K block connection probabilities.

    Parameters
    ----------
    entries : ndarray, shape (T, K, K)
        Symmetric slices with entries in [0, 1].
    assortative : bool
        When True every slice must be positive definite (within-group
        probabilities dominate), and this is checked at construction.
    """

    entries: np.ndarray
    assortative: bool = False

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 3 or entries.shape[1] != entries.shape[2]:
            raise ConfigurationError(
                f"block probabilities must be (T, K, K), got {entries.shape}"
            )
        if not np.all((entries >= 0.0) & (entries <= 1.0)):
            raise ConfigurationError("block probabilities must lie in [0, 1]")
        if np.max(np.abs(entries - entries.transpose(0, 2, 1))) > _SYM_TOL:
            raise ConfigurationError("each block probability slice must be symmetric")
        if self.assortative:
            for t in range(entries.shape[0]):
                if np.min(np.linalg.eigvalsh(entries[t])) <= 0.0:
                    raise ConfigurationError(
                        f"assortative series requires positive definite slices; "
                        f"slice {t} is not"
                    )
        object.__setattr__(self, "entries", entries)

    @property
    def n_periods(self) -> int:
        return self.entries.shape[0]

    @property
    def n_groups(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def constant(cls, block: np.ndarray, n_periods: int, **kw) -> "BlockProbabilitySeries":
        block = np.asarray(block, dtype=float)
        return cls(np.repeat(block[None, :, :], n_periods, axis=0), **kw)

    @classmethod
    def ramp(cls, block: np.ndarray, n_periods: int, **kw) -> "BlockProbabilitySeries":
        """Linear ramp ``B_t = (t/T) * block`` for t = 1..T."""
        block = np.asarray(block, dtype=float)
        scale = np.arange(1, n_periods + 1, dtype=float) / n_periods
        return cls(scale[:, None, None] * block[None, :, :], **kw)

    @classmethod
    def from_generator(
        cls,
        fn: Callable[[float, int, int], float],
        n_periods: int,
        n_groups: int,
        **kw,
    ) -> "BlockProbabilitySeries":
        """Evaluate a smooth generator ``fn(t/T, k, k')`` on the period grid."""
        entries = np.empty((n_periods, n_groups, n_groups))
        for t in range(n_periods):
            x = (t + 1) / n_periods
            for k in range(n_groups):
                for k2 in range(k, n_groups):
                    entries[t, k, k2] = entries[t, k2, k] = fn(x, k, k2)
        return cls(entries, **kw)


@dataclass(frozen=True)
class MembershipSeries:
    """Group labels over time: an integer array of shape (T, N).

    Labels are 0-based.  ``flags`` optionally carries one diagnostic string
    per period ("" for a clean period); estimators use it to mark fallback
    periods without aborting a sweep.
    """

    labels: np.ndarray
    flags: Optional[tuple] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ConfigurationError(f"labels must be (T, N), got {labels.shape}")
        if labels.size and labels.min() < 0:
            raise ConfigurationError("labels must be non-negative")
        if self.flags is not None and len(self.flags) != labels.shape[0]:
            raise ConfigurationError("flags must have one entry per period")
        object.__setattr__(self, "labels", labels)

    @property
    def n_periods(self) -> int:
        return self.labels.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.labels.shape[1]

    @property
    def n_groups(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def one_hot(self, t: int, n_groups: Optional[int] = None) -> np.ndarray:
        k = n_groups if n_groups is not None else self.n_groups
        z = np.zeros((self.n_nodes, k), dtype=float)
        z[np.arange(self.n_nodes), self.labels[t]] = 1.0
        return z

    def churn(self) -> np.ndarray:
        """Number of label changes between consecutive periods (length T-1)."""
        if self.n_periods < 2:
            return np.zeros(0, dtype=np.int64)
        return np.sum(self.labels[1:] != self.labels[:-1], axis=1)

    def validate(self, n_groups: int, churn_bound: Optional[int] = None) -> None:
        """Check the simulator-side invariants: no empty group, churn <= bound."""
        if self.labels.max(initial=-1) >= n_groups:
            raise ConfigurationError("label outside [0, n_groups)")
        for t in range(self.n_periods):
            if len(np.unique(self.labels[t])) != n_groups:
                raise ConfigurationError(f"period {t} has an empty group")
        if churn_bound is not None and self.n_periods > 1:
            if int(self.churn().max(initial=0)) > churn_bound:
                raise ConfigurationError("membership churn exceeds the bound")

    def to_csv(self, path, node_ids: Optional[Sequence[str]] = None) -> None:
        """Write rows ``t,node,label``; node is an id string when provided."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "node", "label"])
            for t in range(self.n_periods):
                for i in range(self.n_nodes):
                    node = node_ids[i] if node_ids is not None else i
                    writer.writerow([t, node, int(self.labels[t, i])])

    @classmethod
    def from_csv(cls, path) -> tuple["MembershipSeries", list]:
        """Read a membership CSV; returns the series and the node id order."""
        rows = []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = set(reader.fieldnames or ())
            node_col = "node" if "node" in fields else "node_id"
            if not {"t", node_col, "label"} <= fields:
                raise ConfigurationError(f"membership CSV needs columns t,node,label: {path}")
            for row in reader:
                rows.append((int(row["t"]), row[node_col], int(row["label"])))
        if not rows:
            raise ConfigurationError(f"membership CSV is empty: {path}")
        node_ids = []
        seen = {}
        for _, node, _ in rows:
            if node not in seen:
                seen[node] = len(node_ids)
                node_ids.append(node)
        n_periods = max(r[0] for r in rows) + 1
        labels = np.zeros((n_periods, len(node_ids)), dtype=np.int64)
        for t, node, lab in rows:
            labels[t, seen[node]] = lab
        return cls(labels), node_ids


@dataclass(frozen=True)
class DegreeParams:
    """Positive degree weights, normalized to mean one within each group.

    The weights act multiplicatively on the block probabilities, so mean-one
    normalization keeps ``B_t`` on the edge-probability scale ("uniform" mode
    has every weight exactly 1 and reduces to the plain blockmodel).
    ``block_map`` holds the group assignment the normalization refers to
    (the simulator uses the initial-period labels; weights stay fixed while
    memberships churn).
    """

    psi: np.ndarray
    block_map: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        block_map = np.asarray(self.block_map, dtype=np.int64)
        if psi.shape != block_map.shape or psi.ndim != 1:
            raise ConfigurationError("psi and block_map must be 1-D and aligned")
        if np.any(psi <= 0.0):
            raise ConfigurationError("degree weights must be positive")
        for k in np.unique(block_map):
            mean = psi[block_map == k].mean()
            if abs(mean - 1.0) > 1e-9:
                raise ConfigurationError(
                    f"degree weights in group {k} average {mean}, expected 1"
                )
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "block_map", block_map)


@dataclass(frozen=True)
class DynamicNetwork:
    """A length-T sequence of symmetric hollow binary adjacency matrices."""

    adjacency: np.ndarray
    node_ids: tuple = ()

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
            raise ConfigurationError(f"adjacency must be (T, N, N), got {adj.shape}")
        if not np.all((adj == 0) | (adj == 1)):
            raise ConfigurationError("adjacency entries must be binary")
        if np.any(adj != adj.transpose(0, 2, 1)):
            raise ConfigurationError("each adjacency slice must be symmetric")
        if np.any(adj.diagonal(axis1=1, axis2=2) != 0):
            raise ConfigurationError("adjacency slices must have zero diagonal")
        node_ids = tuple(self.node_ids) or tuple(str(i) for i in range(adj.shape[1]))
        if len(node_ids) != adj.shape[1]:
            raise ConfigurationError("node_ids length must match N")
        object.__setattr__(self, "adjacency", adj.astype(np.int8))
        object.__setattr__(self, "node_ids", node_ids)

    @property
    def n_periods(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[1]

    def save(self, out_dir) -> list:
        """Write one ``t,i,j`` edge-list CSV per period plus a JSON header.

        Returns the list of files written.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = {
            "n_nodes": self.n_nodes,
            "n_periods": self.n_periods,
            "node_ids": list(self.node_ids),
        }
        paths = [out_dir / "network.json"]
        with paths[0].open("w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for t in range(self.n_periods):
            path = out_dir / f"edges_{t:04d}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["t", "i", "j"])
                ii, jj = np.nonzero(np.triu(self.adjacency[t], k=1))
                for i, j in zip(ii.tolist(), jj.tolist()):
                    writer.writerow([t, i, j])
            paths.append(path)
        return paths

    @classmethod
    def load(cls, in_dir) -> "DynamicNetwork":
        in_dir = Path(in_dir)
        with (in_dir / "network.json").open(encoding="utf-8") as fh:
            header = json.load(fh)
        n, t_total = header["n_nodes"], header["n_periods"]
        adj = np.zeros((t_total, n, n), dtype=np.int8)
        for t in range(t_total):
            with (in_dir / f"edges_{t:04d}.csv").open(newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    i, j = int(row["i"]), int(row["j"])
                    adj[t, i, j] = adj[t, j, i] = 1
        return cls(adj, tuple(header["node_ids"]))


@dataclass(frozen=True)
class CovariateMatrix:
    """Time-fixed node attributes, bounded in absolute value by ``bound``."""

    values: np.ndarray
    kinds: tuple = ()
    bound: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ConfigurationError(f"covariates must be (N, R), got {values.shape}")
        kinds = tuple(self.kinds) or ("continuous",) * values.shape[1]
        if len(kinds) != values.shape[1]:
            raise ConfigurationError("one kind per covariate column required")
        if values.size and np.max(np.abs(values)) > self.bound + 1e-12:
            raise ConfigurationError("covariate magnitude exceeds the stated bound")
        for j, kind in enumerate(kinds):
            if kind == "dummy" and not np.all(np.isin(values[:, j], (0.0, 1.0))):
                raise ConfigurationError(f"dummy column {j} must be 0/1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kinds", kinds)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulated instance.

    ``churn`` is the per-step upper bound on membership switches; the actual
    number of movers each step is drawn uniformly from {0, ..., churn}.
    """

    n_nodes: int
    n_periods: int
    n_groups: int
    churn: int = 0
    degree_mode: str = "uniform"  # "uniform" | "power-law"
    covariate_mode: str = "noise"  # "noise" | "dummy" | "none"
    assortative: bool = False
    seed: int = 0
    n_covariates: Optional[int] = None
    dummy_flip: float = 0.1
    noise_bound: float = 10.0

    def __post_init__(self):
        if not (self.n_nodes >= self.n_groups >= 1):
            raise ConfigurationError(
                f"need N >= K >= 1, got N={self.n_nodes}, K={self.n_groups}"
            )
        if self.n_periods < 1:
            raise ConfigurationError("need at least one period")
        if not (0 <= self.churn <= self.n_nodes):
            raise ConfigurationError("churn bound must lie in [0, N]")
        if self.degree_mode not in ("uniform", "power-law"):
            raise ConfigurationError(f"unknown degree mode {self.degree_mode!r}")
        if self.covariate_mode not in ("noise", "dummy", "none"):
            raise ConfigurationError(f"unknown covariate mode {self.covariate_mode!r}")


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------


def _initial_labels(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    # Balanced assignment in a random node order: no group can be empty.
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.arange(n) % k
    return labels


def _step_memberships(
    rng: np.random.Generator, labels: np.ndarray, k: int, churn: int
) -> np.ndarray:
    """Move s' ~ U{0..churn} uniformly chosen nodes to uniformly chosen other
    groups; a move that would empty a group is re-drawn."""
    new_labels = labels.copy()
    if churn == 0 or k < 2:
        return new_labels
    n = labels.shape[0]
    n_moves = int(rng.integers(0, churn + 1))
    counts = np.bincount(new_labels, minlength=k)
    moved: set = set()
    done = 0
    guard = 50 * (n_moves + 1)
    while done < n_moves and guard > 0:
        guard -= 1
        i = int(rng.integers(0, n))
        if i in moved:
            continue
        src = int(new_labels[i])
        if counts[src] <= 1:
            continue  # re-draw: this move would empty a group
        dst = int(rng.integers(0, k - 1))
        if dst >= src:
            dst += 1
        new_labels[i] = dst
        counts[src] -= 1
        counts[dst] += 1
        moved.add(i)
        done += 1
    return new_labels


def _degree_weights(
    rng: np.random.Generator, labels0: np.ndarray, k: int, mode: str
) -> DegreeParams:
    n = labels0.shape[0]
    if mode == "uniform":
        psi = np.ones(n)
    else:
        # Pareto(2) draws, rescaled to mean one within each group.
        raw = rng.pareto(2.0, size=n) + 1.0
        psi = raw.copy()
        for g in range(k):
            members = labels0 == g
            psi[members] = raw[members] / raw[members].mean()
    return DegreeParams(psi, labels0.copy())


def _covariates(rng: np.random.Generator, cfg: SimConfig, labels0: np.ndarray) -> CovariateMatrix:
    n, k = cfg.n_nodes, cfg.n_groups
    if cfg.covariate_mode == "none":
        return CovariateMatrix(np.zeros((n, 0)), (), bound=1.0)
    if cfg.covariate_mode == "noise":
        r = cfg.n_covariates or max(1, int(math.floor(math.log(n))))
        values = rng.uniform(0.0, cfg.noise_bound, size=(n, r))
        return CovariateMatrix(values, ("continuous",) * r, bound=cfg.noise_bound)
    # Dummy mode: one-hot of a group-correlated category, flipped with a
    # configurable probability to a uniform other category.
    cats = labels0.copy()
    flip = rng.random(n) < cfg.dummy_flip
    for i in np.nonzero(flip)[0]:
        other = int(rng.integers(0, k - 1)) if k > 1 else 0
        if k > 1 and other >= cats[i]:
            other += 1
        cats[i] = other
    values = np.zeros((n, k))
    values[np.arange(n), cats] = 1.0
    return CovariateMatrix(values, ("dummy",) * k, bound=1.0)


def sample_dynamic_dcbm(
    cfg: SimConfig, block_probs: BlockProbabilitySeries
) -> tuple[DynamicNetwork, MembershipSeries, DegreeParams, CovariateMatrix]:
    """Draw one dynamic network instance.

    Each upper-triangular entry is an independent Bernoulli with parameter
    ``min(1, psi_i * psi_j * B_t(z_i, z_j))``; the diagonal is zero and the
    matrix is completed by symmetry.  The same config (including seed)
    produces bit-identical output.
    """
    if block_probs.n_periods != cfg.n_periods or block_probs.n_groups != cfg.n_groups:
        raise ConfigurationError(
            f"block probability series is {block_probs.entries.shape}, config wants "
            f"(T, K) = ({cfg.n_periods}, {cfg.n_groups})"
        )
    rng = np.random.default_rng(cfg.seed)
    n, t_total, k = cfg.n_nodes, cfg.n_periods, cfg.n_groups

    labels = np.empty((t_total, n), dtype=np.int64)
    labels[0] = _initial_labels(rng, n, k)
    for t in range(1, t_total):
        labels[t] = _step_memberships(rng, labels[t - 1], k, cfg.churn)

    degrees = _degree_weights(rng, labels[0], k, cfg.degree_mode)
    covariates = _covariates(rng, cfg, labels[0])

    psi_outer = np.outer(degrees.psi, degrees.psi)
    adjacency = np.zeros((t_total, n, n), dtype=np.int8)
    iu = np.triu_indices(n, k=1)
    clipped = 0
    for t in range(t_total):
        prob = psi_outer * block_probs.entries[t][np.ix_(labels[t], labels[t])]
        p_upper = prob[iu]
        clipped += int(np.count_nonzero(p_upper > 1.0))
        p_upper = np.clip(p_upper, 0.0, 1.0)
        draws = rng.random(p_upper.shape) < p_upper
        slice_t = np.zeros((n, n), dtype=np.int8)
        slice_t[iu] = draws
        adjacency[t] = slice_t + slice_t.T
    if clipped:
        logger.warning("clipped %d edge probabilities above 1", clipped)

    network = DynamicNetwork(adjacency, tuple(f"n{i}" for i in range(n)))
    return network, MembershipSeries(labels), degrees, covariates


# ---------------------------------------------------------------------------
# Population quantities
# ---------------------------------------------------------------------------


def population_adjacency(labels: np.ndarray, block: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Expected adjacency ``diag(psi) Z B Z' diag(psi)`` (diagonal included)."""
    labels = np.asarray(labels, dtype=np.int64)
    block = np.asarray(block, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if labels.ndim != 1 or psi.shape != labels.shape:
        raise ConfigurationError("labels and psi must be aligned 1-D arrays")
    if labels.max(initial=0) >= block.shape[0]:
        raise ConfigurationError("label outside the block matrix range")
    return np.outer(psi, psi) * block[np.ix_(labels, labels)]


def population_similarity(
    labels: np.ndarray,
    block: np.ndarray,
    psi: np.ndarray,
    covariates: Optional[np.ndarray] = None,
    alpha: float = 0.0,
    tau: Optional[float] = None,
) -> np.ndarray:
    """Noise-free similarity matrix of one period.

    Builds the regularized Laplacian of the expected adjacency and, when
    covariates are given with ``alpha > 0``, adds the covariate component
    ``alpha * X (X' L X) X'``.  With distinct blocks the result has exactly
    K nonzero leading eigen-directions whose row-normalized eigenvectors are
    constant within groups.
    """
    expected = population_adjacency(labels, block, psi)
    deg = expected.sum(axis=1)
    if tau is None:
        tau = float(deg.mean())
    reg = deg + tau
    if np.any(reg <= 0.0):
        raise DegenerateGraphError("population degree plus regularizer is not positive")
    inv_sqrt = 1.0 / np.sqrt(reg)
    lap = expected * np.outer(inv_sqrt, inv_sqrt)
    if covariates is None or alpha == 0.0:
        return lap
    x = np.asarray(covariates, dtype=float)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ConfigurationError("covariates must be (N, R)")
    weight = x.T @ lap @ x
    return lap + alpha * (x @ weight @ x.T)
