"""Monte Carlo sweep harness comparing the clustering pipelines.

A sweep varies either the network size or the membership churn bound,
replicates each cell, runs the requested algorithms on the same simulated
instances and records the misclustering rate (averaged over periods) per
replication.  All randomness is derived from one root seed through named
integer sub-streams, so serial and parallel executions agree.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clustering import cluster_similarity_series, dsc_aggregate, dsc_covariates
from .errors import ConfigurationError
from .evaluation import misclustering_rate
from .sbm import BlockProbabilitySeries, SimConfig, sample_dynamic_dcbm
from .similarity import build_series

logger = logging.getLogger(__name__)

ALGORITHMS = ("casc", "smoothed", "aggregate", "covariates")

# Three-group block probabilities used by the reference simulation design;
# each period scales this base by t/T.
DEFAULT_BLOCK_BASE = np.array(
    [
        [0.9, 0.6, 0.3],
        [0.6, 0.3, 0.4],
        [0.3, 0.4, 0.8],
    ]
)

_STREAMS = {"sim": 0, "casc": 1, "smoothed": 2, "aggregate": 3, "covariates": 4}


def derive_seed(*parts: int) -> int:
    """Fold integer name parts into one well-mixed 64-bit seed."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: vary network size ("n") or churn bound ("s")."""

    sweep: str  # "n" | "s"
    values: tuple  # node counts for "n", churn bounds for "s"
    n_nodes: int = 100  # fixed size for the churn sweep
    n_periods: int = 10
    n_groups: int = 3
    replications: int = 100
    algorithms: tuple = ALGORITHMS
    kernel_order: int = 4
    eps: float = 0.01
    restarts: int = 20
    covariate_mode: str = "noise"
    degree_mode: str = "uniform"
    churn_rule: str = "sqrt"  # churn for the size sweep: floor(sqrt(N))
    seed: int = 0
    block_base: np.ndarray = field(default_factory=lambda: DEFAULT_BLOCK_BASE.copy())

    def __post_init__(self):
        if self.sweep not in ("n", "s"):
            raise ConfigurationError(f"unknown sweep kind {self.sweep!r}")
        if not self.values:
            raise ConfigurationError("sweep needs at least one value")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ConfigurationError(f"unknown algorithms: {sorted(unknown)}")
        base = np.asarray(self.block_base, dtype=float)
        if base.shape != (self.n_groups, self.n_groups):
            raise ConfigurationError(
                f"block base must be {self.n_groups}x{self.n_groups}, got {base.shape}"
            )
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "block_base", base)

    def cells(self) -> list:
        """(n_nodes, churn) per sweep point."""
        out = []
        for v in self.values:
            if self.sweep == "n":
                n = int(v)
                s = int(math.floor(math.sqrt(n))) if self.churn_rule == "sqrt" else int(self.churn_rule)
                out.append((n, s))
            else:
                out.append((int(self.n_nodes), int(v)))
        return out


def run_replication(
    cfg: SweepConfig, cell_index: int, rep: int
) -> dict:
    """Simulate one instance and score every requested algorithm on it.

    Returns algorithm -> misclustering rate averaged over periods.
    """
    n, churn = cfg.cells()[cell_index]
    sim_cfg = SimConfig(
        n_nodes=n,
        n_periods=cfg.n_periods,
        n_groups=cfg.n_groups,
        churn=churn,
        degree_mode=cfg.degree_mode,
        covariate_mode=cfg.covariate_mode,
        seed=derive_seed(cfg.seed, cell_index, rep, _STREAMS["sim"]),
    )
    blocks = BlockProbabilitySeries.ramp(cfg.block_base, cfg.n_periods)
    network, truth, _, covariates = sample_dynamic_dcbm(sim_cfg, blocks)

    need_series = {"casc", "smoothed"} & set(cfg.algorithms)
    series = build_series(network, covariates, cfg.n_groups) if need_series else None

    rates = {}
    for algo in cfg.algorithms:
        seed = derive_seed(cfg.seed, cell_index, rep, _STREAMS[algo])
        if algo == "casc":
            run = cluster_similarity_series(
                series.similarities, cfg.n_groups, kernel_order=cfg.kernel_order,
                eps=cfg.eps, restarts=cfg.restarts, seed=seed,
            )
            estimate = run.memberships
        elif algo == "smoothed":
            run = cluster_similarity_series(
                series.laplacians, cfg.n_groups, kernel_order=cfg.kernel_order,
                eps=cfg.eps, restarts=cfg.restarts, seed=seed,
            )
            estimate = run.memberships
        elif algo == "aggregate":
            estimate = dsc_aggregate(
                network, cfg.n_groups, eps=cfg.eps, restarts=cfg.restarts, seed=seed
            )
        else:
            estimate = dsc_covariates(
                covariates, cfg.n_groups, cfg.n_periods,
                eps=cfg.eps, restarts=cfg.restarts, seed=seed,
            )
        rates[algo] = float(misclustering_rate(estimate, truth).per_period.mean())
    return rates


def _cell_payload(payload) -> tuple:
    cfg, cell_index = payload
    per_algo = {algo: [] for algo in cfg.algorithms}
    for rep in range(cfg.replications):
        rates = run_replication(cfg, cell_index, rep)
        for algo, rate in rates.items():
            per_algo[algo].append(rate)
    return cell_index, per_algo


def run_sweep(cfg: SweepConfig, threads: int = 1, progress=None) -> list:
    """Run every cell; returns rows of
    (value, algorithm, mean, stderr, replications)."""
    payloads = [(cfg, i) for i in range(len(cfg.values))]
    results = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for cell_index, per_algo in pool.map(_cell_payload, payloads):
                results[cell_index] = per_algo
                if progress:
                    progress(cell_index)
    else:
        for payload in payloads:
            cell_index, per_algo = _cell_payload(payload)
            results[cell_index] = per_algo
            if progress:
                progress(cell_index)

    rows = []
    for i, value in enumerate(cfg.values):
        for algo in cfg.algorithms:
            rates = np.array(results[i][algo])
            stderr = float(rates.std(ddof=1) / math.sqrt(len(rates))) if len(rates) > 1 else 0.0
            rows.append(
                {
                    "value": value,
                    "algorithm": algo,
                    "mean_misclustering": float(rates.mean()),
                    "stderr": stderr,
                    "replications": int(len(rates)),
                }
            )
    return rows
