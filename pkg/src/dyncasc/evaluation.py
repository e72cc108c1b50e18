"""Scoring of clusterings, group-level network statistics and backtests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.optimize
import scipy.stats

from .errors import ConfigurationError
from .netbuild import ReturnPanel, degree_centrality_normalized
from .sbm import DynamicNetwork, MembershipSeries

ALL_GROUPS = "all"


# ---------------------------------------------------------------------------
# Misclustering
# ---------------------------------------------------------------------------


class MisclusteringResult(NamedTuple):
    per_period: np.ndarray
    supremum: float

    def to_csv(self, path) -> None:
        """Write one ``t,rate`` row per period."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("t,rate\n")
            for t, rate in enumerate(self.per_period):
                fh.write(f"{t},{float(rate)!r}\n")


def _labels_array(z: Union[MembershipSeries, np.ndarray]) -> np.ndarray:
    labels = z.labels if isinstance(z, MembershipSeries) else np.asarray(z, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[None, :]
    return labels


def _best_agreement(confusion: np.ndarray, n_groups: int) -> float:
    if n_groups <= 6:
        return max(
            sum(confusion[i, perm[i]] for i in range(n_groups))
            for perm in itertools.permutations(range(n_groups))
        )
    rows, cols = scipy.optimize.linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum())


def misclustering_rate(
    z_hat: Union[MembershipSeries, np.ndarray],
    z_true: Union[MembershipSeries, np.ndarray],
) -> MisclusteringResult:
    """Fraction of mismatched nodes under the best label bijection.

    Computed per period (exhaustively over permutations for up to six
    groups, by assignment matching above) together with the supremum over
    periods.
    """
    hat = _labels_array(z_hat)
    true = _labels_array(z_true)
    if hat.shape != true.shape:
        raise ConfigurationError(f"shape mismatch: {hat.shape} vs {true.shape}")
    t_total, n = hat.shape
    k = int(max(hat.max(initial=0), true.max(initial=0))) + 1
    rates = np.empty(t_total)
    for t in range(t_total):
        confusion = np.zeros((k, k))
        np.add.at(confusion, (hat[t], true[t]), 1.0)
        rates[t] = 1.0 - _best_agreement(confusion, k) / n
    return MisclusteringResult(rates, float(rates.max()))


# ---------------------------------------------------------------------------
# Group connection statistics
# ---------------------------------------------------------------------------


def _tstat(values: np.ndarray, newey_west_lags: int = 0) -> tuple[float, float]:
    """Two-sided t-statistic and p-value for a zero mean."""
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    n = values.shape[0]
    if n < 2 or values.std(ddof=1) == 0.0:
        return float("nan"), float("nan")
    if newey_west_lags <= 0:
        stat, pvalue = scipy.stats.ttest_1samp(values, 0.0)
        return float(stat), float(pvalue)
    centered = values - values.mean()
    variance = float(centered @ centered) / n
    for lag in range(1, min(newey_west_lags, n - 1) + 1):
        cov = float(centered[lag:] @ centered[:-lag]) / n
        variance += 2.0 * (1.0 - lag / (newey_west_lags + 1.0)) * cov
    se = math.sqrt(max(variance, 0.0) / n)
    if se == 0.0:
        return float("nan"), float("nan")
    stat = values.mean() / se
    pvalue = 2.0 * (1.0 - scipy.stats.norm.cdf(abs(stat)))
    return float(stat), float(pvalue)


def _nanmean(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else float("nan")


@dataclass(frozen=True)
class GroupConnectionRow:
    group: object  # group id or "all"
    within: float
    cross: float
    diff: float
    tstat: float
    pvalue: float
    flagged: bool = False


def group_connections(
    network: Union[DynamicNetwork, np.ndarray],
    memberships: Union[MembershipSeries, np.ndarray],
    newey_west_lags: int = 0,
) -> list:
    """Within- and cross-group connection intensities averaged over periods.

    Per period, a group's within value is twice the endpoint count of its
    internal edges over 4 * (group size); its cross value is twice the
    endpoint count on its side of boundary edges over 4 * (nodes outside).
    The difference is tested against zero with a paired two-sided t-test
    over the per-period differences (Newey-West standard errors when
    ``newey_west_lags`` > 0).  The "all" row averages the groups.
    """
    adjacency = network.adjacency if isinstance(network, DynamicNetwork) else np.asarray(network)
    if adjacency.ndim == 2:
        adjacency = adjacency[None, :, :]
    labels = _labels_array(memberships)
    if labels.shape[0] == 1 and adjacency.shape[0] > 1:
        labels = np.repeat(labels, adjacency.shape[0], axis=0)
    if labels.shape[0] != adjacency.shape[0] or labels.shape[1] != adjacency.shape[1]:
        raise ConfigurationError("network and memberships have mismatched shapes")
    t_total, n = labels.shape
    groups = sorted(int(g) for g in np.unique(labels))

    within = {g: np.full(t_total, np.nan) for g in groups}
    cross = {g: np.full(t_total, np.nan) for g in groups}
    flagged = {g: False for g in groups}
    for t in range(t_total):
        a = adjacency[t].astype(float)
        for g in groups:
            inside = labels[t] == g
            n_i = int(inside.sum())
            if n_i == 0:
                flagged[g] = True
                continue
            within[g][t] = 2.0 * a[np.ix_(inside, inside)].sum() / (4.0 * n_i)
            n_out = n - n_i
            if n_out == 0:
                flagged[g] = True  # singleton partition: cross is undefined
                continue
            cross[g][t] = 2.0 * a[np.ix_(inside, ~inside)].sum() / (4.0 * n_out)

    rows = []
    for g in groups:
        diffs = within[g] - cross[g]
        stat, pvalue = _tstat(diffs, newey_west_lags)
        rows.append(
            GroupConnectionRow(
                g,
                _nanmean(within[g]),
                _nanmean(cross[g]),
                _nanmean(diffs),
                stat,
                pvalue,
                flagged[g],
            )
        )
    all_within = np.array([_nanmean([within[g][t] for g in groups]) for t in range(t_total)])
    all_cross = np.array([_nanmean([cross[g][t] for g in groups]) for t in range(t_total)])
    stat, pvalue = _tstat(all_within - all_cross, newey_west_lags)
    rows.append(
        GroupConnectionRow(
            ALL_GROUPS,
            _nanmean(all_within),
            _nanmean(all_cross),
            _nanmean(all_within - all_cross),
            stat,
            pvalue,
            any(flagged.values()),
        )
    )
    return rows


def group_centrality(adjacency: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean normalized degree centrality per group (groups 0..max)."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = degree_centrality_normalized(adjacency).scores
    if labels.shape[0] != scores.shape[0]:
        raise ConfigurationError("labels do not match the adjacency")
    k = int(labels.max()) + 1
    out = np.empty(k)
    for g in range(k):
        members = labels == g
        if not members.any():
            raise ConfigurationError(f"group {g} is empty")
        out[g] = scores[members].mean()
    return out


# ---------------------------------------------------------------------------
# Misclustering upper bound (plug-in diagnostic)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the high-probability misclustering bound.

    ``min_block_fraction`` has no canonical definition in the estimation
    output; callers usually plug in the smallest block proportion of the
    clustering under evaluation.
    """

    n_nodes: int
    n_periods: int
    n_groups: int
    bandwidth: int
    churn: float
    max_block: float
    min_degree: float
    lambda_k_max: float
    min_block_fraction: float
    kernel_max_weight: float
    covariate_noise: float
    approx_eps: float
    smoothness_scale: float
    smoothness_exponent: float
    kernel_order: int
    confidence: float

    def __post_init__(self):
        positives = (
            self.n_nodes, self.n_periods, self.n_groups, self.max_block,
            self.min_degree, self.lambda_k_max, self.min_block_fraction,
            self.kernel_max_weight, self.approx_eps, self.smoothness_scale,
            self.smoothness_exponent,
        )
        values = positives + (self.bandwidth, self.churn, self.covariate_noise,
                              self.kernel_order, self.confidence)
        if not all(np.isfinite(v) for v in values):
            raise ConfigurationError("bound parameters must be finite")
        if any(v <= 0 for v in positives):
            raise ConfigurationError("bound parameters must be positive")
        if self.bandwidth < 0 or self.churn < 0 or self.covariate_noise < 0:
            raise ConfigurationError("bandwidth, churn and covariate noise must be >= 0")
        if self.kernel_order < 0:
            raise ConfigurationError("kernel order must be >= 0")
        if not (0.0 < self.confidence < 1.0):
            raise ConfigurationError("confidence level must lie in (0, 1)")


class BoundResult(NamedTuple):
    value: float
    vacuous: bool


def misclustering_upper_bound(p: BoundParams) -> BoundResult:
    """Evaluate the closed-form misclustering rate bound.

    The result can exceed one, in which case the vacuity flag is set.
    """
    b = math.sqrt(3.0 * math.log(8.0 * p.n_nodes * p.n_periods / p.confidence))
    c_eps = 2.0**9 * (2.0 + p.approx_eps) ** 2
    bias_term = (4.0 + 2.0 * p.covariate_noise) * b / math.sqrt(p.min_degree)
    churn_term = (2.0 * p.n_groups / b) * (
        math.sqrt(2.0 * p.max_block * p.bandwidth * p.churn) + 2.0 * p.max_block
    )
    smooth_term = (
        p.n_nodes * p.smoothness_scale / (b**2 * math.factorial(p.kernel_order))
    ) * (p.bandwidth / p.n_periods) ** p.smoothness_exponent
    prefactor = (
        c_eps * p.n_groups * p.kernel_max_weight**2
        / (p.min_block_fraction**2 * p.n_nodes * p.lambda_k_max**2)
    )
    value = prefactor * (bias_term + churn_term + smooth_term) ** 2
    return BoundResult(float(value), value >= 1.0)


# ---------------------------------------------------------------------------
# Contrarian backtest
# ---------------------------------------------------------------------------


class DailyLegs(NamedTuple):
    long: np.ndarray
    short: np.ndarray
    widened: bool


def daily_contrarian_legs(previous: np.ndarray, quantile: float) -> DailyLegs:
    """Index sets of the long (lowest previous return) and short legs.

    Each leg takes the floor(m * quantile) extreme assets, widened to one
    asset (with a flag) when the group is too small for the quantile, and
    capped at half the assets so the legs never overlap.
    """
    m = previous.shape[0]
    if m < 2:
        raise ConfigurationError("need at least two assets to form both legs")
    leg = int(math.floor(m * quantile))
    widened = leg < 1
    leg = max(leg, 1)
    if 2 * leg > m:
        leg = m // 2
        widened = True
    order = np.argsort(previous, kind="stable")
    return DailyLegs(order[:leg], order[-leg:], widened)


@dataclass(frozen=True)
class BacktestResult:
    """Daily strategy returns per group with compounded curves.

    ``daily`` and ``cumulative`` map group keys (group ids plus "all") to
    arrays over ``dates``; ``spreads`` holds (group_a, group_b, mean
    difference, t-statistic, p-value) tuples for every group pair.
    """

    dates: tuple
    daily: dict
    cumulative: dict
    flags: dict
    spreads: list


def _group_series(
    panel: ReturnPanel,
    member_idx: np.ndarray,
    rows: range,
    quantile: float,
) -> tuple[np.ndarray, list]:
    daily = np.zeros(len(rows))
    flags = []
    for pos, d in enumerate(rows):
        prev = panel.returns[d - 1, member_idx]
        today = panel.returns[d, member_idx]
        tradable = ~np.isnan(prev) & ~np.isnan(today)
        m = int(tradable.sum())
        if m < 2:
            flags.append(f"day {panel.dates[d]}: fewer than 2 tradable assets")
            continue
        legs = daily_contrarian_legs(prev[tradable], quantile)
        if legs.widened:
            flags.append(f"day {panel.dates[d]}: quantile widened")
        active = today[tradable]
        # Half the notional in each equal-weight leg; cash neutral by design.
        daily[pos] = 0.5 * active[legs.long].mean() - 0.5 * active[legs.short].mean()
    return daily, flags


def contrarian_backtest(
    panel: ReturnPanel,
    labels: np.ndarray,
    group: Optional[object] = None,
    quantile: float = 0.2,
    date_range: Optional[tuple] = None,
    newey_west_lags: int = 0,
) -> BacktestResult:
    """Daily long-losers short-winners strategy within asset groups.

    Each day, assets in a group are ranked by the previous day's return;
    the bottom quantile is held long and the top quantile short for one
    day, both legs equal weight.  Assets without a previous-day or
    same-day return are excluded on that day.  With ``group=None`` every
    group plus the pooled universe is backtested and pairwise return
    spreads are t-tested.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != panel.n_assets:
        raise ConfigurationError("labels must align with the panel assets")
    if not (0.0 < quantile <= 0.5):
        raise ConfigurationError("quantile must lie in (0, 0.5]")
    lo, hi = (0, panel.n_days) if date_range is None else panel.resolve_range(*date_range)
    if hi - lo < 2:
        raise ConfigurationError("date range must cover at least two days")
    rows = range(lo + 1, hi)
    dates = tuple(panel.dates[d] for d in rows)

    wanted = sorted(int(g) for g in np.unique(labels)) if group is None else [group]
    daily, cumulative, flags = {}, {}, {}
    for g in wanted:
        if g == ALL_GROUPS:
            members = np.arange(panel.n_assets)
        else:
            members = np.nonzero(labels == int(g))[0]
        if members.size == 0:
            raise ConfigurationError(f"group {g} has no assets")
        series, series_flags = _group_series(panel, members, rows, quantile)
        daily[g] = series
        cumulative[g] = np.cumprod(1.0 + series) - 1.0
        flags[g] = series_flags
    if group is None:
        series, series_flags = _group_series(panel, np.arange(panel.n_assets), rows, quantile)
        daily[ALL_GROUPS] = series
        cumulative[ALL_GROUPS] = np.cumprod(1.0 + series) - 1.0
        flags[ALL_GROUPS] = series_flags

    spreads = []
    keys = [k for k in daily if k != ALL_GROUPS]
    for a, b in itertools.combinations(keys, 2):
        diff = daily[a] - daily[b]
        stat, pvalue = _tstat(diff, newey_west_lags)
        spreads.append((a, b, float(diff.mean()), stat, pvalue))
    return BacktestResult(dates, daily, cumulative, flags, spreads)
