import itertools

import numpy as np
import pytest

from dyncasc import (
    BoundParams,
    ConfigurationError,
    ReturnPanel,
    contrarian_backtest,
    group_centrality,
    group_connections,
    misclustering_rate,
    misclustering_upper_bound,
)
from dyncasc.evaluation import ALL_GROUPS, daily_contrarian_legs


def make_panel(returns, start="2021-01-01"):
    returns = np.asarray(returns, dtype=float)
    dates = [str(np.datetime64(start) + np.timedelta64(i, "D"))
             for i in range(returns.shape[0])]
    assets = [f"a{j}" for j in range(returns.shape[1])]
    return ReturnPanel(tuple(dates), tuple(assets), returns)


class TestMisclustering:
    def test_identical_labelings(self):
        labels = np.array([[0, 1, 2, 1], [2, 2, 0, 1]])
        result = misclustering_rate(labels, labels)
        assert result.supremum == 0.0

    def test_any_permutation_is_zero(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 4, size=(3, 25))
        for perm in itertools.permutations(range(4)):
            mapped = np.vectorize(lambda v: perm[v])(truth)
            assert misclustering_rate(mapped, truth).supremum == 0.0

    def test_collapsed_estimate_on_balanced_truth(self):
        truth = np.array([0, 0, 1, 1])
        estimate = np.zeros(4, dtype=int)
        assert misclustering_rate(estimate, truth).supremum == pytest.approx(0.5)

    def test_pseudo_metric_properties(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 3, size=(2, 30))
        b = rng.integers(0, 3, size=(2, 30))
        r_ab = misclustering_rate(a, b).per_period
        r_ba = misclustering_rate(b, a).per_period
        np.testing.assert_allclose(r_ab, r_ba, atol=1e-12)
        assert ((r_ab >= 0) & (r_ab <= 1)).all()
        assert misclustering_rate(a, a).supremum == 0.0

    def test_matching_above_six_groups(self):
        rng = np.random.default_rng(2)
        truth = rng.integers(0, 8, size=40)
        perm = rng.permutation(8)
        mapped = perm[truth]
        assert misclustering_rate(mapped, truth).supremum == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            misclustering_rate(np.zeros((2, 3), dtype=int), np.zeros((2, 4), dtype=int))

    def test_per_period_csv(self, tmp_path):
        truth = np.array([[0, 1, 0, 1], [0, 0, 1, 1]])
        estimate = np.array([[0, 1, 0, 1], [0, 0, 0, 0]])
        result = misclustering_rate(estimate, truth)
        path = tmp_path / "rates.csv"
        result.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,rate"
        assert lines[1] == "0,0.0"
        assert float(lines[2].split(",")[1]) == pytest.approx(0.5)


class TestGroupConnections:
    def test_disjoint_cliques(self):
        adj = np.zeros((6, 6))
        adj[:3, :3] = 1
        adj[3:, 3:] = 1
        np.fill_diagonal(adj, 0)
        labels = np.repeat([0, 1], 3)
        rows = group_connections(adj[None], labels[None])
        by_group = {r.group: r for r in rows}
        assert by_group[0].cross == 0.0
        assert by_group[0].within > 0.0
        assert by_group[0].diff > 0.0

    def test_complete_graph_hand_count(self):
        adj = np.ones((4, 4)) - np.eye(4)
        labels = np.array([0, 0, 1, 1])
        rows = group_connections(adj[None], labels[None])
        by_group = {r.group: r for r in rows}
        assert by_group[0].within == pytest.approx(0.5, abs=1e-12)
        assert by_group[0].cross == pytest.approx(1.0, abs=1e-12)
        assert by_group[ALL_GROUPS].within == pytest.approx(0.5, abs=1e-12)
        assert by_group[ALL_GROUPS].cross == pytest.approx(1.0, abs=1e-12)

    def test_paired_t_statistic_sign(self):
        rng = np.random.default_rng(3)
        labels = np.repeat([0, 1], 6)
        slices = []
        for _ in range(8):
            adj = np.zeros((12, 12))
            for g in (slice(0, 6), slice(6, 12)):
                block = (rng.random((6, 6)) < 0.8).astype(float)
                adj[g, g] = np.triu(block, 1)
            adj = adj + adj.T
            slices.append(adj)
        rows = group_connections(np.stack(slices), labels[None])
        for r in rows:
            assert r.diff > 0
            assert r.tstat > 0

    def test_singleton_group_flagged(self):
        adj = np.ones((3, 3)) - np.eye(3)
        labels = np.zeros(3, dtype=int)  # one group covering everything
        rows = group_connections(adj[None], labels[None])
        assert rows[0].flagged

    def test_newey_west_variant(self):
        rng = np.random.default_rng(6)
        labels = np.repeat([0, 1], 5)
        slices = []
        for _ in range(12):
            adj = np.zeros((10, 10))
            for g in (slice(0, 5), slice(5, 10)):
                block = (rng.random((5, 5)) < 0.7).astype(float)
                adj[g, g] = np.triu(block, 1)
            adj = adj + adj.T
            slices.append(adj)
        plain = group_connections(np.stack(slices), labels[None])
        robust = group_connections(np.stack(slices), labels[None], newey_west_lags=5)
        for a, b in zip(plain, robust):
            assert a.within == b.within and a.cross == b.cross
            assert np.isfinite(b.tstat)
            assert a.tstat != b.tstat


class TestGroupCentrality:
    def test_uniform_graph(self):
        adj = np.ones((6, 6)) - np.eye(6)
        labels = np.repeat([0, 1], 3)
        scores = group_centrality(adj, labels)
        np.testing.assert_allclose(scores, 1 / 6, atol=1e-12)

    def test_star_hub_group(self):
        adj = np.zeros((4, 4))
        adj[0, 1:] = adj[1:, 0] = 1
        labels = np.array([0, 1, 1, 1])
        scores = group_centrality(adj, labels)
        assert scores[0] == pytest.approx(0.5, abs=1e-12)
        assert scores[1] == pytest.approx(1 / 6, abs=1e-12)

    def test_empty_group_rejected(self):
        with pytest.raises(ConfigurationError):
            group_centrality(np.zeros((3, 3)), np.array([0, 0, 2]))


def default_bound_params(**kw):
    base = dict(
        n_nodes=100, n_periods=10, n_groups=3, bandwidth=2, churn=10,
        max_block=40, min_degree=50.0, lambda_k_max=0.3, min_block_fraction=0.2,
        kernel_max_weight=2.0, covariate_noise=1.0, approx_eps=0.01,
        smoothness_scale=1.0, smoothness_exponent=1.0, kernel_order=4,
        confidence=0.05,
    )
    base.update(kw)
    return BoundParams(**base)


class TestBound:
    def test_non_negative(self):
        assert misclustering_upper_bound(default_bound_params()).value >= 0.0

    def test_bandwidth_zero_removes_churn_dependence(self):
        a = misclustering_upper_bound(default_bound_params(bandwidth=0, churn=5))
        b = misclustering_upper_bound(default_bound_params(bandwidth=0, churn=500))
        assert a.value == b.value

    def test_monotone_in_smoothness_scale_and_churn(self):
        for scales in ([0.5, 1.0, 2.0, 8.0],):
            values = [
                misclustering_upper_bound(default_bound_params(smoothness_scale=s)).value
                for s in scales
            ]
            assert values == sorted(values)
        churn_values = [
            misclustering_upper_bound(default_bound_params(churn=s)).value
            for s in [0, 1, 5, 25, 125]
        ]
        assert churn_values == sorted(churn_values)

    def test_vacuity_flag(self):
        small = default_bound_params(n_nodes=10, lambda_k_max=0.01)
        assert misclustering_upper_bound(small).vacuous

    def test_invalid_params(self):
        with pytest.raises(ConfigurationError):
            default_bound_params(confidence=1.5)
        with pytest.raises(ConfigurationError):
            default_bound_params(min_degree=-1.0)
        with pytest.raises(ConfigurationError):
            default_bound_params(lambda_k_max=float("nan"))


class TestBacktest:
    def test_alternating_fixture_earns_one_percent_daily(self):
        days = 8
        returns = np.zeros((days, 2))
        returns[:, 0] = [0.01 if d % 2 == 0 else -0.01 for d in range(days)]
        returns[:, 1] = -returns[:, 0]
        panel = make_panel(returns)
        labels = np.zeros(2, dtype=int)
        result = contrarian_backtest(panel, labels)
        np.testing.assert_allclose(result.daily[0], 0.01, atol=1e-15)
        expected_cum = np.cumprod(1.01 * np.ones(days - 1)) - 1.0
        np.testing.assert_allclose(result.cumulative[0], expected_cum, atol=1e-12)

    def test_cumulative_compounds_daily(self):
        rng = np.random.default_rng(5)
        panel = make_panel(rng.normal(0, 0.02, size=(30, 8)))
        labels = rng.integers(0, 2, size=8)
        labels[:2] = [0, 1]
        result = contrarian_backtest(panel, labels)
        for key, daily in result.daily.items():
            recomputed = np.cumprod(1.0 + daily) - 1.0
            np.testing.assert_allclose(result.cumulative[key], recomputed, atol=1e-12)

    def test_legs_are_equal_weight_and_disjoint(self):
        prev = np.array([0.05, -0.02, 0.01, 0.0, -0.04, 0.03, 0.02, -0.01, 0.04, -0.03])
        legs = daily_contrarian_legs(prev, 0.2)
        assert len(legs.long) == len(legs.short) == 2
        assert not set(legs.long.tolist()) & set(legs.short.tolist())
        assert not legs.widened
        assert set(prev[legs.long]) == {-0.04, -0.03}
        assert set(prev[legs.short]) == {0.05, 0.04}

    def test_quantile_widened_for_small_groups(self):
        legs = daily_contrarian_legs(np.array([0.01, -0.01, 0.0]), 0.2)
        assert legs.widened
        assert len(legs.long) == len(legs.short) == 1

    def test_missing_prior_day_excluded(self):
        returns = np.array([
            [0.01, -0.01, np.nan],
            [-0.02, 0.02, 0.05],
            [0.01, -0.01, 0.01],
        ])
        panel = make_panel(returns)
        result = contrarian_backtest(panel, np.zeros(3, dtype=int))
        # day 1: asset 2 has no prior return; legs come from assets 0 and 1
        assert result.daily[0][0] == pytest.approx(0.5 * 0.02 - 0.5 * (-0.02))

    def test_asset_permutation_invariance(self):
        rng = np.random.default_rng(8)
        returns = rng.normal(0, 0.02, size=(40, 9))
        labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
        panel = make_panel(returns)
        base = contrarian_backtest(panel, labels)
        perm = rng.permutation(9)
        panel_p = ReturnPanel(panel.dates, tuple(panel.assets[j] for j in perm),
                              returns[:, perm])
        permuted = contrarian_backtest(panel_p, labels[perm])
        for key in base.daily:
            np.testing.assert_allclose(base.daily[key], permuted.daily[key], atol=1e-12)

    def test_pairwise_spreads_present(self):
        rng = np.random.default_rng(9)
        panel = make_panel(rng.normal(0, 0.02, size=(50, 12)))
        labels = np.repeat([0, 1, 2], 4)
        result = contrarian_backtest(panel, labels)
        pairs = {(a, b) for a, b, *_ in result.spreads}
        assert pairs == {(0, 1), (0, 2), (1, 2)}
        assert ALL_GROUPS in result.daily

    def test_date_range_must_cover_two_days(self):
        panel = make_panel(np.zeros((5, 3)))
        with pytest.raises(ConfigurationError):
            contrarian_backtest(panel, np.zeros(3, dtype=int),
                                date_range=(panel.dates[1], panel.dates[1]))
