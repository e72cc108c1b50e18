import itertools

import numpy as np
import pytest

from dyncasc import (
    BlockProbabilitySeries,
    ConfigurationError,
    InfeasibleError,
    SimConfig,
    casc_dc,
    cluster_similarity,
    cluster_similarity_series,
    dsc_aggregate,
    dsc_covariates,
    dsc_smoothed,
    misclustering_rate,
    population_similarity,
    run_casc_dc,
    sample_dynamic_dcbm,
    select_k,
    spectral_embed,
    spherical_kmeans,
)
from dyncasc.sweeps import DEFAULT_BLOCK_BASE


class TestSpectralEmbed:
    def test_identity_matrix_invariants(self):
        emb = spectral_embed(np.eye(5), 2)
        gram = emb.u.T @ emb.u
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-8)
        np.testing.assert_allclose(np.linalg.norm(emb.u_plus, axis=1), 1.0, atol=1e-10)

    def test_two_block_population_rows(self):
        labels = np.repeat([0, 1], 6)
        block = np.array([[0.7, 0.05], [0.05, 0.6]])
        sim = population_similarity(labels, block, np.ones(12))
        emb = spectral_embed(sim, 2)
        rows = np.unique(np.round(emb.u_plus, 8), axis=0)
        assert rows.shape[0] == 2

    def test_zero_row_excluded(self):
        sim = np.zeros((4, 4))
        sim[:3, :3] = population_similarity(np.array([0, 0, 1]),
                                            np.diag([0.9, 0.8]), np.ones(3))
        emb = spectral_embed(sim, 2)
        assert 3 not in emb.nonzero_rows

    def test_largest_magnitude_selection(self):
        sim = np.diag([1.0, -0.9, 0.2, 0.05])
        emb = spectral_embed(sim, 2)
        assert sorted(np.abs(emb.eigenvalues).tolist(), reverse=True) == [1.0, 0.9]

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(8, 8))
        a = 0.5 * (a + a.T)
        emb = spectral_embed(a, 3)
        for col in range(3):
            pivot = np.argmax(np.abs(emb.u[:, col]))
            assert emb.u[pivot, col] > 0

    def test_k_up_to_n_allowed(self):
        emb = spectral_embed(np.eye(3), 3)
        assert emb.u.shape == (3, 3)
        with pytest.raises(ConfigurationError):
            spectral_embed(np.eye(3), 4)


class TestSphericalKMeans:
    def test_orthogonal_bundles_exact(self):
        points = np.repeat(np.eye(3), 4, axis=0)
        result = spherical_kmeans(points, 3, seed=0)
        assert result.objective == pytest.approx(0.0, abs=1e-12)
        truth = np.repeat([0, 1, 2], 4)
        assert misclustering_rate(result.assignment, truth).supremum == 0.0

    def test_identical_rows_degenerate(self):
        points = np.tile([1.0, 0.0], (5, 1))
        result = spherical_kmeans(points, 2, seed=0)
        assert result.degenerate
        assert result.objective == pytest.approx(0.0, abs=1e-12)
        assert len(np.unique(result.assignment)) == 1

    def test_antipodal_bundles_match_brute_force(self):
        rng = np.random.default_rng(3)
        angles = np.concatenate([rng.normal(0.0, 0.05, 3), rng.normal(np.pi, 0.05, 3)])
        points = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        result = spherical_kmeans(points, 2, restarts=10, seed=5)

        best_obj, best_assign = np.inf, None
        for bits in itertools.product([0, 1], repeat=6):
            assign = np.array(bits)
            if len(np.unique(assign)) < 2:
                continue
            obj = 0.0
            for c in (0, 1):
                members = points[assign == c]
                obj += float(np.sum((members - members.mean(axis=0)) ** 2))
            if obj < best_obj:
                best_obj, best_assign = obj, assign
        assert result.objective == pytest.approx(best_obj, rel=1e-9)
        assert misclustering_rate(result.assignment, best_assign).supremum == 0.0

    def test_infeasible_when_fewer_rows_than_clusters(self):
        with pytest.raises(InfeasibleError):
            spherical_kmeans(np.eye(2), 3, seed=0)

    def test_objective_within_eps_of_best_restart(self):
        rng = np.random.default_rng(9)
        points = rng.normal(size=(40, 3))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
        eps = 0.01
        result = spherical_kmeans(points, 4, eps=eps, restarts=20, seed=2)
        singles = [
            spherical_kmeans(points, 4, eps=eps, restarts=1, seed=[2, r]).objective
            for r in range(20)
        ]
        assert result.objective <= (1 + eps) * min(singles) + 1e-12


class TestPipelines:
    def test_exact_recovery_on_population_series(self):
        rng = np.random.default_rng(17)
        for trial in range(5):
            k = int(rng.integers(2, 5))
            n = int(rng.integers(4 * k, 40))
            labels = np.sort(rng.integers(0, k, size=n))
            for g in range(k):  # keep every group populated
                labels[g] = g
            labels = np.sort(labels)
            block = np.diag(rng.uniform(0.5, 0.9, size=k))
            block += rng.uniform(0.02, 0.08)
            sim = population_similarity(labels, np.clip(block, 0, 1), np.ones(n))
            mats = np.repeat(sim[None], 3, axis=0)
            run = cluster_similarity_series(mats, k, kernel_order=2, seed=trial)
            assert misclustering_rate(run.memberships.labels,
                                      np.tile(labels, (3, 1))).supremum == 0.0

    def test_one_node_per_group_is_permutation(self):
        k = 4
        labels = np.arange(k)
        block = np.clip(0.15 + 0.7 * np.eye(k) + 0.1 * np.arange(k)[None, :] * np.eye(k), 0, 1)
        sim = population_similarity(labels, block, np.ones(k))
        estimate, flag = cluster_similarity(sim, k, seed=3)
        assert sorted(estimate.tolist()) == list(range(k))
        assert flag == ""

    def test_casc_equals_smoothed_baseline_without_covariates(self):
        cfg = SimConfig(n_nodes=24, n_periods=4, n_groups=3, churn=2, seed=14)
        blocks = BlockProbabilitySeries.ramp(DEFAULT_BLOCK_BASE, 4)
        net, _, _, _ = sample_dynamic_dcbm(cfg, blocks)
        a = casc_dc(net, np.zeros((24, 3)), 3, seed=77)
        b = dsc_smoothed(net, 3, seed=77)
        assert np.array_equal(a.labels, b.labels)

    def test_zero_norm_rows_get_first_group(self):
        # One isolated node: its embedding row is zero, so it falls back to
        # group 0 in every period.
        sim = np.zeros((7, 7))
        labels6 = np.repeat([0, 1], 3)
        sim[:6, :6] = population_similarity(labels6, np.diag([0.8, 0.7]) + 0.05,
                                            np.ones(6))
        estimate, _ = cluster_similarity(sim, 2, seed=1)
        assert estimate[6] == 0

    def test_permutation_equivariance(self):
        cfg = SimConfig(n_nodes=20, n_periods=3, n_groups=2, churn=1, seed=5)
        blocks = BlockProbabilitySeries.constant(
            np.array([[0.7, 0.1], [0.1, 0.6]]), 3
        )
        net, _, _, cov = sample_dynamic_dcbm(cfg, blocks)
        base = casc_dc(net, cov, 2, seed=9)
        rng = np.random.default_rng(0)
        perm = rng.permutation(20)
        net_p = type(net)(net.adjacency[:, perm][:, :, perm],
                          tuple(net.node_ids[i] for i in perm))
        cov_p = type(cov)(cov.values[perm], cov.kinds, cov.bound)
        permuted = casc_dc(net_p, cov_p, 2, seed=9)
        for t in range(3):
            rate = misclustering_rate(permuted.labels[t], base.labels[t][perm]).supremum
            assert rate == 0.0

    def test_failed_period_falls_back_with_flag(self):
        mats = np.zeros((2, 5, 5))  # embeddings have no nonzero rows
        run = cluster_similarity_series(mats, 2, seed=0)
        assert (run.memberships.labels == 0).all()
        assert all(f for f in run.memberships.flags)

    def test_run_diagnostics_shapes(self):
        cfg = SimConfig(n_nodes=18, n_periods=4, n_groups=2, seed=2)
        blocks = BlockProbabilitySeries.constant(np.array([[0.7, 0.1], [0.1, 0.6]]), 4)
        net, _, _, cov = sample_dynamic_dcbm(cfg, blocks)
        run = run_casc_dc(net, cov, 2, seed=0)
        assert run.bandwidths.shape == (4,)
        assert run.alphas.shape == (4,)
        assert len(run.flags) == 4


class TestBaselines:
    def test_aggregate_recovers_two_cliques(self):
        # T=1; the squared adjacency of two disjoint cliques separates them,
        # verified against brute-force best two-partition of the labels.
        n = 6
        adj = np.zeros((n, n), dtype=np.int8)
        adj[:3, :3] = 1
        adj[3:, 3:] = 1
        np.fill_diagonal(adj, 0)
        est = dsc_aggregate(adj[None], 2, seed=0)
        truth = np.repeat([0, 1], 3)
        assert misclustering_rate(est.labels[0], truth).supremum == 0.0

    def test_aggregate_empty_network(self):
        est = dsc_aggregate(np.zeros((3, 4, 4), dtype=np.int8), 2, seed=0)
        assert (est.labels == 0).all()
        assert all("degenerate" in f for f in est.flags)

    def test_aggregate_labels_constant_over_time(self):
        cfg = SimConfig(n_nodes=15, n_periods=4, n_groups=2, churn=2, seed=3)
        blocks = BlockProbabilitySeries.constant(np.array([[0.8, 0.1], [0.1, 0.8]]), 4)
        net, _, _, _ = sample_dynamic_dcbm(cfg, blocks)
        est = dsc_aggregate(net, 2, seed=1)
        assert (est.labels == est.labels[0]).all()

    def test_covariates_baseline_exact_on_indicators(self):
        x = np.zeros((9, 3))
        truth = np.repeat([0, 1, 2], 3)
        x[np.arange(9), truth] = 1.0
        est = dsc_covariates(x, 3, 4, seed=0)
        assert est.labels.shape == (4, 9)
        assert misclustering_rate(est.labels[0], truth).supremum == 0.0
        assert (est.labels == est.labels[0]).all()

    def test_covariates_baseline_near_chance_on_noise(self):
        rates = []
        for seed in range(30):
            rng = np.random.default_rng(seed)
            truth = np.repeat([0, 1, 2], 10)
            x = rng.uniform(0, 10, size=(30, 3))
            est = dsc_covariates(x, 3, 1, seed=seed)
            rates.append(misclustering_rate(est.labels[0], truth).supremum)
        assert np.mean(rates) >= 0.3

    def test_covariates_rank_deficiency_flagged(self):
        x = np.ones((6, 2))
        est = dsc_covariates(x, 2, 2, seed=0)
        assert any(f for f in est.flags)

    def test_smoothed_constant_network_matches_static(self):
        # A constant series maxes out the bandwidth and the smoothed matrix
        # equals the per-period Laplacian, so the dynamic output matches
        # static clustering of any single period.
        adj = np.zeros((8, 8), dtype=np.int8)
        adj[:4, :4] = 1
        adj[4:, 4:] = 1
        np.fill_diagonal(adj, 0)
        adj[0, 4] = adj[4, 0] = 1
        net = np.repeat(adj[None], 6, axis=0)
        est = dsc_smoothed(net, 2, seed=4)
        from dyncasc.similarity import regularized_laplacian

        lap, _, _ = regularized_laplacian(adj)
        static, _ = cluster_similarity(lap, 2, seed=[4, 5])
        assert misclustering_rate(est.labels[5], static).supremum == 0.0


class TestSelectK:
    def test_population_two_block_selects_two(self):
        labels = np.repeat([0, 1], 10)
        block = np.array([[0.7, 0.1], [0.1, 0.6]])
        sim = population_similarity(labels, block, np.ones(20))
        mats = np.repeat(sim[None], 3, axis=0)
        assert select_k(mats, [1, 2, 3, 4], seed=0) == 2

    def test_rank_one_constant_selects_one(self):
        mats = np.full((2, 12, 12), 0.4)
        assert select_k(mats, [1, 2, 3], seed=0) == 1

    def test_noise_selects_one_on_average(self):
        picks = []
        for seed in range(30):
            rng = np.random.default_rng(seed)
            a = rng.normal(size=(14, 14))
            picks.append(select_k(0.5 * (a + a.T), [1, 2, 3, 4], seed=seed))
        assert np.mean(picks) < 2.0
        assert np.bincount(picks).argmax() == 1

    def test_empty_range_rejected(self):
        with pytest.raises(ConfigurationError):
            select_k(np.zeros((1, 5, 5)), [], seed=0)
        with pytest.raises(ConfigurationError):
            select_k(np.zeros((1, 5, 5)), [5], seed=0)
