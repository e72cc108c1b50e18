import numpy as np
import pytest

from dyncasc import ConfigurationError
from dyncasc.sweeps import SweepConfig, derive_seed, run_replication, run_sweep


def tiny_config(**kw):
    base = dict(sweep="n", values=(10, 14), n_periods=3, n_groups=2,
                replications=2, algorithms=("casc", "aggregate"), seed=3,
                block_base=np.array([[0.8, 0.15], [0.15, 0.7]]))
    base.update(kw)
    return SweepConfig(**base)


class TestSeeds:
    def test_derive_seed_deterministic_and_distinct(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        seeds = {derive_seed(0, c, r, a) for c in range(3) for r in range(3)
                 for a in range(3)}
        assert len(seeds) == 27


class TestSweep:
    def test_rates_lie_in_unit_interval(self):
        cfg = tiny_config()
        rates = run_replication(cfg, 0, 0)
        assert set(rates) == {"casc", "aggregate"}
        assert all(0.0 <= v <= 1.0 for v in rates.values())

    def test_serial_repeatable(self):
        cfg = tiny_config()
        assert run_sweep(cfg) == run_sweep(cfg)

    def test_parallel_matches_serial(self):
        cfg = tiny_config()
        assert run_sweep(cfg, threads=2) == run_sweep(cfg)

    def test_churn_rule_for_size_sweep(self):
        cfg = tiny_config(churn_rule="sqrt")
        assert cfg.cells() == [(10, 3), (14, 3)]
        cfg = tiny_config(churn_rule="2")
        assert cfg.cells() == [(10, 2), (14, 2)]

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            tiny_config(sweep="x")
        with pytest.raises(ConfigurationError):
            tiny_config(values=())
        with pytest.raises(ConfigurationError):
            tiny_config(algorithms=("casc", "nope"))
        with pytest.raises(ConfigurationError):
            tiny_config(block_base=np.eye(3))
