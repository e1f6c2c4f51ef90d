"""Ensemble machinery: seeding, kernel-vs-reference, merging, parallel
determinism."""

import math
from dataclasses import replace

import numpy as np
import pytest

from driftdiffuse import (ConfigurationError, EnsembleAbortError,
                          ExperimentConfig, MomentAccumulator, SchemeConfig,
                          SeedPolicy, estimate_mean_drift, run_ensemble,
                          run_path)
from driftdiffuse.ensemble import merge, run_path_reference


def small_config(**kwargs):
    base = dict(dim=2, modes=20, cutoff_k=10.0, alpha=0.75, theta=10.0,
                sigma=0.1, dt=0.01, horizon=0.5, paths=8, stride=5, seed=7)
    base.update(kwargs)
    scheme = base.pop("scheme", SchemeConfig())
    cfg = ExperimentConfig(scheme=scheme, **base)
    cfg.validate()
    return cfg


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    @pytest.mark.parametrize("kwargs", [
        dict(dim=1), dict(modes=0), dict(cutoff_k=0.0), dict(alpha=1.0),
        dict(theta=0.0), dict(sigma=-0.1), dict(dt=0.0),
        dict(horizon=-1.0), dict(horizon=0.25, dt=0.1), dict(paths=0),
        dict(stride=0), dict(dim=3, scheme=SchemeConfig(kind="midpoint2d")),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            small_config(**kwargs)

    def test_grid_properties(self):
        cfg = small_config(horizon=1.0, dt=0.01, stride=20)
        assert cfg.n_steps == 100
        assert cfg.n_records == 5
        np.testing.assert_allclose(cfg.record_times, [0.2, 0.4, 0.6, 0.8, 1.0])


class TestSeeding:
    def test_streams_are_independent_per_label(self):
        policy = SeedPolicy(42)
        a = policy.stream(0, 0).standard_normal(5)
        b = policy.stream(0, 1).standard_normal(5)
        c = policy.stream(1, 0).standard_normal(5)
        assert not np.allclose(a, b)
        assert not np.allclose(a, c)

    def test_streams_reproducible(self):
        a = SeedPolicy(42).stream(3, 2).standard_normal(5)
        b = SeedPolicy(42).stream(3, 2).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_master_seed_changes_everything(self):
        a = SeedPolicy(1).stream(0, 0).standard_normal(5)
        b = SeedPolicy(2).stream(0, 0).standard_normal(5)
        assert not np.allclose(a, b)


class TestKernelAgainstReference:
    @pytest.mark.parametrize("kind,dim", [
        ("midpoint2d", 2), ("modesplit", 2), ("modesplit", 3), ("euler", 2),
        ("euler", 3),
    ])
    def test_paths_match(self, kind, dim):
        cfg = small_config(dim=dim, scheme=SchemeConfig(kind=kind))
        for p in (0, 3):
            x_a, b_a = run_path(cfg, p)
            x_b, b_b = run_path_reference(cfg, p)
            np.testing.assert_allclose(x_a, x_b, atol=1e-12)
            np.testing.assert_allclose(b_a, b_b, atol=1e-12)

    def test_schemes_share_noise(self):
        # Identical kicks across schemes (paired comparisons): with b == 0
        # all schemes must yield bit-identical trajectories.
        cfgs = [small_config(zero_velocity=True, scheme=SchemeConfig(kind=k))
                for k in ("midpoint2d", "modesplit", "euler")]
        paths = [run_path(c, 2)[0] for c in cfgs]
        np.testing.assert_array_equal(paths[0], paths[1])
        np.testing.assert_array_equal(paths[0], paths[2])

    def test_zero_velocity_is_pure_brownian(self):
        cfg = small_config(zero_velocity=True, sigma=0.3)
        x_rec, b_rec = run_path(cfg, 1)
        np.testing.assert_array_equal(b_rec, 0.0)
        # reconstruct from the kick stream directly
        from driftdiffuse.ensemble import LABEL_KICKS
        kicks = SeedPolicy(cfg.seed).stream(1, LABEL_KICKS) \
            .standard_normal((cfg.n_steps, 2)) * math.sqrt(cfg.dt)
        expected = 0.3 * np.cumsum(kicks, axis=0)[cfg.stride - 1::cfg.stride]
        np.testing.assert_allclose(x_rec, expected, atol=1e-14)


class TestAccumulator:
    def test_add_path_sums(self):
        cfg = small_config()
        acc = MomentAccumulator.zeros(cfg)
        pos = np.arange(cfg.n_records * 2, dtype=float).reshape(-1, 2)
        bc = np.ones_like(pos)
        acc.add_path(pos, bc)
        acc.add_path(2 * pos, bc)
        assert acc.count == 2
        np.testing.assert_allclose(acc.sum_x, 3 * pos)
        np.testing.assert_allclose(acc.sum_x4, pos ** 4 + 16 * pos ** 4)
        np.testing.assert_allclose(acc.sum_xx[:, 0, 1],
                                   5 * pos[:, 0] * pos[:, 1])
        np.testing.assert_allclose(acc.sum_b, 2 * bc)

    def test_merge_matches_sequential(self):
        cfg = small_config(paths=6)
        full = MomentAccumulator.zeros(cfg)
        left = MomentAccumulator.zeros(cfg)
        right = MomentAccumulator.zeros(cfg)
        for p in range(6):
            x, b = run_path(cfg, p)
            full.add_path(x, b)
            (left if p < 3 else right).add_path(x, b)
        merged = merge(left, right)
        assert merged.count == full.count
        # summation order differs, so equality is up to rounding
        np.testing.assert_allclose(merged.sum_xx, full.sum_xx, rtol=1e-12)

    def test_merge_rejects_mismatched_grids(self):
        a = MomentAccumulator.zeros(small_config(horizon=0.5))
        b = MomentAccumulator.zeros(small_config(horizon=1.0))
        with pytest.raises(ConfigurationError):
            merge(a, b)

    def test_estimate_mean_drift(self):
        cfg = small_config()
        acc = MomentAccumulator.zeros(cfg)
        with pytest.raises(ConfigurationError):
            estimate_mean_drift(acc)
        pos = np.zeros((cfg.n_records, 2))
        bc = np.ones((cfg.n_records, 2))
        acc.add_path(pos, bc)
        # last record is at step n_steps; mean per-step increment is
        # 1 / n_steps per path
        np.testing.assert_allclose(estimate_mean_drift(acc),
                                   np.full(2, 1.0 / cfg.n_steps))


class TestEnsemble:
    def test_serial_and_parallel_identical(self):
        # > CHUNK_SIZE paths so the chunking actually splits work
        cfg = small_config(modes=5, paths=600, horizon=0.1, stride=10)
        serial = run_ensemble(cfg, threads=1)
        parallel = run_ensemble(cfg, threads=3)
        assert serial.count == parallel.count == 600
        np.testing.assert_array_equal(serial.sum_x, parallel.sum_x)
        np.testing.assert_array_equal(serial.sum_xx, parallel.sum_xx)
        np.testing.assert_array_equal(serial.sum_x4, parallel.sum_x4)
        np.testing.assert_array_equal(serial.sum_b, parallel.sum_b)

    def test_worker_count_does_not_matter(self):
        cfg = small_config(modes=5, paths=520, horizon=0.1, stride=10)
        two = run_ensemble(cfg, threads=2)
        five = run_ensemble(cfg, threads=5)
        np.testing.assert_array_equal(two.sum_xx, five.sum_xx)

    def test_abort_on_failures(self):
        # An absurd tolerance with a single allowed iteration fails every
        # implicit solve; the ensemble must abort rather than return junk.
        cfg = small_config(scheme=SchemeConfig(tol=1e-300, max_iterations=1),
                           paths=8)
        with pytest.raises(EnsembleAbortError):
            run_ensemble(cfg)

    def test_pure_diffusion_moments(self):
        # sigma^2 * t variance per component, zero mean; quick version
        # of the full-size acceptance run.
        cfg = small_config(zero_velocity=True, modes=1, sigma=0.5,
                           horizon=1.0, dt=0.01, stride=100, paths=2000,
                           scheme=SchemeConfig(kind="euler"))
        acc = run_ensemble(cfg)
        var = acc.sum_xx[-1, 0, 0] / acc.count
        assert var == pytest.approx(0.25, rel=0.1)
        assert abs(acc.sum_x[-1, 0] / acc.count) < 5 * 0.5 / math.sqrt(2000)
