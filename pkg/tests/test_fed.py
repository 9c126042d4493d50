"""Tests for federated meta-training, aggregation, and fast adaptation."""

import numpy as np
import pytest

from vecsched.dag import DagGenParams
from vecsched.fed import (
    FedConfig,
    PrivacyAuditor,
    ServerUpdate,
    aggregate,
    fast_adapt,
    local_adapt,
    region_distributions,
    seed_for,
    train_federated,
    train_independent,
)
from vecsched.neural.params import init_params, load_params
from vecsched.neural.policy import PolicyConfig, registry_for
from vecsched.rl import PpoConfig
from vecsched.sim import ScenarioDistribution, sample_scenario

CFG = PolicyConfig(
    num_channels=2,
    num_processors=2,
    gat_heads=2,
    gat_head_dim=4,
    max_neighbors=4,
    encoder_hidden=8,
    decoder_hidden=8,
    attention_dim=6,
    action_embed_dim=4,
)
REG = registry_for(CFG)

BASE_DIST = ScenarioDistribution(
    num_vehicles=1,
    num_subchannels=2,
    num_processors=2,
    dag=DagGenParams(n=4),
)

PPO = PpoConfig(inner_epochs=2, minibatch_size=16, episodes_per_scenario=4)


def tiny_fed(rounds=2, servers=2, **kw):
    return FedConfig(
        num_servers=servers,
        scenarios_per_round=1,
        outer_rounds=rounds,
        ppo=PPO,
        server_distributions=region_distributions(BASE_DIST, servers),
        master_seed=11,
        holdout_size=2,
        **kw,
    )


class TestAggregate:
    def test_zero_deltas_leave_theta_unchanged(self):
        theta = init_params(REG, 0)
        zeros = [np.zeros_like(theta) for _ in range(4)]
        assert np.array_equal(aggregate(theta, zeros, 0.7), theta)

    def test_symmetric_deltas_cancel(self):
        theta = init_params(REG, 1)
        d = np.random.default_rng(0).normal(size=theta.shape)
        assert np.array_equal(aggregate(theta, [d, -d], 1.0), theta)

    def test_single_delta_full_rate_adds_exactly(self):
        theta = init_params(REG, 2)
        d = np.random.default_rng(1).normal(size=theta.shape)
        assert np.array_equal(aggregate(theta, [d], 1.0), theta + d)

    def test_linearity_under_fixed_summation_order(self):
        theta = init_params(REG, 3)
        rng = np.random.default_rng(2)
        deltas = [rng.normal(size=theta.shape) for _ in range(3)]
        beta = 0.25
        total = np.zeros_like(theta)
        for d in deltas:  # list order is the documented summation order
            total += d
        assert np.array_equal(aggregate(theta, deltas, beta), theta + beta * (total / 3))

    def test_length_mismatch(self):
        theta = init_params(REG, 0)
        with pytest.raises(ValueError):
            aggregate(theta, [np.zeros(3)], 1.0)


class TestLocalAdapt:
    def scenario(self, seed=0):
        return sample_scenario(BASE_DIST, seed=seed)

    def test_zero_epochs_zero_delta(self):
        theta = init_params(REG, 4)
        ppo = PpoConfig(inner_epochs=0, episodes_per_scenario=2)
        _, delta, _ = local_adapt(theta, self.scenario(), CFG, ppo, seed_for(0, 1))
        assert np.array_equal(delta, np.zeros_like(theta))

    def test_deterministic(self):
        theta = init_params(REG, 5)
        a = local_adapt(theta, self.scenario(1), CFG, PPO, seed_for(3, 1))
        b = local_adapt(theta, self.scenario(1), CFG, PPO, seed_for(3, 1))
        assert np.array_equal(a[1], b[1])

    def test_delta_bounded_by_step_budget(self):
        """Triangle inequality: the net delta cannot exceed the number of SGD
        steps times the learning rate times the largest gradient norm."""
        theta = init_params(REG, 6)
        scn = self.scenario(2)
        trajs_seed = seed_for(4, 1)
        adapted, delta, diag = local_adapt(theta, scn, CFG, PPO, trajs_seed)
        # re-run the same update to recover the report with gradient stats
        from vecsched.rl import compute_gae, ppo_update, rollout
        from vecsched.fed import _child_seed

        base = _child_seed(trajs_seed)
        trajectories = []
        for episode in range(PPO.episodes_per_scenario):
            traj = rollout(
                theta, CFG, scn,
                seed=_child_seed(seed_for(base, 1, episode)),
            )
            compute_gae(traj, PPO.gamma, PPO.gae_lambda)
            trajectories.append(traj)
        adapted2, report = ppo_update(
            theta, trajectories, CFG, PPO, seed=_child_seed(seed_for(base, 2))
        )
        assert np.array_equal(adapted, adapted2)
        bound = report.num_steps * PPO.learning_rate * report.max_grad_norm
        assert np.linalg.norm(delta) <= bound + 1e-12


class TestTrainFederated:
    def test_zero_rounds_returns_initial_theta(self):
        cfg = tiny_fed(rounds=0)
        theta, reports = train_federated(cfg, CFG)
        expected = init_params(REG, _seed0(cfg))
        assert np.array_equal(theta, expected)
        assert reports == []

    def test_deterministic_across_worker_counts(self):
        theta1, reports1 = train_federated(tiny_fed(rounds=2, workers=1), CFG)
        theta2, reports2 = train_federated(tiny_fed(rounds=2, workers=3), CFG)
        assert np.array_equal(theta1, theta2)
        for a, b in zip(reports1, reports2):
            assert a.holdout_aet == b.holdout_aet
            assert a.delta_norms == b.delta_norms

    def test_single_server_round_equals_standalone_adapt(self):
        """K = B = 1 with meta rate 1 adopts the adapted parameters (up to
        one add/subtract rounding)."""
        cfg = tiny_fed(rounds=1, servers=1, meta_lr=1.0)
        theta_out, _ = train_federated(cfg, CFG)

        from vecsched.fed import _child_seed

        theta0 = init_params(REG, _seed0(cfg))
        scn = sample_scenario(
            cfg.server_distributions[0],
            seed=_child_seed(seed_for(cfg.master_seed, 0, 0, 0, 0)),
        )
        adapted, _, _ = local_adapt(
            theta0, scn, CFG, cfg.ppo, seed_for(cfg.master_seed, 0, 0, 0, 1)
        )
        assert np.allclose(theta_out, adapted, rtol=0, atol=1e-12)

    def test_checkpoints_written_and_loadable(self, tmp_path):
        cfg = tiny_fed(rounds=2, checkpoint_every=1)
        theta, _ = train_federated(cfg, CFG, checkpoint_dir=tmp_path)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["checkpoint_round_0000.bin", "checkpoint_round_0001.bin"]
        loaded, extra = load_params(tmp_path / files[-1], REG)
        assert np.array_equal(loaded, theta)
        assert extra["round"] == 1

    def test_privacy_audit_records_and_rejects_bad_payloads(self):
        auditor = PrivacyAuditor()
        cfg = tiny_fed(rounds=1)
        train_federated(cfg, CFG, auditor=auditor)
        assert len(auditor.records) == cfg.num_servers
        with pytest.raises(TypeError):
            auditor(
                ServerUpdate(0, 0, (np.zeros(3),), {"scenario": [1, 2, 3]})  # type: ignore[dict-item]
            )

    def test_independent_trainers_diverge(self):
        cfg = tiny_fed(rounds=1, servers=3)
        thetas, reports = train_independent(cfg, CFG)
        assert len(thetas) == 3 and len(reports) == 3
        assert not np.array_equal(thetas[0], thetas[1])
        assert not np.array_equal(thetas[1], thetas[2])


class TestRegionDistributions:
    def test_cycles_topology_crossings(self):
        dists = region_distributions(BASE_DIST, 5)
        pairs = [(d.dag.density, d.dag.fat) for d in dists]
        assert pairs == [(0.7, 0.4), (0.7, 0.6), (0.9, 0.4), (0.9, 0.6), (0.7, 0.4)]


class TestFastAdapt:
    def test_zero_steps_zero_shot(self):
        theta = init_params(REG, 7)
        scn = sample_scenario(BASE_DIST, seed=9)
        out, curve = fast_adapt(theta, scn, 0, CFG, PPO, seed_for(5))
        assert np.array_equal(out, theta)
        assert len(curve) == 1

    def test_curve_length(self):
        theta = init_params(REG, 8)
        scn = sample_scenario(BASE_DIST, seed=10)
        _, curve = fast_adapt(theta, scn, 3, CFG, PPO, seed_for(6))
        assert len(curve) == 4
        assert all(v > 0 for v in curve)

    def test_deterministic(self):
        theta = init_params(REG, 9)
        scn = sample_scenario(BASE_DIST, seed=11)
        a = fast_adapt(theta, scn, 2, CFG, PPO, seed_for(7))
        b = fast_adapt(theta, scn, 2, CFG, PPO, seed_for(7))
        assert np.array_equal(a[0], b[0])
        assert a[1] == b[1]


def _seed0(cfg):
    from vecsched.fed import _child_seed

    return _child_seed(seed_for(cfg.master_seed, 0))
