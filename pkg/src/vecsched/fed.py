"""Federated first-order meta-training and fast adaptation.

K simulated servers each sample scenarios from their own region-specific
distribution, adapt a copy of the meta-parameters with PPO, and upload only
the parameter deltas. The aggregator adds ``meta_lr`` times the mean delta
(uniform over all K*B deltas, summed in server-then-scenario order so the
arithmetic is exactly reproducible). Raw scenarios and trajectories never
cross the server boundary: workers return ``ServerUpdate`` messages holding
nothing but the round index, the delta vectors, and scalar diagnostics, and
an audit hook verifies and fingerprints each message.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .neural.params import ParameterRegistry, init_params, save_params
from .neural.policy import PolicyConfig, registry_for
from .rl import PpoConfig, compute_gae, evaluate_policy, ppo_update, rollout
from .sim import Scenario, ScenarioDistribution, sample_scenario

# the four (density, fat) crossings used for region heterogeneity defaults
REGION_TOPOLOGIES = ((0.7, 0.4), (0.7, 0.6), (0.9, 0.4), (0.9, 0.6))


@dataclass(frozen=True)
class FedConfig:
    num_servers: int = 3  # K
    scenarios_per_round: int = 1  # B
    outer_rounds: int = 20
    meta_lr: float = 1.0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    server_distributions: tuple[ScenarioDistribution, ...] = ()
    master_seed: int = 0
    holdout_size: int = 8
    checkpoint_every: int = 0  # rounds between checkpoints; 0 disables
    workers: int = 1

    def validate(self) -> None:
        if self.num_servers < 1 or self.scenarios_per_round < 1:
            raise ValueError("num_servers and scenarios_per_round must be >= 1")
        if not (0.0 < self.meta_lr <= 1.0):
            raise ValueError(f"meta_lr must be in (0, 1], got {self.meta_lr}")
        if self.outer_rounds < 0 or self.holdout_size < 1 or self.workers < 1:
            raise ValueError("outer_rounds >= 0, holdout_size >= 1, workers >= 1")
        if len(self.server_distributions) != self.num_servers:
            raise ValueError(
                f"{self.num_servers} servers need {self.num_servers} distributions, "
                f"got {len(self.server_distributions)}"
            )
        for dist in self.server_distributions:
            dist.validate()
        self.ppo.validate()


def region_distributions(
    base: ScenarioDistribution, num_servers: int
) -> tuple[ScenarioDistribution, ...]:
    """Per-server distributions differing in DAG (density, fat), cycling
    through the four topology crossings."""
    out = []
    for k in range(num_servers):
        density, fat = REGION_TOPOLOGIES[k % len(REGION_TOPOLOGIES)]
        out.append(replace(base, dag=replace(base.dag, density=density, fat=fat)))
    return tuple(out)


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    delta_norms: tuple[float, ...]  # mean delta norm per server
    holdout_aet: float
    holdout_ci: float
    actor_loss: float
    critic_loss: float
    kl: float
    entropy: float
    wall_time_s: float


@dataclass(frozen=True)
class ServerUpdate:
    """The only message a server may upload: deltas and scalar diagnostics."""

    round_index: int
    server_index: int
    deltas: tuple[np.ndarray, ...]
    diagnostics: dict[str, float]


class PrivacyAuditor:
    """Checks that uploaded messages carry nothing beyond deltas and scalars,
    and fingerprints every payload."""

    def __init__(self):
        self.records: list[tuple[int, int, str]] = []

    def __call__(self, update: ServerUpdate) -> ServerUpdate:
        if not all(isinstance(d, np.ndarray) and d.dtype == np.float64 for d in update.deltas):
            raise TypeError("server update deltas must be float64 vectors")
        bad = [k for k, v in update.diagnostics.items() if not isinstance(v, float)]
        if bad:
            raise TypeError(f"server diagnostics must be scalar floats, got {bad}")
        digest = hashlib.sha256()
        for d in update.deltas:
            digest.update(d.tobytes())
        self.records.append((update.round_index, update.server_index, digest.hexdigest()))
        return update


def seed_for(master_seed: int, *path: int) -> np.random.SeedSequence:
    """Deterministic per-(round, server, scenario, stream) seed derivation,
    independent of worker scheduling."""
    return np.random.SeedSequence(entropy=(int(master_seed), *map(int, path)))


def _child_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def local_adapt(
    theta_meta: np.ndarray,
    scenario: Scenario,
    policy_cfg: PolicyConfig,
    ppo: PpoConfig,
    seed_seq: np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray, dict[str, float]]:
    """One scenario's inner-loop adaptation: collect episodes from the meta
    initialization, run the PPO epochs, return (adapted, delta, diagnostics).
    Trajectories stay inside this function."""
    trajectories = []
    for episode in range(ppo.episodes_per_scenario):
        traj = rollout(
            theta_meta, policy_cfg, scenario,
            seed=_child_seed(seed_for(_child_seed(seed_seq), 1, episode)),
        )
        compute_gae(traj, ppo.gamma, ppo.gae_lambda)
        trajectories.append(traj)
    adapted, report = ppo_update(
        theta_meta, trajectories, policy_cfg, ppo,
        seed=_child_seed(seed_for(_child_seed(seed_seq), 2)),
    )
    delta = adapted - theta_meta
    diagnostics = {
        "actor_loss": report.actor_loss,
        "critic_loss": report.critic_loss,
        "kl": report.kl,
        "entropy": report.entropy,
        "delta_norm": float(np.linalg.norm(delta)),
    }
    return adapted, delta, diagnostics


def aggregate(
    theta_meta: np.ndarray, deltas: list[np.ndarray], meta_lr: float
) -> np.ndarray:
    """theta + meta_lr * mean(deltas), summed in list order."""
    if not deltas:
        raise ValueError("aggregate needs at least one delta")
    for d in deltas:
        if d.shape != theta_meta.shape:
            raise ValueError("delta length does not match the parameter vector")
    total = np.zeros_like(theta_meta)
    for d in deltas:
        total += d
    return theta_meta + meta_lr * (total / len(deltas))


def _server_round(args):
    (theta, cfg, policy_cfg, k, round_index) = args
    deltas = []
    diag_acc: dict[str, float] = {}
    for i in range(cfg.scenarios_per_round):
        scn_seed = _child_seed(seed_for(cfg.master_seed, round_index, k, i, 0))
        scenario = sample_scenario(cfg.server_distributions[k], seed=scn_seed)
        _, delta, diag = local_adapt(
            theta, scenario, policy_cfg, cfg.ppo,
            seed_for(cfg.master_seed, round_index, k, i, 1),
        )
        deltas.append(delta)
        for key, value in diag.items():
            diag_acc[key] = diag_acc.get(key, 0.0) + value / cfg.scenarios_per_round
    return ServerUpdate(round_index, k, tuple(deltas), diag_acc)


def train_federated(
    cfg: FedConfig,
    policy_cfg: PolicyConfig,
    *,
    theta0: np.ndarray | None = None,
    round_hook=None,
    checkpoint_dir=None,
    auditor: PrivacyAuditor | None = None,
) -> tuple[np.ndarray, list[RoundReport]]:
    """The full outer/inner double loop, deterministic for a given config
    regardless of ``cfg.workers``.

    ``round_hook(report)`` fires after each round's aggregation + held-out
    evaluation; checkpoints go to ``checkpoint_dir`` every
    ``checkpoint_every`` rounds when both are set.
    """
    cfg.validate()
    registry = registry_for(policy_cfg)
    auditor = auditor or PrivacyAuditor()
    theta = (
        np.array(theta0, dtype=np.float64)
        if theta0 is not None
        else init_params(registry, _child_seed(seed_for(cfg.master_seed, 0)))
    )

    holdout = [
        sample_scenario(
            cfg.server_distributions[i % cfg.num_servers],
            seed=_child_seed(seed_for(cfg.master_seed, 1, i)),
        )
        for i in range(cfg.holdout_size)
    ]

    reports: list[RoundReport] = []
    for round_index in range(cfg.outer_rounds):
        start = time.perf_counter()
        tasks = [(theta, cfg, policy_cfg, k, round_index) for k in range(cfg.num_servers)]
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                updates = list(pool.map(_server_round, tasks))
        else:
            updates = [_server_round(t) for t in tasks]
        updates = [auditor(u) for u in updates]

        deltas = [d for u in updates for d in u.deltas]  # server-major order
        theta = aggregate(theta, deltas, cfg.meta_lr)

        holdout_aet, holdout_ci, _ = evaluate_policy(theta, policy_cfg, holdout)
        report = RoundReport(
            round_index=round_index,
            delta_norms=tuple(u.diagnostics["delta_norm"] for u in updates),
            holdout_aet=holdout_aet,
            holdout_ci=holdout_ci,
            actor_loss=float(np.mean([u.diagnostics["actor_loss"] for u in updates])),
            critic_loss=float(np.mean([u.diagnostics["critic_loss"] for u in updates])),
            kl=float(np.mean([u.diagnostics["kl"] for u in updates])),
            entropy=float(np.mean([u.diagnostics["entropy"] for u in updates])),
            wall_time_s=time.perf_counter() - start,
        )
        reports.append(report)
        if round_hook is not None:
            round_hook(report)
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every > 0
            and (round_index + 1) % cfg.checkpoint_every == 0
        ):
            save_params(
                f"{checkpoint_dir}/checkpoint_round_{round_index:04d}.bin",
                theta,
                registry,
                extra={"round": round_index, "master_seed": cfg.master_seed},
            )
    return theta, reports


def train_independent(
    cfg: FedConfig,
    policy_cfg: PolicyConfig,
    *,
    round_hook=None,
) -> tuple[list[np.ndarray], list[list[RoundReport]]]:
    """Federation ablation: K isolated PPO trainers, no aggregation. Each
    server's parameters persist across rounds; reports mirror the federated
    ones with per-server held-out evaluation."""
    cfg.validate()
    registry = registry_for(policy_cfg)
    thetas = [
        init_params(registry, _child_seed(seed_for(cfg.master_seed, 0)))
        for _ in range(cfg.num_servers)
    ]
    holdouts = [
        [
            sample_scenario(
                cfg.server_distributions[k],
                seed=_child_seed(seed_for(cfg.master_seed, 1, k, i)),
            )
            for i in range(cfg.holdout_size)
        ]
        for k in range(cfg.num_servers)
    ]
    all_reports: list[list[RoundReport]] = [[] for _ in range(cfg.num_servers)]
    for round_index in range(cfg.outer_rounds):
        for k in range(cfg.num_servers):
            start = time.perf_counter()
            update = _server_round((thetas[k], cfg, policy_cfg, k, round_index))
            thetas[k] = aggregate(thetas[k], list(update.deltas), 1.0)
            aet, ci, _ = evaluate_policy(thetas[k], policy_cfg, holdouts[k])
            report = RoundReport(
                round_index=round_index,
                delta_norms=(update.diagnostics["delta_norm"],),
                holdout_aet=aet,
                holdout_ci=ci,
                actor_loss=update.diagnostics["actor_loss"],
                critic_loss=update.diagnostics["critic_loss"],
                kl=update.diagnostics["kl"],
                entropy=update.diagnostics["entropy"],
                wall_time_s=time.perf_counter() - start,
            )
            all_reports[k].append(report)
            if round_hook is not None:
                round_hook(k, report)
    return thetas, all_reports


def fast_adapt(
    theta_meta: np.ndarray,
    scenario: Scenario,
    steps: int,
    policy_cfg: PolicyConfig,
    ppo: PpoConfig,
    seed_seq: np.random.SeedSequence,
    eval_scenarios: list[Scenario] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """A few PPO update cycles specializing the policy to one new scenario.

    Each step collects fresh episodes and runs one PPO update; the returned
    curve holds the greedy-evaluation AET before any update and after each
    step (length ``steps + 1``). Evaluation defaults to the adaptation
    scenario itself.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    eval_set = eval_scenarios if eval_scenarios is not None else [scenario]
    theta = np.array(theta_meta, dtype=np.float64)
    curve = [evaluate_policy(theta, policy_cfg, eval_set)[0]]
    for step in range(steps):
        theta, _, _ = local_adapt(
            theta, scenario, policy_cfg, ppo, seed_for(_child_seed(seed_seq), step)
        )
        curve.append(evaluate_policy(theta, policy_cfg, eval_set)[0])
    return theta, curve
