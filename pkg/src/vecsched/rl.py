"""Episode rollouts, generalized advantage estimation, and the PPO update.

An episode walks one scenario's subtasks in global decision order (vehicles
ascending, each in topo order). Per vehicle the encoder runs once; each
decoder step samples a placement, extends the decided prefix, and receives
the negated makespan increment as reward, so the undiscounted return telescopes
to minus the episode's final makespan (single-vehicle: minus the task's
execution time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import autodiff as ad
from .neural.autodiff import Tape, Tensor
from .neural.params import ParameterRegistry
from .neural.policy import (
    PolicyConfig,
    build_states,
    decode_step,
    encode_episode,
    initial_decoder_state,
    registry_for,
    value_head,
)
from .sim import Scenario, action_to_decision, decision_sites, plan_from_flat, simulate, simulate_prefix


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    kl_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    inner_epochs: int = 4  # optimization passes over one collected batch
    learning_rate: float = 1e-3
    minibatch_size: int = 64  # in decision steps; episodes are grouped whole
    episodes_per_scenario: int = 8

    def validate(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError(f"clip_eps must be in (0, 1), got {self.clip_eps}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        # inner_epochs 0 is allowed: adaptation becomes a no-op (zero delta)
        if self.inner_epochs < 0 or self.learning_rate <= 0.0:
            raise ValueError("inner_epochs must be >= 0 and learning_rate > 0")
        if self.minibatch_size < 1 or self.episodes_per_scenario < 1:
            raise ValueError("minibatch_size and episodes_per_scenario must be >= 1")


@dataclass
class Trajectory:
    """One episode: per-step actions, behavior log-probs, rewards, values."""

    scenario: Scenario
    actions: np.ndarray  # int action indices, one per decision step
    log_probs: np.ndarray  # under the behavior policy at collection time
    rewards: np.ndarray  # negated makespan increments, seconds
    values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)


def rollout(
    flat_params: np.ndarray,
    cfg: PolicyConfig,
    scn: Scenario,
    seed: int | None = None,
    greedy: bool = False,
) -> Trajectory:
    """Sample (or argmax) one episode over every subtask of the scenario."""
    registry = registry_for(cfg)
    rng = np.random.default_rng(seed)
    with ad.no_recording():
        blocks = registry.tensors(flat_params)
        actions: list[int] = []
        log_probs: list[float] = []
        values: list[float] = []
        rewards: list[float] = []
        decided = []
        prev_makespan = 0.0
        for vehicle, dag in enumerate(scn.dags):
            states = build_states(cfg, scn, vehicle)
            encoded = encode_episode(cfg, blocks, dag, states)
            hidden = initial_decoder_state(cfg)
            prev_action = cfg.start_token
            for _ in dag.topo_order:
                logits, hidden, _ = decode_step(cfg, blocks, hidden, encoded, prev_action)
                log_p = ad.log_softmax(logits).value
                if greedy:
                    action = int(np.argmax(log_p))
                else:
                    action = int(np.searchsorted(np.cumsum(np.exp(log_p)), rng.random()))
                    action = min(action, cfg.num_actions - 1)
                values.append(value_head(blocks, hidden).item())
                log_probs.append(float(log_p[action]))
                actions.append(action)
                decided.append(action_to_decision(action, cfg.num_processors))
                _, makespan = simulate_prefix(scn, decided)
                rewards.append(-(makespan - prev_makespan))
                prev_makespan = makespan
                prev_action = action
    return Trajectory(
        scenario=scn,
        actions=np.array(actions, dtype=np.int64),
        log_probs=np.array(log_probs),
        rewards=np.array(rewards),
        values=np.array(values),
    )


def final_plan(traj: Trajectory, cfg: PolicyConfig):
    """The complete offloading plan an episode's actions encode."""
    return plan_from_flat(
        traj.scenario,
        [action_to_decision(int(a), cfg.num_processors) for a in traj.actions],
    )


def compute_gae(traj: Trajectory, gamma: float, lam: float) -> Trajectory:
    """delta_t = r_t + gamma V_{t+1} - V_t (terminal bootstrap 0);
    advantage = sum_l (gamma lam)^l delta_{t+l}; return = advantage + V_t."""
    n = len(traj)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        next_value = traj.values[t + 1] if t + 1 < n else 0.0
        delta = traj.rewards[t] + gamma * next_value - traj.values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    traj.advantages = adv
    traj.returns = adv + traj.values
    return traj


@dataclass
class UpdateReport:
    actor_loss: float
    critic_loss: float
    kl: float
    entropy: float
    max_grad_norm: float = 0.0
    num_steps: int = 0  # SGD steps taken (minibatches x epochs)


def ppo_update(
    flat_params: np.ndarray,
    trajectories: list[Trajectory],
    cfg: PolicyConfig,
    ppo: PpoConfig,
    seed: int | None = None,
) -> tuple[np.ndarray, UpdateReport]:
    """Clipped-surrogate policy update plus squared-error value update.

    Advantages are normalized once over the whole batch; episodes are then
    shuffled per epoch and grouped into minibatches of at least
    ``minibatch_size`` decision steps. One plain SGD step per minibatch on
    actor loss + critic loss.
    """
    ppo.validate()
    if not trajectories:
        raise ValueError("ppo_update needs a nonempty batch of trajectories")
    if any(t.advantages is None or t.returns is None for t in trajectories):
        raise ValueError("run compute_gae on every trajectory before ppo_update")
    registry = registry_for(cfg)
    params = np.array(flat_params, dtype=np.float64)
    rng = np.random.default_rng(seed)

    all_adv = np.concatenate([t.advantages for t in trajectories])
    mean, std = all_adv.mean(), all_adv.std()
    normalized: list[np.ndarray] = []
    for t in trajectories:
        if std > 1e-12:
            normalized.append((t.advantages - mean) / std)
        else:
            normalized.append(t.advantages - mean)

    stats = {"actor": [], "critic": [], "kl": [], "entropy": [], "grad_norm": []}
    if ppo.inner_epochs == 0:
        return params, UpdateReport(0.0, 0.0, 0.0, 0.0)
    for _ in range(ppo.inner_epochs):
        order = rng.permutation(len(trajectories))
        batch: list[int] = []
        steps = 0
        groups: list[list[int]] = []
        for idx in order:
            batch.append(int(idx))
            steps += len(trajectories[idx])
            if steps >= ppo.minibatch_size:
                groups.append(batch)
                batch, steps = [], 0
        if batch:
            groups.append(batch)
        for group in groups:
            params = _minibatch_step(
                params, [trajectories[i] for i in group],
                [normalized[i] for i in group], registry, cfg, ppo, stats,
            )
    report = UpdateReport(
        actor_loss=float(np.mean(stats["actor"])),
        critic_loss=float(np.mean(stats["critic"])),
        kl=float(np.mean(stats["kl"])),
        entropy=float(np.mean(stats["entropy"])),
        max_grad_norm=float(np.max(stats["grad_norm"])),
        num_steps=len(stats["grad_norm"]),
    )
    return params, report


def _minibatch_step(params, trajs, advantages, registry, cfg, ppo, stats):
    blocks = registry.tensors(params)
    new_log_probs: list[Tensor] = []
    new_values: list[Tensor] = []
    entropies: list[float] = []
    with Tape() as tape:
        for traj in trajs:
            scn = traj.scenario
            step = 0
            for vehicle, dag in enumerate(scn.dags):
                states = build_states(cfg, scn, vehicle)
                encoded = encode_episode(cfg, blocks, dag, states)
                hidden = initial_decoder_state(cfg)
                prev_action = cfg.start_token
                for _ in dag.topo_order:
                    action = int(traj.actions[step])
                    logits, hidden, _ = decode_step(cfg, blocks, hidden, encoded, prev_action)
                    log_dist = ad.log_softmax(logits)
                    new_log_probs.append(ad.index(log_dist, action))
                    new_values.append(value_head(blocks, hidden))
                    p = np.exp(log_dist.value)
                    entropies.append(float(-(p * log_dist.value).sum()))
                    prev_action = action
                    step += 1

        old_log = np.concatenate([t.log_probs for t in trajs])
        adv = np.concatenate(advantages)
        returns = np.concatenate([t.returns for t in trajs])

        log_probs = ad.stack(new_log_probs)
        ratio = ad.exp(ad.sub(log_probs, Tensor(old_log)))
        surrogate = ad.minimum(
            ad.mul(ratio, Tensor(adv)),
            ad.mul(ad.clip(ratio, 1.0 - ppo.clip_eps, 1.0 + ppo.clip_eps), Tensor(adv)),
        )
        kl = ad.mean(ad.sub(Tensor(old_log), log_probs))
        actor_loss = ad.add(
            ad.mul(ad.mean(surrogate), Tensor(-1.0)), ad.mul(kl, Tensor(ppo.kl_coef))
        )
        value_err = ad.sub(ad.stack(new_values), Tensor(returns))
        critic_loss = ad.mean(ad.mul(value_err, value_err))
        loss = ad.add(actor_loss, critic_loss)

    tape.gradient(loss, list(blocks.values()))
    grad = registry.flatten_grads(blocks)
    stats["actor"].append(actor_loss.item())
    stats["critic"].append(critic_loss.item())
    stats["kl"].append(kl.item())
    stats["entropy"].append(float(np.mean(entropies)))
    stats["grad_norm"].append(float(np.linalg.norm(grad)))
    return params - ppo.learning_rate * grad


def evaluate_policy(
    flat_params: np.ndarray,
    cfg: PolicyConfig,
    scenarios: list[Scenario],
) -> tuple[float, float, list[float]]:
    """Greedy-rollout AET per scenario; returns (mean, 95% CI half-width,
    per-scenario values). Greedy decoding is deterministic, so one episode
    per scenario suffices."""
    if not scenarios:
        raise ValueError("evaluate_policy needs at least one scenario")
    per_scenario = []
    for scn in scenarios:
        traj = rollout(flat_params, cfg, scn, greedy=True)
        per_scenario.append(simulate(scn, final_plan(traj, cfg)).aet())
    values = np.array(per_scenario)
    if len(values) == 1:
        return float(values[0]), 0.0, per_scenario
    ci = 1.96 * float(values.std(ddof=1)) / float(np.sqrt(len(values)))
    return float(values.mean()), ci, per_scenario
