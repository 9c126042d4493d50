"""Non-learning baselines and the exact enumeration oracle.

All schedulers address the same objective the learned policy trains on:
minimize the mean task execution time (AET) subject to one placement per
subtask. The greedy baseline evaluates true prefix makespans through the
simulator instead of analytic finish-time estimates because queue coupling
across vehicles breaks the independence assumptions those estimates need.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .sim import (
    LOCAL,
    Decision,
    Scenario,
    action_to_decision,
    aet,
    decision_sites,
    num_actions,
    plan_from_flat,
    simulate_prefix,
)

DEFAULT_ENUMERATION_CAP = 10**6

SCHEDULER_KINDS = ("all-local", "all-edge-rr", "random", "greedy-eft", "exhaustive")


class CapExceededError(RuntimeError):
    """Exhaustive enumeration would exceed the configured assignment cap."""


def schedule(
    scn: Scenario,
    kind: str,
    *,
    seed: int = 0,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> tuple[tuple[Decision, ...], ...]:
    """Run one of the named schedulers and return a full offloading plan."""
    if kind == "all-local":
        return all_local(scn)
    if kind == "all-edge-rr":
        return all_edge_round_robin(scn)
    if kind == "random":
        return random_plan(scn, seed)
    if kind == "greedy-eft":
        return greedy_eft(scn)
    if kind == "exhaustive":
        return exhaustive(scn, cap=cap)
    raise ValueError(f"unknown scheduler kind {kind!r}; choose from {SCHEDULER_KINDS}")


def all_local(scn: Scenario) -> tuple[tuple[Decision, ...], ...]:
    return plan_from_flat(scn, [LOCAL] * len(decision_sites(scn)))


def all_edge_round_robin(scn: Scenario) -> tuple[tuple[Decision, ...], ...]:
    """Cycle the (channel, processor) pairs in lexicographic order across the
    global decision order."""
    R, M = scn.num_channels, scn.num_processors
    pairs = num_actions(R, M) - 1
    flat = [
        action_to_decision(1 + i % pairs, M) for i in range(len(decision_sites(scn)))
    ]
    return plan_from_flat(scn, flat)


def random_plan(scn: Scenario, seed: int) -> tuple[tuple[Decision, ...], ...]:
    rng = np.random.default_rng(seed)
    actions = num_actions(scn.num_channels, scn.num_processors)
    flat = [
        action_to_decision(int(rng.integers(actions)), scn.num_processors)
        for _ in decision_sites(scn)
    ]
    return plan_from_flat(scn, flat)


def greedy_eft(scn: Scenario) -> tuple[tuple[Decision, ...], ...]:
    """Walk subtasks in decision order, keeping the action whose extended
    prefix has the smallest makespan; ties go to the lowest action index
    (local first, then (channel, processor) lexicographic)."""
    actions = num_actions(scn.num_channels, scn.num_processors)
    flat: list[Decision] = []
    for _ in decision_sites(scn):
        best_action, best_makespan = None, None
        for a in range(actions):
            candidate = action_to_decision(a, scn.num_processors)
            _, makespan = simulate_prefix(scn, flat + [candidate])
            if best_makespan is None or makespan < best_makespan:
                best_action, best_makespan = candidate, makespan
        flat.append(best_action)
    return plan_from_flat(scn, flat)


def exhaustive(
    scn: Scenario, cap: int = DEFAULT_ENUMERATION_CAP
) -> tuple[tuple[Decision, ...], ...]:
    """Enumerate every assignment and return the AET-minimal one; ties go to
    the lexicographically smallest action tuple."""
    sites = decision_sites(scn)
    actions = num_actions(scn.num_channels, scn.num_processors)
    total = actions ** len(sites)
    if total > cap:
        raise CapExceededError(
            f"{actions}^{len(sites)} = {total} assignments exceed the cap {cap}"
        )
    best_plan, best_aet = None, None
    for combo in itertools.product(range(actions), repeat=len(sites)):
        plan = plan_from_flat(
            scn, [action_to_decision(a, scn.num_processors) for a in combo]
        )
        value = aet(scn, plan)
        if best_aet is None or value < best_aet:
            best_plan, best_aet = plan, value
    return best_plan


def oracle_gap(
    scn: Scenario,
    plan: Sequence[Sequence[Decision]],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """AET of ``plan`` relative to the exhaustive optimum (>= 1.0)."""
    return aet(scn, plan) / aet(scn, exhaustive(scn, cap=cap))
