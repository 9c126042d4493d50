"""Delay-model evaluation for offloading plans.

A scenario couples per-vehicle DAG tasks with wireless and compute resources:
R orthogonal uplink subchannels, one shared downlink, M edge processors, and
one local processor per vehicle. Every resource is a FIFO server. Given a
placement decision per subtask, the event-driven simulator produces, for each
subtask, the instant its input data is fully available at its execution site
(``ready``), its service start (``start``) and completion (``finish``), plus
per-vehicle task execution times and their mean (AET).

Data movement rules:

* Edge-placed subtask: the vehicle aggregates the subtask's own input with
  the outputs of locally executed parents into a single upload burst, created
  once the last local parent finishes, and queued on the assigned subchannel.
  The subtask is ready when the upload ends and every edge-executed parent
  has finished (edge-to-edge handoff is free).
* Locally placed subtask: each edge-executed parent's output is queued on the
  downlink when the parent finishes; one download per (parent, vehicle) pair
  is shared by all of that parent's local children. The subtask is ready when
  all downloads for its edge parents end and all local parents have finished.
* Computation: a subtask enters its processor's queue at its ready instant.

FIFO ties are broken by (arrival time, vehicle id, topo position), making the
whole simulation a pure, deterministic function of its inputs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .dag import DagGenParams, TaskDag, generate_dag, dag_from_dict, dag_to_dict

__all__ = [
    "Local",
    "Edge",
    "LOCAL",
    "Decision",
    "VehicleSpec",
    "Scenario",
    "ScenarioDistribution",
    "Timeline",
    "AssignmentError",
    "uplink_rate",
    "downlink_rate",
    "compute_duration",
    "simulate",
    "simulate_prefix",
    "aet",
    "sample_scenario",
    "num_actions",
    "action_to_decision",
    "decision_to_action",
    "decision_sites",
    "plan_from_flat",
    "all_local_plan",
]


@dataclass(frozen=True)
class Local:
    """Execute on the vehicle's own processor."""


@dataclass(frozen=True)
class Edge:
    """Offload over uplink subchannel ``channel`` to processor ``processor``.

    Both indices are 1-based, matching the action encoding where 0 is local.
    """

    channel: int
    processor: int


LOCAL = Local()
Decision = Local | Edge


class AssignmentError(ValueError):
    """An offloading plan does not cover the scenario or indexes out of range."""


@dataclass(frozen=True)
class VehicleSpec:
    local_freq: float  # cycles/s
    tx_power: float  # mW
    gain: float  # dimensionless


@dataclass(frozen=True)
class Scenario:
    """One concrete draw of vehicles, channels, processors, and DAG tasks."""

    vehicles: tuple[VehicleSpec, ...]
    uplink_bandwidths: tuple[float, ...]  # Hz, one per subchannel
    downlink_bandwidth: float  # Hz
    mec_tx_power: float  # mW
    processor_freqs: tuple[float, ...]  # cycles/s, one per edge processor
    noise: float  # mW
    dags: tuple[TaskDag, ...]

    @property
    def num_channels(self) -> int:
        return len(self.uplink_bandwidths)

    @property
    def num_processors(self) -> int:
        return len(self.processor_freqs)

    def validate(self) -> None:
        if len(self.vehicles) < 1 or len(self.dags) != len(self.vehicles):
            raise ValueError("scenario needs one DAG per vehicle and at least one vehicle")
        if self.num_channels < 1 or self.num_processors < 1:
            raise ValueError("scenario needs at least one subchannel and one processor")
        positives = [self.downlink_bandwidth, self.mec_tx_power, self.noise]
        positives += list(self.uplink_bandwidths) + list(self.processor_freqs)
        for v in self.vehicles:
            positives += [v.local_freq, v.tx_power, v.gain]
        if any(not (math.isfinite(x) and x > 0.0) for x in positives):
            raise ValueError("all rates, powers, bandwidths, and frequencies must be > 0")


def uplink_rate(scn: Scenario, vehicle: int, channel: int) -> float:
    """Shannon rate of ``vehicle`` on 1-based subchannel ``channel``, bits/s."""
    v = scn.vehicles[vehicle]
    w = scn.uplink_bandwidths[channel - 1]
    return w * math.log2(1.0 + v.tx_power * v.gain / scn.noise)

def downlink_rate(scn: Scenario, vehicle: int) -> float:
    """Shannon rate of the shared downlink toward ``vehicle``, bits/s."""
    v = scn.vehicles[vehicle]
    return scn.downlink_bandwidth * math.log2(1.0 + scn.mec_tx_power * v.gain / scn.noise)

def compute_duration(cycles: float, freq: float) -> float:
    return cycles / freq


# --- action-space encoding -------------------------------------------------
# Action 0 is local execution; action 1 + (r-1)*M + (m-1) is Edge(r, m), so
# actions enumerate (channel, processor) pairs in lexicographic order.

def num_actions(num_channels: int, num_processors: int) -> int:
    return 1 + num_channels * num_processors


def action_to_decision(action: int, num_processors: int) -> Decision:
    if action == 0:
        return LOCAL
    idx = action - 1
    return Edge(1 + idx // num_processors, 1 + idx % num_processors)


def decision_to_action(decision: Decision, num_processors: int) -> int:
    if isinstance(decision, Local):
        return 0
    return 1 + (decision.channel - 1) * num_processors + (decision.processor - 1)


def decision_sites(scn: Scenario) -> list[tuple[int, int]]:
    """(vehicle, node) pairs in global decision order: vehicles ascending,
    each vehicle's subtasks in topo order."""
    return [(v, node) for v, dag in enumerate(scn.dags) for node in dag.topo_order]


def plan_from_flat(scn: Scenario, decisions: Sequence[Decision]) -> tuple[tuple[Decision, ...], ...]:
    """Expand a full flat decision sequence into per-vehicle, node-indexed form."""
    sites = decision_sites(scn)
    if len(decisions) != len(sites):
        raise AssignmentError(
            f"plan covers {len(decisions)} subtasks, scenario has {len(sites)}"
        )
    plan: list[list[Decision]] = [[LOCAL] * len(dag) for dag in scn.dags]
    for (v, node), d in zip(sites, decisions):
        plan[v][node] = d
    return tuple(tuple(p) for p in plan)


def all_local_plan(scn: Scenario) -> tuple[tuple[Decision, ...], ...]:
    return tuple(tuple(LOCAL for _ in dag.nodes) for dag in scn.dags)


@dataclass(frozen=True)
class Timeline:
    """Per-subtask schedule instants plus per-resource service logs.

    ``ready[v][p]`` is when subtask p of vehicle v has all input data at its
    execution site; ``start``/``finish`` bracket its service slot. Undecided
    subtasks (prefix evaluation) carry NaN. ``service_log`` maps a resource
    key to (job label, start, end) triples in service order.
    """

    ready: tuple[tuple[float, ...], ...]
    start: tuple[tuple[float, ...], ...]
    finish: tuple[tuple[float, ...], ...]
    exec_time: tuple[float, ...]
    service_log: dict[str, tuple[tuple[str, float, float], ...]]

    def aet(self) -> float:
        return sum(self.exec_time) / len(self.exec_time)


# --- event-driven engine ----------------------------------------------------

_COMPLETE, _ARRIVE, _DISPATCH = 0, 1, 2


class _Job:
    __slots__ = ("kind", "vehicle", "node", "pos", "resource", "duration", "label")

    def __init__(self, kind, vehicle, node, pos, resource, duration):
        self.kind = kind  # "compute" | "upload" | "download"
        self.vehicle = vehicle
        self.node = node
        self.pos = pos  # topo position used in the FIFO tie-break
        self.resource = resource
        self.duration = duration
        self.label = f"{kind}:v{vehicle}:n{node}"


class _Resource:
    __slots__ = ("busy", "waiting", "log")

    def __init__(self):
        self.busy = False
        self.waiting: list[tuple[float, int, int, int, _Job]] = []
        self.log: list[tuple[str, float, float]] = []


def _simulate_counts(
    scn: Scenario,
    plan: Sequence[Sequence[Decision]],
    counts: Sequence[int],
) -> tuple[Timeline, float]:
    """Run the decided topo-prefix of every vehicle; return the timeline and
    the makespan (max finish over decided subtasks, 0.0 if none)."""
    scn.validate()
    R, M = scn.num_channels, scn.num_processors

    n_veh = len(scn.vehicles)
    pos_of: list[dict[int, int]] = []
    parents_of: list[list[list[int]]] = []
    children_of: list[list[list[int]]] = []
    for dag in scn.dags:
        pos_of.append({node: i for i, node in enumerate(dag.topo_order)})
        par: list[list[int]] = [[] for _ in dag.nodes]
        chi: list[list[int]] = [[] for _ in dag.nodes]
        for p, c in dag.edges:
            par[c].append(p)
            chi[p].append(c)
        parents_of.append(par)
        children_of.append(chi)

    active_list: list[tuple[int, ...]] = []
    active: list[set[int]] = []
    for v, dag in enumerate(scn.dags):
        if not (0 <= counts[v] <= len(dag)):
            raise AssignmentError(f"vehicle {v}: decided count {counts[v]} out of range")
        active_list.append(dag.topo_order[: counts[v]])
        active.append(set(active_list[-1]))

    def decision(v: int, p: int) -> Decision:
        d = plan[v][p]
        if isinstance(d, Edge):
            if not (1 <= d.channel <= R and 1 <= d.processor <= M):
                raise AssignmentError(
                    f"vehicle {v} subtask {p}: Edge({d.channel}, {d.processor}) "
                    f"outside 1..{R} x 1..{M}"
                )
        return d

    resources: dict[tuple, _Resource] = {}
    for v in range(n_veh):
        resources[("local", v)] = _Resource()
    for r in range(1, R + 1):
        resources[("up", r)] = _Resource()
    for m in range(1, M + 1):
        resources[("proc", m)] = _Resource()
    resources[("down",)] = _Resource()

    ready_at = {}      # (v, p) -> running max of input-availability contributions
    ready_need = {}    # (v, p) -> outstanding contributions before compute may arrive
    upload_at = {}     # (v, p) -> running max of upload-burst creation contributions
    upload_need = {}   # (v, p) -> outstanding local parents before the burst exists
    compute_job = {}
    upload_job = {}
    download_job = {}  # (v, parent) -> download shared by the parent's local children

    events: list[tuple[float, int, int]] = []
    payloads: dict[int, tuple] = {}
    seq = 0

    def push(time: float, kind: int, payload: tuple) -> None:
        nonlocal seq
        payloads[seq] = payload
        heapq.heappush(events, (time, kind, seq))
        seq += 1

    for v, dag in enumerate(scn.dags):
        st = dag.submit_time
        vehicle = scn.vehicles[v]
        for p in active_list[v]:
            d = decision(v, p)
            act_parents = [k for k in parents_of[v][p] if k in active[v]]
            local_parents = [k for k in act_parents if isinstance(decision(v, k), Local)]
            ready_need[(v, p)] = len(act_parents)
            if isinstance(d, Local):
                ready_at[(v, p)] = st
                compute_job[(v, p)] = _Job(
                    "compute", v, p, pos_of[v][p], ("local", v),
                    compute_duration(dag.nodes[p].cycles, vehicle.local_freq),
                )
                if ready_need[(v, p)] == 0:
                    push(st, _ARRIVE, (compute_job[(v, p)], st))
            else:
                ready_at[(v, p)] = -math.inf
                ready_need[(v, p)] = 1 + (len(act_parents) - len(local_parents))
                compute_job[(v, p)] = _Job(
                    "compute", v, p, pos_of[v][p], ("proc", d.processor),
                    compute_duration(dag.nodes[p].cycles, scn.processor_freqs[d.processor - 1]),
                )
                payload_bits = dag.nodes[p].own_input_bits + sum(
                    dag.nodes[k].output_bits for k in local_parents
                )
                upload_job[(v, p)] = _Job(
                    "upload", v, p, pos_of[v][p], ("up", d.channel),
                    payload_bits / uplink_rate(scn, v, d.channel),
                )
                upload_at[(v, p)] = st
                upload_need[(v, p)] = len(local_parents)
                if upload_need[(v, p)] == 0:
                    push(st, _ARRIVE, (upload_job[(v, p)], st))
        # one download per edge-executed parent that has local children
        for p in active_list[v]:
            if isinstance(decision(v, p), Edge) and any(
                c in active[v] and isinstance(decision(v, c), Local)
                for c in children_of[v][p]
            ):
                download_job[(v, p)] = _Job(
                    "download", v, p, pos_of[v][p], ("down",),
                    dag.nodes[p].output_bits / downlink_rate(scn, v),
                )

    finish_time: dict[tuple[int, int], float] = {}
    start_time: dict[tuple[int, int], float] = {}

    def feed_ready(v: int, p: int, instant: float) -> None:
        ready_at[(v, p)] = max(ready_at[(v, p)], instant)
        ready_need[(v, p)] -= 1
        if ready_need[(v, p)] == 0:
            push(ready_at[(v, p)], _ARRIVE, (compute_job[(v, p)], ready_at[(v, p)]))

    def feed_upload(v: int, p: int, instant: float) -> None:
        upload_at[(v, p)] = max(upload_at[(v, p)], instant)
        upload_need[(v, p)] -= 1
        if upload_need[(v, p)] == 0:
            push(upload_at[(v, p)], _ARRIVE, (upload_job[(v, p)], upload_at[(v, p)]))

    while events:
        time, kind, s = heapq.heappop(events)
        payload = payloads.pop(s)
        if kind == _ARRIVE:
            job, arrival = payload
            res = resources[job.resource]
            heapq.heappush(res.waiting, (arrival, job.vehicle, job.pos, s, job))
            push(time, _DISPATCH, (job.resource,))
        elif kind == _DISPATCH:
            res = resources[payload[0]]
            if res.busy or not res.waiting:
                continue
            _, _, _, _, job = heapq.heappop(res.waiting)
            res.busy = True
            end = time + job.duration
            res.log.append((job.label, time, end))
            if job.kind == "compute":
                start_time[(job.vehicle, job.node)] = time
            push(end, _COMPLETE, (job,))
        else:  # _COMPLETE
            (job,) = payload
            v, p = job.vehicle, job.node
            resources[job.resource].busy = False
            if job.kind == "compute":
                finish_time[(v, p)] = time
                here_local = isinstance(decision(v, p), Local)
                if not here_local and (v, p) in download_job:
                    push(time, _ARRIVE, (download_job[(v, p)], time))
                for c in children_of[v][p]:
                    if c not in active[v]:
                        continue
                    child_local = isinstance(decision(v, c), Local)
                    if here_local and child_local:
                        feed_ready(v, c, time)
                    elif here_local and not child_local:
                        feed_upload(v, c, time)
                    elif not here_local and not child_local:
                        feed_ready(v, c, time)
                    # edge parent -> local child is fed by the download job
            elif job.kind == "upload":
                feed_ready(v, p, time)
            else:  # download of parent p's output toward vehicle v
                for c in children_of[v][p]:
                    if c in active[v] and isinstance(decision(v, c), Local):
                        feed_ready(v, c, time)
            push(time, _DISPATCH, (job.resource,))

    ready_rows, start_rows, finish_rows, exec_times = [], [], [], []
    makespan = 0.0
    for v, dag in enumerate(scn.dags):
        nan = math.nan
        ready_row = [nan] * len(dag)
        start_row = [nan] * len(dag)
        finish_row = [nan] * len(dag)
        last = -math.inf
        for p in active_list[v]:
            if (v, p) not in finish_time:
                raise RuntimeError(f"subtask {p} of vehicle {v} never completed")
            ready_row[p] = ready_at[(v, p)]
            start_row[p] = start_time[(v, p)]
            finish_row[p] = finish_time[(v, p)]
            last = max(last, finish_time[(v, p)])
        ready_rows.append(tuple(ready_row))
        start_rows.append(tuple(start_row))
        finish_rows.append(tuple(finish_row))
        exec_times.append(last - dag.submit_time if active[v] else 0.0)
        if active[v]:
            makespan = max(makespan, last)

    log = {
        _resource_key(res): tuple(resources[res].log)
        for res in resources
        if resources[res].log
    }
    timeline = Timeline(
        tuple(ready_rows), tuple(start_rows), tuple(finish_rows), tuple(exec_times), log
    )
    return timeline, makespan


def _resource_key(res: tuple) -> str:
    if res[0] == "down":
        return "down"
    return f"{res[0]}:{res[1]}"


def simulate(scn: Scenario, plan: Sequence[Sequence[Decision]]) -> Timeline:
    """Evaluate a complete offloading plan; ``plan[v][p]`` is node-indexed."""
    if len(plan) != len(scn.dags) or any(
        len(plan[v]) != len(dag) for v, dag in enumerate(scn.dags)
    ):
        raise AssignmentError("plan must cover every subtask of every vehicle")
    timeline, _ = _simulate_counts(scn, plan, [len(dag) for dag in scn.dags])
    return timeline


def simulate_prefix(
    scn: Scenario, decisions: Sequence[Decision]
) -> tuple[Timeline, float]:
    """Evaluate the first ``len(decisions)`` subtasks in global decision order.

    Returns the partial timeline and the prefix makespan: the maximum finish
    instant over decided subtasks (0.0 for an empty prefix).
    """
    total = sum(len(dag) for dag in scn.dags)
    if len(decisions) > total:
        raise AssignmentError(f"prefix of {len(decisions)} exceeds {total} subtasks")
    counts = []
    remaining = len(decisions)
    for dag in scn.dags:
        take = min(remaining, len(dag))
        counts.append(take)
        remaining -= take
    plan: list[list[Decision]] = [[LOCAL] * len(dag) for dag in scn.dags]
    it = iter(decisions)
    for v, dag in enumerate(scn.dags):
        for node in dag.topo_order[: counts[v]]:
            plan[v][node] = next(it)
    return _simulate_counts(scn, plan, counts)


def aet(scn: Scenario, plan: Sequence[Sequence[Decision]]) -> float:
    """Mean task execution time over vehicles."""
    return simulate(scn, plan).aet()


# --- scenario sampling -------------------------------------------------------


@dataclass(frozen=True)
class ScenarioDistribution:
    """Uniform ranges for every scenario field, plus the DAG generator knobs."""

    num_vehicles: int = 1
    num_subchannels: int = 4
    num_processors: int = 3
    uplink_bandwidth_hz: tuple[float, float] = (3e6, 6e6)
    downlink_bandwidth_hz: tuple[float, float] = (3e6, 6e6)
    gain: tuple[float, float] = (1.0, 3.0)
    noise_mw: float = 1e-5
    processor_freq: tuple[float, float] = (2e9, 3e9)
    vehicle_freq: tuple[float, float] = (1e9, 2e9)
    vehicle_tx_power_mw: tuple[float, float] = (100.0, 200.0)
    mec_tx_power_mw: tuple[float, float] = (100.0, 200.0)
    dag: DagGenParams = DagGenParams()
    rng_seed: int = 0

    def validate(self) -> None:
        if self.num_vehicles < 1 or self.num_subchannels < 1 or self.num_processors < 1:
            raise ValueError("vehicle, subchannel, and processor counts must be >= 1")
        if not self.noise_mw > 0.0:
            raise ValueError("noise power must be > 0")
        for name in (
            "uplink_bandwidth_hz",
            "downlink_bandwidth_hz",
            "gain",
            "processor_freq",
            "vehicle_freq",
            "vehicle_tx_power_mw",
            "mec_tx_power_mw",
        ):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        self.dag.validate()


def sample_scenario(dist: ScenarioDistribution, seed: int | None = None) -> Scenario:
    """One uniform, seed-deterministic draw of every scenario field."""
    dist.validate()
    rng = np.random.default_rng(dist.rng_seed if seed is None else seed)

    vehicles = tuple(
        VehicleSpec(
            local_freq=float(rng.uniform(*dist.vehicle_freq)),
            tx_power=float(rng.uniform(*dist.vehicle_tx_power_mw)),
            gain=float(rng.uniform(*dist.gain)),
        )
        for _ in range(dist.num_vehicles)
    )
    uplinks = tuple(
        float(rng.uniform(*dist.uplink_bandwidth_hz)) for _ in range(dist.num_subchannels)
    )
    downlink = float(rng.uniform(*dist.downlink_bandwidth_hz))
    mec_power = float(rng.uniform(*dist.mec_tx_power_mw))
    procs = tuple(
        float(rng.uniform(*dist.processor_freq)) for _ in range(dist.num_processors)
    )
    dags = tuple(
        generate_dag(
            replace(dist.dag, rng_seed=int(rng.integers(0, 2**63 - 1))), vehicle_id=v
        )
        for v in range(dist.num_vehicles)
    )
    return Scenario(vehicles, uplinks, downlink, mec_power, procs, dist.noise_mw, dags)


# --- serialization -----------------------------------------------------------


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "vehicles": [
            {"local_freq_hz": v.local_freq, "tx_power_mw": v.tx_power, "gain": v.gain}
            for v in scn.vehicles
        ],
        "uplink_bandwidths_hz": list(scn.uplink_bandwidths),
        "downlink_bandwidth_hz": scn.downlink_bandwidth,
        "mec_tx_power_mw": scn.mec_tx_power,
        "processor_freqs_hz": list(scn.processor_freqs),
        "noise_mw": scn.noise,
        "dags": [dag_to_dict(d) for d in scn.dags],
    }


def scenario_from_dict(data: dict) -> Scenario:
    try:
        scn = Scenario(
            vehicles=tuple(
                VehicleSpec(float(v["local_freq_hz"]), float(v["tx_power_mw"]), float(v["gain"]))
                for v in data["vehicles"]
            ),
            uplink_bandwidths=tuple(float(x) for x in data["uplink_bandwidths_hz"]),
            downlink_bandwidth=float(data["downlink_bandwidth_hz"]),
            mec_tx_power=float(data["mec_tx_power_mw"]),
            processor_freqs=tuple(float(x) for x in data["processor_freqs_hz"]),
            noise=float(data["noise_mw"]),
            dags=tuple(dag_from_dict(d) for d in data["dags"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ValueError(f"malformed scenario document: {err}") from err
    scn.validate()
    return scn


def plan_to_dict(plan: Sequence[Sequence[Decision]]) -> dict:
    rows = []
    for per_vehicle in plan:
        row = []
        for d in per_vehicle:
            if isinstance(d, Local):
                row.append({"kind": "local"})
            else:
                row.append({"kind": "edge", "channel": d.channel, "processor": d.processor})
        rows.append(row)
    return {"plan": rows}


def plan_from_dict(data: dict) -> tuple[tuple[Decision, ...], ...]:
    try:
        plan = []
        for row in data["plan"]:
            decisions = []
            for d in row:
                if d["kind"] == "local":
                    decisions.append(LOCAL)
                elif d["kind"] == "edge":
                    decisions.append(Edge(int(d["channel"]), int(d["processor"])))
                else:
                    raise ValueError(f"unknown decision kind {d['kind']!r}")
            plan.append(tuple(decisions))
        return tuple(plan)
    except (KeyError, TypeError, ValueError) as err:
        raise ValueError(f"malformed assignment document: {err}") from err


def timeline_to_dict(timeline: Timeline) -> dict:
    return {
        "ready": [list(row) for row in timeline.ready],
        "start": [list(row) for row in timeline.start],
        "finish": [list(row) for row in timeline.finish],
        "exec_time": list(timeline.exec_time),
        "aet": timeline.aet(),
        "service_log": {
            key: [{"job": label, "start": s, "end": e} for label, s, e in entries]
            for key, entries in sorted(timeline.service_log.items())
        },
    }
