"""Task DAG model: subtask triplets, precedence edges, validation, and a
layered random generator.

Units used throughout the package: data sizes in bits (1 KB = 8000 bits),
computation in CPU cycles, time in seconds, frequencies in cycles/s.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

BITS_PER_KB = 8000.0

DEFAULT_SIZE_RANGE_BITS = (200.0 * BITS_PER_KB, 400.0 * BITS_PER_KB)
DEFAULT_CYCLE_RANGE = (5e7, 6e7)

# Midpoint-parameter reference system used to calibrate the generator's
# communication/computation balance: uplink rate at 4.5 MHz bandwidth,
# 150 mW tx power, gain 2, noise 1e-5 mW; processor frequency 2.5 GHz.
REF_UPLINK_RATE = 4.5e6 * math.log2(1.0 + 150.0 * 2.0 / 1e-5)
REF_PROC_FREQ = 2.5e9


class CycleError(ValueError):
    """Raised when a precedence graph contains a directed cycle."""

    def __init__(self, node: int):
        super().__init__(f"precedence graph has a cycle through node {node}")
        self.node = node


@dataclass(frozen=True)
class SubtaskSpec:
    """One offloadable unit: its own input payload, CPU demand, and output."""

    own_input_bits: float
    cycles: float
    output_bits: float


@dataclass(frozen=True)
class TaskDag:
    """A vehicle's application as a DAG of subtasks.

    ``edges`` are (parent, child) index pairs, sorted lexicographically.
    ``topo_order`` lists node indices so that every parent precedes every
    child; it is the deterministic Kahn order (ties by ascending index).
    """

    vehicle_id: int
    nodes: tuple[SubtaskSpec, ...]
    edges: tuple[tuple[int, int], ...]
    topo_order: tuple[int, ...]
    submit_time: float = 0.0

    @classmethod
    def build(
        cls,
        vehicle_id: int,
        nodes: Sequence[SubtaskSpec],
        edges: Iterable[tuple[int, int]],
        submit_time: float = 0.0,
    ) -> "TaskDag":
        """Construct a DAG, computing the canonical topological order."""
        nodes = tuple(nodes)
        edge_tuple = tuple(sorted((int(p), int(c)) for p, c in edges))
        order = _kahn_order(len(nodes), edge_tuple)
        return cls(vehicle_id, nodes, edge_tuple, tuple(order), float(submit_time))

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class DagGenParams:
    """Knobs of the layered random DAG generator."""

    n: int = 20
    density: float = 0.8
    fat: float = 0.5
    ccr: float = 0.5
    size_range_bits: tuple[float, float] = DEFAULT_SIZE_RANGE_BITS
    cycle_range: tuple[float, float] = DEFAULT_CYCLE_RANGE
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (0.0 < self.density <= 1.0):
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if not (0.0 < self.fat <= 1.0):
            raise ValueError(f"fat must be in (0, 1], got {self.fat}")
        if not self.ccr > 0.0:
            raise ValueError(f"ccr must be > 0, got {self.ccr}")
        for name, (lo, hi) in (
            ("size_range_bits", self.size_range_bits),
            ("cycle_range", self.cycle_range),
        ):
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class DagViolation:
    """A named invariant violation; carried as data, not raised."""

    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


def validate_dag(dag: TaskDag) -> DagViolation | None:
    """Return None when every invariant holds, else the first violation."""
    n = len(dag.nodes)
    if n < 1:
        return DagViolation("empty", "DAG must contain at least one node")
    for i, node in enumerate(dag.nodes):
        for name, value in (
            ("own_input_bits", node.own_input_bits),
            ("cycles", node.cycles),
            ("output_bits", node.output_bits),
        ):
            if not (math.isfinite(value) and value > 0.0):
                return DagViolation(
                    "bad-node", f"node {i} field {name} must be finite and > 0, got {value}"
                )
    seen: set[tuple[int, int]] = set()
    for p, c in dag.edges:
        if p == c:
            return DagViolation("self-edge", f"edge ({p}, {c}) loops on node {p}")
        if not (0 <= p < n and 0 <= c < n):
            return DagViolation("edge-out-of-range", f"edge ({p}, {c}) outside 0..{n - 1}")
        if (p, c) in seen:
            return DagViolation("duplicate-edge", f"edge ({p}, {c}) appears twice")
        seen.add((p, c))
    try:
        _kahn_order(n, dag.edges)
    except CycleError as err:
        return DagViolation("cycle", str(err))
    if sorted(dag.topo_order) != list(range(n)):
        return DagViolation("bad-topo-order", "topo_order is not a permutation of node indices")
    position = {node: i for i, node in enumerate(dag.topo_order)}
    for p, c in dag.edges:
        if position[p] >= position[c]:
            return DagViolation(
                "topo-order-violates-edge", f"parent {p} does not precede child {c}"
            )
    return None


def topo_sort(dag: TaskDag) -> list[int]:
    """Deterministic Kahn order; ties broken by ascending node index."""
    return _kahn_order(len(dag.nodes), dag.edges)


def _kahn_order(n: int, edges: Sequence[tuple[int, int]]) -> list[int]:
    indegree = [0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for p, c in edges:
        if not (0 <= p < n and 0 <= c < n):
            raise IndexError(f"edge ({p}, {c}) outside 0..{n - 1}")
        indegree[c] += 1
        children[p].append(c)
    ready = [i for i in range(n) if indegree[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for c in children[node]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(ready, c)
    if len(order) < n:
        # every remaining node has an unfinished parent; walking parent links
        # among the remainder must revisit a node, which sits on a cycle
        remaining = {i for i in range(n) if indegree[i] > 0}
        parents_of = {c: p for p, c in edges if p in remaining and c in remaining}
        node = min(remaining)
        seen = set()
        while node not in seen:
            seen.add(node)
            node = parents_of[node]
        raise CycleError(node)
    return order


def parents(dag: TaskDag, node: int) -> list[int]:
    """Direct predecessors of ``node``, ascending."""
    _check_node(dag, node)
    return sorted(p for p, c in dag.edges if c == node)


def children(dag: TaskDag, node: int) -> list[int]:
    """Direct successors of ``node``, ascending."""
    _check_node(dag, node)
    return sorted(c for p, c in dag.edges if p == node)


def total_input_bits(dag: TaskDag, node: int) -> float:
    """A subtask's own input plus the outputs of all its parents."""
    _check_node(dag, node)
    return dag.nodes[node].own_input_bits + sum(
        dag.nodes[p].output_bits for p in parents(dag, node)
    )


def _check_node(dag: TaskDag, node: int) -> None:
    if not (0 <= node < len(dag.nodes)):
        raise IndexError(f"node {node} outside 0..{len(dag.nodes) - 1}")


def generate_dag(
    params: DagGenParams,
    vehicle_id: int = 0,
    submit_time: float = 0.0,
    ref_uplink_rate: float = REF_UPLINK_RATE,
    ref_proc_freq: float = REF_PROC_FREQ,
) -> TaskDag:
    """Layered random DAG, fully determined by ``params.rng_seed``.

    Construction:
      (a) mean level width ``max(1, round(fat * sqrt(n)))`` (round half up);
          successive level widths drawn uniformly from
          ``{max(1, ceil(w/2)), ..., ceil(3w/2)}`` until n nodes are placed,
          the last level truncated;
      (b) each (previous-level node, current node) pair becomes an edge
          independently with probability ``density``; a node left parentless
          gets one edge from a uniformly chosen previous-level node;
      (c) own-input and raw output sizes uniform over ``size_range_bits``,
          cycles uniform over ``cycle_range``;
      (d) every output size is rescaled by one common factor so that the mean
          output transfer time over ``ref_uplink_rate`` divided by the mean
          compute time over ``ref_proc_freq`` equals ``ccr`` exactly.
    """
    params.validate()
    n = params.n
    rng = np.random.default_rng(params.rng_seed)

    mean_width = max(1, math.floor(params.fat * math.sqrt(n) + 0.5))
    lo_w = max(1, math.ceil(mean_width / 2))
    hi_w = math.ceil(3 * mean_width / 2)
    levels: list[list[int]] = []
    placed = 0
    while placed < n:
        width = min(int(rng.integers(lo_w, hi_w + 1)), n - placed)
        levels.append(list(range(placed, placed + width)))
        placed += width

    edges: list[tuple[int, int]] = []
    for lvl in range(1, len(levels)):
        above = levels[lvl - 1]
        for child in levels[lvl]:
            got_parent = False
            for parent in above:
                if rng.random() < params.density:
                    edges.append((parent, child))
                    got_parent = True
            if not got_parent:
                edges.append((above[int(rng.integers(len(above)))], child))

    lo_s, hi_s = params.size_range_bits
    lo_c, hi_c = params.cycle_range
    own_input = rng.uniform(lo_s, hi_s, size=n)
    output = rng.uniform(lo_s, hi_s, size=n)
    cycles = rng.uniform(lo_c, hi_c, size=n)

    mean_compute = float(np.mean(cycles)) / ref_proc_freq
    mean_transfer = float(np.mean(output)) / ref_uplink_rate
    output = output * (params.ccr * mean_compute / mean_transfer)

    nodes = tuple(
        SubtaskSpec(float(own_input[i]), float(cycles[i]), float(output[i])) for i in range(n)
    )
    return TaskDag.build(vehicle_id, nodes, edges, submit_time)


def dag_to_dict(dag: TaskDag) -> dict:
    return {
        "vehicle_id": dag.vehicle_id,
        "nodes": [
            {"d_L_bits": s.own_input_bits, "cycles": s.cycles, "d_O_bits": s.output_bits}
            for s in dag.nodes
        ],
        "edges": [[p, c] for p, c in sorted(dag.edges)],
        "submit_time": dag.submit_time,
    }


def dag_from_dict(data: dict) -> TaskDag:
    try:
        nodes = [
            SubtaskSpec(float(d["d_L_bits"]), float(d["cycles"]), float(d["d_O_bits"]))
            for d in data["nodes"]
        ]
        edges = [(int(p), int(c)) for p, c in data["edges"]]
        return TaskDag.build(
            int(data["vehicle_id"]), nodes, edges, float(data.get("submit_time", 0.0))
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ValueError(f"malformed DAG document: {err}") from err
