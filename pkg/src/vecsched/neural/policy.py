"""GAT + seq2seq offloading policy.

Per decision episode the network sees one vehicle's DAG: each subtask gets a
normalized feature vector (topo position, own input size, cycles, vehicle
frequency, all processor frequencies, all subchannel bandwidths). A multi-head
graph attention layer aggregates features over parents + children + self;
the embeddings, concatenated with fixed-length parent/child position lists,
run through a bidirectional GRU encoder. An attentional GRU decoder then emits
one action distribution per subtask over {local} + {(channel, processor)};
a linear critic head reads the same decoder state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dag import BITS_PER_KB, TaskDag
from ..sim import Scenario
from . import autodiff as ad
from .autodiff import Tensor
from .params import BlockSpec, ParameterRegistry

# feature normalizers: the maxima of the default parameter ranges, so default
# draws land in (0, ~1]; unnormalized magnitudes (1e6..1e9) wreck conditioning
NORM_SIZE_BITS = 400.0 * BITS_PER_KB
NORM_CYCLES = 6e7
NORM_VEHICLE_FREQ = 2e9
NORM_PROC_FREQ = 3e9
NORM_BANDWIDTH = 6e6

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class PolicyConfig:
    num_channels: int
    num_processors: int
    gat_heads: int = 4
    gat_head_dim: int = 8
    max_neighbors: int = 6  # parent/child position list length, padded with -1
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    attention_dim: int = 64
    action_embed_dim: int = 8
    use_gat: bool = True  # False: attention collapses to the self neighborhood

    @property
    def feature_dim(self) -> int:
        return 4 + self.num_processors + self.num_channels

    @property
    def num_actions(self) -> int:
        return 1 + self.num_channels * self.num_processors

    @property
    def start_token(self) -> int:
        return self.num_actions

    @property
    def embed_dim(self) -> int:
        return self.gat_heads * self.gat_head_dim

    @property
    def aggregate_dim(self) -> int:
        return self.embed_dim + 2 * self.max_neighbors

    @property
    def context_dim(self) -> int:
        return 2 * self.encoder_hidden


@dataclass(frozen=True)
class SubtaskState:
    """Per-subtask policy input, in topo-sequence space."""

    features: np.ndarray  # length 4 + M + R
    parent_positions: np.ndarray  # int positions, length max_neighbors, pad -1
    child_positions: np.ndarray


def registry_for(cfg: PolicyConfig) -> ParameterRegistry:
    blocks: list[BlockSpec] = []
    for k in range(cfg.gat_heads):
        blocks.append(BlockSpec(f"gat{k}_w", (cfg.gat_head_dim, cfg.feature_dim)))
        blocks.append(BlockSpec(f"gat{k}_a", (2 * cfg.gat_head_dim,)))
    for prefix, in_dim, hidden in (
        ("enc_fwd", cfg.aggregate_dim, cfg.encoder_hidden),
        ("enc_bwd", cfg.aggregate_dim, cfg.encoder_hidden),
        ("dec", cfg.context_dim + cfg.action_embed_dim, cfg.decoder_hidden),
    ):
        for gate in ("z", "r", "h"):
            blocks.append(BlockSpec(f"{prefix}_w{gate}", (hidden, in_dim)))
            blocks.append(BlockSpec(f"{prefix}_u{gate}", (hidden, hidden)))
            blocks.append(BlockSpec(f"{prefix}_b{gate}", (hidden,), init="zero"))
    blocks.append(BlockSpec("attn_q", (cfg.attention_dim, cfg.decoder_hidden)))
    blocks.append(BlockSpec("attn_k", (cfg.attention_dim, cfg.context_dim)))
    blocks.append(BlockSpec("attn_v", (cfg.attention_dim,)))
    blocks.append(BlockSpec("action_embed", (cfg.num_actions + 1, cfg.action_embed_dim)))
    blocks.append(BlockSpec("actor_w", (cfg.num_actions, cfg.decoder_hidden)))
    blocks.append(BlockSpec("actor_b", (cfg.num_actions,), init="zero"))
    blocks.append(BlockSpec("critic_w", (cfg.decoder_hidden,)))
    blocks.append(BlockSpec("critic_b", (1,), init="zero"))
    return ParameterRegistry(blocks)


def build_states(cfg: PolicyConfig, scn: Scenario, vehicle: int) -> list[SubtaskState]:
    """States for one vehicle's subtasks, listed in topo order."""
    dag = scn.dags[vehicle]
    if scn.num_channels != cfg.num_channels or scn.num_processors != cfg.num_processors:
        raise ValueError(
            f"scenario has R={scn.num_channels}, M={scn.num_processors}; policy was "
            f"configured for R={cfg.num_channels}, M={cfg.num_processors}"
        )
    n = len(dag)
    pos_of = {node: i for i, node in enumerate(dag.topo_order)}
    parent_map: list[list[int]] = [[] for _ in range(n)]
    child_map: list[list[int]] = [[] for _ in range(n)]
    for a, b in dag.edges:
        parent_map[b].append(a)
        child_map[a].append(b)

    proc = [f / NORM_PROC_FREQ for f in scn.processor_freqs]
    bw = [w / NORM_BANDWIDTH for w in scn.uplink_bandwidths]
    states = []
    for i, node in enumerate(dag.topo_order):
        spec = dag.nodes[node]
        features = np.array(
            [
                i / n,
                spec.own_input_bits / NORM_SIZE_BITS,
                spec.cycles / NORM_CYCLES,
                scn.vehicles[vehicle].local_freq / NORM_VEHICLE_FREQ,
                *proc,
                *bw,
            ],
            dtype=np.float64,
        )
        states.append(
            SubtaskState(
                features=features,
                parent_positions=_position_list(parent_map[node], pos_of, cfg.max_neighbors),
                child_positions=_position_list(child_map[node], pos_of, cfg.max_neighbors),
            )
        )
    return states


def _position_list(nodes: list[int], pos_of: dict[int, int], length: int) -> np.ndarray:
    positions = sorted(pos_of[x] for x in nodes)[:length]
    out = np.full(length, -1, dtype=np.int64)
    out[: len(positions)] = positions
    return out


def gat_encode(
    cfg: PolicyConfig, blocks: dict[str, Tensor], dag: TaskDag, states: list[SubtaskState]
) -> list[Tensor]:
    """Multi-head attention aggregation over parents + children + self.

    Per head: scores leakyrelu(a^T [W f_i || W f_j]) softmax-normalized over
    the neighborhood, ELU on the weighted sum, heads concatenated. The graph
    is the full symmetrized DAG adjacency; with ``use_gat`` off every node
    only attends to itself, projecting its own features.
    """
    n = len(states)
    features = [Tensor(s.features) for s in states]
    if cfg.use_gat:
        pos_of = {node: i for i, node in enumerate(dag.topo_order)}
        nbr_sets: list[set[int]] = [{i} for i in range(n)]
        for a, b in dag.edges:
            nbr_sets[pos_of[a]].add(pos_of[b])
            nbr_sets[pos_of[b]].add(pos_of[a])
        neighborhoods = [sorted(nbrs) for nbrs in nbr_sets]
    else:
        neighborhoods = [[i] for i in range(n)]

    per_head_outputs: list[list[Tensor]] = []
    for k in range(cfg.gat_heads):
        w, a = blocks[f"gat{k}_w"], blocks[f"gat{k}_a"]
        projected = [ad.matvec(w, f) for f in features]
        head_out: list[Tensor] = []
        for i in range(n):
            nbrs = neighborhoods[i]
            scores = ad.stack(
                [
                    ad.leaky_relu(
                        ad.dot(a, ad.concat([projected[i], projected[j]])), LEAKY_SLOPE
                    )
                    for j in nbrs
                ]
            )
            att = ad.softmax(scores)
            agg = None
            for idx, j in enumerate(nbrs):
                term = ad.mul(ad.index(att, idx), projected[j])
                agg = term if agg is None else ad.add(agg, term)
            head_out.append(ad.elu(agg))
        per_head_outputs.append(head_out)
    return [
        ad.concat([per_head_outputs[k][i] for k in range(cfg.gat_heads)])
        for i in range(n)
    ]


def aggregate(
    cfg: PolicyConfig, embedding: Tensor, state: SubtaskState, n: int
) -> Tensor:
    """Embedding concatenated with position lists normalized by n (pads -1)."""
    def normalized(positions: np.ndarray) -> np.ndarray:
        return np.where(positions >= 0, positions / n, -1.0)

    return ad.concat(
        [
            embedding,
            Tensor(normalized(state.parent_positions)),
            Tensor(normalized(state.child_positions)),
        ]
    )


def gru_cell(
    blocks: dict[str, Tensor], prefix: str, x: Tensor, h: Tensor
) -> Tensor:
    z = ad.sigmoid(
        ad.add(
            ad.add(ad.matvec(blocks[f"{prefix}_wz"], x), ad.matvec(blocks[f"{prefix}_uz"], h)),
            blocks[f"{prefix}_bz"],
        )
    )
    r = ad.sigmoid(
        ad.add(
            ad.add(ad.matvec(blocks[f"{prefix}_wr"], x), ad.matvec(blocks[f"{prefix}_ur"], h)),
            blocks[f"{prefix}_br"],
        )
    )
    candidate = ad.tanh(
        ad.add(
            ad.add(
                ad.matvec(blocks[f"{prefix}_wh"], x),
                ad.matvec(blocks[f"{prefix}_uh"], ad.mul(r, h)),
            ),
            blocks[f"{prefix}_bh"],
        )
    )
    one_minus_z = ad.add(ad.mul(z, Tensor(-1.0)), Tensor(np.ones_like(z.value)))
    return ad.add(ad.mul(one_minus_z, h), ad.mul(z, candidate))


def encode_sequence(
    cfg: PolicyConfig, blocks: dict[str, Tensor], inputs: list[Tensor]
) -> list[Tensor]:
    """BiGRU over the topo-ordered sequence; zero initial hidden states."""
    if not inputs:
        raise ValueError("encoder needs a nonempty sequence")
    h = Tensor(np.zeros(cfg.encoder_hidden))
    forward: list[Tensor] = []
    for x in inputs:
        h = gru_cell(blocks, "enc_fwd", x, h)
        forward.append(h)
    h = Tensor(np.zeros(cfg.encoder_hidden))
    backward: list[Tensor] = [None] * len(inputs)
    for i in range(len(inputs) - 1, -1, -1):
        h = gru_cell(blocks, "enc_bwd", inputs[i], h)
        backward[i] = h
    return [ad.concat([f, b]) for f, b in zip(forward, backward)]


def initial_decoder_state(cfg: PolicyConfig) -> Tensor:
    return Tensor(np.zeros(cfg.decoder_hidden))


def decode_step(
    cfg: PolicyConfig,
    blocks: dict[str, Tensor],
    prev_hidden: Tensor,
    encoder_states: list[Tensor],
    prev_action: int,
) -> tuple[Tensor, Tensor, Tensor]:
    """One additive-attention GRU decoder step.

    Returns (action logits, new hidden state, context vector). ``prev_action``
    is the previously emitted action index, or the start token for step 1.
    """
    if not (0 <= prev_action <= cfg.start_token):
        raise IndexError(
            f"action {prev_action} outside 0..{cfg.start_token} (incl. start token)"
        )
    query = ad.matvec(blocks["attn_q"], prev_hidden)
    scores = ad.stack(
        [
            ad.dot(blocks["attn_v"], ad.tanh(ad.add(query, ad.matvec(blocks["attn_k"], e))))
            for e in encoder_states
        ]
    )
    weights = ad.softmax(scores)
    context = None
    for i, e in enumerate(encoder_states):
        term = ad.mul(ad.index(weights, i), e)
        context = term if context is None else ad.add(context, term)
    embedded = ad.take_row(blocks["action_embed"], prev_action)
    hidden = gru_cell(blocks, "dec", ad.concat([context, embedded]), prev_hidden)
    logits = ad.add(ad.matvec(blocks["actor_w"], hidden), blocks["actor_b"])
    return logits, hidden, context


def value_head(blocks: dict[str, Tensor], hidden: Tensor) -> Tensor:
    return ad.add(ad.dot(blocks["critic_w"], hidden), ad.index(blocks["critic_b"], 0))


def encode_episode(
    cfg: PolicyConfig, blocks: dict[str, Tensor], dag: TaskDag, states: list[SubtaskState]
) -> list[Tensor]:
    """GAT aggregation + position concatenation + BiGRU for one DAG."""
    n = len(states)
    embeddings = gat_encode(cfg, blocks, dag, states)
    aggregated = [aggregate(cfg, emb, s, n) for emb, s in zip(embeddings, states)]
    return encode_sequence(cfg, blocks, aggregated)
