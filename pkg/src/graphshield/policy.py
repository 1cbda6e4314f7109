"""Defender policies: the relational message-passing model and the flat
baseline.

The relational model embeds every node by repeated neighborhood max
aggregation with residual updates, and keeps a separate graph embedding
grown each round from an attention readout over all nodes:

    h_v        <- h_v + update(h_v, max over neighbors of msg(h_u) [, g])
    g          <- g + update(g, sum_v softmax_v(att(h_v)) * feat(h_v))

Each inner transform is a single dense layer with tanh. The action factor-
izes as pick-a-node times pick-a-command. The "local" variant scores nodes
from their embeddings and conditions the command on the chosen node; the
"global" variant picks the command from the graph embedding first and then
scores nodes conditioned on that command. The critic is a linear read of
the graph embedding. Because every piece is shared across nodes and sizes
itself off the graph at hand, one trained model runs on any topology.

The baseline is a two-hidden-layer tanh network over the flat bit vector
with a flat action head, locked to the width it was built for.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import LinearParams, ParamSet, Tensor, init_linear, linear
from .errors import AllMasked, InputWidthMismatch, ShapeMismatch
from .observation import BITS_PER_HOST, ObsGraph
from .simulator import COMMAND_SET

N_COMMANDS = len(COMMAND_SET)
MASK_BIAS = -1e30


class RepVariant(str, Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class MpnnConfig:
    layers: int = 3
    embedding: int = 128
    variant: RepVariant = RepVariant.LOCAL

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("at least one message-passing round")
        if self.embedding < 1:
            raise ValueError("embedding width must be positive")


def init_mpnn_params(cfg: MpnnConfig, seed: int = 0) -> ParamSet:
    """Fresh parameters; one set of transforms shared by every round."""
    rng = np.random.default_rng(seed)
    e = cfg.embedding
    agg_in = 3 * e if cfg.variant is RepVariant.GLOBAL else 2 * e
    entries = {
        "phi_in": init_linear(rng, BITS_PER_HOST, e),
        "phi_msg": init_linear(rng, e, e),
        "phi_agg": init_linear(rng, agg_in, e),
        "phi_att": init_linear(rng, e, e),
        "phi_feat": init_linear(rng, e, e),
        "phi_glb": init_linear(rng, 2 * e, e),
    }
    if cfg.variant is RepVariant.LOCAL:
        entries["psi_node"] = init_linear(rng, e, 1)
        entries["psi_cmd"] = init_linear(rng, e, N_COMMANDS)
    else:
        entries["psi_cmd_global"] = init_linear(rng, e, N_COMMANDS)
        entries["psi_node_global"] = init_linear(rng, e + N_COMMANDS, 1)
    entries["psi_val"] = init_linear(rng, e, 1)
    return ParamSet(entries)


# -- graph batching ------------------------------------------------------


@dataclass
class GraphBatch:
    """Several observation graphs packed as one disjoint union.

    Nodes are laid out graph by graph, so node_graph is sorted and the
    segmented reductions run contiguously. Edges are directed (both ways
    per undirected edge) and sorted by destination.
    """

    features: np.ndarray  # (total_nodes, 4)
    edge_src: np.ndarray  # (total_edges,)
    edge_dst: np.ndarray  # (total_edges,) non-decreasing
    node_graph: np.ndarray  # (total_nodes,) graph id per node, non-decreasing
    offsets: np.ndarray  # (n_graphs + 1,)
    mask: np.ndarray  # (total_nodes,) bool
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    def with_features(self, features: np.ndarray) -> "GraphBatch":
        if features.shape != self.features.shape:
            raise ShapeMismatch(
                f"features {features.shape} vs batch layout {self.features.shape}"
            )
        return GraphBatch(
            features=features,
            edge_src=self.edge_src,
            edge_dst=self.edge_dst,
            node_graph=self.node_graph,
            offsets=self.offsets,
            mask=self.mask,
            n_graphs=self.n_graphs,
        )


def build_batch(graphs: list) -> GraphBatch:
    sizes = [g.n_nodes for g in graphs]
    offsets = np.zeros(len(graphs) + 1, dtype=np.intp)
    offsets[1:] = np.cumsum(sizes)
    features = np.concatenate([g.node_features for g in graphs], axis=0)
    mask = np.concatenate([g.action_mask for g in graphs], axis=0)
    node_graph = np.repeat(np.arange(len(graphs), dtype=np.intp), sizes)
    srcs: list = []
    dsts: list = []
    for k, g in enumerate(graphs):
        if not g.action_mask.any():
            raise AllMasked(f"graph {k} has no actionable node")
        base = offsets[k]
        for i, j in g.edges:
            srcs.extend((base + i, base + j))
            dsts.extend((base + j, base + i))
    edge_src = np.asarray(srcs, dtype=np.intp)
    edge_dst = np.asarray(dsts, dtype=np.intp)
    order = np.argsort(edge_dst, kind="stable")
    return GraphBatch(
        features=features,
        edge_src=edge_src[order],
        edge_dst=edge_dst[order],
        node_graph=node_graph,
        offsets=offsets,
        mask=mask,
        n_graphs=len(graphs),
    )


def replicate_batch(obs: ObsGraph, copies: int) -> GraphBatch:
    """Batch layout for many copies of one graph; features filled later."""
    if not obs.action_mask.any():
        raise AllMasked("graph has no actionable node")
    n = obs.n_nodes
    pairs = np.asarray(obs.edges, dtype=np.intp).reshape(-1, 2)
    src1 = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst1 = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.argsort(dst1, kind="stable")
    src1, dst1 = src1[order], dst1[order]
    shift = (np.arange(copies, dtype=np.intp) * n)[:, None]
    edge_src = (src1[None, :] + shift).ravel()
    edge_dst = (dst1[None, :] + shift).ravel()
    offsets = np.arange(copies + 1, dtype=np.intp) * n
    return GraphBatch(
        features=np.tile(obs.node_features, (copies, 1)),
        edge_src=edge_src,
        edge_dst=edge_dst,
        node_graph=np.repeat(np.arange(copies, dtype=np.intp), n),
        offsets=offsets,
        mask=np.tile(obs.action_mask, copies),
        n_graphs=copies,
    )


# -- log-softmax helpers -------------------------------------------------


def _masked_segment_log_softmax(
    scores: Tensor, seg_ids: np.ndarray, n_segments: int, mask: np.ndarray
) -> Tensor:
    """Per-segment log softmax over rows, with masked rows forced to
    probability exactly zero. Works columnwise for multi-column scores."""
    bias = np.where(mask, 0.0, MASK_BIAS)[:, None]
    shifted = ad.add(scores, Tensor(bias))
    # Constant shift for stability; its gradient contribution is exactly
    # zero, so detaching it keeps gradients intact.
    seg_max = ad.segment_max_values(shifted.data, seg_ids, n_segments, fill=-np.inf)
    shift = Tensor(seg_max[seg_ids])
    z = ad.exp(ad.sub(shifted, shift))
    denom = ad.segment_sum(z, seg_ids, n_segments)
    log_denom = ad.log(denom)
    return ad.sub(ad.sub(shifted, shift), ad.gather_rows(log_denom, seg_ids))


def _row_log_softmax(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    x = scores
    if mask is not None:
        x = ad.add(x, Tensor(np.where(mask, 0.0, MASK_BIAS)))
    shift = Tensor(x.data.max(axis=1, keepdims=True))
    z = ad.exp(ad.sub(x, shift))
    denom = ad.tsum(z, axis=1, keepdims=True)
    return ad.sub(ad.sub(x, shift), ad.log(denom))


# -- forward pass --------------------------------------------------------


def mpnn_forward_batch(
    params: ParamSet, cfg: MpnnConfig, batch: GraphBatch
) -> tuple[Tensor, Tensor]:
    """Run the message-passing rounds; returns node and graph embeddings."""
    h = ad.tanh(linear(Tensor(batch.features), params["phi_in"]))
    g = Tensor(np.zeros((batch.n_graphs, cfg.embedding)))
    use_global = cfg.variant is RepVariant.GLOBAL
    graph_sizes = np.diff(batch.offsets)
    uniform = graph_sizes.size and (graph_sizes == graph_sizes[0]).all()
    period = int(graph_sizes[0]) if uniform else None
    for _ in range(cfg.layers):
        msgs = ad.tanh(linear(h, params["phi_msg"]))
        if batch.edge_src.size:
            incoming = ad.gather_rows(msgs, batch.edge_src)
            pooled = ad.row_max_pool(incoming, batch.edge_dst, batch.n_nodes, period)
        else:
            pooled = Tensor(np.zeros_like(h.data))
        parts = [h, pooled]
        if use_global:
            parts.append(ad.gather_rows(g, batch.node_graph))
        h = ad.add(h, ad.tanh(linear(ad.concat(parts, axis=1), params["phi_agg"])))
        att = ad.tanh(linear(h, params["phi_att"]))
        weights = _segment_softmax(att, batch.node_graph, batch.n_graphs)
        feats = ad.tanh(linear(h, params["phi_feat"]))
        readout = ad.segment_sum(ad.mul(weights, feats), batch.node_graph, batch.n_graphs)
        g = ad.add(
            g, ad.tanh(linear(ad.concat([g, readout], axis=1), params["phi_glb"]))
        )
    return h, g


def _segment_softmax(scores: Tensor, seg_ids: np.ndarray, n_segments: int) -> Tensor:
    seg_max = ad.segment_max_values(scores.data, seg_ids, n_segments, fill=-np.inf)
    shift = Tensor(seg_max[seg_ids])
    z = ad.exp(ad.sub(scores, shift))
    denom = ad.segment_sum(z, seg_ids, n_segments)
    return ad.div(z, ad.gather_rows(denom, seg_ids))


# -- policy heads --------------------------------------------------------


@dataclass
class PolicyOutput:
    """Log-probabilities for a batch of graphs, still differentiable.

    Local variant: node_log_probs is (nodes, 1) and cmd_log_probs is
    (nodes, n_commands), the command conditioned on each node. Global
    variant: cmd_log_probs is (graphs, n_commands) and
    node_log_probs_by_cmd is (nodes, n_commands), the node conditioned on
    each command. Masked nodes carry probability exactly zero.
    """

    variant: RepVariant
    batch: GraphBatch
    cmd_log_probs: Tensor
    value: Tensor  # (graphs, 1)
    node_log_probs: Tensor | None = None
    node_log_probs_by_cmd: Tensor | None = None


def policy_output_batch(
    params: ParamSet, cfg: MpnnConfig, batch: GraphBatch
) -> PolicyOutput:
    h, g = mpnn_forward_batch(params, cfg, batch)
    val = linear(g, params["psi_val"])
    if cfg.variant is RepVariant.LOCAL:
        node_scores = linear(h, params["psi_node"])
        node_lp = _masked_segment_log_softmax(
            node_scores, batch.node_graph, batch.n_graphs, batch.mask
        )
        cmd_lp = _row_log_softmax(linear(h, params["psi_cmd"]))
        return PolicyOutput(
            variant=cfg.variant,
            batch=batch,
            cmd_log_probs=cmd_lp,
            value=val,
            node_log_probs=node_lp,
        )
    cmd_lp = _row_log_softmax(linear(g, params["psi_cmd_global"]))
    eye = np.eye(N_COMMANDS)
    cols = []
    for c in range(N_COMMANDS):
        onehot = Tensor(np.tile(eye[c], (batch.n_nodes, 1)))
        cols.append(linear(ad.concat([h, onehot], axis=1), params["psi_node_global"]))
    node_scores = ad.concat(cols, axis=1)
    node_lp_by_cmd = _masked_segment_log_softmax(
        node_scores, batch.node_graph, batch.n_graphs, batch.mask
    )
    return PolicyOutput(
        variant=cfg.variant,
        batch=batch,
        cmd_log_probs=cmd_lp,
        value=val,
        node_log_probs_by_cmd=node_lp_by_cmd,
    )


@dataclass(frozen=True)
class AgentAction:
    """A factorized pick: node row within its graph, command index.

    node is -1 when the command needs no node (global-variant Sleep).
    """

    node: int
    command: int


def sample_actions(
    output: PolicyOutput, rng: np.random.Generator, greedy: bool = False
) -> tuple[list, np.ndarray]:
    """Draw one action per graph; returns actions and their joint log-probs."""
    batch = output.batch
    actions: list[AgentAction] = []
    logps = np.zeros(batch.n_graphs)
    for b in range(batch.n_graphs):
        lo, hi = int(batch.offsets[b]), int(batch.offsets[b + 1])
        if output.variant is RepVariant.LOCAL:
            nlp = output.node_log_probs.data[lo:hi, 0]
            p = np.exp(nlp)
            p /= p.sum()
            v = int(np.argmax(p)) if greedy else int(rng.choice(p.size, p=p))
            clp = output.cmd_log_probs.data[lo + v]
            pc = np.exp(clp)
            pc /= pc.sum()
            c = int(np.argmax(pc)) if greedy else int(rng.choice(N_COMMANDS, p=pc))
            actions.append(AgentAction(node=v, command=c))
            logps[b] = nlp[v] + clp[c]
        else:
            clp = output.cmd_log_probs.data[b]
            pc = np.exp(clp)
            pc /= pc.sum()
            c = int(np.argmax(pc)) if greedy else int(rng.choice(N_COMMANDS, p=pc))
            if c == 0:
                actions.append(AgentAction(node=-1, command=0))
                logps[b] = clp[0]
            else:
                nlp = output.node_log_probs_by_cmd.data[lo:hi, c]
                p = np.exp(nlp)
                p /= p.sum()
                v = int(np.argmax(p)) if greedy else int(rng.choice(p.size, p=p))
                actions.append(AgentAction(node=v, command=c))
                logps[b] = clp[c] + nlp[v]
    return actions, logps


def joint_log_prob(output: PolicyOutput, actions: list) -> Tensor:
    """Differentiable joint log-probability of one action per graph, (B, 1)."""
    batch = output.batch
    nodes = np.asarray([a.node for a in actions], dtype=np.intp)
    cmds = np.asarray([a.command for a in actions], dtype=np.intp)
    onehot = np.zeros((batch.n_graphs, N_COMMANDS))
    onehot[np.arange(batch.n_graphs), cmds] = 1.0
    if output.variant is RepVariant.LOCAL:
        rows = batch.offsets[:-1] + nodes
        node_term = ad.gather_rows(output.node_log_probs, rows)
        cmd_rows = ad.gather_rows(output.cmd_log_probs, rows)
        cmd_term = ad.tsum(ad.mul(cmd_rows, Tensor(onehot)), axis=1, keepdims=True)
        return ad.add(node_term, cmd_term)
    cmd_term = ad.tsum(
        ad.mul(output.cmd_log_probs, Tensor(onehot)), axis=1, keepdims=True
    )
    # Sleep has no node factor: gather a safe row and zero its contribution.
    has_node = (cmds != 0).astype(np.float64)[:, None]
    rows = batch.offsets[:-1] + np.maximum(nodes, 0)
    node_rows = ad.gather_rows(output.node_log_probs_by_cmd, rows)
    node_pick = ad.tsum(ad.mul(node_rows, Tensor(onehot)), axis=1, keepdims=True)
    return ad.add(cmd_term, ad.mul(node_pick, Tensor(has_node)))


def entropy(output: PolicyOutput) -> Tensor:
    """Differentiable entropy of the joint distribution per graph, (B, 1).

    Chain rule for the factorization: entropy of the first factor plus the
    expected entropy of the second. Masked rows contribute exactly zero.
    """
    batch = output.batch
    if output.variant is RepVariant.LOCAL:
        nlp = output.node_log_probs
        p1 = ad.exp(nlp)
        h1 = ad.neg(
            ad.segment_sum(ad.mul(p1, nlp), batch.node_graph, batch.n_graphs)
        )
        clp = output.cmd_log_probs
        p2 = ad.exp(clp)
        h2 = ad.neg(ad.tsum(ad.mul(p2, clp), axis=1, keepdims=True))
        mixed = ad.segment_sum(ad.mul(p1, h2), batch.node_graph, batch.n_graphs)
        return ad.add(h1, mixed)
    clp = output.cmd_log_probs
    pc = ad.exp(clp)
    hc = ad.neg(ad.tsum(ad.mul(pc, clp), axis=1, keepdims=True))
    nlp = output.node_log_probs_by_cmd
    pn = ad.exp(nlp)
    h_node = ad.neg(
        ad.segment_sum(ad.mul(pn, nlp), batch.node_graph, batch.n_graphs)
    )  # (B, n_commands), entropy of the node pick per command
    no_sleep = np.ones((1, N_COMMANDS))
    no_sleep[0, 0] = 0.0
    mixed = ad.tsum(
        ad.mul(ad.mul(pc, h_node), Tensor(no_sleep)), axis=1, keepdims=True
    )
    return ad.add(hc, mixed)


# -- single-graph convenience surface ------------------------------------


def forward_mpnn(
    params: ParamSet, cfg: MpnnConfig, obs: ObsGraph
) -> tuple[Tensor, Tensor]:
    """Embeddings for one graph: nodes (n, e) and graph (1, e)."""
    return mpnn_forward_batch(params, cfg, build_batch([obs]))


def policy_local(
    params: ParamSet, h: Tensor, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Node distribution and per-node command logits for one graph."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllMasked("no actionable node")
    ids = np.zeros(h.shape[0], dtype=np.intp)
    node_lp = _masked_segment_log_softmax(linear(h, params["psi_node"]), ids, 1, mask)
    cmd_logits = linear(h, params["psi_cmd"])
    return np.exp(node_lp.data[:, 0]), cmd_logits.data.copy()


def policy_global(
    params: ParamSet, h: Tensor, g: Tensor, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Command distribution and node distribution per command for one graph."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllMasked("no actionable node")
    cmd_lp = _row_log_softmax(linear(g, params["psi_cmd_global"]))
    eye = np.eye(N_COMMANDS)
    cols = []
    for c in range(N_COMMANDS):
        onehot = Tensor(np.tile(eye[c], (h.shape[0], 1)))
        cols.append(linear(ad.concat([h, onehot], axis=1), params["psi_node_global"]))
    ids = np.zeros(h.shape[0], dtype=np.intp)
    node_lp = _masked_segment_log_softmax(ad.concat(cols, axis=1), ids, 1, mask)
    return np.exp(cmd_lp.data[0]), np.exp(node_lp.data)


def value(params: ParamSet, g: Tensor) -> float:
    return float(linear(g, params["psi_val"]).data[0, 0])


# -- flat baseline -------------------------------------------------------


@dataclass(frozen=True)
class MlpConfig:
    input_width: int
    n_actions: int
    hidden: int = 256
    n_layers: int = 2

    def __post_init__(self) -> None:
        if self.input_width < 1 or self.n_actions < 1:
            raise ValueError("widths must be positive")
        if self.n_layers < 1:
            raise ValueError("at least one hidden layer")


def init_mlp_params(cfg: MlpConfig, seed: int = 0) -> ParamSet:
    rng = np.random.default_rng(seed)
    entries = {}
    fan_in = cfg.input_width
    for k in range(cfg.n_layers):
        entries[f"hidden{k}"] = init_linear(rng, fan_in, cfg.hidden)
        fan_in = cfg.hidden
    entries["policy_head"] = init_linear(rng, fan_in, cfg.n_actions)
    entries["value_head"] = init_linear(rng, fan_in, 1)
    return ParamSet(entries)


def mlp_policy(
    params: ParamSet,
    cfg: MlpConfig,
    obs: np.ndarray,
    mask_flat: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Flat policy: (log-probs (B, n_actions), value (B, 1)).

    Raises InputWidthMismatch when the observation width is not the width
    this model was built for; padding or truncation is never attempted.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.shape[1] != cfg.input_width:
        raise InputWidthMismatch(
            f"model expects width {cfg.input_width}, observation has {obs.shape[1]}"
        )
    x = Tensor(obs)
    for k in range(cfg.n_layers):
        x = ad.tanh(linear(x, params[f"hidden{k}"]))
    logits = linear(x, params["policy_head"])
    log_probs = _row_log_softmax(logits, mask_flat)
    val = linear(x, params["value_head"])
    return log_probs, val
