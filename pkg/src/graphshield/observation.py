"""What the defender actually sees, and how policies consume it.

The defender never reads ground truth. It keeps a per-host belief built from
detector events: an activity flag for this step (nothing, scan seen, exploit
seen) and a sticky compromise estimate (clean, unknown, user level,
privileged) that only an Analyze, Remove or Restore can pin down or clear.

The belief encodes two ways. The flat vector lays out four bits per host in
canonical order, which fixes the input width of the baseline model. The
graph form keeps every node (routers included, as all-zero rows) plus the
topology's edges and a mask of hosts the defender may act on, which is what
the relational policy consumes and what survives a change of topology.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import IndexOutOfRange, NonActionableHost
from .simulator import HOST_COMMANDS, BlueAction, BlueCommand, RedLevel, StepEvents
from .topology import NetworkTopology


class Activity(str, Enum):
    NONE_SEEN = "NoneSeen"
    SCAN_SEEN = "ScanSeen"
    EXPLOIT_SEEN = "ExploitSeen"


class Compromised(str, Enum):
    NO = "No"
    UNKNOWN = "Unknown"
    USER_LEVEL = "UserLevel"
    PRIVILEGED_LEVEL = "PrivilegedLevel"


ACTIVITY_BITS = {
    Activity.NONE_SEEN: (0, 0),
    Activity.SCAN_SEEN: (0, 1),
    Activity.EXPLOIT_SEEN: (1, 1),
}

COMPROMISED_BITS = {
    Compromised.NO: (0, 0),
    Compromised.UNKNOWN: (0, 1),
    Compromised.USER_LEVEL: (1, 0),
    Compromised.PRIVILEGED_LEVEL: (1, 1),
}

BITS_PER_HOST = 4

_LEVEL_TO_COMPROMISED = {
    RedLevel.NO_ACCESS: Compromised.NO,
    RedLevel.SCANNED: Compromised.NO,
    RedLevel.USER_ACCESS: Compromised.USER_LEVEL,
    RedLevel.PRIVILEGED: Compromised.PRIVILEGED_LEVEL,
}


@dataclass(frozen=True)
class BlueHostView:
    activity: Activity = Activity.NONE_SEEN
    compromised: Compromised = Compromised.NO


@dataclass(frozen=True)
class ObsGraph:
    """Graph-shaped observation: per-node bit features over the topology."""

    node_features: np.ndarray  # (n_nodes, 4) float64 of {0, 1}
    edges: tuple  # tuple of (i, j) pairs, i < j
    action_mask: np.ndarray  # (n_nodes,) bool
    host_index: dict  # node id -> row

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]


def initial_belief(topo: NetworkTopology) -> dict:
    return {n.id: BlueHostView() for n in topo.hosts}


def update_belief(belief: dict, events: StepEvents) -> dict:
    """Fold one step of detector events into the belief.

    Activity is per-step and resets; the compromise estimate is sticky. An
    exploit detection marks a host Unknown until an Analyze reads the truth
    or a Remove/Restore visibly clears it. Blue acts after red, so its own
    evidence wins over this step's detections.
    """
    out = {}
    for host, view in belief.items():
        if host in events.detected_exploits:
            activity = Activity.EXPLOIT_SEEN
            compromised = Compromised.UNKNOWN
        elif host in events.detected_scans:
            activity = Activity.SCAN_SEEN
            compromised = view.compromised
        else:
            activity = Activity.NONE_SEEN
            compromised = view.compromised
        if events.analyzed is not None and events.analyzed[0] == host:
            compromised = _LEVEL_TO_COMPROMISED[events.analyzed[1]]
        if events.restored == host or events.removed == host:
            compromised = Compromised.NO
        out[host] = BlueHostView(activity=activity, compromised=compromised)
    return out


def _host_bits(view: BlueHostView) -> tuple:
    return ACTIVITY_BITS[view.activity] + COMPROMISED_BITS[view.compromised]


def encode_vector(belief: dict, topo: NetworkTopology) -> np.ndarray:
    """Flat observation: four bits per host, hosts in canonical order."""
    out = np.zeros(BITS_PER_HOST * topo.n_hosts, dtype=np.float64)
    for k, node in enumerate(topo.hosts):
        out[4 * k : 4 * k + 4] = _host_bits(belief[node.id])
    return out


def encode_graph(belief: dict, topo: NetworkTopology) -> ObsGraph:
    """Graph observation over every node; router rows stay all-zero."""
    n = len(topo.nodes)
    features = np.zeros((n, BITS_PER_HOST), dtype=np.float64)
    mask = np.zeros(n, dtype=bool)
    for i, node in enumerate(topo.nodes):
        if node.id in belief:
            features[i] = _host_bits(belief[node.id])
        mask[i] = node.actionable
    edges = tuple(sorted(topo.edges))
    host_index = {node.id: i for i, node in enumerate(topo.nodes)}
    return ObsGraph(
        node_features=features, edges=edges, action_mask=mask, host_index=host_index
    )


def flat_action_dim(topo: NetworkTopology) -> int:
    return 1 + len(HOST_COMMANDS) * len(topo.actionable_hosts)


def decode_flat_action(index: int, topo: NetworkTopology) -> BlueAction:
    """Flat index -> action: 0 is Sleep, then Analyze/Remove/Restore blocks
    per actionable host in canonical order."""
    dim = flat_action_dim(topo)
    if not 0 <= index < dim:
        raise IndexOutOfRange(f"action index {index} outside [0, {dim})")
    if index == 0:
        return BlueAction.sleep()
    block, offset = divmod(index - 1, len(HOST_COMMANDS))
    host = topo.actionable_hosts[block]
    return BlueAction(HOST_COMMANDS[offset], host)


def encode_flat_action(action: BlueAction, topo: NetworkTopology) -> int:
    if action.command is BlueCommand.SLEEP:
        return 0
    hosts = topo.actionable_hosts
    if action.host not in hosts:
        raise NonActionableHost(str(action.host))
    block = hosts.index(action.host)
    return 1 + block * len(HOST_COMMANDS) + HOST_COMMANDS.index(action.command)


def permute_obs_graph(obs: ObsGraph, perm) -> ObsGraph:
    """Relabel nodes: row i of the input becomes row perm[i] of the output."""
    perm = np.asarray(perm, dtype=np.intp)
    n = obs.n_nodes
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError("perm must be a permutation of node rows")
    inv = np.empty(n, dtype=np.intp)
    inv[perm] = np.arange(n, dtype=np.intp)
    features = obs.node_features[inv]
    mask = obs.action_mask[inv]
    edges = tuple(
        sorted((min(int(perm[i]), int(perm[j])), max(int(perm[i]), int(perm[j]))) for i, j in obs.edges)
    )
    host_index = {host: int(perm[row]) for host, row in obs.host_index.items()}
    return ObsGraph(
        node_features=features, edges=edges, action_mask=mask, host_index=host_index
    )
