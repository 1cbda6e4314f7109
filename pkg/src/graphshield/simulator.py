"""Two-player network defense game.

Each step the attacker (red) moves first, then the defender (blue), then the
step's reward is charged from the resulting state. Red runs one of two
scripted campaigns:

  * the direct attacker drives the shortest pivot chain from its entry box
    through one enterprise server to the operational server, then impacts
    every turn;
  * the sweeping attacker compromises whole subnets breadth first, only
    advancing its frontier once everything exploitable in it is owned.

Ground truth per host is a monotone ladder: untouched, scanned, user-level
access, privileged access. Remove only evicts user-level access; privileged
access survives anything short of a full Restore. Red remembers which hosts
it has scanned even across Restores, so it re-exploits without rescanning.

Rewards are all penalties: a per-turn charge for each privileged host (off
the attacker's own entry box), a large charge whenever the operational
server is impacted, and a small charge for every Restore. A perfect episode
scores exactly zero.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .errors import NonActionableHost, RedPathBroken
from .topology import (
    SUBNET_ORDER,
    Importance,
    NetworkTopology,
    NodeSpec,
    Subnet,
    red_exploitable,
    red_reachable,
)


class RedLevel(IntEnum):
    NO_ACCESS = 0
    SCANNED = 1
    USER_ACCESS = 2
    PRIVILEGED = 3


class BlueCommand(str, Enum):
    SLEEP = "Sleep"
    ANALYZE = "Analyze"
    REMOVE = "Remove"
    RESTORE = "Restore"


# Command vocabulary in head-index order; Sleep is always index 0.
COMMAND_SET = (
    BlueCommand.SLEEP,
    BlueCommand.ANALYZE,
    BlueCommand.REMOVE,
    BlueCommand.RESTORE,
)
HOST_COMMANDS = COMMAND_SET[1:]


@dataclass(frozen=True)
class BlueAction:
    command: BlueCommand
    host: str | None = None

    def __post_init__(self) -> None:
        if (self.command is BlueCommand.SLEEP) != (self.host is None):
            raise ValueError("Sleep takes no host; every other command needs one")

    @staticmethod
    def sleep() -> "BlueAction":
        return BlueAction(BlueCommand.SLEEP)

    @staticmethod
    def analyze(host: str) -> "BlueAction":
        return BlueAction(BlueCommand.ANALYZE, host)

    @staticmethod
    def remove(host: str) -> "BlueAction":
        return BlueAction(BlueCommand.REMOVE, host)

    @staticmethod
    def restore(host: str) -> "BlueAction":
        return BlueAction(BlueCommand.RESTORE, host)


class RedCommand(str, Enum):
    SLEEP = "Sleep"
    DISCOVER_SUBNET = "DiscoverSubnet"
    SCAN_HOST = "ScanHost"
    EXPLOIT = "Exploit"
    ESCALATE = "Escalate"
    IMPACT = "Impact"


@dataclass(frozen=True)
class RedAction:
    command: RedCommand
    host: str | None = None
    subnet: Subnet | None = None

    def to_json(self) -> dict:
        doc: dict = {"command": self.command.value}
        if self.host is not None:
            doc["host"] = self.host
        if self.subnet is not None:
            doc["subnet"] = self.subnet.value
        return doc


class RedKind(str, Enum):
    BLINE = "bline"
    MEANDER = "meander"


@dataclass(frozen=True)
class RewardTable:
    per_turn_privileged: dict = field(
        default_factory=lambda: {
            Importance.LOW: -0.1,
            Importance.HIGH: -1.0,
            Importance.CRITICAL: -1.0,
        }
    )
    impact_penalty: float = -10.0
    restore_penalty: float = -1.0

    def __post_init__(self) -> None:
        if any(v > 0 for v in self.per_turn_privileged.values()):
            raise ValueError("per-turn charges must be penalties")
        if self.impact_penalty > 0 or self.restore_penalty > 0:
            raise ValueError("penalties must be non-positive")
        crit = self.per_turn_privileged[Importance.CRITICAL]
        if any(crit > v for v in self.per_turn_privileged.values()):
            raise ValueError("critical hosts cannot be charged less than others")


@dataclass
class StepEvents:
    """What the defender's sensors saw during one step."""

    detected_scans: set = field(default_factory=set)
    detected_exploits: set = field(default_factory=set)
    analyzed: tuple[str, RedLevel] | None = None
    impact_occurred: bool = False
    restored: str | None = None
    removed: str | None = None

    def to_json(self) -> dict:
        return {
            "detected_scans": sorted(self.detected_scans),
            "detected_exploits": sorted(self.detected_exploits),
            "analyzed": None
            if self.analyzed is None
            else [self.analyzed[0], int(self.analyzed[1])],
            "impact_occurred": self.impact_occurred,
            "restored": self.restored,
            "removed": self.removed,
        }


@dataclass
class RedState:
    """Red's private memory; the defender never sees this."""

    kind: RedKind
    scanned: set = field(default_factory=set)
    path: tuple[str, ...] | None = None  # direct attacker's pivot chain
    frontier: int = 0  # sweeping attacker's index into SUBNET_ORDER


@dataclass(frozen=True)
class SimConfig:
    reward_table: RewardTable
    episode_len: int = 100
    p_detect: float = 0.9
    exploit_success_prob: float = 1.0


@dataclass
class StepOutcome:
    reward: float
    truncated: bool


@dataclass
class SimState:
    topology: NetworkTopology
    step: int
    level: dict
    red_internal: RedState
    rng: random.Random
    last_events: StepEvents
    config: SimConfig
    last_red_action: RedAction | None = None


def flat_action_count(n_hosts: int, n_host_commands: int, n_global_commands: int) -> int:
    """Size of a flat (host, command) action space plus global commands."""
    if min(n_hosts, n_host_commands, n_global_commands) < 0:
        raise ValueError("counts must be non-negative")
    return n_global_commands + n_hosts * n_host_commands


def reset(
    topo: NetworkTopology,
    red_kind: RedKind,
    reward_table: RewardTable | None = None,
    seed: int = 0,
    *,
    episode_len: int = 100,
    p_detect: float = 0.9,
    exploit_success_prob: float = 1.0,
) -> SimState:
    """Fresh episode. Raises RedPathBroken if the attack route is severed."""
    if not red_reachable(topo):
        raise RedPathBroken("this topology gives the attacker no route to play")
    table = RewardTable() if reward_table is None else reward_table
    level = {n.id: RedLevel.NO_ACCESS for n in topo.nodes}
    start = topo.red_start_host
    level[start] = RedLevel.PRIVILEGED
    red = RedState(kind=red_kind)
    if red_kind is RedKind.BLINE:
        pivot = next(
            n.id
            for n in topo.nodes
            if n.subnet is Subnet.ENTERPRISE and red_exploitable(n)
        )
        red.path = (start, pivot, topo.critical_host)
    return SimState(
        topology=topo,
        step=0,
        level=level,
        red_internal=red,
        rng=random.Random(seed),
        last_events=StepEvents(),
        config=SimConfig(
            reward_table=table,
            episode_len=episode_len,
            p_detect=p_detect,
            exploit_success_prob=exploit_success_prob,
        ),
    )


def _effective_stage(state: SimState, host: str) -> RedLevel:
    # Red's working knowledge: a past scan still counts after a Restore.
    lvl = state.level[host]
    if lvl is RedLevel.NO_ACCESS and host in state.red_internal.scanned:
        return RedLevel.SCANNED
    return lvl


def _advance_action(state: SimState, host: str) -> RedAction:
    stage = _effective_stage(state, host)
    if stage is RedLevel.NO_ACCESS:
        return RedAction(RedCommand.SCAN_HOST, host=host)
    if stage is RedLevel.SCANNED:
        return RedAction(RedCommand.EXPLOIT, host=host)
    return RedAction(RedCommand.ESCALATE, host=host)


def bline_next(state: SimState) -> RedAction:
    """Direct attacker: advance the deepest unowned host on the pivot chain."""
    path = state.red_internal.path
    assert path is not None
    deepest = max(
        k for k, host in enumerate(path) if state.level[host] is RedLevel.PRIVILEGED
    )
    if deepest == len(path) - 1:
        return RedAction(RedCommand.IMPACT, host=path[-1])
    return _advance_action(state, path[deepest + 1])


def meander_next(state: SimState) -> RedAction:
    """Sweeping attacker: own the current subnet, then widen the frontier.

    Within a subnet the sweep moves in stage waves: scan every host, then
    exploit every host, and only once the whole subnet holds user access
    start escalating. A host the defender cleans up drops back into the
    exploit wave, so prompt Removes can stall the sweep indefinitely.
    """
    topo = state.topology
    red = state.red_internal
    if state.level[topo.critical_host] is RedLevel.PRIVILEGED:
        return RedAction(RedCommand.IMPACT, host=topo.critical_host)

    foothold_subnets = {
        topo.node(h).subnet
        for h, lvl in state.level.items()
        if lvl is RedLevel.PRIVILEGED
    }

    def reachable(node: NodeSpec) -> bool:
        return any(topo.allows(s, node.subnet) for s in foothold_subnets)

    def wave_action(subnet: Subnet) -> RedAction | None:
        stages: dict[RedLevel, list[str]] = {}
        for n in topo.nodes:
            if n.subnet is subnet and red_exploitable(n) and reachable(n):
                stages.setdefault(_effective_stage(state, n.id), []).append(n.id)
        for stage, command in (
            (RedLevel.NO_ACCESS, RedCommand.SCAN_HOST),
            (RedLevel.SCANNED, RedCommand.EXPLOIT),
            (RedLevel.USER_ACCESS, RedCommand.ESCALATE),
        ):
            if stages.get(stage):
                return RedAction(command, host=state.rng.choice(stages[stage]))
        return None

    discovered = SUBNET_ORDER[: red.frontier + 1]
    frontier_subnet = SUBNET_ORDER[red.frontier]
    frontier_done = all(
        state.level[n.id] is RedLevel.PRIVILEGED
        for n in topo.nodes
        if n.subnet is frontier_subnet and red_exploitable(n)
    )
    if frontier_done:
        if red.frontier + 1 < len(SUBNET_ORDER):
            return RedAction(
                RedCommand.DISCOVER_SUBNET, subnet=SUBNET_ORDER[red.frontier + 1]
            )
        return RedAction(RedCommand.SLEEP)
    action = wave_action(frontier_subnet)
    if action is None:
        # Frontier hosts are out of reach (footholds were cleaned up); fall
        # back to the earliest discovered subnet that still has work in it.
        for subnet in discovered:
            action = wave_action(subnet)
            if action is not None:
                break
    return action if action is not None else RedAction(RedCommand.SLEEP)


def _red_next(state: SimState) -> RedAction:
    if state.red_internal.kind is RedKind.BLINE:
        return bline_next(state)
    return meander_next(state)


def _resolve_red(state: SimState, action: RedAction, events: StepEvents) -> None:
    cfg = state.config
    cmd = action.command
    if cmd is RedCommand.SLEEP:
        return
    if cmd is RedCommand.DISCOVER_SUBNET:
        state.red_internal.frontier = SUBNET_ORDER.index(action.subnet)
        return
    host = action.host
    assert host is not None
    if cmd is RedCommand.SCAN_HOST:
        state.red_internal.scanned.add(host)
        if state.level[host] is RedLevel.NO_ACCESS:
            state.level[host] = RedLevel.SCANNED
        events.detected_scans.add(host)
        return
    if cmd is RedCommand.EXPLOIT:
        if state.level[host] >= RedLevel.USER_ACCESS:
            return
        succeeded = (
            cfg.exploit_success_prob >= 1.0
            or state.rng.random() < cfg.exploit_success_prob
        )
        if not succeeded:
            return
        state.level[host] = RedLevel.USER_ACCESS
        detected = cfg.p_detect >= 1.0 or (
            cfg.p_detect > 0.0 and state.rng.random() < cfg.p_detect
        )
        if detected:
            events.detected_exploits.add(host)
        return
    if cmd is RedCommand.ESCALATE:
        if state.level[host] is RedLevel.USER_ACCESS:
            state.level[host] = RedLevel.PRIVILEGED
        return
    if cmd is RedCommand.IMPACT:
        if state.level[host] is RedLevel.PRIVILEGED:
            events.impact_occurred = True
        return
    raise AssertionError(f"unhandled red command {cmd}")


def _resolve_blue(state: SimState, action: BlueAction, events: StepEvents) -> None:
    if action.command is BlueCommand.SLEEP:
        return
    host = action.host
    assert host is not None
    node = state.topology.node(host)
    if not node.actionable:
        raise NonActionableHost(host)
    if action.command is BlueCommand.ANALYZE:
        events.analyzed = (host, state.level[host])
        return
    if action.command is BlueCommand.REMOVE:
        # Only evicts user-level access; privileged access needs a Restore.
        if state.level[host] is RedLevel.USER_ACCESS:
            state.level[host] = RedLevel.NO_ACCESS
            events.removed = host
        return
    if action.command is BlueCommand.RESTORE:
        state.level[host] = RedLevel.NO_ACCESS
        events.restored = host
        return
    raise AssertionError(f"unhandled blue command {action.command}")


def step(state: SimState, blue: BlueAction) -> tuple[SimState, StepOutcome]:
    """Advance one step: red moves, blue moves, the step is charged."""
    cfg = state.config
    if state.step >= cfg.episode_len:
        raise ValueError("episode already over; reset first")
    events = StepEvents()
    red_action = _red_next(state)
    _resolve_red(state, red_action, events)
    _resolve_blue(state, blue, events)

    table = cfg.reward_table
    reward = 0.0
    if blue.command is BlueCommand.RESTORE:
        reward += table.restore_penalty
    start = state.topology.red_start_host
    for node in state.topology.hosts:
        if node.id != start and state.level[node.id] is RedLevel.PRIVILEGED:
            reward += table.per_turn_privileged[node.importance]
    if events.impact_occurred:
        reward += table.impact_penalty

    state.step += 1
    state.last_events = events
    state.last_red_action = red_action
    return state, StepOutcome(reward=reward, truncated=state.step >= cfg.episode_len)
