"""Network model for the incident-response game.

A small corporate network of three firewalled subnets: user workstations,
enterprise servers (plus the defender's own machine), and an operational
enclave whose server is the attacker's goal. Each subnet hangs off one
router; routers are linked only where the firewall permits traffic, so the
enterprise subnet is the single route from user machines into operations.

Variants of the network remove hosts while keeping the attacker's pivot
route intact, which is what the generalization experiments exercise.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .errors import IneligibleHost, NoEligibleHost, RedPathBroken, UnknownHost


class Subnet(str, Enum):
    USER = "UserNet"
    ENTERPRISE = "EnterpriseNet"
    OPERATIONAL = "OperationalNet"


# The order the attacker sweeps subnets in, and the order they appear in
# canonical node listings.
SUBNET_ORDER = (Subnet.USER, Subnet.ENTERPRISE, Subnet.OPERATIONAL)


class NodeKind(str, Enum):
    HOST = "Host"
    ROUTER = "Router"


class Importance(str, Enum):
    LOW = "Low"
    HIGH = "High"
    CRITICAL = "Critical"


DEFENDER_HOST = "Defender"

# Cross-subnet traffic permitted by the perimeter firewalls. User machines
# cannot reach the operational enclave directly in either direction.
ALLOWED_SUBNET_PAIRS = frozenset(
    {
        frozenset({Subnet.USER, Subnet.ENTERPRISE}),
        frozenset({Subnet.ENTERPRISE, Subnet.OPERATIONAL}),
    }
)


@dataclass(frozen=True)
class NodeSpec:
    id: str
    subnet: Subnet
    kind: NodeKind
    importance: Importance
    red_start: bool = False
    actionable: bool = True


@dataclass(frozen=True)
class VariantSpec:
    """A network variant, described by the hosts removed from the base."""

    removed: tuple[str, ...] = ()


def red_exploitable(node: NodeSpec) -> bool:
    """Whether the attacker can gain a foothold on this node.

    Routers carry no exploitable services and the defender's own machine is
    assumed hardened, so neither can serve as a pivot.
    """
    return node.kind is NodeKind.HOST and node.id != DEFENDER_HOST


@dataclass(frozen=True)
class NetworkTopology:
    """Immutable network graph. Node order is the canonical order used by
    every observation and action encoding in the package."""

    nodes: tuple[NodeSpec, ...]
    edges: frozenset[tuple[int, int]]
    firewall: frozenset[frozenset[Subnet]] = ALLOWED_SUBNET_PAIRS

    def __post_init__(self) -> None:
        index = {n.id: i for i, n in enumerate(self.nodes)}
        if len(index) != len(self.nodes):
            raise ValueError("duplicate node ids")
        adj: list[list[int]] = [[] for _ in self.nodes]
        for i, j in self.edges:
            if not (0 <= i < len(self.nodes) and 0 <= j < len(self.nodes) and i < j):
                raise ValueError(f"bad edge ({i}, {j})")
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(a)) for a in adj))
        self._validate()

    def _validate(self) -> None:
        starts = [n for n in self.nodes if n.red_start]
        if len(starts) != 1:
            raise ValueError("exactly one red entry host required")
        if starts[0].subnet is not Subnet.USER or starts[0].kind is not NodeKind.HOST:
            raise ValueError("red entry must be a user-subnet host")
        if starts[0].actionable:
            raise ValueError("red entry host is outside the defender's remit")
        criticals = [n for n in self.nodes if n.importance is Importance.CRITICAL]
        if len(criticals) != 1:
            raise ValueError("exactly one critical host required")
        routers: dict[Subnet, int] = {}
        for i, n in enumerate(self.nodes):
            if n.kind is NodeKind.ROUTER:
                if n.actionable:
                    raise ValueError("routers are not actionable")
                if n.subnet in routers:
                    raise ValueError("one router per subnet")
                routers[n.subnet] = i
        for i, n in enumerate(self.nodes):
            if n.kind is NodeKind.HOST:
                links = self._adj[i]
                if len(links) != 1 or self.nodes[links[0]].kind is not NodeKind.ROUTER:
                    raise ValueError(f"host {n.id} must link exactly its router")
                if self.nodes[links[0]].subnet is not n.subnet:
                    raise ValueError(f"host {n.id} linked to a foreign router")
        for (a, ra) in routers.items():
            for (b, rb) in routers.items():
                if a is b:
                    continue
                linked = (min(ra, rb), max(ra, rb)) in self.edges
                if linked != self.allows(a, b):
                    raise ValueError("router links must mirror the firewall")
        # Connectivity over the whole graph.
        if self.nodes:
            seen = {0}
            frontier = [0]
            while frontier:
                i = frontier.pop()
                for j in self._adj[i]:
                    if j not in seen:
                        seen.add(j)
                        frontier.append(j)
            if len(seen) != len(self.nodes):
                raise ValueError("topology must be connected")

    # -- lookups ---------------------------------------------------------

    def index_of(self, host_id: str) -> int:
        try:
            return self._index[host_id]  # type: ignore[attr-defined]
        except KeyError:
            raise UnknownHost(host_id) from None

    def node(self, host_id: str) -> NodeSpec:
        return self.nodes[self.index_of(host_id)]

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adj[i]  # type: ignore[attr-defined]

    def allows(self, a: Subnet, b: Subnet) -> bool:
        return a is b or frozenset({a, b}) in self.firewall

    @property
    def hosts(self) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.HOST)

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    @property
    def actionable_hosts(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.actionable)

    @property
    def red_start_host(self) -> str:
        return next(n.id for n in self.nodes if n.red_start)

    @property
    def critical_host(self) -> str:
        return next(n.id for n in self.nodes if n.importance is Importance.CRITICAL)

    def subnet_hosts(self, subnet: Subnet) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.hosts if n.subnet is subnet)

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "subnet": n.subnet.value,
                    "kind": n.kind.value,
                    "importance": n.importance.value,
                    "red_start": n.red_start,
                    "actionable": n.actionable,
                }
                for n in self.nodes
            ],
            "edges": sorted([i, j] for i, j in self.edges),
            "firewall": sorted(sorted(s.value for s in pair) for pair in self.firewall),
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "NetworkTopology":
        nodes = tuple(
            NodeSpec(
                id=d["id"],
                subnet=Subnet(d["subnet"]),
                kind=NodeKind(d["kind"]),
                importance=Importance(d["importance"]),
                red_start=d["red_start"],
                actionable=d["actionable"],
            )
            for d in doc["nodes"]
        )
        edges = frozenset((int(i), int(j)) for i, j in doc["edges"])
        firewall = frozenset(frozenset(Subnet(s) for s in pair) for pair in doc["firewall"])
        return NetworkTopology(nodes=nodes, edges=edges, firewall=firewall)


def build_cage2_topology() -> NetworkTopology:
    """The base 16-node network: 13 hosts and 3 routers.

    User0 is the attacker's entry box (outside the defender's control), the
    operational server is the crown jewel, and the defender's console sits
    on the enterprise subnet.
    """
    nodes: list[NodeSpec] = []

    def host(name: str, subnet: Subnet, importance: Importance, **kw) -> None:
        nodes.append(NodeSpec(name, subnet, NodeKind.HOST, importance, **kw))

    def router(name: str, subnet: Subnet) -> None:
        nodes.append(
            NodeSpec(name, subnet, NodeKind.ROUTER, Importance.LOW, actionable=False)
        )

    host("User0", Subnet.USER, Importance.LOW, red_start=True, actionable=False)
    for k in range(1, 5):
        host(f"User{k}", Subnet.USER, Importance.LOW)
    router("RouterUser", Subnet.USER)
    for k in range(3):
        host(f"Ent{k}", Subnet.ENTERPRISE, Importance.HIGH)
    host(DEFENDER_HOST, Subnet.ENTERPRISE, Importance.HIGH)
    router("RouterEnt", Subnet.ENTERPRISE)
    host("OpServer", Subnet.OPERATIONAL, Importance.CRITICAL)
    for k in range(3):
        host(f"OpHost{k}", Subnet.OPERATIONAL, Importance.LOW)
    router("RouterOp", Subnet.OPERATIONAL)

    index = {n.id: i for i, n in enumerate(nodes)}
    edges: set[tuple[int, int]] = set()

    def link(a: str, b: str) -> None:
        i, j = index[a], index[b]
        edges.add((min(i, j), max(i, j)))

    routers = {Subnet.USER: "RouterUser", Subnet.ENTERPRISE: "RouterEnt", Subnet.OPERATIONAL: "RouterOp"}
    for n in nodes:
        if n.kind is NodeKind.HOST:
            link(n.id, routers[n.subnet])
    link("RouterUser", "RouterEnt")
    link("RouterEnt", "RouterOp")

    return NetworkTopology(nodes=tuple(nodes), edges=frozenset(edges))


def paper_variants() -> list[VariantSpec]:
    """The seven benchmark variants, from the full network down to 10 nodes.

    Index 3 (13 nodes) is the training network for the transfer study.
    """
    return [
        VariantSpec(()),
        VariantSpec(("User3",)),
        VariantSpec(("User3", "User4")),
        VariantSpec(("User3", "User4", "OpHost1")),
        VariantSpec(("User1", "User2", "User3", "OpHost1")),
        VariantSpec(("User1", "User3", "User4", "OpHost1", "OpHost2")),
        VariantSpec(("User2", "User3", "User4", "OpHost0", "OpHost1", "OpHost2")),
    ]


def red_reachable(topo: NetworkTopology) -> bool:
    """Whether the attacker still has a route to the critical server.

    The attacker starts on its entry host and can pivot into any subnet the
    firewall lets a current foothold talk to, provided that subnet has an
    exploitable host to land on. The critical server is reachable if its
    subnet is adjacent to (or inside) that foothold closure.
    """
    start = next((n for n in topo.nodes if n.red_start), None)
    target = next((n for n in topo.nodes if n.importance is Importance.CRITICAL), None)
    if start is None or target is None:
        return False
    footholds = {start.subnet}
    changed = True
    while changed:
        changed = False
        for sub in SUBNET_ORDER:
            if sub in footholds:
                continue
            adjacent = any(topo.allows(s, sub) for s in footholds)
            landing = any(n.subnet is sub and red_exploitable(n) for n in topo.nodes)
            if adjacent and landing:
                footholds.add(sub)
                changed = True
    return any(topo.allows(s, target.subnet) for s in footholds)


def _removal_blocked(node: NodeSpec) -> str | None:
    if node.kind is NodeKind.ROUTER:
        return "routers cannot be removed"
    if node.red_start:
        return "the attacker's entry host cannot be removed"
    if node.importance is Importance.CRITICAL:
        return "the critical server cannot be removed"
    if node.id == DEFENDER_HOST:
        return "the defender's console cannot be removed"
    return None


def _drop_hosts(base: NetworkTopology, removed: list[str]) -> NetworkTopology:
    gone = set(removed)
    keep = [i for i, n in enumerate(base.nodes) if n.id not in gone]
    remap = {old: new for new, old in enumerate(keep)}
    nodes = tuple(base.nodes[i] for i in keep)
    edges = frozenset(
        (remap[i], remap[j]) for i, j in base.edges if i in remap and j in remap
    )
    return NetworkTopology(nodes=nodes, edges=edges, firewall=base.firewall)


def apply_variant(base: NetworkTopology, variant: VariantSpec) -> NetworkTopology:
    """Remove the variant's hosts from base, preserving canonical order."""
    seen: list[str] = []
    for host_id in variant.removed:
        node = base.node(host_id)
        reason = _removal_blocked(node)
        if reason is not None:
            raise IneligibleHost(f"{host_id}: {reason}")
        if host_id not in seen:
            seen.append(host_id)
    topo = _drop_hosts(base, seen)
    if not red_reachable(topo):
        raise RedPathBroken(f"removing {seen} severs the attacker's route")
    return topo


def generate_variants(
    base: NetworkTopology, count: int, rng_seed: int
) -> list[VariantSpec]:
    """Sample a nested chain of count variants, one extra removal each.

    At every step one host is chosen uniformly from those whose removal is
    allowed and keeps the attacker's route alive. Raises NoEligibleHost once
    nothing can be removed any more.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = random.Random(rng_seed)
    removed: list[str] = []
    out: list[VariantSpec] = []
    current = base
    for _ in range(count):
        eligible = []
        for node in current.nodes:
            if _removal_blocked(node) is not None:
                continue
            if red_reachable(_drop_hosts(current, [node.id])):
                eligible.append(node.id)
        if not eligible:
            raise NoEligibleHost(
                f"no removable host left after {len(out)} of {count} variants"
            )
        removed.append(rng.choice(eligible))
        out.append(VariantSpec(tuple(removed)))
        current = apply_variant(base, out[-1])
    return out
