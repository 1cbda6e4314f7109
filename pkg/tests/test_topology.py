"""Structure and eligibility rules of the network model."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphshield.errors import (
    IneligibleHost,
    NoEligibleHost,
    RedPathBroken,
    UnknownHost,
)
from graphshield.topology import (
    DEFENDER_HOST,
    Importance,
    NetworkTopology,
    NodeKind,
    Subnet,
    VariantSpec,
    apply_variant,
    build_cage2_topology,
    generate_variants,
    paper_variants,
    red_exploitable,
    red_reachable,
)


class TestBaseTopology:
    def test_node_counts(self, base_topo):
        assert len(base_topo.nodes) == 16
        assert base_topo.n_hosts == 13
        assert len(base_topo.actionable_hosts) == 12
        assert sum(n.kind is NodeKind.ROUTER for n in base_topo.nodes) == 3

    def test_special_hosts(self, base_topo):
        assert base_topo.red_start_host == "User0"
        assert base_topo.critical_host == "OpServer"
        assert base_topo.node(DEFENDER_HOST).subnet is Subnet.ENTERPRISE
        assert "User0" not in base_topo.actionable_hosts
        assert DEFENDER_HOST in base_topo.actionable_hosts

    def test_edge_count(self, base_topo):
        # 13 host-router links plus the two permitted router-router links.
        assert len(base_topo.edges) == 15

    def test_hosts_link_only_their_router(self, base_topo):
        for i, node in enumerate(base_topo.nodes):
            if node.kind is NodeKind.HOST:
                (j,) = base_topo.neighbors(i)
                assert base_topo.nodes[j].kind is NodeKind.ROUTER
                assert base_topo.nodes[j].subnet is node.subnet

    def test_firewall_blocks_user_to_operational(self, base_topo):
        assert base_topo.allows(Subnet.USER, Subnet.ENTERPRISE)
        assert base_topo.allows(Subnet.ENTERPRISE, Subnet.OPERATIONAL)
        assert not base_topo.allows(Subnet.USER, Subnet.OPERATIONAL)
        assert base_topo.allows(Subnet.USER, Subnet.USER)

    def test_router_links_mirror_firewall(self, base_topo):
        routers = {
            n.subnet: i
            for i, n in enumerate(base_topo.nodes)
            if n.kind is NodeKind.ROUTER
        }
        ru, re_, ro = (
            routers[Subnet.USER],
            routers[Subnet.ENTERPRISE],
            routers[Subnet.OPERATIONAL],
        )
        assert (min(ru, re_), max(ru, re_)) in base_topo.edges
        assert (min(re_, ro), max(re_, ro)) in base_topo.edges
        assert (min(ru, ro), max(ru, ro)) not in base_topo.edges

    def test_exploitability(self, base_topo):
        assert not red_exploitable(base_topo.node(DEFENDER_HOST))
        assert not red_exploitable(base_topo.node("RouterEnt"))
        assert red_exploitable(base_topo.node("User0"))
        assert red_exploitable(base_topo.node("OpServer"))

    def test_unknown_host_lookup(self, base_topo):
        with pytest.raises(UnknownHost):
            base_topo.index_of("Mainframe")

    def test_json_round_trip(self, base_topo):
        doc = base_topo.to_json_dict()
        back = NetworkTopology.from_json_dict(doc)
        assert back == base_topo
        assert back.to_json_dict() == doc


class TestPaperVariants:
    def test_node_counts_descend_16_to_10(self, variant_topos):
        assert [len(t.nodes) for t in variant_topos] == [16, 15, 14, 13, 12, 11, 10]

    def test_first_variant_is_the_base(self, base_topo, variant_topos):
        assert variant_topos[0] == base_topo

    def test_all_keep_the_attack_route(self, variant_topos):
        for topo in variant_topos:
            assert red_reachable(topo)

    def test_all_keep_core_hosts(self, variant_topos):
        for topo in variant_topos:
            assert topo.red_start_host == "User0"
            assert topo.critical_host == "OpServer"
            assert DEFENDER_HOST in topo.actionable_hosts

    def test_canonical_order_preserved(self, base_topo, variant_topos):
        base_order = [n.id for n in base_topo.nodes]
        for topo in variant_topos:
            ids = [n.id for n in topo.nodes]
            positions = [base_order.index(i) for i in ids]
            assert positions == sorted(positions)

    def test_training_variant_has_13_nodes(self, train_topo):
        assert len(train_topo.nodes) == 13
        assert train_topo.n_hosts == 10


class TestApplyVariant:
    def test_removing_unknown_host(self, base_topo):
        with pytest.raises(UnknownHost):
            apply_variant(base_topo, VariantSpec(("Mainframe",)))

    @pytest.mark.parametrize(
        "host", ["User0", "OpServer", DEFENDER_HOST, "RouterUser"]
    )
    def test_protected_hosts_cannot_be_removed(self, base_topo, host):
        with pytest.raises(IneligibleHost):
            apply_variant(base_topo, VariantSpec((host,)))

    def test_severing_the_pivot_subnet(self, base_topo):
        # Without any exploitable enterprise host the attacker cannot hop
        # from the user subnet to operations.
        with pytest.raises(RedPathBroken):
            apply_variant(base_topo, VariantSpec(("Ent0", "Ent1", "Ent2")))

    def test_duplicate_removals_collapse(self, base_topo):
        a = apply_variant(base_topo, VariantSpec(("User3", "User3")))
        b = apply_variant(base_topo, VariantSpec(("User3",)))
        assert a == b

    def test_indices_remap_contiguously(self, base_topo):
        topo = apply_variant(base_topo, VariantSpec(("User3", "OpHost1")))
        n = len(topo.nodes)
        assert all(0 <= i < n and 0 <= j < n and i < j for i, j in topo.edges)
        for i, node in enumerate(topo.nodes):
            assert topo.index_of(node.id) == i


class TestGenerateVariants:
    def test_chain_is_nested(self, base_topo):
        chain = generate_variants(base_topo, 5, rng_seed=11)
        assert len(chain) == 5
        for k in range(1, 5):
            assert chain[k].removed[:k] == chain[k - 1].removed
            assert len(chain[k].removed) == k + 1

    def test_same_seed_same_chain(self, base_topo):
        assert generate_variants(base_topo, 4, 3) == generate_variants(base_topo, 4, 3)

    def test_every_link_is_applicable(self, base_topo):
        for spec in generate_variants(base_topo, 6, rng_seed=0):
            topo = apply_variant(base_topo, spec)
            assert red_reachable(topo)

    def test_count_zero(self, base_topo):
        assert generate_variants(base_topo, 0, 0) == []

    def test_negative_count_rejected(self, base_topo):
        with pytest.raises(ValueError):
            generate_variants(base_topo, -1, 0)

    def test_exhaustion_raises(self, base_topo):
        # Only 9 hosts are ever removable (13 minus entry, critical,
        # defender, minus one enterprise host that must keep the pivot
        # alive), so a long chain must run dry.
        with pytest.raises(NoEligibleHost):
            generate_variants(base_topo, 13, rng_seed=5)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_random_chains_always_valid(self, seed):
        base = build_cage2_topology()
        for spec in generate_variants(base, 3, rng_seed=seed):
            topo = apply_variant(base, spec)
            assert red_reachable(topo)
            assert topo.critical_host == "OpServer"


class TestValidation:
    def test_disconnected_graph_rejected(self, base_topo):
        # An empty firewall keeps each subnet a valid star but removes the
        # router spine, leaving three disconnected components.
        stars = frozenset(
            (i, j)
            for i, j in base_topo.edges
            if not (
                base_topo.nodes[i].kind is NodeKind.ROUTER
                and base_topo.nodes[j].kind is NodeKind.ROUTER
            )
        )
        with pytest.raises(ValueError, match="connected"):
            NetworkTopology(nodes=base_topo.nodes, edges=stars, firewall=frozenset())

    def test_actionable_entry_host_rejected(self, base_topo):
        nodes = tuple(
            n if not n.red_start else type(n)(
                id=n.id,
                subnet=n.subnet,
                kind=n.kind,
                importance=n.importance,
                red_start=True,
                actionable=True,
            )
            for n in base_topo.nodes
        )
        with pytest.raises(ValueError, match="remit"):
            NetworkTopology(nodes=nodes, edges=base_topo.edges)

    def test_two_critical_hosts_rejected(self, base_topo):
        nodes = tuple(
            n if n.id != "Ent0" else type(n)(
                id=n.id,
                subnet=n.subnet,
                kind=n.kind,
                importance=Importance.CRITICAL,
            )
            for n in base_topo.nodes
        )
        with pytest.raises(ValueError, match="critical"):
            NetworkTopology(nodes=nodes, edges=base_topo.edges)
