"""Shared fixtures: the canonical network and its published variants."""

import pytest

from graphshield.topology import apply_variant, build_cage2_topology, paper_variants


@pytest.fixture(scope="session")
def base_topo():
    return build_cage2_topology()


@pytest.fixture(scope="session")
def variant_topos(base_topo):
    return [apply_variant(base_topo, spec) for spec in paper_variants()]


@pytest.fixture(scope="session")
def train_topo(variant_topos):
    # The 13-node variant every learning experiment trains on.
    return variant_topos[3]
