"""Canonical small fixtures and seeded random network generators.

The random generators back the verification suites: networks with a known
tree-partition are assembled from 2-edge-connected regions (cycles plus
chords) joined by single bridges arranged as a random tree, then dressed
with balanced injections and capacities that keep the base dispatch secure.
"""

from __future__ import annotations

import numpy as np

from .graph import tree_partition
from .netmodel import Bus, Line, Network, Scenario
from .powerflow import dc_power_flow


def triangle(capacity: float = 10.0) -> Network:
    """Three buses in a cycle, unit susceptances; secure by default."""
    return Network(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind="generator", demand=1.0, d_min=-1, d_max=1, droop_K=1.0),
            Bus(id=2, kind="load", demand=-1.0),
            Bus(id=3, kind="load", demand=0.0),
        ),
        lines=(
            Line(id=1, from_bus=1, to_bus=2, susceptance=1.0, capacity=capacity),
            Line(id=2, from_bus=2, to_bus=3, susceptance=1.0, capacity=capacity),
            Line(id=3, from_bus=1, to_bus=3, susceptance=1.0, capacity=capacity),
        ),
        areas=(frozenset({1, 2, 3}),),
    )


def vee() -> Network:
    """Triangle with two generators feeding one load; line (1,3) rated 1.5."""
    return Network(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind="generator", demand=2.0, d_min=-2, d_max=2, droop_K=1.0),
            Bus(id=2, kind="generator", demand=0.0, d_min=-2, d_max=2, droop_K=1.0),
            Bus(id=3, kind="load", demand=-2.0),
        ),
        lines=(
            Line(id=1, from_bus=1, to_bus=3, susceptance=1.0, capacity=1.5),
            Line(id=2, from_bus=1, to_bus=2, susceptance=1.0, capacity=2.0),
            Line(id=3, from_bus=2, to_bus=3, susceptance=1.0, capacity=2.0),
        ),
        areas=(frozenset({1, 2, 3}),),
    )


def bowtie(bridge_capacity: float = 10.0) -> Network:
    """Two triangles {1,2,3} and {4,5,6} joined by the bridge (3,4).

    The base dispatch exports 0.4 p.u. across the bridge.
    """
    pairs = [(1, 2), (2, 3), (1, 3), (3, 4), (4, 5), (5, 6), (4, 6)]
    buses = tuple(
        Bus(
            id=i,
            kind="generator" if i in (1, 5) else "load",
            demand={1: 1.2, 2: -0.5, 3: -0.3, 4: -0.2, 5: 0.9, 6: -1.1}[i],
            d_min=-2.0 if i in (1, 5) else 0.0,
            d_max=2.0 if i in (1, 5) else 0.0,
            droop_K=1.0 if i in (1, 5) else 0.0,
        )
        for i in range(1, 7)
    )
    lines = tuple(
        Line(
            id=e + 1,
            from_bus=a,
            to_bus=b,
            susceptance=1.0,
            capacity=bridge_capacity if (a, b) == (3, 4) else 10.0,
        )
        for e, (a, b) in enumerate(pairs)
    )
    return Network(
        base_mva=100.0,
        buses=buses,
        lines=lines,
        areas=(frozenset({1, 2, 3}), frozenset({4, 5, 6})),
    )


def random_tree_partitioned_network(
    rng: np.random.Generator,
    n_regions: int | None = None,
    min_region: int = 3,
    max_region: int = 7,
    susceptance_range: tuple[float, float] = (0.5, 3.0),
    box_width: float = 6.0,
) -> Network:
    """Random network whose irreducible tree-partition has known regions.

    Every region is a cycle with optional chords (2-edge-connected), regions
    are chained by single bridges along a random tree, and roughly half the
    buses are generators with droop gains.
    """
    if n_regions is None:
        n_regions = int(rng.integers(2, 5))
    sizes = [int(rng.integers(min_region, max_region + 1)) for _ in range(n_regions)]
    bus_id = 1
    region_buses: list[list[int]] = []
    edges: list[tuple[int, int]] = []
    for size in sizes:
        ids = list(range(bus_id, bus_id + size))
        bus_id += size
        region_buses.append(ids)
        for a, b in zip(ids, ids[1:] + ids[:1]):
            edges.append((a, b))
        # chords keep the region 2-edge-connected and add mesh
        n_chords = int(rng.integers(0, max(1, size - 2)))
        for _ in range(n_chords):
            a, b = rng.choice(ids, size=2, replace=False)
            key = (min(int(a), int(b)), max(int(a), int(b)))
            if key not in [(min(u, v), max(u, v)) for u, v in edges]:
                edges.append(key)
    # random tree over regions; one bridge per tree edge
    for child in range(1, n_regions):
        parent = int(rng.integers(0, child))
        a = int(rng.choice(region_buses[parent]))
        b = int(rng.choice(region_buses[child]))
        edges.append((a, b))

    n = bus_id - 1
    n_gen = max(2, n // 2)
    gen_ids = set(
        int(i) for i in rng.choice(np.arange(1, n + 1), size=n_gen, replace=False)
    )
    demand = np.zeros(n + 1)
    for i in range(1, n + 1):
        demand[i] = rng.uniform(0.2, 1.0) if i in gen_ids else -rng.uniform(0.2, 1.0)
    demand[1:] -= demand[1:].sum() / n  # balance
    box = box_width
    buses = tuple(
        Bus(
            id=i,
            kind="generator" if i in gen_ids else "load",
            demand=float(demand[i]),
            d_min=-box if i in gen_ids else 0.0,
            d_max=box if i in gen_ids else 0.0,
            droop_K=float(rng.uniform(0.5, 2.0)) if i in gen_ids else 0.0,
            damping_D=float(rng.uniform(0.0, 0.2)),
        )
        for i in range(1, n + 1)
    )
    lines = tuple(
        Line(
            id=e + 1,
            from_bus=a,
            to_bus=b,
            susceptance=float(rng.uniform(*susceptance_range)),
            capacity=1.0,  # placeholder, fixed below from base flows
        )
        for e, (a, b) in enumerate(edges)
    )
    net = Network(base_mva=100.0, buses=buses, lines=lines, areas=(frozenset(range(1, n + 1)),))
    # rate every line comfortably above its base loading
    sol = dc_power_flow(net, net.base_injections())
    caps = {
        lid: max(1.5 * abs(fl) + 0.5, 1.0)
        for lid, fl in sol.flow_by_id().items()
    }
    lines = tuple(
        Line(id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
             susceptance=ln.susceptance, capacity=caps[ln.id])
        for ln in net.lines
    )
    partition = tree_partition(
        Network(base_mva=100.0, buses=buses, lines=lines, areas=net.areas)
    )
    return Network(base_mva=100.0, buses=buses, lines=lines, areas=partition.regions)


def random_connected_network(
    rng: np.random.Generator,
    n: int,
    extra_edges: int | None = None,
    susceptance_range: tuple[float, float] = (0.5, 3.0),
) -> Network:
    """Random connected graph: spanning tree plus extra random edges."""
    perm = rng.permutation(np.arange(1, n + 1))
    edges: set[tuple[int, int]] = set()
    for i in range(1, n):
        a = int(perm[i])
        b = int(perm[rng.integers(0, i)])
        edges.add((min(a, b), max(a, b)))
    if extra_edges is None:
        extra_edges = int(rng.integers(0, n))
    tries = 0
    while len(edges) < n - 1 + extra_edges and tries < 10 * n:
        a, b = rng.choice(np.arange(1, n + 1), size=2, replace=False)
        key = (min(int(a), int(b)), max(int(a), int(b)))
        if key not in edges:
            edges.add(key)
        tries += 1
    buses = tuple(Bus(id=i, kind="load", demand=0.0) for i in range(1, n + 1))
    lines = tuple(
        Line(id=e + 1, from_bus=a, to_bus=b,
             susceptance=float(rng.uniform(*susceptance_range)), capacity=10.0)
        for e, (a, b) in enumerate(sorted(edges))
    )
    return Network(base_mva=100.0, buses=buses, lines=lines,
                   areas=(frozenset(range(1, n + 1)),))


def secure_scenario(network: Network, seed: int = 0) -> Scenario:
    """Wrap the base dispatch as a scenario (base networks are built secure)."""
    return Scenario(network=network, injections=network.base_injections(), seed=seed)
