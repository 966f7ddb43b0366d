"""Incidence/Laplacian views and the tree-partition algebra.

The irreducible tree-partition of a connected graph has the 2-edge-connected
components as regions and the cut edges as bridges; collapsing regions yields
a tree.  Region indices are assigned by smallest contained bus id so that
results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import Network


@dataclass(frozen=True)
class IncidenceView:
    """Oriented incidence matrix C and susceptance diagonal of a line subset."""

    C: np.ndarray  # shape (n_buses, n_lines), entries in {-1, 0, +1}
    B: np.ndarray  # susceptances, shape (n_lines,)
    line_ids: tuple[int, ...]


def incidence(network: Network, removed_lines: frozenset[int] | set[int] = frozenset()) -> IncidenceView:
    """Build the incidence view of the surviving lines (source +1, target -1)."""
    idx = network.bus_index()
    keep = [ln for ln in network.lines if ln.id not in removed_lines]
    C = np.zeros((network.n_buses, len(keep)))
    B = np.empty(len(keep))
    for e, ln in enumerate(keep):
        C[idx[ln.from_bus], e] = 1.0
        C[idx[ln.to_bus], e] = -1.0
        B[e] = ln.susceptance
    return IncidenceView(C=C, B=B, line_ids=tuple(ln.id for ln in keep))


@dataclass(frozen=True)
class TreePartition:
    """Regions and bridges of the irreducible tree-partition."""

    regions: tuple[frozenset[int], ...]
    bridges: frozenset[int]  # line ids
    region_of: dict[int, int]  # bus id -> region index

    @property
    def n_regions(self) -> int:
        return len(self.regions)


@dataclass(frozen=True)
class ReducedMultigraph:
    """Multigraph obtained by collapsing each partition class to a super node."""

    n_nodes: int
    edges: tuple[tuple[int, int, int], ...]  # (region_u, region_v, line id)

    def is_connected(self) -> bool:
        if self.n_nodes == 0:
            return True
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v, _ in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_nodes


def _adjacency(network: Network, removed_lines: frozenset[int]) -> dict[int, list[tuple[int, int]]]:
    adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in network.buses}
    for ln in network.lines:
        if ln.id in removed_lines:
            continue
        adj[ln.from_bus].append((ln.to_bus, ln.id))
        adj[ln.to_bus].append((ln.from_bus, ln.id))
    return adj


def find_bridges(network: Network, removed_lines: frozenset[int] | set[int] = frozenset()) -> frozenset[int]:
    """Cut edges of the surviving graph via an iterative lowpoint DFS."""
    adj = _adjacency(network, frozenset(removed_lines))
    preorder: dict[int, int] = {}
    low: dict[int, int] = {}
    bridges: set[int] = set()
    counter = 0
    for root in adj:
        if root in preorder:
            continue
        # stack holds (node, incoming line id, iterator over neighbours)
        preorder[root] = low[root] = counter
        counter += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            node, in_line, it = stack[-1]
            advanced = False
            for nbr, line_id in it:
                if line_id == in_line:
                    continue
                if nbr not in preorder:
                    preorder[nbr] = low[nbr] = counter
                    counter += 1
                    stack.append((nbr, line_id, iter(adj[nbr])))
                    advanced = True
                    break
                low[node] = min(low[node], preorder[nbr])
            if not advanced:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[node])
                    if low[node] > preorder[parent]:
                        bridges.add(in_line)
    return frozenset(bridges)


def islands(network: Network, removed_lines: frozenset[int] | set[int] = frozenset()) -> tuple[frozenset[int], ...]:
    """Connected components of the surviving graph, ordered by smallest bus id."""
    adj = _adjacency(network, frozenset(removed_lines))
    seen: set[int] = set()
    comps: list[frozenset[int]] = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v, _ in adj[u]:
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        comps.append(frozenset(comp))
    return tuple(sorted(comps, key=min))


def tree_partition(network: Network) -> TreePartition:
    """Irreducible tree-partition: 2-edge-connected components and cut edges."""
    if not network.is_connected():
        raise ValueError("tree_partition requires a connected network")
    bridges = find_bridges(network)
    regions = islands(network, bridges)
    region_of = {bus: r for r, reg in enumerate(regions) for bus in reg}
    return TreePartition(regions=regions, bridges=bridges, region_of=region_of)


def reduced_multigraph(
    network: Network, partition: tuple[frozenset[int], ...] | list[frozenset[int]]
) -> tuple[ReducedMultigraph, bool]:
    """Collapse an arbitrary bus partition; also report whether it is a tree."""
    part = [frozenset(p) for p in partition]
    covered: set[int] = set()
    for p in part:
        if covered & p:
            raise ValueError("partition classes overlap")
        covered |= p
    if covered != {b.id for b in network.buses}:
        raise ValueError("partition must cover all buses")
    of = {bus: i for i, p in enumerate(part) for bus in p}
    edges = tuple(
        (of[ln.from_bus], of[ln.to_bus], ln.id)
        for ln in network.lines
        if of[ln.from_bus] != of[ln.to_bus]
    )
    rm = ReducedMultigraph(n_nodes=len(part), edges=edges)
    is_tree = rm.is_connected() and len(edges) == len(part) - 1
    return rm, is_tree


def closure(
    network: Network, partition: TreePartition, region: int
) -> tuple[frozenset[int], frozenset[int]]:
    """Boundary buses of a region and the region's closure."""
    members = partition.regions[region]
    boundary: set[int] = set()
    for ln in network.lines:
        if ln.from_bus in members and ln.to_bus not in members:
            boundary.add(ln.to_bus)
        elif ln.to_bus in members and ln.from_bus not in members:
            boundary.add(ln.from_bus)
    return frozenset(boundary), frozenset(members | boundary)


def associated_regions(
    partition: TreePartition, failed_lines: dict[int, tuple[int, int]] | list[tuple[int, int]]
) -> frozenset[int]:
    """Regions containing an endpoint of any failed line.

    ``failed_lines`` supplies endpoint pairs (the lines themselves may already
    be absent from the surviving topology).
    """
    pairs = failed_lines.values() if isinstance(failed_lines, dict) else failed_lines
    hit: set[int] = set()
    for u, v in pairs:
        hit.add(partition.region_of[u])
        hit.add(partition.region_of[v])
    return frozenset(hit)
