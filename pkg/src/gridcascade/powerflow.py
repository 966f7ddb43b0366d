"""DC power-flow solves on (possibly islanded) networks.

Each island gets its own reduced-Laplacian solve with the island's smallest
bus id pinned as angle reference; flows follow from f = B C^T theta.  The
spanning-forest weight at the bottom is a brute-force test oracle for the
matrix-forest identity, not a production path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .graph import incidence, islands
from .netmodel import Network

BALANCE_TOL = 1e-9


class IslandImbalanceError(ValueError):
    """Injections do not sum to zero within some island."""


@dataclass(frozen=True)
class FlowSolution:
    """Bus angles and line flows of one DC solve."""

    theta: np.ndarray  # per bus, radians; one slack pinned to 0 per island
    flows: np.ndarray  # per surviving line, aligned with line_ids
    line_ids: tuple[int, ...]

    def flow_by_id(self) -> dict[int, float]:
        return {lid: float(f) for lid, f in zip(self.line_ids, self.flows)}


def dc_power_flow(
    network: Network,
    injections: np.ndarray,
    removed_lines: frozenset[int] | set[int] = frozenset(),
) -> FlowSolution:
    """Solve the DC power flow per island of the surviving topology."""
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (network.n_buses,):
        raise ValueError("injections must have one entry per bus")
    inc = incidence(network, frozenset(removed_lines))
    idx = network.bus_index()
    theta = np.zeros(network.n_buses)
    for comp in islands(network, frozenset(removed_lines)):
        members = sorted(comp)
        rows = [idx[b] for b in members]
        imbalance = float(np.sum(injections[rows]))
        if abs(imbalance) > BALANCE_TOL * max(1.0, float(np.abs(injections).max())):
            raise IslandImbalanceError(
                f"island {members[0]}..: injections sum to {imbalance:.3e}"
            )
        if len(rows) == 1:
            continue
        C_i = inc.C[rows, :]
        keep_cols = np.flatnonzero(np.abs(C_i).sum(axis=0) > 0)
        C_i = C_i[:, keep_cols]
        L = (C_i * inc.B[keep_cols]) @ C_i.T
        # smallest bus id is the slack (rows are sorted by bus id already)
        red = slice(1, len(rows))
        try:
            cho = scipy.linalg.cho_factor(L[red, red])
            x = scipy.linalg.cho_solve(cho, injections[rows][red])
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover - connected islands are SPD
            raise RuntimeError("singular reduced Laplacian on a connected island") from exc
        for r, row in enumerate(rows[1:]):
            theta[row] = x[r]
    flows = inc.B * (inc.C.T @ theta)
    residual = inc.C @ flows - injections
    if np.abs(residual).max() > 1e-7:  # pragma: no cover - guards solver regressions
        raise RuntimeError(f"flow conservation violated: {np.abs(residual).max():.3e}")
    return FlowSolution(theta=theta, flows=flows, line_ids=inc.line_ids)


def overloaded_lines(
    network: Network,
    flows: dict[int, float] | FlowSolution,
    rel_tol: float = 1e-9,
) -> frozenset[int]:
    """Lines whose flow strictly exceeds the rating (with a relative guard band)."""
    by_id = flows.flow_by_id() if isinstance(flows, FlowSolution) else flows
    caps = {ln.id: ln.capacity for ln in network.lines}
    return frozenset(
        lid for lid, f in by_id.items() if abs(f) > caps[lid] * (1.0 + rel_tol)
    )


def deviation_flow_matrix(
    network: Network,
    removed_lines: frozenset[int] | set[int] = frozenset(),
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Linear map from balanced bus injections to line flows, per island.

    Returns ``M`` with ``flows = M @ injections`` for any injection vector that
    is balanced within every island of the surviving topology.
    """
    inc = incidence(network, frozenset(removed_lines))
    idx = network.bus_index()
    n = network.n_buses
    Z = np.zeros((n, n))
    for comp in islands(network, frozenset(removed_lines)):
        rows = [idx[b] for b in sorted(comp)]
        if len(rows) == 1:
            continue
        C_i = inc.C[rows, :]
        keep_cols = np.flatnonzero(np.abs(C_i).sum(axis=0) > 0)
        C_i = C_i[:, keep_cols]
        L = (C_i * inc.B[keep_cols]) @ C_i.T
        red_rows = rows[1:]
        Linv = np.linalg.inv(L[1:, 1:])
        Z[np.ix_(red_rows, red_rows)] = Linv
    M = inc.B[:, None] * (inc.C.T @ Z)
    return M, inc.line_ids


# ---------------------------------------------------------------------------
# Spanning-forest oracle
# ---------------------------------------------------------------------------


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def forest_weight(network: Network, set1, set2) -> float:
    """Total weight of spanning forests with exactly two trees separating set1/set2.

    Enumerates all edge subsets of size |N|-2 (brute force, intended for
    |N| <= 12): the subset must be acyclic with exactly two components, one
    containing all of ``set1`` and the other all of ``set2``.  The weight of a
    forest is the product of its edge susceptances.
    """
    s1, s2 = frozenset(set1), frozenset(set2)
    if not s1 or not s2:
        raise ValueError("both bus sets must be nonempty")
    if s1 & s2:
        raise ValueError("bus sets must be disjoint")
    bus_ids = [b.id for b in network.buses]
    n = len(bus_ids)
    total = 0.0
    for combo in itertools.combinations(network.lines, n - 2):
        uf = _UnionFind(bus_ids)
        ok = True
        for ln in combo:
            if not uf.union(ln.from_bus, ln.to_bus):
                ok = False
                break
        if not ok:
            continue
        # acyclic with n-2 edges => exactly two components
        roots1 = {uf.find(b) for b in s1}
        roots2 = {uf.find(b) for b in s2}
        if len(roots1) == 1 and len(roots2) == 1 and roots1 != roots2:
            chi = 1.0
            for ln in combo:
                chi *= ln.susceptance
            total += chi
    return total
