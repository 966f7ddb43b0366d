"""Equilibrium computation for droop control and the AGC baseline, plus DC-OPF.

Droop solves the per-island balance equation

    sum_j clamp(K_j * nu, d_min_j, d_max_j) + (sum_j D_j) * nu = sum_j r_j

by monotone bisection; the uniform island frequency deviation is ``nu`` and
each bus absorbs its clamped share.  AGC restores frequency and zero area
control error by allocating each (area x island) piece's imbalance to its own
generators, shedding load pro rata as the terminal fallback.  Neither
controller enforces line limits; overloads are the cascade engine's business.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qp
from .graph import islands
from .netmodel import KIND_GENERATOR, Network
from .powerflow import dc_power_flow, deviation_flow_matrix


@dataclass(frozen=True)
class EquilibriumPoint:
    """Closed-loop equilibrium in deviation variables.

    ``d`` uses the absorb convention (positive reduces net injection) and is
    the *total* response, so the deviation injections ``r - d - D*omega``
    balance per island and drive the flow deviations.  ``d`` stays inside the
    box handed to the controller except where balancing forced it out (load
    shedding under a lifted box, or terminal forced rebalancing); those
    portions are broken out in ``shed`` (load reduction, d pushed below the
    box) and ``curtailed`` (generation backed off beyond the box).
    """

    omega: np.ndarray  # per-bus frequency deviation
    d: np.ndarray  # per-bus injection response
    flows: np.ndarray  # per surviving line flow deviation
    line_ids: tuple[int, ...]
    theta: np.ndarray  # per-bus angle deviation
    shed: np.ndarray  # per-bus load shed (>= 0)
    curtailed: np.ndarray  # per-bus forced generation curtailment (>= 0)
    stable: bool = True  # False when forced balancing was required

    def total_shed(self) -> float:
        return float(np.sum(self.shed))


@dataclass(frozen=True)
class DispatchResult:
    injections: np.ndarray  # absolute per-bus injections, balanced
    cost: float


def _forced_rebalance(
    network: Network,
    members: list[int],
    residual: float,
    shed: np.ndarray,
    curtailed: np.ndarray,
) -> None:
    """Absorb an unservable imbalance by shedding or curtailing pro rata.

    ``residual > 0`` is surplus power (curtail generation), ``residual < 0``
    is unserved demand (shed load).  Mutates ``shed``/``curtailed`` in place.
    """
    idx = network.bus_index()
    if residual < 0:
        loads = [b for b in (network.buses[idx[m]] for m in members) if b.local_load > 0]
        targets = loads if loads else [network.buses[idx[m]] for m in members]
        weights = np.array([b.local_load for b in targets])
        if weights.sum() <= 0:
            weights = np.ones(len(targets))
        weights /= weights.sum()
        for b, wgt in zip(targets, weights):
            shed[idx[b.id]] += -residual * wgt
    else:
        gens = [b for b in (network.buses[idx[m]] for m in members) if b.kind == KIND_GENERATOR]
        targets = gens if gens else [network.buses[idx[m]] for m in members]
        weights = np.array([max(b.droop_K, 0.0) for b in targets])
        if weights.sum() <= 0:
            weights = np.ones(len(targets))
        weights /= weights.sum()
        for b, wgt in zip(targets, weights):
            curtailed[idx[b.id]] += residual * wgt


def droop_equilibrium(
    network: Network,
    r: np.ndarray,
    removed_lines: frozenset[int] | set[int] = frozenset(),
    d_lo: np.ndarray | None = None,
    d_hi: np.ndarray | None = None,
) -> EquilibriumPoint:
    """Primary-response equilibrium: per-island proportional absorption."""
    r = np.asarray(r, dtype=float)
    idx = network.bus_index()
    n = network.n_buses
    d_lo = np.array([b.d_min for b in network.buses]) if d_lo is None else np.asarray(d_lo, float)
    d_hi = np.array([b.d_max for b in network.buses]) if d_hi is None else np.asarray(d_hi, float)
    K = np.array([b.droop_K for b in network.buses])
    D = np.array([b.damping_D for b in network.buses])

    omega = np.zeros(n)
    d = np.zeros(n)
    shed = np.zeros(n)
    curtailed = np.zeros(n)
    stable = True
    for comp in islands(network, frozenset(removed_lines)):
        members = sorted(comp)
        rows = [idx[m] for m in members]
        target = float(np.sum(r[rows]))
        nu, d_isl, residual = qp.clamped_balance(
            K[rows], d_lo[rows], d_hi[rows], float(np.sum(D[rows])), target
        )
        # Newton polish: distribute the bisection leftover over unclamped buses
        leftover = target - float(np.sum(d_isl)) - float(np.sum(D[rows])) * nu - residual
        wts = float(np.sum(K[rows][(d_isl > d_lo[rows]) & (d_isl < d_hi[rows])])) + float(
            np.sum(D[rows])
        )
        if wts > 0 and leftover != 0.0:
            nu += leftover / wts
            d_isl = np.clip(K[rows] * nu, d_lo[rows], d_hi[rows])
        omega[rows] = nu
        d[rows] = d_isl
        if residual != 0.0:
            stable = False
            _forced_rebalance(network, members, residual, shed, curtailed)
    d = d - shed + curtailed  # fold forced balancing into the total response
    inj = r - d - D * omega
    sol = dc_power_flow(network, inj, frozenset(removed_lines))
    return EquilibriumPoint(
        omega=omega,
        d=d,
        flows=sol.flows,
        line_ids=sol.line_ids,
        theta=sol.theta,
        shed=shed,
        curtailed=curtailed,
        stable=stable,
    )


def agc_equilibrium(
    network: Network,
    r: np.ndarray,
    removed_lines: frozenset[int] | set[int] = frozenset(),
    d_lo: np.ndarray | None = None,
    d_hi: np.ndarray | None = None,
) -> EquilibriumPoint:
    """Secondary-control baseline: zero frequency and zero area control error.

    Each (control area x island) piece balances its own imbalance through its
    generators in proportion to their participation factors; load is shed pro
    rata when the piece cannot balance.  Line limits are not consulted.
    """
    r = np.asarray(r, dtype=float)
    idx = network.bus_index()
    n = network.n_buses
    d_lo = np.array([b.d_min for b in network.buses]) if d_lo is None else np.asarray(d_lo, float)
    d_hi = np.array([b.d_max for b in network.buses]) if d_hi is None else np.asarray(d_hi, float)
    K = np.array([b.droop_K for b in network.buses])

    d = np.zeros(n)
    shed = np.zeros(n)
    curtailed = np.zeros(n)
    stable = True
    for comp in islands(network, frozenset(removed_lines)):
        for area in network.areas:
            piece = sorted(comp & area)
            if not piece:
                continue
            rows = [idx[m] for m in piece]
            target = float(np.sum(r[rows]))
            if target == 0.0:
                continue
            gen_mask = np.array(
                [network.buses[i].kind == KIND_GENERATOR for i in rows]
            )
            K_piece = np.where(gen_mask, K[rows], 0.0)
            nu, d_piece, residual = qp.clamped_balance(
                K_piece, d_lo[rows], d_hi[rows], 0.0, target
            )
            leftover = target - float(np.sum(d_piece)) - residual
            wts = float(np.sum(K_piece[(d_piece > d_lo[rows]) & (d_piece < d_hi[rows])]))
            if wts > 0 and leftover != 0.0:
                nu += leftover / wts
                d_piece = np.clip(K_piece * nu, d_lo[rows], d_hi[rows])
            d[rows] = d_piece
            if residual != 0.0:
                stable = False
                _forced_rebalance(network, piece, residual, shed, curtailed)
    d = d - shed + curtailed  # fold forced balancing into the total response
    inj = r - d
    sol = dc_power_flow(network, inj, frozenset(removed_lines))
    return EquilibriumPoint(
        omega=np.zeros(n),
        d=d,
        flows=sol.flows,
        line_ids=sol.line_ids,
        theta=sol.theta,
        shed=shed,
        curtailed=curtailed,
        stable=stable,
    )


def dc_opf(
    network: Network,
    injections: np.ndarray,
    gen_costs: dict[int, float] | None = None,
) -> DispatchResult:
    """Dispatch the generators against fixed loads at minimum quadratic cost.

    ``injections`` supplies the fixed net injections at non-generator buses
    (generator entries are ignored and replaced by the dispatch).  Generator
    output ranges are the absolute ranges implied by each bus's base point and
    response box; costs default to identical quadratics.
    """
    injections = np.asarray(injections, dtype=float)
    gen_pos = network.generator_positions()
    if not gen_pos:
        raise ValueError("network has no generator buses to dispatch")
    n_g = len(gen_pos)
    base = network.base_injections()
    # absolute net-injection range of each generator bus
    g_lo = np.array([base[i] - network.buses[i].d_max for i in gen_pos])
    g_hi = np.array([base[i] - network.buses[i].d_min for i in gen_pos])
    fixed = injections.copy()
    fixed[gen_pos] = 0.0
    demand_total = -float(np.sum(fixed))

    costs = np.array(
        [
            network.buses[pos].gen_cost if network.buses[pos].gen_cost is not None else 1.0
            for pos in gen_pos
        ]
    )
    if gen_costs:
        for k, pos in enumerate(gen_pos):
            costs[k] = gen_costs.get(network.buses[pos].id, costs[k])

    M, line_ids = deviation_flow_matrix(network)
    caps = network.capacities()
    finite = caps < 1e8
    M_g = M[:, gen_pos]
    f_fixed = M @ fixed
    rows = []
    rhs = []
    for e in np.flatnonzero(finite):
        rows.append(M_g[e])
        rhs.append(caps[e] - f_fixed[e])
        rows.append(-M_g[e])
        rhs.append(caps[e] + f_fixed[e])
    G = np.array(rows) if rows else None
    h = np.array(rhs) if rhs else None
    Aeq = np.ones((1, n_g))
    beq = np.array([demand_total])
    # cost referenced to the low end of the range (production above minimum)
    w = 2.0 * costs
    q = -2.0 * costs * g_lo
    res = qp.solve_qp(w, q, Aeq, beq, G, h, lb=g_lo, ub=g_hi)
    p = fixed.copy()
    p[gen_pos] = res.x
    cost = float(np.sum(costs * (res.x - g_lo) ** 2))
    return DispatchResult(injections=p, cost=cost)
