"""Staged failure propagation: trip, re-equilibrate, check overloads, repeat.

Each stage removes the newly tripped lines, converts their pre-trip flows
into bus imbalances (the flow a dead line carried reappears as a surplus at
its source and a deficit at its target), runs the selected controller to a
new equilibrium, rolls the absolute operating point forward, and trips
whatever now exceeds its rating.  The cascade stops when no line is
overloaded; a stage-count guard reports runaway traces instead of looping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import uc as uc_mod
from .controllers import EquilibriumPoint, agc_equilibrium, droop_equilibrium
from .netmodel import KIND_GENERATOR, Network, Scenario, effective_box
from .powerflow import dc_power_flow, overloaded_lines

CONTROLLERS = ("droop", "agc", "uc")


@dataclass
class CascadeConfig:
    controller: str = "uc"
    overload_rel_tol: float = 1e-9
    detect: str = "exact"  # "exact" (phase-1 LP) or "dynamic" (dual divergence)
    ladder: list | None = None  # explicit lifting actions; None = default ladder
    dual_cap: float | None = None
    dual_window: float = 10.0
    pd_step: float = 0.01
    pd_horizon: float = 3000.0
    max_stage_factor: int = 10

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.detect not in ("exact", "dynamic"):
            raise ValueError(f"unknown detection mode {self.detect!r}")


@dataclass
class StageRecord:
    stage: int
    tripped: frozenset[int]  # cumulative failed set at this stage
    new_failures: frozenset[int]  # lines that will trip at stage end
    equilibrium: EquilibriumPoint
    flows_abs: dict[int, float]
    shed: float
    critical: bool
    lifting: list = field(default_factory=list)


@dataclass
class CascadeTrace:
    initial_failure: frozenset[int]
    controller: str
    stages: list[StageRecord]
    final_status: str  # "contained" | "exhausted"
    total_shed: float
    cumulative_d: np.ndarray  # per-bus response accumulated over stages
    unstable: bool  # some island needed forced balancing

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def successive_failures(self) -> bool:
        return any(s.new_failures for s in self.stages)

    def to_json(self, network: Network) -> str:
        line_pairs = {ln.id: ln.pair for ln in network.lines}
        bus_ids = [b.id for b in network.buses]
        doc = {
            "controller": self.controller,
            "initial_failure": sorted(self.initial_failure),
            "final_status": self.final_status,
            "total_shed": self.total_shed,
            "unstable": self.unstable,
            "stages": [
                {
                    "stage": s.stage,
                    "tripped": sorted(s.tripped),
                    "tripped_pairs": [line_pairs[i] for i in sorted(s.tripped)],
                    "new_failures": sorted(s.new_failures),
                    "critical": s.critical,
                    "lifting": [a.describe() for a in s.lifting],
                    "shed": s.shed,
                    "omega": dict(zip(bus_ids, s.equilibrium.omega.tolist())),
                    "d": dict(zip(bus_ids, s.equilibrium.d.tolist())),
                    "flows_abs": {str(k): v for k, v in sorted(s.flows_abs.items())},
                }
                for s in self.stages
            ],
        }
        return json.dumps(doc, indent=2)


def released_imbalance(
    network: Network, tripped: dict[int, float]
) -> np.ndarray:
    """Bus imbalance created by tripping lines with the given absolute flows."""
    idx = network.bus_index()
    r = np.zeros(network.n_buses)
    by_id = {ln.id: ln for ln in network.lines}
    for lid, flow in tripped.items():
        ln = by_id[lid]
        r[idx[ln.from_bus]] += flow
        r[idx[ln.to_bus]] -= flow
    return r


def _associated_areas(network: Network, failed_ids: frozenset[int]) -> frozenset[int]:
    """Control areas containing an endpoint of any failed line."""
    by_id = {ln.id: ln for ln in network.lines}
    hit: set[int] = set()
    for lid in failed_ids:
        ln = by_id[lid]
        for a, area in enumerate(network.areas):
            if ln.from_bus in area or ln.to_bus in area:
                hit.add(a)
    return frozenset(hit)


def _uc_stage(
    network: Network,
    r: np.ndarray,
    removed: frozenset[int],
    flows_abs: dict[int, float],
    d_lo: np.ndarray,
    d_hi: np.ndarray,
    shed_cap: np.ndarray,
    failed_so_far: frozenset[int],
    config: CascadeConfig,
) -> tuple[EquilibriumPoint, bool, list]:
    caps = {ln.id: ln.capacity for ln in network.lines}
    headroom = {
        lid: (-caps[lid] - flows_abs[lid], caps[lid] - flows_abs[lid])
        for lid in flows_abs
    }
    problem = uc_mod.build_uc_problem(
        network, network.areas, r, removed, headroom, d_lo=d_lo, d_hi=d_hi,
        shed_cap=shed_cap,
    )
    if config.detect == "dynamic":
        traj = uc_mod.integrate_primal_dual(
            problem,
            step=config.pd_step,
            horizon=config.pd_horizon,
            dual_cap=config.dual_cap,
            dual_window=config.dual_window,
        )
        critical = traj.verdict.status == "diverged"
        if traj.verdict.status == "undecided":
            critical = not uc_mod.check_feasible(problem).feasible
    else:
        critical = not uc_mod.check_feasible(problem).feasible
    applied: list = []
    if critical:
        ladder = config.ladder
        if ladder is None:
            ladder = uc_mod.default_ladder(
                problem, _associated_areas(network, failed_so_far)
            )
        problem, applied = uc_mod.lift_constraints(problem, ladder)
    return uc_mod.solve_uc(problem), critical, applied


def run_cascade(
    scenario: Scenario,
    initial_failure: frozenset[int] | set[int],
    controller: str | None = None,
    config: CascadeConfig | None = None,
) -> CascadeTrace:
    """Simulate the staged cascade triggered by an initial line-failure set."""
    config = config or CascadeConfig()
    if controller is not None:
        config = CascadeConfig(**{**config.__dict__, "controller": controller})
    network = scenario.network
    line_ids = {ln.id for ln in network.lines}
    initial = frozenset(initial_failure)
    if not initial:
        raise ValueError("initial failure set must be nonempty")
    if not initial <= line_ids:
        raise ValueError(f"unknown line ids {sorted(initial - line_ids)}")

    p = np.asarray(scenario.injections, dtype=float).copy()
    base_flows = dc_power_flow(network, p)
    if overloaded_lines(network, base_flows, config.overload_rel_tol):
        raise ValueError("scenario dispatch is not secure (pre-failure overloads)")
    flows_abs = base_flows.flow_by_id()
    d_lo, d_hi = effective_box(network, p)
    D = np.array([b.damping_D for b in network.buses])
    # sheddable load at the operating point: the realized demand at load
    # buses, the fixed local load elsewhere; shrinks as the cascade sheds
    shed_cap = np.array(
        [
            max(0.0, -p[i]) if b.kind != KIND_GENERATOR else b.local_load
            for i, b in enumerate(network.buses)
        ]
    )

    tripped: frozenset[int] = frozenset()
    to_trip = initial
    stages: list[StageRecord] = []
    cumulative_d = np.zeros(network.n_buses)
    total_shed = 0.0
    unstable = False
    status = "exhausted"
    max_stages = config.max_stage_factor * max(1, network.n_lines)

    for stage_no in range(1, max_stages + 1):
        newly = {lid: flows_abs.pop(lid) for lid in to_trip}
        tripped = tripped | frozenset(newly)
        r = released_imbalance(network, newly)
        critical = False
        applied: list = []
        if config.controller == "droop":
            ep = droop_equilibrium(network, r, tripped, d_lo=d_lo, d_hi=d_hi)
        elif config.controller == "agc":
            ep = agc_equilibrium(network, r, tripped, d_lo=d_lo, d_hi=d_hi)
        else:
            ep, critical, applied = _uc_stage(
                network, r, tripped, flows_abs, d_lo, d_hi, shed_cap, tripped, config
            )
        # roll the absolute operating point forward (ep.d is the total
        # response, so the new flows carry exactly p - d - D*omega)
        dev = dict(zip(ep.line_ids, ep.flows))
        for lid in flows_abs:
            flows_abs[lid] += dev[lid]
        p = p - ep.d - D * ep.omega
        in_box = np.clip(ep.d, d_lo, d_hi)
        d_lo = d_lo - in_box
        d_hi = d_hi - in_box
        shed_cap = np.maximum(shed_cap - ep.shed, 0.0)
        cumulative_d += ep.d
        total_shed += ep.total_shed()
        unstable = unstable or not ep.stable
        new_failures = overloaded_lines(network, flows_abs, config.overload_rel_tol)
        stages.append(
            StageRecord(
                stage=stage_no,
                tripped=tripped,
                new_failures=new_failures,
                equilibrium=ep,
                flows_abs=dict(flows_abs),
                shed=ep.total_shed(),
                critical=critical,
                lifting=applied,
            )
        )
        if not new_failures:
            status = "contained"
            break
        to_trip = new_failures

    return CascadeTrace(
        initial_failure=initial,
        controller=config.controller,
        stages=stages,
        final_status=status,
        total_shed=total_shed,
        cumulative_d=cumulative_d,
        unstable=unstable,
    )
