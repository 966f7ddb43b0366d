"""Executable property suites for the localization and detection guarantees.

Each suite returns a ``SuiteResult`` so it can back both the ``verify`` CLI
subcommand and the acceptance tests.  The suites check, numerically:

* bridge nulling: after a non-critical failure the optimal response leaves
  zero flow deviation on every surviving tie-line of the tree-partition;
* localization: buses in regions not touching the failure do not move;
* equal potentials: with zero injections in one region and balanced
  injections elsewhere, any Laplacian solution is constant on that region's
  closure;
* the matrix-forest identity relating reduced-Laplacian minors to two-tree
  spanning forest weights;
* the dual-divergence detector against the phase-1 feasibility oracle;
* droop equilibria against an independent projected-gradient solve;
* staged cascades in deviation form against from-scratch DC recomputation;
* tree-partition regions/bridges against brute-force definitions.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import uc as uc_mod
from .cascade import run_cascade
from .controllers import droop_equilibrium
from .graph import closure, islands, reduced_multigraph, tree_partition
from .netmodel import Bus, Line, Network, Scenario
from .netgen import random_connected_network, random_tree_partitioned_network
from .powerflow import dc_power_flow, forest_weight


@dataclass
class SuiteResult:
    name: str
    total: int
    failures: int
    worst: float  # worst residual/error observed (suite-specific units)
    seconds: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (
            f"[{mark}] {self.name}: {self.total - self.failures}/{self.total} ok, "
            f"worst {self.worst:.3e}, {self.seconds:.1f}s"
            + (f" ({self.detail})" if self.detail else "")
        )


def _dispatch_and_fail(rng: np.random.Generator, net: Network):
    """Pick a random line of a secure base dispatch as the initial failure."""
    sol = dc_power_flow(net, net.base_injections())
    flows = sol.flow_by_id()
    line = net.lines[int(rng.integers(0, net.n_lines))]
    return flows, line


def localization_suite(n_cases: int = 200, seed: int = 2024) -> tuple[SuiteResult, SuiteResult]:
    """Bridge-nulling and localization checks on random tree-partitioned nets.

    Non-critical single-line failures only (critical draws are redrawn).
    Returns the (bridge-nulling, localization) suite results.
    """
    rng = np.random.default_rng(seed)
    t0 = time.time()
    worst_bridge = 0.0
    worst_local = 0.0
    fail_bridge = 0
    fail_local = 0
    done = 0
    while done < n_cases:
        net = random_tree_partitioned_network(rng)
        partition = tree_partition(net)
        if partition.n_regions < 2:
            continue
        flows, line = _dispatch_and_fail(rng, net)
        f_e = flows.pop(line.id)
        idx = net.bus_index()
        r = np.zeros(net.n_buses)
        r[idx[line.from_bus]] += f_e
        r[idx[line.to_bus]] -= f_e
        caps = {ln.id: ln.capacity for ln in net.lines}
        headroom = {lid: (-caps[lid] - fl, caps[lid] - fl) for lid, fl in flows.items()}
        problem = uc_mod.build_uc_problem(
            net, partition.regions, r, {line.id}, headroom
        )
        if not uc_mod.check_feasible(problem).feasible:
            continue  # redraw: suite covers non-critical failures
        point = uc_mod.solve_uc(problem)
        dev = dict(zip(point.line_ids, point.flows))
        bridge_dev = max(
            (abs(dev[b]) for b in partition.bridges if b != line.id), default=0.0
        )
        worst_bridge = max(worst_bridge, bridge_dev)
        if bridge_dev > 1e-6:
            fail_bridge += 1
        associated = {
            partition.region_of[line.from_bus],
            partition.region_of[line.to_bus],
        }
        off_region = [
            idx[b]
            for reg in range(partition.n_regions)
            if reg not in associated
            for b in partition.regions[reg]
        ]
        local_dev = float(np.abs(point.d[off_region]).max(initial=0.0))
        worst_local = max(worst_local, local_dev)
        if local_dev > 1e-6:
            fail_local += 1
        done += 1
    dt = time.time() - t0
    return (
        SuiteResult("bridge-nulling", n_cases, fail_bridge, worst_bridge, dt),
        SuiteResult("localization", n_cases, fail_local, worst_local, dt),
    )


def equal_potential_suite(n_cases: int = 200, seed: int = 77) -> SuiteResult:
    """Closure equal-potential property of tree-partitioned Laplacians."""
    rng = np.random.default_rng(seed)
    t0 = time.time()
    worst = 0.0
    failures = 0
    for _ in range(n_cases):
        net = random_tree_partitioned_network(rng)
        partition = tree_partition(net)
        if partition.n_regions < 2:
            continue
        region = int(rng.integers(0, partition.n_regions))
        idx = net.bus_index()
        b = np.zeros(net.n_buses)
        for reg in range(partition.n_regions):
            members = [idx[i] for i in sorted(partition.regions[reg])]
            if reg == region:
                continue
            vals = rng.normal(0.0, 1.0, len(members))
            vals -= vals.mean()
            b[members] = vals
        # any solution of L x = b: via the pinned-slack factorization
        sol = dc_power_flow(net, b)
        _, clo = closure(net, partition, region)
        rows = [idx[i] for i in sorted(clo)]
        spread = float(sol.theta[rows].max() - sol.theta[rows].min())
        worst = max(worst, spread)
        if spread > 1e-8:
            failures += 1
    return SuiteResult("equal-potentials", n_cases, failures, worst, time.time() - t0)


def _connected_edge_sets(n: int):
    """All connected labeled graphs on vertices 1..n, as edge tuples."""
    all_edges = list(itertools.combinations(range(1, n + 1), 2))
    for mask in range(1 << len(all_edges)):
        edges = [all_edges[i] for i in range(len(all_edges)) if mask >> i & 1]
        if len(edges) < n - 1:
            continue
        adj = {v: set() for v in range(1, n + 1)}
        for a, bb in edges:
            adj[a].add(bb)
            adj[bb].add(a)
        seen = {1}
        stack = [1]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) == n:
            yield edges


def forest_identity_suite(max_nodes: int = 5, seed: int = 5) -> SuiteResult:
    """Reduced-Laplacian minors against two-tree forest weights, exhaustively.

    For every connected graph on <= max_nodes vertices with random weights:
    det of the doubly reduced Laplacian equals the signed weight of spanning
    forests separating {l, i} from the slack vertex.
    """
    rng = np.random.default_rng(seed)
    t0 = time.time()
    worst = 0.0
    failures = 0
    total = 0
    for n in range(2, max_nodes + 1):
        for edges in _connected_edge_sets(n):
            weights = rng.uniform(0.5, 3.0, len(edges))
            net = Network(
                base_mva=100.0,
                buses=tuple(Bus(id=i, kind="load", demand=0.0) for i in range(1, n + 1)),
                lines=tuple(
                    Line(id=e + 1, from_bus=a, to_bus=bb, susceptance=float(wt), capacity=10.0)
                    for e, ((a, bb), wt) in enumerate(zip(edges, weights))
                ),
                areas=(frozenset(range(1, n + 1)),),
            )
            C = np.zeros((n, len(edges)))
            for e, (a, bb) in enumerate(edges):
                C[a - 1, e] = 1.0
                C[bb - 1, e] = -1.0
            L = (C * weights) @ C.T
            # slack = last vertex; reduced Laplacian over the first n-1
            red = L[: n - 1, : n - 1]
            for l in range(n - 1):
                for i in range(n - 1):
                    total += 1
                    minor = np.delete(np.delete(red, l, axis=0), i, axis=1)
                    det = float(np.linalg.det(minor)) if minor.size else 1.0
                    fw = forest_weight(net, {l + 1, i + 1}, {n})
                    expected = (-1.0) ** (l + i) * fw
                    err = abs(det - expected) / max(1.0, abs(expected))
                    worst = max(worst, err)
                    if err > 1e-9:
                        failures += 1
    return SuiteResult(
        "matrix-forest-identity", total, failures, worst, time.time() - t0,
        detail=f"graphs up to {max_nodes} nodes",
    )


def detector_suite(
    n_feasible: int = 50,
    n_infeasible: int = 50,
    seed: int = 99,
    horizon: float = 20000.0,
) -> SuiteResult:
    """Dual-divergence detector vs the phase-1 oracle: no FN, no FP.

    Infeasible cases are built by yanking one bus against shut response boxes
    on small two-region networks; the unabsorbed residual then drives some
    balance dual across the default cap.  The horizon is generous because the
    default cap is a factor 1e3 above the disturbance scale and the growth
    rate is the per-bus share of the island residual.
    """
    rng = np.random.default_rng(seed)
    t0 = time.time()
    failures = 0
    worst = 0.0
    total = 0
    made_feasible = made_infeasible = 0
    detail = []
    while made_feasible < n_feasible or made_infeasible < n_infeasible:
        want_infeasible = made_infeasible < n_infeasible and (
            made_feasible >= n_feasible or rng.random() < 0.5
        )
        net = random_tree_partitioned_network(rng, n_regions=2, min_region=3, max_region=4)
        partition = tree_partition(net)
        flows, line = _dispatch_and_fail(rng, net)
        f_e = flows.pop(line.id)
        idx = net.bus_index()
        r = np.zeros(net.n_buses)
        r[idx[line.from_bus]] += f_e
        r[idx[line.to_bus]] -= f_e
        caps = {ln.id: ln.capacity for ln in net.lines}
        headroom = {lid: (-caps[lid] - fl, caps[lid] - fl) for lid, fl in flows.items()}
        if want_infeasible:
            # engineer infeasibility: yank one bus hard against shut boxes
            j = int(rng.integers(0, net.n_buses))
            r[j] += rng.uniform(2.0, 4.0) * rng.choice([-1.0, 1.0])
            d_lo = np.zeros(net.n_buses)
            d_hi = np.zeros(net.n_buses)
            problem = uc_mod.build_uc_problem(
                net, partition.regions, r, {line.id}, headroom, d_lo=d_lo, d_hi=d_hi
            )
        else:
            problem = uc_mod.build_uc_problem(
                net, partition.regions, r, {line.id}, headroom
            )
        oracle = uc_mod.check_feasible(problem).feasible
        if oracle and made_feasible >= n_feasible:
            continue
        if not oracle and made_infeasible >= n_infeasible:
            continue
        traj = uc_mod.integrate_primal_dual(problem, step=0.01, horizon=horizon)
        verdict = traj.verdict.status
        total += 1
        if oracle:
            made_feasible += 1
            if verdict == "diverged":
                failures += 1  # false positive
                detail.append(f"FP seed case {total}")
        else:
            made_infeasible += 1
            if verdict != "diverged":
                failures += 1  # false negative
                detail.append(f"FN seed case {total} ({verdict})")
        worst = max(worst, traj.verdict.peak_dual if not oracle else 0.0)
    return SuiteResult(
        "divergence-detector", total, failures, worst, time.time() - t0,
        detail="; ".join(detail) if detail else f"{made_feasible} feasible / {made_infeasible} infeasible",
    )


def _projected_gradient_droop(
    net: Network, r: np.ndarray, removed: frozenset[int], iters: int = 20000
) -> tuple[np.ndarray, np.ndarray]:
    """Independent oracle: projected gradient on the primary-response QP.

    The frequency term is eliminated exactly: with aggregate damping
    S_D = sum D_j > 0 per island, the optimal frequency for a given response
    is uniform and the remaining problem is

        min  sum_j d_j^2 / (2 K_j)  +  (sum r - sum d)^2 / (2 S_D)

    over the response box alone, solved by plain box-projected gradient
    descent (a code path sharing nothing with the production bisection).
    Islands with S_D = 0 keep the hard balance equality; projection onto the
    hyperplane-box intersection then uses a scalar bisection on the shift.
    """
    idx = net.bus_index()
    K = np.array([b.droop_K for b in net.buses])
    D = np.array([b.damping_D for b in net.buses])
    lo = np.array([b.d_min for b in net.buses])
    hi = np.array([b.d_max for b in net.buses])
    d = np.clip(np.zeros(net.n_buses), lo, hi)
    omega = np.zeros(net.n_buses)
    for comp in islands(net, removed):
        rows = np.array([idx[m] for m in sorted(comp)])
        da = rows[K[rows] > 0]
        fixed = rows[K[rows] <= 0]
        d[fixed] = np.clip(0.0, lo[fixed], hi[fixed])
        target = float(np.sum(r[rows])) - float(np.sum(d[fixed]))
        S_D = float(np.sum(D[rows]))
        if da.size == 0:
            omega[rows] = target / S_D if S_D > 0 else 0.0
            continue
        Kd, lod, hid = K[da], lo[da], hi[da]
        x = np.clip(np.zeros(da.size), lod, hid)
        if S_D > 0:
            lip = float(np.max(1.0 / Kd)) + da.size / S_D
            step = 1.0 / lip
            for _ in range(iters):
                g = x / Kd - (target - x.sum()) / S_D
                x_new = np.clip(x - step * g, lod, hid)
                if np.abs(x_new - x).max() < 1e-14:
                    x = x_new
                    break
                x = x_new
            omega[rows] = (target - float(x.sum())) / S_D
        else:
            # hard balance: Euclidean projection onto {sum x = target} & box
            def project(v):
                t_lo, t_hi = -1.0, 1.0
                g = lambda t: float(np.sum(np.clip(v - t, lod, hid)))
                for _ in range(200):
                    if g(t_lo) >= target:
                        break
                    t_lo *= 2.0
                for _ in range(200):
                    if g(t_hi) <= target:
                        break
                    t_hi *= 2.0
                for _ in range(200):
                    mid = 0.5 * (t_lo + t_hi)
                    if g(mid) > target:
                        t_lo = mid
                    else:
                        t_hi = mid
                return np.clip(v - 0.5 * (t_lo + t_hi), lod, hid)

            step = float(np.min(Kd)) * 0.9
            x = project(x)
            for _ in range(iters):
                x_new = project(x - step * (x / Kd))
                if np.abs(x_new - x).max() < 1e-14:
                    x = x_new
                    break
                x = x_new
            omega[rows] = 0.0
        d[da] = x
    return d, omega


def droop_equivalence_suite(n_cases: int = 100, seed: int = 314) -> SuiteResult:
    """droop_equilibrium vs independent projected-gradient solve, <= 1e-6."""
    rng = np.random.default_rng(seed)
    t0 = time.time()
    failures = 0
    worst = 0.0
    done = 0
    binding = 0
    while done < n_cases:
        tight = done % 2 == 1  # half the suite forces box-binding responses
        net = random_tree_partitioned_network(rng, box_width=0.3 if tight else 6.0)
        flows, line = _dispatch_and_fail(rng, net)
        f_e = flows[line.id]
        idx = net.bus_index()
        r = np.zeros(net.n_buses)
        r[idx[line.from_bus]] += f_e
        r[idx[line.to_bus]] -= f_e
        if tight:
            r[int(rng.integers(0, net.n_buses))] += rng.uniform(1.0, 3.0) * rng.choice([-1.0, 1.0])
        ep = droop_equilibrium(net, r, {line.id})
        if not ep.stable:
            continue  # forced rebalancing has no counterpart in the oracle
        done += 1
        lo = np.array([b.d_min for b in net.buses])
        hi = np.array([b.d_max for b in net.buses])
        if np.any(np.isclose(ep.d, lo) & (lo < 0)) or np.any(np.isclose(ep.d, hi) & (hi > 0)):
            binding += 1
        d_ref, w_ref = _projected_gradient_droop(net, r, frozenset({line.id}))
        err = float(np.abs(ep.d - d_ref).max())
        # compare omega only where the damping term gives it a gradient
        D = np.array([b.damping_D for b in net.buses])
        err = max(err, float(np.abs((ep.omega - w_ref)[D > 0]).max(initial=0.0)))
        worst = max(worst, err)
        if err > 1e-6:
            failures += 1
    return SuiteResult(
        "droop-equivalence", n_cases, failures, worst, time.time() - t0,
        detail=f"{binding} box-binding cases",
    )


def cascade_recompute_suite(n_cases: int = 50, seed: int = 2718) -> SuiteResult:
    """Deviation-form staging equals from-scratch absolute DC solves, <= 1e-8."""
    rng = np.random.default_rng(seed)
    t0 = time.time()
    failures = 0
    worst = 0.0
    for _ in range(n_cases):
        net = random_tree_partitioned_network(rng)
        # tighten a random line so some cascades actually propagate
        caps = {ln.id: ln.capacity for ln in net.lines}
        squeeze = net.lines[int(rng.integers(0, net.n_lines))]
        sol = dc_power_flow(net, net.base_injections())
        fb = sol.flow_by_id()
        caps[squeeze.id] = max(abs(fb[squeeze.id]) * 1.05, 0.05)
        lines = tuple(
            Line(id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
                 susceptance=ln.susceptance, capacity=caps[ln.id])
            for ln in net.lines
        )
        net = Network(base_mva=net.base_mva, buses=net.buses, lines=lines, areas=net.areas)
        scenario = Scenario(network=net, injections=net.base_injections())
        start = net.lines[int(rng.integers(0, net.n_lines))]
        trace = run_cascade(scenario, {start.id}, controller="droop")
        # replay: recompute absolute flows from scratch at every stage
        D = np.array([b.damping_D for b in net.buses])
        p = scenario.injections.copy()
        for stage in trace.stages:
            ep = stage.equilibrium
            p = p - ep.d - D * ep.omega
            ref = dc_power_flow(net, p, stage.tripped).flow_by_id()
            for lid, fl in stage.flows_abs.items():
                err = abs(fl - ref[lid])
                worst = max(worst, err)
                if err > 1e-8:
                    failures += 1
    return SuiteResult("cascade-recompute", n_cases, failures, worst, time.time() - t0)


def _brute_force_bridges(net: Network) -> frozenset[int]:
    out = set()
    for ln in net.lines:
        if len(islands(net, {ln.id})) > 1:
            out.add(ln.id)
    return frozenset(out)


def tree_partition_sweep(
    exhaustive_max_n: int = 6,
    sampled_n: tuple[int, ...] = (7, 8),
    samples_per_n: int = 20000,
    seed: int = 12,
) -> SuiteResult:
    """Regions/bridges vs brute force: exhaustive small graphs plus samples."""
    rng = np.random.default_rng(seed)
    t0 = time.time()
    failures = 0
    total = 0

    def check(net: Network) -> bool:
        partition = tree_partition(net)
        if partition.bridges != _brute_force_bridges(net):
            return False
        # brute-force regions: components after removing the brute bridges
        if partition.regions != islands(net, _brute_force_bridges(net)):
            return False
        rm, is_tree = reduced_multigraph(net, partition.regions)
        return is_tree

    for n in range(2, exhaustive_max_n + 1):
        for edges in _connected_edge_sets(n):
            total += 1
            net = Network(
                base_mva=100.0,
                buses=tuple(Bus(id=i, kind="load", demand=0.0) for i in range(1, n + 1)),
                lines=tuple(
                    Line(id=e + 1, from_bus=a, to_bus=b, susceptance=1.0, capacity=1.0)
                    for e, (a, b) in enumerate(edges)
                ),
                areas=(frozenset(range(1, n + 1)),),
            )
            if not check(net):
                failures += 1
    for n in sampled_n:
        for _ in range(samples_per_n):
            total += 1
            net = random_connected_network(rng, n)
            if not check(net):
                failures += 1
    return SuiteResult(
        "tree-partition-sweep", total, failures, 0.0, time.time() - t0,
        detail=f"exhaustive <= {exhaustive_max_n}, {samples_per_n} samples at n in {sampled_n}",
    )


def run_all(fast: bool = False) -> list[SuiteResult]:
    """Every suite at its acceptance size (or a quick smoke sizing)."""
    n_loc = 20 if fast else 200
    results: list[SuiteResult] = []
    bridge, local = localization_suite(n_loc)
    results += [bridge, local]
    results.append(equal_potential_suite(20 if fast else 200))
    results.append(forest_identity_suite(4 if fast else 5))
    results.append(detector_suite(5 if fast else 50, 5 if fast else 50))
    results.append(droop_equivalence_suite(10 if fast else 100))
    results.append(cascade_recompute_suite(5 if fast else 50))
    results.append(
        tree_partition_sweep(5 if fast else 6, samples_per_n=200 if fast else 20000)
    )
    return results
