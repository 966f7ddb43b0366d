import numpy as np
import pytest

from gridcascade import uc
from gridcascade.graph import tree_partition
from gridcascade.netmodel import Bus, Line, Network
from gridcascade.netgen import random_tree_partitioned_network
from gridcascade.powerflow import dc_power_flow


def islanded_load_problem():
    net = Network(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind="generator", demand=1.0, d_min=-1, d_max=1),
            Bus(id=2, kind="load", demand=-1.0),
        ),
        lines=(Line(id=1, from_bus=1, to_bus=2, susceptance=1.0, capacity=10.0),),
        areas=(frozenset({1, 2}),),
    )
    return uc.build_uc_problem(net, None, np.array([1.0, -1.0]), removed_lines={1})


def test_problem_dimensions(tri, bowtie):
    prob = uc.build_uc_problem(tri, None, np.zeros(3))
    A, g = prob.inequality_system()
    Ceq, h = prob.equality_system()
    assert A.shape == (2 * 3, 3 + 2 * 3)
    assert Ceq.shape == (3 + 3 + 1, 3 + 2 * 3)

    prob2 = uc.build_uc_problem(tri, None, np.zeros(3), removed_lines={3})
    A2, _ = prob2.inequality_system()
    assert prob2.n_lines == 2
    assert A2.shape[0] == 4

    prob3 = uc.build_uc_problem(bowtie, None, np.zeros(6))
    assert prob3.n_areas == 2
    Ec = prob3.ace_matrix() @ prob3.C
    bridge_col = prob3.line_ids.index(bowtie.line_by_pair(3, 4).id)
    col = Ec[:, bridge_col]
    assert sorted(col.tolist()) == [-1.0, 1.0]  # opposite signs in the two rows
    # internal lines cancel inside their row
    internal_col = prob3.line_ids.index(bowtie.line_by_pair(1, 2).id)
    assert np.all(Ec[:, internal_col] == 0.0)


def test_zero_problem(tri):
    prob = uc.build_uc_problem(tri, None, np.zeros(3))
    assert uc.check_feasible(prob).feasible
    ep = uc.solve_uc(prob)
    assert np.abs(ep.d).max() == 0.0
    assert np.abs(ep.flows).max() == 0.0


def test_check_feasible_archetypes(tri):
    assert uc.check_feasible(uc.build_uc_problem(tri, None, np.zeros(3))).feasible
    res = uc.check_feasible(islanded_load_problem())
    assert not res.feasible
    assert res.slack_sum > 1e-8
    two = Network(
        base_mva=100.0,
        buses=(Bus(id=1, kind="generator", demand=0.0), Bus(id=2, kind="load", demand=0.0)),
        lines=(Line(id=1, from_bus=1, to_bus=2, susceptance=1.0, capacity=0.5),),
        areas=(frozenset({1, 2}),),
    )
    prob = uc.build_uc_problem(two, None, np.array([1.0, -1.0]))
    assert not uc.check_feasible(prob).feasible


def test_solve_matches_droop_style_redistribution(tri):
    prob = uc.build_uc_problem(tri, None, np.array([1 / 3, 0.0, -1 / 3]), removed_lines={3})
    ep = uc.solve_uc(prob)
    assert np.abs(ep.d).max() <= 1e-9
    flows = dict(zip(ep.line_ids, ep.flows))
    assert flows[1] == pytest.approx(1 / 3, abs=1e-9)
    assert flows[2] == pytest.approx(1 / 3, abs=1e-9)


def test_solve_uc_localizes_bowtie(bowtie):
    """Failure inside one region: the other region does not move at all."""
    line = bowtie.line_by_pair(1, 2)
    sol = dc_power_flow(bowtie, bowtie.base_injections())
    f_e = sol.flow_by_id()[line.id]
    idx = bowtie.bus_index()
    r = np.zeros(6)
    r[idx[1]] += f_e
    r[idx[2]] -= f_e
    flows0 = sol.flow_by_id()
    caps = {ln.id: ln.capacity for ln in bowtie.lines}
    headroom = {
        lid: (-caps[lid] - fl, caps[lid] - fl)
        for lid, fl in flows0.items() if lid != line.id
    }
    prob = uc.build_uc_problem(bowtie, None, r, {line.id}, headroom)
    ep = uc.solve_uc(prob)
    other = [idx[b] for b in (4, 5, 6)]
    assert np.abs(ep.d[other]).max() <= 1e-9
    bridge = bowtie.line_by_pair(3, 4)
    dev = dict(zip(ep.line_ids, ep.flows))
    assert abs(dev[bridge.id]) <= 1e-9
    # solving from the canonical certificate start gives the same objective
    resid = uc.kkt_residual(prob, ep)
    assert resid <= 1e-7


def test_solve_uc_requires_feasible():
    with pytest.raises(uc.UcInfeasible):
        uc.solve_uc(islanded_load_problem())


def test_integrator_feasible_matches_solve(tri):
    prob = uc.build_uc_problem(tri, None, np.array([1 / 3, 0.0, -1 / 3]), removed_lines={3})
    traj = uc.integrate_primal_dual(prob, step=0.01, horizon=200.0)
    assert traj.verdict.status == "converged"
    ep = uc.solve_uc(prob)
    m, n = prob.n_lines, prob.n_buses
    final = traj.primal[-1]
    assert np.abs(final[:m] - ep.flows).max() <= 1e-4
    assert np.abs(final[m : m + n] - ep.d).max() <= 1e-4


def test_integrator_zero_problem_immediate(tri):
    prob = uc.build_uc_problem(tri, None, np.zeros(3))
    traj = uc.integrate_primal_dual(prob, step=0.01, horizon=50.0)
    assert traj.verdict.status == "converged"
    assert traj.times[0] == traj.times[-1]  # first check already optimal


def test_integrator_infeasible_diverges():
    prob = islanded_load_problem()
    traj = uc.integrate_primal_dual(prob, step=0.01, horizon=4000.0)
    assert traj.verdict.status == "diverged"
    # the runaway dual belongs to a balance row (stacked first)
    assert 0 <= traj.verdict.trigger_index < prob.n_buses
    assert traj.verdict.peak_dual > uc.default_dual_cap(prob.r)


def test_integrator_rejects_bad_step():
    prob = islanded_load_problem()
    with pytest.raises(ValueError):
        uc.integrate_primal_dual(prob, step=-1.0)


def test_lift_zero_actions_when_feasible(tri):
    prob = uc.build_uc_problem(tri, None, np.zeros(3))
    ladder = [uc.AllowShed(None, 0.5)]
    _, applied = uc.lift_constraints(prob, ladder)
    assert applied == []


def test_lift_shed_arithmetic():
    prob = islanded_load_problem()
    ladder = [uc.AllowShed(frozenset({2}), 0.5), uc.AllowShed(frozenset({2}), 0.5)]
    lifted, applied = uc.lift_constraints(prob, ladder)
    assert applied == ladder
    ep = uc.solve_uc(lifted)
    assert ep.d[1] == pytest.approx(-1.0, abs=1e-9)
    assert ep.shed[1] == pytest.approx(1.0, abs=1e-9)
    assert ep.d[0] == pytest.approx(1.0, abs=1e-9)  # surplus island absorbs


def test_lift_ace_restores_feasibility(bowtie):
    """Per-area balance fails, merged balance succeeds."""
    bridge = bowtie.line_by_pair(3, 4)
    idx = bowtie.bus_index()
    r = np.zeros(6)
    r[idx[3]] = 0.4
    r[idx[4]] = -0.4
    # keep the bridge in service but give area A no room to absorb +0.4
    d_lo = np.array([0.0, 0.0, 0.0, 0.0, -2.0, 0.0])
    d_hi = np.array([0.0, 0.0, 0.0, 0.0, 2.0, 0.0])
    prob = uc.build_uc_problem(bowtie, None, r, d_lo=d_lo, d_hi=d_hi)
    assert not uc.check_feasible(prob).feasible
    lifted, applied = uc.lift_constraints(prob, [uc.LiftAce(0, 1)])
    assert len(applied) == 1 and isinstance(applied[0], uc.LiftAce)
    assert len(lifted.ace_sets) == 1
    ep = uc.solve_uc(lifted)
    assert ep.total_shed() == pytest.approx(0.0, abs=1e-9)


def test_default_ladder_expands_outward(bowtie):
    prob = uc.build_uc_problem(bowtie, None, np.zeros(6))
    ladder = uc.default_ladder(prob, frozenset({0}))
    assert isinstance(ladder[0], uc.LiftAce)
    assert ladder[0].area_i == 0 and ladder[0].area_j == 1
    assert isinstance(ladder[-1], uc.AllowShed)
    assert ladder[-1].buses is None and np.isinf(ladder[-1].amount)


def test_solve_uc_second_solve_same_objective(rng):
    """Optimality cross-check: perturbed re-solve reaches the same optimum."""
    for _ in range(5):
        net = random_tree_partitioned_network(rng)
        part = tree_partition(net)
        sol = dc_power_flow(net, net.base_injections())
        flows = sol.flow_by_id()
        line = net.lines[int(rng.integers(0, net.n_lines))]
        f_e = flows.pop(line.id)
        idx = net.bus_index()
        r = np.zeros(net.n_buses)
        r[idx[line.from_bus]] += f_e
        r[idx[line.to_bus]] -= f_e
        caps = {ln.id: ln.capacity for ln in net.lines}
        headroom = {lid: (-caps[lid] - fl, caps[lid] - fl) for lid, fl in flows.items()}
        prob = uc.build_uc_problem(net, part.regions, r, {line.id}, headroom)
        if not uc.check_feasible(prob).feasible:
            continue
        ep1 = uc.solve_uc(prob)
        # independent route: integrate the controller dynamics to equilibrium
        traj = uc.integrate_primal_dual(prob, step=0.01, horizon=600.0)
        obj1 = float(np.sum(prob.cost_w * ep1.d ** 2) / 2)
        if traj.verdict.status == "converged":
            d2 = traj.primal[-1][prob.n_lines : prob.n_lines + prob.n_buses]
            obj2 = float(np.sum(prob.cost_w * d2 ** 2) / 2)
            assert abs(obj1 - obj2) <= 1e-6 * max(1.0, obj1)
        assert uc.kkt_residual(prob, ep1) <= 1e-7
