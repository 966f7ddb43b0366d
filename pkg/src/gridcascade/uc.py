"""The unified controller: congestion-aware frequency regulation as a QP.

The closed-loop equilibrium minimizes strictly convex response costs subject
to bus power balance, the DC flow equations, zero area control error and flow
and response limits.  The canonical decision vector is x = (f, d, theta).

Three solution paths are provided:

* ``check_feasible`` - phase-1 LP with artificial slacks (the classifier for
  critical failures),
* ``solve_uc`` - direct solve through the reduced response-space QP,
* ``integrate_primal_dual`` - explicit-Euler integration of the projected
  saddle dynamics, whose dual trajectories double as a distributed
  infeasibility detector: on infeasible problems some dual grows without
  bound, so a threshold plus a rising windowed minimum flags the failure.

``lift_constraints`` restores feasibility after a critical failure by merging
area-control-error groups outward from the associated regions and, as a last
resort, allowing load shedding.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse

from . import qp
from .controllers import EquilibriumPoint
from .graph import incidence, islands, reduced_multigraph
from .netmodel import Network
from .powerflow import dc_power_flow, deviation_flow_matrix

#: flow headroom values beyond this are treated as unbounded
BIG_LIMIT = 1e12

FEAS_SLACK_TOL = 1e-8
KKT_TOL = 1e-7


class UcInfeasible(ValueError):
    """solve_uc was handed an infeasible problem."""


@dataclass
class UcProblem:
    """Canonical-form unified-controller optimization for one topology."""

    network: Network
    removed_lines: frozenset[int]
    r: np.ndarray  # per-bus imbalance (deviation)
    line_ids: tuple[int, ...]  # surviving lines, column order of f
    C: np.ndarray  # incidence over surviving lines, (n, m)
    Bdiag: np.ndarray  # susceptances, (m,)
    flow_lo: np.ndarray  # deviation flow limits, (m,)
    flow_hi: np.ndarray
    d_lo: np.ndarray  # response box, possibly widened by lifting, (n,)
    d_hi: np.ndarray
    d_lo_ref: np.ndarray  # pre-lifting box (shed accounting reference)
    d_hi_ref: np.ndarray
    cost_w: np.ndarray  # quadratic weights inside the reference box
    shed_weight: np.ndarray  # quadratic weights of the lifted range beyond it
    shed_cap: np.ndarray  # physical load available for shedding per bus
    ace_sets: tuple[frozenset[int], ...]  # bus groups of the ACE rows
    island_sets: tuple[frozenset[int], ...]

    def cost_gradient(self, d: np.ndarray) -> np.ndarray:
        """Derivative of the piecewise-quadratic response cost.

        Inside the reference box the cost is 0.5*w*d^2; the range opened by
        constraint lifting is priced at the (much larger) shed weight, which
        keeps shedding a last resort without distorting in-box behavior.
        """
        inner = np.clip(d, self.d_lo_ref, self.d_hi_ref)
        return self.cost_w * inner + self.shed_weight * (d - inner)

    @property
    def n_buses(self) -> int:
        return self.C.shape[0]

    @property
    def n_lines(self) -> int:
        return self.C.shape[1]

    @property
    def n_areas(self) -> int:
        return len(self.ace_sets)

    @property
    def n_vars(self) -> int:
        return self.n_lines + 2 * self.n_buses

    def ace_matrix(self) -> np.ndarray:
        """Area indicator E with E[l, j] = 1 when bus j belongs to group l."""
        idx = self.network.bus_index()
        E = np.zeros((self.n_areas, self.n_buses))
        for l, grp in enumerate(self.ace_sets):
            for bus in grp:
                E[l, idx[bus]] = 1.0
        return E

    def inequality_system(self) -> tuple[np.ndarray, np.ndarray]:
        """A x <= g rows: both signs of the line limits (2m rows)."""
        m, n = self.n_lines, self.n_buses
        A = np.zeros((2 * m, self.n_vars))
        A[:m, :m] = np.eye(m)
        A[m:, :m] = -np.eye(m)
        g = np.concatenate([self.flow_hi, -self.flow_lo])
        return A, np.clip(g, -BIG_LIMIT, BIG_LIMIT)

    def equality_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Ceq x = h rows: balance (n), DC flow (m), ACE (k)."""
        m, n, k = self.n_lines, self.n_buses, self.n_areas
        Ceq = np.zeros((n + m + k, self.n_vars))
        # balance: r - d - C f = 0  ->  -C f - d = -r
        Ceq[:n, :m] = -self.C
        Ceq[:n, m : m + n] = -np.eye(n)
        # DC flow: f - B C^T theta = 0
        Ceq[n : n + m, :m] = np.eye(m)
        Ceq[n : n + m, m + n :] = -(self.Bdiag[:, None] * self.C.T)
        # ACE: E C f = 0
        Ceq[n + m :, :m] = self.ace_matrix() @ self.C
        h = np.concatenate([-self.r, np.zeros(m + k)])
        return Ceq, h


def build_uc_problem(
    network: Network,
    areas: tuple[frozenset[int], ...] | None,
    r: np.ndarray,
    removed_lines: frozenset[int] | set[int] = frozenset(),
    flow_headroom: dict[int, tuple[float, float]] | None = None,
    d_lo: np.ndarray | None = None,
    d_hi: np.ndarray | None = None,
    cost_w: np.ndarray | None = None,
    shed_cap: np.ndarray | None = None,
) -> UcProblem:
    """Assemble the canonical problem on the surviving topology.

    ``flow_headroom`` maps surviving line ids to deviation limits
    (capacity -/+ the current absolute flow); by default lines are assumed
    unloaded so the limits are the full symmetric ratings.
    """
    removed = frozenset(removed_lines)
    r = np.asarray(r, dtype=float)
    inc = incidence(network, removed)
    m = len(inc.line_ids)
    caps = {ln.id: ln.capacity for ln in network.lines}
    lo = np.empty(m)
    hi = np.empty(m)
    for e, lid in enumerate(inc.line_ids):
        if flow_headroom is not None and lid in flow_headroom:
            lo[e], hi[e] = flow_headroom[lid]
        else:
            lo[e], hi[e] = -caps[lid], caps[lid]
    d_lo = np.array([b.d_min for b in network.buses]) if d_lo is None else np.asarray(d_lo, float)
    d_hi = np.array([b.d_max for b in network.buses]) if d_hi is None else np.asarray(d_hi, float)
    w = np.ones(network.n_buses) if cost_w is None else np.asarray(cost_w, float)
    if shed_cap is None:
        shed_cap = np.array([b.local_load for b in network.buses])
    ace = tuple(frozenset(a) for a in (areas if areas is not None else network.areas))
    return UcProblem(
        network=network,
        removed_lines=removed,
        r=r,
        line_ids=inc.line_ids,
        C=inc.C,
        Bdiag=inc.B,
        flow_lo=np.clip(lo, -BIG_LIMIT, BIG_LIMIT),
        flow_hi=np.clip(hi, -BIG_LIMIT, BIG_LIMIT),
        d_lo=d_lo.copy(),
        d_hi=d_hi.copy(),
        d_lo_ref=d_lo.copy(),
        d_hi_ref=d_hi.copy(),
        cost_w=w.copy(),
        shed_weight=np.full(network.n_buses, 1e3),
        shed_cap=np.asarray(shed_cap, dtype=float).copy(),
        ace_sets=ace,
        island_sets=islands(network, removed),
    )


# ---------------------------------------------------------------------------
# Feasibility classification (phase-1 LP)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    slack_sum: float
    certificate: np.ndarray  # minimal-slack point in (f, d, theta) layout


def check_feasible(problem: UcProblem) -> Feasibility:
    """Phase-1 feasibility solve with artificial slacks on every row."""
    A, g = problem.inequality_system()
    Ceq, h = problem.equality_system()
    m2, nx = A.shape
    me = Ceq.shape[0]
    n, m = problem.n_buses, problem.n_lines
    # variables: x, s_in >= 0, t+ >= 0, t- >= 0
    c = np.concatenate([np.zeros(nx), np.ones(m2 + 2 * me)])
    A_ub = scipy.sparse.hstack(
        [scipy.sparse.csr_matrix(A), -scipy.sparse.eye(m2), scipy.sparse.csr_matrix((m2, 2 * me))]
    )
    A_eq = scipy.sparse.hstack(
        [scipy.sparse.csr_matrix(Ceq), scipy.sparse.csr_matrix((me, m2)),
         scipy.sparse.eye(me), -scipy.sparse.eye(me)]
    )
    bounds: list[tuple[float | None, float | None]] = []
    bounds += [(None, None)] * m  # f free
    bounds += [
        (problem.d_lo[j] if np.isfinite(problem.d_lo[j]) else None,
         problem.d_hi[j] if np.isfinite(problem.d_hi[j]) else None)
        for j in range(n)
    ]
    # pin one angle per island to remove the shift nullspace
    pinned = {min(isl) for isl in problem.island_sets}
    idx = problem.network.bus_index()
    pin_rows = {idx[b] for b in pinned}
    bounds += [(0.0, 0.0) if j in pin_rows else (None, None) for j in range(n)]
    bounds += [(0.0, None)] * (m2 + 2 * me)
    res = scipy.optimize.linprog(
        c, A_ub=A_ub, b_ub=g, A_eq=A_eq, b_eq=h, bounds=bounds, method="highs"
    )
    if not res.success:  # pragma: no cover - phase 1 with slacks is always solvable
        raise RuntimeError(f"phase-1 LP failed: {res.message}")
    slack = float(res.fun)
    return Feasibility(feasible=slack <= FEAS_SLACK_TOL, slack_sum=slack,
                       certificate=res.x[:nx])


# ---------------------------------------------------------------------------
# Direct solve
# ---------------------------------------------------------------------------


def _reduced_systems(problem: UcProblem):
    """Reduced response-space data: flows as an affine map of d."""
    M, line_ids = deviation_flow_matrix(problem.network, problem.removed_lines)
    assert line_ids == problem.line_ids
    idx = problem.network.bus_index()
    n = problem.n_buses
    rows = []
    rhs = []
    for grp in problem.ace_sets + problem.island_sets:
        sel = np.zeros(n)
        for bus in grp:
            sel[idx[bus]] = 1.0
        rows.append(sel)
        rhs.append(float(sel @ problem.r))
    Aeq = np.array(rows)
    beq = np.array(rhs)
    f_of_r = M @ problem.r
    G_rows = []
    h_rows = []
    for e in range(problem.n_lines):
        if problem.flow_hi[e] < BIG_LIMIT:
            G_rows.append(-M[e])
            h_rows.append(problem.flow_hi[e] - f_of_r[e])
        if problem.flow_lo[e] > -BIG_LIMIT:
            G_rows.append(M[e])
            h_rows.append(f_of_r[e] - problem.flow_lo[e])
    G = np.array(G_rows) if G_rows else None
    h = np.array(h_rows) if h_rows else None
    return M, Aeq, beq, G, h


def _solve_reduced(problem: UcProblem) -> np.ndarray:
    """Optimal total response d* of the reduced QP.

    The response at each bus splits into an in-box part (weights ``cost_w``)
    plus shed/curtail parts over the box range opened by lifting (weights
    ``shed_weight``), giving the exact piecewise-quadratic objective: the
    sign-restricted extra parts stay at zero whenever the in-box range
    suffices.
    """
    n = problem.n_buses
    _, Aeq, beq, G, h = _reduced_systems(problem)
    shed_cols = [j for j in range(n) if problem.d_lo[j] < problem.d_lo_ref[j] - 1e-15]
    curt_cols = [j for j in range(n) if problem.d_hi[j] > problem.d_hi_ref[j] + 1e-15]
    n_s, n_c = len(shed_cols), len(curt_cols)
    w = np.concatenate(
        [problem.cost_w, problem.shed_weight[shed_cols], problem.shed_weight[curt_cols]]
    )
    # linear terms give the extra ranges a marginal cost that starts at the
    # box-edge slope, so they engage only once the in-box range is exhausted
    # (exact convex piecewise-quadratic split)
    q = np.concatenate(
        [
            np.zeros(n),
            (problem.cost_w * problem.d_lo_ref)[shed_cols],
            (problem.cost_w * problem.d_hi_ref)[curt_cols],
        ]
    )
    def widen(mat):
        if mat is None:
            return None
        return np.hstack([mat, mat[:, shed_cols], mat[:, curt_cols]])
    Aeq_w = widen(Aeq)
    G_w = widen(G)
    lb = np.concatenate(
        [problem.d_lo_ref, (problem.d_lo - problem.d_lo_ref)[shed_cols], np.zeros(n_c)]
    )
    ub = np.concatenate(
        [problem.d_hi_ref, np.zeros(n_s), (problem.d_hi - problem.d_hi_ref)[curt_cols]]
    )
    res = qp.solve_qp(w, q, Aeq_w, beq, G_w, h, lb=lb, ub=ub)
    d = res.x[:n].copy()
    d[shed_cols] += res.x[n : n + n_s]
    d[curt_cols] += res.x[n + n_s :]
    return d


def solve_uc(problem: UcProblem) -> EquilibriumPoint:
    """Unique optimal response of a feasible problem (KKT-verified)."""
    try:
        d = _solve_reduced(problem)
    except qp.QpInfeasible as exc:
        raise UcInfeasible(
            "problem is infeasible; classify with check_feasible and apply the "
            "lifting ladder first"
        ) from exc
    sol = dc_power_flow(problem.network, problem.r - d, problem.removed_lines)
    # response below the reference floor is served by dropping local load (up
    # to the physical load at the bus); above the ceiling it is curtailment
    shed = np.minimum(np.maximum(0.0, problem.d_lo_ref - d), problem.shed_cap)
    curtailed = np.maximum(0.0, d - problem.d_hi_ref)
    point = EquilibriumPoint(
        omega=np.zeros(problem.n_buses),
        d=d,
        flows=sol.flows,
        line_ids=sol.line_ids,
        theta=sol.theta,
        shed=shed,
        curtailed=curtailed,
        stable=True,
    )
    resid = kkt_residual(problem, point)
    if resid > KKT_TOL:
        raise RuntimeError(f"solve_uc KKT residual {resid:.3e} exceeds {KKT_TOL}")
    return point


def kkt_residual(problem: UcProblem, point: EquilibriumPoint, active_tol: float = 1e-7) -> float:
    """Canonical KKT residual of a candidate optimum.

    Multipliers are recovered by least squares over the stationarity system
    restricted to the active constraints; the residual aggregates primal
    feasibility, stationarity, and dual sign violations (complementarity is
    exact by construction).
    """
    C, B, E = problem.C, problem.Bdiag, problem.ace_matrix()
    n, m, k = problem.n_buses, problem.n_lines, problem.n_areas
    f, d = point.flows, point.d
    # primal feasibility
    bal = problem.r - d - C @ f
    dcf = f - B * (C.T @ point.theta)
    ace = E @ (C @ f)
    primal = max(
        float(np.abs(bal).max(initial=0.0)),
        float(np.abs(dcf).max(initial=0.0)),
        float(np.abs(ace).max(initial=0.0)),
        float(np.maximum(f - problem.flow_hi, 0.0).max(initial=0.0)),
        float(np.maximum(problem.flow_lo - f, 0.0).max(initial=0.0)),
        float(np.maximum(d - problem.d_hi, 0.0).max(initial=0.0)),
        float(np.maximum(problem.d_lo - d, 0.0).max(initial=0.0)),
    )
    # active sets (line limits and response box); rows active on both sides
    # (fixed variables) contribute one sign-free multiplier instead of a
    # nonnegative pair, since only the difference is determined
    up_all = {e for e in range(m) if problem.flow_hi[e] - f[e] <= active_tol}
    lo_all = {e for e in range(m) if f[e] - problem.flow_lo[e] <= active_tol}
    bup_all = {j for j in range(n) if problem.d_hi[j] - d[j] <= active_tol}
    blo_all = {j for j in range(n) if d[j] - problem.d_lo[j] <= active_tol}
    up = sorted(up_all - lo_all)
    lo = sorted(lo_all - up_all)
    f_free = sorted(up_all & lo_all)
    bup = sorted(bup_all - blo_all)
    blo = sorted(blo_all - bup_all)
    d_free = sorted(bup_all & blo_all)
    n_mu = len(up) + len(lo) + len(bup) + len(blo)
    cols = n + m + k + n_mu + len(f_free) + len(d_free)
    # stationarity rows: d/df (m), d/dd (n), d/dtheta (n)
    S = np.zeros((m + 2 * n, cols))
    rhs = np.zeros(m + 2 * n)
    S[:m, :n] = -C.T
    S[:m, n : n + m] = np.eye(m)
    S[:m, n + m : n + m + k] = (E @ C).T
    off = n + m + k
    for j, e in enumerate(up):
        S[e, off + j] = 1.0
    off += len(up)
    for j, e in enumerate(lo):
        S[e, off + j] = -1.0
    off += len(lo)
    S[m : m + n, :n] = -np.eye(n)
    rhs[m : m + n] = -problem.cost_gradient(d)
    for j, b in enumerate(bup):
        S[m + b, off + j] = 1.0
    off += len(bup)
    for j, b in enumerate(blo):
        S[m + b, off + j] = -1.0
    off += len(blo)
    for j, e in enumerate(f_free):
        S[e, off + j] = 1.0
    off += len(f_free)
    for j, b in enumerate(d_free):
        S[m + b, off + j] = 1.0
    S[m + n :, n : n + m] = -(C * B)  # -C B lam_flow
    sol, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    stationarity = float(np.abs(S @ sol - rhs).max(initial=0.0))
    mu = sol[n + m + k : n + m + k + n_mu]
    dual_sign = float(np.maximum(-mu, 0.0).max(initial=0.0))
    if dual_sign > active_tol and n_mu:
        # min-norm recovery can split a free per-island dual shift into a
        # negative bound multiplier; redo with the sign constraints imposed
        lb_z = np.full(cols, -np.inf)
        lb_z[n + m + k : n + m + k + n_mu] = 0.0
        bounded = scipy.optimize.lsq_linear(S, rhs, bounds=(lb_z, np.full(cols, np.inf)))
        stationarity = float(np.abs(S @ bounded.x - rhs).max(initial=0.0))
        dual_sign = 0.0
    return max(primal, stationarity, dual_sign)


# ---------------------------------------------------------------------------
# Projected primal-dual trajectory and divergence detection
# ---------------------------------------------------------------------------

try:  # the stepping kernel is hot; numba is optional but much faster
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


@_njit(cache=True)
def _pd_kernel(
    n_sub,
    step,
    rho,
    f,
    d,
    theta,
    lam_bal,
    lam_flow,
    lam_ace,
    mu_hi,
    mu_lo,
    src,
    dst,
    grp,
    B,
    w,
    r,
    lo,
    hi,
    d_lo,
    d_hi,
    block_min,
):
    """Advance the projected saddle dynamics by ``n_sub`` explicit steps.

    All state arrays are updated in place; ``block_min`` tracks the running
    per-dual windowed minimum of |dual| in the stacking order
    (balance, flow, ace, line-upper, line-lower).
    """
    n = d.shape[0]
    m = f.shape[0]
    k = lam_ace.shape[0]
    res_bal = np.empty(n)
    res_ace = np.empty(k)
    g_th = np.empty(n)
    off_flow = n
    off_ace = n + m
    off_hi = n + m + k
    off_lo = n + m + k + m
    for _ in range(n_sub):
        for i in range(n):
            res_bal[i] = r[i] - d[i]
            g_th[i] = 0.0
        for l in range(k):
            res_ace[l] = 0.0
        for e in range(m):
            fe = f[e]
            res_bal[src[e]] -= fe
            res_bal[dst[e]] += fe
            res_ace[grp[src[e]]] += fe
            res_ace[grp[dst[e]]] -= fe
        for e in range(m):
            s, t = src[e], dst[e]
            rf = f[e] - B[e] * (theta[s] - theta[t])
            pf = lam_flow[e] + rho * rf
            pb = (lam_bal[s] + rho * res_bal[s]) - (lam_bal[t] + rho * res_bal[t])
            pa = (lam_ace[grp[s]] + rho * res_ace[grp[s]]) - (
                lam_ace[grp[t]] + rho * res_ace[grp[t]]
            )
            gf = -pb + pf + pa + mu_hi[e] - mu_lo[e]
            g_th[s] -= B[e] * pf
            g_th[t] += B[e] * pf
            vh = f[e] - hi[e]
            vl = lo[e] - f[e]
            f[e] -= step * gf
            lam_flow[e] += step * rf
            a = abs(lam_flow[e])
            if a < block_min[off_flow + e]:
                block_min[off_flow + e] = a
            if vh > 0.0 or mu_hi[e] > 0.0:
                mu_hi[e] += step * vh
                if mu_hi[e] < 0.0:
                    mu_hi[e] = 0.0
            a = mu_hi[e]
            if a < block_min[off_hi + e]:
                block_min[off_hi + e] = a
            if vl > 0.0 or mu_lo[e] > 0.0:
                mu_lo[e] += step * vl
                if mu_lo[e] < 0.0:
                    mu_lo[e] = 0.0
            a = mu_lo[e]
            if a < block_min[off_lo + e]:
                block_min[off_lo + e] = a
        for i in range(n):
            gd = w[i] * d[i] - (lam_bal[i] + rho * res_bal[i])
            v = d[i] - step * gd
            if v < d_lo[i]:
                v = d_lo[i]
            elif v > d_hi[i]:
                v = d_hi[i]
            d[i] = v
            theta[i] -= step * g_th[i]
            lam_bal[i] += step * res_bal[i]
            a = abs(lam_bal[i])
            if a < block_min[i]:
                block_min[i] = a
        for l in range(k):
            lam_ace[l] += step * res_ace[l]
            a = abs(lam_ace[l])
            if a < block_min[off_ace + l]:
                block_min[off_ace + l] = a


@dataclass(frozen=True)
class DivergenceVerdict:
    status: str  # "converged" | "diverged" | "undecided"
    peak_dual: float
    trigger_index: int  # stacked dual index, -1 if none


@dataclass
class Trajectory:
    """Sampled primal/dual path of the saddle dynamics.

    Dual columns are stacked as (balance, flow, ace, line-upper, line-lower).
    """

    times: np.ndarray
    primal: np.ndarray  # samples x n_vars
    duals: np.ndarray  # samples x n_duals
    verdict: DivergenceVerdict
    kkt_residual: float


def default_dual_cap(r: np.ndarray) -> float:
    return 1e3 * (float(np.abs(r).max(initial=0.0)) + 1.0)


def integrate_primal_dual(
    problem: UcProblem,
    step: float = 0.01,
    horizon: float = 200.0,
    dual_cap: float | None = None,
    dual_window: float = 10.0,
    rho: float = 1.0,
) -> Trajectory:
    """Explicit-Euler saddle dynamics with box projection on the responses.

    Inequality duals follow the positivity projection (frozen at zero unless
    the constraint is violated or the dual is already positive).  The verdict
    is ``diverged`` when some |dual| exceeds ``dual_cap`` while its windowed
    minimum over the last two ``dual_window`` spans is still climbing,
    ``converged`` when the KKT residual drops below 1e-6, else ``undecided``.

    ``rho`` weights the augmented-Lagrangian penalty in the primal descent;
    it stabilizes the discretized flow and leaves both the saddle points and
    the dual divergence behavior untouched.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    cap = default_dual_cap(problem.r) if dual_cap is None else float(dual_cap)
    n, m, k = problem.n_buses, problem.n_lines, problem.n_areas
    C = problem.C
    CB = C * problem.Bdiag  # (n, m), column e scaled by B_e
    Ec = problem.ace_matrix() @ C  # (k, m)
    w = problem.cost_w
    r = problem.r
    lo, hi = problem.flow_lo, problem.flow_hi
    d_lo, d_hi = problem.d_lo, problem.d_hi
    fixed = d_hi - d_lo <= 1e-15  # both box sides active: no stationarity demand

    f = np.zeros(m)
    d = np.clip(np.zeros(n), d_lo, d_hi)
    theta = np.zeros(n)
    # all dual variables live in one buffer so per-step bookkeeping is O(1) ops
    nd = n + m + k + 2 * m
    lam_all = np.zeros(nd)
    lam_bal = lam_all[:n]
    lam_flow = lam_all[n : n + m]
    lam_ace = lam_all[n + m : n + m + k]
    mu_hi = lam_all[n + m + k : n + m + k + m]
    mu_lo = lam_all[n + m + k + m :]

    n_steps = int(round(horizon / step))
    check_every = max(1, int(round(1.0 / step)))
    block_steps = max(1, int(round(dual_window / step)))
    block_min = np.full(nd, np.inf)
    prev_block_min = np.full(nd, np.inf)
    have_prev_block = False
    abs_buf = np.empty(nd)

    times: list[float] = []
    primal_snap: list[np.ndarray] = []
    dual_snap: list[np.ndarray] = []
    status = "undecided"
    trigger = -1
    peak = 0.0
    kkt = np.inf

    def dual_stack() -> np.ndarray:
        return lam_all.copy()

    def residuals():
        res_bal = r - d - C @ f
        res_flow = f - problem.Bdiag * (C.T @ theta)
        res_ace = Ec @ f
        viol_hi = f - hi
        viol_lo = lo - f
        return res_bal, res_flow, res_ace, viol_hi, viol_lo

    def gradient(res_bal, res_flow, res_ace):
        # descent on the augmented Lagrangian: the quadratic penalty on the
        # equality residuals damps the neutral (f, theta, dual) rotations of
        # the plain saddle flow without moving its equilibria; the dual
        # dynamics below stay the exact projected ascent
        pen_bal = lam_bal + rho * res_bal
        pen_flow = lam_flow + rho * res_flow
        pen_ace = lam_ace + rho * res_ace
        g_f = -(C.T @ pen_bal) + pen_flow + Ec.T @ pen_ace + mu_hi - mu_lo
        g_d = w * d - pen_bal
        g_th = -(CB @ pen_flow)
        return g_f, g_d, g_th

    zero_bal, zero_flow, zero_ace = np.zeros(n), np.zeros(m), np.zeros(k)

    def kkt_now() -> float:
        res_bal, res_flow, res_ace, viol_hi, viol_lo = residuals()
        # plain-Lagrangian stationarity (penalty terms vanish at a KKT point)
        g_f, g_d, g_th = gradient(zero_bal, zero_flow, zero_ace)
        at_lo = np.isclose(d, d_lo, rtol=0.0, atol=1e-12)
        at_hi = np.isclose(d, d_hi, rtol=0.0, atol=1e-12)
        stat_d = np.abs(g_d)
        stat_d = np.where(at_lo, np.maximum(0.0, -g_d), stat_d)
        stat_d = np.where(at_hi, np.maximum(0.0, g_d), stat_d)
        stat_d = np.where(at_lo & at_hi, 0.0, stat_d)
        stat_d = np.where(fixed, 0.0, stat_d)
        comp = max(
            float(np.abs(np.where(mu_hi > 0, mu_hi * viol_hi, 0.0)).max(initial=0.0)),
            float(np.abs(np.where(mu_lo > 0, mu_lo * viol_lo, 0.0)).max(initial=0.0)),
        )
        return max(
            float(np.abs(g_f).max(initial=0.0)),
            float(stat_d.max(initial=0.0)),
            float(np.abs(g_th).max(initial=0.0)),
            float(np.abs(res_bal).max(initial=0.0)),
            float(np.abs(res_flow).max(initial=0.0)),
            float(np.abs(res_ace).max(initial=0.0)),
            float(np.maximum(viol_hi, 0.0).max(initial=0.0)),
            float(np.maximum(viol_lo, 0.0).max(initial=0.0)),
            comp,
        )

    # edge-indexed views for the stepping kernel
    src = np.argmax(C > 0, axis=0).astype(np.int64)
    dst = np.argmax(C < 0, axis=0).astype(np.int64)
    idx = problem.network.bus_index()
    grp = np.zeros(n, dtype=np.int64)
    for l, gset in enumerate(problem.ace_sets):
        for bus in gset:
            grp[idx[bus]] = l

    it = 0
    while it < n_steps:
        to_check = check_every - it % check_every
        to_block = block_steps - it % block_steps
        n_sub = min(to_check, to_block, n_steps - it)
        _pd_kernel(
            n_sub, step, rho, f, d, theta, lam_bal, lam_flow, lam_ace,
            mu_hi, mu_lo, src, dst, grp, problem.Bdiag, w, r, lo, hi,
            d_lo, d_hi, block_min,
        )
        it += n_sub
        stacked_abs = np.abs(lam_all, out=abs_buf)
        if not np.isfinite(stacked_abs).all() or not np.isfinite(f).all():
            raise ValueError("primal-dual state became non-finite; use a smaller step")
        peak = max(peak, float(stacked_abs.max(initial=0.0)))
        if it % check_every == 0:
            times.append(it * step)
            primal_snap.append(np.concatenate([f, d, theta]))
            dual_snap.append(dual_stack())
            over = stacked_abs > cap
            if over.any() and have_prev_block:
                for i in np.flatnonzero(over):
                    cur = min(float(block_min[i]), float(stacked_abs[i]))
                    if np.isfinite(prev_block_min[i]) and cur > prev_block_min[i]:
                        status = "diverged"
                        trigger = int(i)
                        break
                if status == "diverged":
                    break
            kkt = kkt_now()
            if kkt <= 1e-6:
                status = "converged"
                break
        if it % block_steps == 0:
            np.copyto(prev_block_min, block_min)
            block_min.fill(np.inf)
            have_prev_block = True

    nx = problem.n_vars
    verdict = DivergenceVerdict(status=status, peak_dual=peak, trigger_index=trigger)
    return Trajectory(
        times=np.array(times),
        primal=np.array(primal_snap) if primal_snap else np.zeros((0, nx)),
        duals=np.array(dual_snap) if dual_snap else np.zeros((0, nd)),
        verdict=verdict,
        kkt_residual=float(kkt),
    )


# ---------------------------------------------------------------------------
# Constraint lifting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LiftAce:
    """Merge the ACE groups containing two (original) control areas."""

    area_i: int
    area_j: int

    def describe(self) -> str:
        return f"lift-ace({self.area_i},{self.area_j})"


@dataclass(frozen=True)
class AllowShed:
    """Widen the response box at load buses by an extra shed allowance."""

    buses: frozenset[int] | None  # None = every load bus
    amount: float  # p.u. added to the downward range (inf allowed)
    weight: float = 1e3  # quadratic weight of the widened range

    def describe(self) -> str:
        target = "all-loads" if self.buses is None else f"{sorted(self.buses)}"
        return f"allow-shed({target},{self.amount})"


LiftingLadder = list  # ordered LiftAce / AllowShed actions


def apply_action(problem: UcProblem, action) -> UcProblem:
    """Return a new problem with one ladder action applied."""
    if isinstance(action, LiftAce):
        areas = problem.network.areas
        a_set = set(areas[action.area_i])
        b_set = set(areas[action.area_j])
        groups = [set(gset) for gset in problem.ace_sets]
        ga = next((i for i, gset in enumerate(groups) if gset & a_set), None)
        gb = next((i for i, gset in enumerate(groups) if gset & b_set), None)
        if ga is None or gb is None or ga == gb:
            return problem
        merged = groups[ga] | groups[gb]
        new_groups = [gset for i, gset in enumerate(groups) if i not in (ga, gb)]
        new_groups.append(merged)
        return dataclasses.replace(
            problem, ace_sets=tuple(frozenset(gset) for gset in new_groups)
        )
    if isinstance(action, AllowShed):
        idx = problem.network.bus_index()
        targets = (
            [j for j, b in enumerate(problem.network.buses) if problem.shed_cap[j] > 0]
            if action.buses is None
            else [idx[bus] for bus in sorted(action.buses)]
        )
        d_lo = problem.d_lo.copy()
        w = problem.shed_weight.copy()
        for j in targets:
            widened = d_lo[j] - action.amount
            floor = problem.d_lo_ref[j] - problem.shed_cap[j]
            d_lo[j] = max(widened, floor) if action.buses is None else widened
            w[j] = max(w[j], action.weight)
        return dataclasses.replace(problem, d_lo=d_lo, shed_weight=w)
    raise TypeError(f"unknown ladder action {action!r}")


def default_ladder(
    problem: UcProblem, associated_areas: frozenset[int] | set[int]
) -> LiftingLadder:
    """ACE merges expanding outward from the associated areas, then shedding.

    Merge order follows breadth-first distance in the reduced multigraph of
    the planning-phase areas, so nearby control areas are coordinated first.
    """
    areas = problem.network.areas
    k = len(areas)
    ladder: LiftingLadder = []
    if k > 1:
        rm, _ = reduced_multigraph(problem.network, areas)
        adj: dict[int, set[int]] = {i: set() for i in range(k)}
        for u, v, _ in rm.edges:
            adj[u].add(v)
            adj[v].add(u)
        seeds = sorted(associated_areas) if associated_areas else [0]
        visited = set(seeds)
        frontier = list(seeds)
        while frontier:
            nxt = []
            for u in frontier:
                for v in sorted(adj[u]):
                    if v not in visited:
                        visited.add(v)
                        ladder.append(LiftAce(u, v))
                        nxt.append(v)
            frontier = nxt
        # areas unreachable in the reduced graph (degenerate): merge anyway
        for v in range(k):
            if v not in visited:
                ladder.append(LiftAce(seeds[0], v))
                visited.add(v)
    ladder.append(AllowShed(buses=None, amount=np.inf))
    return ladder


def lift_constraints(
    problem: UcProblem, ladder: LiftingLadder
) -> tuple[UcProblem, list]:
    """Apply ladder actions in order until the problem becomes feasible.

    The implicit terminal action (unlimited shedding at every load bus) is
    appended when the explicit ladder runs out; if even that fails - possible
    only when imbalanced buses have no load bus to trade against - every bus
    box is opened as a forced stabilization fallback.
    """
    applied: list = []
    current = problem
    if check_feasible(current).feasible:
        return current, applied
    for action in ladder:
        current = apply_action(current, action)
        applied.append(action)
        if check_feasible(current).feasible:
            return current, applied
    terminal = AllowShed(buses=None, amount=np.inf)
    current = apply_action(current, terminal)
    applied.append(terminal)
    if check_feasible(current).feasible:
        return current, applied
    # forced stabilization: every box opens in both directions, priced at the
    # shed weight (needed e.g. when an islanded generator is stuck above its
    # minimum output with nowhere to send the power)
    forced = AllowShed(
        buses=frozenset(b.id for b in problem.network.buses), amount=np.inf
    )
    current = apply_action(current, forced)
    current = dataclasses.replace(current, d_hi=np.full(problem.n_buses, np.inf))
    applied.append(forced)
    return current, applied
