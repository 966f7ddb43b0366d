"""Shared numerical solvers: clamped-balance bisection and a box QP engine.

The QP engine handles the strictly convex diagonal-Hessian problems this
package produces (controller equilibria, optimal dispatch):

    minimize    0.5 x' diag(w) x + q' x
    subject to  Aeq x = beq
                G x <= h
                lb <= x <= ub

It runs a primal active-set method from a feasible point (phase-1 LP via
scipy/HiGHS when the equality-constrained optimum is not already feasible).
Working-set KKT systems are solved through the diagonal Schur complement
with least-squares, so redundant active rows are tolerated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize


class QpInfeasible(ValueError):
    """The constraint system admits no feasible point."""

    def __init__(self, slack_sum: float, certificate: np.ndarray | None = None):
        super().__init__(f"infeasible constraint system (min slack sum {slack_sum:.3e})")
        self.slack_sum = slack_sum
        self.certificate = certificate


class QpNoConvergence(RuntimeError):
    """Active-set iteration limit reached (should not happen in practice)."""


# ---------------------------------------------------------------------------
# Scalar clamped-balance equation
# ---------------------------------------------------------------------------


def clamped_balance(
    K: np.ndarray,
    d_lo: np.ndarray,
    d_hi: np.ndarray,
    D_total: float,
    target: float,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[float, np.ndarray, float]:
    """Solve sum_j clamp(K_j*nu, lo_j, hi_j) + D_total*nu = target for nu.

    The left side is monotone nondecreasing in nu.  Returns
    ``(nu, d, residual)`` where ``d`` are the clamped per-bus responses and
    ``residual`` is the unservable remainder when the target lies outside the
    achievable range (zero otherwise).
    """
    K = np.asarray(K, dtype=float)
    d_lo = np.asarray(d_lo, dtype=float)
    d_hi = np.asarray(d_hi, dtype=float)

    def g(nu: float) -> float:
        return float(np.sum(np.clip(K * nu, d_lo, d_hi)) + D_total * nu)

    if target == 0.0:
        return 0.0, np.zeros_like(K), 0.0

    responsive = K > 0
    if D_total <= 0.0:
        reach_lo = float(np.sum(d_lo[responsive]))
        reach_hi = float(np.sum(d_hi[responsive]))
        if target > reach_hi + tol or target < reach_lo - tol:
            bounded = min(max(target, reach_lo), reach_hi)
            nu, d, _ = clamped_balance(K, d_lo, d_hi, D_total, bounded, tol, max_iter)
            return nu, d, target - bounded
    # bracket the root starting from nu = 0 (g(0) = 0)
    lo_nu, hi_nu = (0.0, 1.0) if target > 0 else (-1.0, 0.0)
    for _ in range(200):
        if target > 0 and g(hi_nu) >= target:
            break
        if target < 0 and g(lo_nu) <= target:
            break
        lo_nu *= 2.0
        hi_nu *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo_nu + hi_nu)
        if g(mid) < target:
            lo_nu = mid
        else:
            hi_nu = mid
        if hi_nu - lo_nu <= tol * max(1.0, abs(lo_nu) + abs(hi_nu)):
            break
    nu = 0.5 * (lo_nu + hi_nu)
    d = np.clip(K * nu, d_lo, d_hi)
    # distribute any leftover rounding onto the D term by reporting residual 0:
    # within tol the balance equation holds by monotonicity of g
    return nu, d, 0.0


# ---------------------------------------------------------------------------
# Box QP, primal active set
# ---------------------------------------------------------------------------


@dataclass
class QpResult:
    x: np.ndarray
    nu_eq: np.ndarray  # multipliers of Aeq rows
    mu_ineq: np.ndarray  # multipliers of G rows (>= 0, 0 when inactive)
    mu_lower: np.ndarray  # multipliers of lb rows
    mu_upper: np.ndarray  # multipliers of ub rows
    iterations: int = 0
    objective: float = 0.0


def _stack_inequalities(G, h, lb, ub, n):
    """Fold bounds into inequality rows; remember where each came from."""
    rows = []
    rhs = []
    tags = []  # ("g", i) | ("ub", j) | ("lb", j)
    if G is not None and len(G) > 0:
        for i in range(G.shape[0]):
            rows.append(G[i])
            rhs.append(h[i])
            tags.append(("g", i))
    for j in range(n):
        if np.isfinite(ub[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(ub[j])
            tags.append(("ub", j))
        if np.isfinite(lb[j]):
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-lb[j])
            tags.append(("lb", j))
    if rows:
        return np.array(rows), np.array(rhs), tags
    return np.zeros((0, n)), np.zeros(0), tags


def _phase1_start(Aeq, beq, Gall, hall, lb, ub) -> np.ndarray:
    """Feasible point via an auxiliary LP minimizing constraint slacks."""
    n = lb.shape[0]
    m_eq = 0 if Aeq is None else Aeq.shape[0]
    m_in = Gall.shape[0]
    # variables: x, s_in (>=0), t_plus, t_minus (>=0)
    n_var = n + m_in + 2 * m_eq
    c = np.concatenate([np.zeros(n), np.ones(m_in + 2 * m_eq)])
    A_ub = None
    b_ub = None
    if m_in:
        A_ub = np.hstack([Gall, -np.eye(m_in), np.zeros((m_in, 2 * m_eq))])
        b_ub = hall
    A_eq = None
    b_eq = None
    if m_eq:
        A_eq = np.hstack([Aeq, np.zeros((m_eq, m_in)), np.eye(m_eq), -np.eye(m_eq)])
        b_eq = beq
    bounds = [(lb[j], ub[j]) for j in range(n)] + [(0, None)] * (m_in + 2 * m_eq)
    res = scipy.optimize.linprog(
        c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs"
    )
    if not res.success:
        raise QpInfeasible(np.inf)
    slack = float(res.fun)
    if slack > 1e-8:
        raise QpInfeasible(slack, certificate=res.x[:n])
    assert n_var == res.x.shape[0]
    return res.x[:n]


def solve_qp(
    w: np.ndarray,
    q: np.ndarray,
    Aeq: np.ndarray | None,
    beq: np.ndarray | None,
    G: np.ndarray | None = None,
    h: np.ndarray | None = None,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    tol: float = 1e-10,
) -> QpResult:
    """Strictly convex diagonal-Hessian QP via primal active set."""
    w = np.asarray(w, dtype=float)
    q = np.asarray(q, dtype=float)
    n = w.shape[0]
    if np.any(w <= 0):
        raise ValueError("Hessian diagonal must be strictly positive")
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        raise QpInfeasible(float(np.max(lb - ub)))
    if Aeq is not None and Aeq.shape[0] == 0:
        Aeq = None
    Gall, hall, tags = _stack_inequalities(
        None if G is None else np.asarray(G, dtype=float),
        None if h is None else np.asarray(h, dtype=float),
        lb,
        ub,
        n,
    )
    m_eq = 0 if Aeq is None else Aeq.shape[0]
    m_all = Gall.shape[0]
    w_inv = 1.0 / w

    def kkt_solve(active: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Equality-constrained optimum over Aeq plus the active rows."""
        if m_eq or active:
            A = np.vstack(
                ([Aeq] if m_eq else []) + ([Gall[active]] if active else [])
            )
            r = np.concatenate(
                ([beq] if m_eq else []) + ([hall[active]] if active else [])
            )
            S = (A * w_inv) @ A.T
            rhs = -(r + (A * w_inv) @ q)
            lam, *_ = np.linalg.lstsq(S, rhs, rcond=None)
            x = -w_inv * (q + A.T @ lam)
        else:
            lam = np.zeros(0)
            x = -w_inv * q
        return x, lam

    # starting point: equality-constrained optimum if feasible, else phase 1
    x, _ = kkt_solve([])
    scale = 1.0 + float(np.abs(hall).max()) if m_all else 1.0
    feasible = True
    if m_eq and np.abs(Aeq @ x - beq).max() > 1e-9:
        feasible = False  # inconsistent/rank-deficient equalities: let phase 1 decide
    if feasible and m_all and (Gall @ x - hall).max() > tol * scale:
        feasible = False
    if not feasible:
        x = _phase1_start(Aeq, beq, Gall, hall, lb, ub)

    active: list[int] = []
    max_iter = 20 * (m_all + n + 1)
    lam = np.zeros(0)
    for it in range(max_iter):
        x_ws, lam = kkt_solve(active)
        p = x_ws - x
        step_norm = float(np.abs(p).max()) if n else 0.0
        if step_norm <= 1e-11 * (1.0 + float(np.abs(x).max())):
            mu = lam[m_eq:] if lam.shape[0] > m_eq else np.zeros(0)
            if mu.shape[0] == 0 or mu.min() >= -1e-9:
                x = x_ws
                break
            # drop the lowest-index sufficiently negative multiplier (anti-cycling)
            neg = [k for k in range(mu.shape[0]) if mu[k] < -1e-9]
            drop = min(neg, key=lambda k: active[k])
            active.pop(drop)
            continue
        # ratio test over inactive rows
        alpha = 1.0
        blocker = -1
        if m_all:
            Gp = Gall @ p
            slackv = hall - Gall @ x
            for i in range(m_all):
                if i in active or Gp[i] <= tol:
                    continue
                a_i = max(slackv[i], 0.0) / Gp[i]
                if a_i < alpha - 1e-12:
                    alpha = a_i
                    blocker = i
                elif a_i < alpha + 1e-12 and blocker >= 0 and i < blocker:
                    blocker = i
        x = x + alpha * p
        if blocker >= 0:
            active.append(blocker)
            active.sort()
    else:
        raise QpNoConvergence(f"active set did not converge in {max_iter} iterations")

    nu_eq = lam[:m_eq] if m_eq else np.zeros(0)
    mu_rows = lam[m_eq:]
    m_g = 0 if G is None else (np.asarray(G).shape[0] if np.asarray(G).size else 0)
    mu_ineq = np.zeros(m_g)
    mu_lower = np.zeros(n)
    mu_upper = np.zeros(n)
    for k, row in enumerate(active):
        kind, j = tags[row]
        val = max(0.0, float(mu_rows[k])) if k < mu_rows.shape[0] else 0.0
        if kind == "g":
            mu_ineq[j] = val
        elif kind == "ub":
            mu_upper[j] = val
        else:
            mu_lower[j] = val
    obj = float(0.5 * np.sum(w * x * x) + q @ x)
    return QpResult(
        x=x,
        nu_eq=nu_eq,
        mu_ineq=mu_ineq,
        mu_lower=mu_lower,
        mu_upper=mu_upper,
        iterations=it + 1,
        objective=obj,
    )
