import numpy as np
import pytest

from gridcascade import qp

cvxopt = pytest.importorskip("cvxopt")
cvxopt.solvers.options["show_progress"] = False
cvxopt.solvers.options["abstol"] = 1e-10
cvxopt.solvers.options["reltol"] = 1e-10
cvxopt.solvers.options["feastol"] = 1e-10


def test_clamped_balance_examples():
    # symmetric two-bus case
    nu, d, res = qp.clamped_balance(
        np.array([1.0, 1.0]), np.full(2, -9.0), np.full(2, 9.0), 2.0, 2.0
    )
    assert nu == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(d, [0.5, 0.5], atol=1e-12)
    assert res == 0.0
    # clamped with unservable remainder
    nu, d, res = qp.clamped_balance(
        np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.4, 0.0]), 0.0, 1.0
    )
    assert d[0] == pytest.approx(0.4, abs=1e-9)
    assert res == pytest.approx(0.6, abs=1e-9)
    # the worked two-generator clamp: K=(2,1), headroom 0.5 each, target 0.9
    nu, d, res = qp.clamped_balance(
        np.array([2.0, 1.0]), np.full(2, -0.5), np.full(2, 0.5), 0.0, 0.9
    )
    assert np.allclose(d, [0.5, 0.4], atol=1e-9)
    assert res == 0.0


def test_clamped_balance_zero_target_exact():
    nu, d, res = qp.clamped_balance(
        np.array([1.0, 2.0]), np.full(2, -1.0), np.full(2, 1.0), 0.5, 0.0
    )
    assert nu == 0.0 and np.all(d == 0.0) and res == 0.0


def _cvxopt_reference(w, q, Aeq, beq, G, h, lb, ub):
    n = w.shape[0]
    P = cvxopt.matrix(np.diag(w))
    Gs, hs = [], []
    if G is not None:
        Gs.append(G)
        hs.append(h)
    fin_ub = np.isfinite(ub)
    fin_lb = np.isfinite(lb)
    Gs.append(np.eye(n)[fin_ub])
    hs.append(ub[fin_ub])
    Gs.append(-np.eye(n)[fin_lb])
    hs.append(-lb[fin_lb])
    Gm = cvxopt.matrix(np.vstack(Gs))
    hm = cvxopt.matrix(np.concatenate(hs))
    if Aeq is not None:
        sol = cvxopt.solvers.qp(P, cvxopt.matrix(q), Gm, hm,
                                cvxopt.matrix(Aeq), cvxopt.matrix(beq))
    else:
        sol = cvxopt.solvers.qp(P, cvxopt.matrix(q), Gm, hm)
    if sol["status"] != "optimal":
        return None
    return np.array(sol["x"]).ravel()


def test_solve_qp_against_cvxopt_randomized(rng):
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 15))
        m_eq = int(rng.integers(0, min(3, n)))
        m_in = int(rng.integers(0, 12))
        w = rng.uniform(0.5, 3.0, n)
        q = rng.normal(0, 1, n)
        Aeq = rng.normal(0, 1, (m_eq, n)) if m_eq else None
        G = rng.normal(0, 1, (m_in, n)) if m_in else None
        lb = np.where(rng.random(n) < 0.8, rng.uniform(-2, 0, n), -np.inf)
        ub = np.where(rng.random(n) < 0.8, rng.uniform(0, 2, n), np.inf)
        x0 = np.clip(rng.normal(0, 0.5, n),
                     np.where(np.isfinite(lb), lb, -1),
                     np.where(np.isfinite(ub), ub, 1))
        beq = Aeq @ x0 if m_eq else None
        h = (G @ x0 + rng.uniform(0, 1.5, m_in)) if m_in else None
        res = qp.solve_qp(w, q, Aeq, beq, G, h, lb, ub)
        # KKT stationarity with the returned multipliers
        grad = w * res.x + q
        if m_eq:
            grad += Aeq.T @ res.nu_eq
        if m_in:
            grad += G.T @ res.mu_ineq
        grad += res.mu_upper - res.mu_lower
        assert np.abs(grad).max() < 1e-7
        xref = _cvxopt_reference(w, q, Aeq, beq, G, h, lb, ub)
        if xref is not None and np.abs(res.x - xref).max() > 1e-5:
            mismatches += 1
    assert mismatches == 0


def test_solve_qp_infeasible():
    with pytest.raises(qp.QpInfeasible):
        qp.solve_qp(
            np.ones(1), np.zeros(1), None, None,
            np.array([[1.0]]), np.array([-1.0]), lb=np.array([1.0]),
        )


def test_solve_qp_redundant_equalities():
    """Consistent duplicated equality rows must not break the solve."""
    Aeq = np.array([[1.0, 1.0], [2.0, 2.0]])
    beq = np.array([1.0, 2.0])
    res = qp.solve_qp(np.ones(2), np.zeros(2), Aeq, beq, None, None)
    assert np.allclose(res.x, [0.5, 0.5], atol=1e-10)
