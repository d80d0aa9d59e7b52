"""Dense convex quadratic programming and contact wrench constraints.

Problems have the form

    min 0.5 x'Qx + c'x   s.t.  A_eq x = b_eq,  A_in x <= b_in

and are solved with a primal active-set method. A brute-force enumeration
over active sets is provided as a reference for small instances.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.optimize import linprog

REGULARIZATION = 1e-9
FEAS_TOL = 1e-9
OPTIMAL, INFEASIBLE, MAX_ITER = "optimal", "infeasible", "max-iterations"


@dataclass
class QProblem:
    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        d = self.Q.shape[0]
        self.c = np.asarray(self.c, dtype=float).reshape(d)
        self.A_eq = np.zeros((0, d)) if self.A_eq is None else np.asarray(self.A_eq, float).reshape(-1, d)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        self.A_in = np.zeros((0, d)) if self.A_in is None else np.asarray(self.A_in, float).reshape(-1, d)
        self.b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, float).ravel()

    @property
    def dim(self):
        return self.Q.shape[0]

    def objective(self, x):
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass
class QPResult:
    x: np.ndarray
    status: str
    objective: float
    active_set: tuple = ()
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    in_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    certificate: float = 0.0  # minimal total constraint violation when infeasible

    @property
    def ok(self):
        return self.status == OPTIMAL


def kkt_residuals(qp: QProblem, res: QPResult) -> dict:
    """Stationarity, primal feasibility, dual feasibility and complementarity."""
    x, lam = res.x, res.in_multipliers
    Qr = qp.Q + REGULARIZATION * np.eye(qp.dim)
    grad = Qr @ x + qp.c + qp.A_eq.T @ res.eq_multipliers + qp.A_in.T @ lam
    slack = qp.b_in - qp.A_in @ x
    return {
        "stationarity": float(np.abs(grad).max(initial=0.0)),
        "equality": float(np.abs(qp.A_eq @ x - qp.b_eq).max(initial=0.0)),
        "inequality": float(max(0.0, -slack.min(initial=0.0))),
        "dual": float(max(0.0, -lam.min(initial=0.0))),
        "complementarity": float(np.abs(lam * slack).max(initial=0.0)),
    }


def _independent_rows(A, b, tol=1e-10):
    """Drop dependent equality rows; None if the remaining system is inconsistent."""
    if A.shape[0] == 0:
        return A, b
    _, R, piv = qr(A.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    r = int(np.sum(diag > tol * max(diag[0], 1.0))) if diag.size else 0
    keep = np.sort(piv[:r])
    Ak, bk = A[keep], b[keep]
    x = np.linalg.lstsq(Ak, bk, rcond=None)[0]
    if np.abs(A @ x - b).max() > 1e-8 * max(1.0, np.abs(b).max()):
        return None
    return Ak, bk


def _eqp(Q, g, A):
    """Solve min 0.5 p'Qp + g'p s.t. A p = 0; returns (p, multipliers)."""
    d, k = Q.shape[0], A.shape[0]
    if k == 0:
        return np.linalg.solve(Q, -g), np.zeros(0)
    K = np.zeros((d + k, d + k))
    K[:d, :d] = Q
    K[:d, d:] = A.T
    K[d:, :d] = A
    sol = np.linalg.solve(K, np.r_[-g, np.zeros(k)])
    return sol[:d], sol[d:]


def _phase_one(qp: QProblem, A_eq, b_eq):
    """Feasible point by LP: minimise total inequality violation."""
    d, m = qp.dim, qp.A_in.shape[0]
    cost = np.r_[np.zeros(d), np.ones(m)]
    A_ub = np.hstack([qp.A_in, -np.eye(m)])
    A_e = np.hstack([A_eq, np.zeros((A_eq.shape[0], m))]) if A_eq.shape[0] else None
    bounds = [(None, None)] * d + [(0.0, None)] * m
    lp = linprog(cost, A_ub=A_ub, b_ub=qp.b_in, A_eq=A_e, b_eq=b_eq if A_e is not None else None,
                 bounds=bounds, method="highs")
    if lp.status != 0:
        return None, np.inf
    return lp.x[:d], float(lp.fun)


def solve(qp: QProblem, max_iter: int | None = None, warm_start=None) -> QPResult:
    """Primal active-set method with lowest-index tie breaking.

    ``warm_start`` may hold a previous active set; it is only used when it
    yields a feasible starting point.
    """
    d = qp.dim
    m = qp.A_in.shape[0]
    Qr = qp.Q + REGULARIZATION * np.eye(d)
    reduced = _independent_rows(qp.A_eq, qp.b_eq)
    if reduced is None:
        x = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)[0]
        viol = float(np.abs(qp.A_eq @ x - qp.b_eq).sum())
        return QPResult(x, INFEASIBLE, qp.objective(x), certificate=viol)
    A_eq, b_eq = reduced
    p = A_eq.shape[0]
    if max_iter is None:
        max_iter = 10 * (m + qp.A_eq.shape[0]) + 10

    # equality-constrained minimiser as the first candidate
    x0_eq = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0] if p else np.zeros(d)
    step, _ = _eqp(Qr, Qr @ x0_eq + qp.c, A_eq)
    x = x0_eq + step
    W = []
    if warm_start:
        x_ws = _solve_on_set(Qr, qp.c, np.vstack([A_eq, qp.A_in[list(warm_start)]]),
                             np.r_[b_eq, qp.b_in[list(warm_start)]])
        if x_ws is not None and np.all(qp.A_in @ x_ws <= qp.b_in + FEAS_TOL):
            x, W = x_ws, sorted(warm_start)
    if m and np.any(qp.A_in @ x > qp.b_in + FEAS_TOL):
        x, viol = _phase_one(qp, A_eq, b_eq)
        if x is None or viol > 1e-7:
            if x is None:
                x = x0_eq
            return QPResult(x, INFEASIBLE, qp.objective(x), certificate=viol)
        W = _initial_working_set(qp, A_eq, x)

    lam = np.zeros(0)
    for it in range(max_iter):
        A_w = np.vstack([A_eq, qp.A_in[W]]) if W else A_eq
        g = Qr @ x + qp.c
        step, mult = _eqp(Qr, g, A_w)
        # a step is numerically zero when it is tiny or buys no objective decrease
        # (flat directions of a nearly singular Q leave roundoff-sized steps)
        decrease = -(g @ step + 0.5 * step @ Qr @ step)
        scale = max(1.0, abs(qp.objective(x)), float(np.abs(x).max()))
        if (np.abs(step).max() <= 1e-12 * max(1.0, np.abs(x).max())
                or decrease <= 1e-13 * scale):
            lam = mult[p:]
            if not W or lam.min() >= -1e-12:
                return _finish(qp, x, W, mult, p, it)
            # drop the most negative multiplier (lowest index among ties)
            W.pop(int(np.argmin(lam)))
            continue
        alpha, block = 1.0, None
        Ap = qp.A_in @ step
        slack = qp.b_in - qp.A_in @ x
        for i in range(m):
            if i in W or Ap[i] <= 1e-14:
                continue
            a = max(slack[i], 0.0) / Ap[i]
            if a < alpha:
                alpha, block = a, i
        x = x + alpha * step
        if block is not None:
            W.append(block)
            W.sort()
    return QPResult(x, MAX_ITER, qp.objective(x), tuple(W), iterations=max_iter)


def _solve_on_set(Q, c, A, b):
    try:
        x0 = np.linalg.lstsq(A, b, rcond=None)[0]
        step, _ = _eqp(Q, Q @ x0 + c, A)
    except np.linalg.LinAlgError:
        return None
    return x0 + step


def _initial_working_set(qp, A_eq, x):
    W = []
    rows = A_eq
    for i in np.nonzero(np.abs(qp.A_in @ x - qp.b_in) <= 1e-9)[0]:
        cand = np.vstack([rows, qp.A_in[i]])
        if np.linalg.matrix_rank(cand) == cand.shape[0]:
            W.append(int(i))
            rows = cand
    return W


def _finish(qp, x, W, mult, p, it):
    """Recover full-size multipliers for the original (unreduced) equality rows."""
    lam = np.zeros(qp.A_in.shape[0])
    lam[W] = mult[p:]
    Qr = qp.Q + REGULARIZATION * np.eye(qp.dim)
    r = Qr @ x + qp.c + qp.A_in.T @ lam
    y = np.linalg.lstsq(qp.A_eq.T, -r, rcond=None)[0] if qp.A_eq.shape[0] else np.zeros(0)
    return QPResult(x, OPTIMAL, qp.objective(x), tuple(W), y, lam, it)


def enumerate_oracle(qp: QProblem, max_constraints: int = 14) -> QPResult:
    """Exact optimum by trying every subset of inequalities as equalities."""
    m, p = qp.A_in.shape[0], qp.A_eq.shape[0]
    if m + p > max_constraints:
        raise ValueError(f"enumeration limited to {max_constraints} constraints, got {m + p}")
    Qr = qp.Q + REGULARIZATION * np.eye(qp.dim)
    best = None
    for k in range(m + 1):
        for subset in itertools.combinations(range(m), k):
            A = np.vstack([qp.A_eq, qp.A_in[list(subset)]])
            b = np.r_[qp.b_eq, qp.b_in[list(subset)]]
            if A.shape[0] > qp.dim:
                continue
            if A.shape[0] and np.linalg.matrix_rank(A) < A.shape[0]:
                continue
            x = _solve_on_set(Qr, qp.c, A, b) if A.shape[0] else np.linalg.solve(Qr, -qp.c)
            if x is None or (A.shape[0] and np.abs(A @ x - b).max() > 1e-8):
                continue
            if m and np.any(qp.A_in @ x > qp.b_in + 1e-9):
                continue
            val = float(0.5 * x @ Qr @ x + qp.c @ x)
            if best is None or val < best[0] - 1e-14:
                best = (val, x, subset)
    if best is None:
        return QPResult(np.zeros(qp.dim), INFEASIBLE, np.inf)
    return QPResult(best[1], OPTIMAL, qp.objective(best[1]), best[2])


# ---------------------------------------------------------------------------
# contact constraints

@dataclass(frozen=True)
class ContactLimits:
    mu: float = 0.333
    foot_half_length: float = 0.08
    foot_half_width: float = 0.04
    f_z_min: float = 5.0
    pyramid_facets: int = 4

    def __post_init__(self):
        if self.mu <= 0 or self.foot_half_length <= 0 or self.foot_half_width <= 0:
            raise ValueError("friction and foot geometry must be positive")
        if self.f_z_min < 0 or self.pyramid_facets < 4:
            raise ValueError("need f_z_min >= 0 and at least 4 pyramid facets")


def friction_constraints(limits: ContactLimits, rotation=None):
    """Rows ``A f <= b`` for one foot wrench ``f`` given in inertial coordinates.

    Limits live in the foot frame: an inscribed friction pyramid, a minimum
    normal force, centre of pressure inside the sole and a torsional bound.
    """
    k = limits.pyramid_facets
    mu_in = limits.mu * np.cos(np.pi / k)
    rows = []
    for i in range(k):
        a = 2 * np.pi * i / k
        rows.append([np.cos(a), np.sin(a), -mu_in, 0, 0, 0])
    rows.append([0, 0, -1, 0, 0, 0])
    hl, hw = limits.foot_half_length, limits.foot_half_width
    for s in (1.0, -1.0):
        rows.append([0, 0, -hw, s, 0, 0])
    for s in (1.0, -1.0):
        rows.append([0, 0, -hl, 0, s, 0])
    for s in (1.0, -1.0):
        rows.append([0, 0, -limits.mu, 0, 0, s])
    A = np.array(rows, dtype=float)
    b = np.zeros(len(rows))
    b[k] = -limits.f_z_min
    if rotation is not None:
        R = np.asarray(rotation)
        A = np.hstack([A[:, :3] @ R.T, A[:, 3:] @ R.T])
    return A, b
