"""Dense convex quadratic programming for the planners.

minimize 1/2 u'Pu + q'u  subject to  Au <= b, Eu = f, lower <= u <= upper.

Problems here are small (a handful of joints, or a stacked trajectory of
at most ~150 variables), so dense methods suffice.  A dense active-set
iteration (exact KKT solves on a working set) handles the common case;
when it fails to settle — degenerate active sets, infeasible problems —
the solver falls back to cvxopt's interior point and polishes its answer
with the same active-set iteration, so optimal solutions satisfy the KKT
conditions to solver tolerance rather than interior-point tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import cvxopt

cvxopt.solvers.options.update({
    "show_progress": False,
    "abstol": 1e-10,
    "reltol": 1e-10,
    "feastol": 1e-10,
    "maxiters": 200,
})

_TIKHONOV = 1e-10
_PSD_FLOOR = -1e-8

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    E: np.ndarray | None = None
    f: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P shape {self.P.shape} inconsistent with q length {n}")
        self.P = 0.5 * (self.P + self.P.T)
        for name in ("A", "E"):
            m = getattr(self, name)
            if m is not None:
                m = np.atleast_2d(np.asarray(m, dtype=float))
                if m.shape[1] != n:
                    raise ValueError(f"{name} has {m.shape[1]} columns, expected {n}")
                setattr(self, name, m)
        if (self.A is None) != (self.b is None) or (self.E is None) != (self.f is None):
            raise ValueError("A/b and E/f must be given together")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=float).reshape(-1)
            if self.b.shape[0] != self.A.shape[0]:
                raise ValueError("b length inconsistent with A")
        if self.f is not None:
            self.f = np.asarray(self.f, dtype=float).reshape(-1)
            if self.f.shape[0] != self.E.shape[0]:
                raise ValueError("f length inconsistent with E")
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float).reshape(-1))
                if getattr(self, name).shape[0] != n:
                    raise ValueError(f"{name} length inconsistent with q")

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass
class QpSolution:
    x_star: np.ndarray
    objective: float
    status: str


def _stack_inequalities(problem: QpProblem):
    """All inequality rows Gx <= h including box bounds."""
    n = problem.n
    rows, rhs = [], []
    if problem.A is not None:
        rows.append(problem.A)
        rhs.append(problem.b)
    if problem.upper is not None:
        keep = np.isfinite(problem.upper)
        if keep.any():
            rows.append(np.eye(n)[keep])
            rhs.append(problem.upper[keep])
    if problem.lower is not None:
        keep = np.isfinite(problem.lower)
        if keep.any():
            rows.append(-np.eye(n)[keep])
            rhs.append(-problem.lower[keep])
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _kkt_solve(P, q, E, f, G_act, h_act):
    """Equality-constrained solve treating the active rows as equalities."""
    n = P.shape[0]
    C = np.vstack([m for m in (E, G_act) if m is not None and m.shape[0] > 0]) \
        if (E is not None and E.shape[0] > 0) or G_act.shape[0] > 0 else np.zeros((0, n))
    d_parts = []
    if E is not None and E.shape[0] > 0:
        d_parts.append(f)
    if G_act.shape[0] > 0:
        d_parts.append(h_act)
    d = np.concatenate(d_parts) if d_parts else np.zeros(0)
    m = C.shape[0]
    KKT = np.zeros((n + m, n + m))
    KKT[:n, :n] = P
    KKT[:n, n:] = C.T
    KKT[n:, :n] = C
    rhs = np.concatenate([-q, d])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    return sol[:n], sol[n:]


def _active_set(problem: QpProblem, x: np.ndarray, G: np.ndarray, h: np.ndarray,
                tol: float, max_iter: int = 30):
    """Iterate exact KKT solves on a working set seeded from x.

    Adds the most violated row, drops the most negative multiplier, and
    stops at a KKT point (globally optimal for a convex QP).  Returns the
    point, or None when no consistent active set is found within the
    iteration budget (the caller then falls back to the interior-point
    path, which also handles infeasible problems).
    """
    P = problem.P + _TIKHONOV * np.eye(problem.n)
    slack = h - G @ x if G.shape[0] else np.zeros(0)
    active = set(np.nonzero(slack < 1e-6 * (1.0 + np.abs(h)))[0].tolist())
    n_eq = problem.E.shape[0] if problem.E is not None else 0
    for _ in range(max_iter):
        idx = sorted(active)
        xk, lam = _kkt_solve(P, problem.q, problem.E, problem.f, G[idx], h[idx])
        ineq_lam = lam[n_eq:]
        # drop the most negative multiplier, if any
        if len(idx) and ineq_lam.size and ineq_lam.min() < -tol:
            active.discard(idx[int(np.argmin(ineq_lam))])
            continue
        viol = G @ xk - h if G.shape[0] else np.zeros(0)
        if viol.size and viol.max() > tol:
            j = int(np.argmax(viol))
            if j in active:
                return None  # inconsistent active set; keep interior point
            active.add(j)
            continue
        return xk
    return None


def _dual_active_set(problem: QpProblem, P: np.ndarray, G: np.ndarray,
                     h: np.ndarray, tol: float):
    """Goldfarb-Idnani dual active-set method for strictly convex dense QPs.

    Starts at the unconstrained minimizer and adds one violated constraint
    at a time, taking combined primal/dual steps; constraints whose
    multiplier would go negative are dropped along the way.  Equality rows
    are added first and never dropped.  Finite termination holds for
    nondegenerate problems; a generous iteration cap guards the degenerate
    ones, where None is returned and the caller falls back to the
    interior-point path.

    Returns (x, OPTIMAL), (None, INFEASIBLE), or None to give up.
    """
    n = problem.n
    # constraints as C x >= d: equalities first (driven to equality and
    # pinned), then -G x >= -h
    n_eq = problem.E.shape[0] if problem.E is not None else 0
    if n_eq:
        C = np.vstack([problem.E, -G])
        d = np.concatenate([problem.f, -h])
    else:
        C = -G
        d = -h
    m = C.shape[0]
    try:
        Ginv = np.linalg.inv(P)
    except np.linalg.LinAlgError:
        return None
    x = -Ginv @ problem.q
    active: list[int] = []      # constraint indices in the working set
    normals: list[np.ndarray] = []  # effective normals (sign-adjusted equalities)
    u: list[float] = []         # multipliers for the working set
    feastol = tol * 10.0

    for _ in range(8 * (m + 1)):
        # choose the next constraint to satisfy
        s = C @ x - d
        p = -1
        for j in range(n_eq):          # unmet equalities first
            if j not in active and abs(s[j]) > feastol:
                p = j
                break
        if p < 0:
            viol = np.where(s < -feastol)[0]
            viol = [j for j in viol if j >= n_eq and j not in active]
            if not viol:
                return x, OPTIMAL
            p = min(viol, key=lambda j: s[j])
        n_p = C[p] if (p >= n_eq or s[p] < 0) else -C[p]
        b_p = d[p] if (p >= n_eq or s[p] < 0) else -d[p]
        u_p = 0.0

        for _ in range(m + 1):
            v = Ginv @ n_p
            if normals:
                N = np.column_stack(normals)
                GiN = Ginv @ N
                M = N.T @ GiN
                try:
                    r = np.linalg.solve(M, N.T @ v)
                except np.linalg.LinAlgError:
                    r, *_ = np.linalg.lstsq(M, N.T @ v, rcond=None)
                z = v - GiN @ r
            else:
                r = np.zeros(0)
                z = v
            zn = float(z @ n_p)
            # dual step length: first working-set inequality whose
            # multiplier would hit zero
            t1, k1 = math.inf, -1
            for i, j in enumerate(active):
                if j >= n_eq and r[i] > tol:
                    cand = u[i] / r[i]
                    if cand < t1:
                        t1, k1 = cand, i
            # primal step length to reach the constraint boundary
            t2 = (b_p - float(n_p @ x)) / zn if zn > tol else math.inf
            t = min(t1, t2)
            if not math.isfinite(t):
                return None, INFEASIBLE
            if math.isfinite(t2):
                x = x + t * z
            u = [ui - t * ri for ui, ri in zip(u, r)]
            u_p += t
            if t == t2:
                active.append(p)
                normals.append(n_p)
                u.append(u_p)
                break
            del active[k1], normals[k1], u[k1]
        else:
            return None  # inner loop failed to settle; degenerate
    return None


def _objective(problem: QpProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ problem.P @ x + problem.q @ x)


def _feasible(problem: QpProblem, x: np.ndarray, G, h, tol: float) -> bool:
    if G.shape[0] and (G @ x - h).max() > tol:
        return False
    if problem.E is not None and problem.E.shape[0]:
        if np.abs(problem.E @ x - problem.f).max() > tol:
            return False
    return True


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    """Solve the QP.  Deterministic for identical input.

    status is "optimal" only when the returned point is primal feasible
    within tol; detected infeasibility yields status "infeasible" and the
    iteration cap yields "max_iterations".
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    eigs = np.linalg.eigvalsh(problem.P)
    if eigs.min() < _PSD_FLOOR:
        raise ValueError(f"P is not positive semidefinite (min eigenvalue {eigs.min():.3g})")
    G, h = _stack_inequalities(problem)
    n = problem.n
    P = problem.P + _TIKHONOV * np.eye(n)

    if G.shape[0] == 0 and (problem.E is None or problem.E.shape[0] == 0):
        x = np.linalg.solve(P, -problem.q)
        return QpSolution(x, _objective(problem, x), OPTIMAL)

    # dual active-set pass first: much cheaper than the interior-point path
    # on the small dense problems solved here
    gi = _dual_active_set(problem, P, G, h, tol)
    if gi is not None:
        x, status = gi
        if status == INFEASIBLE:
            return QpSolution(np.full(n, np.nan), np.nan, INFEASIBLE)
        if _feasible(problem, x, G, h, tol):
            return QpSolution(x, _objective(problem, x), OPTIMAL)

    kwargs = {}
    if G.shape[0]:
        kwargs["G"] = cvxopt.matrix(G)
        kwargs["h"] = cvxopt.matrix(h)
    if problem.E is not None and problem.E.shape[0]:
        kwargs["A"] = cvxopt.matrix(problem.E)
        kwargs["b"] = cvxopt.matrix(problem.f)
    try:
        res = cvxopt.solvers.qp(cvxopt.matrix(P), cvxopt.matrix(problem.q), **kwargs)
    except (ValueError, ArithmeticError):
        return QpSolution(np.full(n, np.nan), np.nan, INFEASIBLE)

    x = np.array(res["x"]).reshape(-1) if res["x"] is not None else None
    if res["status"] == "optimal" or (res["status"] == "unknown" and x is not None):
        polished = _active_set(problem, x, G, h, tol)
        if polished is not None and _feasible(problem, polished, G, h, tol):
            return QpSolution(polished, _objective(problem, polished), OPTIMAL)
        if _feasible(problem, x, G, h, tol):
            status = OPTIMAL if res["status"] == "optimal" else MAX_ITERATIONS
            return QpSolution(x, _objective(problem, x), status)
        return QpSolution(np.full(n, np.nan), np.nan, INFEASIBLE)
    if res["status"] in ("primal infeasible", "dual infeasible"):
        return QpSolution(np.full(n, np.nan), np.nan, INFEASIBLE)
    return QpSolution(np.full(n, np.nan), np.nan, MAX_ITERATIONS)
