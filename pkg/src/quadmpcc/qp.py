"""Dense convex QP solver.

minimize    0.5 z'Hz + g'z
subject to  lb <= z <= ub
            A z == b          (optional)
            lo <= G z <= hi   (optional)

The solver is an active-set method working from the dual side: it starts at
the (equality-constrained) unconstrained optimum and activates one violated
constraint per iteration, taking partial steps that deactivate blocking
constraints on the way. This needs no phase-1 — receding-horizon callers
routinely warm start from slightly infeasible shifted solutions — and a
warm-started re-solve whose working set is already correct finishes in one
pass. The Hessian is regularized by +eps*I when its Cholesky factorization
fails.

Constraint ids, used in working sets and solutions: box lower bounds are
0..n-1, box uppers n..2n-1, general row lowers 2n..2n+m-1 and general row
uppers 2n+m..2n+2m-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_ACT_TOL = 1e-9


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    g_ineq: np.ndarray | None = None
    g_lower: np.ndarray | None = None
    g_upper: np.ndarray | None = None

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.gradient = np.asarray(self.gradient, dtype=float)
        n = len(self.gradient)
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.hessian.shape != (n, n):
            raise ValueError("Hessian shape inconsistent with gradient")
        if np.max(np.abs(self.hessian - self.hessian.T)) > 1e-10 * max(1.0, np.max(np.abs(self.hessian))):
            raise ValueError("Hessian must be symmetric")
        if np.any(self.lower > self.upper):
            raise ValueError("box bounds require lb <= ub")
        if self.a_eq is not None:
            self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        if self.g_ineq is not None:
            self.g_ineq = np.atleast_2d(np.asarray(self.g_ineq, dtype=float))
            m = self.g_ineq.shape[0]
            self.g_lower = np.full(m, -np.inf) if self.g_lower is None else np.asarray(self.g_lower, dtype=float)
            self.g_upper = np.full(m, np.inf) if self.g_upper is None else np.asarray(self.g_upper, dtype=float)

    @property
    def n(self):
        return len(self.gradient)

    @property
    def n_general(self):
        return 0 if self.g_ineq is None else self.g_ineq.shape[0]

    def objective(self, z):
        return float(0.5 * z @ self.hessian @ z + self.gradient @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str
    iterations: int
    working_set: tuple = ()
    kkt_residual: float = np.nan
    regularization: float = 0.0
    multipliers: dict = field(default_factory=dict)


def dump_problem(problem: QpProblem, path):
    """Write the problem in a plain matrix format (one matrix per block,
    'name rows cols' header followed by whitespace-separated rows)."""

    def block(fh, name, arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    with open(path, "w") as fh:
        block(fh, "H", problem.hessian)
        block(fh, "g", problem.gradient)
        block(fh, "lb", problem.lower)
        block(fh, "ub", problem.upper)
        if problem.a_eq is not None:
            block(fh, "A_eq", problem.a_eq)
            block(fh, "b_eq", problem.b_eq)
        if problem.g_ineq is not None:
            block(fh, "G", problem.g_ineq)
            block(fh, "g_lo", problem.g_lower)
            block(fh, "g_hi", problem.g_upper)


class _Factor:
    """Regularized Hessian with saddle-point solves.

    Working with the full KKT system [H N'; N 0] instead of explicit
    H-inverse Schur complements keeps equality-constrained solves accurate
    even when H is only positive semidefinite (regularization then merely
    pins the unconstrained start, not the constrained solution).
    """

    def __init__(self, h):
        self.reg = 0.0
        eps = 1e-8
        mat = h
        while True:
            try:
                self.chol = cho_factor(mat, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                self.reg = eps
                mat = h + eps * np.eye(h.shape[0])
                eps *= 100.0
                if eps > 1e2:
                    raise
        self.h_work = mat
        self.n = h.shape[0]

    def solve(self, rhs):
        return cho_solve(self.chol, rhs, check_finite=False)

    def saddle_solve(self, n_act, top, bottom):
        """Solve [H_work N'; N 0] [z; y] = [top; bottom]."""
        m = n_act.shape[0]
        if m == 0:
            return self.solve(top), np.zeros(0)
        kkt = np.zeros((self.n + m, self.n + m))
        kkt[: self.n, : self.n] = self.h_work
        kkt[: self.n, self.n :] = n_act.T
        kkt[self.n :, : self.n] = n_act
        rhs = np.concatenate([top, bottom])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        return sol[: self.n], sol[self.n :]


class _Constraints:
    """One-sided view (normal . z >= rhs) over boxes and general rows."""

    def __init__(self, p: QpProblem):
        self.p = p
        self.n = p.n
        self.m = p.n_general

    def value_and_rhs(self, cid, z):
        n, m = self.n, self.m
        if cid < n:
            return z[cid], self.p.lower[cid]
        if cid < 2 * n:
            i = cid - n
            return -z[i], -self.p.upper[i]
        if cid < 2 * n + m:
            j = cid - 2 * n
            return float(self.p.g_ineq[j] @ z), self.p.g_lower[j]
        j = cid - 2 * n - m
        return -float(self.p.g_ineq[j] @ z), -self.p.g_upper[j]

    def normal(self, cid):
        n, m = self.n, self.m
        row = np.zeros(self.n)
        if cid < n:
            row[cid] = 1.0
        elif cid < 2 * n:
            row[cid - n] = -1.0
        elif cid < 2 * n + m:
            row = self.p.g_ineq[cid - 2 * n].copy()
        else:
            row = -self.p.g_ineq[cid - 2 * n - m]
        return row

    def violations(self, z):
        """Violation per constraint id (positive means violated)."""
        p = self.p
        out = np.concatenate([p.lower - z, z - p.upper])
        if self.m:
            gz = p.g_ineq @ z
            out = np.concatenate([out, p.g_lower - gz, gz - p.g_upper])
        out[~np.isfinite(out)] = -np.inf  # infinite bounds never violate
        return out


class _Workspace:
    """Incremental working-set solves for a strictly convex Hessian.

    Caches H^-1 N' column by column so each add/drop costs O(n^2) and each
    Schur solve O(m^3) instead of refactoring the full KKT system. Only used
    when no regularization was needed; semidefinite Hessians go through the
    saddle-point path, which tolerates them.
    """

    def __init__(self, factor, cons, n_eq, a_eq, b_eq):
        self.factor = factor
        self.cons = cons
        self.n = factor.n
        self.n_eq = n_eq
        self.ids: list[int] = []
        self.nmat = np.zeros((0, self.n)) if n_eq == 0 else np.atleast_2d(a_eq).copy()
        self.rhs = np.zeros(0) if n_eq == 0 else np.atleast_1d(b_eq).astype(float).copy()
        self.cols = factor.solve(self.nmat.T) if len(self.nmat) else np.zeros((self.n, 0))
        self.smat = self.nmat @ self.cols if len(self.nmat) else np.zeros((0, 0))

    @property
    def m(self):
        return self.nmat.shape[0]

    def add(self, cid):
        row = self.cons.normal(cid)
        col = self.factor.solve(row)
        m = self.m
        smat = np.empty((m + 1, m + 1))
        smat[:m, :m] = self.smat
        if m:
            cross = self.nmat @ col
            smat[:m, m] = cross
            smat[m, :m] = cross
        smat[m, m] = row @ col
        self.smat = smat
        self.nmat = np.vstack([self.nmat, row[None, :]])
        self.cols = np.column_stack([self.cols, col])
        self.rhs = np.append(self.rhs, self.cons.value_and_rhs(cid, np.zeros(self.n))[1])
        self.ids.append(cid)

    def drop(self, k_ineq):
        k = self.n_eq + k_ineq
        keep = [i for i in range(self.m) if i != k]
        self.nmat = self.nmat[keep]
        self.cols = self.cols[:, keep]
        self.smat = self.smat[np.ix_(keep, keep)]
        self.rhs = self.rhs[keep]
        self.ids.pop(k_ineq)

    def set_ids(self, ids):
        """Batch-activate a working set (one multi-rhs solve)."""
        if not ids:
            return
        rows = np.array([self.cons.normal(c) for c in ids])
        cols = self.factor.solve(rows.T)
        self.nmat = np.vstack([self.nmat, rows])
        self.cols = np.column_stack([self.cols, cols])
        self.smat = self.nmat @ self.cols
        self.rhs = np.concatenate(
            [self.rhs, [self.cons.value_and_rhs(c, np.zeros(self.n))[1] for c in ids]]
        )
        self.ids.extend(ids)

    def _s_solve(self, rhs):
        s = self.smat + 1e-13 * np.eye(self.m)
        return np.linalg.solve(s, rhs)

    def eqp(self, g):
        z0 = self.factor.solve(-g)
        if self.m == 0:
            return z0, np.zeros(0)
        y = self._s_solve(self.nmat @ z0 - self.rhs)
        return z0 - self.cols @ y, y  # duals = -y handled by caller

    def step(self, n_plus):
        c_plus = self.factor.solve(n_plus)
        if self.m == 0:
            return c_plus, np.zeros(0)
        r = self._s_solve(self.nmat @ c_plus)
        return c_plus - self.cols @ r, r


class _SaddleWorkspace:
    """Same interface as _Workspace via full saddle solves (handles
    semidefinite Hessians at the cost of a KKT factorization per solve)."""

    def __init__(self, factor, cons, n_eq, a_eq, b_eq):
        self.factor = factor
        self.cons = cons
        self.n = factor.n
        self.n_eq = n_eq
        self.ids: list[int] = []
        self.nmat = np.zeros((0, self.n)) if n_eq == 0 else np.atleast_2d(a_eq).copy()
        self.rhs = np.zeros(0) if n_eq == 0 else np.atleast_1d(b_eq).astype(float).copy()

    @property
    def m(self):
        return self.nmat.shape[0]

    def add(self, cid):
        self.nmat = np.vstack([self.nmat, self.cons.normal(cid)[None, :]])
        self.rhs = np.append(self.rhs, self.cons.value_and_rhs(cid, np.zeros(self.n))[1])
        self.ids.append(cid)

    def drop(self, k_ineq):
        k = self.n_eq + k_ineq
        keep = [i for i in range(self.m) if i != k]
        self.nmat = self.nmat[keep]
        self.rhs = self.rhs[keep]
        self.ids.pop(k_ineq)

    def set_ids(self, ids):
        for cid in ids:
            self.add(cid)

    def eqp(self, g):
        z, y = self.factor.saddle_solve(self.nmat, -g, self.rhs)
        return z, y

    def step(self, n_plus):
        return self.factor.saddle_solve(self.nmat, n_plus, np.zeros(self.m))


def solve_qp(problem: QpProblem, warm_start=None, max_iter: int = 200) -> QpSolution:
    """Solve the QP; warm_start is a previous QpSolution or a primal guess
    whose active constraints seed the working set."""
    p = problem
    n = p.n
    factor = _Factor(p.hessian)
    cons = _Constraints(p)
    n_eq = 0 if p.a_eq is None else np.atleast_2d(p.a_eq).shape[0]
    ws_cls = _Workspace if factor.reg == 0.0 else _SaddleWorkspace
    ws = ws_cls(factor, cons, n_eq, p.a_eq, p.b_eq)

    # seed working set from the warm start
    if isinstance(warm_start, QpSolution):
        cand = [c for c in warm_start.working_set if c < 2 * n + 2 * cons.m]
    elif warm_start is not None:
        viol = cons.violations(np.asarray(warm_start, dtype=float))
        cand = list(np.nonzero(viol > -_ACT_TOL)[0])
    else:
        cand = []
    try:
        ws.set_ids(cand[: max(n - n_eq, 0)])
    except np.linalg.LinAlgError:
        ws = ws_cls(factor, cons, n_eq, p.a_eq, p.b_eq)

    iterations = 0
    status = "optimal"

    # pre-activation: solve on the seeded set, dropping wrong-sign duals
    while True:
        try:
            z, y = ws.eqp(p.gradient)
        except np.linalg.LinAlgError:
            if ws.ids:
                ws = ws_cls(factor, cons, n_eq, p.a_eq, p.b_eq)
                continue
            return QpSolution(np.zeros(n), np.nan, "infeasible", iterations)
        if n_eq and np.linalg.norm(p.a_eq @ z - p.b_eq) > 1e-6 * max(1.0, np.linalg.norm(p.b_eq)):
            return QpSolution(np.clip(z, p.lower, p.upper), p.objective(z), "infeasible", iterations)
        lam_all = -y
        lam = lam_all[n_eq:]
        neg = np.nonzero(lam < -_ACT_TOL)[0]
        if len(neg) == 0:
            lam = np.clip(lam, 0.0, None)
            lam_eq = lam_all[:n_eq]
            break
        for k in sorted(neg, reverse=True):
            ws.drop(int(k))

    while iterations < max_iter:
        iterations += 1
        viol = cons.violations(z)
        if ws.ids:
            viol[np.array(ws.ids)] = -np.inf  # already active
        worst = int(np.argmax(viol))
        if viol[worst] <= _ACT_TOL:
            status = "optimal"
            break

        n_plus = cons.normal(worst)
        rhs_plus = cons.value_and_rhs(worst, z)[1]
        lam_plus = 0.0
        inner_guard = 0
        while True:
            inner_guard += 1
            if inner_guard > 2 * (n + cons.m) + 4:
                status = "max_iter"
                break
            d, r = ws.step(n_plus)
            r_ineq = r[n_eq:]

            denom = float(n_plus @ d)
            slack = float(n_plus @ z) - rhs_plus  # negative: still violated
            t_full = -slack / denom if denom > 1e-12 else np.inf

            t_block = np.inf
            block_k = -1
            pos = np.nonzero(r_ineq > 1e-12)[0]
            if len(pos):
                ratios = lam[pos] / r_ineq[pos]
                j = int(np.argmin(ratios))
                t_block, block_k = float(ratios[j]), int(pos[j])
            t = min(t_full, t_block)
            if not np.isfinite(t):
                return QpSolution(
                    np.clip(z, p.lower, p.upper), p.objective(z), "infeasible", iterations
                )

            z = z + t * d
            if n_eq:
                lam_eq = lam_eq + t * r[:n_eq]
            if len(lam):
                lam = lam - t * r_ineq
            lam_plus += t

            if t == t_full:
                ws.add(worst)
                lam = np.append(lam, lam_plus)
                break
            ws.drop(block_k)
            lam = np.delete(lam, block_k)
            iterations += 1
        if status == "max_iter":
            break
    else:
        status = "max_iter"

    z = np.clip(z, p.lower, p.upper)
    multipliers = {int(c): float(v) for c, v in zip(ws.ids, lam)}
    resid = _kkt_residual(p, z, multipliers, lam_eq if n_eq else None, cons)
    return QpSolution(
        z=z,
        objective=p.objective(z),
        status=status,
        iterations=iterations,
        working_set=tuple(int(c) for c in ws.ids),
        kkt_residual=resid,
        regularization=factor.reg,
        multipliers=multipliers,
    )


def _kkt_residual(p: QpProblem, z, multipliers, lam_eq, cons):
    grad = p.hessian @ z + p.gradient
    for cid, lam in multipliers.items():
        grad -= lam * cons.normal(cid)
    if lam_eq is not None and p.a_eq is not None:
        grad -= p.a_eq.T @ lam_eq
    stationarity = float(np.max(np.abs(grad))) if len(grad) else 0.0
    feas = float(np.max(np.clip(cons.violations(z), 0.0, None)))
    if p.a_eq is not None:
        feas = max(feas, float(np.max(np.abs(p.a_eq @ z - p.b_eq))))
    return max(stationarity, feas)
