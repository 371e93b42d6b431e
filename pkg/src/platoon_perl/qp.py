"""Dense convex QP solver with KKT certificates.

Solves ``min 0.5 x'Px + q'x  s.t.  Gx <= h`` with the Goldfarb-Idnani dual
active-set method. The method starts from the unconstrained minimizer and
adds violated constraints one at a time while keeping the multipliers
nonnegative, so every iterate is dual feasible and the final active set
gives exact complementarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


class QpError(ValueError):
    pass


@dataclass
class QpProblem:
    p_mat: np.ndarray
    q_vec: np.ndarray
    g_mat: np.ndarray | None = None
    h_vec: np.ndarray | None = None

    def __post_init__(self):
        self.p_mat = np.atleast_2d(np.asarray(self.p_mat, dtype=float))
        self.q_vec = np.asarray(self.q_vec, dtype=float).ravel()
        n = self.q_vec.size
        if self.g_mat is None:
            self.g_mat = np.zeros((0, n))
            self.h_vec = np.zeros(0)
        self.g_mat = np.asarray(self.g_mat, dtype=float).reshape(-1, n)
        self.h_vec = np.asarray(self.h_vec, dtype=float).ravel()
        if self.p_mat.shape != (n, n):
            raise QpError(f"P has shape {self.p_mat.shape}, expected ({n}, {n})")
        if self.h_vec.size != self.g_mat.shape[0]:
            raise QpError(f"G has {self.g_mat.shape[0]} rows but h has {self.h_vec.size} entries")
        if not np.allclose(self.p_mat, self.p_mat.T, atol=1e-10, rtol=0):
            raise QpError("P is not symmetric")

    @property
    def n(self) -> int:
        return self.q_vec.size

    @property
    def m(self) -> int:
        return self.h_vec.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.p_mat @ x + self.q_vec @ x)

    def dump(self, path) -> None:
        """Write the problem as whitespace-separated text.

        Layout: header ``n m``, then P (n rows), q (1 row), G (m rows), h (1 row).
        """
        fmt = lambda row: " ".join(f"{v:.17g}" for v in row)
        lines = [f"{self.n} {self.m}"]
        lines += [fmt(r) for r in self.p_mat]
        lines.append(fmt(self.q_vec))
        lines += [fmt(r) for r in self.g_mat]
        lines.append(fmt(self.h_vec))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "QpProblem":
        text = Path(path).read_text().splitlines()
        n, m = (int(t) for t in text[0].split())
        values = np.array(" ".join(text[1:]).split(), dtype=float)
        sizes = [n * n, n, m * n, m]
        if values.size != sum(sizes):
            raise QpError(f"expected {sum(sizes)} numbers for n={n}, m={m}, found {values.size}")
        p, q, g, h = np.split(values, np.cumsum(sizes)[:-1])
        return cls(p.reshape(n, n), q, g.reshape(m, n), h)


@dataclass
class KktResiduals:
    stationarity: float
    primal: float
    complementarity: float
    dual: float = 0.0

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity, self.dual)


@dataclass
class QpSolution:
    x_star: np.ndarray
    duals: np.ndarray
    status: str
    kkt_residuals: KktResiduals
    iterations: int = 0
    active_set: list[int] = field(default_factory=list)
    certificate: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class KktReport:
    passed: bool
    residuals: KktResiduals
    tol: float


def kkt_residuals(problem: QpProblem, x, duals) -> KktResiduals:
    x = np.asarray(x, dtype=float)
    mu = np.asarray(duals, dtype=float)
    grad = problem.p_mat @ x + problem.q_vec + problem.g_mat.T @ mu
    slack = problem.g_mat @ x - problem.h_vec
    return KktResiduals(
        stationarity=float(np.max(np.abs(grad), initial=0.0)),
        primal=float(np.max(slack, initial=0.0).clip(0.0)),
        complementarity=float(abs(mu @ slack)),
        dual=float(max(-mu.min(initial=0.0), 0.0)),
    )


def check_kkt(problem: QpProblem, solution: QpSolution, tol: float = 1e-6) -> KktReport:
    """Recompute the KKT residuals from scratch and compare against ``tol``."""
    res = kkt_residuals(problem, solution.x_star, solution.duals)
    return KktReport(passed=res.max() <= tol, residuals=res, tol=tol)


class _ActiveSetSolver:
    """One Goldfarb-Idnani solve; holds the factorization and working set."""

    def __init__(self, problem: QpProblem, regularization: float):
        self.pr = problem
        p = problem.p_mat + regularization * np.eye(problem.n)
        try:
            self.chol = cho_factor(p, lower=True)
        except np.linalg.LinAlgError as exc:
            raise QpError("P + eps*I is not positive definite; increase regularization") from exc
        # constraints rewritten as n_j'x >= b_j
        self.normals = -problem.g_mat
        self.b = -problem.h_vec
        self.x = -cho_solve(self.chol, problem.q_vec)
        self.active: list[int] = []
        self.u = np.zeros(0)
        scale = np.abs(problem.h_vec).max(initial=0.0) + np.abs(problem.g_mat).max(initial=0.0)
        self.viol_tol = 1e-12 * (1.0 + scale)
        self.iterations = 0

    def hsolve(self, v):
        return cho_solve(self.chol, v)

    def directions(self, p: int):
        npv = self.normals[p]
        hn = self.hsolve(npv)
        if not self.active:
            return hn, np.zeros(0), float(npv @ hn)
        nmat = self.normals[self.active].T
        hnm = self.hsolve(nmat)
        r = np.linalg.solve(nmat.T @ hnm, hnm.T @ npv)
        z = hn - hnm @ r
        return z, r, float(npv @ hn)

    def try_warm_start(self, x0) -> None:
        x0 = np.asarray(x0, dtype=float)
        slack = self.normals @ x0 - self.b
        cand = [j for j in np.flatnonzero(np.abs(slack) <= 1e-8 * (1 + np.abs(self.b)))]
        if not cand or len(cand) > self.pr.n:
            return
        nmat = self.normals[cand].T
        if np.linalg.matrix_rank(nmat) < len(cand):
            return
        hnm = self.hsolve(nmat)
        x_free = -cho_solve(self.chol, self.pr.q_vec)
        u = np.linalg.solve(nmat.T @ hnm, self.b[cand] - nmat.T @ x_free)
        if np.all(u >= 0):
            self.active = [int(j) for j in cand]
            self.u = u
            self.x = x_free + hnm @ u

    def drop(self, k: int) -> None:
        del self.active[k]
        self.u = np.delete(self.u, k)

    def run(self, max_iter: int):
        while True:
            s = self.normals @ self.x - self.b
            if self.active:
                s[self.active] = np.inf
            if s.size == 0 or s.min() >= -self.viol_tol:
                return OPTIMAL, None
            p = int(np.argmin(s))
            u_p = 0.0
            while True:
                if self.iterations >= max_iter:
                    return MAX_ITER, None
                self.iterations += 1
                z, r, curv = self.directions(p)
                pos = np.flatnonzero(r > 0)
                if pos.size:
                    ratios = self.u[pos] / r[pos]
                    k = int(pos[np.argmin(ratios)])
                    t2 = float(ratios.min())
                else:
                    k, t2 = None, np.inf
                zn = float(z @ self.normals[p])
                if zn <= 1e-12 * max(curv, 1e-300):
                    # n_p is spanned by the active normals
                    if k is None:
                        return INFEASIBLE, self._certificate(p, r)
                    self.u = self.u - t2 * r
                    u_p += t2
                    self.drop(k)
                    continue
                t1 = -(self.normals[p] @ self.x - self.b[p]) / zn
                t = min(t1, t2)
                self.x = self.x + t * z
                self.u = self.u - t * r
                u_p += t
                if t1 <= t2:
                    self.active.append(p)
                    self.u = np.append(self.u, u_p)
                    break
                self.drop(k)

    def _certificate(self, p: int, r: np.ndarray):
        y = np.zeros(self.pr.m)
        y[p] = 1.0
        y[self.active] = -r
        if y @ self.pr.h_vec < 0:
            return y
        return None

    def duals(self) -> np.ndarray:
        mu = np.zeros(self.pr.m)
        mu[self.active] = np.maximum(self.u, 0.0)
        return mu


def solve(problem: QpProblem, tol: float = 1e-6, max_iter: int = 20000,
          regularization: float = 1e-8, warm_start=None) -> QpSolution:
    """Solve a convex QP.

    Args:
        problem: the instance.
        tol: KKT tolerance the returned ``optimal`` status is certified against.
        max_iter: cap on active-set changes.
        regularization: added to P's diagonal so semidefinite instances factor.
        warm_start: optional previous solution; constraints tight there seed
            the working set when their multipliers come out nonnegative.

    Returns:
        QpSolution. ``status`` is ``infeasible`` when a constraint cannot be
        added without breaking dual feasibility; ``certificate`` then holds a
        Farkas vector ``y >= 0`` with ``G'y = 0``, ``h'y < 0`` when available.
    """
    solver = _ActiveSetSolver(problem, regularization)
    if warm_start is not None and problem.m:
        solver.try_warm_start(warm_start)
    status, cert = solver.run(max_iter)
    mu = solver.duals()
    res = kkt_residuals(problem, solver.x, mu)
    if status == OPTIMAL and regularization > 0:
        # polish on the final working set with the unshifted P
        x_ref, mu_ref = _refine(problem, solver.active, mu)
        res_ref = kkt_residuals(problem, x_ref, mu_ref)
        if res_ref.max() < res.max():
            solver.x, mu, res = x_ref, mu_ref, res_ref
    if status == OPTIMAL and res.max() > tol:
        status = MAX_ITER
    return QpSolution(solver.x, mu, status, res, solver.iterations, list(solver.active), cert)


def _refine(problem: QpProblem, active: list[int], mu):
    n, act = problem.n, list(active)
    ga = problem.g_mat[act]
    kkt = np.block([[problem.p_mat, ga.T], [ga, np.zeros((len(act), len(act)))]])
    rhs = np.concatenate([-problem.q_vec, problem.h_vec[act]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    mu = mu.copy()
    mu[act] = np.maximum(sol[n:], 0.0)
    return sol[:n], mu
