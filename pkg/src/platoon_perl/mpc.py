"""Centralized platoon MPC condensed to a dense QP in the control increments.

The decision variable is the stacked increment sequence ``dU`` over the
horizon. Predicted states over steps k+1..k+N are

    X_pred = Phi X_k + Lambda U_{k-1} + Gamma dU

and the tracking cost, spacing/speed/acceleration bounds are all expressed
in ``dU`` so one ``qp.solve`` call returns the whole plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp
from .dynamics import SystemMatrices


class MpcError(ValueError):
    pass


@dataclass
class MpcConfig:
    horizon: int = 10
    q1: float = 1.0
    q2: float = 3.0
    q3: float = 0.1
    q4: float = 0.1
    d_min: float = 15.0
    d_max: float = 30.0
    v_min: float = 0.0
    v_max: float = 30.0
    a_min: float = -4.0
    a_max: float = 4.0
    # weight the last predicted block too (sensitivity switch; the printed form leaves it at zero)
    weight_terminal: bool = False
    soft_penalty_scale: float = 1e4
    qp_tol: float = 1e-6
    qp_max_iter: int = 20000
    qp_regularization: float = 1e-8

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise MpcError(f"horizon must be a positive integer, got {self.horizon}")
        weights = [self.q1, self.q2, self.q3, self.q4]
        if min(weights) < 0 or max(weights) <= 0:
            raise MpcError(f"weights must be nonnegative with one positive, got {weights}")
        for lo, hi, name in [(self.d_min, self.d_max, "d"), (self.v_min, self.v_max, "v"),
                             (self.a_min, self.a_max, "a")]:
            if not lo < hi:
                raise MpcError(f"{name}_min must be below {name}_max, got [{lo}, {hi}]")


@dataclass
class PredictionMatrices:
    phi: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    n_vehicles: int
    horizon: int


@dataclass
class ConstraintSet:
    g_bar: np.ndarray
    g_vec: np.ndarray
    spacing: np.ndarray
    # row indices of g_bar that encode spacing bounds
    spacing_rows: np.ndarray


@dataclass
class MpcDiagnostics:
    status: str
    infeasible: bool = False
    softened: str = ""
    iterations: int = 0
    kkt_max: float = 0.0


def build_prediction_matrices(mats: SystemMatrices, horizon: int) -> PredictionMatrices:
    a, b = mats.a_platoon, mats.b_platoon
    nx, nu = b.shape
    phi = np.zeros((nx * horizon, nx))
    lam = np.zeros((nx * horizon, nu))
    gamma = np.zeros((nx * horizon, nu * horizon))
    # s_blocks[j] = (A^0 + ... + A^j) B
    s_blocks = []
    a_pow = np.eye(nx)
    acc = np.zeros((nx, nx))
    for n in range(horizon):
        acc = acc + a_pow
        s_blocks.append(acc @ b)
        a_pow = a @ a_pow
        phi[n * nx:(n + 1) * nx] = a_pow
    for n in range(horizon):
        lam[n * nx:(n + 1) * nx] = s_blocks[n]
        for m in range(n + 1):
            gamma[n * nx:(n + 1) * nx, m * nu:(m + 1) * nu] = s_blocks[n - m]
    return PredictionMatrices(phi, lam, gamma, nu, horizon)


def build_reference_window(reference, k: int, horizon: int) -> np.ndarray:
    """Stack reference states for steps k+1..k+N.

    ``reference`` is anything with ``p``, ``v``, ``a`` arrays of shape
    (steps, vehicles). Steps past the end hold the final reference state.
    """
    last = reference.p.shape[0] - 1
    idx = np.minimum(np.arange(k + 1, k + horizon + 1), last)
    return np.concatenate([np.concatenate([reference.p[j], reference.v[j], reference.a[j]])
                           for j in idx])


def spacing_matrix(n_vehicles: int) -> np.ndarray:
    """(I-1) x I matrix with -1 on the diagonal and +1 on the first superdiagonal."""
    s = np.zeros((max(n_vehicles - 1, 0), n_vehicles))
    for i in range(n_vehicles - 1):
        s[i, i], s[i, i + 1] = -1.0, 1.0
    return s


def build_constraint_set(n_vehicles: int, horizon: int, cfg: MpcConfig) -> ConstraintSet:
    """Stacked bounds ``G_bar X_pred + g_bar <= 0`` over the predicted window.

    Per predicted state, with gaps ``p_{i-1} - p_i``:
        d_min <= gap <= d_max,  v_min <= v <= v_max,  a_min <= a <= a_max.
    """
    i_n = n_vehicles
    s = spacing_matrix(i_n)
    e = np.eye(i_n)
    z = np.zeros((i_n, i_n))
    zs = np.zeros((i_n - 1, i_n))
    g_single = np.block([
        [s, zs, zs],
        [-s, zs, zs],
        [z, -e, z],
        [z, e, z],
        [z, z, -e],
        [z, z, e],
    ])
    ones_s, ones = np.ones(i_n - 1), np.ones(i_n)
    g_vec_single = np.concatenate([ones_s * cfg.d_min, -ones_s * cfg.d_max,
                                   ones * cfg.v_min, -ones * cfg.v_max,
                                   ones * cfg.a_min, -ones * cfg.a_max])
    rows = g_single.shape[0]
    g_bar = np.kron(np.eye(horizon), g_single)
    g_vec = np.tile(g_vec_single, horizon)
    spacing_rows = np.concatenate([np.arange(2 * (i_n - 1)) + n * rows for n in range(horizon)])
    return ConstraintSet(g_bar, g_vec, s, spacing_rows.astype(int))


def weight_matrices(n_vehicles: int, cfg: MpcConfig):
    """Block-diagonal state weight over the window and increment weight."""
    e = np.eye(n_vehicles)
    q = np.kron(np.diag([cfg.q1, cfg.q2, cfg.q3]), e)
    blocks = [q] * cfg.horizon
    if not cfg.weight_terminal:
        blocks[-1] = np.zeros_like(q)
    omega = _block_diag(blocks)
    psi = cfg.q4 * np.eye(n_vehicles * cfg.horizon)
    return omega, psi


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def free_response(x_k, u_prev, pred: PredictionMatrices) -> np.ndarray:
    return pred.phi @ np.asarray(x_k, dtype=float) + pred.lam @ np.asarray(u_prev, dtype=float)


def assemble_qp(x_k, u_prev, window, pred: PredictionMatrices, cfg: MpcConfig,
                constraints: ConstraintSet | None = None) -> qp.QpProblem:
    """Build ``min dU'H dU + c'dU  s.t.  G_bar Gamma dU <= -G_bar(free) - g_bar``.

    Returned in the solver's ``0.5 x'Px + q'x`` convention, so ``P = 2H``.
    """
    x_k = np.asarray(x_k, dtype=float).ravel()
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    window = np.asarray(window, dtype=float).ravel()
    i_n, horizon = pred.n_vehicles, pred.horizon
    if x_k.size != 3 * i_n or u_prev.size != i_n or window.size != 3 * i_n * horizon:
        raise MpcError(f"dimension mismatch: state {x_k.size}, control {u_prev.size}, "
                       f"window {window.size} for I={i_n}, N={horizon}")
    if constraints is None:
        constraints = build_constraint_set(i_n, horizon, cfg)
    omega, psi = weight_matrices(i_n, cfg)
    og = omega @ pred.gamma
    h = psi + pred.gamma.T @ og
    free = free_response(x_k, u_prev, pred)
    c = 2.0 * (free - window) @ og
    g = constraints.g_bar @ pred.gamma
    rhs = -constraints.g_bar @ free - constraints.g_vec
    return qp.QpProblem(h + h.T, c, g, rhs)


def soften(problem: qp.QpProblem, rows, weight: float) -> qp.QpProblem:
    """Add one nonnegative slack per listed row with quadratic penalty ``weight * s^2``."""
    rows = np.asarray(rows, dtype=int)
    n, m, k = problem.n, problem.m, rows.size
    p = np.zeros((n + k, n + k))
    p[:n, :n] = problem.p_mat
    p[n:, n:] = 2.0 * weight * np.eye(k)
    sel = np.zeros((m, k))
    sel[rows, np.arange(k)] = 1.0
    g = np.block([[problem.g_mat, -sel], [np.zeros((k, n)), -np.eye(k)]])
    h = np.concatenate([problem.h_vec, np.zeros(k)])
    return qp.QpProblem(p, np.concatenate([problem.q_vec, np.zeros(k)]), g, h)


def solve_mpc_step(x_k, u_prev, window, pred: PredictionMatrices, cfg: MpcConfig,
                   constraints: ConstraintSet | None = None, warm_start=None):
    """One receding-horizon step.

    Returns:
        (u_p, diagnostics, dU). ``u_p`` is ``u_prev`` plus the first increment
        block. When the hard problem is infeasible the spacing rows are
        softened, then every row; ``diagnostics.infeasible`` flags either case.
    """
    i_n = pred.n_vehicles
    if constraints is None:
        constraints = build_constraint_set(i_n, pred.horizon, cfg)
    problem = assemble_qp(x_k, u_prev, window, pred, cfg, constraints)
    sol = qp.solve(problem, cfg.qp_tol, cfg.qp_max_iter, cfg.qp_regularization, warm_start)
    diag = MpcDiagnostics(sol.status, iterations=sol.iterations,
                          kkt_max=sol.kkt_residuals.max())
    if sol.status == qp.INFEASIBLE:
        weight = cfg.soft_penalty_scale * max(cfg.q1, cfg.q2, cfg.q3, cfg.q4)
        diag.infeasible = True
        for label, rows in (("spacing", constraints.spacing_rows), ("all", np.arange(problem.m))):
            relaxed = soften(problem, rows, weight)
            sol = qp.solve(relaxed, cfg.qp_tol, cfg.qp_max_iter, cfg.qp_regularization)
            diag.softened = label
            diag.status = sol.status
            diag.iterations += sol.iterations
            diag.kkt_max = sol.kkt_residuals.max()
            if sol.status != qp.INFEASIBLE:
                break
    du = sol.x_star[:i_n * pred.horizon]
    return np.asarray(u_prev, dtype=float) + du[:i_n], diag, du


@dataclass
class MpcController:
    """Receding-horizon controller that remembers its previous output."""

    mats: SystemMatrices
    cfg: MpcConfig
    u_prev: np.ndarray
    warm_start: bool = False
    pred: PredictionMatrices = field(init=False)
    constraints: ConstraintSet = field(init=False)
    _last_du: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        self.pred = build_prediction_matrices(self.mats, self.cfg.horizon)
        self.constraints = build_constraint_set(self.mats.n_vehicles, self.cfg.horizon, self.cfg)
        self.u_prev = np.asarray(self.u_prev, dtype=float).copy()

    def step(self, x_k, window):
        ws = None
        if self.warm_start and self._last_du is not None:
            # shift the previous plan by one block
            i_n = self.pred.n_vehicles
            ws = np.concatenate([self._last_du[i_n:], np.zeros(i_n)])
        u_p, diag, du = solve_mpc_step(x_k, self.u_prev, window, self.pred, self.cfg,
                                       self.constraints, ws)
        self._last_du = du
        self.u_prev = u_p
        return u_p, diag
