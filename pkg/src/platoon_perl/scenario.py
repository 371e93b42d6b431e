"""Reference trajectories and the closed-loop experiment loop.

Per step: observe X_k, MPC gives u_p, the residual stage gives u_r, the
actuator error gives u_a, and the plant advances with u_a. Residual
learners buffer experience every step and update every ``update_every``
steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import disturbance as dist
from .dynamics import DynamicsParams, PlatoonState, build_system_matrices, realized_command
from .mpc import MpcConfig, MpcController, build_reference_window
from .residual_nn import NnResidual, NnResidualConfig
from .residual_q import QResidual, QResidualConfig

CONTROLLERS = ("mpc_only", "mpc_nn", "mpc_q")
LABELS = {"mpc_only": "M", "mpc_nn": "M+N", "mpc_q": "M+Q"}

# (duration s, acceleration m/s^2) after the initial cruise
VARIABLE_PHASES = ((2.0, 0.0), (5.5, -2.0), (5.5, 2.0), (2.0, 0.0))


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    kind: str = "uniform"
    duration: float = 15.0
    dt: float = 0.1
    n_vehicles: int = 5
    initial_spacing: float = 20.0
    cruise_speed: float = 15.0
    phases: tuple = VARIABLE_PHASES
    tau: float = 0.5
    # False: every vehicle is stacked and MPC-controlled.
    # True: vehicle 0 replays its reference and only followers are controlled.
    leader_external: bool = False

    def __post_init__(self):
        if self.kind not in ("uniform", "variable"):
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if not (self.dt > 0 and self.duration > 0):
            raise ScenarioError("dt and duration must be positive")
        if abs(self.duration / self.dt - round(self.duration / self.dt)) > 1e-9:
            raise ScenarioError(f"duration {self.duration} is not a whole number of dt={self.dt} steps")
        if self.n_vehicles < 1 + int(self.leader_external):
            raise ScenarioError("not enough vehicles for the chosen leader mode")
        self.phases = tuple(tuple(p) for p in self.phases)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class Reference:
    """Reference states sampled at t_k = k dt; arrays are (steps, vehicles)."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def state(self, k: int) -> np.ndarray:
        return np.concatenate([self.p[k], self.v[k], self.a[k]])

    def columns(self, cols) -> "Reference":
        return Reference(self.t, self.p[:, cols], self.v[:, cols], self.a[:, cols])


def leader_profile(spec: ScenarioSpec, t: np.ndarray):
    """Exact piecewise-constant-acceleration integration of the leader reference."""
    t = np.asarray(t, dtype=float)
    v0 = spec.cruise_speed
    if spec.kind == "uniform":
        return v0 * t, np.full_like(t, v0), np.zeros_like(t)
    starts = np.cumsum([0.0] + [d for d, _ in spec.phases])
    accels = [a for _, a in spec.phases] + [0.0]
    p = np.zeros_like(t)
    v = np.zeros_like(t)
    a = np.zeros_like(t)
    p_s, v_s = 0.0, v0
    for j, acc in enumerate(accels):
        t0 = starts[j]
        t1 = starts[j + 1] if j + 1 < len(starts) else np.inf
        # phase boundaries fall on the step grid, so snap against rounding
        mask = (t >= t0 - 1e-9) & (t < t1 - 1e-9)
        tau = t[mask] - t0
        p[mask] = p_s + v_s * tau + 0.5 * acc * tau ** 2
        v[mask] = v_s + acc * tau
        a[mask] = acc
        if np.isfinite(t1):
            d = t1 - t0
            p_s, v_s = p_s + v_s * d + 0.5 * acc * d * d, v_s + acc * d
    return p, v, a


def generate_reference(spec: ScenarioSpec, extra_steps: int = 0) -> Reference:
    """Per-vehicle references for steps 0..n_steps + extra_steps.

    Followers copy the leader's speed and acceleration with positions
    shifted back by ``i * initial_spacing``.
    """
    t = np.arange(spec.n_steps + extra_steps + 1) * spec.dt
    p, v, a = leader_profile(spec, t)
    offsets = -spec.initial_spacing * np.arange(spec.n_vehicles)
    return Reference(t, p[:, None] + offsets[None, :],
                     np.repeat(v[:, None], spec.n_vehicles, axis=1),
                     np.repeat(a[:, None], spec.n_vehicles, axis=1))


@dataclass
class TrajectoryLog:
    """One record per step; arrays are (steps, vehicles)."""

    dt: float
    controller: str
    scenario: str
    error_kind: str
    p_ref: np.ndarray
    v_ref: np.ndarray
    a_ref: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    u_p: np.ndarray
    u_r: np.ndarray
    u_a: np.ndarray
    infeasible: np.ndarray
    spacing_violation: np.ndarray
    spacing_bounds: tuple = (15.0, 30.0)
    extras: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.p.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.p.shape[1]

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    def velocity_error(self) -> np.ndarray:
        return self.v - self.v_ref

    def position_error(self) -> np.ndarray:
        return self.p - self.p_ref

    def spacings(self) -> np.ndarray:
        return self.p[:, :-1] - self.p[:, 1:]


class _Identity:
    def adjust(self, u_p, k):
        return np.array(u_p, dtype=float)

    def record(self, u_p, u_r, realized):
        pass

    def update(self):
        pass


def make_residual(controller: str, n_vehicles: int, mpc_cfg: MpcConfig, dt: float, n_steps: int,
                  q_cfg: QResidualConfig, nn_cfg: NnResidualConfig, rng: np.random.Generator,
                  nn_model=None):
    if controller == "mpc_only":
        return _Identity()
    if controller == "mpc_q":
        return QResidual(q_cfg, n_vehicles, mpc_cfg.a_min, mpc_cfg.a_max, dt, n_steps, rng)
    if controller == "mpc_nn":
        return NnResidual(nn_cfg, nn_model.copy() if nn_model is not None else None)
    raise ScenarioError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")


def run_experiment(spec: ScenarioSpec, controller: str, disturbance: dist.DisturbanceModel,
                   mpc_cfg: MpcConfig | None = None, q_cfg: QResidualConfig | None = None,
                   nn_cfg: NnResidualConfig | None = None, seed: int = 0,
                   nn_model=None) -> TrajectoryLog:
    """Run one closed-loop experiment and return its full log.

    ``seed`` drives both the actuator noise and the learner's exploration,
    through independent child streams. ``nn_model`` optionally supplies an
    already identity-pretrained network (copied, never mutated).
    """
    mpc_cfg = mpc_cfg or MpcConfig()
    q_cfg = q_cfg or QResidualConfig()
    nn_cfg = nn_cfg or NnResidualConfig()
    if controller not in CONTROLLERS:
        raise ScenarioError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")
    n_steps = spec.n_steps
    ref = generate_reference(spec, extra_steps=mpc_cfg.horizon)
    lead_ext = spec.leader_external
    ctrl_cols = np.arange(int(lead_ext), spec.n_vehicles)
    n_ctrl = ctrl_cols.size
    params = DynamicsParams(spec.dt, spec.tau, n_ctrl)
    mats = build_system_matrices(params)
    noise_rng, learn_rng = (np.random.default_rng(s)
                            for s in np.random.SeedSequence(seed).spawn(2))

    ctrl_ref = ref.columns(ctrl_cols)
    x = ctrl_ref.state(0)
    mpc = MpcController(mats, mpc_cfg, u_prev=ctrl_ref.v[0].copy())
    residual = make_residual(controller, n_ctrl, mpc_cfg, spec.dt, n_steps, q_cfg, nn_cfg,
                             learn_rng, nn_model)
    update_every = q_cfg.update_every if controller == "mpc_q" else nn_cfg.update_every

    shape = (n_steps, spec.n_vehicles)
    rec = {k: np.zeros(shape) for k in ("p", "v", "a", "u_p", "u_r", "u_a")}
    infeasible = np.zeros(n_steps, dtype=bool)
    for k in range(n_steps):
        xs = PlatoonState.from_vector(x)
        window = build_reference_window(ctrl_ref, k, mpc_cfg.horizon)
        u_p, diag = mpc.step(x, window)
        u_r = residual.adjust(u_p, k)
        u_a = dist.apply(disturbance, u_r, noise_rng)
        x_next = mats.a_platoon @ x + mats.b_platoon @ u_a
        nxt = PlatoonState.from_vector(x_next)
        residual.record(u_p, u_r, realized_command(xs.velocities, nxt.accelerations, params))
        if (k + 1) % update_every == 0:
            residual.update()

        infeasible[k] = diag.infeasible
        cols = slice(int(lead_ext), None)
        rec["p"][k, cols], rec["v"][k, cols], rec["a"][k, cols] = (
            xs.positions, xs.velocities, xs.accelerations)
        rec["u_p"][k, cols], rec["u_r"][k, cols], rec["u_a"][k, cols] = u_p, u_r, u_a
        if lead_ext:
            rec["p"][k, 0], rec["v"][k, 0], rec["a"][k, 0] = ref.p[k, 0], ref.v[k, 0], ref.a[k, 0]
            rec["u_p"][k, 0] = rec["u_r"][k, 0] = rec["u_a"][k, 0] = ref.v[k + 1, 0]
        x = x_next

    gaps = rec["p"][:, :-1] - rec["p"][:, 1:]
    tol = 1e-9
    violation = np.any((gaps < mpc_cfg.d_min - tol) | (gaps > mpc_cfg.d_max + tol), axis=1)
    log = TrajectoryLog(
        dt=spec.dt, controller=controller, scenario=spec.kind, error_kind=disturbance.kind,
        p_ref=ref.p[:n_steps], v_ref=ref.v[:n_steps], a_ref=ref.a[:n_steps],
        infeasible=infeasible, spacing_violation=violation,
        spacing_bounds=(mpc_cfg.d_min, mpc_cfg.d_max), **rec)
    if controller == "mpc_q":
        log.extras["q_tables"] = [t.values.copy() for t in residual.tables]
        log.extras["max_abs_reward"] = residual.max_abs_reward
    return log
