"""Online tabular Q-learning residual on top of the MPC speed command.

The speed control error is squashed into [-sigma, sigma] with a scaled
logistic, assigned to the triangular membership function with the largest
degree, and used as the table row. Actions are additive speed offsets on a
fixed grid. The learner buffers transitions and replays them into the table
on a fixed cadence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class FuzzyEncoder:
    sigma: float = 1.0
    n_states: int = 7

    def __post_init__(self):
        if self.n_states < 3:
            raise ValueError("need at least 3 membership functions")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        self.centers = np.linspace(-self.sigma, self.sigma, self.n_states)
        self.width = self.centers[1] - self.centers[0]

    def squash(self, error):
        return self.sigma * (2.0 / (1.0 + np.exp(-np.asarray(error, dtype=float))) - 1.0)

    def memberships(self, squashed: float) -> np.ndarray:
        """Triangular degrees; each peaks at its center and reaches zero at the neighbours."""
        return np.clip(1.0 - np.abs(squashed - self.centers) / self.width, 0.0, 1.0)

    def encode(self, error: float) -> int:
        # np.exp overflows harmlessly to inf for very negative errors
        with np.errstate(over="ignore"):
            s = float(self.squash(error))
        if np.isnan(s):
            raise ValueError(f"cannot encode speed error {error}")
        return int(np.argmax(self.memberships(s)))


def encode_state(speed_error: float, encoder: FuzzyEncoder) -> int:
    return encoder.encode(speed_error)


@dataclass
class ActionGrid:
    """Speed offsets ``lo, lo+delta, ..., hi`` stored in order of increasing magnitude.

    Index 0 is always the zero offset, so the lowest-index tie-break on an
    untouched row leaves the MPC command unchanged.
    """

    delta: float = 0.1
    lo: float = -2.0
    hi: float = 2.0

    def __post_init__(self):
        if not self.delta > 0 or not self.lo <= 0 <= self.hi:
            raise ValueError("grid must have positive delta and bracket zero")
        n_lo = int(round(-self.lo / self.delta))
        n_hi = int(round(self.hi / self.delta))
        if not (np.isclose(n_lo * self.delta, -self.lo) and np.isclose(n_hi * self.delta, self.hi)):
            raise ValueError("bounds must be whole multiples of delta")
        ladder = np.arange(-n_lo, n_hi + 1)
        order = np.lexsort((ladder, np.abs(ladder)))
        self.values = ladder[order] * self.delta

    @classmethod
    def from_accel_limits(cls, a_min: float, a_max: float, dt: float, delta: float = 0.1,
                          scale: float = 10.0) -> "ActionGrid":
        snap = lambda x: np.round(x / delta) * delta
        return cls(delta, float(snap(a_min * dt * scale)), float(snap(a_max * dt * scale)))

    @property
    def n_actions(self) -> int:
        return self.values.size


@dataclass
class QTable:
    values: np.ndarray
    alpha: float = 0.2
    gamma_discount: float = 0.8
    epsilon: float = 0.3

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma_discount < 1:
            raise ValueError("gamma_discount must be in [0, 1)")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, **kw) -> "QTable":
        return cls(np.zeros((n_states, n_actions)), **kw)

    def save(self, path, sigma: float, delta: float) -> None:
        n_s, n_a = self.values.shape
        header = f"{n_s} {n_a} {sigma:.17g} {delta:.17g}"
        np.savetxt(path, self.values, fmt="%.17g", header=header, comments="")

    @classmethod
    def load(cls, path, **kw):
        """Returns ``(table, sigma, delta)``."""
        lines = Path(path).read_text().splitlines()
        n_s, n_a, sigma, delta = lines[0].split()
        values = np.loadtxt(lines[1:], ndmin=2)
        if values.shape != (int(n_s), int(n_a)):
            raise ValueError(f"table body is {values.shape}, header says ({n_s}, {n_a})")
        return cls(values, **kw), float(sigma), float(delta)


@dataclass
class ExperienceBuffer:
    items: list = field(default_factory=list)

    def push(self, s: int, a: int, r: float, s_next: int) -> None:
        self.items.append((int(s), int(a), float(r), int(s_next)))

    def __len__(self):
        return len(self.items)

    def clear(self):
        self.items.clear()


def select_action(table: QTable, state: int, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index.

    One uniform draw decides exploration on every call, so the random stream
    advances identically whatever the table holds.
    """
    explore = rng.random() < table.epsilon
    pick = int(rng.integers(table.values.shape[1]))
    if explore:
        return pick
    return int(np.argmax(table.values[state]))


def compute_reward(v_actual: float, v_commanded: float) -> float:
    return -abs(float(v_actual) - float(v_commanded))


def update_qtable(table: QTable, buffer: ExperienceBuffer) -> QTable:
    """Replay buffered transitions in order, then empty the buffer."""
    if not len(buffer):
        raise ValueError("empty experience buffer")
    q = table.values
    for s, a, r, s2 in buffer.items:
        target = r + table.gamma_discount * q[s2].max()
        q[s, a] += table.alpha * (target - q[s, a])
    buffer.clear()
    return table


@dataclass
class QResidualConfig:
    sigma: float = 1.0
    n_states: int = 7
    delta: float = 0.1
    grid_scale: float = 10.0
    alpha: float = 0.2
    gamma_discount: float = 0.8
    epsilon_start: float = 0.1
    epsilon_end: float = 0.01
    update_every: int = 20
    shared_table: bool = True
    # Also replay the transition every other offset would have produced,
    # assuming the actuator error is locally a pure shift.
    counterfactual: bool = True
    # Optional second state axis: change rate of the MPC command between steps.
    use_rate: bool = False
    rate_sigma: float = 1.0
    n_rate_states: int = 3


class QResidual:
    """Per-vehicle residual policy over one (or one-per-vehicle) Q-table.

    ``adjust`` turns the MPC command into the adjusted command, ``record``
    stores what happened once the realized actuation is known, and ``update``
    flushes the buffer into the table.
    """

    def __init__(self, cfg: QResidualConfig, n_vehicles: int, a_min: float, a_max: float,
                 dt: float, total_steps: int, rng: np.random.Generator):
        self.cfg = cfg
        self.n_vehicles = n_vehicles
        self.encoder = FuzzyEncoder(cfg.sigma, cfg.n_states)
        self.rate_encoder = FuzzyEncoder(cfg.rate_sigma, cfg.n_rate_states) if cfg.use_rate else None
        self.grid = ActionGrid.from_accel_limits(a_min, a_max, dt, cfg.delta, cfg.grid_scale)
        n_tables = 1 if cfg.shared_table else n_vehicles
        n_rows = cfg.n_states * (cfg.n_rate_states if cfg.use_rate else 1)
        self.tables = [QTable.zeros(n_rows, self.grid.n_actions, alpha=cfg.alpha,
                                    gamma_discount=cfg.gamma_discount, epsilon=cfg.epsilon_start)
                       for _ in range(n_tables)]
        self.buffers = [ExperienceBuffer() for _ in range(n_tables)]
        self.rng = rng
        self.total_steps = max(total_steps, 1)
        self.errors = np.zeros(n_vehicles)
        self.rates = np.zeros(n_vehicles)
        self._last_u_p = None
        self._states = np.zeros(n_vehicles, dtype=int)
        self._actions = np.zeros(n_vehicles, dtype=int)
        self.max_abs_reward = 0.0

    def _table(self, i):
        return 0 if self.cfg.shared_table else i

    def state(self, error: float, rate: float = 0.0) -> int:
        s = self.encoder.encode(error)
        if self.rate_encoder is None:
            return s
        return s * self.cfg.n_rate_states + self.rate_encoder.encode(rate)

    def epsilon(self, k: int) -> float:
        frac = min(k / max(self.total_steps - 1, 1), 1.0)
        return self.cfg.epsilon_start + frac * (self.cfg.epsilon_end - self.cfg.epsilon_start)

    def adjust(self, u_p, k: int) -> np.ndarray:
        eps = self.epsilon(k)
        u_r = np.array(u_p, dtype=float)
        if self._last_u_p is not None:
            self.rates = u_r - self._last_u_p
        self._last_u_p = u_r.copy()
        for i in range(self.n_vehicles):
            t = self.tables[self._table(i)]
            t.epsilon = eps
            s = self.state(self.errors[i], self.rates[i])
            a = select_action(t, s, self.rng)
            self._states[i], self._actions[i] = s, a
            u_r[i] += self.grid.values[a]
        return u_r

    def record(self, u_p, u_r, realized) -> None:
        """Store one transition per vehicle.

        The encoded control error is the command sent to the actuator minus
        the command it realized; the reward compares the realized command
        with the MPC's.
        """
        u_p = np.asarray(u_p, dtype=float)
        realized = np.asarray(realized, dtype=float)
        err = np.asarray(u_r, dtype=float) - realized
        for i in range(self.n_vehicles):
            buf = self.buffers[self._table(i)]
            s, a = self._states[i], self._actions[i]
            # the next command rate is not known yet; hold the current one
            s_next = self.state(err[i], self.rates[i])
            r = compute_reward(realized[i], u_p[i])
            buf.push(s, a, r, s_next)
            self.max_abs_reward = max(self.max_abs_reward, -r)
            if self.cfg.counterfactual:
                # under a pure-shift actuator error another offset moves the
                # realized command by the same amount and leaves the error unchanged
                taken = self.grid.values[a]
                for b, off in enumerate(self.grid.values):
                    if b != a:
                        r_alt = compute_reward(realized[i] + off - taken, u_p[i])
                        buf.push(s, b, r_alt, s_next)
                        self.max_abs_reward = max(self.max_abs_reward, -r_alt)
        self.errors = err

    def update(self) -> None:
        for t, b in zip(self.tables, self.buffers):
            if len(b):
                update_qtable(t, b)

    def greedy_offset(self, error: float, vehicle: int = 0) -> float:
        t = self.tables[self._table(vehicle)]
        return float(self.grid.values[int(np.argmax(t.values[self.state(error)]))])


def apply_residual(u_p, speed_errors, table: QTable, encoder: FuzzyEncoder, grid: ActionGrid,
                   rng: np.random.Generator) -> np.ndarray:
    """Stateless form of one residual step for a shared table."""
    u_p = np.asarray(u_p, dtype=float)
    out = u_p.copy()
    for i, e in enumerate(np.asarray(speed_errors, dtype=float)):
        out[i] += grid.values[select_action(table, encoder.encode(e), rng)]
    return out
