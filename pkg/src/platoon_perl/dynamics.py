"""Discrete-time longitudinal dynamics for single vehicles and homogeneous platoons.

Each vehicle carries a state ``(p, v, a)`` and receives a commanded speed ``u``:

    p' = p + v dt + 0.5 a dt^2
    v' = v + a dt
    a' = (dt / tau) (u - v)

The platoon state is serialized grouped by quantity, ``[p_1..p_I, v_1..v_I,
a_1..a_I]``, so the lifted matrices are ``A kron E_I`` under that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidInputError(ValueError):
    """Raised when a dynamics input is non-finite or malformed."""


@dataclass(frozen=True)
class VehicleState:
    p: float
    v: float
    a: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.p, self.v, self.a])):
            raise InvalidInputError(f"non-finite vehicle state {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.v, self.a], dtype=float)


@dataclass(frozen=True)
class DynamicsParams:
    dt: float = 0.1
    tau: float = 0.5
    n_followers: int = 5

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidInputError(f"tau must be positive, got {self.tau}")
        if int(self.n_followers) != self.n_followers or self.n_followers < 1:
            raise InvalidInputError(f"n_followers must be a positive integer, got {self.n_followers}")


@dataclass(frozen=True)
class PlatoonState:
    """Stacked platoon state; vehicle 0 is the front of the platoon."""

    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __post_init__(self):
        p, v, a = (np.asarray(x, dtype=float).ravel() for x in
                   (self.positions, self.velocities, self.accelerations))
        if not (p.shape == v.shape == a.shape) or p.size == 0:
            raise InvalidInputError("positions, velocities, accelerations must share a nonzero length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
            raise InvalidInputError("non-finite platoon state")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "accelerations", a)

    @property
    def n_vehicles(self) -> int:
        return self.positions.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.positions, self.velocities, self.accelerations])

    @classmethod
    def from_vector(cls, x) -> "PlatoonState":
        x = np.asarray(x, dtype=float).ravel()
        if x.size % 3 or x.size == 0:
            raise InvalidInputError(f"state vector length {x.size} is not a positive multiple of 3")
        n = x.size // 3
        return cls(x[:n], x[n:2 * n], x[2 * n:])

    def vehicle(self, i: int) -> VehicleState:
        return VehicleState(self.positions[i], self.velocities[i], self.accelerations[i])


@dataclass(frozen=True)
class SystemMatrices:
    a_single: np.ndarray
    b_single: np.ndarray
    a_platoon: np.ndarray
    b_platoon: np.ndarray

    @property
    def n_vehicles(self) -> int:
        return self.b_platoon.shape[1]


def step_vehicle(state: VehicleState, u: float, params: DynamicsParams) -> VehicleState:
    """Advance one vehicle by one sampling interval under commanded speed ``u``."""
    if not np.isfinite(u):
        raise InvalidInputError(f"non-finite control {u}")
    dt, k = params.dt, params.dt / params.tau
    return VehicleState(
        state.p + state.v * dt + 0.5 * state.a * dt * dt,
        state.v + state.a * dt,
        -k * state.v + k * u,
    )


def build_system_matrices(params: DynamicsParams) -> SystemMatrices:
    """Single-vehicle matrices and their lift to the grouped platoon ordering.

    The position row uses ``0.5 dt^2``, the value implied by the scalar update
    rule; the ``dt^2 / tau`` entry that sometimes appears in the matrix form
    is not consistent with it.
    """
    dt, k = params.dt, params.dt / params.tau
    a = np.array([[1.0, dt, 0.5 * dt * dt],
                  [0.0, 1.0, dt],
                  [0.0, -k, 0.0]])
    b = np.array([[0.0], [0.0], [k]])
    eye = np.eye(int(params.n_followers))
    # grouped ordering [p.., v.., a..] makes this a plain Kronecker product
    return SystemMatrices(a, b, np.kron(a, eye), np.kron(b, eye))


def step_platoon(x: PlatoonState, u, mats: SystemMatrices) -> PlatoonState:
    u = np.asarray(u, dtype=float).ravel()
    if u.size != x.n_vehicles or mats.n_vehicles != x.n_vehicles:
        raise InvalidInputError(
            f"control has {u.size} entries, state has {x.n_vehicles} vehicles, "
            f"matrices are for {mats.n_vehicles}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("non-finite control vector")
    return PlatoonState.from_vector(mats.a_platoon @ x.to_vector() + mats.b_platoon @ u)


def realized_command(v: np.ndarray, a_next: np.ndarray, params: DynamicsParams) -> np.ndarray:
    """Invert the acceleration row: the speed command the drivetrain actually followed.

    Given the speed at step k and the measured acceleration at step k+1 this
    recovers the effective command, which differs from the issued one when
    the actuator is disturbed.
    """
    return np.asarray(v, dtype=float) + np.asarray(a_next, dtype=float) * params.tau / params.dt
