"""Actuation-error models mapping a commanded speed to the speed actually applied."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("none", "affine", "quadratic")


@dataclass(frozen=True)
class DisturbanceModel:
    kind: str = "none"
    noise_sigma: float = 0.3
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; expected one of {KINDS}")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def apply(model: DisturbanceModel, u, rng: np.random.Generator | None = None) -> np.ndarray:
    """Applied control for commanded ``u`` (scalar or per-vehicle vector).

    affine:    1.1 u + 0.1 + x
    quadratic: 0.01 u^2 + u + 0.1 + x
    with ``x ~ N(0, noise_sigma^2)`` drawn independently per entry.
    """
    u = np.asarray(u, dtype=float)
    if model.kind == "none":
        return u.copy()
    if model.kind == "affine":
        out = 1.1 * u + 0.1
    else:
        out = 0.01 * u * u + u + 0.1
    if model.noise_sigma > 0:
        if rng is None:
            raise ValueError("a generator is required when noise_sigma > 0")
        out = out + rng.normal(0.0, model.noise_sigma, size=u.shape)
    return out
