"""MLP residual baseline: maps the MPC speed command to an adjusted command.

Plain numpy forward/backward passes with ReLU hidden layers and a linear
output. Speeds are normalized with a fixed affine map over [0, 30] m/s
before entering the network and mapped back afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

SPEED_LO, SPEED_HI = 0.0, 30.0


class PretrainError(RuntimeError):
    pass


def _norm(u):
    return (np.asarray(u, dtype=float) - SPEED_LO) / (SPEED_HI - SPEED_LO)


def _denorm(y):
    return np.asarray(y, dtype=float) * (SPEED_HI - SPEED_LO) + SPEED_LO


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class MlpModel:
    weights: list
    biases: list
    learning_rate: float = 1e-3
    # Adam moments, one per parameter tensor
    _m: list = field(default_factory=list, repr=False)
    _v: list = field(default_factory=list, repr=False)
    _t: int = 0

    def __post_init__(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: bias shape {b.shape} does not match weights {w.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input {w.shape[1]} != previous output "
                                 f"{self.weights[k - 1].shape[0]}")

    @classmethod
    def init(cls, sizes=(1, 16, 16, 1), seed: int = 0, learning_rate: float = 1e-3) -> "MlpModel":
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
            bs.append(np.zeros(n_out))
        return cls(ws, bs, learning_rate)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def params(self):
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.learning_rate)

    def forward_raw(self, x):
        """x: (batch, n_in) normalized inputs. Returns (output, cache)."""
        acts, pre = [x], []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = z if k == last else relu(z)
            acts.append(h)
        return h, (acts, pre)

    def __call__(self, u_p):
        u = np.asarray(u_p, dtype=float)
        out, _ = self.forward_raw(_norm(u).reshape(-1, 1))
        return _denorm(out.reshape(u.shape))

    def loss_and_grads(self, x, y):
        """Mean squared error in normalized units and its gradients by backprop."""
        out, (acts, pre) = self.forward_raw(x)
        diff = out - y
        loss = float(np.mean(diff ** 2))
        d = 2.0 * diff / diff.size
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for k in reversed(range(len(self.weights))):
            gw[k] = d.T @ acts[k]
            gb[k] = d.sum(axis=0)
            if k:
                d = (d @ self.weights[k]) * (pre[k - 1] > 0)
        return loss, gw + gb

    def adam_step(self, grads, lr=None, beta1=0.9, beta2=0.999, eps=1e-8):
        lr = self.learning_rate if lr is None else lr
        params = self.params()
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** self._t)
            v_hat = v / (1 - beta2 ** self._t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def save(self, path) -> None:
        lines = [" ".join(str(s) for s in self.sizes)]
        for w, b in zip(self.weights, self.biases):
            lines += [" ".join(f"{v:.17g}" for v in row) for row in w]
            lines.append(" ".join(f"{v:.17g}" for v in b))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, learning_rate: float = 1e-3) -> "MlpModel":
        lines = Path(path).read_text().splitlines()
        sizes = [int(s) for s in lines[0].split()]
        rows = iter(lines[1:])
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            ws.append(np.array([next(rows).split() for _ in range(n_out)], dtype=float))
            bs.append(np.array(next(rows).split(), dtype=float))
        return cls(ws, bs, learning_rate)


def forward(model: MlpModel, u_p):
    return model(u_p)


def pretrain_identity(model: MlpModel, lo: float = -10.0, hi: float = 40.0,
                      samples: int = 501, epochs: int = 2000, seed: int = 0,
                      threshold: float = 0.05) -> MlpModel:
    """Fit ``forward(u) ~= u`` on an even grid over [lo, hi] with full-batch L-BFGS.

    The default range is wider than [0, 30] because the MPC issues commands
    beyond the cruise envelope while the vehicles brake or accelerate.
    ``seed`` only matters through the model's initialization; it is kept so
    callers can record it alongside the result.

    Raises PretrainError if the worst absolute error (m/s) over [0, 30] is
    still above ``threshold`` after ``epochs`` optimizer iterations.
    """
    del seed
    x = _norm(np.linspace(lo, hi, samples)).reshape(-1, 1)
    params = model.params()

    def unpack(theta):
        i = 0
        for p in params:
            p[...] = theta[i:i + p.size].reshape(p.shape)
            i += p.size

    def loss(theta):
        unpack(theta)
        value, grads = model.loss_and_grads(x, x)
        return value, np.concatenate([g.ravel() for g in grads])

    theta0 = np.concatenate([p.ravel() for p in params])
    res = minimize(loss, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": epochs, "gtol": 0.0, "ftol": 0.0})
    unpack(res.x)
    worst = identity_max_error(model)
    if worst > threshold:
        raise PretrainError(f"identity pretraining stopped at max error {worst:.4f} m/s "
                            f"(threshold {threshold})")
    # fresh optimizer state for the online phase
    model._m, model._v, model._t = [], [], 0
    return model


def identity_max_error(model: MlpModel, lo: float = SPEED_LO, hi: float = SPEED_HI,
                       n: int = 3001) -> float:
    grid = np.linspace(lo, hi, n)
    return float(np.max(np.abs(model(grid) - grid)))


def identity_mae(model: MlpModel, lo: float = SPEED_LO, hi: float = SPEED_HI, n: int = 301) -> float:
    grid = np.linspace(lo, hi, n)
    return float(np.mean(np.abs(model(grid) - grid)))


def online_update(model: MlpModel, u_p, target, steps: int = 1) -> MlpModel:
    """Gradient steps on the mean squared error between ``model(u_p)`` and ``target``."""
    x = _norm(u_p).reshape(-1, 1)
    y = _norm(target).reshape(-1, 1)
    if x.size == 0:
        raise ValueError("empty batch")
    for _ in range(steps):
        _, grads = model.loss_and_grads(x, y)
        model.adam_step(grads)
    return model


@dataclass
class NnResidualConfig:
    sizes: tuple = (1, 16, 16, 1)
    learning_rate: float = 1e-3
    steps_per_update: int = 100
    update_every: int = 20
    pretrain_lo: float = -10.0
    pretrain_hi: float = 40.0
    pretrain_samples: int = 501
    pretrain_epochs: int = 2000
    seed: int = 0


class NnResidual:
    """Buffers ``(u_p, target)`` pairs and refits the network on a cadence.

    The target is the command that would have produced the MPC's desired
    speed if the actuator error were a pure shift: ``u_p + (u_r - realized)``.
    """

    def __init__(self, cfg: NnResidualConfig, model: MlpModel | None = None):
        self.cfg = cfg
        if model is None:
            model = pretrain_identity(MlpModel.init(cfg.sizes, cfg.seed, cfg.learning_rate),
                                      cfg.pretrain_lo, cfg.pretrain_hi, cfg.pretrain_samples,
                                      cfg.pretrain_epochs,
                                      seed=cfg.seed)
        self.model = model
        self.inputs: list = []
        self.targets: list = []

    def adjust(self, u_p, k: int) -> np.ndarray:
        return self.model(np.asarray(u_p, dtype=float))

    def record(self, u_p, u_r, realized) -> None:
        u_p = np.asarray(u_p, dtype=float)
        self.inputs.extend(u_p)
        self.targets.extend(u_p + (np.asarray(u_r) - np.asarray(realized)))

    def update(self) -> None:
        if self.inputs:
            online_update(self.model, np.array(self.inputs), np.array(self.targets),
                          self.cfg.steps_per_update)
        self.inputs.clear()
        self.targets.clear()
