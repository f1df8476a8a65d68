"""Weighted bridge-denoiser training and the two optimizers."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .bridge import forward_sample
from .errors import DivergenceError
from .schedule import DEFAULT_RHO, VpSchedule, loss_weight, sample_train_time

OPTIMIZERS = ("adaptive-moments", "sgd-momentum")


@dataclass
class TrainConfig:
    batch_size: int = 256
    n_iterations: int = 2000
    learning_rate: float = 2e-3
    optimizer: str = "adaptive-moments"
    seed: int = 0
    log_every: int = 10
    karras_rho: float = DEFAULT_RHO

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.batch_size < 1 or self.n_iterations < 0 or self.log_every < 1:
            raise ValueError("batch_size and log_every must be positive, n_iterations >= 0")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9


def optimizer_update(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
                     learning_rate: float) -> np.ndarray:
    """Return updated parameters; ``state`` is advanced in place."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
    state.step += 1
    if state.kind == "sgd-momentum":
        state.m = state.momentum * state.m + grads
        return params - learning_rate * state.m
    if state.v is None:
        state.v = np.zeros_like(params)
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    return params - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def _per_sample_weighted_loss(pred, y, w):
    axes = tuple(range(1, np.ndim(y)))
    diff = pred - y
    per = np.mean(diff * diff, axis=axes) if axes else diff * diff
    return w * per, diff


def draw_batch(x, y, sched: VpSchedule, rng: np.random.Generator, karras_rho: float = DEFAULT_RHO):
    """Times, noise and bridge states for one batch of pairs."""
    t = np.asarray(sample_train_time(sched, rng, size=len(x), karras_rho=karras_rho), dtype=float)
    eps = rng.standard_normal(np.shape(x))
    return t, forward_sample(x, y, t, eps, sched)


def weighted_loss(model, x, y, t, z, sched: VpSchedule, weights=None) -> float:
    """Batch mean of ``w(t) * mean_elements((D(z, t, x) - y)**2)``."""
    w = loss_weight(sched, t) if weights is None else weights
    pred = model(z, t, x)
    per, _ = _per_sample_weighted_loss(pred, np.asarray(y, dtype=float), w)
    return float(np.mean(per))


def loss_and_grad(model, x, y, t, z, sched: VpSchedule, weights=None):
    w = np.asarray(loss_weight(sched, t) if weights is None else weights, dtype=float)
    pred, tape = model.forward(z, t, x, record=True)
    y = np.asarray(y, dtype=float)
    per, diff = _per_sample_weighted_loss(pred, y, w)
    n_el = diff[0].size if diff.ndim > 1 else 1
    wb = w.reshape(w.shape + (1,) * (diff.ndim - w.ndim)) if np.ndim(w) else w
    g_out = 2.0 * wb * diff / (len(diff) * n_el)
    return float(np.mean(per)), model.backward(g_out, tape)


def training_step(model, batch, cfg: TrainConfig, sched: VpSchedule, rng: np.random.Generator,
                  opt_state: OptimizerState, iteration: int = 0):
    """One optimizer update on a batch of ``(x, y)``; returns ``(loss, grad_norm)``."""
    x, y = (np.asarray(v, dtype=float) for v in batch)
    if len(x) == 0:
        raise ValueError("empty batch")
    if x.shape != y.shape:
        raise ValueError(f"batch shape mismatch: x {x.shape}, y {y.shape}")
    t, z = draw_batch(x, y, sched, rng, cfg.karras_rho)
    try:
        loss, grad = loss_and_grad(model, x, y, t, z, sched)
    except FloatingPointError as e:
        raise DivergenceError(f"{e} at iteration {iteration}", iteration) from e
    grad_norm = float(np.linalg.norm(grad))
    if not (np.isfinite(loss) and np.isfinite(grad_norm)):
        raise DivergenceError(f"non-finite loss at iteration {iteration}", iteration)
    model.params = optimizer_update(model.params, grad, opt_state, cfg.learning_rate)
    return loss, grad_norm


@dataclass
class LossCurve:
    rows: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iter", "loss", "grad_norm", "wall_ms"])
            for it, loss, gn, ms in self.rows:
                w.writerow([it, f"{loss:.6f}", f"{gn:.6f}", f"{ms:.3f}"])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def train_loop(model, dataset, cfg: TrainConfig, sched: VpSchedule, callback=None):
    """Train on ``dataset`` (sources/targets arrays in model channels)."""
    x_all = np.asarray(dataset.sources, dtype=float)
    y_all = np.asarray(dataset.targets, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState(cfg.optimizer)
    curve = LossCurve()
    start = time.perf_counter()
    for it in range(cfg.n_iterations):
        idx = rng.integers(0, len(x_all), size=cfg.batch_size)
        loss, gn = training_step(model, (x_all[idx], y_all[idx]), cfg, sched, rng, state, it)
        if it % cfg.log_every == 0 or it == cfg.n_iterations - 1:
            curve.rows.append((it, loss, gn, 1e3 * (time.perf_counter() - start)))
            if callback is not None:
                callback(it, loss, gn)
    return model, curve


def held_out_risk(model, oracle, n: int, seed: int, sched: VpSchedule, karras_rho: float = DEFAULT_RHO):
    """Weighted MSE of ``model`` on fresh Gaussian pairs, and the oracle's closed-form risk.

    Both are averaged over the same sampled times, so their ratio measures
    the gap to the best achievable predictor.
    """
    rng = np.random.default_rng(seed)
    r = oracle.r
    x = rng.standard_normal(n)
    y = r * x + np.sqrt(1.0 - r * r) * rng.standard_normal(n)
    t, z = draw_batch(x, y, sched, rng, karras_rho)
    w = loss_weight(sched, t)
    net = float(np.mean(w * (model(z, t, x) - y) ** 2))
    best = float(np.mean(w * oracle.posterior_var(t)))
    return net, best
