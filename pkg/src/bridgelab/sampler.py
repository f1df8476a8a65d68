"""Implicit bridge sampling with booting noise, and the step-count sweep."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .bridge import eta_hat
from .errors import DivergenceError
from .rng import batch_normal
from .schedule import DEFAULT_RHO, VpSchedule, bridge_coeffs, time_grid

SWEEP_HEADER = ["n_steps", "fid_norm", "l1", "score", "wall_ms", "seed"]


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 5
    eta: float = 0.0
    seed: int = 0
    karras_rho: float = DEFAULT_RHO

    def __post_init__(self):
        if isinstance(self.n_steps, bool) or int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")


def dbim_sample(model, x, cfg: SamplerConfig, sched: VpSchedule, indices=None,
                trajectory: list | None = None):
    """Run the reverse chain from ``z_T = x`` down to ``t_0 = 0``.

    ``model(z, t, x)`` predicts the clean target. The first step draws
    ``z_{t_{N-1}}`` with full noise (rho = c), later steps use
    ``rho_n = eta * c_{t_n}``. ``indices`` key the per-sample noise streams
    (defaults to ``0..B-1``). If ``trajectory`` is a list, ``(t_n, z_n)`` is
    appended after every step. Returns ``(y_hat, nfe)``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("source contains non-finite values")
    indices = np.arange(len(x)) if indices is None else np.asarray(indices)
    grid = time_grid(sched, cfg.n_steps, cfg.karras_rho).times
    n_steps = cfg.n_steps
    z = x.copy()
    nfe = 0
    for n in range(n_steps - 1, -1, -1):
        t_n, t_next = grid[n], grid[n + 1]
        z0_hat = np.asarray(model(z, t_next, x), dtype=float)
        nfe += 1
        co = bridge_coeffs(sched, t_n)
        if n == n_steps - 1:
            rho = co.c  # booting: no noise estimate exists at c_T = 0
            z_new = co.a * x + co.b * z0_hat
        else:
            rho = cfg.eta * co.c
            carry = np.sqrt(max(co.c**2 - rho**2, 0.0))
            z_new = co.a * x + co.b * z0_hat
            if carry > 0.0:
                z_new = z_new + carry * eta_hat(z, x, z0_hat, t_next, sched)
        if rho > 0.0:
            z_new = z_new + rho * batch_normal(cfg.seed, n, indices, x.shape[1:])
        if not np.all(np.isfinite(z_new)):
            raise DivergenceError(f"non-finite state at step {n} (t = {t_n:.6g})", n)
        z = z_new
        if trajectory is not None:
            trajectory.append((t_n, z.copy()))
    return z, nfe


def stochastic_sample(model, x, cfg: SamplerConfig, sched: VpSchedule, indices=None,
                      trajectory: list | None = None):
    """Ancestral variant (eta = 1): every step redraws its full noise."""
    cfg = SamplerConfig(cfg.n_steps, 1.0, cfg.seed, cfg.karras_rho)
    return dbim_sample(model, x, cfg, sched, indices, trajectory)[0]


def sample_in_batches(model, x, cfg: SamplerConfig, sched: VpSchedule, batch_size: int = 64):
    out = []
    for lo in range(0, len(x), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(x)))
        out.append(dbim_sample(model, x[idx], cfg, sched, indices=idx)[0])
    return np.concatenate(out) if out else np.zeros_like(x)


@dataclass
class SweepRow:
    n_steps: int
    fid_norm: float
    l1: float
    score: float
    wall_ms: float
    seed: int
    lpips: float = float("nan")


def nfe_sweep(model, dataset, steps_list, eta: float, sched: VpSchedule, evaluate, seed: int = 0,
              karras_rho: float = DEFAULT_RHO, batch_size: int = 64):
    """Sample the dataset once per step count and score each run.

    ``dataset`` provides ``sources`` (model channels); ``evaluate(samples)``
    returns a mapping with ``fid_norm``, ``lpips`` (surrogate), ``l1`` and
    ``score``. Every row reuses ``seed``.
    """
    steps_list = list(steps_list)
    sources = np.asarray(dataset.sources, dtype=float)
    if not steps_list or len(sources) == 0:
        raise ValueError("nfe_sweep needs a non-empty dataset and steps_list")
    rows = []
    for n in steps_list:
        cfg = SamplerConfig(int(n), eta, seed, karras_rho)
        start = time.perf_counter()
        samples = sample_in_batches(model, sources, cfg, sched, batch_size)
        wall = 1e3 * (time.perf_counter() - start)
        m = evaluate(samples)
        rows.append(SweepRow(int(n), m["fid_norm"], m["l1"], m["score"], wall, seed, m.get("lpips", np.nan)))
    return rows


def best_row(rows) -> SweepRow:
    return min(rows, key=lambda r: r.score)


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r.n_steps, f"{r.fid_norm:.6f}", f"{r.l1:.6f}", f"{r.score:.6f}",
                        f"{r.wall_ms:.3f}", r.seed])
