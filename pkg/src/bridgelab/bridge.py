"""Forward bridge marginal and the rho-chain posterior step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularCoefficientError
from .schedule import VpSchedule, bridge_coeffs


@dataclass
class BridgeState:
    z: np.ndarray
    t: float
    x: np.ndarray


@dataclass
class PosteriorParams:
    mean: np.ndarray
    std: float
    rho_n: float


def _per_sample(coef, like: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or per-sample (batch,) coefficient against ``like``."""
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))


def forward_sample(x, y, t, eps, sched: VpSchedule) -> np.ndarray:
    """``a_t x + b_t y + c_t eps``; ``t`` may be a scalar or one time per batch row."""
    x, y, eps = (np.asarray(v, dtype=float) for v in (x, y, eps))
    if not x.shape == y.shape == eps.shape:
        raise ValueError(f"shape mismatch: x {x.shape}, y {y.shape}, eps {eps.shape}")
    co = bridge_coeffs(sched, t)
    return _per_sample(co.a, x) * x + _per_sample(co.b, x) * y + _per_sample(co.c, x) * eps


def eta_hat(z_next, x, z0_hat, t_next: float, sched: VpSchedule) -> np.ndarray:
    """Recover the standardized noise of ``z_next`` given the endpoints."""
    co = bridge_coeffs(sched, t_next)
    if co.c == 0.0:
        raise SingularCoefficientError(f"c_t = 0 at t = {t_next}; noise is not identifiable")
    return (np.asarray(z_next) - co.a * np.asarray(x) - co.b * np.asarray(z0_hat)) / co.c


def posterior_step(x, z0, z_next, t_n: float, t_next: float, rho_n: float,
                   sched: VpSchedule) -> PosteriorParams:
    if not t_n < t_next:
        raise ValueError(f"need t_n < t_next, got {t_n} >= {t_next}")
    if bridge_coeffs(sched, t_next).c == 0.0:
        raise SingularCoefficientError(f"c_t = 0 at t_next = {t_next}")
    co = bridge_coeffs(sched, t_n)
    if rho_n < 0 or rho_n > co.c * (1 + 1e-12):
        raise ValueError(f"rho_n={rho_n} outside [0, c_t={co.c}]")
    rho_n = min(float(rho_n), float(co.c))
    mean = co.a * np.asarray(x, dtype=float) + co.b * np.asarray(z0, dtype=float)
    carry = np.sqrt(max(co.c**2 - rho_n**2, 0.0))
    if carry > 0.0:
        mean = mean + carry * eta_hat(z_next, x, z0, t_next, sched)
    return PosteriorParams(mean=mean, std=rho_n, rho_n=rho_n)


def marginal_oracle(x_val: float, y_val: float, t: float, sched: VpSchedule):
    """Scalar mean and variance of the bridge marginal at ``t``."""
    co = bridge_coeffs(sched, t)
    return co.a * x_val + co.b * y_val, co.c**2
