"""VP base schedule, bridge coefficients and Karras time discretisation.

Time runs from the clean target at ``t = 0`` to the source endpoint at
``t = t_max``. The base process has a linear rate

    beta(s) = beta_min + beta_d * s
    alpha_t = exp(-1/2 * (beta_min * t + 1/2 * beta_d * t**2))
    sigma_t = sqrt(1 - alpha_t**2)

and the bridge pinned at ``z_0 = y`` and ``z_T = x`` has marginal
``z_t = a_t x + b_t y + c_t eps`` with

    a_t = alpha_t / alpha_T * SNR_T / SNR_t
    b_t = alpha_t * (1 - SNR_T / SNR_t)
    c_t = sigma_t * sqrt(1 - SNR_T / SNR_t)

All functions accept scalars or numpy arrays of times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

W_FLOOR = 1e-4
DEFAULT_RHO = 7.0


@dataclass(frozen=True)
class VpSchedule:
    beta_d: float = 2.0
    beta_min: float = 0.1
    t_max: float = 1.0
    t_min: float = 1e-4

    def __post_init__(self):
        if not self.beta_d >= 0:
            raise DomainError(f"beta_d must be >= 0, got {self.beta_d}")
        if not self.beta_min > 0:
            raise DomainError(f"beta_min must be > 0, got {self.beta_min}")
        if not 0 < self.t_min < self.t_max:
            raise DomainError(f"need 0 < t_min < t_max, got t_min={self.t_min}, t_max={self.t_max}")

    def beta(self, t):
        return self.beta_min + self.beta_d * np.asarray(t, dtype=float)

    def integrated_beta(self, t):
        t = np.asarray(t, dtype=float)
        return self.beta_min * t + 0.5 * self.beta_d * t * t


@dataclass(frozen=True)
class BridgeCoeffs:
    a: float | np.ndarray
    b: float | np.ndarray
    c: float | np.ndarray
    t: float | np.ndarray


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    n_steps: int
    karras_rho: float


def _check_range(sched: VpSchedule, t, lo: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < lo) or np.any(t > sched.t_max):
        raise DomainError(f"time outside [{lo}, {sched.t_max}]: {t}")
    return t


def _maybe_scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def alpha_sigma(sched: VpSchedule, t):
    """Return ``(alpha_t, sigma_t)``; exact ``(1, 0)`` at ``t = 0``."""
    t = _check_range(sched, t, 0.0)
    log_alpha = -0.5 * sched.integrated_beta(t)
    alpha = np.exp(log_alpha)
    sigma = np.sqrt(-np.expm1(2.0 * log_alpha))
    return _maybe_scalar(alpha), _maybe_scalar(sigma)


def snr(sched: VpSchedule, t):
    t = _check_range(sched, t, sched.t_min)
    alpha, sigma = alpha_sigma(sched, t)
    return _maybe_scalar(np.asarray(alpha) ** 2 / np.asarray(sigma) ** 2)


def log_snr(sched: VpSchedule, t):
    """Log-SNR with ``t`` clamped to ``[t_min, t_max]`` (finite everywhere)."""
    t = np.clip(np.asarray(t, dtype=float), sched.t_min, sched.t_max)
    log_alpha2 = -sched.integrated_beta(t)
    return _maybe_scalar(log_alpha2 - np.log(-np.expm1(log_alpha2)))


def _snr_ratio(sched: VpSchedule, t: np.ndarray) -> np.ndarray:
    # SNR_T / SNR_t written without dividing by sigma_t so that t = 0 gives 0.
    alpha_t, sigma_t = (np.asarray(v) for v in alpha_sigma(sched, t))
    alpha_T, sigma_T = alpha_sigma(sched, sched.t_max)
    return (alpha_T**2 * sigma_t**2) / (sigma_T**2 * alpha_t**2)


def bridge_coeffs(sched: VpSchedule, t) -> BridgeCoeffs:
    t = _check_range(sched, t, 0.0)
    alpha_t, sigma_t = (np.asarray(v) for v in alpha_sigma(sched, t))
    alpha_T, _ = alpha_sigma(sched, sched.t_max)
    ratio = _snr_ratio(sched, t)
    a = alpha_t * ratio / alpha_T
    b = alpha_t * (1.0 - ratio)
    c = sigma_t * np.sqrt(np.clip(1.0 - ratio, 0.0, None))
    at_end = t == sched.t_max
    a = np.where(at_end, 1.0, a)
    b = np.where(at_end, 0.0, b)
    c = np.where(at_end, 0.0, c)
    return BridgeCoeffs(_maybe_scalar(a), _maybe_scalar(b), _maybe_scalar(c), _maybe_scalar(t))


def karras_times(sched: VpSchedule, u, karras_rho: float = DEFAULT_RHO):
    """Map ``u`` in [0, 1] to time by linear interpolation in the ``t**(1/rho)`` domain."""
    u = np.asarray(u, dtype=float)
    lo = sched.t_min ** (1.0 / karras_rho)
    hi = sched.t_max ** (1.0 / karras_rho)
    t = (lo + u * (hi - lo)) ** karras_rho
    t = np.where(u >= 1.0, sched.t_max, np.where(u <= 0.0, sched.t_min, t))
    return _maybe_scalar(np.clip(t, sched.t_min, sched.t_max))


def karras_cdf(sched: VpSchedule, t, karras_rho: float = DEFAULT_RHO):
    t = np.asarray(t, dtype=float)
    lo = sched.t_min ** (1.0 / karras_rho)
    hi = sched.t_max ** (1.0 / karras_rho)
    return _maybe_scalar(np.clip((t ** (1.0 / karras_rho) - lo) / (hi - lo), 0.0, 1.0))


def time_grid(sched: VpSchedule, n_steps: int, karras_rho: float = DEFAULT_RHO) -> TimeGrid:
    """Sampling grid ``0 = t_0 < t_1 < ... < t_N = t_max``.

    Interior points sit at ``u = n / N`` on the Karras interpolation between
    ``t_min`` and ``t_max``; ``t_0`` is pinned to exactly 0.
    """
    if isinstance(n_steps, bool) or int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not karras_rho >= 1:
        raise ValueError(f"karras_rho must be >= 1, got {karras_rho}")
    n_steps = int(n_steps)
    u = np.arange(n_steps + 1, dtype=float) / n_steps
    times = np.asarray(karras_times(sched, u, karras_rho), dtype=float).copy()
    times[0] = 0.0
    times[-1] = sched.t_max
    return TimeGrid(times=times, n_steps=n_steps, karras_rho=float(karras_rho))


def loss_weight(sched: VpSchedule, t, w_floor: float = W_FLOOR):
    """Bridge loss weight ``1 / max(c_t**2, w_floor)``."""
    c = np.asarray(bridge_coeffs(sched, t).c)
    return _maybe_scalar(1.0 / np.maximum(c * c, w_floor))


def sample_train_time(sched: VpSchedule, rng: np.random.Generator, size=None,
                      karras_rho: float = DEFAULT_RHO):
    """Draw training times from the Karras inverse-rho distribution on [t_min, t_max]."""
    return karras_times(sched, rng.uniform(0.0, 1.0, size=size), karras_rho)
