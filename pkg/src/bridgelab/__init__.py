"""Desk-scale diffusion-bridge translation laboratory."""

from .schedule import VpSchedule, BridgeCoeffs, TimeGrid, alpha_sigma, bridge_coeffs, snr, time_grid
from .bridge import forward_sample, marginal_oracle, posterior_step
from .denoiser import AnalyticGaussianDenoiser, DenoiserModel
from .sampler import SamplerConfig, dbim_sample, nfe_sweep
from .trainer import TrainConfig, train_loop
from .metrics import ScoreReport, TaskResult, combined_score, task_score
from .data import PairedDataset, make_gaussian_pairs, make_toy_translation

__all__ = [
    "VpSchedule", "BridgeCoeffs", "TimeGrid", "alpha_sigma", "bridge_coeffs", "snr", "time_grid",
    "forward_sample", "marginal_oracle", "posterior_step",
    "AnalyticGaussianDenoiser", "DenoiserModel",
    "SamplerConfig", "dbim_sample", "nfe_sweep",
    "TrainConfig", "train_loop",
    "ScoreReport", "TaskResult", "combined_score", "task_score",
    "PairedDataset", "make_gaussian_pairs", "make_toy_translation",
]
