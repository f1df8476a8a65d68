"""Glue between image datasets in [0, 1] and the bridge in model space.

Images are mapped to [-1, 1] and single-band modalities are repeated to the
shared model channel count, max(C_source, C_target). Samples are mapped
back by averaging channels when the target is single-band.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from .data import PairedDataset
from .denoiser import DenoiserModel, to_model_channels
from .metrics import evaluate_images
from .sampler import SamplerConfig, nfe_sweep, sample_in_batches
from .schedule import VpSchedule
from .trainer import TrainConfig, train_loop


def model_channels(ds: PairedDataset) -> int:
    return max(ds.src_channels, ds.tgt_channels)


def to_model_space(imgs, channels: int) -> np.ndarray:
    return to_model_channels(2.0 * np.asarray(imgs, dtype=float) - 1.0, channels)


def from_model_space(z, out_channels: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if out_channels == 1 and z.shape[1] != 1:
        z = z.mean(axis=1, keepdims=True)
    return np.clip(0.5 * (z + 1.0), 0.0, 1.0)


def model_view(ds: PairedDataset) -> SimpleNamespace:
    c = model_channels(ds)
    return SimpleNamespace(sources=to_model_space(ds.sources, c), targets=to_model_space(ds.targets, c))


def train_image_bridge(ds: PairedDataset, cfg: TrainConfig, sched: VpSchedule, base_width: int = 16,
                       callback=None):
    model = DenoiserModel.conv(model_channels(ds), sched, base_width=base_width, seed=cfg.seed)
    return train_loop(model, model_view(ds), cfg, sched, callback=callback)


def translate(model, ds: PairedDataset, cfg: SamplerConfig, sched: VpSchedule, batch_size: int = 64):
    """Sample translations of every source in ``ds``; returns images in [0, 1]."""
    src = to_model_space(ds.sources, model.model_channels)
    return from_model_space(sample_in_batches(model, src, cfg, sched, batch_size), ds.tgt_channels)


def sweep_images(model, ds: PairedDataset, steps_list, eta: float, sched: VpSchedule, seed: int,
                 karras_rho: float = 7.0, batch_size: int = 64):
    view = SimpleNamespace(sources=to_model_space(ds.sources, model.model_channels))

    def evaluate(samples):
        return evaluate_images(from_model_space(samples, ds.tgt_channels), ds.targets)

    return nfe_sweep(model, view, steps_list, eta, sched, evaluate, seed=seed, karras_rho=karras_rho,
                     batch_size=batch_size)
