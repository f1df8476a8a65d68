"""Composite translation score and its desk-scale ingredients.

Task score = (normalised FID + LPIPS + L1) / 3, lower is better. The
combined score averages attempted tasks and adds 1 per unattempted task.
True LPIPS needs a pretrained perceptual network, so the end-to-end toy
pipeline reports ``lpips_surrogate`` = 1 - SSIM instead.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from skimage.metrics import structural_similarity

FEATURE_GRID = 8
COV_RIDGE = 1e-6


def l1_metric(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(np.clip(pred, 0, 1) - np.clip(target, 0, 1))))


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_gaussian(mu1, cov1, mu2, cov2) -> float:
    """Squared Fréchet distance between two Gaussians.

    The cross term uses ``tr((S1 S2)^{1/2}) = tr((S1^{1/2} S2 S1^{1/2})^{1/2})``,
    both roots taken by symmetric eigendecomposition with negative
    eigenvalues clipped to zero.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=float)), np.atleast_1d(np.asarray(mu2, dtype=float))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, dtype=float)), np.atleast_2d(np.asarray(cov2, dtype=float))
    for c in (cov1, cov2):
        if c.shape[0] != c.shape[1] or np.max(np.abs(c - c.T), initial=0.0) > 1e-8:
            raise ValueError("covariance must be square and symmetric")
    s1 = _sqrtm_psd(cov1)
    cross = np.trace(_sqrtm_psd(s1 @ cov2 @ s1))
    d = mu1 - mu2
    return float(max(d @ d + np.trace(cov1) + np.trace(cov2) - 2.0 * cross, 0.0))


def desk_features(images) -> np.ndarray:
    """Channel-mean, average-pool to 8x8, flatten: one 64-vector per image."""
    imgs = np.asarray(images, dtype=float)
    if imgs.ndim == 3:
        imgs = imgs[:, None]
    gray = imgs.mean(axis=1)
    n, h, w = gray.shape
    if h % FEATURE_GRID or w % FEATURE_GRID:
        raise ValueError(f"image size {h}x{w} not divisible by {FEATURE_GRID}")
    pooled = gray.reshape(n, FEATURE_GRID, h // FEATURE_GRID, FEATURE_GRID, w // FEATURE_GRID).mean(axis=(2, 4))
    return pooled.reshape(n, -1)


def _moments(feats: np.ndarray):
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False, bias=True) + COV_RIDGE * np.eye(feats.shape[1])
    return mu, cov


def desk_fid(set_a, set_b) -> float:
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValueError("desk_fid needs at least 2 images per set")
    return frechet_gaussian(*_moments(desk_features(set_a)), *_moments(desk_features(set_b)))


def normalize_fid(fid: float) -> float:
    if fid < 0:
        raise ValueError(f"FID must be non-negative, got {fid}")
    return 2.0 / math.pi * math.atan(fid)


def _check_unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


def task_score(fid_norm: float, lpips: float, l1: float) -> float:
    for name, v in (("fid_norm", fid_norm), ("lpips", lpips), ("l1", l1)):
        _check_unit(name, v)
    return (fid_norm + lpips + l1) / 3.0


def combined_score(task_scores, n_unattempted: int = 0) -> float:
    task_scores = list(task_scores)
    if not task_scores and n_unattempted <= 0:
        raise ValueError("need at least one attempted task or an unattempted penalty")
    base = float(np.mean(task_scores)) if task_scores else 0.0
    return base + 1.0 * n_unattempted


def lpips_surrogate(pred, target) -> float:
    """Mean of ``1 - SSIM`` over image pairs (7x7 windows), clamped to [0, 1]."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim == 3:
        pred, target = pred[:, None], target[:, None]
    vals = []
    for p, t in zip(np.clip(pred, 0, 1), np.clip(target, 0, 1)):
        s = structural_similarity(p, t, data_range=1.0, channel_axis=0, win_size=7)
        vals.append(1.0 - s)
    return float(np.clip(np.mean(vals), 0.0, 1.0))


@dataclass
class TaskResult:
    task: str
    fid_norm: float
    lpips: float
    l1: float
    lpips_kind: str = "lpips"

    @property
    def score(self) -> float:
        return task_score(self.fid_norm, self.lpips, self.l1)


@dataclass
class ScoreReport:
    per_task: list = field(default_factory=list)
    n_unattempted: int = 0

    @property
    def combined(self) -> float:
        return combined_score([r.score for r in self.per_task], self.n_unattempted)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["task", "fid_norm", "lpips", "l1", "score"])
            for r in self.per_task:
                w.writerow([r.task, f"{r.fid_norm:.6f}", f"{r.lpips:.6f}", f"{r.l1:.6f}", f"{r.score:.6f}"])
            w.writerow(["combined", "", "", "", f"{self.combined:.6f}"])

    def to_dict(self) -> dict:
        return {
            "per_task": [{"task": r.task, "fid_norm": round(r.fid_norm, 6), r.lpips_kind: round(r.lpips, 6),
                          "l1": round(r.l1, 6), "score": round(r.score, 6)} for r in self.per_task],
            "n_unattempted": self.n_unattempted,
            "combined": round(self.combined, 6),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def read_score_csv(path) -> ScoreReport:
    """Read ``task,fid_norm,lpips,l1[,score]`` rows (FID already normalised)."""
    report = ScoreReport()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row["task"] == "combined":
                continue
            if row["task"].startswith("unattempted"):
                report.n_unattempted += 1
                continue
            report.per_task.append(TaskResult(row["task"], float(row["fid_norm"]), float(row["lpips"]),
                                              float(row["l1"])))
    return report


def evaluate_images(pred, target, reference=None) -> dict:
    """Desk-scale task metrics for images in [0, 1].

    ``reference`` is the image set the FID compares against (defaults to
    ``target``).
    """
    reference = target if reference is None else reference
    fid = desk_fid(pred, reference)
    fid_norm = normalize_fid(fid)
    lp = lpips_surrogate(pred, target)
    l1 = l1_metric(pred, target)
    return {"fid": fid, "fid_norm": fid_norm, "lpips": lp, "l1": l1, "score": task_score(fid_norm, lp, l1)}
