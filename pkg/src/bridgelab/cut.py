"""Contrastive unpaired translation at toy scale.

Generator: conv encoder with 3 stages (full, 1/2, 1/4 resolution), two
residual blocks, and a mirrored decoder with a tanh output. Discriminator:
3 conv layers producing a patch map of realness scores. PatchNCE compares
embeddings of the generated image's encoder features (queries) with those
of the source (keys) at shared spatial positions; the other sampled
positions of the same image are the negatives. Encoder layers 1 and 2 feed
the loss. Adversarial terms use least squares.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .checkpoint import load_container, save_container
from .errors import DivergenceError
from .nets import Network, ParamLayout, add_conv, add_linear, conv, linear
from .trainer import OptimizerState, optimizer_update

NCE_LAYERS = (1, 2)
N_PATCHES = 64
EMBED_DIM = 32


@dataclass
class PatchEmbeddingSet:
    """Unit-norm ``queries`` and ``pos_keys`` of shape (P, d); ``neg_keys`` is
    (M, d) shared by all queries or (P, M, d) per query."""

    queries: np.ndarray
    pos_keys: np.ndarray
    neg_keys: np.ndarray
    tau: float = 0.1


@dataclass(frozen=True)
class CutWeights:
    lambda_gan: float = 0.5
    lambda_nce: float = 1.0

    def __post_init__(self):
        if self.lambda_gan < 0 or self.lambda_nce < 0:
            raise ValueError("loss weights must be non-negative")


def _check_unit(name, v):
    if v.size and np.max(np.abs(np.linalg.norm(v, axis=-1) - 1.0)) > 1e-6:
        raise ValueError(f"{name} must be L2-normalised")


def patch_nce_loss(s: PatchEmbeddingSet) -> float:
    """Mean over queries of ``-log(e^{q.k/tau} / (e^{q.k/tau} + sum e^{q.k'/tau}))``."""
    if not s.tau > 0:
        raise ValueError(f"tau must be positive, got {s.tau}")
    q = np.atleast_2d(np.asarray(s.queries, dtype=float))
    k = np.atleast_2d(np.asarray(s.pos_keys, dtype=float))
    neg = np.asarray(s.neg_keys, dtype=float)
    if q.shape != k.shape:
        raise ValueError(f"queries {q.shape} and positive keys {k.shape} differ")
    for name, v in (("queries", q), ("pos_keys", k), ("neg_keys", neg)):
        _check_unit(name, v.reshape(-1, q.shape[1]) if v.size else v)
    pos = np.sum(q * k, axis=1) / s.tau
    if neg.size == 0:
        neg_logits = np.zeros((len(q), 0))
    elif neg.ndim == 2:
        neg_logits = q @ neg.T / s.tau
    else:
        neg_logits = np.einsum("pd,pmd->pm", q, neg) / s.tau
    logits = np.concatenate([pos[:, None], neg_logits], axis=1)
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    return float(np.mean(lse - pos))


def patch_nce_tensor(q: ag.Tensor, k: ag.Tensor, tau: float) -> ag.Tensor:
    """Differentiable PatchNCE for (B, P, d) embeddings with in-image negatives."""
    B, P, d = q.shape
    losses = []
    for b in range(B):
        qb = ag.reshape(ag.take(q, [b], axis=0), (P, d))
        kb = ag.reshape(ag.take(k, [b], axis=0), (P, d))
        logits = ag.matmul(qb, ag.transpose(kb, (1, 0))) * (1.0 / tau)
        diag = ag.sum(qb * kb, axis=1) * (1.0 / tau)
        losses.append(ag.mean(ag.logsumexp(logits, axis=1) - diag))
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    return total * (1.0 / B)


def lsgan_losses(d_real, d_fake) -> tuple[float, float]:
    d_real, d_fake = np.asarray(d_real, dtype=float), np.asarray(d_fake, dtype=float)
    loss_d = 0.5 * np.mean((d_real - 1.0) ** 2) + 0.5 * np.mean(d_fake**2)
    loss_g = np.mean((d_fake - 1.0) ** 2)
    return float(loss_d), float(loss_g)


def generator_objective(loss_gan: float, loss_nce: float, w: CutWeights = CutWeights()) -> float:
    return w.lambda_gan * loss_gan + w.lambda_nce * loss_nce


# networks -------------------------------------------------------------------------

class CutGenerator(Network):
    def __init__(self, c_in: int, c_out: int, width: int = 16, n_res: int = 2, params=None, seed: int = 0):
        self.c_in, self.c_out, self.width, self.n_res = c_in, c_out, width, n_res
        self.layout = ParamLayout()
        w = width
        add_conv(self.layout, "enc0", c_in, w)
        add_conv(self.layout, "enc1", w, 2 * w)
        add_conv(self.layout, "enc2", 2 * w, 2 * w)
        for i in range(n_res):
            add_conv(self.layout, f"res{i}a", 2 * w, 2 * w)
            add_conv(self.layout, f"res{i}b", 2 * w, 2 * w)
        add_conv(self.layout, "dec2", 2 * w, 2 * w)
        add_conv(self.layout, "dec1", 2 * w, w)
        add_conv(self.layout, "out", w, c_out)
        if params is None:
            params = self.layout.init_vector(np.random.default_rng(seed))
        super().__init__(params)

    @property
    def feature_channels(self) -> list[int]:
        return [2 * self.width, 2 * self.width]

    def encode(self, p, x: ag.Tensor) -> list[ag.Tensor]:
        """Encoder activations of all 3 stages."""
        h0 = ag.silu(conv(x, p, "enc0"))
        h1 = ag.silu(conv(ag.avgpool2(h0), p, "enc1"))
        h2 = ag.silu(conv(ag.avgpool2(h1), p, "enc2"))
        return [h0, h1, h2]

    def apply(self, p, x: ag.Tensor) -> ag.Tensor:
        h = self.encode(p, x)[-1]
        for i in range(self.n_res):
            h = h + conv(ag.silu(conv(h, p, f"res{i}a")), p, f"res{i}b")
        h = ag.silu(conv(ag.upsample2(h), p, "dec2"))
        h = ag.silu(conv(ag.upsample2(h), p, "dec1"))
        return ag.tanh(conv(h, p, "out"))

    def __call__(self, x) -> np.ndarray:
        return self.apply(self._leaves(False), ag.Tensor(x)).data


class PatchDiscriminator(Network):
    def __init__(self, c_in: int, width: int = 16, params=None, seed: int = 1):
        self.layout = ParamLayout()
        add_conv(self.layout, "l0", c_in, width)
        add_conv(self.layout, "l1", width, 2 * width)
        add_conv(self.layout, "l2", 2 * width, 1)
        if params is None:
            params = self.layout.init_vector(np.random.default_rng(seed))
        super().__init__(params)

    def apply(self, p, x: ag.Tensor) -> ag.Tensor:
        h = ag.avgpool2(ag.silu(conv(x, p, "l0")))
        h = ag.avgpool2(ag.silu(conv(h, p, "l1")))
        return conv(h, p, "l2")

    def __call__(self, x) -> np.ndarray:
        return self.apply(self._leaves(False), ag.Tensor(x)).data


class PatchSampleHeads(Network):
    """One two-layer MLP per NCE layer, followed by L2 normalisation."""

    def __init__(self, channels: list[int], dim: int = EMBED_DIM, params=None, seed: int = 2):
        self.channels, self.dim = list(channels), dim
        self.layout = ParamLayout()
        for i, c in enumerate(self.channels):
            add_linear(self.layout, f"h{i}a", c, dim)
            add_linear(self.layout, f"h{i}b", dim, dim)
        if params is None:
            params = self.layout.init_vector(np.random.default_rng(seed))
        super().__init__(params)

    def apply(self, p, i: int, feat: ag.Tensor, positions) -> ag.Tensor:
        """Embed ``feat`` (B, C, H, W) at flat spatial ``positions`` -> (B, P, dim)."""
        B, C, H, W = feat.shape
        flat = ag.transpose(ag.reshape(feat, (B, C, H * W)), (0, 2, 1))
        picked = ag.reshape(ag.take(flat, positions, axis=1), (B * len(positions), C))
        e = linear(ag.silu(linear(picked, p[f"h{i}a.w"], p[f"h{i}a.b"])), p[f"h{i}b.w"], p[f"h{i}b.b"])
        return ag.l2_normalize(ag.reshape(e, (B, len(positions), self.dim)), axis=-1)


def _flat_grad(leaves: dict) -> np.ndarray:
    return np.concatenate([(v.grad if v.grad is not None else np.zeros_like(v.data)).ravel()
                           for v in leaves.values()])


def sample_positions(rng: np.random.Generator, hw: int, n_patches: int = N_PATCHES) -> np.ndarray:
    """Uniform spatial positions without replacement (all positions if fewer exist)."""
    return np.sort(rng.choice(hw, size=min(n_patches, hw), replace=False))


@dataclass
class CutModel:
    gen: CutGenerator
    disc: PatchDiscriminator
    heads: PatchSampleHeads
    weights: CutWeights = CutWeights()
    tau: float = 0.1
    n_patches: int = N_PATCHES
    learning_rate: float = 2e-4
    opt_g: OptimizerState = field(default_factory=lambda: OptimizerState("adaptive-moments", beta1=0.5))
    opt_d: OptimizerState = field(default_factory=lambda: OptimizerState("adaptive-moments", beta1=0.5))
    opt_h: OptimizerState = field(default_factory=lambda: OptimizerState("adaptive-moments", beta1=0.5))

    @classmethod
    def build(cls, channels: int, width: int = 16, seed: int = 0, **kw) -> "CutModel":
        """Networks over ``channels``-band images; the encoder also reads generator outputs."""
        gen = CutGenerator(channels, channels, width, seed=seed)
        disc = PatchDiscriminator(channels, width, seed=seed + 1)
        heads = PatchSampleHeads(gen.feature_channels, seed=seed + 2)
        return cls(gen, disc, heads, **kw)

    def translate(self, x) -> np.ndarray:
        return self.gen(x)


def nce_from_features(model: CutModel, pg, ph, feats_q, feats_k, rng) -> ag.Tensor:
    """PatchNCE averaged over the selected encoder layers; keys are not differentiated."""
    total = None
    for i, layer in enumerate(NCE_LAYERS):
        fq, fk = feats_q[layer], ag.Tensor(feats_k[layer].data)
        pos = sample_positions(rng, fq.shape[2] * fq.shape[3], model.n_patches)
        loss = patch_nce_tensor(model.heads.apply(ph, i, fq, pos), model.heads.apply(ph, i, fk, pos), model.tau)
        total = loss if total is None else total + loss
    return total * (1.0 / len(NCE_LAYERS))


def patch_nce_images(model: CutModel, src, out, rng: np.random.Generator) -> float:
    """PatchNCE between generator encodings of ``out`` (queries) and ``src`` (keys)."""
    pg, ph = model.gen._leaves(False), model.heads._leaves(False)
    fq = model.gen.encode(pg, ag.Tensor(out))
    fk = model.gen.encode(pg, ag.Tensor(src))
    return float(nce_from_features(model, pg, ph, fq, fk, rng).data)


def discriminator_step(model: CutModel, x, y_real) -> float:
    fake = model.gen(x)
    pd = model.disc._leaves(True)
    d_real = model.disc.apply(pd, ag.Tensor(y_real))
    d_fake = model.disc.apply(pd, ag.Tensor(fake))
    loss = ag.mean(ag.square(d_real - 1.0)) * 0.5 + ag.mean(ag.square(d_fake)) * 0.5
    ag.backward(loss)
    model.disc.params = optimizer_update(model.disc.params, _flat_grad(pd), model.opt_d, model.learning_rate)
    return float(loss.data)


def generator_step(model: CutModel, x, rng: np.random.Generator) -> float:
    pg, ph = model.gen._leaves(True), model.heads._leaves(True)
    pd = model.disc._leaves(False)
    xin = ag.Tensor(x)
    fake = model.gen.apply(pg, xin)
    d_fake = model.disc.apply(pd, fake)
    loss_gan = ag.mean(ag.square(d_fake - 1.0))
    loss_nce = nce_from_features(model, pg, ph, model.gen.encode(pg, fake), model.gen.encode(pg, xin), rng)
    total = loss_gan * model.weights.lambda_gan + loss_nce * model.weights.lambda_nce
    ag.backward(total)
    model.gen.params = optimizer_update(model.gen.params, _flat_grad(pg), model.opt_g, model.learning_rate)
    model.heads.params = optimizer_update(model.heads.params, _flat_grad(ph), model.opt_h, model.learning_rate)
    return float(total.data)


def cut_train_step(model: CutModel, x, y_pool, rng: np.random.Generator, iteration: int = 0):
    """One discriminator update then one generator update; returns ``(loss_g, loss_d)``."""
    y_real = y_pool[rng.integers(0, len(y_pool), size=len(x))]
    loss_d = discriminator_step(model, x, y_real)
    loss_g = generator_step(model, x, rng)
    if not (np.isfinite(loss_d) and np.isfinite(loss_g)):
        raise DivergenceError(f"non-finite CUT loss at iteration {iteration}", iteration)
    return loss_g, loss_d


def train_cut(model: CutModel, sources, targets, n_iterations: int, batch_size: int = 4, seed: int = 0,
              log_every: int = 10, callback=None):
    """Targets act as an unpaired pool: real samples are drawn independently of the batch."""
    rng = np.random.default_rng(seed)
    rows = []
    start = time.perf_counter()
    for it in range(n_iterations):
        x = sources[rng.integers(0, len(sources), size=batch_size)]
        lg, ld = cut_train_step(model, x, targets, rng, it)
        if it % log_every == 0 or it == n_iterations - 1:
            rows.append((it, lg, ld, 1e3 * (time.perf_counter() - start)))
            if callback is not None:
                callback(it, lg, ld)
    return rows


def write_cut_curve(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter", "loss_g", "loss_d", "wall_ms"])
        for it, lg, ld, ms in rows:
            w.writerow([it, f"{lg:.6f}", f"{ld:.6f}", f"{ms:.3f}"])


def save_cut(model: CutModel, path) -> None:
    meta = {"kind": "cut", "c_in": model.gen.c_in, "c_out": model.gen.c_out, "width": model.gen.width,
            "n_res": model.gen.n_res, "tau": model.tau, "n_patches": model.n_patches,
            "weights": {"lambda_gan": model.weights.lambda_gan, "lambda_nce": model.weights.lambda_nce}}
    save_container(path, meta, {"gen": model.gen.params, "disc": model.disc.params, "heads": model.heads.params})


def load_cut(path) -> CutModel:
    header, arrays = load_container(path)
    if header.get("kind") != "cut":
        raise ValueError(f"checkpoint holds {header.get('kind')!r}, not a CUT model")
    gen = CutGenerator(header["c_in"], header["c_out"], header["width"], header["n_res"], params=arrays["gen"])
    disc = PatchDiscriminator(header["c_out"], header["width"], params=arrays["disc"])
    heads = PatchSampleHeads(gen.feature_channels, params=arrays["heads"])
    return CutModel(gen, disc, heads, CutWeights(**header["weights"]), header["tau"], header["n_patches"])
