"""Data predictors ``D(z_t, t, x)`` for the bridge.

Two trainable topologies share one interface:

* ``mlp`` -- two hidden SiLU layers over flat vectors (points, scalars);
* ``conv`` -- a small encoder/decoder with 3 pooling and 3 upsampling
  stages and skip connections, for toy images.

The source is concatenated with ``z_t`` along the channel (feature) axis.
Time enters as a sinusoidal embedding of log-SNR(t) projected and added
after the first layer. The last layer is zero-initialised by default, so an
untrained model predicts zeros.

``AnalyticGaussianDenoiser`` is the exact conditional mean for unit
Gaussian (x, y) pairs with correlation ``r`` and is used as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .checkpoint import load_container, save_container
from .errors import ParseError
from .nets import Network, ParamLayout, Tape, add_conv, add_linear, conv, linear
from .schedule import VpSchedule, bridge_coeffs, log_snr

TIME_EMBED_DIM = 16


def time_embedding(sched: VpSchedule, t, batch: int, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(log_snr(sched, t), dtype=float), (batch,))
    freqs = np.exp(-np.log(100.0) * np.arange(dim // 2) / max(dim // 2 - 1, 1))
    ang = lam[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def channel_repeat(img, k: int) -> np.ndarray:
    """Repeat a single-channel image (C axis = -3) ``k`` times."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    img = np.asarray(img, dtype=float)
    if img.ndim < 3 or img.shape[-3] != 1:
        raise ValueError(f"expected a single-channel image (..., 1, H, W), got {img.shape}")
    return np.repeat(img, int(k), axis=-3)


def to_model_channels(img, model_channels: int) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.shape[-3] == model_channels:
        return img
    return channel_repeat(img, model_channels)


class DenoiserModel(Network):
    """Trainable ``D(z_t, t, x)``; see module docstring for topologies."""

    def __init__(self, topology: dict, sched: VpSchedule, params=None, seed: int = 0,
                 zero_final: bool = True):
        self.topology = dict(topology)
        self.schedule = sched
        self.layout = _build_layout(self.topology, zero_final)
        if params is None:
            params = self.layout.init_vector(np.random.default_rng(seed))
        super().__init__(params)

    @classmethod
    def mlp(cls, dim: int, sched: VpSchedule, width: int = 64, **kw) -> "DenoiserModel":
        topo = {"kind": "mlp", "in_channels": 2 * dim, "out_channels": dim, "widths": [width, width],
                "activation": "silu", "time_embed_dim": TIME_EMBED_DIM}
        return cls(topo, sched, **kw)

    @classmethod
    def conv(cls, channels: int, sched: VpSchedule, base_width: int = 16, **kw) -> "DenoiserModel":
        topo = {"kind": "conv", "in_channels": 2 * channels, "out_channels": channels,
                "widths": [base_width, 2 * base_width, 2 * base_width, 2 * base_width],
                "kernel": 3, "activation": "silu", "time_embed_dim": TIME_EMBED_DIM}
        return cls(topo, sched, **kw)

    @classmethod
    def linear(cls, dim: int, sched: VpSchedule, **kw) -> "DenoiserModel":
        """Single affine map of ``z`` only; used by tests as an identity network."""
        topo = {"kind": "linear", "in_channels": dim, "out_channels": dim}
        return cls(topo, sched, **kw)

    @property
    def model_channels(self) -> int:
        return int(self.topology["out_channels"])

    def _check(self, z, x):
        z, x = np.asarray(z, dtype=float), np.asarray(x, dtype=float)
        kind = self.topology["kind"]
        if kind == "conv":
            x = to_model_channels(x, self.model_channels) if x.ndim == 4 else x
            if z.ndim != 4 or z.shape != x.shape or z.shape[1] != self.model_channels:
                raise ValueError(f"conv denoiser needs matching (B, {self.model_channels}, H, W) "
                                 f"inputs, got z {z.shape}, x {x.shape}")
            if z.shape[2] % 8 or z.shape[3] % 8:
                raise ValueError(f"spatial size must be divisible by 8, got {z.shape[2:]}")
        else:
            if z.ndim == 1:
                z, x = z[:, None], x.reshape(-1, 1) if x.ndim <= 1 else x
            if z.ndim != 2 or z.shape != x.shape or z.shape[1] != self.model_channels:
                raise ValueError(f"expected (B, {self.model_channels}) inputs, got z {z.shape}, x {x.shape}")
        return z, x

    def forward(self, z_t, t, x, record: bool = False):
        """Predict the clean target. Returns the output, plus a :class:`Tape` if ``record``."""
        squeeze = np.ndim(z_t) == 1 and self.topology["kind"] != "conv"
        z, x = self._check(z_t, x)
        p = self._leaves(record)
        zin = ag.Tensor(z, requires_grad=record)
        xin = ag.Tensor(x, requires_grad=record)
        kind = self.topology["kind"]
        if kind == "linear":
            out = linear(zin, p["out.w"], p["out.b"])
        else:
            emb = ag.Tensor(time_embedding(self.schedule, t, z.shape[0], self.topology["time_embed_dim"]))
            temb = linear(emb, p["time.w"], p["time.b"])
            if kind == "mlp":
                out = _mlp_forward(p, ag.concat([zin, xin], axis=1), temb)
            else:
                out = _conv_forward(p, ag.concat([zin, xin], axis=1), temb)
        if not np.all(np.isfinite(out.data)):
            raise FloatingPointError("denoiser produced non-finite output")
        result = out.data[:, 0] if squeeze else out.data
        if record:
            return result.copy(), self._tape(out, p, {"z": zin, "x": xin})
        return result.copy()

    def __call__(self, z_t, t, x):
        return self.forward(z_t, t, x)

    def backward(self, grad_output, tape: Tape, return_input_grads: bool = False):
        grad_output = np.asarray(grad_output, dtype=float)
        if grad_output.ndim == 1 and tape.output.ndim == 2:
            grad_output = grad_output[:, None]
        return super().backward(grad_output, tape, return_input_grads)


def forward(model: DenoiserModel, z_t, t, x):
    return model.forward(z_t, t, x)


def backward(model: DenoiserModel, loss_grad_at_output, saved_activations: Tape) -> np.ndarray:
    return model.backward(loss_grad_at_output, saved_activations)


def _build_layout(topo: dict, zero_final: bool) -> ParamLayout:
    layout = ParamLayout()
    kind = topo["kind"]
    c_in, c_out = int(topo["in_channels"]), int(topo["out_channels"])
    if kind == "linear":
        add_linear(layout, "out", c_in, c_out, zero=zero_final)
        return layout
    widths = [int(w) for w in topo["widths"]]
    add_linear(layout, "time", int(topo["time_embed_dim"]), widths[0])
    if kind == "mlp":
        add_linear(layout, "in", c_in, widths[0])
        add_linear(layout, "hidden", widths[0], widths[1])
        add_linear(layout, "out", widths[1], c_out, zero=zero_final)
    elif kind == "conv":
        w0, w1, w2, w3 = widths
        k = int(topo.get("kernel", 3))
        add_conv(layout, "in", c_in, w0, k)
        add_conv(layout, "enc1", w0, w0, k)
        add_conv(layout, "enc2", w0, w1, k)
        add_conv(layout, "enc3", w1, w2, k)
        add_conv(layout, "mid", w2, w3, k)
        add_conv(layout, "dec3", w3 + w2, w2, k)
        add_conv(layout, "dec2", w2 + w1, w1, k)
        add_conv(layout, "dec1", w1 + w0, w0, k)
        add_conv(layout, "out", w0, c_out, k, zero=zero_final)
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return layout


def _mlp_forward(p, h, temb):
    h = ag.silu(linear(h, p["in.w"], p["in.b"]) + temb)
    h = ag.silu(linear(h, p["hidden.w"], p["hidden.b"]))
    return linear(h, p["out.w"], p["out.b"])


def _conv_forward(p, h, temb):
    B, C = temb.shape
    h = ag.silu(conv(h, p, "in") + ag.reshape(temb, (B, C, 1, 1)))
    e1 = ag.silu(conv(h, p, "enc1"))
    e2 = ag.silu(conv(ag.avgpool2(e1), p, "enc2"))
    e3 = ag.silu(conv(ag.avgpool2(e2), p, "enc3"))
    m = ag.silu(conv(ag.avgpool2(e3), p, "mid"))
    d3 = ag.silu(conv(ag.concat([ag.upsample2(m), e3], axis=1), p, "dec3"))
    d2 = ag.silu(conv(ag.concat([ag.upsample2(d3), e2], axis=1), p, "dec2"))
    d1 = ag.silu(conv(ag.concat([ag.upsample2(d2), e1], axis=1), p, "dec1"))
    return conv(d1, p, "out")


# analytic oracle -----------------------------------------------------------------

@dataclass(frozen=True)
class AnalyticGaussianDenoiser:
    """E[y | z_t, x] for unit-variance jointly Gaussian (x, y) with correlation ``r``."""

    r: float
    schedule: VpSchedule = VpSchedule()

    def __post_init__(self):
        if not abs(self.r) < 1:
            raise ValueError(f"|r| must be < 1, got {self.r}")

    def __call__(self, z_t, t, x):
        return analytic_denoise(self, z_t, t, x, self.schedule)

    def posterior_var(self, t):
        """Var[y | z_t, x]: the pointwise minimum achievable squared error."""
        co = bridge_coeffs(self.schedule, t)
        v = 1.0 - self.r**2
        b, c = np.asarray(co.b), np.asarray(co.c)
        denom = b * b * v + c * c
        at_end = np.asarray(t) == self.schedule.t_max
        safe = np.where(denom > 0, denom, 1.0)
        out = np.where(denom > 0, v * c * c / safe, np.where(at_end, v, 0.0))
        return float(out) if out.ndim == 0 else out


def analytic_denoise(oracle: AnalyticGaussianDenoiser, z_t, t, x, sched: VpSchedule):
    co = bridge_coeffs(sched, t)
    r, v = oracle.r, 1.0 - oracle.r**2
    z_t, x = np.asarray(z_t, dtype=float), np.asarray(x, dtype=float)
    a, b, c = (np.asarray(val, dtype=float) for val in (co.a, co.b, co.c))
    if a.ndim:
        shape = a.shape + (1,) * (z_t.ndim - a.ndim)
        a, b, c = a.reshape(shape), b.reshape(shape), c.reshape(shape)
    denom = b * b * v + c * c
    # t = t_max gives 0/0; the gain b v / denom tends to 0 there (b ~ c**2).
    gain = np.where(denom > 0, b * v / np.where(denom > 0, denom, 1.0), 0.0)
    out = r * x + gain * (z_t - a * x - b * r * x)
    return float(out) if out.ndim == 0 else out


# checkpoints -------------------------------------------------------------------------

def save_checkpoint(model: DenoiserModel, path, extra: dict | None = None) -> None:
    meta = {
        "kind": "denoiser",
        "topology": model.topology,
        "schedule": {"beta_d": model.schedule.beta_d, "beta_min": model.schedule.beta_min,
                     "t_max": model.schedule.t_max, "t_min": model.schedule.t_min},
        "extra": extra or {},
    }
    save_container(path, meta, {"params": model.params})


def load_checkpoint(path) -> tuple[DenoiserModel, dict]:
    header, arrays = load_container(path)
    if header.get("kind") != "denoiser":
        raise ParseError(f"checkpoint holds {header.get('kind')!r}, not a denoiser", 0)
    model = DenoiserModel(header["topology"], VpSchedule(**header["schedule"]), params=arrays["params"])
    return model, header.get("extra", {})
