"""Flat-parameter networks built on :mod:`bridgelab.autograd`.

A network owns a single float64 parameter vector. Layers see reshaped
views into it, so gradients come back as one flat vector in the same
layout. ``version`` increments whenever the vector is replaced or updated,
which lets an activation record detect that it has gone stale.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .errors import StateError


class ParamLayout:
    """Ordered (name, shape) table with an initialiser per entry."""

    def __init__(self):
        self.entries: list[tuple[str, tuple, str, int]] = []

    def add(self, name: str, shape, init: str = "normal", fan_in: int = 1):
        self.entries.append((name, tuple(int(s) for s in shape), init, int(fan_in)))

    @property
    def size(self) -> int:
        return int(sum(np.prod(shape) for _, shape, _, _ in self.entries))

    def init_vector(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for _, shape, init, fan_in in self.entries:
            n = int(np.prod(shape))
            if init == "zeros":
                parts.append(np.zeros(n))
            else:
                parts.append(rng.standard_normal(n) / np.sqrt(fan_in))
        return np.concatenate(parts) if parts else np.zeros(0)

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, shape, _, _ in self.entries:
            n = int(np.prod(shape))
            out[name] = flat[pos:pos + n].reshape(shape)
            pos += n
        return out


class Tape:
    """Activation record of one forward pass."""

    def __init__(self, output: ag.Tensor, leaves: dict, inputs: dict, version: int, owner: int):
        self.output = output
        self.leaves = leaves
        self.inputs = inputs
        self.version = version
        self.owner = owner
        self.consumed = False


class Network:
    layout: ParamLayout

    def __init__(self, params: np.ndarray):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {params.shape}")
        self._params = params.copy()
        self.version = 0

    @property
    def params(self) -> np.ndarray:
        return self._params

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=float)
        if value.shape != self._params.shape:
            raise ValueError(f"parameter shape {value.shape} != {self._params.shape}")
        self._params = value.copy()
        self.version += 1

    @property
    def n_params(self) -> int:
        return self.layout.size

    def _leaves(self, record: bool) -> dict[str, ag.Tensor]:
        return {k: ag.Tensor(v, requires_grad=record) for k, v in self.layout.views(self._params).items()}

    def _tape(self, out: ag.Tensor, leaves, inputs) -> Tape:
        return Tape(out, leaves, inputs, self.version, id(self))

    def backward(self, grad_output, tape: Tape, return_input_grads: bool = False):
        """Flat parameter gradient of ``sum(grad_output * output)``."""
        if tape.owner != id(self) or tape.version != self.version:
            raise StateError("activation record is stale: parameters changed after the forward pass")
        if tape.consumed:
            raise StateError("activation record was already consumed by a backward pass")
        tape.consumed = True
        grad_output = np.asarray(grad_output, dtype=float)
        if grad_output.shape != tape.output.shape:
            raise ValueError(f"output gradient shape {grad_output.shape} != {tape.output.shape}")
        ag.backward(tape.output, grad_output)
        parts = []
        for name, leaf in tape.leaves.items():
            g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            parts.append(g.ravel())
        flat = np.concatenate(parts) if parts else np.zeros(0)
        if return_input_grads:
            ins = {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
                   for k, v in tape.inputs.items()}
            return flat, ins
        return flat


def linear(h: ag.Tensor, w: ag.Tensor, b: ag.Tensor) -> ag.Tensor:
    return ag.matmul(h, w) + b


def conv(h: ag.Tensor, p: dict, name: str) -> ag.Tensor:
    return ag.conv2d(h, p[name + ".w"], p[name + ".b"])


def add_conv(layout: ParamLayout, name: str, c_in: int, c_out: int, k: int = 3, zero: bool = False):
    layout.add(name + ".w", (c_out, c_in, k, k), "zeros" if zero else "normal", fan_in=c_in * k * k)
    layout.add(name + ".b", (c_out,), "zeros")


def add_linear(layout: ParamLayout, name: str, n_in: int, n_out: int, zero: bool = False):
    layout.add(name + ".w", (n_in, n_out), "zeros" if zero else "normal", fan_in=n_in)
    layout.add(name + ".b", (n_out,), "zeros")
