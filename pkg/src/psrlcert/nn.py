"""Fully-connected ReLU networks with hand-written reverse mode.

Parameters are plain numpy arrays held in :class:`MlpParams`. Every function
here accepts either a single input vector of shape ``(n,)`` or a batch of
shape ``(B, n)``; gradients of a batch are summed over the batch.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

MAGIC = "MLPv1"


class ShapeError(ValueError):
    """Input or parameter dimensions do not chain."""


class TrainingFault(RuntimeError):
    """A loss or gradient became non-finite."""


class WeightFileError(ValueError):
    """Malformed MLPv1 weight file."""


class VersionMismatch(WeightFileError):
    pass


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            layer.weights = np.asarray(layer.weights, dtype=np.float64)
            layer.biases = np.asarray(layer.biases, dtype=np.float64)
            w, b = layer.weights, layer.biases
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weights {w.shape} vs biases {b.shape}")
            if i and w.shape[1] != self.layers[i - 1].weights.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[1]} does not match previous output")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [layer.weights.shape[0] for layer in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([Layer(l.weights.copy(), l.biases.copy()) for l in self.layers])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class GradientSet:
    """Gradients congruent with an :class:`MlpParams`, plus the input gradient."""

    layers: list[Layer]
    inputs: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, p: MlpParams) -> "GradientSet":
        return cls([Layer(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in p.layers])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def scaled(self, c: float) -> "GradientSet":
        return GradientSet([Layer(l.weights * c, l.biases * c) for l in self.layers],
                           None if self.inputs is None else self.inputs * c)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        layers = [Layer(a.weights + b.weights, a.biases + b.biases)
                  for a, b in zip(self.layers, other.layers)]
        if self.inputs is None or other.inputs is None:
            inputs = self.inputs if other.inputs is None else other.inputs
        else:
            inputs = self.inputs + other.inputs
        return GradientSet(layers, inputs)


def init_mlp(sizes: list[int], rng: np.random.Generator) -> MlpParams:
    """He-uniform initialisation for hidden layers, small output layer."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / n_in)
        if i == len(sizes) - 2:
            bound = np.sqrt(1.0 / n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out)))
    return MlpParams(layers)


def _check_input(p: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != p.in_dim:
        raise ShapeError(f"expected input of width {p.in_dim}, got shape {x.shape}")
    return x


def forward_trace(p: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    """Pre-activations of every layer (the last entry is the network output)."""
    h = _check_input(p, x)
    pre = []
    for i, layer in enumerate(p.layers):
        z = h @ layer.weights.T + layer.biases
        pre.append(z)
        if i < len(p.layers) - 1:
            h = np.maximum(z, 0.0)
    return pre


def forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward_trace(p, x)[-1]


def backward(p: MlpParams, x: np.ndarray, upstream: np.ndarray,
             trace: list[np.ndarray] | None = None) -> GradientSet:
    """Gradient of ``sum(upstream * forward(p, x))`` w.r.t. parameters and ``x``.

    The ReLU derivative at exactly zero is taken to be zero.
    """
    x = _check_input(p, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:-1] + (p.out_dim,):
        raise ShapeError(f"upstream shape {upstream.shape} does not match output")
    if trace is None:
        trace = forward_trace(p, x)
    batched = x.ndim == 2
    grads: list[Layer] = [None] * len(p.layers)  # type: ignore[list-item]
    delta = upstream
    for i in range(len(p.layers) - 1, -1, -1):
        h = x if i == 0 else np.maximum(trace[i - 1], 0.0)
        if batched:
            gw = delta.T @ h
            gb = delta.sum(axis=0)
        else:
            gw = np.outer(delta, h)
            gb = delta.copy()
        grads[i] = Layer(gw, gb)
        delta = delta @ p.layers[i].weights
        if i > 0:
            delta = delta * (trace[i - 1] > 0)
    return GradientSet(grads, delta)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def optimize_step(p: MlpParams, g: GradientSet, opt: AdamState) -> MlpParams:
    """One Adam update; returns new parameters and advances ``opt`` in place."""
    grads = g.arrays()
    for a in grads:
        if not np.all(np.isfinite(a)):
            raise TrainingFault("non-finite gradient")
    params = p.arrays()
    if not opt.m:
        opt.m = [np.zeros_like(a) for a in params]
        opt.v = [np.zeros_like(a) for a in params]
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    new = []
    for a, da, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * da
        v *= opt.beta2
        v += (1.0 - opt.beta2) * da * da
        new.append(a - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps))
    return MlpParams([Layer(w, b) for w, b in zip(new[0::2], new[1::2])])


def _fmt(v: float) -> str:
    return "%.17g" % v


def dumps_params(p: MlpParams) -> str:
    lines = [f"{MAGIC} {len(p.layers)}"]
    for layer in p.layers:
        out, n_in = layer.weights.shape
        lines.append(f"{out} {n_in}")
        for row in layer.weights:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append(" ".join(_fmt(v) for v in layer.biases))
    return "\n".join(lines) + "\n"


def loads_params(text: str) -> MlpParams:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise WeightFileError("empty weight file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise VersionMismatch(f"expected header '{MAGIC} <n_layers>', got {lines[0]!r}")
    try:
        n_layers = int(head[1])
    except ValueError as exc:
        raise WeightFileError(f"bad layer count {head[1]!r}") from exc
    pos = 1
    layers = []
    try:
        for _ in range(n_layers):
            out, n_in = (int(t) for t in lines[pos].split())
            pos += 1
            w = np.array([[float(t) for t in lines[pos + r].split()] for r in range(out)])
            pos += out
            b = np.array([float(t) for t in lines[pos].split()])
            pos += 1
            if w.shape != (out, n_in) or b.shape != (out,):
                raise ShapeError(f"layer declared {out}x{n_in} but holds {w.shape}/{b.shape}")
            layers.append(Layer(w, b))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ShapeError):
            raise
        raise WeightFileError(f"malformed weight file near line {pos + 1}") from exc
    if pos != len(lines):
        raise WeightFileError("trailing data after last layer")
    return MlpParams(layers)


def save_params(p: MlpParams, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps_params(p))


def load_params(path: str | os.PathLike, expect_sizes: list[int] | None = None) -> MlpParams:
    with open(path, encoding="ascii", newline="") as fh:
        p = loads_params(fh.read())
    if expect_sizes is not None and p.sizes != list(expect_sizes):
        raise ShapeError(f"{path}: layer sizes {p.sizes} != expected {list(expect_sizes)}")
    return p
