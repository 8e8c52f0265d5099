"""Dense feed-forward networks with exact reverse-mode gradients and AdaGrad.

Everything runs in float64 on row-major feature matrices: a sequence of T
frames with D features each is a ``(T, D)`` array, and a layer computes
``act(x @ W.T + b)`` with ``W`` stored as ``(out, in)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError, ValidationError

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")


def sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "softmax":
        return softmax(z)
    return z


def _activation_backward(kind: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Map dL/da to dL/dz for one layer."""
    if kind == "relu":
        # derivative at exactly 0 is taken as 0
        return grad * (z > 0.0)
    if kind == "sigmoid":
        return grad * a * (1.0 - a)
    if kind == "softmax":
        return a * (grad - np.sum(grad * a, axis=1, keepdims=True))
    return grad


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class Network:
    """An ordered stack of dense layers.

    ``trainable`` is the freeze switch: a frozen network still propagates
    gradients to its input but refuses optimizer updates.
    """

    def __init__(self, layers: Sequence[DenseLayer], trainable: bool = True):
        self.layers = list(layers)
        self.trainable = trainable
        # bumped on every in-place parameter update so stale caches are caught
        self.version = 0
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ValidationError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"layer {i}: weight {layer.weight.shape} / bias {layer.bias.shape}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ValidationError(f"layer {i}: softmax is only allowed on the final layer")
            if i and self.layers[i - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"layer {i} expects {layer.in_dim} inputs, previous layer gives {self.layers[i - 1].out_dim}"
                )
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValidationError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(l.out_dim for l in self.layers)

    @property
    def activations(self) -> tuple[str, ...]:
        return tuple(l.activation for l in self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> "Network":
        self.trainable = False
        return self

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return network_forward(self, x)[0]

    def __repr__(self) -> str:
        arch = " -> ".join(f"{l.out_dim}:{l.activation}" for l in self.layers)
        return f"Network({self.input_dim} -> {arch}, trainable={self.trainable})"


def dense_network(
    sizes: Sequence[int],
    activations: Sequence[str],
    seed: int | np.random.Generator = 0,
    trainable: bool = True,
) -> Network:
    """Glorot-uniform weights (range x4 for sigmoid layers), zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValidationError("need one activation per layer")
    if any(int(s) < 1 for s in sizes):
        raise ValidationError(f"layer sizes must be positive: {tuple(sizes)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        if act == "sigmoid":
            limit *= 4.0
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(DenseLayer(w, np.zeros(n_out), act))
    return Network(layers, trainable=trainable)


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list  # input to each layer
    pre: list  # pre-activations
    outputs: list  # post-activations

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]

    def log_output(self) -> np.ndarray:
        """Log-probabilities of a softmax head, computed from the logits."""
        return log_softmax(self.pre[-1])


def network_forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected input (T, {net.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite network input")
    cache = ForwardCache(id(net), net.version, [], [], [])
    a = x
    for layer in net.layers:
        z = a @ layer.weight.T + layer.bias
        cache.inputs.append(a)
        cache.pre.append(z)
        a = _activate(layer.activation, z)
        cache.outputs.append(a)
    return a, cache


@dataclass
class GradientBundle:
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    input_gradient: Optional[np.ndarray] = None

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle(
            [c * w for w in self.weights],
            [c * b for b in self.biases],
            None if self.input_gradient is None else c * self.input_gradient,
        )

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            None,
        )


def network_backward(
    net: Network,
    cache: ForwardCache,
    output_gradient: np.ndarray,
    wrt: str = "output",
    with_params: Optional[bool] = None,
) -> GradientBundle:
    """Backpropagate a loss gradient through ``net``.

    ``wrt="logits"`` means ``output_gradient`` is already taken with respect
    to the final pre-activation (the fused softmax/cross-entropy path).
    Parameter gradients are skipped for frozen networks unless
    ``with_params=True``; the input gradient is always returned.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("forward cache does not belong to the current state of this network")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(f"output gradient {g.shape} vs output {cache.outputs[-1].shape}")
    if wrt not in ("output", "logits"):
        raise ValueError(f"wrt must be 'output' or 'logits', not {wrt!r}")
    if with_params is None:
        with_params = net.trainable

    n = len(net.layers)
    wgrads: list = [None] * n
    bgrads: list = [None] * n
    last = net.layers[-1]
    if wrt == "logits":
        dz = g
    else:
        dz = _activation_backward(last.activation, cache.pre[-1], cache.outputs[-1], g)
    for i in range(n - 1, -1, -1):
        layer = net.layers[i]
        if with_params:
            wgrads[i] = dz.T @ cache.inputs[i]
            bgrads[i] = dz.sum(axis=0)
        da = dz @ layer.weight
        if i:
            prev = net.layers[i - 1]
            dz = _activation_backward(prev.activation, cache.pre[i - 1], cache.outputs[i - 1], da)
    if not with_params:
        return GradientBundle([], [], da)
    return GradientBundle(wgrads, bgrads, da)


@dataclass
class AdaGradState:
    accum_w: list
    accum_b: list
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: Network, eps: float = 1e-8) -> "AdaGradState":
        return cls(
            [np.zeros_like(l.weight) for l in net.layers],
            [np.zeros_like(l.bias) for l in net.layers],
            eps,
        )


def adagrad_step(
    net: Network, grads: GradientBundle, state: AdaGradState, lr: float
) -> tuple[Network, AdaGradState]:
    """In-place AdaGrad update; the accumulator is updated before the step."""
    if not net.trainable:
        raise ContractError("refusing to update a frozen network")
    if len(grads.weights) != len(net.layers) or len(state.accum_w) != len(net.layers):
        raise ShapeError("gradient bundle / optimizer state do not match network depth")
    for layer, gw, gb, aw, ab in zip(net.layers, grads.weights, grads.biases, state.accum_w, state.accum_b):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ShapeError(f"gradient shape {gw.shape} vs weight {layer.weight.shape}")
        aw += gw * gw
        ab += gb * gb
        layer.weight -= lr * gw / (np.sqrt(aw) + state.eps)
        layer.bias -= lr * gb / (np.sqrt(ab) + state.eps)
    net.version += 1
    return net, state


def _loss_parts(result) -> tuple[float, np.ndarray, str]:
    if isinstance(result, tuple):
        value, grad = result[:2]
        wrt = result[2] if len(result) > 2 else "output"
    else:
        value, grad, wrt = result.value, result.gradient, getattr(result, "wrt", "output")
    return float(value), grad, wrt


def analytic_gradients(net: Network, loss: Callable, x: np.ndarray) -> GradientBundle:
    out, cache = network_forward(net, x)
    _, g, wrt = _loss_parts(loss(out))
    return network_backward(net, cache, g, wrt=wrt, with_params=True)


def gradient_check(
    net: Network,
    loss: Callable,
    x: np.ndarray,
    h: float = 1e-4,
    analytic: Optional[GradientBundle] = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss`` maps the network output to ``(value, gradient)`` or to any object
    with ``value``/``gradient`` (and optionally ``wrt``) attributes. Every
    parameter entry and every input entry is perturbed. Pass ``analytic`` to
    check a precomputed bundle instead of a fresh backward pass.
    """
    if h <= 0:
        raise ValidationError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    if analytic is None:
        analytic = analytic_gradients(net, loss, x)

    def value_at(inp: np.ndarray) -> float:
        v = _loss_parts(loss(network_forward(net, inp)[0]))[0]
        if not np.isfinite(v):
            raise ValidationError("non-finite loss during finite-difference perturbation")
        return v

    worst = 0.0

    def consider(a: float, num: float) -> None:
        nonlocal worst
        err = abs(a - num) / max(abs(a), abs(num), 1e-8)
        worst = max(worst, err)

    for param, grad in zip(net.parameters(), analytic.parameters()):
        flat, gflat = param.reshape(-1), grad.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = value_at(x)
            flat[j] = old - h
            down = value_at(x)
            flat[j] = old
            consider(gflat[j], (up - down) / (2 * h))
    xf, gx = x.reshape(-1), analytic.input_gradient.reshape(-1)
    for j in range(xf.size):
        old = xf[j]
        xf[j] = old + h
        up = value_at(x)
        xf[j] = old - h
        down = value_at(x)
        xf[j] = old
        consider(gx[j], (up - down) / (2 * h))
    return worst


def relu_margin(net: Network, x: np.ndarray) -> float:
    """Smallest |pre-activation| feeding any ReLU; kinks closer than h spoil finite differences."""
    _, cache = network_forward(net, x)
    margins = [np.abs(z).min() for z, l in zip(cache.pre, net.layers) if l.activation == "relu"]
    return float(min(margins)) if margins else np.inf


def fold_input_affine(net: Network, shift: np.ndarray, scale: np.ndarray) -> Network:
    """Return a network on raw inputs equivalent to ``net((x - shift) / scale)``."""
    out = net.copy()
    first = out.layers[0]
    w = first.weight / scale
    first.bias = first.bias - w @ shift
    first.weight = w
    return out


def fold_output_affine(net: Network, shift: np.ndarray, scale: np.ndarray) -> Network:
    """Return a network computing ``net(x) * scale + shift``; needs an identity head."""
    if net.layers[-1].activation != "identity":
        raise ContractError("output affine can only be folded into an identity output layer")
    out = net.copy()
    last = out.layers[-1]
    last.weight = last.weight * scale[:, None]
    last.bias = last.bias * scale + shift
    return out
