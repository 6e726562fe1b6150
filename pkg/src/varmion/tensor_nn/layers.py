"""Layer blocks and the parameter store.

Layer chains are written in the arrow notation used for the network listings,
e.g. ``"Dense(170) > ReLU > Dense(64)"``. Shapes exclude the batch axis and
image tensors are channel-first ``(C, H, W)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from . import autodiff as ad
from .autodiff import Tensor

KINDS = ("dense", "linear_nobias", "trconv2d", "batchnorm", "relu", "tanhshrink", "reshape", "rbf")

_ALIASES = {
    "dense": "dense",
    "linear": "linear_nobias",
    "trconv": "trconv2d",
    "bn": "batchnorm",
    "relu": "relu",
    "tans": "tanhshrink",
    "tanhshrink": "tanhshrink",
    "reshape": "reshape",
    "rbf": "rbf",
}
_TOKEN = re.compile(r"^\s*([A-Za-z]+)\s*(?:\(([^)]*)\))?\s*$")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
RBF_INIT_WIDTH = 0.2
MIN_RBF_WIDTH = 1e-6


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if any(a <= 0 for a in self.args):
            raise ValueError(f"{self.kind} hyperparameters must be positive, got {self.args}")

    def __str__(self):
        name = {
            "dense": "Dense", "linear_nobias": "Linear", "trconv2d": "TrConv", "batchnorm": "BN",
            "relu": "ReLU", "tanhshrink": "TanS", "reshape": "Reshape", "rbf": "RBF",
        }[self.kind]
        return f"{name}({','.join(map(str, self.args))})" if self.args else name


def parse_layers(text: str) -> list[LayerSpec]:
    """Parse ``"TrConv(16,4,1) > ReLU > BN"`` style chains (``->`` also accepted)."""
    if not text.strip():
        return []
    specs = []
    for token in re.split(r"\s*-?>\s*", text.strip()):
        m = _TOKEN.match(token)
        if not m:
            raise ValueError(f"cannot parse layer token {token!r}")
        kind = _ALIASES.get(m.group(1).lower())
        if kind is None:
            raise ValueError(f"unknown layer {m.group(1)!r}")
        args = tuple(int(a) for a in m.group(2).split(",")) if m.group(2) else ()
        specs.append(LayerSpec(kind, args))
    return specs


def format_layers(specs) -> str:
    return " > ".join(str(s) for s in specs)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ParameterStore:
    """Named trainable tensors, non-trainable buffers and Adam moments."""

    params: dict = field(default_factory=dict)  # name -> Tensor(requires_grad=True)
    buffers: dict = field(default_factory=dict)  # name -> ndarray (BN running statistics)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def arrays(self) -> dict:
        return {k: t.data for k, t in self.params.items()}

    def grads(self) -> dict:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def snapshot(self) -> dict:
        """Deep copy of parameters and buffers."""
        return {
            "params": {k: t.data.copy() for k, t in self.params.items()},
            "buffers": {k: v.copy() for k, v in self.buffers.items()},
        }

    def restore(self, snap: dict) -> None:
        for k, v in snap["params"].items():
            self.params[k].data = v.copy()
        for k, v in snap["buffers"].items():
            self.buffers[k][...] = v


class Layer:
    spec: LayerSpec
    out_shape: tuple

    def __call__(self, x: Tensor, store: ParameterStore, training: bool) -> Tensor:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, spec, in_shape, store, rng, prefix):
        if len(in_shape) != 1:
            raise ShapeError(f"{spec} needs a flat input, got shape {in_shape}; insert a Reshape")
        (k,) = spec.args
        self.spec, self.out_shape = spec, (k,)
        self.bias = spec.kind == "dense"
        self.w = f"{prefix}.weight"
        store.add(self.w, glorot_uniform(rng, (k, in_shape[0]), in_shape[0], k))
        if self.bias:
            self.b = f"{prefix}.bias"
            store.add(self.b, np.zeros(k))

    def __call__(self, x, store, training):
        return ad.linear(x, store[self.w], store[self.b] if self.bias else None)


class TrConv2d(Layer):
    def __init__(self, spec, in_shape, store, rng, prefix):
        if len(in_shape) != 3:
            raise ShapeError(f"{spec} needs a (C, H, W) input, got shape {in_shape}")
        cout, n, s = spec.args
        cin, h, w = in_shape
        self.spec, self.stride = spec, s
        self.out_shape = (cout, (h - 1) * s + n, (w - 1) * s + n)
        self.w, self.b = f"{prefix}.weight", f"{prefix}.bias"
        store.add(self.w, glorot_uniform(rng, (cin, cout, n, n), cin * n * n, cout * n * n))
        store.add(self.b, np.zeros(cout))

    def __call__(self, x, store, training):
        return ad.trconv2d(x, store[self.w], store[self.b], self.stride)


class BatchNorm(Layer):
    def __init__(self, spec, in_shape, store, rng, prefix):
        c = in_shape[0]
        self.spec, self.out_shape = spec, tuple(in_shape)
        self.g, self.b = f"{prefix}.gamma", f"{prefix}.beta"
        self.rm, self.rv = f"{prefix}.running_mean", f"{prefix}.running_var"
        store.add(self.g, np.ones(c))
        store.add(self.b, np.zeros(c))
        store.buffers[self.rm] = np.zeros(c)
        store.buffers[self.rv] = np.ones(c)

    def __call__(self, x, store, training):
        return ad.batchnorm(x, store[self.g], store[self.b], store.buffers[self.rm], store.buffers[self.rv],
                            training, BN_MOMENTUM, BN_EPS)


class Activation(Layer):
    def __init__(self, spec, in_shape, store, rng, prefix):
        self.spec, self.out_shape = spec, tuple(in_shape)
        self.fn = ad.relu if spec.kind == "relu" else ad.tanhshrink

    def __call__(self, x, store, training):
        return self.fn(x)


class Reshape(Layer):
    def __init__(self, spec, in_shape, store, rng, prefix):
        if int(np.prod(spec.args)) != int(np.prod(in_shape)):
            raise ShapeError(f"{spec} cannot reshape {in_shape} ({int(np.prod(in_shape))} values)")
        self.spec, self.out_shape = spec, tuple(spec.args)

    def __call__(self, x, store, training):
        return ad.reshape(x, (x.shape[0],) + self.out_shape)


class RBF(Layer):
    def __init__(self, spec, in_shape, store, rng, prefix):
        d, m = spec.args
        if tuple(in_shape) != (d,):
            raise ShapeError(f"{spec} expects inputs of shape ({d},), got {in_shape}")
        self.spec, self.out_shape = spec, (m,)
        self.c, self.s = f"{prefix}.centers", f"{prefix}.widths"
        store.add(self.c, rng.uniform(0.0, 1.0, size=(m, d)))
        store.add(self.s, np.full(m, RBF_INIT_WIDTH))

    def __call__(self, x, store, training):
        return ad.rbf(x, store[self.c], store[self.s])


_BUILDERS = {
    "dense": Dense, "linear_nobias": Dense, "trconv2d": TrConv2d, "batchnorm": BatchNorm,
    "relu": Activation, "tanhshrink": Activation, "reshape": Reshape, "rbf": RBF,
}


def build_layer(spec: LayerSpec, in_shape, store, rng, prefix) -> Layer:
    return _BUILDERS[spec.kind](spec, tuple(in_shape), store, rng, prefix)


class Sequential:
    """A chain of layers registered under a common name prefix."""

    def __init__(self, specs, in_shape, store: ParameterStore, rng, prefix: str):
        self.specs = list(specs)
        self.in_shape = tuple(in_shape)
        self.layers = []
        shape = self.in_shape
        for i, spec in enumerate(self.specs):
            layer = build_layer(spec, shape, store, rng, f"{prefix}.{i}")
            self.layers.append(layer)
            shape = layer.out_shape
        self.out_shape = shape

    def __call__(self, x, store, training: bool) -> Tensor:
        x = ad.as_tensor(x)
        if tuple(x.shape[1:]) != self.in_shape:
            raise ShapeError(f"expected input of shape (batch, {', '.join(map(str, self.in_shape))}), got {x.shape}")
        for layer in self.layers:
            x = layer(x, store, training)
        return x

    def forward(self, x, store, mode: str = "eval") -> Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return self(x, store, mode == "train")

