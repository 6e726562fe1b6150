"""Operator networks built from layer chains: VarMiON (linear and nonlinear), VarMiON-c, DeepONet, MIONet.

Every model maps sensed input vectors plus query points to predicted values,

    u_hat(x) = beta(inputs) . tau(x)

and the families differ only in how the branch coefficient vector ``beta`` is
formed:

    varmion_linear   beta = D(Theta) (A F + A~ N)          D reshaped to (p, p)
    varmion_nl       beta = Net(A F + A~ N + A^ G)
    varmion_c        beta = Z * Net(Z),  Z = A F + A~ N + A^ G
    deeponet         beta = Branch([F, Theta, N])
    mionet           beta = B1(F) * B2(Theta) * B3(N)

Input arrays are ``(batch, k)``; predictions are ``(batch, L)`` for ``L`` query points.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor_nn import autodiff as ad
from .tensor_nn.autodiff import Tensor
from .tensor_nn.layers import ParameterStore, Sequential, parse_layers

FAMILIES = ("varmion_linear", "varmion_nl", "varmion_c", "deeponet", "mionet")
INPUT_NAMES = ("f", "theta", "eta", "g")

# branch keys per family and the input each one consumes
_BRANCH_INPUTS = {
    "varmion_linear": {"D": "theta", "A": "f", "A_tilde": "eta"},
    "varmion_nl": {"A": "f", "A_tilde": "eta", "A_breve": "g", "N": None},
    "varmion_c": {"A": "f", "A_tilde": "eta", "A_breve": "g", "N": None},
    "deeponet": {"branch": None},
    "mionet": {"f": "f", "theta": "theta", "eta": "eta"},
}


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer chains and sizes for one operator network.

    ``k`` is the interior sensor count (shared by f and theta), ``k_eta`` the
    boundary sensor count and ``k_g`` the Dirichlet-data sensor count.
    ``inputs`` lists which inputs the model consumes, in DeepONet concatenation order.
    """

    name: str
    family: str
    p: int
    branches: dict
    trunk: str
    k: int
    k_eta: int = 0
    k_g: int = 0
    inputs: tuple = ("f", "theta")

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.p < 1 or self.k < 1:
            raise ValueError("p and k must be positive")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "branches", dict(self.branches))
        bad = [i for i in self.inputs if i not in INPUT_NAMES]
        if bad:
            raise ValueError(f"unknown inputs {bad}")
        allowed = _BRANCH_INPUTS[self.family]
        extra = set(self.branches) - set(allowed)
        if extra:
            raise ValueError(f"{self.family} has no branches named {sorted(extra)}")

    def input_size(self, name: str) -> int:
        return {"f": self.k, "theta": self.k, "eta": self.k_eta, "g": self.k_g}[name]

    def to_dict(self) -> dict:
        return {
            "name": self.name, "family": self.family, "p": self.p, "branches": dict(self.branches),
            "trunk": self.trunk, "k": self.k, "k_eta": self.k_eta, "k_g": self.k_g, "inputs": list(self.inputs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(**{**d, "inputs": tuple(d.get("inputs", ("f", "theta")))})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# canonical listings ------------------------------------------------------------------

_RELU_TRUNK = "Dense(100) > ReLU > Dense(100) > ReLU > Dense(100) > ReLU > Dense(100) > ReLU > Dense({p})"
_TRCONV_A2 = "TrConv(8,4,1) > ReLU > BN > TrConv(16,4,1) > ReLU > BN > TrConv(8,2,2) > ReLU > BN > TrConv(1,2,2) > TanS"
_TRCONV_A34 = "TrConv(16,4,1) > ReLU > BN > TrConv(32,4,1) > ReLU > BN > TrConv(16,2,2) > ReLU > BN > TrConv(1,2,2) > TanS"
_A1_D = ("Dense(100) > ReLU > Dense(512) > ReLU > Reshape(32,4,4) > TrConv(16,2,2) > ReLU > BN > "
         "TrConv(16,2,2) > ReLU > BN > TrConv(8,2,2) > ReLU > BN > TrConv(1,2,2) > TanS > Reshape(64,64)")
_A5_NET = "ReLU > Dense(100) > ReLU > Dense(100) > ReLU > Dense(100) > ReLU > Dense(100)"


def _lattice_d(side: int, chain: str, p: int) -> str:
    return f"Reshape(1,{side},{side}) > {chain} > Reshape({p},{p})"


def _canonical(k_eik: int) -> dict:
    specs = [
        ArchitectureSpec("A1_deeponet", "deeponet", 64,
                         {"branch": "Dense(170) > ReLU > Dense(170) > ReLU > Dense(64)"},
                         _RELU_TRUNK.format(p=64), k=100),
        ArchitectureSpec("A1_varmion", "varmion_linear", 64, {"D": _A1_D, "A": "Linear(64)"},
                         _RELU_TRUNK.format(p=64), k=100),
        ArchitectureSpec("A2_deeponet", "deeponet", 64, {"branch": "Dense(64) > ReLU"},
                         _RELU_TRUNK.format(p=64), k=100),
        ArchitectureSpec("A2_varmion", "varmion_linear", 64, {"D": _lattice_d(10, _TRCONV_A2, 64), "A": "Linear(64)"},
                         _RELU_TRUNK.format(p=64), k=100),
        ArchitectureSpec("A3_deeponet", "deeponet", 64,
                         {"branch": "Dense(55) > ReLU > Dense(55) > ReLU > Dense(64)"}, "RBF(2,64)", k=100),
        ArchitectureSpec("A3_varmion", "varmion_linear", 64,
                         {"D": _lattice_d(10, _TRCONV_A34, 64), "A": "Linear(64)"}, "RBF(2,64)", k=100),
        ArchitectureSpec("A3_mionet", "mionet", 64,
                         {"theta": "Dense(64) > ReLU > Dense(64)", "f": "Linear(64)"}, "RBF(2,64)", k=100),
        ArchitectureSpec("A4_deeponet", "deeponet", 72,
                         {"branch": "Dense(55) > ReLU > Dense(55) > ReLU > Dense(72)"}, "RBF(2,72)",
                         k=144, k_eta=24, inputs=("f", "theta", "eta")),
        ArchitectureSpec("A4_varmion", "varmion_linear", 72,
                         {"D": _lattice_d(12, _TRCONV_A34, 72), "A": "Linear(72)", "A_tilde": "Linear(72)"},
                         "RBF(2,72)", k=144, k_eta=24, inputs=("f", "theta", "eta")),
        ArchitectureSpec("A4_mionet", "mionet", 72,
                         {"theta": "Dense(72) > ReLU", "f": "Linear(72)", "eta": "Linear(72)"}, "RBF(2,72)",
                         k=144, k_eta=24, inputs=("f", "theta", "eta")),
        ArchitectureSpec("A5_deeponet_130", "deeponet", 100, {"branch": "Dense(130) > ReLU > Dense(100)"},
                         "RBF(2,100)", k=k_eik, inputs=("f",)),
        ArchitectureSpec("A5_deeponet_200", "deeponet", 100, {"branch": "Dense(200) > ReLU > Dense(100)"},
                         "RBF(2,100)", k=k_eik, inputs=("f",)),
        ArchitectureSpec("A5_deeponet_big", "deeponet", 100,
                         {"branch": "Dense(512) > ReLU > Dense(256) > ReLU > Dense(128) > ReLU > Dense(100) > ReLU > Dense(100)"},
                         "RBF(2,100)", k=k_eik, inputs=("f",)),
        ArchitectureSpec("A5_varmion", "varmion_nl", 100, {"A": "Linear(100)", "N": _A5_NET},
                         "RBF(2,100)", k=k_eik, inputs=("f",)),
        ArchitectureSpec("A5_varmion_c", "varmion_c", 100, {"A": "Linear(100)", "N": _A5_NET},
                         "RBF(2,100)", k=k_eik, inputs=("f",)),
    ]
    return {s.name: s for s in specs}


CANONICAL_NAMES = tuple(_canonical(1024))


def get_architecture(name: str, k: int | None = None) -> ArchitectureSpec:
    """Canonical spec by name. ``k`` rescales the eikonal (A5) sensor count; the
    heat listings are tied to their sensor lattices and only accept their own k."""
    table = _canonical(k if (k is not None and name.startswith("A5")) else 1024)
    if name not in table:
        raise KeyError(f"unknown architecture {name!r}; choose from {', '.join(CANONICAL_NAMES)}")
    spec = table[name]
    if k is not None and spec.k != k:
        raise ShapeError(f"{name} is built for k={spec.k} sensors, got k={k}")
    return spec


# model -------------------------------------------------------------------------------

@dataclass
class OperatorModel:
    spec: ArchitectureSpec
    store: ParameterStore
    nets: dict = field(default_factory=dict)
    trunk: Sequential | None = None
    seed: int = 0

    @property
    def family(self) -> str:
        return self.spec.family

    @property
    def p(self) -> int:
        return self.spec.p

    def _input(self, inputs: dict, name: str) -> np.ndarray | None:
        x = inputs.get(name)
        if x is None:
            return None
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        want = self.spec.input_size(name)
        if x.ndim != 2 or x.shape[1] != want:
            raise ShapeError(f"input {name!r} must have {want} values per sample, got shape {x.shape}")
        return x

    def _required(self, inputs, name):
        x = self._input(inputs, name)
        if x is None:
            raise ShapeError(f"{self.spec.name} needs input {name!r}")
        return x

    def trunk_values(self, points) -> Tensor:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != 2:
            raise ShapeError(f"query points must be 2-D, got shape {pts.shape}")
        return self.trunk(pts, self.store, False)

    def d_matrix(self, theta, training: bool = False) -> Tensor:
        """D(Theta) as a ``(batch, p, p)`` tensor (varmion_linear only)."""
        if self.family != "varmion_linear":
            raise ValueError("D(Theta) exists only for varmion_linear models")
        th = self._required({"theta": theta}, "theta")
        return self.nets["D"](th, self.store, training)

    def latent(self, inputs: dict, training: bool = False) -> Tensor:
        """Linear image Z = A F + A~ N + A^ G for the varmion families."""
        z = None
        for key, name in (("A", "f"), ("A_tilde", "eta"), ("A_breve", "g")):
            if key not in self.nets:
                continue
            x = self._input(inputs, name)
            if x is None:
                continue
            term = self.nets[key](x, self.store, training)
            z = term if z is None else ad.add(z, term)
        if z is None:
            raise ShapeError("no linear-branch input was supplied")
        return z

    def coefficients(self, inputs: dict, training: bool = False) -> Tensor:
        """Branch coefficient vectors beta, shape ``(batch, p)``."""
        fam = self.family
        if fam == "varmion_linear":
            D = self.d_matrix(self._required(inputs, "theta"), training)
            z = self.latent(inputs, training)
            return ad.reshape(ad.matmul(D, ad.reshape(z, z.shape + (1,))), z.shape)
        if fam == "varmion_nl":
            return self.nets["N"](self.latent(inputs, training), self.store, training)
        if fam == "varmion_c":
            z = self.latent(inputs, training)
            return ad.mul(z, self.nets["N"](z, self.store, training))
        if fam == "deeponet":
            parts = [self._required(inputs, n) for n in self.spec.inputs]
            return self.nets["branch"](np.concatenate(parts, axis=1), self.store, training)
        # mionet
        beta = None
        for name in self.spec.inputs:
            out = self.nets[name](self._required(inputs, name), self.store, training)
            beta = out if beta is None else ad.mul(beta, out)
        return beta

    def forward(self, inputs: dict, points, training: bool = False) -> Tensor:
        beta = self.coefficients(inputs, training)
        tau = self.trunk_values(points)
        return ad.matmul(beta, ad.transpose(tau))

    def predict(self, inputs: dict, points) -> np.ndarray:
        return self.forward(inputs, points, training=False).data


DATA_MAP_INIT_SCALE = 0.02
_DATA_MAPS = ("A", "A_tilde", "A_breve")


def build_model(spec: ArchitectureSpec, seed: int = 0) -> OperatorModel:
    """Instantiate parameters for ``spec`` with a seeded generator."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    model = OperatorModel(spec, store, seed=seed)
    p = spec.p
    for key, name in _BRANCH_INPUTS[spec.family].items():
        if key not in spec.branches:
            continue
        if spec.family == "deeponet":
            in_dim = sum(spec.input_size(n) for n in spec.inputs)
        elif name is None:
            in_dim = p
        else:
            in_dim = spec.input_size(name)
        if in_dim < 1:
            raise ShapeError(f"branch {key!r} consumes {name!r} but its sensor count is 0")
        net = Sequential(parse_layers(spec.branches[key]), (in_dim,), store, rng, key)
        want = (p, p) if key == "D" else (p,)
        if net.out_shape != want:
            raise ShapeError(f"branch {key!r} of {spec.name} ends in shape {net.out_shape}, expected {want}")
        if key in _DATA_MAPS and spec.family == "varmion_linear":
            # keeps the initial D(A F) output near the label scale instead of far above it
            for pname in store:
                if pname.startswith(f"{key}."):
                    store[pname].data *= DATA_MAP_INIT_SCALE
        model.nets[key] = net
    _check_wiring(spec)
    model.trunk = Sequential(parse_layers(spec.trunk), (2,), store, rng, "trunk")
    if model.trunk.out_shape != (p,):
        raise ShapeError(f"trunk of {spec.name} ends in shape {model.trunk.out_shape}, latent dimension p={p}")
    return model


def _check_wiring(spec: ArchitectureSpec) -> None:
    b, fam = spec.branches, spec.family
    need = {"varmion_linear": ["D", "A"], "varmion_nl": ["A", "N"], "varmion_c": ["A", "N"],
            "deeponet": ["branch"], "mionet": list(spec.inputs)}[fam]
    missing = [n for n in need if n not in b]
    if missing:
        raise ShapeError(f"{spec.name} ({fam}) is missing branches {missing}")
    if fam in ("varmion_linear", "varmion_nl", "varmion_c"):
        for key, name in (("A_tilde", "eta"), ("A_breve", "g")):
            if (key in b) != (name in spec.inputs):
                raise ShapeError(f"{spec.name}: branch {key!r} and input {name!r} must appear together")
        for key in ("A", "A_tilde", "A_breve"):
            if key in b and any(s.kind not in ("linear_nobias",) for s in parse_layers(b[key])):
                raise ShapeError(f"{spec.name}: {key!r} must be a single bias-free linear map")


def count_parameters(model) -> dict:
    """Learnable scalar count, plus the count obtained if every bias-free Linear layer carried a bias."""
    if model is None:
        return {"learnable_count": 0, "with_bias_variant_count": 0}
    store = model.store if isinstance(model, OperatorModel) else model
    n = store.count()
    extra = 0
    if isinstance(model, OperatorModel):
        chains = list(model.spec.branches.values()) + [model.spec.trunk]
        extra = sum(s.args[0] for c in chains for s in parse_layers(c) if s.kind == "linear_nobias")
    return {"learnable_count": n, "with_bias_variant_count": n + extra}


# family-specific entry points --------------------------------------------------------------

def _expect(model: OperatorModel, *families):
    if model.family not in families:
        raise ValueError(f"model {model.spec.name} is {model.family}, expected {' or '.join(families)}")


def varmion_forward(model, F, Theta, N, points) -> np.ndarray:
    _expect(model, "varmion_linear")
    return model.predict({"f": F, "theta": Theta, "eta": N}, points)


def deeponet_forward(model, concatenated, points) -> np.ndarray:
    """Branch input is the concatenation of the sensed vectors in ``spec.inputs`` order."""
    _expect(model, "deeponet")
    x = np.atleast_2d(np.asarray(concatenated, dtype=np.float64))
    sizes = [model.spec.input_size(n) for n in model.spec.inputs]
    if x.shape[1] != sum(sizes):
        raise ShapeError(f"concatenated input must have {sum(sizes)} values, got {x.shape[1]}")
    parts = np.split(x, np.cumsum(sizes)[:-1], axis=1)
    return model.predict(dict(zip(model.spec.inputs, parts)), points)


def mionet_forward(model, F, Theta, N, points) -> np.ndarray:
    _expect(model, "mionet")
    return model.predict({"f": F, "theta": Theta, "eta": N}, points)


def varmion_nl_forward(model, F, N, G, points) -> np.ndarray:
    _expect(model, "varmion_nl")
    return model.predict({"f": F, "eta": N, "g": G}, points)


def varmion_c_forward(model, F, N, G, points) -> np.ndarray:
    _expect(model, "varmion_c")
    return model.predict({"f": F, "eta": N, "g": G}, points)


def sensor_side(spec: ArchitectureSpec) -> int | None:
    """Lattice side for specs whose theta branch reshapes onto a square grid."""
    side = math.isqrt(spec.k)
    return side if side * side == spec.k else None
