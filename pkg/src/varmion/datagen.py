"""Training-set construction: random PDE data, FEM solves, sensing and the dataset container.

Recipes
-------
heat2    -div(theta grad u) = f, zero flux on Gamma_eta, u = 0 on Gamma_g; inputs (f, theta)
heat3    as heat2 with a random flux eta on Gamma_eta; inputs (f, theta, eta)
eikonal  -0.01 Lap u + |grad u| = f, u = 0 on the whole boundary; input f

A sample j goes through: draw nodal GRF realizations, project onto the P1 space
(the identity for nodal data), solve, sense the inputs at the sensor points and
read the solution at the output nodes. Sensor and output locations are shared by
all samples.
"""
from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import grf
from . import io as vio
from . import mesh_fem as fem
from .errors import ConfigError, ConvergenceError, FormatError, SingularMatrixError, SolverError

log = logging.getLogger(__name__)

PDES = ("heat2", "heat3", "eikonal")

REQUIRED_ARRAYS = (
    "sensors_interior", "sensors_boundary", "output_nodes", "output_weights",
    "inputs_f", "inputs_theta", "inputs_eta", "labels",
    "nodal_f", "nodal_theta", "nodal_eta", "nodal_u",
    "split_train", "split_val", "split_test",
)

_DEFAULTS = {
    "heat2": {
        "gamma_eta": ["left", "right"],
        "f": {"length_scale": 0.2, "min": 0.02, "max": 0.99},
        "theta": {"length_scale": 0.4, "min": 0.02, "max": 0.99},
        "sensors": {"kind": "uniform_grid", "k": 100, "k_eta": 0},
        "outputs": {"recipe": "interior_and_boundary", "interior": 100},
        "test_fraction": 0.1,
    },
    "heat3": {
        "gamma_eta": ["left", "right"],
        "f": {"length_scale": 0.2, "min": 0.02, "max": 0.99},
        "theta": {"length_scale": 0.4, "min": 0.02, "max": 0.99},
        "eta": {"length_scale": 0.3, "min": -1.0, "max": 1.0},
        "sensors": {"kind": "uniform_grid", "k": 144, "k_eta": 24},
        "outputs": {"recipe": "interior_and_boundary", "interior": 100},
        "test_fraction": 0.1,
    },
    "eikonal": {
        "gamma_eta": [],
        "f": {"length_scale": 0.4, "min": 0.1, "max": 2.0},
        "sensors": {"kind": "uniform_grid", "k": 1024, "k_eta": 0},
        "outputs": {"recipe": "random_nodes", "count": 140},
        "test_fraction": 0.2,
        "picard": {"diffusion": 0.01, "grad_reg": 1e-6, "tol": 1e-8, "max_iter": 200, "damping": 0.7},
    },
}


@dataclass
class DatasetConfig:
    """Everything needed to regenerate a dataset. Missing keys take the recipe defaults."""

    pde: str
    n_per_side: int = 32
    J: int = 10000
    seed: int = 0
    gamma_eta: list | None = None
    f: dict | None = None
    theta: dict | None = None
    eta: dict | None = None
    sensors: dict | None = None
    outputs: dict | None = None
    test_fraction: float | None = None
    val_fraction: float = 0.1
    rescale_mode: str = "per_sample"
    dirichlet: str = "strong"
    beta_scale: float = 10.0
    factored: dict | None = None  # {"n_f", "n_theta", "n_eta"}: J = product, nested order
    picard: dict | None = None

    def __post_init__(self):
        if self.pde not in PDES:
            raise ConfigError(f"unknown pde {self.pde!r}; choose from {PDES}")
        d = _DEFAULTS[self.pde]
        for key, val in d.items():
            cur = getattr(self, key)
            if cur is None:
                setattr(self, key, copy.deepcopy(val))
            elif isinstance(val, dict):
                setattr(self, key, {**val, **cur})
        if self.pde != "heat3":
            self.eta = None
        if self.pde == "eikonal":
            self.theta = None
        if self.n_per_side < 1:
            raise ConfigError("n_per_side must be >= 1")
        if self.factored is not None:
            if self.pde != "heat3":
                raise ConfigError("factored index grids are defined for heat3 only")
            sizes = [int(self.factored[k]) for k in ("n_f", "n_theta", "n_eta")]
            if min(sizes) < 1:
                raise ConfigError("factored grid sizes must be positive")
            self.factored = dict(zip(("n_f", "n_theta", "n_eta"), sizes))
            self.J = math.prod(sizes)
        if self.J < 1:
            raise ConfigError("J must be >= 1")
        if not (0.0 <= self.test_fraction < 1.0 and 0.0 <= self.val_fraction < 1.0):
            raise ConfigError("split fractions must lie in [0, 1)")
        if self.rescale_mode not in ("per_sample", "global_quantile"):
            raise ConfigError(f"unknown rescale_mode {self.rescale_mode!r}")
        if self.dirichlet not in ("strong", "nitsche"):
            raise ConfigError(f"unknown dirichlet mode {self.dirichlet!r}")
        if self.sensors["kind"] not in ("uniform_grid", "random"):
            raise ConfigError(f"unknown sensor kind {self.sensors['kind']!r}")

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown dataset keys {sorted(unknown)}")
        return cls(**copy.deepcopy(d))


# sensors and output nodes ----------------------------------------------------------------------

@dataclass
class SensorLayout:
    interior_sensors: np.ndarray  # (k, 2)
    boundary_sensors: np.ndarray  # (k', 2)
    sensor_kind: str
    output_nodes: np.ndarray  # (L, 2)
    output_weights: np.ndarray  # (L,)
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.interior_sensors)

    @property
    def k_eta(self) -> int:
        return len(self.boundary_sensors)

    @property
    def L(self) -> int:
        return len(self.output_nodes)


def lattice_cell_centers(side: int) -> np.ndarray:
    """Centers of a side x side lattice of cells over the unit square, row-major (y slow)."""
    c = (np.arange(side) + 0.5) / side
    X, Y = np.meshgrid(c, c)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def edge_points(labels, per_edge: int) -> np.ndarray:
    """``per_edge`` evenly spaced points (segment midpoints) on each labelled edge, in label order."""
    t = (np.arange(per_edge) + 0.5) / per_edge
    out = []
    for lab in [lab for lab in fem.LABELS if lab in set(labels)]:
        zero, one = np.zeros_like(t), np.ones_like(t)
        out.append({"left": (zero, t), "right": (one, t), "bottom": (t, zero), "top": (t, one)}[lab])
    if not out:
        return np.zeros((0, 2))
    return np.concatenate([np.stack(p, axis=1) for p in out])


def _random_interior(rng: np.random.Generator, count: int) -> np.ndarray:
    pts = rng.uniform(0.0, 1.0, size=(count, 2))
    bad = (pts <= 0.0) | (pts >= 1.0)
    while np.any(bad):  # open square; practically never taken
        pts[bad] = rng.uniform(0.0, 1.0, size=int(bad.sum()))
        bad = (pts <= 0.0) | (pts >= 1.0)
    return pts


def make_sensor_layout(kind: str, k: int, k_eta: int, outputs: dict, seed: int, mesh: fem.Mesh) -> SensorLayout:
    """Sensor points and output nodes.

    ``outputs`` recipes:
      interior_and_boundary  ``interior`` random points plus every boundary mesh node except the 4 corners
      random_nodes           ``count`` mesh nodes drawn without replacement
      mesh_nodes             all q mesh nodes (L = q)
      random_points          ``count`` random interior points
    Output weights are Monte-Carlo weights 1/L.
    """
    if k < 1 or k_eta < 0:
        raise ConfigError("sensor counts must be positive")
    if kind == "uniform_grid":
        side = math.isqrt(k)
        if side * side != k:
            raise ConfigError(f"uniform_grid needs a perfect-square sensor count, got k={k}")
        interior = lattice_cell_centers(side)
    elif kind == "random":
        interior = _random_interior(grf.rng_for(seed, grf.stream_id("sensors"), 0), k)
    else:
        raise ConfigError(f"unknown sensor kind {kind!r}")
    labels = sorted(mesh.gamma_eta_spec)
    if k_eta:
        if not labels:
            raise ConfigError("boundary sensors requested but Gamma_eta is empty")
        if k_eta % len(labels):
            raise ConfigError(f"k_eta={k_eta} is not divisible by the {len(labels)} Gamma_eta edges")
        boundary = edge_points(labels, k_eta // len(labels))
    else:
        boundary = np.zeros((0, 2))

    rng = grf.rng_for(seed, grf.stream_id("outputs"), 0)
    recipe = outputs.get("recipe")
    if recipe == "interior_and_boundary":
        bnd = mesh.boundary_nodes(fem.LABELS)
        corners = {0, mesh.n_per_side, mesh.q - 1 - mesh.n_per_side, mesh.q - 1}
        bnd = np.array([i for i in bnd if i not in corners], dtype=np.int64)
        pts = np.concatenate([_random_interior(rng, int(outputs["interior"])), mesh.nodes[bnd]])
    elif recipe == "random_nodes":
        count = int(outputs["count"])
        if count > mesh.q:
            raise ConfigError(f"cannot draw {count} distinct nodes from a mesh with {mesh.q}")
        pts = mesh.nodes[np.sort(rng.choice(mesh.q, size=count, replace=False))]
    elif recipe == "mesh_nodes":
        pts = mesh.nodes.copy()
    elif recipe == "random_points":
        pts = _random_interior(rng, int(outputs["count"]))
    else:
        raise ConfigError(f"unknown output recipe {recipe!r}")
    L = len(pts)
    return SensorLayout(interior, boundary, kind, pts, np.full(L, 1.0 / L), seed)


def sense_inputs(mesh: fem.Mesh, layout: SensorLayout, f_nodal, theta_nodal=None, eta_full=None):
    """Point values of the P1 fields at the sensors: (F_hat, Theta_hat, N_hat).

    Arguments may be single nodal vectors or stacks ``(J, q)``. ``eta_full`` is the
    zero-extended flux coefficient vector; it is evaluated at the boundary sensors.
    """
    def ev(v, pts):
        if v is None or len(pts) == 0:
            return None
        return mesh.evaluate(v, pts)

    return ev(f_nodal, layout.interior_sensors), ev(theta_nodal, layout.interior_sensors), ev(eta_full, layout.boundary_sensors)


# dataset ----------------------------------------------------------------------------------

@dataclass
class OperatorDataset:
    metadata: dict
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name) -> np.ndarray:
        return self.arrays[name]

    @property
    def pde(self) -> str:
        return self.metadata["config"]["pde"]

    @property
    def J(self) -> int:
        return len(self.arrays["labels"])

    @property
    def L(self) -> int:
        return self.arrays["labels"].shape[1]

    @property
    def mesh(self) -> fem.Mesh:
        m = self.metadata["mesh"]
        return fem.build_unit_square_mesh(m["n_per_side"], m["gamma_eta"])

    @property
    def input_names(self) -> tuple:
        return tuple(self.metadata["input_order"])

    def split(self, name: str) -> np.ndarray:
        return self.arrays[f"split_{name}"]

    def inputs(self, idx=None) -> dict:
        sel = slice(None) if idx is None else idx
        return {n: self.arrays[f"inputs_{n}"][sel] for n in self.input_names}

    def labels(self, idx=None) -> np.ndarray:
        return self.arrays["labels"] if idx is None else self.arrays["labels"][idx]

    @property
    def output_nodes(self) -> np.ndarray:
        return self.arrays["output_nodes"]

    @property
    def output_weights(self) -> np.ndarray:
        return self.arrays["output_weights"]

    def label_hash(self) -> str:
        return label_hash(self.arrays["labels"])

    def to_bytes(self) -> bytes:
        return vio.encode_dataset(self.metadata, self.arrays)

    def save(self, path) -> None:
        vio.write_bytes(path, self.to_bytes())


def label_hash(labels) -> str:
    return hashlib.sha256(np.ascontiguousarray(labels, dtype="<f8").tobytes()).hexdigest()


def load_dataset(path) -> OperatorDataset:
    return dataset_from_bytes(vio.read_bytes(path))


def dataset_from_bytes(data: bytes) -> OperatorDataset:
    meta, arrays = vio.decode_dataset(data)
    missing = [n for n in REQUIRED_ARRAYS if n not in arrays]
    if missing:
        raise FormatError(f"dataset is missing arrays {missing}")
    return OperatorDataset(meta, arrays)


def _draw(cfg: DatasetConfig, name: str, points, count: int, lo: float, hi: float) -> np.ndarray:
    spec = getattr(cfg, name)
    factor = grf.build_covariance_factor(points, spec["length_scale"])
    raw = grf.sample_fields(factor, count, cfg.seed, grf.stream_id(name))
    return grf.rescale_fields(raw, lo, hi, cfg.rescale_mode)


def _realizations(cfg: DatasetConfig, mesh: fem.Mesh):
    """Nodal f, theta, eta (on Gamma_eta nodes) for every sample, in generation order."""
    J = cfg.J
    fac = cfg.factored or {"n_f": J, "n_theta": J, "n_eta": J}
    f_all = _draw(cfg, "f", mesh.nodes, fac["n_f"], cfg.f["min"], cfg.f["max"])
    eta_nodes = mesh.eta_nodes
    th_all = eta_all = None
    if cfg.theta is not None:
        th_all = _draw(cfg, "theta", mesh.nodes, fac["n_theta"], cfg.theta["min"], cfg.theta["max"])
    if cfg.eta is not None:
        eta_all = _draw(cfg, "eta", mesh.nodes[eta_nodes], fac["n_eta"], cfg.eta["min"], cfg.eta["max"])
    if cfg.factored is None:
        idx_f = idx_t = idx_e = np.arange(J)
    else:
        # nested loops: f innermost, theta middle, eta outermost
        idx_e, idx_t, idx_f = np.unravel_index(np.arange(J), (fac["n_eta"], fac["n_theta"], fac["n_f"]))
    f = f_all[idx_f]
    th = th_all[idx_t] if th_all is not None else np.zeros((J, 0))
    eta = eta_all[idx_e] if eta_all is not None else np.zeros((J, len(eta_nodes)))
    factors = np.stack([idx_f, idx_t, idx_e], axis=1).astype(np.int64)
    return f, th, eta, factors


def _bound_constant(mesh: fem.Mesh, cfg: DatasetConfig) -> float:
    """Scale of |u| for unit data (f = 1, theta = 1, unit flux), used by the label sanity guard."""
    system = fem.assemble_heat(mesh, 1.0, cfg.dirichlet, cfg.beta_scale)
    N = np.zeros(mesh.q)
    N[mesh.eta_nodes] = 1.0
    return float(np.abs(fem.solve_linear(system, np.ones(mesh.q), N)).max())


# Picard can cycle where characteristics meet and grad u changes direction between
# iterations; a larger gradient regularization smooths that ridge.
GRAD_REG_FALLBACK = (1e-2, 3e-2, 1e-1)


def solve_eikonal_sample(mesh: fem.Mesh, cfg: DatasetConfig, f) -> tuple[np.ndarray, float]:
    """Eikonal solve; on non-convergence retry with the fallback regularizations. Returns (U, grad_reg used)."""
    pc = cfg.picard
    regs = [pc["grad_reg"]] + [g for g in GRAD_REG_FALLBACK if g > pc["grad_reg"]]
    for i, reg in enumerate(regs):
        try:
            res = fem.solve_eikonal_picard(mesh, f, pc["diffusion"], reg, pc["tol"], pc["max_iter"],
                                           pc["damping"], cfg.dirichlet, cfg.beta_scale)
            return res.U, reg
        except ConvergenceError:
            if i == len(regs) - 1:
                raise
            log.info("Picard did not converge at grad_reg=%g; retrying with %g", reg, regs[i + 1])


def solve_sample(mesh: fem.Mesh, cfg: DatasetConfig, f, theta=None, eta=None) -> np.ndarray:
    """Nodal solution for one data triple (eta given at the Gamma_eta nodes)."""
    if cfg.pde == "eikonal":
        return solve_eikonal_sample(mesh, cfg, f)[0]
    coeffs = fem.project_data(mesh, f, theta, eta)
    system = fem.assemble_heat(mesh, coeffs.Theta, cfg.dirichlet, cfg.beta_scale)
    return fem.solve_linear(system, coeffs.F, coeffs.N)


def make_splits(J: int, test_fraction: float, val_fraction: float, seed: int):
    """Disjoint sorted (train, val, test) index arrays; val is carved from the train+val pool."""
    perm = grf.rng_for(seed, grf.stream_id("split"), 0).permutation(J)
    n_test = int(round(test_fraction * J))
    test, pool = perm[:n_test], perm[n_test:]
    n_val = int(round(val_fraction * len(pool)))
    val, train = pool[:n_val], pool[n_val:]
    return tuple(np.sort(a).astype(np.int64) for a in (train, val, test))


def build_dataset(config, overrides: dict | None = None) -> OperatorDataset:
    """Generate a dataset. ``overrides`` may inject nodal data for chosen samples:
    ``{j: {"f": ..., "theta": ..., "eta": ...}}`` (used for controlled probes)."""
    cfg = config if isinstance(config, DatasetConfig) else DatasetConfig.from_dict(config)
    mesh = fem.build_unit_square_mesh(cfg.n_per_side, cfg.gamma_eta)
    layout = make_sensor_layout(cfg.sensors["kind"], int(cfg.sensors["k"]), int(cfg.sensors.get("k_eta", 0)),
                                cfg.outputs, cfg.seed, mesh)
    f, th, eta, factors = _realizations(cfg, mesh)
    for j, data in (overrides or {}).items():
        f[j] = data.get("f", f[j])
        if th.shape[1]:
            th[j] = data.get("theta", th[j])
        if eta.shape[1]:
            eta[j] = data.get("eta", eta[j])

    J, q = cfg.J, mesh.q
    U = np.empty((J, q))
    C = None if cfg.pde == "eikonal" else _bound_constant(mesh, cfg)
    regularized = {}
    for j in range(J):
        try:
            if cfg.pde == "eikonal":
                u, reg = solve_eikonal_sample(mesh, cfg, f[j])
                if reg != cfg.picard["grad_reg"]:
                    regularized[str(j)] = reg
            else:
                u = solve_sample(mesh, cfg, f[j], th[j] if th.shape[1] else None, eta[j] if eta.shape[1] else None)
        except (SingularMatrixError, ConvergenceError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"solve failed for sample {j}: {exc}", sample_index=j) from exc
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite solution for sample {j}", sample_index=j)
        if C is not None:
            scale = (np.abs(f[j]).max() + (np.abs(eta[j]).max() if eta.shape[1] else 0.0)) / th[j].min()
            if np.abs(u).max() > 100.0 * C * scale + 1e-12:
                raise SolverError(f"solution of sample {j} violates the magnitude guard", sample_index=j)
        U[j] = u
        if j and j % 500 == 0:
            log.info("solved %d / %d samples", j, J)

    eta_full = np.zeros((J, q))
    if eta.shape[1]:
        eta_full[:, mesh.eta_nodes] = eta
    F_hat, Th_hat, N_hat = sense_inputs(mesh, layout, f, th if th.shape[1] else None,
                                        eta_full if layout.k_eta else None)
    labels = mesh.evaluate(U, layout.output_nodes)
    if not np.all(np.isfinite(labels)):
        raise SolverError("non-finite label")
    train, val, test = make_splits(J, cfg.test_fraction, cfg.val_fraction, cfg.seed)

    input_order = {"heat2": ["f", "theta"], "heat3": ["f", "theta", "eta"], "eikonal": ["f"]}[cfg.pde]
    arrays = {
        "sensors_interior": layout.interior_sensors,
        "sensors_boundary": layout.boundary_sensors,
        "output_nodes": layout.output_nodes,
        "output_weights": layout.output_weights,
        "inputs_f": F_hat,
        "inputs_theta": Th_hat if Th_hat is not None else np.zeros((J, 0)),
        "inputs_eta": N_hat if N_hat is not None else np.zeros((J, 0)),
        "labels": labels,
        "nodal_f": f,
        "nodal_theta": th,
        "nodal_eta": eta,
        "nodal_u": U,
        "split_train": train,
        "split_val": val,
        "split_test": test,
        "sample_ids": np.arange(J, dtype=np.int64),
        "factor_indices": factors,
    }
    metadata = {
        "format": "VMDS",
        "config": cfg.to_dict(),
        "generator": grf.GENERATOR_NAME,
        "seed": cfg.seed,
        "mesh": mesh.describe(),
        "input_order": input_order,
        "ordering": {"mode": "nested" if cfg.factored else "generation"},
        "label_hash": label_hash(labels),
        "solver": {"linear": "dense cholesky/lu", "rtol": 1e-10, "picard": cfg.picard},
        "injected": sorted(int(j) for j in (overrides or {})),
    }
    if cfg.pde == "eikonal":
        # samples solved with a raised gradient regularization, keyed by generation index
        metadata["solver"]["grad_reg_fallback"] = regularized
    return OperatorDataset(metadata, arrays)


_PER_SAMPLE = ("inputs_f", "inputs_theta", "inputs_eta", "labels", "nodal_f", "nodal_theta", "nodal_eta",
               "nodal_u", "sample_ids", "factor_indices")


def _permute(ds: OperatorDataset, perm: np.ndarray, ordering: dict) -> OperatorDataset:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    arrays = dict(ds.arrays)
    for name in _PER_SAMPLE:
        arrays[name] = ds.arrays[name][perm]
    for s in ("train", "val", "test"):
        arrays[f"split_{s}"] = np.sort(inv[ds.arrays[f"split_{s}"]]).astype(np.int64)
    meta = copy.deepcopy(ds.metadata)
    meta["ordering"] = ordering
    meta["label_hash"] = label_hash(arrays["labels"])
    return OperatorDataset(meta, arrays)


def order_dataset(ds: OperatorDataset, mode: str) -> OperatorDataset:
    """Reorder samples. ``randomized`` is a seeded permutation; ``nested`` sorts by
    (eta, theta, f) realization index so f varies fastest."""
    if mode == "randomized":
        perm = grf.rng_for(ds.metadata["seed"], grf.stream_id("order"), 0).permutation(ds.J)
        # compose with any previous ordering so the result does not depend on the input order
        perm = np.argsort(ds.arrays["sample_ids"])[perm]
        return _permute(ds, perm, {"mode": "randomized"})
    if mode == "nested":
        if ds.metadata["config"].get("factored") is None:
            raise ConfigError("nested ordering needs a dataset built from factored (f, theta, eta) grids")
        fi = ds.arrays["factor_indices"]
        perm = np.lexsort((fi[:, 0], fi[:, 1], fi[:, 2]))
        return _permute(ds, perm, {"mode": "nested"})
    raise ConfigError(f"unknown ordering mode {mode!r}")


def take_prefix(ds: OperatorDataset, n: int, val_fraction: float | None = None) -> OperatorDataset:
    """First ``n`` samples of the current order, re-split into train/val (no test part)."""
    if not 1 <= n <= ds.J:
        raise ConfigError(f"prefix length must lie in [1, {ds.J}], got {n}")
    vf = ds.metadata["config"]["val_fraction"] if val_fraction is None else val_fraction
    arrays = dict(ds.arrays)
    for name in _PER_SAMPLE:
        arrays[name] = ds.arrays[name][:n]
    train, val, test = make_splits(n, 0.0, vf, ds.metadata["seed"])
    arrays.update(split_train=train, split_val=val, split_test=test)
    meta = copy.deepcopy(ds.metadata)
    meta["ordering"] = {**meta["ordering"], "prefix": n, "prefix_val_fraction": vf}
    meta["label_hash"] = label_hash(arrays["labels"])
    return OperatorDataset(meta, arrays)


def subset(ds: OperatorDataset, idx) -> OperatorDataset:
    """Samples ``idx`` as a standalone dataset whose splits all point at every sample."""
    idx = np.asarray(idx, dtype=np.int64)
    arrays = dict(ds.arrays)
    for name in _PER_SAMPLE:
        arrays[name] = ds.arrays[name][idx]
    every = np.arange(len(idx), dtype=np.int64)
    arrays.update(split_train=every, split_val=every.copy(), split_test=every.copy())
    meta = copy.deepcopy(ds.metadata)
    meta["label_hash"] = label_hash(arrays["labels"])
    return OperatorDataset(meta, arrays)


def regenerate(metadata: dict) -> OperatorDataset:
    """Rebuild a dataset from its stored metadata (configuration, seed and ordering)."""
    if metadata.get("injected"):
        raise ConfigError("datasets with injected samples cannot be regenerated from metadata")
    ds = build_dataset(DatasetConfig.from_dict(metadata["config"]))
    ordering = metadata.get("ordering", {})
    if ordering.get("mode") == "randomized":
        ds = order_dataset(ds, "randomized")
    if "prefix" in ordering:
        ds = take_prefix(ds, ordering["prefix"], ordering.get("prefix_val_fraction"))
    return ds
