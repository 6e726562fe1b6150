"""Measured counterparts of the error-analysis quantities.

Every constant reported here is a finite-sample estimate (a max or min over the
draws actually made) and carries the number of samples it was computed from.
L2 norms of nodal fields use the exact P1 mass matrix: ||v|| = sqrt(v^T M v).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import grf
from . import mesh_fem as fem
from .datagen import DatasetConfig, OperatorDataset, sense_inputs, solve_sample
from .errors import FrameError, ShapeError
from .tensor_nn.spectral import spectral_norm

# test errors ---------------------------------------------------------------------------------


@dataclass
class ErrorStats:
    errors: list  # relative L2 error per included sample
    sample_ids: list
    excluded: list  # samples whose reference norm is zero
    mean: float
    std: float
    quadrature: str

    @property
    def count(self) -> int:
        return len(self.errors)

    def to_dict(self) -> dict:
        return asdict(self) | {"count": self.count}


def _stats(err, ids, excluded, quadrature) -> ErrorStats:
    err = np.asarray(err, dtype=np.float64)
    mean = float(err.mean()) if len(err) else float("nan")
    std = float(err.std()) if len(err) else float("nan")
    return ErrorStats([float(e) for e in err], [int(i) for i in ids], [int(i) for i in excluded], mean, std, quadrature)


def relative_errors(pred, ref, weights=None, mass=None, ids=None, quadrature="output_nodes") -> ErrorStats:
    """Per-row ||ref - pred|| / ||ref|| with either quadrature weights or a mass matrix."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    ids = np.arange(len(ref)) if ids is None else np.asarray(ids)
    if mass is not None:
        num, den = fem.l2_norm(mass, ref - pred), fem.l2_norm(mass, ref)
    else:
        w = np.full(ref.shape[1], 1.0 / ref.shape[1]) if weights is None else np.asarray(weights)
        num, den = np.sqrt(((ref - pred) ** 2) @ w), np.sqrt((ref**2) @ w)
    ok = den > 0
    return _stats(num[ok] / den[ok], ids[ok], ids[~ok], quadrature)


def relative_l2_errors(model, dataset: OperatorDataset, idx=None, quadrature: str = "output_nodes",
                       chunk: int = 256) -> ErrorStats:
    """Relative L2 test errors per sample.

    ``output_nodes`` uses the dataset's Monte-Carlo output nodes and weights;
    ``dense_grid`` evaluates at every mesh node and uses the P1 mass-weighted norm.
    """
    idx = dataset.split("test") if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("empty sample selection")
    if quadrature == "output_nodes":
        pts, ref = dataset.output_nodes, dataset.labels(idx)
    elif quadrature == "dense_grid":
        mesh = dataset.mesh
        pts, ref = mesh.nodes, dataset["nodal_u"][idx]
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    pred = np.concatenate([model.predict(dataset.inputs(idx[s:s + chunk]), pts) for s in range(0, len(idx), chunk)])
    if quadrature == "dense_grid":
        return relative_errors(pred, ref, mass=fem.assemble_mass(mesh), ids=idx, quadrature=quadrature)
    return relative_errors(pred, ref, weights=dataset.output_weights, ids=idx, quadrature=quadrature)


def export_error_histogram(raw_errors, bin_count: int = 20) -> list:
    """Density-normalized histogram rows ``(bin_left, bin_right, density)``."""
    e = np.asarray(raw_errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no errors to bin")
    density, edges = np.histogram(e, bins=bin_count, density=True)
    return [(float(edges[i]), float(edges[i + 1]), float(density[i])) for i in range(bin_count)]


# Lipschitz constant of D --------------------------------------------------------------------


@dataclass
class LipschitzEstimate:
    value: float  # max ratio over the pairs used; a lower bound on L_D
    pairs_used: int
    skipped: int  # coincident pairs
    converged: bool


def _d_function(model):
    if callable(model) and not hasattr(model, "d_matrix"):
        return model
    return lambda th: model.d_matrix(th).data


def sample_pairs(n: int, count: int, seed: int) -> np.ndarray:
    """First ``count`` pairs of a seeded permutation of all i < j pairs (so smaller counts are prefixes)."""
    i, j = np.triu_indices(n, k=1)
    perm = grf.rng_for(seed, grf.stream_id("pairs"), 0).permutation(len(i))[:count]
    return np.stack([i[perm], j[perm]], axis=1)


def estimate_lipschitz_D(model, theta_samples, pair_count: int = 100, seed: int = 0) -> LipschitzEstimate:
    """max over pairs of ||D(a) - D(b)||_2 / ||a - b||_2.

    ``model`` is a varmion_linear model or any callable mapping ``(n, k)`` inputs to ``(n, p, p)``.
    """
    th = np.atleast_2d(np.asarray(theta_samples, dtype=np.float64))
    if len(th) < 2:
        raise ValueError("need at least two theta samples")
    D = _d_function(model)(th)
    best, used, skipped, conv = 0.0, 0, 0, True
    for a, b in sample_pairs(len(th), pair_count, seed):
        gap = np.linalg.norm(th[a] - th[b])
        if gap == 0.0:
            skipped += 1
            continue
        s = spectral_norm(D[a] - D[b])
        conv &= s.converged
        best = max(best, s.value / gap)
        used += 1
    return LipschitzEstimate(best, used, skipped, bool(conv))


# stability probes ----------------------------------------------------------------------------


class FemEvaluator:
    """Discrete solution operator with L2 input and output norms."""

    def __init__(self, mesh: fem.Mesh, config: DatasetConfig):
        self.mesh, self.cfg = mesh, config
        self.M = fem.assemble_mass(mesh)
        eta = mesh.eta_nodes
        self.M_eta = fem.assemble_boundary_mass(mesh, mesh.gamma_eta_spec)[np.ix_(eta, eta)]

    def output(self, data: dict) -> np.ndarray:
        return solve_sample(self.mesh, self.cfg, data["f"], data.get("theta"), data.get("eta"))

    def input_distance(self, a: dict, b: dict) -> float:
        d = 0.0
        for key, M in (("f", self.M), ("theta", self.M), ("eta", self.M_eta)):
            if a.get(key) is not None and len(a[key]):
                d += float(fem.l2_norm(M, np.asarray(a[key]) - np.asarray(b[key])))
        return d

    def output_distance(self, u, v) -> float:
        return float(fem.l2_norm(self.M, np.asarray(u) - np.asarray(v)))


class NetworkEvaluator:
    """Trained operator network acting on nodal data through the dataset's sensors.

    Input distance is the sum of Euclidean norms of the sensed-vector changes; the
    output is evaluated at the mesh nodes and measured with the mass matrix.
    """

    def __init__(self, model, dataset: OperatorDataset):
        self.model = model
        self.mesh = dataset.mesh
        self.M = fem.assemble_mass(self.mesh)
        self.sensors_interior = dataset["sensors_interior"]
        self.sensors_boundary = dataset["sensors_boundary"]

    def sensed(self, data: dict) -> dict:
        eta_full = None
        if data.get("eta") is not None and len(self.sensors_boundary):
            eta_full = np.zeros(self.mesh.q)
            eta_full[self.mesh.eta_nodes] = data["eta"]
        layout = type("L", (), {"interior_sensors": self.sensors_interior, "boundary_sensors": self.sensors_boundary})
        F, T, N = sense_inputs(self.mesh, layout, data["f"], data.get("theta"), eta_full)
        out = {"f": F[None, :]}
        if T is not None:
            out["theta"] = T[None, :]
        if N is not None:
            out["eta"] = N[None, :]
        return {k: v for k, v in out.items() if k in self.model.spec.inputs}

    def output(self, data: dict) -> np.ndarray:
        return self.model.predict(self.sensed(data), self.mesh.nodes)[0]

    def input_distance(self, a: dict, b: dict) -> float:
        sa, sb = self.sensed(a), self.sensed(b)
        return float(sum(np.linalg.norm(sa[k] - sb[k]) for k in sa))

    def output_distance(self, u, v) -> float:
        return float(fem.l2_norm(self.M, np.asarray(u) - np.asarray(v)))


def stability_probe(evaluator, base: dict, perturbations: list) -> list:
    """Ratio ||S(base + delta) - S(base)|| / input distance for each perturbation ``delta``.

    ``base`` and each ``delta`` hold nodal arrays under ``f``, ``theta``, ``eta``
    (eta at the Gamma_eta nodes); missing keys in ``delta`` mean no change.
    """
    u0 = evaluator.output(base)
    ratios = []
    for i, delta in enumerate(perturbations):
        pert = {k: (None if v is None else np.asarray(v) + np.asarray(delta.get(k, 0.0))) for k, v in base.items()}
        if pert.get("theta") is not None and np.any(pert["theta"] <= 0):
            raise ValueError(f"perturbation {i} makes theta nonpositive")
        dist = evaluator.input_distance(pert, base)
        if dist == 0.0:
            raise ValueError(f"perturbation {i} leaves every input unchanged")
        ratios.append(evaluator.output_distance(evaluator.output(pert), u0) / dist)
    return ratios


@dataclass
class StabilityBound:
    norm_A: float
    norm_A_tilde: float
    trunk_l2: float
    max_norm_D: float
    samples: int

    @property
    def value(self) -> float:
        """Bound on ||du_hat|| / ||dF_hat|| (+ ||dN_hat||) when Theta is held fixed."""
        return self.trunk_l2 * self.max_norm_D * max(self.norm_A, self.norm_A_tilde)


def stability_bound(model, theta_samples, mesh: fem.Mesh) -> StabilityBound:
    """Assemble C_tau * C_D * C_A from measured factors of a varmion_linear model."""
    store = model.store
    norm_A = spectral_norm(store["A.0.weight"].data).value
    norm_At = spectral_norm(store["A_tilde.0.weight"].data).value if "A_tilde.0.weight" in store.params else 0.0
    tau = model.trunk_values(mesh.nodes).data  # (q, p)
    M = fem.assemble_mass(mesh)
    trunk_l2 = float(np.sqrt(np.sum(fem.l2_norm(M, tau.T) ** 2)))
    D = model.d_matrix(np.atleast_2d(theta_samples)).data
    max_D = max(spectral_norm(d).value for d in D)
    return StabilityBound(norm_A, norm_At, trunk_l2, max_D, len(D))


# covering radius ----------------------------------------------------------------------------------


@dataclass
class CoveringResult:
    radius_max: float  # min_j max of the three component distances
    index_max: int
    radius_sum: float  # min_j sum of the component distances
    index_sum: int


def covering_radius(dataset: OperatorDataset, probes: list, idx=None) -> list:
    """Distance from each probe (nodal f, theta, eta) to the nearest training triple."""
    idx = dataset.split("train") if idx is None else np.asarray(idx)
    mesh = dataset.mesh
    M = fem.assemble_mass(mesh)
    eta_nodes = mesh.eta_nodes
    M_eta = fem.assemble_boundary_mass(mesh, mesh.gamma_eta_spec)[np.ix_(eta_nodes, eta_nodes)]
    parts = [("f", "nodal_f", M), ("theta", "nodal_theta", M), ("eta", "nodal_eta", M_eta)]
    out = []
    for probe in probes:
        comps = []
        for key, arr, mat in parts:
            train = dataset[arr][idx]
            if train.shape[1] == 0 or probe.get(key) is None:
                continue
            d = train - np.asarray(probe[key], dtype=np.float64)
            comps.append(np.sqrt(np.maximum(np.einsum("jq,qr,jr->j", d, mat, d), 0.0)))
        comps = np.stack(comps)
        agg_max, agg_sum = comps.max(axis=0), comps.sum(axis=0)
        a, b = int(np.argmin(agg_max)), int(np.argmin(agg_sum))  # argmin keeps the lowest index on ties
        out.append(CoveringResult(float(agg_max[a]), int(idx[a]), float(agg_sum[b]), int(idx[b])))
    return out


def probes_from_dataset(dataset: OperatorDataset, idx) -> list:
    return [{"f": dataset["nodal_f"][j], "theta": dataset["nodal_theta"][j], "eta": dataset["nodal_eta"][j]}
            for j in np.asarray(idx)]


# quadrature convergence -------------------------------------------------------------------------


@dataclass
class QuadratureResult:
    node_counts: list
    mean_abs_err: list
    slope: float  # log-log fit of mean_abs_err against L; nan if some error is exactly zero
    kind: str
    trials: int


def sin_product(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


SIN_PRODUCT_SQ_INTEGRAL = 0.25


def exp_sum(x):
    return np.exp(x[:, 0] + x[:, 1])


EXP_SUM_SQ_INTEGRAL = ((np.e**2 - 1.0) / 2.0) ** 2


def quadrature_convergence(g, exact: float, node_counts, trials: int = 50, seed: int = 0,
                           kind: str = "monte_carlo") -> QuadratureResult:
    """Mean |sum_l w_l g(x_l)^2 - int g^2| per node count, and the fitted log-log slope.

    ``monte_carlo`` draws uniform nodes with w = 1/L (``trials`` repetitions);
    ``uniform`` uses the sqrt(L) x sqrt(L) cell-center lattice (deterministic).
    """
    Ls = [int(n) for n in node_counts]
    if len(set(Ls)) < 3:
        raise ValueError("need at least three distinct node counts for a slope fit")
    errs = []
    for L in Ls:
        if kind == "monte_carlo":
            e = []
            for t in range(trials):
                x = grf.rng_for(seed, L, t).uniform(size=(L, 2))
                e.append(abs(np.mean(g(x) ** 2) - exact))
            errs.append(float(np.mean(e)))
        elif kind == "uniform":
            side = int(round(np.sqrt(L)))
            if side * side != L:
                raise ValueError(f"uniform nodes need perfect-square counts, got {L}")
            c = (np.arange(side) + 0.5) / side
            X, Y = np.meshgrid(c, c)
            errs.append(float(abs(np.mean(g(np.stack([X.ravel(), Y.ravel()], 1)) ** 2) - exact)))
        else:
            raise ValueError(f"unknown node kind {kind!r}")
    e = np.asarray(errs)
    slope = float(np.polyfit(np.log(Ls), np.log(e), 1)[0]) if np.all(e > 0) else float("nan")
    return QuadratureResult(Ls, errs, slope, kind, trials if kind == "monte_carlo" else 1)


# structural estimate ---------------------------------------------------------------------------------


@dataclass
class StructuralRow:
    theta_id: int
    dist_spectral: float
    dist_reduced: float


def structural_distance(Kinv, V, T, D, A, Vhat, M, weights) -> tuple[float, float]:
    """||K^-1 - Q||_2 and ||W_1/2 V (K^-1 - Q) M||_2 with Q = V^-1 T D A Vhat M^-1."""
    QM = np.linalg.solve(V, T @ D @ A @ Vhat)  # Q M
    Q = np.linalg.solve(M.T, QM.T).T
    diff = Kinv - Q
    W = np.sqrt(np.asarray(weights))[:, None]
    return spectral_norm(diff).value, spectral_norm(W * (V @ (Kinv @ M - QM))).value


def check_frame(dataset: OperatorDataset, mesh: fem.Mesh | None = None) -> np.ndarray:
    """Verify the structural-estimate frame and return V (phi_j at the output nodes)."""
    mesh = mesh or dataset.mesh
    if dataset.pde != "heat2" and np.any(dataset["nodal_eta"]):
        raise FrameError("structural estimate needs zero flux data (eta = 0)")
    if dataset.L != mesh.q:
        raise FrameError(f"structural estimate needs L = q output nodes, got L={dataset.L}, q={mesh.q}")
    V = mesh.interpolation_matrix(dataset.output_nodes)
    if np.linalg.matrix_rank(V) < mesh.q:
        raise FrameError("output-node interpolation matrix V is singular")
    return V


def structural_estimate(model, dataset: OperatorDataset, idx=None) -> list:
    """Per theta sample, the distance between K^-1(theta^h) and the network's Q(Theta_hat)."""
    if model.family != "varmion_linear":
        raise ShapeError("structural estimate needs a varmion_linear model")
    mesh = dataset.mesh
    V = check_frame(dataset, mesh)
    idx = np.arange(dataset.J) if idx is None else np.asarray(idx)
    cfg = DatasetConfig.from_dict(dataset.metadata["config"])
    M = fem.assemble_mass(mesh)
    Vhat = mesh.interpolation_matrix(dataset["sensors_interior"])
    T = model.trunk_values(dataset.output_nodes).data
    A = model.store["A.0.weight"].data
    D = model.d_matrix(dataset["inputs_theta"][idx]).data
    rows = []
    for j, Dj in zip(idx, D):
        system = fem.assemble_heat(mesh, dataset["nodal_theta"][j], cfg.dirichlet, cfg.beta_scale)
        Kinv = fem.inverse_stiffness(system)
        s, r = structural_distance(Kinv, V, T, Dj, A, Vhat, M, dataset.output_weights)
        rows.append(StructuralRow(int(j), s, r))
    return rows


# output ------------------------------------------------------------------------------------------


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


@dataclass
class DiagnosticsReport:
    errors: dict | None = None
    epsilon_t: dict | None = None
    lipschitz_D: dict | None = None
    stability: dict | None = None
    covering: dict | None = None
    quadrature: dict | None = None
    structural: dict | None = None
    notes: list = field(default_factory=lambda: ["all constants are finite-sample estimates"])

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}
