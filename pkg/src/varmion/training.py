"""Quadrature-weighted loss, mini-batch Adam training with validation-based selection, and eps_t."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grf
from .datagen import OperatorDataset
from .errors import ConfigError, DivergenceError, MismatchError
from .operator_nets import OperatorModel
from .tensor_nn import Tape, apply_adam
from .tensor_nn import autodiff as ad

log = logging.getLogger(__name__)

EVAL_CHUNK = 256
DIVERGENCE_FACTOR = 1e6

# which dataset recipes each family/input set can consume
_RECIPE_INPUTS = {"heat2": ("f", "theta"), "heat3": ("f", "theta", "eta"), "eikonal": ("f",)}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    val_every: int = 1  # epochs between validation passes
    patience: int = 50  # validation passes without improvement before stopping
    clip: float | None = None  # optional global gradient-norm clip
    lr_schedule: dict | None = None  # {"kind": "step", "every": E, "gamma": g} or {"kind": "exponential", "gamma": g}
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.val_every < 1 or self.patience < 1:
            raise ConfigError("learning rate, batch size, epochs, val_every and patience must be positive")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError("clip threshold must be positive")

    def lr_at(self, epoch: int) -> float:
        s = self.lr_schedule
        if not s:
            return self.lr
        if s["kind"] == "step":
            return self.lr * s["gamma"] ** (epoch // s["every"])
        if s["kind"] == "exponential":
            return self.lr * s["gamma"] ** epoch
        raise ConfigError(f"unknown lr schedule {s['kind']!r}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)  # per epoch, mean Pi over the epoch's batches
    val_loss: list = field(default_factory=list)  # [epoch, loss] per validation pass
    checkpoints: list = field(default_factory=list)  # [epoch, val loss] at each improvement
    selected_epoch: int = -1
    selected_val_loss: float = float("nan")
    epsilon_t: float = float("nan")
    epsilon_t_sample: int = -1
    mean_train_pi: float = float("nan")
    epochs_run: int = 0
    seed: int = 0
    threads: int = 1
    wall_clock: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)


def check_compatible(model: OperatorModel, dataset: OperatorDataset) -> None:
    """Raise MismatchError when the model cannot consume the dataset's inputs."""
    spec = model.spec
    have = tuple(dataset.input_names)
    if tuple(spec.inputs) != have:
        raise MismatchError(f"{spec.name} consumes inputs {spec.inputs}, dataset {dataset.pde} provides {have}")
    for name in have:
        got = dataset.arrays[f"inputs_{name}"].shape[1]
        if got != spec.input_size(name):
            raise MismatchError(f"{spec.name} expects {spec.input_size(name)} sensor values for {name!r}, dataset has {got}")


def _pi_tensor(pred, labels, weights):
    """Per-sample Pi_j = sum_l w_l (u_jl - u_hat_jl)^2 as a (batch,) tensor."""
    return ad.tsum(ad.mul(ad.square(ad.sub(pred, labels)), weights), axis=1)


def per_sample_pi(model: OperatorModel, dataset: OperatorDataset, idx=None) -> np.ndarray:
    """Pi_j for the selected samples with the model in evaluation mode."""
    idx = np.arange(dataset.J) if idx is None else np.asarray(idx)
    w = dataset.output_weights
    pts = dataset.output_nodes
    out = np.empty(len(idx))
    for s in range(0, len(idx), EVAL_CHUNK):
        sel = idx[s:s + EVAL_CHUNK]
        pred = model.predict(dataset.inputs(sel), pts)
        bad = ~np.all(np.isfinite(pred), axis=1)
        if np.any(bad):
            raise FloatingPointError(f"non-finite prediction for sample {int(sel[np.argmax(bad)])}")
        out[s:s + len(sel)] = ((dataset.labels(sel) - pred) ** 2) @ w
    return out


def loss_pi(model: OperatorModel, dataset: OperatorDataset, idx=None) -> float:
    """Pi = mean_j Pi_j over the selected samples."""
    return float(np.mean(per_sample_pi(model, dataset, idx)))


def loss_pi_arrays(pred, labels, weights) -> float:
    """Pi for explicit prediction/label arrays ``(J, L)``."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    bad = ~np.all(np.isfinite(pred), axis=1)
    if np.any(bad):
        raise FloatingPointError(f"non-finite prediction for sample {int(np.argmax(bad))}")
    return float(np.mean(((np.atleast_2d(labels) - pred) ** 2) @ np.asarray(weights)))


def epsilon_t(model: OperatorModel, dataset: OperatorDataset, idx=None) -> tuple[float, int]:
    """Smallest eps_t with Pi_j < eps_t on every training sample: (max_j Pi_j, argmax sample index)."""
    idx = dataset.split("train") if idx is None else np.asarray(idx)
    pis = per_sample_pi(model, dataset, idx)
    a = int(np.argmax(pis))
    return float(pis[a]), int(idx[a])


def _clip(store, threshold: float) -> None:
    total = np.sqrt(sum(float(np.sum(t.grad**2)) for t in store.params.values() if t.grad is not None))
    if total > threshold:
        for t in store.params.values():
            if t.grad is not None:
                t.grad = t.grad * (threshold / total)


def train(model: OperatorModel, dataset: OperatorDataset, config: TrainConfig | None = None,
          callback=None) -> tuple[OperatorModel, TrainReport]:
    """Mini-batch Adam on Pi. Keeps the parameters with the lowest validation loss.

    ``callback(epoch, model, report)`` runs after every epoch; returning True stops training.
    """
    cfg = config or TrainConfig()
    check_compatible(model, dataset)
    t0 = time.perf_counter()
    train_idx = dataset.split("train")
    val_idx = dataset.split("val")
    if len(train_idx) == 0:
        raise ConfigError("training split is empty")
    sel_idx = val_idx if len(val_idx) else train_idx
    pts = dataset.output_nodes
    w = dataset.output_weights
    store = model.store
    report = TrainReport(seed=cfg.seed, threads=cfg.threads)

    initial = loss_pi(model, dataset, train_idx)
    best = loss_pi(model, dataset, sel_idx)
    best_snap = store.snapshot()
    report.checkpoints.append([0, best])
    report.val_loss.append([0, best])
    report.selected_epoch, report.selected_val_loss = 0, best
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = grf.rng_for(cfg.seed, grf.stream_id("batches"), epoch).permutation(train_idx)
        lr = cfg.lr_at(epoch - 1)
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s:s + cfg.batch_size]
            store.zero_grad()
            with Tape() as tape:
                pred = model.forward(dataset.inputs(sel), pts, training=True)
                loss = ad.mean(_pi_tensor(pred, dataset.labels(sel), w))
                tape.backward(loss)
            value = float(loss.data)
            if not np.isfinite(value) or value > DIVERGENCE_FACTOR * max(initial, 1e-300):
                raise DivergenceError(f"training diverged at epoch {epoch}: loss {value:.3e} vs initial {initial:.3e}")
            if cfg.clip is not None:
                _clip(store, cfg.clip)
            apply_adam(store, lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
            total += value * len(sel)
        report.train_loss.append(total / len(order))
        report.epochs_run = epoch
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            v = loss_pi(model, dataset, sel_idx)
            report.val_loss.append([epoch, v])
            if v < best:
                best, best_snap, stale = v, store.snapshot(), 0
                report.checkpoints.append([epoch, v])
                report.selected_epoch, report.selected_val_loss = epoch, v
            else:
                stale += 1
            log.debug("epoch %d train %.4e val %.4e", epoch, report.train_loss[-1], v)
            if stale >= cfg.patience:
                log.info("early stop at epoch %d", epoch)
                break
        if callback is not None and callback(epoch, model, report):
            break
    store.restore(best_snap)
    pis = per_sample_pi(model, dataset, train_idx)
    a = int(np.argmax(pis))
    report.epsilon_t, report.epsilon_t_sample = float(pis[a]), int(train_idx[a])
    report.mean_train_pi = float(pis.mean())
    report.wall_clock = time.perf_counter() - t0
    return model, report


# checkpoints -------------------------------------------------------------------------------

def checkpoint_bytes(model: OperatorModel, report: TrainReport | dict | None = None) -> bytes:
    """VMCK encoding: architecture JSON, parameters plus BN statistics, Adam state, report JSON."""
    from . import io as vio

    store = model.store
    arch = {**model.spec.to_dict(), "seed": model.seed}
    params = {**store.arrays(), **store.buffers}
    opt = {}
    for name in store.params:
        if name in store.adam_m:
            opt[f"m.{name}"] = store.adam_m[name]
            opt[f"v.{name}"] = store.adam_v[name]
    opt["step"] = np.array(store.step, dtype=np.int64)
    rep = report.to_dict() if isinstance(report, TrainReport) else (report or {})
    return vio.encode_checkpoint(arch, params, opt, rep)


def model_from_checkpoint_bytes(data: bytes) -> tuple[OperatorModel, dict]:
    from . import io as vio
    from .errors import FormatError
    from .operator_nets import ArchitectureSpec, build_model

    arch, params, opt, report = vio.decode_checkpoint(data)
    arch = dict(arch)
    seed = arch.pop("seed", 0)
    model = build_model(ArchitectureSpec.from_dict(arch), seed)
    store = model.store
    expected = set(store.params) | set(store.buffers)
    if set(params) != expected:
        raise FormatError(f"checkpoint parameters do not match the architecture: "
                          f"missing {sorted(expected - set(params))}, extra {sorted(set(params) - expected)}")
    for name, arr in params.items():
        target = store.params[name].data if name in store.params else store.buffers[name]
        if arr.shape != target.shape:
            raise FormatError(f"parameter {name!r} has shape {arr.shape}, expected {target.shape}")
        if name in store.params:
            store.params[name].data = arr.copy()
        else:
            store.buffers[name] = arr.copy()
    # layers look buffers up by name on every call, so replacing the arrays is enough
    store.step = int(opt.get("step", np.array(0)))
    for key, arr in opt.items():
        if key.startswith("m."):
            store.adam_m[key[2:]] = arr.copy()
        elif key.startswith("v."):
            store.adam_v[key[2:]] = arr.copy()
    return model, report


def save_checkpoint(path, model: OperatorModel, report=None) -> None:
    from . import io as vio

    vio.write_bytes(path, checkpoint_bytes(model, report))


def load_checkpoint(path) -> tuple[OperatorModel, dict]:
    from . import io as vio

    return model_from_checkpoint_bytes(vio.read_bytes(path))
