"""Command-line workflow: ``generate``, ``train``, ``eval`` and ``diagnose``.

Exit codes: 0 ok, 2 configuration or input error, 3 solver failure, 4 model/dataset
mismatch, 5 training divergence, 6 structural-frame violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import datagen, diagnostics
from .errors import ConfigError, DivergenceError, FormatError, FrameError, MismatchError, SolverError

log = logging.getLogger("varmion")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISMATCH, EXIT_DIVERGENCE, EXIT_FRAME = 0, 2, 3, 4, 5, 6


def load_schema() -> dict:
    return json.loads(resources.files("varmion").joinpath("configs/experiment.schema.json").read_text())


def load_config(path) -> dict:
    """Read and validate an experiment config; every failure becomes a ConfigError."""
    import jsonschema

    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config violates schema at {where}: {exc.message}") from None
    return cfg


def _dataset_config(cfg: dict, seed: int | None) -> datagen.DatasetConfig:
    d = dict(cfg["dataset"])
    if seed is not None:
        d["seed"] = seed
    elif "seed" not in d and "seed" in cfg:
        d["seed"] = cfg["seed"]
    return datagen.DatasetConfig.from_dict(d)


def _load_dataset(path) -> datagen.OperatorDataset:
    if path is None:
        raise ConfigError("--dataset is required")
    try:
        return datagen.load_dataset(path)
    except FileNotFoundError:
        raise ConfigError(f"dataset not found: {path}") from None


def _load_checkpoint(path):
    from .training import load_checkpoint

    if path is None:
        raise ConfigError("--checkpoint is required")
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None


def _out_dir(args, cfg=None) -> Path:
    out = Path(args.out) if args.out else Path((cfg or {}).get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# subcommands ---------------------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    dcfg = _dataset_config(cfg, args.seed)
    t0 = time.perf_counter()
    ds = datagen.build_dataset(dcfg)
    order = cfg.get("ordering", {})
    if order.get("mode") in ("randomized", "nested"):
        ds = datagen.order_dataset(ds, order["mode"])
    if "prefix" in order:
        ds = datagen.take_prefix(ds, order["prefix"])
    ds.metadata["threads"] = args.threads
    path = Path(args.out) if args.out and args.out.endswith(".vmds") else _out_dir(args, cfg) / "dataset.vmds"
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.save(path)
    print(f"samples {ds.J}  labels {ds.J * ds.L}  label_hash {ds.label_hash()}  "
          f"wall_clock {time.perf_counter() - t0:.2f}s  -> {path}")
    return EXIT_OK


def _architecture(name: str, ds: datagen.OperatorDataset):
    from .operator_nets import get_architecture

    k = ds["inputs_f"].shape[1] if name.startswith("A5") else None
    return get_architecture(name, k)


def cmd_train(args) -> int:
    from .operator_nets import build_model
    from .training import TrainConfig, check_compatible, save_checkpoint, train

    cfg = load_config(args.config)
    ds = _load_dataset(args.dataset)
    names = cfg.get("architectures")
    if not names:
        raise ConfigError("config lists no architectures to train")
    tcfg = dict(cfg.get("train", {}))
    if args.seed is not None:
        tcfg["seed"] = args.seed
    tcfg["threads"] = args.threads
    tc = TrainConfig(**tcfg)
    out = _out_dir(args, cfg)
    if args.checkpoint and len(names) > 1:
        raise ConfigError("--checkpoint names one file; the config lists several architectures")
    for name in names:
        try:
            spec = _architecture(name, ds)
        except Exception as exc:  # sensor-count mismatch when building the canonical spec
            raise MismatchError(str(exc)) from None
        model = build_model(spec, tc.seed)
        check_compatible(model, ds)
        model, report = train(model, ds, tc)
        ck = Path(args.checkpoint) if args.checkpoint else out / f"{name}.vmck"
        save_checkpoint(ck, model, report)
        rep = {"architecture": name, "checkpoint": ck.name, "dataset_label_hash": ds.label_hash(),
               **report.to_dict()}
        diagnostics.write_json(ck.with_suffix(".report.json"), rep)
        diagnostics.write_json(ck.with_suffix(".timing.json"), {"wall_clock": report.wall_clock, "threads": args.threads})
        print(f"{name}: epochs {report.epochs_run}  selected {report.selected_epoch}  "
              f"val {report.selected_val_loss:.4e}  eps_t {report.epsilon_t:.4e}  -> {ck}")
    return EXIT_OK


def _compatible(model, ds):
    from .training import check_compatible

    check_compatible(model, ds)


def cmd_eval(args) -> int:
    from .training import epsilon_t

    model, report = _load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    _compatible(model, ds)
    out = _out_dir(args)
    bins = args.bins
    idx = np.arange(ds.J) if args.split == "all" else ds.split(args.split)
    if len(idx) == 0:
        raise ConfigError(f"dataset has an empty {args.split!r} split; evaluate a held-out dataset with --split all")
    stats = diagnostics.relative_l2_errors(model, ds, idx, quadrature="output_nodes")
    dense = diagnostics.relative_l2_errors(model, ds, idx, quadrature="dense_grid")
    diagnostics.write_csv(out / "errors.csv", ["sample_id", "rel_l2"], zip(stats.sample_ids, stats.errors))
    hist = diagnostics.export_error_histogram(stats.errors, bins)
    diagnostics.write_csv(out / "histogram.csv", ["bin_left", "bin_right", "density"], hist)
    eps, arg = epsilon_t(model, ds)
    rep = {
        "architecture": model.spec.name,
        "errors": {**stats.to_dict(), "histogram": hist},
        "errors_dense_grid": {"mean": dense.mean, "std": dense.std, "count": dense.count},
        "epsilon_t": {"value": eps, "sample": arg, "train_samples": int(len(ds.split("train")))},
        "split": args.split,
        "threads": args.threads,
    }
    diagnostics.write_json(out / "report.json", rep)
    if args.fields:
        mesh = ds.mesh
        for j in idx[: args.fields]:
            pred = model.predict(ds.inputs([j]), mesh.nodes)[0]
            true = ds["nodal_u"][j]
            rows = [(i, x, y, p, t, p - t) for i, ((x, y), p, t) in enumerate(zip(mesh.nodes, pred, true))]
            diagnostics.write_csv(out / f"fields_{int(j)}.csv", ["node", "x", "y", "predicted", "true", "error"], rows)
    print(f"{model.spec.name}: mean relative L2 error {100 * stats.mean:.3f}% +- {100 * stats.std:.3f}% "
          f"over {stats.count} {args.split} samples")
    return EXIT_OK


def _stability_perturbations(mesh, count: int, max_delta: float, seed: int) -> list:
    from .grf import rng_for, stream_id

    rng = rng_for(seed, stream_id("stability"), 0)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    out = []
    for _ in range(count):
        a, b = rng.integers(1, 4, size=2)
        delta = rng.uniform(0.1, 1.0) * max_delta
        out.append({"f": delta * np.sin(a * np.pi * x) * np.sin(b * np.pi * y)})
    return out


def cmd_diagnose(args) -> int:
    from .training import epsilon_t

    cfg = load_config(args.config) if args.config else {"diagnostics": {}}
    dopt = cfg.get("diagnostics", {})
    wants = {k: getattr(args, k) for k in ("covering", "structural", "stability", "lipschitz", "quadrature")}
    if not any(wants.values()):
        wants = dict.fromkeys(wants, True)
        wants["structural"] = False  # needs a dedicated frame dataset; run it explicitly
    out = _out_dir(args, cfg)
    report = diagnostics.DiagnosticsReport()
    seed = args.seed or 0
    model = ds = None
    if any(wants[k] for k in ("covering", "structural", "stability", "lipschitz")):
        ds = _load_dataset(args.dataset)
    if any(wants[k] for k in ("structural", "stability", "lipschitz")):
        model, _ = _load_checkpoint(args.checkpoint)
        _compatible(model, ds)
        eps, arg = epsilon_t(model, ds)
        report.epsilon_t = {"value": eps, "sample": arg, "train_samples": int(len(ds.split("train")))}

    if wants["structural"]:
        rows = diagnostics.structural_estimate(model, ds, np.arange(min(ds.J, dopt.get("structural", {}).get("samples", 20))))
        diagnostics.write_csv(out / "structural.csv", ["theta_id", "dist_spectral", "dist_reduced"],
                              [(r.theta_id, r.dist_spectral, r.dist_reduced) for r in rows])
        d = np.array([r.dist_spectral for r in rows])
        report.structural = {"q": ds.mesh.q, "samples": len(rows), "median": float(np.median(d)), "max": float(d.max())}

    if wants["covering"]:
        copt = dopt.get("covering", {})
        ids = copt.get("probe_ids")
        if ids is None:
            pool = ds.split("test") if len(ds.split("test")) else np.arange(ds.J)
            ids = pool[: copt.get("probes", 10)]
        res = diagnostics.covering_radius(ds, diagnostics.probes_from_dataset(ds, ids))
        diagnostics.write_csv(out / "covering.csv", ["probe_id", "radius_max", "nearest_max", "radius_sum", "nearest_sum"],
                              [(int(i), r.radius_max, r.index_max, r.radius_sum, r.index_sum) for i, r in zip(ids, res)])
        rad = [r.radius_max for r in res]
        report.covering = {"probes": len(res), "train_samples": int(len(ds.split("train"))),
                           "median_radius_max": float(np.median(rad)), "max_radius_max": float(np.max(rad))}

    if wants["lipschitz"]:
        if model.family != "varmion_linear":
            log.info("Lipschitz estimate skipped: %s has no D branch", model.spec.name)
        else:
            lopt = dopt.get("lipschitz", {})
            th = ds["inputs_theta"][: lopt.get("samples", 50)]
            est = diagnostics.estimate_lipschitz_D(model, th, lopt.get("pairs", 200), seed)
            report.lipschitz_D = {"estimate": est.value, "pairs": est.pairs_used, "skipped": est.skipped,
                                  "kind": "lower bound (max over sampled pairs)"}

    if wants["stability"]:
        sopt = dopt.get("stability", {})
        mesh = ds.mesh
        perts = _stability_perturbations(mesh, sopt.get("probes", 100), sopt.get("max_delta", 0.1), seed)
        j0 = int(ds.split("test")[0]) if len(ds.split("test")) else 0
        base = {"f": ds["nodal_f"][j0]}
        if ds["nodal_theta"].shape[1]:
            base["theta"] = ds["nodal_theta"][j0]
        if ds["nodal_eta"].shape[1]:
            base["eta"] = ds["nodal_eta"][j0]
        dcfg = datagen.DatasetConfig.from_dict(ds.metadata["config"])
        r_fem = diagnostics.stability_probe(diagnostics.FemEvaluator(mesh, dcfg), base, perts)
        r_net = diagnostics.stability_probe(diagnostics.NetworkEvaluator(model, ds), base, perts)
        rows = [(i, "fem", r) for i, r in enumerate(r_fem)] + [(i, "network", r) for i, r in enumerate(r_net)]
        diagnostics.write_csv(out / "stability.csv", ["probe_id", "evaluator", "ratio"], rows)
        report.stability = {"probes": len(perts), "base_sample": j0, "max_ratio_fem": max(r_fem),
                            "max_ratio_network": max(r_net)}
        if model.family == "varmion_linear":
            b = diagnostics.stability_bound(model, ds["inputs_theta"][[j0]], mesh)
            report.stability["bound"] = {"value": b.value, "norm_A": b.norm_A, "norm_A_tilde": b.norm_A_tilde,
                                         "trunk_l2": b.trunk_l2, "max_norm_D": b.max_norm_D, "theta_samples": b.samples}

    if wants["quadrature"]:
        qopt = dopt.get("quadrature", {})
        Ls = qopt.get("node_counts", [100, 400, 1600, 6400])
        trials = qopt.get("trials", 50)
        mc = diagnostics.quadrature_convergence(diagnostics.sin_product, diagnostics.SIN_PRODUCT_SQ_INTEGRAL, Ls, trials, seed)
        diagnostics.write_csv(out / "quadrature.csv", ["L", "mean_abs_err"], zip(mc.node_counts, mc.mean_abs_err))
        report.quadrature = {"monte_carlo_slope": mc.slope, "node_counts": Ls, "trials": trials,
                             "integrand": "sin(pi x) sin(pi y)"}
        sq = [L for L in Ls if int(round(L**0.5)) ** 2 == L]
        if len(set(sq)) >= 3:
            uni = diagnostics.quadrature_convergence(diagnostics.exp_sum, diagnostics.EXP_SUM_SQ_INTEGRAL, sq, kind="uniform")
            mc2 = diagnostics.quadrature_convergence(diagnostics.exp_sum, diagnostics.EXP_SUM_SQ_INTEGRAL, sq, trials, seed)
            report.quadrature["comparison"] = {"integrand": "exp(x + y)", "uniform_slope": uni.slope,
                                               "monte_carlo_slope": mc2.slope}

    diagnostics.write_json(out / "report.json", report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True, default=diagnostics._jsonable))
    return EXIT_OK


# entry point ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varmion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output directory (or file for generate/train)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads; recorded in outputs")

    g = sub.add_parser("generate", help="build a dataset (VMDS)")
    g.add_argument("--config", required=True)
    common(g)
    t = sub.add_parser("train", help="train the configured architectures (VMCK)")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset")
    t.add_argument("--checkpoint", help="output checkpoint path when one architecture is configured")
    common(t)
    e = sub.add_parser("eval", help="test errors, histogram and optional field dumps")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--fields", type=int, default=0, metavar="N", help="write nodal fields of the first N evaluated samples")
    e.add_argument("--bins", type=int, default=20)
    e.add_argument("--split", choices=("test", "val", "train", "all"), default="test",
                   help="samples to evaluate; 'all' for a dataset generated as a held-out test set")
    common(e)
    d = sub.add_parser("diagnose", help="error-analysis diagnostics")
    d.add_argument("--checkpoint")
    d.add_argument("--dataset")
    d.add_argument("--config")
    for flag in ("covering", "structural", "stability", "lipschitz", "quadrature"):
        d.add_argument(f"--{flag}", action="store_true")
    common(d)
    return p


_COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "diagnose": cmd_diagnose}


def _setup_logging() -> None:
    level = os.environ.get("VARMION_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits

        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            return _COMMANDS[args.command](args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except MismatchError as exc:
        print(f"mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FrameError as exc:
        print(f"frame violation: {exc}", file=sys.stderr)
        return EXIT_FRAME


if __name__ == "__main__":
    sys.exit(main())
