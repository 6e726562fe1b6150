"""
Training on a small heat dataset
================================

A few minutes on one core: generate 400 samples on an 8x8 mesh, train a
VarMiON and a DeepONet with matched parameter counts, compare test errors.
"""
import numpy as np

from varmion import datagen as dg
from varmion import diagnostics as di
from varmion import operator_nets as on
from varmion import training as tr

ds = dg.build_dataset({"pde": "heat2", "n_per_side": 8, "J": 400, "seed": 0})
print(ds.J, "samples,", ds.L, "output points, splits",
      {s: len(ds.split(s)) for s in ("train", "val", "test")})

cfg = tr.TrainConfig(lr=1e-3, batch_size=16, epochs=15, seed=0)
for name in ("A3_varmion", "A3_deeponet"):
    model = on.build_model(on.get_architecture(name), seed=0)
    model, rep = tr.train(model, ds, cfg)
    stats = di.relative_l2_errors(model, ds)
    print(f"{name:12s} test error {stats.mean:.2%}  eps_t {rep.epsilon_t:.2e}  "
          f"mean Pi {rep.mean_train_pi:.2e}  ({rep.wall_clock:.0f} s)")

# the histogram that eval writes to report.json
for lo, hi, dens in di.export_error_histogram(stats.errors, 5):
    count = round(dens * (hi - lo) * stats.count)
    print(f"  [{lo:.3f}, {hi:.3f})  {'#' * count}")
