import numpy as np
import pytest

from varmion import datagen as dg
from varmion import diagnostics, grf
from varmion import io as vio
from varmion import mesh_fem as fem
from varmion.errors import ConfigError, FormatError


def test_heat2_smoke_labels(heat2_smoke):
    ds = heat2_smoke
    assert ds["labels"].shape == (20, ds.L)
    assert np.all(np.isfinite(ds["labels"]))
    assert ds.L == 100 + 4 * (8 - 1)  # random interior points plus non-corner boundary nodes
    np.testing.assert_allclose(ds.output_weights, 1.0 / ds.L)


def test_injected_zero_source_gives_zero_labels():
    cfg = {"pde": "heat2", "n_per_side": 6, "J": 3, "seed": 2}
    q = 49
    ds = dg.build_dataset(cfg, overrides={1: {"f": np.zeros(q)}})
    assert np.abs(ds["labels"][1]).max() < 1e-14
    assert np.abs(ds["labels"][0]).max() > 1e-4
    with pytest.raises(ConfigError):
        dg.regenerate(ds.metadata)


def test_full_recipe_split_sizes():
    cfg = dg.DatasetConfig(pde="heat2")
    assert (cfg.n_per_side, cfg.J) == (32, 10000)
    train, val, test = dg.make_splits(cfg.J, cfg.test_fraction, 0.0, cfg.seed)
    assert (len(train), len(test)) == (9000, 1000)


def test_splits_partition():
    for J, tf, vf in ((100, 0.1, 0.1), (37, 0.2, 0.25), (5, 0.0, 0.0)):
        parts = dg.make_splits(J, tf, vf, seed=4)
        joined = np.concatenate(parts)
        assert sorted(joined.tolist()) == list(range(J))
        assert len(parts[2]) == round(tf * J)


def test_uniform_sensor_lattice():
    mesh = fem.build_unit_square_mesh(8, ["left", "right"])
    lay = dg.make_sensor_layout("uniform_grid", 100, 0, {"recipe": "mesh_nodes"}, 0, mesh)
    xs = np.unique(lay.interior_sensors[:, 0])
    np.testing.assert_allclose(xs, (np.arange(10) + 0.5) / 10)
    assert lay.k == 100 and lay.L == mesh.q
    with pytest.raises(ConfigError):
        dg.make_sensor_layout("uniform_grid", 99, 0, {"recipe": "mesh_nodes"}, 0, mesh)
    four = dg.make_sensor_layout("uniform_grid", 4, 0, {"recipe": "random_points", "count": 4}, 0, mesh)
    np.testing.assert_array_equal(four.output_weights, 0.25)


def test_eikonal_defaults():
    cfg = dg.DatasetConfig(pde="eikonal")
    assert cfg.sensors["k"] == 1024
    assert cfg.outputs == {"recipe": "random_nodes", "count": 140}
    assert cfg.theta is None and cfg.eta is None


def test_sensing_examples():
    mesh = fem.build_unit_square_mesh(4, ["left", "right"])
    lay = dg.make_sensor_layout("uniform_grid", 16, 4, {"recipe": "mesh_nodes"}, 0, mesh)
    F, Th, N = dg.sense_inputs(mesh, lay, np.full(mesh.q, 0.7), np.full(mesh.q, 0.3), np.full(mesh.q, -0.2))
    np.testing.assert_allclose(F, 0.7, atol=1e-14)
    np.testing.assert_allclose(Th, 0.3, atol=1e-14)
    np.testing.assert_allclose(N, -0.2, atol=1e-14)
    v = np.random.default_rng(0).normal(size=mesh.q)
    np.testing.assert_allclose(mesh.evaluate(v, mesh.nodes[[3, 7, 12]]), v[[3, 7, 12]], atol=1e-14)
    tri = mesh.triangles[5]
    centroid = mesh.nodes[tri].mean(axis=0)
    assert abs(mesh.evaluate(v, centroid[None])[0] - v[tri].mean()) < 1e-14


def test_eikonal_source_range(eikonal_smoke):
    f = eikonal_smoke["nodal_f"]
    assert f.min() >= 0.1 - 1e-12 and f.max() <= 2.0 + 1e-12
    assert eikonal_smoke.L == 30


@pytest.fixture(scope="module")
def factored():
    cfg = {"pde": "heat3", "n_per_side": 6, "seed": 3, "factored": {"n_f": 10, "n_theta": 5, "n_eta": 4},
           "sensors": {"kind": "uniform_grid", "k": 16, "k_eta": 4}, "outputs": {"recipe": "mesh_nodes"}}
    return dg.build_dataset(cfg)


def test_nested_ordering(factored):
    ds = dg.order_dataset(factored, "nested")
    fi = ds["factor_indices"]
    assert np.all(fi[:50, 2] == fi[0, 2])  # first n_f * n_theta samples share one eta draw
    np.testing.assert_array_equal(fi[:10, 0], np.arange(10))
    assert len(np.unique(fi[:50, 1])) == 5
    assert np.unique(ds["nodal_eta"][:50], axis=0).shape[0] == 1


def test_randomized_ordering_is_permutation(factored):
    ds = dg.order_dataset(factored, "randomized")
    assert sorted(ds["sample_ids"].tolist()) == list(range(factored.J))
    j = 17
    src = ds["sample_ids"][j]
    np.testing.assert_array_equal(ds["labels"][j], factored["labels"][src])
    again = dg.order_dataset(dg.order_dataset(factored, "nested"), "randomized")
    np.testing.assert_array_equal(again["sample_ids"], ds["sample_ids"])


def test_nested_prefix_covers_worse(factored):
    probe_cfg = {"pde": "heat3", "n_per_side": 6, "seed": 99, "J": 15,
                 "sensors": {"kind": "uniform_grid", "k": 16, "k_eta": 4}, "outputs": {"recipe": "mesh_nodes"}}
    probes = diagnostics.probes_from_dataset(dg.build_dataset(probe_cfg), range(15))
    radii = {}
    for mode in ("nested", "randomized"):
        pre = dg.take_prefix(dg.order_dataset(factored, mode), 50, 0.0)
        res = diagnostics.covering_radius(pre, probes, np.arange(50))
        radii[mode] = np.mean([r.radius_max for r in res])
    assert radii["nested"] >= radii["randomized"]


def test_prefix_and_regenerate(factored):
    ds = dg.take_prefix(dg.order_dataset(factored, "randomized"), 40)
    assert ds.J == 40 and len(ds.split("test")) == 0
    assert len(ds.split("train")) + len(ds.split("val")) == 40
    again = dg.regenerate(ds.metadata)
    assert again.label_hash() == ds.label_hash() == ds.metadata["label_hash"]
    with pytest.raises(ConfigError):
        dg.take_prefix(ds, 41)


def test_regenerate_matches(heat2_smoke):
    assert dg.regenerate(heat2_smoke.metadata).to_bytes() == heat2_smoke.to_bytes()


def test_vmds_roundtrip(heat3_smoke, tmp_path):
    data = heat3_smoke.to_bytes()
    again = dg.dataset_from_bytes(data)
    assert again.to_bytes() == data
    p = tmp_path / "d.vmds"
    heat3_smoke.save(p)
    assert dg.load_dataset(p).to_bytes() == data
    assert data[:4] == b"VMDS"


def test_vmck_roundtrip():
    rng = np.random.default_rng(1)
    params = {"a.weight": rng.normal(size=(3, 2)), "b": np.arange(4)}
    blob = vio.encode_checkpoint({"name": "x"}, params, {"m.a": np.ones(2)}, {"epochs": 3})
    arch, p2, opt, rep = vio.decode_checkpoint(blob)
    assert arch == {"name": "x"} and rep == {"epochs": 3}
    assert p2["a.weight"].tobytes() == params["a.weight"].tobytes()
    assert vio.encode_checkpoint(arch, p2, opt, rep) == blob


@pytest.mark.parametrize("damage", ["trailing", "truncated", "magic", "version"])
def test_format_errors(heat2_smoke, damage):
    data = heat2_smoke.to_bytes()
    bad = {
        "trailing": data + b"\x00",
        "truncated": data[:-5],
        "magic": b"VMCK" + data[4:],
        "version": data[:4] + (99).to_bytes(4, "little") + data[8:],
    }[damage]
    with pytest.raises(FormatError):
        dg.dataset_from_bytes(bad)


def test_missing_array_rejected(heat2_smoke):
    arrays = {k: v for k, v in heat2_smoke.arrays.items() if k != "labels"}
    with pytest.raises(FormatError):
        dg.dataset_from_bytes(vio.encode_dataset(heat2_smoke.metadata, arrays))


def test_streams_are_independent_of_sample_count():
    short = dg.build_dataset({"pde": "heat2", "n_per_side": 5, "J": 4, "seed": 8})
    long = dg.build_dataset({"pde": "heat2", "n_per_side": 5, "J": 7, "seed": 8})
    np.testing.assert_array_equal(short["nodal_f"], long["nodal_f"][:4])
    assert grf.stream_id("f") != grf.stream_id("theta")


def test_bad_configs():
    for bad in ({"pde": "wave"}, {"pde": "heat2", "J": 0}, {"pde": "heat2", "bogus": 1},
                {"pde": "heat2", "factored": {"n_f": 2, "n_theta": 2, "n_eta": 2}},
                {"pde": "heat2", "test_fraction": 1.0}):
        with pytest.raises(ConfigError):
            dg.DatasetConfig.from_dict(bad)


def test_eikonal_regularization_fallback():
    # generation index 304 of the desk eikonal draw cycles under Picard at grad_reg=1e-6
    desk = dg.DatasetConfig.from_dict({"pde": "eikonal", "n_per_side": 16, "J": 2000, "seed": 1,
                                       "sensors": {"kind": "uniform_grid", "k": 256}})
    mesh = fem.build_unit_square_mesh(16, [])
    f = dg._realizations(desk, mesh)[0][304]
    with pytest.raises(fem.ConvergenceError):
        fem.solve_eikonal_picard(mesh, f)
    ds = dg.build_dataset({"pde": "eikonal", "n_per_side": 16, "J": 2, "seed": 1,
                           "sensors": {"kind": "uniform_grid", "k": 16}}, overrides={1: {"f": f}})
    assert ds.metadata["solver"]["grad_reg_fallback"] == {"1": 0.03}
    assert np.all(np.isfinite(ds["labels"]))
