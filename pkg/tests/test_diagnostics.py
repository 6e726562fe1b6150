import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from varmion import datagen as dg
from varmion import diagnostics as di
from varmion import mesh_fem as fem
from varmion import operator_nets as on
from varmion.errors import FrameError, ShapeError


def test_relative_error_examples():
    ref = np.array([[1.0, 2.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.0, 4.0]])
    stats = di.relative_errors(1.1 * ref, ref)
    np.testing.assert_allclose(stats.errors, [0.1, 0.1])
    assert stats.sample_ids == [0, 2] and stats.excluded == [1]
    assert stats.count == 2 and abs(stats.mean - 0.1) < 1e-15


@given(st.floats(1e-3, 1e3), st.integers(0, 100))
@settings(max_examples=30, deadline=None)
def test_relative_error_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    ref, pred = rng.normal(size=(2, 4, 7))
    a = di.relative_errors(pred, ref).errors
    b = di.relative_errors(c * pred, c * ref).errors
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_mass_norm_errors_use_mass_matrix():
    mesh = fem.build_unit_square_mesh(4)
    M = fem.assemble_mass(mesh)
    ref = np.ones((1, mesh.q))
    stats = di.relative_errors(np.zeros_like(ref), ref, mass=M, quadrature="dense_grid")
    assert abs(stats.errors[0] - 1.0) < 1e-14
    assert abs(fem.l2_norm(M, ref[0]) - 1.0) < 1e-12  # unit-square area


def test_histogram_is_a_density():
    e = np.random.default_rng(0).uniform(0, 0.2, size=500)
    rows = di.export_error_histogram(e, 20)
    assert len(rows) == 20
    assert abs(sum((r - l) * d for l, r, d in rows) - 1.0) < 1e-12
    assert rows[0][0] == e.min() and rows[-1][1] == e.max()
    with pytest.raises(ValueError):
        di.export_error_histogram([])


def test_lipschitz_examples():
    const = di.estimate_lipschitz_D(lambda th: np.broadcast_to(np.eye(3), (len(th), 3, 3)), np.random.rand(10, 1))
    assert const.value == 0.0 and const.pairs_used == 45
    lin = di.estimate_lipschitz_D(lambda th: 2.5 * th[:, :1, None] * np.eye(3), np.linspace(0, 1, 8)[:, None])
    assert abs(lin.value - 2.5) < 1e-8
    dup = di.estimate_lipschitz_D(lambda th: th[:, :1, None] * np.eye(2), np.array([[0.1], [0.1], [0.3]]))
    assert dup.skipped == 1 and dup.pairs_used == 2
    with pytest.raises(ValueError):
        di.estimate_lipschitz_D(lambda th: th, np.ones((1, 2)))


def test_lipschitz_pairs_are_prefixes():
    a = di.sample_pairs(30, 10, seed=1)
    b = di.sample_pairs(30, 50, seed=1)
    np.testing.assert_array_equal(a, b[:10])
    assert np.all(b[:, 0] < b[:, 1])


def test_lipschitz_of_varmion_d(heat2_smoke):
    model = on.build_model(on.get_architecture("A3_varmion"), seed=0)
    th = heat2_smoke["inputs_theta"][:8]
    est = di.estimate_lipschitz_D(model, th, pair_count=28)
    assert est.pairs_used == 28 and est.converged and est.value > 0


def test_fem_stability_is_linear_in_f(heat2_smoke):
    mesh = heat2_smoke.mesh
    cfg = dg.DatasetConfig.from_dict(heat2_smoke.metadata["config"])
    ev = di.FemEvaluator(mesh, cfg)
    base = {"f": heat2_smoke["nodal_f"][0], "theta": heat2_smoke["nodal_theta"][0]}
    bump = np.sin(np.pi * mesh.nodes[:, 0]) * np.sin(np.pi * mesh.nodes[:, 1])
    r = di.stability_probe(ev, base, [{"f": 0.01 * bump}, {"f": 0.1 * bump}, {"f": -0.05 * bump}])
    np.testing.assert_allclose(r, r[0], rtol=1e-9)
    with pytest.raises(ValueError):
        di.stability_probe(ev, base, [{"f": np.zeros(mesh.q)}])
    with pytest.raises(ValueError):
        di.stability_probe(ev, base, [{"theta": -10.0 * np.ones(mesh.q)}])


def test_network_stability_within_bound(heat2_smoke):
    model = on.build_model(on.get_architecture("A3_varmion"), seed=3)
    ev = di.NetworkEvaluator(model, heat2_smoke)
    mesh = heat2_smoke.mesh
    base = {"f": heat2_smoke["nodal_f"][2], "theta": heat2_smoke["nodal_theta"][2]}
    rng = np.random.default_rng(4)
    deltas = [{"f": s * rng.normal(size=mesh.q)} for s in (0.01, 0.1)]
    ratios = di.stability_probe(ev, base, deltas)
    again = di.stability_probe(ev, base, [{"f": 7.0 * deltas[0]["f"]}])
    assert abs(again[0] - ratios[0]) < 1e-9 * ratios[0]  # linear in F for fixed theta
    bound = di.stability_bound(model, heat2_smoke["inputs_theta"][[2]], mesh)
    assert max(ratios) <= bound.value * (1 + 1e-9)


def test_covering_radius(heat3_smoke):
    ds = heat3_smoke
    train = ds.split("train")
    res = di.covering_radius(ds, di.probes_from_dataset(ds, train[:3]))
    assert all(r.radius_max == 0.0 and r.radius_sum == 0.0 for r in res)
    assert [r.index_max for r in res] == list(train[:3])
    probe = di.probes_from_dataset(ds, [train[0]])[0]
    probe["f"] = probe["f"] + 0.5
    (r,) = di.covering_radius(ds, [probe])
    assert r.radius_sum >= r.radius_max > 0


def test_quadrature_examples():
    const = di.quadrature_convergence(lambda x: np.full(len(x), 2.0), 4.0, [16, 64, 256], trials=5)
    assert max(const.mean_abs_err) < 1e-12 and np.isnan(const.slope)
    mc = di.quadrature_convergence(di.sin_product, di.SIN_PRODUCT_SQ_INTEGRAL, [64, 256, 1024, 4096], trials=50)
    assert -0.7 < mc.slope < -0.3
    # the midpoint lattice integrates sin^2 exactly, so compare lattices on the exponential
    uni = di.quadrature_convergence(di.sin_product, di.SIN_PRODUCT_SQ_INTEGRAL, [64, 256, 1024], kind="uniform")
    assert max(uni.mean_abs_err) < 1e-12
    exp_mc = di.quadrature_convergence(di.exp_sum, di.EXP_SUM_SQ_INTEGRAL, [16, 64, 256, 1024], trials=50)
    exp_uni = di.quadrature_convergence(di.exp_sum, di.EXP_SUM_SQ_INTEGRAL, [16, 64, 256, 1024], kind="uniform")
    assert abs(exp_uni.slope + 1.0) < 0.1
    assert exp_uni.slope < exp_mc.slope - 0.3
    with pytest.raises(ValueError):
        di.quadrature_convergence(di.exp_sum, 1.0, [10, 10, 20])
    with pytest.raises(ValueError):
        di.quadrature_convergence(di.exp_sum, 1.0, [10, 20, 30], kind="uniform")


def test_structural_distance_exact_factorization():
    rng = np.random.default_rng(5)
    q = 6
    V = rng.normal(size=(q, q)) + 3 * np.eye(q)
    B = rng.normal(size=(q, q))
    M = B @ B.T + q * np.eye(q)
    C = rng.normal(size=(q, q))
    Kinv = C @ C.T + np.eye(q)
    s, r = di.structural_distance(Kinv, V, V, Kinv @ M, np.eye(q), np.eye(q), M, np.full(q, 1 / q))
    assert s < 1e-10 and r < 1e-10
    s2, _ = di.structural_distance(Kinv, V, V, Kinv @ M, 0 * np.eye(q), np.eye(q), M, np.full(q, 1 / q))
    assert abs(s2 - np.linalg.norm(Kinv, 2)) < 1e-6 * s2


@pytest.fixture(scope="module")
def nodal_heat2():
    return dg.build_dataset({"pde": "heat2", "n_per_side": 8, "J": 4, "seed": 6, "outputs": {"recipe": "mesh_nodes"}})


def test_structural_estimate_on_coarse_mesh(nodal_heat2):
    assert nodal_heat2.L == 81
    model = on.build_model(on.get_architecture("A3_varmion"), seed=1)
    rows = di.structural_estimate(model, nodal_heat2, [0, 1])
    assert [r.theta_id for r in rows] == [0, 1]
    assert all(np.isfinite(r.dist_spectral) and r.dist_spectral > 0 for r in rows)
    with pytest.raises(ShapeError):
        di.structural_estimate(on.build_model(on.get_architecture("A3_deeponet")), nodal_heat2)


def test_frame_errors(heat2_smoke, heat3_smoke):
    with pytest.raises(FrameError):
        di.check_frame(heat2_smoke)  # L != q
    with pytest.raises(FrameError):
        di.check_frame(heat3_smoke)  # nonzero flux


def test_report_serializes(tmp_path):
    rep = di.DiagnosticsReport(quadrature={"slope": np.float64(-0.5), "counts": np.arange(3)})
    di.write_json(tmp_path / "r.json", rep.to_dict())
    text = (tmp_path / "r.json").read_text()
    assert '"slope": -0.5' in text and "errors" not in text
