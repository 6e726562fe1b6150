import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import manufactured_l2_error
from varmion import mesh_fem as fem
from varmion.errors import ConvergenceError


def test_smallest_mesh():
    m = fem.build_unit_square_mesh(1, ("left", "right"))
    assert m.q == 4 and len(m.triangles) == 2


def test_paper_mesh_size():
    m = fem.build_unit_square_mesh(32)
    assert m.q == 1089 and len(m.triangles) == 2048


def test_n2_triangle_areas():
    m = fem.build_unit_square_mesh(2)
    np.testing.assert_allclose(m.areas, 1 / 8, rtol=0, atol=1e-15)


@given(st.integers(1, 12), st.sets(st.sampled_from(["left", "right", "top", "bottom"]), max_size=3))
@settings(max_examples=30, deadline=None)
def test_mesh_invariants(n, eta):
    m = fem.build_unit_square_mesh(n, eta)
    assert m.q == (n + 1) ** 2 and len(m.triangles) == 2 * n * n
    assert np.all(m.areas > 0)
    assert m.gamma_eta_spec | m.gamma_g_spec == {"left", "right", "top", "bottom"}
    assert not (m.gamma_eta_spec & m.gamma_g_spec)


def test_all_flux_boundary_rejected():
    with pytest.raises(ValueError):
        fem.build_unit_square_mesh(4, ("left", "right", "top", "bottom"))


def test_reference_element_mass_and_stiffness():
    v = [(0, 0), (1, 0), (0, 1)]
    np.testing.assert_allclose(fem.element_mass(v), np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24, atol=1e-15)
    np.testing.assert_allclose(fem.element_stiffness(v), 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]),
                               atol=1e-15)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_mass_partition_of_unity(n):
    M = fem.assemble_mass(fem.build_unit_square_mesh(n))
    assert abs(M.sum() - 1.0) < 1e-12


def test_mass_spd_n4():
    M = fem.assemble_mass(fem.build_unit_square_mesh(4))
    np.testing.assert_array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0


def test_boundary_mass_examples():
    m = fem.build_unit_square_mesh(1, ("left",))
    Mt = fem.assemble_boundary_mass(m, ["left"])
    left = m.boundary_nodes(["left"])
    np.testing.assert_allclose(Mt[np.ix_(left, left)], np.array([[2, 1], [1, 2]]) / 6, atol=1e-15)
    assert np.count_nonzero(Mt) == 4
    assert not np.any(fem.assemble_boundary_mass(m, []))
    m8 = fem.build_unit_square_mesh(8)
    assert abs(fem.assemble_boundary_mass(m8, ["left", "right"]).sum() - 2.0) < 1e-12
    assert np.linalg.eigvalsh(fem.assemble_boundary_mass(m8, ["left", "right"])).min() > -1e-14


def test_stiffness_linearity_and_kernel():
    m = fem.build_unit_square_mesh(6)
    th = np.random.default_rng(0).uniform(0.1, 1.0, m.q)
    K = fem.assemble_stiffness(m, th)
    np.testing.assert_allclose(fem.assemble_stiffness(m, 3.5 * th), 3.5 * K, rtol=1e-14, atol=1e-14)
    assert np.abs(K @ np.ones(m.q)).max() < 1e-12


def test_coercivity_random_draws():
    m = fem.build_unit_square_mesh(8)
    rng = np.random.default_rng(1)
    for _ in range(100):
        K = fem.assemble_stiffness(m, rng.uniform(0.02, 0.99, m.q))
        U = rng.normal(size=m.q)
        assert U @ K @ U >= -1e-12


def test_reduced_heat_stiffness_spd():
    m = fem.build_unit_square_mesh(8)
    th = np.random.default_rng(2).uniform(0.02, 0.99, m.q)
    K = fem.assemble_heat(m, th).K
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() > 0


def test_strong_elimination_count():
    m = fem.build_unit_square_mesh(2, ("left", "right"))
    assert fem.assemble_heat(m, 1.0).K.shape == (m.q - 6, m.q - 6)


def test_nitsche_zero_beta_rejected():
    m = fem.build_unit_square_mesh(4)
    with pytest.raises(ValueError):
        fem.assemble_heat(m, 1.0, mode="nitsche", beta_scale=0.0)


def test_nitsche_matches_strong_on_discrete_manufactured_solution():
    # U* vanishes on the Dirichlet nodes; its load is taken from the Nitsche operator so both modes
    # must reproduce U* exactly.
    m = fem.build_unit_square_mesh(16)
    rng = np.random.default_rng(3)
    th = rng.uniform(0.1, 1.0, m.q)
    U = rng.normal(size=m.q)
    U[m.dirichlet_nodes] = 0.0
    C, _ = fem.nitsche_terms(m, th, 10.0)
    b = (fem.assemble_stiffness(m, th) + C) @ U
    nit = fem.assemble_heat(m, th, mode="nitsche")
    M = fem.assemble_mass(m)
    F = np.linalg.solve(M, b)
    u_nit = fem.solve_linear(nit, F)
    u_str = fem.solve_linear(fem.assemble_heat(m, th), F)
    np.testing.assert_allclose(u_nit, U, atol=1e-8)
    np.testing.assert_allclose(u_str, u_nit, atol=1e-8)


def test_homogeneous_problem():
    m = fem.build_unit_square_mesh(4)
    mats = fem.assemble_heat(m, 1.0)
    assert not np.any(fem.solve_linear(mats, np.zeros(m.q), np.zeros(m.q)))


def test_second_order_convergence():
    e8, e16, e32 = (manufactured_l2_error(n) for n in (8, 16, 32))
    assert 3.4 <= e8 / e16 <= 4.6
    rates = np.log2([e8 / e16, e16 / e32])
    assert np.all((rates >= 1.8) & (rates <= 2.2))


def _sparse_center_reference(n):
    # independent sparse P1 assembly for theta = 1, f = 1, Dirichlet on top and bottom
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # [j, i]
    a, b, c, d = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    Kl = 0.5 * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])  # lower: (i,j),(i+1,j),(i+1,j+1)
    Ku = 0.5 * np.array([[1, 0, -1], [0, 1, -1], [-1, -1, 2]])  # upper: (i,j),(i+1,j+1),(i,j+1)
    rows, cols, vals, load = [], [], [], np.zeros(idx.size)
    for tri, Kloc in ((np.stack([a, b, c], 1), Kl), (np.stack([a, c, d], 1), Ku)):
        for r in range(3):
            for s in range(3):
                rows.append(tri[:, r]); cols.append(tri[:, s]); vals.append(np.full(len(tri), Kloc[r, s]))
            np.add.at(load, tri[:, r], 1.0 / (6 * n * n))
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(idx.size,) * 2)
    free = idx[1:-1, :].ravel()
    u = np.zeros(idx.size)
    u[free] = spla.spsolve(K[free][:, free].tocsc(), load[free])
    return u[idx[n // 2, n // 2]]


def test_center_value_against_fine_mesh():
    m = fem.build_unit_square_mesh(32, ("left", "right"))
    u = fem.solve_linear(fem.assemble_heat(m, 1.0), np.ones(m.q))
    coarse = m.evaluate(u, [[0.5, 0.5]])[0]
    assert abs(_sparse_center_reference(32) - coarse) < 1e-10  # the oracle agrees with the dense path
    ref = _sparse_center_reference(128)
    assert abs(coarse - ref) / ref < 0.01


def test_project_data():
    m = fem.build_unit_square_mesh(4, ("left", "right"))
    cv = fem.project_data(m, np.full(m.q, 0.7), np.ones(m.q))
    np.testing.assert_allclose(cv.F, 0.7)
    eta = np.zeros(len(m.eta_nodes))
    eta[3] = 2.0
    cv = fem.project_data(m, np.zeros(m.q), np.ones(m.q), eta)
    assert np.flatnonzero(cv.N).tolist() == [m.eta_nodes[3]]


def test_projection_load_oracle():
    # F from nodal values reproduces the element-quadrature load vector through M
    m = fem.build_unit_square_mesh(6)
    f = np.random.default_rng(4).normal(size=m.q)
    load = np.zeros(m.q)
    for tri, area in zip(m.triangles, m.areas):
        load[tri] += area / 12 * (f[tri] + f[tri].sum())
    assert np.linalg.norm(fem.assemble_mass(m) @ fem.project_data(m, f, np.ones(m.q)).F - load) <= 1e-10
    np.testing.assert_allclose(fem.project_load(m, load), f, atol=1e-10)


def test_off_node_interpolation_is_vertex_mean():
    m = fem.build_unit_square_mesh(4)
    v = np.random.default_rng(5).normal(size=m.q)
    tri = m.triangles[7]
    centroid = m.nodes[tri].mean(axis=0)
    assert abs(m.evaluate(v, [centroid])[0] - v[tri].mean()) < 1e-14


def test_adr_reduces_to_stiffness():
    m = fem.build_unit_square_mesh(5)
    U = np.random.default_rng(6).normal(size=m.q)
    np.testing.assert_allclose(fem.assemble_adr_residual(m, 1.0, None, 0.0, U), fem.assemble_stiffness(m, 1.0) @ U,
                               atol=1e-13)
    assert not np.any(fem.assemble_adr_residual(m, 1.0, (1.0, 0.0), 0.0, np.zeros(m.q)))


def test_adr_residual_quadrature_oracle():
    # independent element loop: r_i = sum_T |T| (theta grad u . grad phi_i + (a . grad u) phi_i(centroid) ...)
    # P1 products with a constant field are integrated exactly by the edge-midpoint rule
    m = fem.build_unit_square_mesh(6)
    U = np.random.default_rng(7).normal(size=m.q)
    a = np.array([1.0, 0.0])
    r = np.zeros(m.q)
    for t, tri in enumerate(m.triangles):
        G = m.grads[t]
        gu = G.T @ U[tri]
        r[tri] += m.areas[t] * (0.01 * G @ gu + (a @ gu) / 3.0)
    np.testing.assert_allclose(fem.assemble_adr_residual(m, 0.01, a, 0.0, U), r, atol=1e-8)


def test_eikonal_picard():
    m = fem.build_unit_square_mesh(16, ())
    zero = fem.solve_eikonal_picard(m, np.zeros(m.q))
    assert not np.any(zero.U)
    res = fem.solve_eikonal_picard(m, np.ones(m.q))
    U = res.U
    x, y = m.nodes.T
    order = np.lexsort((y, x))
    mirror = np.lexsort((1 - y, 1 - x))
    np.testing.assert_allclose(U[order], U[mirror], atol=1e-8)
    # fixed point: residual with the converged advection field matches M F
    a = fem.eikonal_advection(m, U)
    A = fem.adr_operator(m, 0.01, a)
    b = fem.assemble_mass(m) @ np.ones(m.q)
    free = np.setdiff1d(np.arange(m.q), m.dirichlet_nodes)
    rel = np.linalg.norm((A @ U - b)[free]) / np.linalg.norm(b[free])
    assert rel < 1e-6


def test_eikonal_center_against_fine_mesh():
    def center(n):
        m = fem.build_unit_square_mesh(n, ())
        return m.evaluate(fem.solve_eikonal_picard(m, np.ones(m.q)).U, [[0.5, 0.5]])[0]

    ref = center(48)
    assert abs(center(16) - ref) / ref < 0.03


def test_picard_nonconvergence_reports_change():
    m = fem.build_unit_square_mesh(8, ())
    with pytest.raises(ConvergenceError) as info:
        fem.solve_eikonal_picard(m, np.ones(m.q), max_iter=2)
    assert info.value.last_change > 0
