"""P1 finite elements on a structured triangulation of the unit square.

Node ordering is row-major: node ``j * (n + 1) + i`` sits at ``(i / n, j / n)``.
Every grid cell is split along its (i, j)-(i+1, j+1) diagonal into two
counter-clockwise triangles.

All matrices are dense ``(q, q)`` arrays; q stays below ~1100 at the mesh sizes
used here, and the diagnostics need inverses and spectral norms anyway.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, SingularMatrixError

LABELS = ("left", "right", "bottom", "top")

_OUTWARD = {
    "left": np.array([-1.0, 0.0]),
    "right": np.array([1.0, 0.0]),
    "bottom": np.array([0.0, -1.0]),
    "top": np.array([0.0, 1.0]),
}

# mid-edge quadrature on a triangle: P1 shape values at the three edge midpoints
_MIDEDGE_PHI = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


@dataclass
class Mesh:
    n_per_side: int
    nodes: np.ndarray  # (q, 2)
    triangles: np.ndarray  # (2 n^2, 3)
    boundary_edges: np.ndarray  # (4 n, 2) node pairs
    boundary_tags: list  # label per boundary edge
    edge_triangle: np.ndarray  # owning triangle of each boundary edge
    gamma_eta_spec: frozenset = frozenset()
    gamma_g_spec: frozenset = frozenset()
    # cached geometry
    areas: np.ndarray = field(repr=False, default=None)
    grads: np.ndarray = field(repr=False, default=None)  # (T, 3, 2) gradients of the local shape functions

    @property
    def q(self) -> int:
        return len(self.nodes)

    @property
    def h(self) -> float:
        return 1.0 / self.n_per_side

    def boundary_nodes(self, labels) -> np.ndarray:
        """Sorted global indices of nodes lying on the edges with the given labels."""
        labels = set(labels)
        sel = [e for e, tag in zip(self.boundary_edges, self.boundary_tags) if tag in labels]
        if not sel:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(sel))

    @property
    def eta_nodes(self) -> np.ndarray:
        return self.boundary_nodes(self.gamma_eta_spec)

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return self.boundary_nodes(self.gamma_g_spec)

    def describe(self) -> dict:
        return {
            "n_per_side": int(self.n_per_side),
            "gamma_eta": sorted(self.gamma_eta_spec),
            "gamma_g": sorted(self.gamma_g_spec),
            "split": "right-diagonal",
            "node_order": "row-major",
        }

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates for each point in [0,1]^2."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12):
            raise ValueError("point outside the unit square")
        n = self.n_per_side
        s = np.clip(pts * n, 0.0, n)
        ci = np.minimum(np.floor(s[:, 0]).astype(np.int64), n - 1)
        cj = np.minimum(np.floor(s[:, 1]).astype(np.int64), n - 1)
        lx = s[:, 0] - ci
        ly = s[:, 1] - cj
        upper = ly > lx
        tri = 2 * (cj * n + ci) + upper.astype(np.int64)
        # lower triangle: (i,j),(i+1,j),(i+1,j+1); upper: (i,j),(i+1,j+1),(i,j+1)
        bary = np.where(
            upper[:, None],
            np.stack([1.0 - ly, lx, ly - lx], axis=1),
            np.stack([1.0 - lx, lx - ly, ly], axis=1),
        )
        return tri, bary

    def interpolation_matrix(self, points) -> np.ndarray:
        """Dense ``(len(points), q)`` matrix with entries phi_j(points[i])."""
        tri, bary = self.locate(points)
        V = np.zeros((len(tri), self.q))
        rows = np.repeat(np.arange(len(tri)), 3)
        np.add.at(V, (rows, self.triangles[tri].ravel()), bary.ravel())
        return V

    def evaluate(self, values, points) -> np.ndarray:
        """P1 interpolation of nodal ``values`` (q,) or (m, q) at ``points``."""
        tri, bary = self.locate(points)
        v = np.asarray(values, dtype=np.float64)
        local = v[..., self.triangles[tri]]  # (..., P, 3)
        return np.sum(local * bary, axis=-1)


def build_unit_square_mesh(n_per_side: int, gamma_eta_spec=("left", "right")) -> Mesh:
    if n_per_side < 1:
        raise ValueError(f"n_per_side must be >= 1, got {n_per_side}")
    eta = frozenset(gamma_eta_spec)
    unknown = eta - set(LABELS)
    if unknown:
        raise ValueError(f"unknown boundary labels {sorted(unknown)}")
    if eta == set(LABELS):
        raise ValueError("gamma_eta must leave a nonempty Dirichlet boundary")
    n = n_per_side
    xs = np.arange(n + 1) / n
    X, Y = np.meshgrid(xs, xs)  # row-major: y is the slow index
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    def nid(i, j):
        return j * (n + 1) + i

    I, J = np.meshgrid(np.arange(n), np.arange(n))
    I, J = I.ravel(), J.ravel()
    a, b, c, d = nid(I, J), nid(I + 1, J), nid(I + 1, J + 1), nid(I, J + 1)
    lower = np.stack([a, b, c], axis=1)
    upper = np.stack([a, c, d], axis=1)
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges, tags, owners = [], [], []
    r = np.arange(n)
    for k in r:  # bottom: lower triangle of cell (k, 0)
        edges.append((nid(k, 0), nid(k + 1, 0)))
        tags.append("bottom")
        owners.append(2 * (0 * n + k))
    for k in r:  # right: lower triangle of cell (n-1, k)
        edges.append((nid(n, k), nid(n, k + 1)))
        tags.append("right")
        owners.append(2 * (k * n + n - 1))
    for k in r:  # top: upper triangle of cell (k, n-1)
        edges.append((nid(k, n), nid(k + 1, n)))
        tags.append("top")
        owners.append(2 * ((n - 1) * n + k) + 1)
    for k in r:  # left: upper triangle of cell (0, k)
        edges.append((nid(0, k), nid(0, k + 1)))
        tags.append("left")
        owners.append(2 * (k * n) + 1)

    mesh = Mesh(
        n_per_side=n,
        nodes=nodes,
        triangles=triangles,
        boundary_edges=np.array(edges, dtype=np.int64),
        boundary_tags=tags,
        edge_triangle=np.array(owners, dtype=np.int64),
        gamma_eta_spec=eta,
        gamma_g_spec=frozenset(LABELS) - eta,
    )
    _cache_geometry(mesh)
    return mesh


def _cache_geometry(mesh: Mesh) -> None:
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    mesh.areas = 0.5 * det
    # gradients of barycentric coordinates: rows of inv(B)^T applied to reference gradients
    B = np.stack([e1, e2], axis=2)  # (T, 2, 2) columns e1, e2
    Binv = np.linalg.inv(B)
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # reference gradients (3, 2)
    mesh.grads = np.einsum("ak,tkd->tad", ref, Binv)


def _scatter(mesh: Mesh, local: np.ndarray, conn=None) -> np.ndarray:
    conn = mesh.triangles if conn is None else conn
    m = conn.shape[1]
    A = np.zeros((mesh.q, mesh.q))
    rows = np.repeat(conn, m, axis=1).ravel()
    cols = np.tile(conn, (1, m)).ravel()
    np.add.at(A, (rows, cols), local.reshape(len(conn), -1).ravel())
    return A


def element_mass(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    e1, e2 = v[1] - v[0], v[2] - v[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    return area * _LOCAL_MASS


def element_stiffness(vertices, theta=(1.0, 1.0, 1.0)) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    B = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
    area = 0.5 * abs(np.linalg.det(B))
    G = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]) @ np.linalg.inv(B)
    return area * np.mean(theta) * (G @ G.T)


def assemble_mass(mesh: Mesh) -> np.ndarray:
    local = mesh.areas[:, None, None] * _LOCAL_MASS
    return _scatter(mesh, local)


def assemble_boundary_mass(mesh: Mesh, boundary) -> np.ndarray:
    labels = set(boundary)
    sel = np.array([t in labels for t in mesh.boundary_tags], dtype=bool)
    if not sel.any():
        return np.zeros((mesh.q, mesh.q))
    edges = mesh.boundary_edges[sel]
    length = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    local = length[:, None, None] * _EDGE_MASS
    return _scatter(mesh, local, conn=edges)


def _element_field(mesh: Mesh, field) -> np.ndarray:
    """Element-mean of a scalar given as a constant, per-node (q,) or per-element (T,) array."""
    f = np.asarray(field, dtype=np.float64)
    if f.ndim == 0:
        return np.full(len(mesh.triangles), float(f))
    if f.shape == (mesh.q,):
        return f[mesh.triangles].mean(axis=1)
    if f.shape == (len(mesh.triangles),):
        return f
    raise ValueError(f"field of shape {f.shape} matches neither q={mesh.q} nodes nor {len(mesh.triangles)} elements")


def assemble_stiffness(mesh: Mesh, theta_coeffs) -> np.ndarray:
    """K_ij = (grad phi_i, theta^h grad phi_j), exact for P1 theta^h."""
    theta_e = _element_field(mesh, theta_coeffs)
    GG = np.einsum("tad,tbd->tab", mesh.grads, mesh.grads)
    return _scatter(mesh, (mesh.areas * theta_e)[:, None, None] * GG)


def assemble_advection(mesh: Mesh, advect) -> np.ndarray:
    """C_ij = (phi_i, a . grad phi_j) with the three-point mid-edge rule.

    ``advect`` is a constant 2-vector, per-element ``(T, 2)`` or per-node ``(q, 2)``.
    """
    a = np.asarray(advect, dtype=np.float64)
    T = len(mesh.triangles)
    if a.shape == (2,):
        a_qp = np.broadcast_to(a, (T, 3, 2))
    elif a.shape == (T, 2):
        a_qp = np.broadcast_to(a[:, None, :], (T, 3, 2))
    elif a.shape == (mesh.q, 2):
        a_qp = np.einsum("pk,tkd->tpd", _MIDEDGE_PHI, a[mesh.triangles])
    else:
        raise ValueError(f"advection field of shape {a.shape} not understood")
    # a . grad phi_j at each quadrature point: (T, 3 qp, 3 j)
    adv = np.einsum("tpd,tjd->tpj", a_qp, mesh.grads)
    local = np.einsum("pi,tpj->tij", _MIDEDGE_PHI, adv) * (mesh.areas / 3.0)[:, None, None]
    return _scatter(mesh, local)


def assemble_reaction(mesh: Mesh, rho) -> np.ndarray:
    """(phi_i, rho phi_j) for rho constant or piecewise constant per element."""
    r = np.asarray(rho, dtype=np.float64)
    if r.ndim == 0:
        r = np.full(len(mesh.triangles), float(r))
    elif r.shape != (len(mesh.triangles),):
        raise ValueError("reaction coefficient must be a scalar or per-element array")
    return _scatter(mesh, (mesh.areas * r)[:, None, None] * _LOCAL_MASS)


def nitsche_terms(mesh: Mesh, theta_coeffs, beta_scale: float = 10.0, labels=None):
    """Consistency and penalty matrices of the weak Dirichlet imposition.

    Returns ``(C, P)`` with ``C_ij = -(phi_i, theta grad phi_j . n)_{Gamma_g}`` and
    ``P_ij = beta (phi_i, phi_j)_{Gamma_g}``, ``beta = beta_scale / h_edge``.
    The symmetric bilinear contribution is ``C + C.T + P`` and the boundary-data
    matrix is ``M_breve = C.T + P``.
    """
    if beta_scale <= 0:
        raise ValueError(f"beta_scale must be positive, got {beta_scale}")
    labels = mesh.gamma_g_spec if labels is None else set(labels)
    theta = np.asarray(theta_coeffs, dtype=np.float64)
    if theta.ndim == 0:
        theta = np.full(mesh.q, float(theta))
    C = np.zeros((mesh.q, mesh.q))
    P = np.zeros((mesh.q, mesh.q))
    for (na, nb), tag, t in zip(mesh.boundary_edges, mesh.boundary_tags, mesh.edge_triangle):
        if tag not in labels:
            continue
        h = np.linalg.norm(mesh.nodes[nb] - mesh.nodes[na])
        n = _OUTWARD[tag]
        dn = mesh.grads[t] @ n  # normal derivative of each local shape function
        conn = mesh.triangles[t]
        ta, tb = theta[na], theta[nb]
        # int_edge phi_i theta ds for i = a, b (theta linear along the edge)
        w = {na: h / 6.0 * (2 * ta + tb), nb: h / 6.0 * (ta + 2 * tb)}
        for i, wi in w.items():
            C[i, conn] -= wi * dn
        beta = beta_scale / h
        for (i, j), m in zip([(na, na), (na, nb), (nb, na), (nb, nb)], (h * _EDGE_MASS).ravel()):
            P[i, j] += beta * m
    return C, P


@dataclass
class FemMatrices:
    K: np.ndarray
    M: np.ndarray
    M_tilde: np.ndarray
    M_breve: np.ndarray | None = None
    free: np.ndarray | None = None  # unknowns kept after strong elimination
    mode: str = "strong"
    # cached factorization of the (reduced) system matrix
    _factor: tuple | None = field(default=None, repr=False)


def apply_dirichlet(matrix, rhs, mesh: Mesh, mode: str = "strong", beta_scale: float = 10.0, theta=1.0):
    """Impose u = 0 (strong) or the Nitsche terms (weak) on Gamma_g.

    Returns ``(matrix, rhs, free)``. In strong mode the matrix and rhs are reduced
    to the ``free`` unknowns; in Nitsche mode they keep all q unknowns.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    rhs = None if rhs is None else np.asarray(rhs, dtype=np.float64)
    if mode == "strong":
        fixed = mesh.dirichlet_nodes
        free = np.setdiff1d(np.arange(mesh.q), fixed)
        red = matrix[np.ix_(free, free)]
        return red, (None if rhs is None else rhs[free]), free
    if mode == "nitsche":
        C, P = nitsche_terms(mesh, theta, beta_scale)
        return matrix + C + C.T + P, rhs, np.arange(mesh.q)
    raise ValueError(f"unknown Dirichlet mode {mode!r}")


def assemble_heat(mesh: Mesh, theta_coeffs, mode: str = "strong", beta_scale: float = 10.0) -> FemMatrices:
    """Matrices of the discrete weak heat problem with homogeneous Dirichlet data on Gamma_g."""
    K = assemble_stiffness(mesh, theta_coeffs)
    M = assemble_mass(mesh)
    Mt = assemble_boundary_mass(mesh, mesh.gamma_eta_spec)
    Kd, _, free = apply_dirichlet(K, None, mesh, mode, beta_scale, theta_coeffs)
    M_breve = None
    if mode == "nitsche":
        C, P = nitsche_terms(mesh, theta_coeffs, beta_scale)
        M_breve = C.T + P
    return FemMatrices(K=Kd, M=M, M_tilde=Mt, M_breve=M_breve, free=free, mode=mode)


def _factorize(A: np.ndarray):
    sym = np.allclose(A, A.T, rtol=0, atol=1e-13 * max(1.0, np.abs(A).max()))
    if sym:
        try:
            return "chol", scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            pass
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= np.finfo(float).eps * d.max() * len(A):
        raise SingularMatrixError(
            f"system matrix is singular to working precision (condition estimate {np.linalg.cond(A):.3e})",
            condition=float(np.linalg.cond(A)),
        )
    return "lu", (lu, piv)


def _solve_factored(factor, b):
    kind, data = factor
    if kind == "chol":
        return scipy.linalg.cho_solve(data, b, check_finite=False)
    return scipy.linalg.lu_solve(data, b, check_finite=False)


def solve_system(A: np.ndarray, b: np.ndarray, rtol: float = 1e-10, factor=None) -> np.ndarray:
    """Direct dense solve with a residual check; Cholesky when A is SPD, pivoted LU otherwise."""
    factor = _factorize(A) if factor is None else factor
    x = _solve_factored(factor, b)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if bn > 0 and res > rtol * bn:
        # one step of iterative refinement before giving up
        x = x + _solve_factored(factor, b - A @ x)
        res = np.linalg.norm(A @ x - b)
        if res > rtol * bn:
            cond = float(np.linalg.cond(A))
            raise SingularMatrixError(f"residual {res / bn:.2e} above {rtol:.0e} (condition estimate {cond:.3e})", cond)
    return x


def solve_linear(fem: FemMatrices, F, N=None, G=None) -> np.ndarray:
    """Solve K(theta^h) U = M F + M~ N (+ M_breve G) and return all q coefficients."""
    q = fem.M.shape[0]
    rhs = fem.M @ np.asarray(F, dtype=np.float64)
    if N is not None:
        rhs = rhs + fem.M_tilde @ np.asarray(N, dtype=np.float64)
    if G is not None:
        if fem.M_breve is None:
            raise ValueError("boundary data G needs Nitsche mode")
        rhs = rhs + fem.M_breve @ np.asarray(G, dtype=np.float64)
    U = np.zeros(q)
    b = rhs[fem.free]
    if not np.any(b):
        return U
    if fem._factor is None:
        fem._factor = _factorize(fem.K)
    U[fem.free] = solve_system(fem.K, b, factor=fem._factor)
    return U


def inverse_stiffness(fem: FemMatrices) -> np.ndarray:
    """K^{-1} as a q x q operator: the reduced inverse extended by zero on eliminated rows/columns."""
    q = fem.M.shape[0]
    out = np.zeros((q, q))
    out[np.ix_(fem.free, fem.free)] = np.linalg.inv(fem.K)
    return out


@dataclass
class CoefficientVectors:
    F: np.ndarray
    Theta: np.ndarray
    N: np.ndarray
    G: np.ndarray | None = None
    U: np.ndarray | None = None


def project_load(mesh: Mesh, load) -> np.ndarray:
    """Coefficients M^{-1} Fbar of the L2 projection onto V^h from a load vector Fbar_i = (f, phi_i)."""
    M = assemble_mass(mesh)
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), np.asarray(load, dtype=np.float64))


def project_data(mesh: Mesh, f_nodal, theta_nodal, eta_boundary_nodal=None) -> CoefficientVectors:
    """Basis coefficients of (f^h, theta^h, eta^h) for nodal input data.

    With the nodal P1 basis the L2 projection of a function already in V^h is the
    identity, so F and Theta are the nodal values themselves. Flux data given at
    the Gamma_eta nodes is extended by zero to all q coefficients.
    """
    q = mesh.q
    f = np.asarray(f_nodal, dtype=np.float64)
    th = np.asarray(theta_nodal, dtype=np.float64)
    if f.shape != (q,) or th.shape != (q,):
        raise ValueError(f"nodal data must have shape ({q},), got {f.shape} and {th.shape}")
    N = np.zeros(q)
    eta_idx = mesh.eta_nodes
    if eta_boundary_nodal is not None:
        eta = np.asarray(eta_boundary_nodal, dtype=np.float64)
        if eta.shape != (len(eta_idx),):
            raise ValueError(f"flux data must have one value per Gamma_eta node ({len(eta_idx)}), got {eta.shape}")
        N[eta_idx] = eta
    return CoefficientVectors(F=f.copy(), Theta=th.copy(), N=N)


def adr_operator(mesh: Mesh, theta_field, advect_field, rho_field=0.0, nitsche_beta: float | None = None) -> np.ndarray:
    """Matrix of U -> r(U) for frozen coefficients, before strong Dirichlet elimination."""
    A = assemble_stiffness(mesh, theta_field)
    if advect_field is not None:
        A = A + assemble_advection(mesh, advect_field)
    if np.any(np.asarray(rho_field) != 0):
        A = A + assemble_reaction(mesh, rho_field)
    if nitsche_beta is not None and mesh.gamma_g_spec:
        theta = np.asarray(theta_field, dtype=np.float64)
        if theta.shape == (len(mesh.triangles),):
            raise ValueError("Nitsche terms need theta as a constant or nodal field")
        C, P = nitsche_terms(mesh, theta, nitsche_beta)
        A = A + C + C.T + P
    return A


def assemble_adr_residual(mesh: Mesh, theta_field, advect_field, rho_field, U, nitsche_beta: float | None = None):
    """r_i(U) = a(phi_i, U_j phi_j) for the advection-diffusion-reaction form."""
    return adr_operator(mesh, theta_field, advect_field, rho_field, nitsche_beta) @ np.asarray(U, dtype=np.float64)


def gradient_per_element(mesh: Mesh, U) -> np.ndarray:
    """Constant gradient of the P1 field on every triangle, shape (T, 2)."""
    return np.einsum("ta,tad->td", np.asarray(U)[mesh.triangles], mesh.grads)


@dataclass
class PicardResult:
    U: np.ndarray
    iterations: int
    last_change: float


def solve_eikonal_picard(
    mesh: Mesh,
    F,
    diffusion: float = 0.01,
    grad_reg: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 0.7,
    mode: str = "strong",
    beta_scale: float = 10.0,
) -> PicardResult:
    """Frozen-coefficient Picard iteration for -diffusion * Lap u + |grad u| = f, u = 0 on Gamma_g.

    The eikonal term is written as a . grad u with a = grad u / |grad u|_eps,
    ``|v|_eps = sqrt(|v|^2 + grad_reg^2)``, re-evaluated from the current iterate.
    """
    if diffusion <= 0 or grad_reg <= 0:
        raise ValueError("diffusion and grad_reg must be positive")
    F = np.asarray(F, dtype=np.float64)
    M = assemble_mass(mesh)
    b = M @ F
    q = mesh.q
    if not np.any(b):
        return PicardResult(np.zeros(q), 0, 0.0)
    beta = beta_scale if mode == "nitsche" else None
    K = assemble_stiffness(mesh, diffusion)

    def linear_solve(A):
        Ad, bd, free = apply_dirichlet(A, b, mesh, mode, beta_scale, diffusion)
        U = np.zeros(q)
        U[free] = solve_system(Ad, bd)
        return U

    # the gradient direction of the Poisson solution is a good first advection field
    base = assemble_stiffness(mesh, 1.0)
    if beta is not None:
        C, P = nitsche_terms(mesh, 1.0, beta_scale)
        base = base + C + C.T + P
    U = linear_solve(base)
    if beta is not None:
        C, P = nitsche_terms(mesh, diffusion, beta_scale)
        K = K + C + C.T + P
    change = np.inf
    for it in range(1, max_iter + 1):
        g = gradient_per_element(mesh, U)
        a = g / np.sqrt(np.sum(g * g, axis=1) + grad_reg**2)[:, None]
        U_new = damping * linear_solve(K + assemble_advection(mesh, a)) + (1 - damping) * U
        norm = np.linalg.norm(U)
        change = np.linalg.norm(U_new - U) / norm if norm > 0 else np.inf
        U = U_new
        if change < tol:
            return PicardResult(U, it, float(change))
    raise ConvergenceError(
        f"Picard iteration did not converge in {max_iter} steps (last relative change {change:.3e})",
        last_change=float(change),
        iterations=max_iter,
    )


def eikonal_advection(mesh: Mesh, U, grad_reg: float = 1e-6) -> np.ndarray:
    g = gradient_per_element(mesh, U)
    return g / np.sqrt(np.sum(g * g, axis=1) + grad_reg**2)[:, None]


def l2_norm(M: np.ndarray, v) -> np.ndarray:
    """sqrt(v^T M v) for a single nodal vector or a stack of them (last axis q)."""
    v = np.asarray(v, dtype=np.float64)
    return np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", v, M, v), 0.0))
