"""
P1 finite elements on the unit square
=====================================

Solve -div(theta grad u) = f with a manufactured solution and watch the
L2 error fall by about 4x per mesh refinement.
"""
import numpy as np

from varmion import mesh_fem as fem

# u(x, y) = sin(pi x) sin(pi y) vanishes on the whole boundary, so every edge is Dirichlet
for n in (8, 16, 32):
    mesh = fem.build_unit_square_mesh(n, ())
    x, y = mesh.nodes.T
    f = 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    u = fem.solve_linear(fem.assemble_heat(mesh, 1.0), f)
    exact = np.sin(np.pi * x) * np.sin(np.pi * y)
    M = fem.assemble_mass(mesh)
    print(f"n={n:3d}  q={mesh.q:5d}  nodal L2 error {fem.l2_norm(M, u - exact):.3e}")

# a variable conductivity: the solution gets pushed toward the low-theta region
mesh = fem.build_unit_square_mesh(16)
x, y = mesh.nodes.T
theta = 0.2 + 0.8 * x
u = fem.solve_linear(fem.assemble_heat(mesh, theta), np.ones(mesh.q))
print("argmax of u at", mesh.nodes[np.argmax(u)], "max", u.max().round(4))
