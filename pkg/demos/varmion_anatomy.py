"""
Inside a VarMiON
================

The branch mirrors U = K^-1(theta) (M F + M_tilde N): linear maps for the
data and a learned matrix D(theta) standing in for the inverse stiffness.
"""
import numpy as np

from varmion import operator_nets as on

spec = on.get_architecture("A4_varmion")
print(spec.name, "p =", spec.p, "k =", spec.k, "k_eta =", spec.k_eta)
model = on.build_model(spec, seed=0)
print(on.count_parameters(model))

rng = np.random.default_rng(1)
theta = rng.uniform(0.02, 0.99, (1, spec.k))
D = model.d_matrix(theta).data
print("D(theta) shape", D.shape)  # 12x12 sensors through four transpose convolutions

# linear in (F, N) once theta is fixed
pts = rng.uniform(size=(5, 2))
F, N = rng.normal(size=(1, spec.k)), rng.normal(size=(1, spec.k_eta))
a = on.varmion_forward(model, 2 * F, theta, 2 * N, pts)
b = on.varmion_forward(model, F, theta, N, pts)
print("2 G(F, N) - G(2F, 2N) =", np.abs(2 * b - a).max())

# VarMiON-c keeps the homogeneity of the eikonal solution operator
c = on.build_model(on.get_architecture("A5_varmion_c", k=256), seed=0)
print("VarMiON-c at zero input:", np.abs(on.varmion_c_forward(c, np.zeros((1, 256)), None, None, pts)).max())

for name in ("A5_deeponet_130", "A5_deeponet_200", "A5_varmion"):
    print(name, on.count_parameters(on.build_model(on.get_architecture(name)))["learnable_count"])
