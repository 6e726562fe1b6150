"""
Why the output loss behaves like a Monte-Carlo integral
=======================================================

The training loss averages squared errors over random output points.
Its error against the exact integral shrinks like N^-1/2; a midpoint
lattice does better on smooth integrands.
"""
from varmion import diagnostics as di

mc = di.quadrature_convergence(di.sin_product, di.SIN_PRODUCT_SQ_INTEGRAL, [100, 400, 1600, 6400], trials=50)
for n, e in zip(mc.node_counts, mc.mean_abs_err):
    print(f"N={n:5d}  mean |error| {e:.2e}")
print("Monte-Carlo slope", round(mc.slope, 3))

lattice = di.quadrature_convergence(di.exp_sum, di.EXP_SUM_SQ_INTEGRAL, [16, 64, 256, 1024], kind="uniform")
print("midpoint lattice slope on exp(x+y)", round(lattice.slope, 3))
