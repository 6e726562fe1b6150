import numpy as np
import pytest

from varmion import mesh_fem as fem
from varmion.datagen import build_dataset
from varmion.tensor_nn import Tape


def fd_max_rel_error(loss_fn, tensors, probes=20, h=1e-6, seed=0, floor=1e-6):
    """Largest relative gap between tape gradients and central differences.

    ``loss_fn()`` must build a scalar Tensor from the current ``tensors`` data.
    Probes are spread over the tensors in turn, one random entry each.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for i in range(probes):
        k = i % len(tensors)
        t = tensors[k]
        idx = tuple(rng.integers(0, s) for s in t.data.shape)
        old = t.data[idx]
        t.data[idx] = old + h
        up = float(loss_fn().data)
        t.data[idx] = old - h
        down = float(loss_fn().data)
        t.data[idx] = old
        num = (up - down) / (2 * h)
        ana = grads[k][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


def manufactured_l2_error(n):
    """L2 error of the P1 solution of -lap u = 2 pi^2 sin(pi x) sin(pi y), u = 0 on the boundary."""
    m = fem.build_unit_square_mesh(n, ())
    x, y = m.nodes.T
    f = 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    u = fem.solve_linear(fem.assemble_heat(m, 1.0), f)
    # error against the exact solution with a 6-point rule on every triangle
    bary = np.array([[0.816847572980459, 0.091576213509771, 0.091576213509771],
                     [0.091576213509771, 0.816847572980459, 0.091576213509771],
                     [0.091576213509771, 0.091576213509771, 0.816847572980459],
                     [0.108103018168070, 0.445948490915965, 0.445948490915965],
                     [0.445948490915965, 0.108103018168070, 0.445948490915965],
                     [0.445948490915965, 0.445948490915965, 0.108103018168070]])
    wts = np.array([0.109951743655322] * 3 + [0.223381589678011] * 3)
    P = m.nodes[m.triangles]
    pts = np.einsum("qa,tad->tqd", bary, P)
    uh = np.einsum("qa,ta->tq", bary, u[m.triangles])
    ex = np.sin(np.pi * pts[..., 0]) * np.sin(np.pi * pts[..., 1])
    return np.sqrt(np.sum(m.areas[:, None] * wts * (uh - ex) ** 2))


@pytest.fixture(scope="session")
def heat2_smoke():
    return build_dataset({"pde": "heat2", "n_per_side": 8, "J": 20, "seed": 3})


@pytest.fixture(scope="session")
def heat3_smoke():
    return build_dataset({"pde": "heat3", "n_per_side": 8, "J": 12, "seed": 4})


@pytest.fixture(scope="session")
def eikonal_smoke():
    return build_dataset({"pde": "eikonal", "n_per_side": 16, "J": 12, "seed": 5,
                          "sensors": {"kind": "uniform_grid", "k": 16}, "outputs": {"recipe": "random_nodes", "count": 30}})
