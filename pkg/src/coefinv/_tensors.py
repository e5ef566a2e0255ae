"""Reference-cell quadrature tensors for bilinear quadrilateral elements.

Everything integrates over the unit reference square with a tensorized
2-point Gauss rule, which is exact for every integrand appearing in this
package (products of up to three bilinear factors, or one bilinear factor
times two shape-function gradients, are at most cubic per coordinate).
Both kernel backends consume these tensors so they stay numerically
identical up to summation order.
"""

import numpy as np

# 2-point Gauss rule on [0, 1]
GAUSS_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS_WEIGHTS = np.array([0.5, 0.5])

# local node order inside a cell: SW, SE, NW, NE
LOCAL_OFFSETS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])


def shape_values(xi, eta):
    """Values of the four bilinear shape functions at (xi, eta) in [0,1]^2."""
    xi = np.asarray(xi)
    eta = np.asarray(eta)
    return np.stack(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta]
    )


def shape_gradients(xi, eta):
    """Reference gradients of the shape functions, shape (4, 2)."""
    xi = np.asarray(xi)
    eta = np.asarray(eta)
    d_xi = np.stack([-(1 - eta), (1 - eta), -eta, eta])
    d_eta = np.stack([-(1 - xi), -xi, (1 - xi), xi])
    return np.stack([d_xi, d_eta], axis=-1)


def _build_tensors():
    t_mass = np.zeros((4, 4, 4))
    t_stiff = np.zeros((4, 4, 4))
    for gx, wx in zip(GAUSS_POINTS, GAUSS_WEIGHTS):
        for gy, wy in zip(GAUSS_POINTS, GAUSS_WEIGHTS):
            w = wx * wy
            n = shape_values(gx, gy)
            g = shape_gradients(gx, gy)
            gdots = g @ g.T
            t_mass += w * np.einsum("l,j,k->ljk", n, n, n)
            t_stiff += w * np.einsum("l,jk->ljk", n, gdots)
    return t_mass, t_stiff


# T_MASS[l, j, k] = int N_l N_j N_k  (scale by h^2 on a physical cell)
# T_STIFF[l, j, k] = int N_l grad N_j . grad N_k  (h-independent in 2d)
T_MASS, T_STIFF = _build_tensors()
T_MASS.setflags(write=False)
T_STIFF.setflags(write=False)

# Plain element matrices follow from the partition of unity sum_l N_l = 1.
ELEM_MASS = T_MASS.sum(axis=0)
ELEM_STIFF = T_STIFF.sum(axis=0)
ELEM_MASS.setflags(write=False)
ELEM_STIFF.setflags(write=False)
