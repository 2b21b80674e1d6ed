"""Isoparametric shape functions and Gauss rules for 4- and 8-node quadrilaterals.

Node ordering is counterclockwise: corners first, then midside nodes on
edges (0-1), (1-2), (2-3), (3-0).
"""

from __future__ import annotations

import numpy as np

Q4_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
Q8_NODES = np.array(
    [
        [-1.0, -1.0],
        [1.0, -1.0],
        [1.0, 1.0],
        [-1.0, 1.0],
        [0.0, -1.0],
        [1.0, 0.0],
        [0.0, 1.0],
        [-1.0, 0.0],
    ]
)


def shape_functions(order: int, xi, eta):
    """Return (N, dN/dxi, dN/deta), each of shape (..., n_en)."""
    xi = np.asarray(xi, dtype=float)[..., None]
    eta = np.asarray(eta, dtype=float)[..., None]
    if order == 1:
        a, b = Q4_NODES[:, 0], Q4_NODES[:, 1]
        N = 0.25 * (1 + a * xi) * (1 + b * eta)
        dxi = 0.25 * a * (1 + b * eta)
        deta = 0.25 * b * (1 + a * xi)
        return N, dxi, deta
    if order == 2:
        a, b = Q8_NODES[:4, 0], Q8_NODES[:4, 1]
        Nc = 0.25 * (1 + a * xi) * (1 + b * eta) * (a * xi + b * eta - 1)
        dxic = 0.25 * a * (1 + b * eta) * (2 * a * xi + b * eta)
        detac = 0.25 * b * (1 + a * xi) * (a * xi + 2 * b * eta)
        x, e = xi[..., 0], eta[..., 0]
        Nm = np.stack(
            [
                0.5 * (1 - x * x) * (1 - e),
                0.5 * (1 + x) * (1 - e * e),
                0.5 * (1 - x * x) * (1 + e),
                0.5 * (1 - x) * (1 - e * e),
            ],
            axis=-1,
        )
        dxim = np.stack(
            [-x * (1 - e), 0.5 * (1 - e * e), -x * (1 + e), -0.5 * (1 - e * e)], axis=-1
        )
        detam = np.stack(
            [-0.5 * (1 - x * x), -e * (1 + x), 0.5 * (1 - x * x), -e * (1 - x)], axis=-1
        )
        return (
            np.concatenate([Nc, Nm], axis=-1),
            np.concatenate([dxic, dxim], axis=-1),
            np.concatenate([detac, detam], axis=-1),
        )
    raise ValueError(f"unsupported element order {order}")


def gauss_legendre_2d(n: int):
    """Tensor-product Gauss rule on [-1, 1]^2: points (n*n, 2), weights (n*n,)."""
    g, w = np.polynomial.legendre.leggauss(n)
    xi, eta = np.meshgrid(g, g, indexing="xy")
    W = np.outer(w, w)
    return np.column_stack([xi.ravel(), eta.ravel()]), W.ravel()


def physical_gradients(order: int, coords: np.ndarray, xi, eta):
    """Shape functions, Cartesian gradients and Jacobian determinants.

    coords: (n_en, 2) or batched (n_el, n_en, 2); xi/eta broadcast against the
    batch. Returns N (..., n_en), dN (..., n_en, 2), detJ (...).
    """
    N, dxi, deta = shape_functions(order, xi, eta)
    dnat = np.stack([dxi, deta], axis=-1)  # (..., n_en, 2)
    if coords.ndim == 2:
        J = np.einsum("...ak,ai->...ki", dnat, coords)
    else:
        J = np.einsum("e...ak,eai->e...ki", dnat, coords)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / detJ
    inv[..., 1, 1] = J[..., 0, 0] / detJ
    inv[..., 0, 1] = -J[..., 0, 1] / detJ
    inv[..., 1, 0] = -J[..., 1, 0] / detJ
    # dN/dx_i = sum_k dN/dxi_k * dxi_k/dx_i ; J[k, i] = dx_i/dxi_k
    dN = np.einsum("...ak,...ik->...ai", dnat, inv)
    return N, dN, detJ


def inverse_map(corners: np.ndarray, points: np.ndarray, tol: float = 1e-13, max_iter: int = 30):
    """Natural coordinates of physical points in a (straight-sided) quadrilateral.

    Uses the bilinear corner map, which coincides with the serendipity map
    for straight-edged 8-node elements with centred midside nodes.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nat = np.zeros_like(pts)
    for _ in range(max_iter):
        N, dxi, deta = shape_functions(1, nat[:, 0], nat[:, 1])
        x = N @ corners
        r = pts - x
        J = np.stack([dxi @ corners, deta @ corners], axis=1)  # (p, k, i)
        step = np.linalg.solve(np.transpose(J, (0, 2, 1)), r[..., None])[..., 0]
        nat += step
        if np.max(np.abs(step)) < tol:
            break
    return nat
