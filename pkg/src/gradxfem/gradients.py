"""Plastic strain gradient tensor, its effective measure, and nodal recovery.

Quadrature-point plastic strain increments are fitted by a linear
least-squares surface per element, evaluated at the element nodes and
averaged over the elements sharing each node. Differentiating the nodal
field with the standard shape functions gives the gradients at the
quadrature points.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .material import SQ2
from .mesh import Mesh

# Mandel slot -> (i, j) tensor index and the factor undoing sqrt(2)
_MANDEL = [(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (0, 1, 1.0 / SQ2)]


def gradient_tensor(d_eps: np.ndarray) -> np.ndarray:
    """eta_ijk = eps_ik,j + eps_jk,i - eps_ij,k from d_eps[..., i, j, k] = eps_ij,k."""
    d = np.asarray(d_eps, dtype=float)
    return np.swapaxes(d, -1, -2) + np.moveaxis(d, -1, -3) - d


def effective_gradient(eta: np.ndarray) -> np.ndarray:
    """eta^p = sqrt(1/4 sum_ijk eta_ijk^2)."""
    e = np.asarray(eta, dtype=float)
    return np.sqrt(0.25 * np.sum(e * e, axis=(-3, -2, -1)))


def mandel_gradient_to_tensor(g: np.ndarray) -> np.ndarray:
    """(..., 4, 2) in-plane gradients of Mandel components -> (..., 3, 3, 3) eps_ij,k."""
    g = np.asarray(g, dtype=float)
    out = np.zeros(g.shape[:-2] + (3, 3, 3))
    for a, (i, j, s) in enumerate(_MANDEL):
        out[..., i, j, :2] = s * g[..., a, :]
        out[..., j, i, :2] = s * g[..., a, :]
    return out


def effective_gradient_from_mandel(g: np.ndarray) -> np.ndarray:
    return effective_gradient(gradient_tensor(mandel_gradient_to_tensor(g)))


def _element_fit_weights(xy: np.ndarray, node_xy: np.ndarray) -> np.ndarray:
    """Weights (n_en, n_q) mapping quadrature values to node values via a linear LS fit."""
    centre = xy.mean(axis=0)
    scale = max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1]), 1e-300)
    A = np.column_stack([np.ones(len(xy)), (xy - centre) / scale])
    if len(xy) < 3 or np.linalg.matrix_rank(A, tol=1e-8) < 3:
        return np.full((len(node_xy), len(xy)), 1.0 / len(xy))
    B = np.column_stack([np.ones(len(node_xy)), (node_xy - centre) / scale])
    return B @ np.linalg.pinv(A)


def recovery_matrix(mesh: Mesh, qp_element: np.ndarray, qp_xy: np.ndarray):
    """Sparse operator R with nodal = R @ qp_values, and a mask of nodes with no data."""
    qp_element = np.asarray(qp_element)
    order = np.argsort(qp_element, kind="stable")
    bounds = np.searchsorted(qp_element[order], np.arange(mesh.n_elements + 1))
    rows, cols, vals = [], [], []
    for e in range(mesh.n_elements):
        q = order[bounds[e] : bounds[e + 1]]
        if len(q) == 0:
            continue
        conn = mesh.elements[e]
        w = _element_fit_weights(qp_xy[q], mesh.nodes[conn])
        rows.append(np.repeat(conn, len(q)))
        cols.append(np.tile(q, len(conn)))
        vals.append(w.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, len(qp_element)))
    # each element contributes one fitted value per node; average them
    count = np.zeros(mesh.n_nodes)
    for e in np.unique(qp_element):
        count[mesh.elements[e]] += 1
    isolated = count == 0
    inv = np.where(isolated, 0.0, 1.0 / np.maximum(count, 1))
    return sp.diags(inv) @ R, isolated


def gradient_matrices(mesh: Mesh, qp_element: np.ndarray, qp_dN: np.ndarray):
    """Sparse (Gx, Gy) with Gx @ nodal = d(field)/dx at each quadrature point.

    qp_dN: (n_qp, n_en, 2) standard shape-function gradients.
    """
    n_qp = len(qp_element)
    conn = mesh.elements[np.asarray(qp_element)]
    rows = np.repeat(np.arange(n_qp), conn.shape[1])
    mats = [
        sp.csr_matrix((qp_dN[:, :, k].ravel(), (rows, conn.ravel())), shape=(n_qp, mesh.n_nodes))
        for k in range(2)
    ]
    return mats[0], mats[1]


def recover_nodal_plastic_increments(mesh: Mesh, qp_element, qp_xy, d_plastic):
    """Nodal plastic strain increments (n_nodes, 4) from quadrature values (n_qp, 4).

    Returns the nodal field and a boolean mask of isolated nodes, which get 0.
    """
    R, isolated = recovery_matrix(mesh, qp_element, qp_xy)
    return R @ np.asarray(d_plastic, dtype=float), isolated


class PlasticGradientOperator:
    """Precomputed quadrature -> nodes -> quadrature-gradient map for one mesh."""

    def __init__(self, mesh: Mesh, qp_element, qp_xy, qp_dN):
        R, self.isolated = recovery_matrix(mesh, qp_element, qp_xy)
        Gx, Gy = gradient_matrices(mesh, qp_element, qp_dN)
        self._Gx = (Gx @ R).tocsr()
        self._Gy = (Gy @ R).tocsr()

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """(n_qp, c) quadrature values -> (n_qp, c, 2) recovered in-plane gradients."""
        return np.stack([self._Gx @ values, self._Gy @ values], axis=-1)
