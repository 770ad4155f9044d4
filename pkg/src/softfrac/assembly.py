"""Global sparse assembly and symmetric Dirichlet elimination."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = ["DofMap", "assemble_matrix", "assemble_vector", "solve_reduced"]


class DofMap:
    """DOF numbering: vector u per node, scalar phase per node, one
    pressure per element (kept element-local and condensed away)."""

    def __init__(self, mesh):
        self.dim = mesh.dim
        self.n_nodes = mesh.n_nodes
        self.n_elems = mesh.n_elements
        self.n_u = self.dim * self.n_nodes
        # node-major displacement DOFs per element, shape (E, m*dim)
        conn = mesh.elements
        self.u_elem_dofs = (
            conn[:, :, None] * self.dim + np.arange(self.dim)[None, None, :]
        ).reshape(len(conn), -1)
        self.phi_elem_dofs = conn.copy()

    def u_dof(self, nodes, component):
        return np.asarray(nodes, dtype=np.int64) * self.dim + component


def assemble_matrix(values, elem_dofs, n_dof):
    """Sum (E, k, k) element blocks into an n_dof x n_dof CSR matrix."""
    k = elem_dofs.shape[1]
    rows = np.repeat(elem_dofs, k, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, k)).ravel()
    A = sp.coo_matrix((values.ravel(), (rows, cols)), shape=(n_dof, n_dof))
    return A.tocsr()


def assemble_vector(values, elem_dofs, n_dof):
    """Sum (E, k) element vectors into a global vector."""
    out = np.zeros(n_dof)
    np.add.at(out, elem_dofs.ravel(), values.ravel())
    return out


def solve_reduced(K, rhs, free_mask):
    """Direct solve of the free-DOF block; fixed DOFs return zero.

    The system is eliminated symmetrically: constrained values are applied
    to the state before assembly, so their increment is zero and no lift
    term remains.
    """
    idx = np.flatnonzero(free_mask)
    x = np.zeros(K.shape[0])
    if idx.size == 0:
        return x
    Kff = K[idx][:, idx].tocsc()
    x[idx] = splu(Kff).solve(rhs[idx])
    return x
