"""Phase-field subproblem: crack density, pre-cracks, the bound-constrained
active-set update and adaptive element deletion.

The damage increment of every staggered iteration solves

    min  0.5 dphi^T K dphi - f^T dphi   s.t.  dphi >= 0

which enforces irreversibility of the crack field.  The active set fixes
violating increments to zero and re-solves the reduced system; a final
multiplier check releases wrongly fixed entries so the result matches the
exact quadratic-program optimum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import elements as el
from .assembly import assemble_matrix, assemble_vector
from .errors import ActiveSetError

__all__ = [
    "PhaseState",
    "crack_density",
    "apply_precrack",
    "solve_phase_subproblem",
    "delete_damaged_elements",
    "surface_energy",
    "relax_precrack",
]


@dataclass
class PhaseState:
    """Nodal crack field at the previous and current step."""

    phi_n: np.ndarray
    phi: np.ndarray
    max_history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, n_nodes):
        return cls(phi_n=np.zeros(n_nodes), phi=np.zeros(n_nodes))

    def copy(self):
        return PhaseState(
            phi_n=self.phi_n.copy(), phi=self.phi.copy(),
            max_history=list(self.max_history),
        )


def crack_density(phi, grad_phi, l0):
    """Regularized crack surface density 3/8 (phi/l0 + l0 |grad phi|^2)."""
    phi = np.asarray(phi, dtype=float)
    grad_phi = np.asarray(grad_phi, dtype=float)
    if l0 <= 0.0:
        raise ValueError("l0 must be positive")
    grad_sq = np.sum(grad_phi**2, axis=-1) if grad_phi.ndim else grad_phi**2
    return 0.375 * (phi / l0 + l0 * grad_sq)


def apply_precrack(mesh, phase, p0, p1, half_bandwidth, through_axis=None):
    """Seed a crack: nodes within ``half_bandwidth`` of segment p0-p1 get
    phi = 1 in both time levels (locked in by irreversibility).

    ``through_axis`` drops one coordinate from the distance computation so
    a 3-D crack plane can be seeded from its in-plane trace.
    """
    X = mesh.nodes
    keep = [k for k in range(mesh.dim) if k != through_axis]
    Xp = X[:, keep]
    a = np.asarray(p0, dtype=float)[keep] if len(p0) == mesh.dim else np.asarray(p0, dtype=float)
    b = np.asarray(p1, dtype=float)[keep] if len(p1) == mesh.dim else np.asarray(p1, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        t = np.zeros(len(Xp))
    else:
        t = np.clip((Xp - a) @ ab / denom, 0.0, 1.0)
    dist = np.linalg.norm(Xp - (a + t[:, None] * ab), axis=1)
    sel = dist <= half_bandwidth + 1.0e-12
    if not np.any(sel):
        warnings.warn("pre-crack selected no nodes (geometry/mesh mismatch?)")
        return phase
    phase.phi[sel] = 1.0
    phase.phi_n[sel] = 1.0
    return phase


def solve_phase_subproblem(K, f, free_mask=None, atol=1.0e-14):
    """Nonnegative increment of the phase field from K dphi = f.

    Parameters
    ----------
    K : csr_matrix, symmetric positive definite on the free DOFs
    f : ndarray
    free_mask : bool array or None
        DOFs excluded from the solve (detached nodes) stay at zero.

    Returns
    -------
    dphi : ndarray with dphi >= 0; on the final active set dphi = 0 and the
    residual multiplier is nonnegative, on the inactive set K dphi = f.
    """
    n = f.size
    if free_mask is None:
        idx = np.arange(n)
    else:
        idx = np.flatnonzero(free_mask)
    dphi = np.zeros(n)
    if idx.size == 0:
        return dphi
    ff = f[idx]
    if ff.max() <= 0.0:
        return dphi  # nothing wants to grow: bound optimum
    Kf = K[idx][:, idx].tocsc()
    nf = idx.size
    active = np.zeros(nf, dtype=bool)
    rel_tol = 1.0e-12 * max(np.abs(ff).max(), 1.0e-30)
    d = np.zeros(nf)
    max_iter = 2 * nf + 10
    for _ in range(max_iter):
        inact = np.flatnonzero(~active)
        d[:] = 0.0
        if inact.size:
            sub = Kf[inact][:, inact]
            d[inact] = splu(sub).solve(ff[inact])
        neg = (~active) & (d < -atol)
        if neg.any():
            active |= neg
            continue
        np.clip(d, 0.0, None, out=d)
        # KKT check: active entries must carry a nonnegative multiplier.
        mu = Kf @ d - ff
        release = active & (mu < -rel_tol)
        if release.any():
            active &= ~release
            continue
        dphi[idx] = d
        return dphi
    raise ActiveSetError(
        "active-set loop failed to terminate; phase matrix likely not SPD"
    )


def delete_damaged_elements(mesh, phase, phi_c):
    """Flag live elements whose max nodal phi reaches phi_c as deleted.

    Returns the indices newly deleted in this call; deletion is monotone.
    """
    if not 0.9 <= phi_c < 1.0:
        raise ValueError("phi_c must lie in [0.9, 1.0)")
    live = mesh.live_elements()
    if live.size == 0:
        return np.array([], dtype=int)
    elem_max = phase.phi[mesh.elements[live]].max(axis=1)
    newly = live[elem_max >= phi_c]
    mesh.deleted[newly] = True
    return newly


def _phase_tables(mesh, live):
    """Quadrature geometry of the undeformed mesh for scalar-field work."""
    coords = mesh.nodes[mesh.elements[live]]
    kin = el.kinematics_batch(mesh.kind, coords, np.zeros_like(coords))
    return kin


def surface_energy(mesh, phase, gc, l0, live=None):
    """Assembled regularized surface energy, integral of Gc * gamma."""
    if live is None:
        live = mesh.live_elements()
    kin = _phase_tables(mesh, live)
    phi_e = phase.phi[mesh.elements[live]]
    phi_qp = np.einsum("qm,em->eq", kin.N, phi_e)
    grad = np.einsum("eqmd,em->eqd", kin.gradN, phi_e)
    gamma = crack_density(phi_qp, grad, l0)
    gc_e = np.full(live.size, gc) if np.ndim(gc) == 0 else np.asarray(gc)[live]
    return float(np.einsum("e,eq,eq->", gc_e, gamma, kin.dV))


def relax_precrack(mesh, spec, phase, gc=None, mass_scale=1.0e-6, free_mask=None):
    """One bound-constrained minimization of the surface energy.

    Spreads a freshly seeded (binary) crack band into the regularized
    optimal profile before any load is applied.  A small mass term
    ``mass_scale * Gc / l0`` keeps the linear system definite without
    biasing the profile; the surface energy is quadratic in phi so a
    single solve is exact.
    """
    live = mesh.live_elements()
    kin = _phase_tables(mesh, live)
    conn = mesh.elements[live]
    phi_e = phase.phi[conn]
    if gc is None:
        gc_e = np.full(live.size, spec.Gc)
    else:
        gc_e = np.full(live.size, gc) if np.ndim(gc) == 0 else np.asarray(gc)[live]
    gce = gc_e[:, None]
    mass = mass_scale * gce / spec.l0

    grad = np.einsum("eqmd,em->eqd", kin.gradN, phi_e)
    f = -0.75 * spec.l0 * gce * np.einsum("eqmd,eqd,eq->em", kin.gradN, grad, kin.dV)
    f -= 0.375 * (gce / spec.l0) * np.einsum("qm,eq->em", kin.N, kin.dV)
    Ke = 0.75 * gce[..., None] * spec.l0 * np.einsum(
        "eqmd,eqnd,eq->emn", kin.gradN, kin.gradN, kin.dV
    )
    Ke += mass[..., None] * np.einsum("qm,qn,eq->emn", kin.N, kin.N, kin.dV)

    K = assemble_matrix(Ke, conn, mesh.n_nodes)
    fv = assemble_vector(f, conn, mesh.n_nodes)
    dphi = solve_phase_subproblem(K, fv, free_mask)
    phase.phi = np.minimum(phase.phi + dphi, 1.0)
    phase.phi_n = phase.phi.copy()
    return phase
