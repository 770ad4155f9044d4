"""Total-Lagrangian element kinematics and the mixed Q1/P0 blocks.

Everything operates on batches: ``coords``/``u`` carry shape
``(n_elems, n_nodes, dim)`` and the returned residual/stiffness blocks
stack the element systems along the first axis.  Thin single-element
wrappers preserve the scalar API used by the tests.

Sign convention: the element "forces" ``f_*`` are the negated residuals
of the weak form, so the Newton update solves ``K * delta = f`` with the
stiffness blocks being the exact Jacobians of the residuals.

Voigt order is XX, YY, ZZ, YZ, XZ, XY.  Strain-like rows of ``B_X``
carry doubled shear entries; stress-like columns are plain components,
so ``B_X^T S_voigt`` reproduces the tensor contraction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import constitutive as cst
from .errors import ElementInversionError, MeshError

__all__ = [
    "ElementSystem",
    "quadrature",
    "shape_functions",
    "element_kinematics",
    "element_residuals_mixed",
    "element_stiffness_mixed",
    "element_residual_stiffness_Q1S",
    "condense_pressure",
    "condense_pressure_batch",
    "mixed_systems",
    "single_field_systems",
    "kinematics_batch",
    "tensor_to_voigt",
    "tangent_to_voigt",
]

VOIGT = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
# 2-D (plane strain) keeps the XX, YY, XY rows of the 3-D tables.
VOIGT_2D = (0, 1, 5)

_Q4_CORNERS = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)
_H8_CORNERS = np.array(
    [
        (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
        (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
    ],
    dtype=float,
)


@dataclass
class ElementSystem:
    """Residual and tangent blocks of one mixed element."""

    f_u: np.ndarray
    f_p: float
    f_phi: np.ndarray
    K_uu: np.ndarray
    K_up: np.ndarray
    K_pp: float
    K_phiphi: np.ndarray


def shape_functions(kind, xi):
    """Shape values and parent-space gradients at one parent point.

    Returns
    -------
    N : (m,) values, dN : (m, dim) derivatives dN_i/dxi_j.
    """
    xi = np.asarray(xi, dtype=float)
    if kind == "Q4":
        corners = _Q4_CORNERS
    elif kind == "H8":
        corners = _H8_CORNERS
    else:
        raise MeshError(f"unsupported element kind {kind!r}")
    terms = 1.0 + corners * xi  # (m, dim)
    N = terms.prod(axis=1) / 2.0 ** corners.shape[1]
    dN = np.empty_like(corners)
    for d in range(corners.shape[1]):
        others = np.prod(np.delete(terms, d, axis=1), axis=1)
        dN[:, d] = corners[:, d] * others / 2.0 ** corners.shape[1]
    return N, dN


@lru_cache(maxsize=None)
def quadrature(kind):
    """Full Gauss rule (2 points per axis): points (q, dim), weights (q,)."""
    g = 1.0 / np.sqrt(3.0)
    if kind == "Q4":
        pts = np.array([(-g, -g), (g, -g), (g, g), (-g, g)])
    elif kind == "H8":
        pts = np.array([s * g for s in _H8_CORNERS])
    else:
        raise MeshError(f"unsupported element kind {kind!r}")
    return pts, np.ones(len(pts))


@lru_cache(maxsize=None)
def _parent_tables(kind):
    """Shape values/gradients tabulated at the quadrature points."""
    pts, w = quadrature(kind)
    N = np.empty((len(pts), len(_Q4_CORNERS) if kind == "Q4" else 8))
    dN = np.empty(N.shape + (pts.shape[1],))
    for q, xi in enumerate(pts):
        N[q], dN[q] = shape_functions(kind, xi)
    return N, dN, w


def tensor_to_voigt(T):
    """Symmetric (..., 3, 3) tensor to plain-component Voigt (..., 6)."""
    i = [p[0] for p in VOIGT]
    j = [p[1] for p in VOIGT]
    return T[..., i, j]


def tangent_to_voigt(C4):
    """Fourth-order tangent to its (..., 6, 6) Voigt matrix."""
    out = np.empty(C4.shape[:-4] + (6, 6))
    for a, (i, j) in enumerate(VOIGT):
        for b, (k, l) in enumerate(VOIGT):
            out[..., a, b] = C4[..., i, j, k, l]
    return out


class Kinematics:
    """Per-quadrature-point kinematic quantities for an element batch."""

    __slots__ = ("N", "gradN", "F", "J", "C", "Cinv", "dV", "detJ0")

    def __init__(self, N, gradN, F, J, C, Cinv, dV, detJ0):
        self.N = N
        self.gradN = gradN
        self.F = F
        self.J = J
        self.C = C
        self.Cinv = Cinv
        self.dV = dV
        self.detJ0 = detJ0


def kinematics_batch(kind, coords, u, check_inversion=True):
    """Deformation measures at every quadrature point of a batch.

    Parameters
    ----------
    coords, u : ndarray (E, m, dim)
        Reference coordinates and displacements per element.

    Raises
    ------
    MeshError
        Nonpositive reference Jacobian (broken mesh).
    ElementInversionError
        det F <= 0 at any quadrature point (caller cuts the load step).
    """
    N, dN, w = _parent_tables(kind)
    dim = coords.shape[-1]
    jac = np.einsum("ema,qmb->eqab", coords, dN)
    detJ0 = np.linalg.det(jac)
    if np.any(detJ0 <= 0.0):
        raise MeshError("nonpositive reference Jacobian in the parent map")
    invjac = np.linalg.inv(jac)
    gradN = np.einsum("qmb,eqba->eqma", dN, invjac)
    H = np.einsum("ema,eqmb->eqab", u, gradN)
    F = np.zeros(H.shape[:2] + (3, 3))
    F[..., :dim, :dim] = H
    F[..., 0, 0] += 1.0
    F[..., 1, 1] += 1.0
    F[..., 2, 2] += 1.0
    J = np.linalg.det(F)
    if check_inversion and np.any(J <= 0.0):
        bad = np.unique(np.nonzero(J <= 0.0)[0])
        raise ElementInversionError(
            f"element inversion at {bad.size} element(s)", elements=bad
        )
    C = np.einsum("...ki,...kj->...ij", F, F)
    Cinv = np.linalg.inv(C)
    dV = detJ0 * w[None, :]
    return Kinematics(N, gradN, F, J, C, Cinv, dV, detJ0)


def b_matrix(kin, dim):
    """Strain-displacement matrix B_X, shape (E, q, n_voigt, m*dim).

    Rows are the Voigt components of the variation of the Green-Lagrange
    strain (doubled shears); columns follow node-major DOF ordering.
    """
    gradN = kin.gradN
    F = kin.F
    E, q, m, _ = gradN.shape
    rows = VOIGT if dim == 3 else [VOIGT[k] for k in VOIGT_2D]
    B = np.zeros((E, q, len(rows), m, dim))
    for r, (i, j) in enumerate(rows):
        blk = np.einsum("eqm,eqr->eqmr", gradN[..., j], F[..., :dim, i])
        if i != j:
            blk = blk + np.einsum("eqm,eqr->eqmr", gradN[..., i], F[..., :dim, j])
        B[:, :, r] = blk
    return B.reshape(E, q, len(rows), m * dim)


def geometric_gradient_matrix(kin, dim):
    """Gradient operator mapping u DOFs to vec(grad u), (E, q, dim*dim, m*dim)."""
    gradN = kin.gradN
    E, q, m, _ = gradN.shape
    G = np.zeros((E, q, dim * dim, m, dim))
    for r in range(dim):
        for s in range(dim):
            G[:, :, r * dim + s, :, r] = gradN[..., s]
    return G.reshape(E, q, dim * dim, m * dim)


def _stress_voigt(S, dim):
    v = tensor_to_voigt(S)
    return v if dim == 3 else v[..., VOIGT_2D]


def _tangent_voigt(C4, dim):
    v = tangent_to_voigt(C4)
    if dim == 3:
        return v
    idx = np.asarray(VOIGT_2D)
    return v[..., idx[:, None], idx[None, :]]


class MixedBatch:
    """Batched element systems plus the auxiliary fields monitors need."""

    __slots__ = (
        "f_u", "f_p", "f_phi", "K_uu", "K_up", "K_pp", "K_phiphi",
        "psi", "J", "phi_qp", "dV", "volume",
    )

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


def mixed_systems(spec, kind, coords, u, p, phi, phi_n, dt, gc=None,
                  vol_exponent=4, need_tangent=True, need_phase=True,
                  need_phase_tangent=None):
    """Residual and tangent blocks of the mixed element batch.

    Parameters
    ----------
    spec : MaterialSpec
    coords, u : (E, m, dim)
    p : (E,) element pressures
    phi, phi_n : (E, m) nodal phase values, current and previous step
    dt : pseudo-time step for the viscous term
    gc : (E,) per-element critical energy release rate (defaults to spec.Gc)
    vol_exponent : 4 for the relaxed constraint, 2 for the legacy variant

    Returns
    -------
    MixedBatch
    """
    E, m, dim = coords.shape
    if need_phase_tangent is None:
        need_phase_tangent = need_tangent and need_phase
    kin = kinematics_batch(kind, coords, u)
    N = kin.N  # (q, m)
    dV = kin.dV
    if gc is None:
        gc = np.full(E, spec.Gc)
    gc_e = np.asarray(gc)[:, None]

    state = cst.spectral_decompose(kin.C)
    psi, S_tilde, C_tilde = cst.stress_and_tangent(spec, state, need_tangent)

    phi_qp = np.einsum("qm,em->eq", N, phi)
    phi_qp = np.clip(phi_qp, 0.0, 1.0)
    g = (1.0 - phi_qp) ** 2 + spec.epsilon
    n_exp = vol_exponent
    fvol = (1.0 - phi_qp) ** n_exp + spec.epsilon

    pJ = fvol * p[:, None] * kin.J
    S_total = g[..., None, None] * S_tilde + pJ[..., None, None] * kin.Cinv
    Sv = _stress_voigt(S_total, dim)

    B = b_matrix(kin, dim)
    f_u = -np.einsum("eqvk,eqv,eq->ek", B, Sv, dV)

    con = fvol * (kin.J - 1.0) - p[:, None] / spec.kappa0
    f_p = -np.einsum("eq,eq->e", con, dV)

    out = MixedBatch(f_u=f_u, f_p=f_p, psi=psi, J=kin.J, phi_qp=phi_qp,
                     dV=dV, volume=dV.sum(axis=1))

    if need_phase:
        phin_qp = np.einsum("qm,em->eq", N, phi_n)
        grad_phi = np.einsum("eqmd,em->eqd", kin.gradN, phi)
        drive = 2.0 * (1.0 - phi_qp) * psi \
            + n_exp * (1.0 - phi_qp) ** (n_exp - 1) * p[:, None] * (kin.J - 1.0)
        f_phi = np.einsum("eq,qm,eq->em", drive, N, dV)
        f_phi -= 0.75 * gc_e * spec.l0 * np.einsum(
            "eqmd,eqd,eq->em", kin.gradN, grad_phi, dV
        )
        f_phi -= 0.375 * (gc_e / spec.l0) * np.einsum("qm,eq->em", N, dV)
        f_phi -= (spec.eta / dt) * np.einsum(
            "eq,qm,eq->em", phi_qp - phin_qp, N, dV
        )
        out.f_phi = f_phi

    if need_tangent:
        C_total = g[..., None, None, None, None] * C_tilde \
            + cst.volumetric_tangent(p[:, None], kin.J, kin.Cinv, fvol)
        Cv = _tangent_voigt(C_total, dim)
        K_mat = np.einsum("eqvk,eqvw,eqwl,eq->ekl", B, Cv, B, dV)
        geo = np.einsum(
            "eqma,eqab,eqnb,eq->emn",
            kin.gradN, S_total[..., :dim, :dim], kin.gradN, dV,
        )
        K_geo = np.einsum("emn,rs->emrns", geo, np.eye(dim)).reshape(
            E, m * dim, m * dim
        )
        out.K_uu = K_mat + K_geo
        cv = _stress_voigt(kin.Cinv, dim)
        out.K_up = np.einsum("eqvk,eqv,eq->ek", B, cv, fvol * kin.J * dV)
        out.K_pp = -out.volume / spec.kappa0

    if need_phase_tangent:
        mass_coef = 2.0 * psi \
            + n_exp * (n_exp - 1) * (1.0 - phi_qp) ** (n_exp - 2) \
            * p[:, None] * (kin.J - 1.0) \
            + spec.eta / dt
        K_phi = np.einsum("eq,qm,qn,eq->emn", mass_coef, N, N, dV)
        K_phi += 0.75 * gc_e[..., None] * spec.l0 * np.einsum(
            "eqmd,eqnd,eq->emn", kin.gradN, kin.gradN, dV
        )
        out.K_phiphi = K_phi

    return out


def single_field_systems(spec, kind, coords, u, need_tangent=True):
    """Residual/tangent of the single-field compressible element batch."""
    E, m, dim = coords.shape
    kin = kinematics_batch(kind, coords, u)
    state = cst.spectral_decompose(kin.C)
    S, C4 = cst.single_field_stress_tangent(spec, state, need_tangent)
    Sv = _stress_voigt(S, dim)
    B = b_matrix(kin, dim)
    f_u = -np.einsum("eqvk,eqv,eq->ek", B, Sv, kin.dV)
    K_uu = None
    if need_tangent:
        Cv = _tangent_voigt(C4, dim)
        K_mat = np.einsum("eqvk,eqvw,eqwl,eq->ekl", B, Cv, B, kin.dV)
        geo = np.einsum(
            "eqma,eqab,eqnb,eq->emn",
            kin.gradN, S[..., :dim, :dim], kin.gradN, kin.dV,
        )
        K_uu = K_mat + np.einsum("emn,rs->emrns", geo, np.eye(dim)).reshape(
            E, m * dim, m * dim
        )
    return f_u, K_uu, kin


def condense_pressure_batch(K_uu, K_up, K_pp, f_u, f_p):
    """Schur complement eliminating the element-constant pressure."""
    if np.any(np.abs(K_pp) < 1.0e-300):
        raise ZeroDivisionError("singular pressure condensation (K_pp ~ 0)")
    inv = 1.0 / K_pp
    K = K_uu - inv[:, None, None] * np.einsum("ek,el->ekl", K_up, K_up)
    f = f_u - inv[:, None] * K_up * f_p[:, None]
    return K, f


def recover_pressure_batch(K_up, K_pp, f_p, du_e):
    """Element pressure increment from the condensed displacement solve."""
    return (f_p - np.einsum("ek,ek->e", K_up, du_e)) / K_pp


# ---------------------------------------------------------------------------
# Single-element wrappers (scalar API used by the tests).
# ---------------------------------------------------------------------------


def element_kinematics(coords, u_e, xi):
    """Kinematics of one element at one parent point.

    Returns
    -------
    (F, J, C, Cinv, B_X, calB) with F embedded as 3x3 (plane strain keeps
    F33 = 1), B_X in Voigt layout and calB the gradient operator feeding
    the geometric stiffness.
    """
    coords = np.asarray(coords, dtype=float)
    u_e = np.asarray(u_e, dtype=float)
    dim = coords.shape[1]
    kind = "Q4" if dim == 2 else "H8"
    N, dN = shape_functions(kind, xi)
    jac = coords.T @ dN
    detJ0 = np.linalg.det(jac)
    if detJ0 <= 0.0:
        raise MeshError("nonpositive reference Jacobian")
    gradN = dN @ np.linalg.inv(jac)
    H = u_e.T @ gradN
    F = np.eye(3)
    F[:dim, :dim] += H
    J = np.linalg.det(F)
    if J <= 0.0:
        raise ElementInversionError("element inversion", elements=np.array([0]))
    C = F.T @ F
    Cinv = np.linalg.inv(C)

    kin = Kinematics(
        N=N[None, :],
        gradN=gradN[None, None],
        F=F[None, None],
        J=np.array([[J]]),
        C=C[None, None],
        Cinv=Cinv[None, None],
        dV=np.array([[detJ0]]),
        detJ0=np.array([[detJ0]]),
    )
    B = b_matrix(kin, dim)[0, 0]
    calB = geometric_gradient_matrix(kin, dim)[0, 0]
    return F, J, C, Cinv, B, calB


def element_residuals_mixed(spec, coords, u_e, p_e, phi_e, phi_n_e, dt,
                            gc=None, vol_exponent=4):
    """(f_u, f_p, f_phi) of one mixed element."""
    coords = np.asarray(coords, dtype=float)
    kind = "Q4" if coords.shape[1] == 2 else "H8"
    out = mixed_systems(
        spec, kind, coords[None], np.asarray(u_e, dtype=float)[None],
        np.array([p_e], dtype=float), np.asarray(phi_e, dtype=float)[None],
        np.asarray(phi_n_e, dtype=float)[None], dt,
        gc=None if gc is None else np.array([gc]),
        vol_exponent=vol_exponent, need_tangent=False,
    )
    return out.f_u[0], out.f_p[0], out.f_phi[0]


def element_stiffness_mixed(spec, coords, u_e, p_e, phi_e, dt, gc=None,
                            vol_exponent=4):
    """(K_uu, K_up, K_pp, K_phiphi) of one mixed element."""
    coords = np.asarray(coords, dtype=float)
    kind = "Q4" if coords.shape[1] == 2 else "H8"
    phi_e = np.asarray(phi_e, dtype=float)
    out = mixed_systems(
        spec, kind, coords[None], np.asarray(u_e, dtype=float)[None],
        np.array([p_e], dtype=float), phi_e[None], phi_e[None], dt,
        gc=None if gc is None else np.array([gc]),
        vol_exponent=vol_exponent, need_tangent=True,
    )
    return out.K_uu[0], out.K_up[0], out.K_pp[0], out.K_phiphi[0]


def element_system_mixed(spec, coords, u_e, p_e, phi_e, phi_n_e, dt, gc=None,
                         vol_exponent=4):
    """Full :class:`ElementSystem` of one mixed element."""
    coords = np.asarray(coords, dtype=float)
    kind = "Q4" if coords.shape[1] == 2 else "H8"
    out = mixed_systems(
        spec, kind, coords[None], np.asarray(u_e, dtype=float)[None],
        np.array([p_e], dtype=float), np.asarray(phi_e, dtype=float)[None],
        np.asarray(phi_n_e, dtype=float)[None], dt,
        gc=None if gc is None else np.array([gc]),
        vol_exponent=vol_exponent, need_tangent=True,
    )
    return ElementSystem(
        f_u=out.f_u[0], f_p=out.f_p[0], f_phi=out.f_phi[0],
        K_uu=out.K_uu[0], K_up=out.K_up[0], K_pp=out.K_pp[0],
        K_phiphi=out.K_phiphi[0],
    )


def element_residual_stiffness_Q1S(spec, coords, u_e):
    """Single-field residual/tangent of one element (no pressure, no damage)."""
    coords = np.asarray(coords, dtype=float)
    kind = "Q4" if coords.shape[1] == 2 else "H8"
    f, K, _ = single_field_systems(
        spec, kind, coords[None], np.asarray(u_e, dtype=float)[None]
    )
    return f[0], K[0]


def condense_pressure(es):
    """Schur complement of one :class:`ElementSystem`.

    Returns (K_uu_condensed, f_u_condensed); the pressure increment is
    recoverable as ``dp = (f_p - K_up . du) / K_pp``.
    """
    K, f = condense_pressure_batch(
        es.K_uu[None], es.K_up[None], np.array([es.K_pp]),
        es.f_u[None], np.array([es.f_p]),
    )
    return K[0], f[0]
