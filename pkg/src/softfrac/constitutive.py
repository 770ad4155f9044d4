"""Hyperelastic constitutive models evaluated in principal stretches.

Energy, second Piola-Kirchhoff stress and the fourth-order material
tangent are obtained from the spectral decomposition of the right
Cauchy-Green tensor C.  The deviatoric-model family covers Ogden,
Mooney-Rivlin and neo-Hookean energies plus a compressible neo-Hookean
variant used by the single-field comparison element.  The volumetric
response of the mixed formulation is carried separately by a pressure
degree of freedom and enters through :func:`degraded_stress_tangent`.

All routines are pure functions of their arguments and broadcast over
leading batch axes, so an entire quadrature-point batch is evaluated in
one call.  Units are N and mm throughout (stress in N/mm^2).

Conventions
-----------
* Principal stretches are sorted descending.
* ``dirs[..., :, a]`` is the unit eigenvector paired with ``lam[..., a]``.
* Eigenvalue pairs closer than ``COINCIDENT_RTOL`` (relative, on the
  squared stretches) take the analytic limit branch of the tangent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ElementInversionError, InvalidDeformationError

__all__ = [
    "Model",
    "MaterialSpec",
    "SpectralState",
    "StressTangent",
    "spectral_decompose",
    "strain_energy",
    "pk2_stress",
    "material_tangent",
    "stress_and_tangent",
    "single_field_stress_tangent",
    "single_field_energy",
    "degradation",
    "incompressibility_relaxation",
    "degraded_stress_tangent",
    "volumetric_tangent",
    "cauchy_stress",
]

# Relative gap on squared stretches below which a pair counts as coincident.
COINCIDENT_RTOL = 1.0e-8

# Unordered index pairs matching SpectralState.degenerate columns.
STRETCH_PAIRS = ((0, 1), (0, 2), (1, 2))


class Model(enum.Enum):
    """Supported strain-energy functions."""

    NEO_HOOKEAN = "neo_hookean"
    MOONEY_RIVLIN = "mooney_rivlin"
    OGDEN = "ogden"
    COMPRESSIBLE_NH = "compressible_nh"


@dataclass
class MaterialSpec:
    """Constitutive model selection plus all scalar material parameters.

    Parameters not applicable to the chosen model may be left ``None``;
    consistency relations fill the gaps:

    * neo-Hookean: ``c1 = mu / 2``
    * Mooney-Rivlin: ``mu = 2 * (c1 + c2)``
    * Ogden: ``mu = 0.5 * sum(mu_a * m_a)``
    * ``kappa0 = 2 * mu * (1 + nu) / (3 * (1 - 2 * nu))`` when ``nu`` is given.

    Attributes
    ----------
    model : Model
    mu : float
        Effective shear modulus, N/mm^2.
    c1, c2 : float
        Invariant-form coefficients, N/mm^2.
    ogden_pairs : tuple of (mu_a, m_a)
    nu : float or None
        Poisson ratio, strictly below 0.5.
    kappa0 : float
        Bulk modulus of the intact material, N/mm^2.
    Gc : float
        Critical energy release rate, N/mm.
    l0 : float
        Phase-field regularization length, mm.
    eta : float
        Artificial viscosity, N*s/mm^2.
    epsilon : float
        Residual stiffness retained at full damage.
    """

    model: Model
    mu: float | None = None
    c1: float | None = None
    c2: float | None = None
    ogden_pairs: tuple = ()
    nu: float | None = None
    kappa0: float | None = None
    Gc: float = 1.0
    l0: float = 1.0
    eta: float = 0.0
    epsilon: float = 1.0e-6

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = Model(self.model)
        if self.model is Model.NEO_HOOKEAN:
            if self.c1 is None and self.mu is None:
                raise ValueError("neo-Hookean model needs mu or c1")
            if self.c1 is None:
                self.c1 = 0.5 * self.mu
            if self.mu is None:
                self.mu = 2.0 * self.c1
        elif self.model is Model.MOONEY_RIVLIN:
            if self.c1 is None or self.c2 is None:
                raise ValueError("Mooney-Rivlin model needs c1 and c2")
            self.mu = 2.0 * (self.c1 + self.c2)
        elif self.model is Model.OGDEN:
            if not self.ogden_pairs:
                raise ValueError("Ogden model needs at least one (mu_a, m_a) pair")
            self.ogden_pairs = tuple((float(m), float(a)) for m, a in self.ogden_pairs)
            self.mu = 0.5 * sum(m * a for m, a in self.ogden_pairs)
        elif self.model is Model.COMPRESSIBLE_NH:
            if self.mu is None:
                raise ValueError("compressible neo-Hookean model needs mu")
        if self.kappa0 is None:
            if self.nu is None:
                raise ValueError("provide kappa0 or nu")
            if not self.nu < 0.5:
                raise ValueError("nu must be strictly below 0.5")
            self.kappa0 = 2.0 * self.mu * (1.0 + self.nu) / (3.0 * (1.0 - 2.0 * self.nu))
        if self.mu <= 0.0:
            raise ValueError("shear modulus must be positive")
        if self.kappa0 <= 0.0:
            raise ValueError("bulk modulus must be positive")
        if self.Gc <= 0.0 or self.l0 <= 0.0:
            raise ValueError("Gc and l0 must be positive")
        if self.eta < 0.0:
            raise ValueError("viscosity must be nonnegative")
        if not 0.0 <= self.epsilon < 1.0e-2:
            raise ValueError("epsilon must satisfy 0 <= epsilon << 1")


@dataclass
class SpectralState:
    """Spectral decomposition of a right Cauchy-Green tensor batch.

    ``lam`` holds principal stretches sorted descending, ``dirs`` the
    matching orthonormal directions as columns, and ``degenerate`` flags
    the pairs (0,1), (0,2), (1,2) whose squared stretches coincide within
    ``COINCIDENT_RTOL``.
    """

    lam: np.ndarray
    dirs: np.ndarray
    degenerate: np.ndarray


@dataclass
class StressTangent:
    """Stress/tangent bundle: undegraded, degraded and volumetric parts."""

    S_tilde: np.ndarray
    C_tilde: np.ndarray
    S_hat: np.ndarray = None
    C_hat: np.ndarray = None
    S_vol: np.ndarray = None
    C_vol: np.ndarray = None


def spectral_decompose(C, rtol=COINCIDENT_RTOL):
    """Decompose symmetric positive definite C into a SpectralState.

    Parameters
    ----------
    C : ndarray, shape (..., 3, 3)
        Right Cauchy-Green tensor(s).

    Raises
    ------
    InvalidDeformationError
        If any eigenvalue of C is nonpositive.
    """
    C = np.asarray(C, dtype=float)
    lam2, vecs = np.linalg.eigh(C)
    if np.any(lam2 <= 0.0):
        raise InvalidDeformationError(
            f"C is not positive definite (min eigenvalue {lam2.min():.3e})"
        )
    lam2 = lam2[..., ::-1]
    dirs = vecs[..., ::-1]
    gap_tol = rtol * lam2[..., 0]
    degenerate = np.stack(
        [np.abs(lam2[..., a] - lam2[..., b]) < gap_tol for a, b in STRETCH_PAIRS],
        axis=-1,
    )
    return SpectralState(lam=np.sqrt(lam2), dirs=dirs, degenerate=degenerate)


# ---------------------------------------------------------------------------
# Energy derivatives with respect to the principal stretches.
# Each helper returns (psi, psi_a, psi_ab) with shapes (...,), (..., 3) and
# (..., 3, 3).
# ---------------------------------------------------------------------------


def _terms_neo_hookean(c1, lam):
    psi = c1 * (np.sum(lam**2, axis=-1) - 3.0)
    psi_a = 2.0 * c1 * lam
    psi_ab = np.zeros(lam.shape + (3,))
    idx = np.arange(3)
    psi_ab[..., idx, idx] = 2.0 * c1
    return psi, psi_a, psi_ab


def _terms_mooney_rivlin(c1, c2, lam):
    psi = c1 * (np.sum(lam**2, axis=-1) - 3.0) + c2 * (np.sum(lam**-2, axis=-1) - 3.0)
    psi_a = 2.0 * c1 * lam - 2.0 * c2 * lam**-3
    psi_ab = np.zeros(lam.shape + (3,))
    idx = np.arange(3)
    psi_ab[..., idx, idx] = 2.0 * c1 + 6.0 * c2 * lam**-4
    return psi, psi_a, psi_ab


def _terms_ogden(pairs, lam):
    psi = np.zeros(lam.shape[:-1])
    psi_a = np.zeros_like(lam)
    diag = np.zeros_like(lam)
    for mu_a, m_a in pairs:
        psi = psi + (mu_a / m_a) * (np.sum(lam**m_a, axis=-1) - 3.0)
        psi_a = psi_a + mu_a * lam ** (m_a - 1.0)
        diag = diag + mu_a * (m_a - 1.0) * lam ** (m_a - 2.0)
    psi_ab = np.zeros(lam.shape + (3,))
    idx = np.arange(3)
    psi_ab[..., idx, idx] = diag
    return psi, psi_a, psi_ab


def _terms_compressible_nh(mu, lam):
    # mu/2 (tr C - 3) - mu ln J with ln J = sum(ln lam_a)
    lnJ = np.sum(np.log(lam), axis=-1)
    psi = 0.5 * mu * (np.sum(lam**2, axis=-1) - 3.0) - mu * lnJ
    psi_a = mu * lam - mu / lam
    psi_ab = np.zeros(lam.shape + (3,))
    idx = np.arange(3)
    psi_ab[..., idx, idx] = mu + mu / lam**2
    return psi, psi_a, psi_ab


def _terms_single_field(mu, kappa, lam):
    # Full single-field energy: mu/2 (tr C - 3) - mu ln J + kappa/2 (ln J)^2.
    lnJ = np.sum(np.log(lam), axis=-1)
    psi = 0.5 * mu * (np.sum(lam**2, axis=-1) - 3.0) - mu * lnJ + 0.5 * kappa * lnJ**2
    psi_a = mu * lam - mu / lam + kappa * lnJ[..., None] / lam
    inv = 1.0 / lam
    psi_ab = kappa * inv[..., :, None] * inv[..., None, :]
    idx = np.arange(3)
    psi_ab[..., idx, idx] += mu + (mu - kappa * lnJ[..., None]) / lam**2
    return psi, psi_a, psi_ab


def _energy_terms(spec, lam):
    if spec.model is Model.NEO_HOOKEAN:
        return _terms_neo_hookean(spec.c1, lam)
    if spec.model is Model.MOONEY_RIVLIN:
        return _terms_mooney_rivlin(spec.c1, spec.c2, lam)
    if spec.model is Model.OGDEN:
        return _terms_ogden(spec.ogden_pairs, lam)
    if spec.model is Model.COMPRESSIBLE_NH:
        return _terms_compressible_nh(spec.mu, lam)
    raise ValueError(f"unknown model {spec.model}")


def _spectral_stress(lam, dirs, psi_a):
    s = psi_a / lam  # principal PK2 values
    return s, np.einsum("...a,...ia,...ja->...ij", s, dirs, dirs)


def _spectral_tangent(lam, dirs, degenerate, psi_a, psi_ab):
    """Assemble the fourth-order tangent from stretch derivatives.

    The off-diagonal shear blocks use the divided difference of the
    principal stresses; coincident pairs switch to its analytic limit to
    avoid catastrophic cancellation.
    """
    s = psi_a / lam
    inv = 1.0 / lam
    # ds_ab = d s_a / d lam_b
    ds = psi_ab * inv[..., :, None]
    idx = np.arange(3)
    ds[..., idx, idx] -= psi_a * inv**2
    # First sum: (1/lam_b) ds_a/dlam_b on N_a x N_a x N_b x N_b.
    D = ds * inv[..., None, :]

    lam2 = lam**2
    g = np.zeros_like(D)
    for k, (a, b) in enumerate(STRETCH_PAIRS):
        deg = degenerate[..., k]
        gap = lam2[..., b] - lam2[..., a]
        safe_gap = np.where(deg, 1.0, gap)
        distinct = (s[..., b] - s[..., a]) / safe_gap
        # L'Hopital limit of the divided difference at lam_a == lam_b.
        limit = 0.5 * (ds[..., b, b] - ds[..., a, b]) * inv[..., b]
        coef = np.where(deg, limit, distinct)
        g[..., a, b] = coef
        g[..., b, a] = coef

    N = dirs
    C4 = np.einsum("...ab,...ia,...ja,...kb,...lb->...ijkl", D, N, N, N, N)
    C4 += np.einsum("...ab,...ia,...jb,...ka,...lb->...ijkl", g, N, N, N, N)
    C4 += np.einsum("...ab,...ia,...jb,...kb,...la->...ijkl", g, N, N, N, N)
    return C4


def strain_energy(spec, state):
    """Deviatoric-model energy density psi_tilde(lam1, lam2, lam3)."""
    psi, _, _ = _energy_terms(spec, state.lam)
    return psi


def pk2_stress(spec, state):
    """Undegraded second Piola-Kirchhoff stress, shape (..., 3, 3)."""
    _, psi_a, _ = _energy_terms(spec, state.lam)
    _, S = _spectral_stress(state.lam, state.dirs, psi_a)
    return S


def material_tangent(spec, state):
    """Undegraded material tangent 2 dS/dC, shape (..., 3, 3, 3, 3)."""
    _, psi_a, psi_ab = _energy_terms(spec, state.lam)
    return _spectral_tangent(state.lam, state.dirs, state.degenerate, psi_a, psi_ab)


def stress_and_tangent(spec, state, need_tangent=True):
    """Energy, stress and (optionally) tangent in one spectral pass."""
    psi, psi_a, psi_ab = _energy_terms(spec, state.lam)
    _, S = _spectral_stress(state.lam, state.dirs, psi_a)
    C4 = None
    if need_tangent:
        C4 = _spectral_tangent(state.lam, state.dirs, state.degenerate, psi_a, psi_ab)
    return psi, S, C4


def single_field_energy(spec, state):
    """Energy of the single-field compressible neo-Hookean element."""
    psi, _, _ = _terms_single_field(spec.mu, spec.kappa0, state.lam)
    return psi


def single_field_stress_tangent(spec, state, need_tangent=True):
    """Stress/tangent of the full single-field energy (no pressure DOF)."""
    _, psi_a, psi_ab = _terms_single_field(spec.mu, spec.kappa0, state.lam)
    _, S = _spectral_stress(state.lam, state.dirs, psi_a)
    C4 = None
    if need_tangent:
        C4 = _spectral_tangent(state.lam, state.dirs, state.degenerate, psi_a, psi_ab)
    return S, C4


def degradation(phi, epsilon):
    """Stiffness degradation g = (1 - phi)^2 + epsilon and dg/dphi.

    Raises
    ------
    ValueError
        If phi lies outside [0, 1] (callers clamp first).
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < -1.0e-12) or np.any(phi > 1.0 + 1.0e-12):
        raise ValueError("phase field value outside [0, 1]")
    g = (1.0 - phi) ** 2 + epsilon
    dg = -2.0 * (1.0 - phi)
    return g, dg


def incompressibility_relaxation(phi, epsilon, exponent=4):
    """Effective multiplier applied to the volumetric constraint.

    The default quartic exponent releases the constraint of damaged
    material faster than the quadratic stiffness degradation; exponent 2
    reproduces the non-relaxed variant used for regression comparisons.
    """
    phi = np.asarray(phi, dtype=float)
    return (1.0 - phi) ** exponent + epsilon


def volumetric_tangent(p, J, Cinv, factor):
    """Constraint part of the tangent, 2 d(S_vol)/dC at fixed p and phi."""
    pj = np.asarray(factor * p * J)[..., None, None, None, None]
    term = np.einsum("...ij,...kl->...ijkl", Cinv, Cinv)
    sym = np.einsum("...ik,...jl->...ijkl", Cinv, Cinv) + np.einsum(
        "...il,...jk->...ijkl", Cinv, Cinv
    )
    return pj * (term - sym)


def degraded_stress_tangent(spec, state, phi, p, J, Cinv, vol_exponent=4,
                            need_tangent=True):
    """Degraded stress/tangent pair plus the volumetric constraint parts.

    Returns a :class:`StressTangent` with ``S_hat = g * S_tilde``,
    ``C_hat = g * C_tilde``, ``S_vol = f * J * p * Cinv`` and the matching
    ``C_vol``, where ``g`` is the quadratic degradation and ``f`` the
    relaxation factor of :func:`incompressibility_relaxation`.
    """
    J = np.asarray(J, dtype=float)
    if np.any(J <= 0.0):
        bad = np.flatnonzero(J <= 0.0)
        raise ElementInversionError(
            f"nonpositive Jacobian at {bad.size} quadrature point(s)", elements=bad
        )
    psi, S_tilde, C_tilde = stress_and_tangent(spec, state, need_tangent)
    g, _ = degradation(phi, spec.epsilon)
    f = incompressibility_relaxation(phi, spec.epsilon, vol_exponent)
    gg = np.asarray(g)[..., None, None]
    ff = np.asarray(f * p * J)[..., None, None]
    S_hat = gg * S_tilde
    S_vol = ff * Cinv
    C_hat = None
    C_vol = None
    if need_tangent:
        C_hat = np.asarray(g)[..., None, None, None, None] * C_tilde
        C_vol = volumetric_tangent(p, J, Cinv, f)
    return StressTangent(S_tilde=S_tilde, C_tilde=C_tilde, S_hat=S_hat,
                         C_hat=C_hat, S_vol=S_vol, C_vol=C_vol)


def cauchy_stress(F, P):
    """Cauchy stress sigma = J^-1 P F^T from the first PK stress."""
    F = np.asarray(F, dtype=float)
    P = np.asarray(P, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0.0):
        raise InvalidDeformationError("det F <= 0 in Cauchy stress push-forward")
    return np.einsum("...ik,...jk->...ij", P, F) / J[..., None, None]
