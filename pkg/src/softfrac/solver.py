"""Load stepping and the staggered displacement-pressure / phase solution.

Each load step applies a boundary-displacement (or load-factor) increment
and then alternates

    1. a Newton solve of the (u, p) block with the crack field frozen,
       using per-element pressure condensation, and
    2. one bound-constrained solve of the phase subproblem with (u, p)
       frozen,

until the freshly assembled residuals drop below the convergence scales.
Failed steps are halved and retried up to ``max_cuts`` times.

Convergence measure.  Successive-residual ratios stall near fixed points
(the first variation of the crack energy is strictly negative wherever
the irreversibility bound binds), so the loop converges on run-scaled
absolute norms instead: the largest step-start residual norm seen so far
in the run sets the reference for each field, and the phase field uses
the bound-constrained optimality residual (driving components are zeroed
where the bound binds).  The per-iteration ratio diagnostics are still
logged.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import constitutive as cst
from . import elements as el
from .assembly import DofMap, assemble_matrix, assemble_vector, solve_reduced
from .errors import (
    ElementInversionError,
    NewtonError,
    SolverAbort,
    StaggeredError,
    StepFailure,
)
from .phasefield import (
    PhaseState,
    apply_precrack,
    delete_damaged_elements,
    relax_precrack,
    solve_phase_subproblem,
)

__all__ = [
    "SimulationConfig",
    "FieldState",
    "StepRecord",
    "DirichletBC",
    "TractionBC",
    "PreCrack",
    "Problem",
    "newton_solve_up",
    "staggered_step",
    "run_simulation",
    "reaction_force",
    "monitor_incompressibility",
]


@dataclass
class SimulationConfig:
    """Solution control for one simulation.

    ``increments`` is the load program: one boundary increment per step
    (mm for displacement control, load-factor units otherwise).
    """

    increments: tuple
    tol: float = 1.0e-4
    max_newton: int = 25
    max_staggered: int = 200
    dt: float = 1.0e-5
    cut_factor: float = 0.5
    max_cuts: int = 8
    delete_elements: bool = False
    phi_c: float = 0.96
    relax_incompressibility: bool = True
    relax_precrack: bool = True
    solve_phase: bool = True
    output_every: int = 10
    stop_when_broken: bool = False
    stop_reaction_fraction: float = 0.05

    def __post_init__(self):
        self.increments = tuple(float(v) for v in self.increments)
        if self.tol <= 0.0 or self.dt <= 0.0:
            raise ValueError("tol and dt must be positive")
        if self.max_newton < 1 or self.max_staggered < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0.0 < self.cut_factor < 1.0:
            raise ValueError("cut factor must lie in (0, 1)")
        if self.delete_elements and not 0.9 <= self.phi_c < 1.0:
            raise ValueError("phi_c must lie in [0.9, 1.0)")

    @property
    def vol_exponent(self):
        return 4 if self.relax_incompressibility else 2


@dataclass
class FieldState:
    """Primary fields at the current load level."""

    u: np.ndarray
    p: np.ndarray
    phase: PhaseState
    load_factor: float = 0.0
    step: int = 0

    def copy(self):
        return FieldState(
            u=self.u.copy(), p=self.p.copy(), phase=self.phase.copy(),
            load_factor=self.load_factor, step=self.step,
        )

    def restore(self, other):
        self.u[:] = other.u
        self.p[:] = other.p
        self.phase.phi[:] = other.phase.phi
        self.phase.phi_n[:] = other.phase.phi_n
        self.load_factor = other.load_factor
        self.step = other.step


@dataclass
class StepRecord:
    """Per-converged-step results plus solver diagnostics."""

    step: int
    delta_u: float
    reaction: float
    max_phi: float
    undamaged_volume_ratio: float
    staggered_iters: int
    newton_iters: int
    deleted_total: int = 0
    deleted_this_step: int = 0
    load_factor: float = 0.0
    min_J: float = np.nan
    max_constraint_residual: float = 0.0
    min_phi_increment: float = 0.0
    newton_traces: list = field(default_factory=list)
    res_ratios: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DirichletBC:
    """Prescribed displacement component: value = amplitude * load_factor."""

    nodes: np.ndarray
    component: int
    amplitude: float = 0.0


@dataclass(frozen=True)
class TractionBC:
    """Dead-load surface traction on reference faces, per unit load factor."""

    faces: np.ndarray  # (n, 2) element / local-face pairs
    traction: tuple


@dataclass(frozen=True)
class PreCrack:
    p0: tuple
    p1: tuple
    half_bandwidth: float
    through_axis: int | None = None


class _Scales:
    """Run-level residual reference norms (max step-start norm so far)."""

    def __init__(self):
        self.u = 0.0
        self.p = 0.0
        self.phi = 0.0

    def update(self, ru, rp, rphi):
        self.u = max(self.u, ru, 1.0e-12)
        self.p = max(self.p, rp, 1.0e-12)
        self.phi = max(self.phi, rphi, 1.0e-12)


class RunLog:
    """Plain-text run log; silent when constructed without a path."""

    def __init__(self, path=None):
        self._fh = open(path, "w") if path else None

    def write(self, text):
        if self._fh:
            self._fh.write(text + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _face_force(mesh, faces, traction, dofmap):
    """Assemble the dead-load nodal force of one traction patch."""
    F = np.zeros(dofmap.n_u)
    t = np.asarray(traction, dtype=float)
    g = 1.0 / np.sqrt(3.0)
    if mesh.kind == "H8":
        from .mesh import H8_FACES as FACES

        qp = np.array([(-g, -g), (g, -g), (g, g), (-g, g)])
        corners = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)
        for e, fid in faces:
            loc = FACES[fid]
            glob = mesh.elements[e][list(loc)]
            X = mesh.nodes[glob]
            for xi in qp:
                terms = 1.0 + corners * xi
                N = terms.prod(axis=1) / 4.0
                dN = np.stack(
                    [corners[:, 0] * terms[:, 1], corners[:, 1] * terms[:, 0]],
                    axis=1,
                ) / 4.0
                t1 = X.T @ dN[:, 0]
                t2 = X.T @ dN[:, 1]
                dA = np.linalg.norm(np.cross(t1, t2))
                for a, node in enumerate(glob):
                    F[dofmap.u_dof(node, np.arange(3))] += N[a] * t * dA
    else:
        from .mesh import Q4_EDGES as EDGES

        for e, fid in faces:
            loc = EDGES[fid]
            glob = mesh.elements[e][list(loc)]
            X = mesh.nodes[glob]
            half = 0.5 * np.linalg.norm(X[1] - X[0])
            for xi in (-g, g):
                N = np.array([0.5 * (1 - xi), 0.5 * (1 + xi)])
                for a, node in enumerate(glob):
                    F[dofmap.u_dof(node, np.arange(2))] += N[a] * t * half
    return F


class Problem:
    """One simulation: mesh, material, constraints and solution control.

    ``formulation`` selects the mixed Q1/P0 element ("mixed") or the
    standard single-field displacement element ("single") used for the
    locking comparison.  ``measure`` maps the converged state to the
    scalar stored in the history (defaults to the reaction force on the
    driving boundary set along its component).
    """

    def __init__(self, mesh, material, config, dirichlet=(), tractions=(),
                 precracks=(), gc_elem=None, formulation="mixed",
                 measure=None, probes=None, name="run"):
        self.mesh = mesh
        self.material = material
        self.config = config
        self.dirichlet = list(dirichlet)
        self.tractions = list(tractions)
        self.precracks = list(precracks)
        self.formulation = formulation
        self.name = name
        self.dofmap = DofMap(mesh)
        self.gc_elem = (
            np.full(mesh.n_elements, material.Gc)
            if gc_elem is None
            else np.asarray(gc_elem, dtype=float)
        )
        self.measure = measure
        self.probes = dict(probes or {})

        n_u = self.dofmap.n_u
        self._bc_mask = np.zeros(n_u, dtype=bool)
        self._bc_amp = np.zeros(n_u)
        for bc in self.dirichlet:
            dofs = self.dofmap.u_dof(bc.nodes, bc.component)
            self._bc_mask[dofs] = True
            self._bc_amp[dofs] = bc.amplitude
        self._f_ext_unit = np.zeros(n_u)
        for tr in self.tractions:
            self._f_ext_unit += _face_force(mesh, tr.faces, tr.traction, self.dofmap)

        self._detached_nodes = np.zeros(mesh.n_nodes, dtype=bool)
        self.refresh_live()

    # -- live-topology bookkeeping -------------------------------------

    def refresh_live(self):
        """Recompute live-element caches and auto-fix detached nodes."""
        self.live = self.mesh.live_elements()
        self._conn = self.mesh.elements[self.live]
        self._coords = self.mesh.nodes[self._conn]
        self._u_dofs = self.dofmap.u_elem_dofs[self.live]
        referenced = np.zeros(self.mesh.n_nodes, dtype=bool)
        referenced[self._conn.ravel()] = True
        newly = ~referenced & ~self._detached_nodes
        if self.mesh.n_elements and newly.any():
            warnings.warn(
                f"{int(newly.sum())} node(s) detached; DOFs frozen at last values"
            )
        self._detached_nodes = ~referenced
        fixed = self._bc_mask.copy()
        fixed |= np.repeat(self._detached_nodes, self.dofmap.dim)
        self.free_u = ~fixed
        self.free_phi = ~self._detached_nodes

    # -- state helpers ---------------------------------------------------

    def initial_state(self):
        """Zero fields with pre-cracks seeded (and optionally relaxed)."""
        state = FieldState(
            u=np.zeros((self.mesh.n_nodes, self.dofmap.dim)),
            p=np.zeros(self.mesh.n_elements),
            phase=PhaseState.zeros(self.mesh.n_nodes),
        )
        for pc in self.precracks:
            apply_precrack(
                self.mesh, state.phase, pc.p0, pc.p1, pc.half_bandwidth,
                pc.through_axis,
            )
        if self.precracks and self.config.relax_precrack and self.config.solve_phase:
            relax_precrack(
                self.mesh, self.material, state.phase, gc=self.gc_elem,
                free_mask=self.free_phi,
            )
        return state

    def apply_dirichlet(self, state):
        flat = state.u.reshape(-1)
        flat[self._bc_mask] = self._bc_amp[self._bc_mask] * state.load_factor

    # -- assembly ---------------------------------------------------------

    def _gather(self, state):
        u_e = state.u.reshape(-1)[self._u_dofs].reshape(self._coords.shape)
        phi_e = state.phase.phi[self._conn]
        phin_e = state.phase.phi_n[self._conn]
        p_e = state.p[self.live]
        return u_e, p_e, phi_e, phin_e

    def assemble_up(self, state, tangent=True):
        """Condensed displacement system of the current state.

        Returns (K or None, f_full, stash); ``f_full`` is the full-length
        condensed force vector (reactions live on the fixed DOFs), and the
        stash carries what pressure recovery and the norms need.
        """
        u_e, p_e, phi_e, phin_e = self._gather(state)
        if self.formulation == "single":
            f_e, K_e, _ = el.single_field_systems(
                self.material, self.mesh.kind, self._coords, u_e,
                need_tangent=tangent,
            )
            f_full = assemble_vector(f_e, self._u_dofs, self.dofmap.n_u)
            f_full += self._f_ext_unit * state.load_factor
            K = assemble_matrix(K_e, self._u_dofs, self.dofmap.n_u) if tangent else None
            stash = {"f_p": np.zeros(0)}
            return K, f_full, stash
        out = el.mixed_systems(
            self.material, self.mesh.kind, self._coords, u_e, p_e, phi_e,
            phin_e, self.config.dt, gc=self.gc_elem[self.live],
            vol_exponent=self.config.vol_exponent, need_tangent=tangent,
            need_phase=False,
        )
        if tangent:
            K_c, f_c = el.condense_pressure_batch(
                out.K_uu, out.K_up, out.K_pp, out.f_u, out.f_p
            )
            K = assemble_matrix(K_c, self._u_dofs, self.dofmap.n_u)
            stash = {
                "f_p": out.f_p, "K_up": out.K_up, "K_pp": out.K_pp,
            }
            f_full = assemble_vector(f_c, self._u_dofs, self.dofmap.n_u)
        else:
            K = None
            stash = {"f_p": out.f_p}
            f_full = assemble_vector(out.f_u, self._u_dofs, self.dofmap.n_u)
        f_full += self._f_ext_unit * state.load_factor
        return K, f_full, stash

    def assemble_phase(self, state):
        """Phase-field tangent/residual with (u, p) frozen."""
        u_e, p_e, phi_e, phin_e = self._gather(state)
        out = el.mixed_systems(
            self.material, self.mesh.kind, self._coords, u_e, p_e, phi_e,
            phin_e, self.config.dt, gc=self.gc_elem[self.live],
            vol_exponent=self.config.vol_exponent, need_tangent=False,
            need_phase=True, need_phase_tangent=True,
        )
        K = assemble_matrix(out.K_phiphi, self._conn, self.mesh.n_nodes)
        f = assemble_vector(out.f_phi, self._conn, self.mesh.n_nodes)
        return K, f

    def residual_norms(self, state):
        """(ru, rp, rphi_opt, rphi_full) of the freshly assembled state.

        ``ru`` is taken over free displacement DOFs, ``rphi_opt`` is the
        bound-constrained optimality norm of the phase residual.
        """
        u_e, p_e, phi_e, phin_e = self._gather(state)
        if self.formulation == "single":
            f_e, _, _ = el.single_field_systems(
                self.material, self.mesh.kind, self._coords, u_e,
                need_tangent=False,
            )
            f_full = assemble_vector(f_e, self._u_dofs, self.dofmap.n_u)
            f_full += self._f_ext_unit * state.load_factor
            return np.linalg.norm(f_full[self.free_u]), 0.0, 0.0, 0.0, f_full
        out = el.mixed_systems(
            self.material, self.mesh.kind, self._coords, u_e, p_e, phi_e,
            phin_e, self.config.dt, gc=self.gc_elem[self.live],
            vol_exponent=self.config.vol_exponent, need_tangent=False,
            need_phase=self.config.solve_phase,
        )
        f_full = assemble_vector(out.f_u, self._u_dofs, self.dofmap.n_u)
        f_full += self._f_ext_unit * state.load_factor
        ru = np.linalg.norm(f_full[self.free_u])
        rp = np.linalg.norm(out.f_p)
        rphi_opt = rphi_full = 0.0
        if self.config.solve_phase:
            f_phi = assemble_vector(out.f_phi, self._conn, self.mesh.n_nodes)
            # Remaining positive drive only: the monotone update may leave a
            # small negative residual behind (irreversibility), and saturated
            # nodes cannot grow further.
            viol = np.maximum(f_phi, 0.0)
            viol[~self.phase_free_mask(state)] = 0.0
            rphi_opt = np.linalg.norm(viol)
            rphi_full = np.linalg.norm(f_phi[self.free_phi])
        return ru, rp, rphi_opt, rphi_full, f_full

    def phase_free_mask(self, state):
        """Phase DOFs eligible to grow: attached and not saturated."""
        return self.free_phi & (state.phase.phi < 1.0 - 1.0e-9)

    # -- monitors ----------------------------------------------------------

    def constraint_residual(self, state):
        """Max element violation of the relaxed volume constraint,
        normalized by max(1, |p| / kappa0)."""
        if self.formulation == "single":
            return 0.0
        u_e, p_e, phi_e, _ = self._gather(state)
        kin = el.kinematics_batch(self.mesh.kind, self._coords, u_e)
        vol = kin.dV.sum(axis=1)
        Jbar = np.einsum("eq,eq->e", kin.J, kin.dV) / vol
        phibar = np.einsum("qm,em,eq->e", kin.N, phi_e, kin.dV) / vol
        fv = (1.0 - phibar) ** self.config.vol_exponent + self.material.epsilon
        resid = np.abs(fv * (Jbar - 1.0) - p_e / self.material.kappa0)
        scale = np.maximum(1.0, np.abs(p_e) / self.material.kappa0)
        return float((resid / scale).max()) if resid.size else 0.0


def newton_solve_up(problem, state, scales, log=None):
    """Newton iteration on the condensed displacement system.

    Returns the residual trace [(ru, rp), ...], one entry per assembled
    iterate (the first entry is the initial residual).
    """
    cfg = problem.config
    tol = cfg.tol
    trace = []
    K, f_full, stash = problem.assemble_up(state, tangent=True)
    ru = np.linalg.norm(f_full[problem.free_u])
    rp = np.linalg.norm(stash["f_p"])
    trace.append((ru, rp))
    for it in range(cfg.max_newton):
        if ru <= tol * scales.u and rp <= tol * scales.p:
            return trace
        du = solve_reduced(K, f_full, problem.free_u)
        if not np.all(np.isfinite(du)):
            raise NewtonError("non-finite Newton increment")
        du_mat = du.reshape(-1, problem.dofmap.dim)
        du_e = du[problem._u_dofs]
        score_old = max(ru / scales.u, rp / scales.p)
        # Backtracking on the scaled residual: accept the first step with
        # sufficient decrease, otherwise the best one seen.  Occasional mild
        # growth is tolerated; max_newton bounds any stall.
        best = None
        best_score = np.inf
        alpha = 1.0
        for _ in range(6):
            trial = state.copy()
            trial.u += alpha * du_mat
            if problem.formulation == "mixed":
                dp = el.recover_pressure_batch(
                    stash["K_up"], stash["K_pp"], stash["f_p"], alpha * du_e
                )
                trial.p[problem.live] += dp
            try:
                K2, f2, stash2 = problem.assemble_up(trial, tangent=True)
            except ElementInversionError:
                alpha *= 0.5
                continue
            ru2 = np.linalg.norm(f2[problem.free_u])
            rp2 = np.linalg.norm(stash2["f_p"])
            if not (np.isfinite(ru2) and np.isfinite(rp2)):
                alpha *= 0.5
                continue
            score = max(ru2 / scales.u, rp2 / scales.p)
            if score < best_score:
                best = (trial, K2, f2, stash2, ru2, rp2)
                best_score = score
            if score <= max(0.99 * score_old, tol):
                break
            alpha *= 0.5
        if best is None:
            raise NewtonError("line search failed (element inversion persists)")
        state.restore(best[0])
        K, f_full, stash, ru, rp = best[1], best[2], best[3], best[4], best[5]
        trace.append((ru, rp))
    if ru <= tol * scales.u and rp <= tol * scales.p:
        return trace
    raise NewtonError(
        f"no convergence in {cfg.max_newton} Newton iterations "
        f"(ru={ru:.3e}, rp={rp:.3e})"
    )


def staggered_step(problem, state, d_load, scales=None, log=None):
    """Advance one load step with the staggered scheme.

    Raises :class:`StepFailure` (state restored) when the Newton or
    staggered loop gives up, so the caller can cut the increment.
    """
    cfg = problem.config
    if scales is None:
        scales = _Scales()
    saved = state.copy()
    try:
        state.step += 1
        state.load_factor += d_load
        problem.apply_dirichlet(state)
        state.phase.phi_n = state.phase.phi.copy()

        ru0, rp0, rphi0, rphi_full0, _ = problem.residual_norms(state)
        scales.update(ru0, rp0, max(rphi0, 1.0e-10 * rphi_full0))
        prev = (max(ru0, 1e-300), max(rp0, 1e-300), max(rphi0, 1e-300))

        traces = []
        ratios = []
        newton_total = 0
        f_last = None
        converged = False
        for it in range(1, cfg.max_staggered + 1):
            tr = newton_solve_up(problem, state, scales, log)
            traces.append([r[0] for r in tr])
            newton_total += len(tr) - 1
            if cfg.solve_phase and problem.formulation == "mixed":
                K_phi, f_phi = problem.assemble_phase(state)
                dphi = solve_phase_subproblem(
                    K_phi, f_phi, problem.phase_free_mask(state)
                )
                state.phase.phi = np.minimum(state.phase.phi + dphi, 1.0)
            ru, rp, rphi, rphi_full, f_last = problem.residual_norms(state)
            ratios.append((
                max(ru / prev[0], rp / prev[1]),
                rphi / prev[2] if prev[2] > 0 else 0.0,
            ))
            prev = (max(ru, 1e-300), max(rp, 1e-300), max(rphi, 1e-300))
            if log:
                log.write(
                    f"  stagger {it}: newton={len(tr) - 1} ru={ru:.3e} "
                    f"rp={rp:.3e} rphi={rphi:.3e}"
                )
            phi_ok = (not cfg.solve_phase) or rphi <= max(
                cfg.tol * scales.phi, 1.0e-10 * max(rphi_full, 1.0)
            )
            if ru <= cfg.tol * scales.u and rp <= cfg.tol * scales.p and phi_ok:
                converged = True
                break
        if not converged:
            raise StaggeredError(
                f"staggered loop not converged in {cfg.max_staggered} iterations"
            )

        phi = state.phase.phi
        record = StepRecord(
            step=state.step,
            delta_u=d_load,
            reaction=0.0,
            max_phi=float(phi.max()) if phi.size else 0.0,
            undamaged_volume_ratio=1.0,
            staggered_iters=len(traces),
            newton_iters=newton_total,
            load_factor=state.load_factor,
            min_phi_increment=float((phi - state.phase.phi_n).min()) if phi.size else 0.0,
            newton_traces=traces,
            res_ratios=ratios,
        )
        ratio, min_J, max_dev = monitor_incompressibility(problem, state)
        record.undamaged_volume_ratio = ratio
        record.min_J = min_J
        record.max_constraint_residual = problem.constraint_residual(state)
        if problem.measure is not None:
            record.reaction = problem.measure(problem, state, f_last)
        for name, (node, comp) in problem.probes.items():
            record.probes[name] = float(state.u[node, comp])
        state.phase.max_history.append(record.max_phi)
        return record
    except (NewtonError, StaggeredError, ElementInversionError) as exc:
        state.restore(saved)
        raise StepFailure(str(exc)) from exc


def reaction_force(problem, state, nodes, component, f_full=None):
    """Sum of internal forces transmitted through constrained DOFs.

    With the force convention f = external - internal, the reaction along
    the given component is -sum(f) over the set's DOFs.
    """
    if f_full is None:
        _, f_full, _ = problem.assemble_up(state, tangent=False)
    dofs = problem.dofmap.u_dof(np.asarray(nodes), component)
    return float(-f_full[dofs].sum())


def monitor_incompressibility(problem, state, phi_threshold=0.1):
    """Volume ratio of the undamaged region plus J diagnostics.

    Returns (ratio, min_J_overall, max |J - 1| over undamaged points);
    undamaged means max nodal phi < ``phi_threshold``.
    """
    u_e, _, phi_e, _ = problem._gather(state)
    kin = el.kinematics_batch(
        problem.mesh.kind, problem._coords, u_e, check_inversion=False
    )
    min_J = float(kin.J.min()) if kin.J.size else 1.0
    undamaged = phi_e.max(axis=1) < phi_threshold
    if not undamaged.any():
        return 1.0, min_J, 0.0
    Jd = kin.J[undamaged]
    w = kin.dV[undamaged]
    ratio = float((Jd * w).sum() / w.sum())
    max_dev = float(np.abs(Jd - 1.0).max())
    return ratio, min_J, max_dev


def run_simulation(problem, log=None, on_step=None, on_abort=None):
    """Execute the full load program (mesh, pre-crack, step loop, deletion).

    ``on_step(record, state)`` fires after every converged step (output
    cadence is the caller's business); failed steps are cut by
    ``cut_factor`` up to ``max_cuts`` times before aborting.

    Returns the list of StepRecords; raises :class:`SolverAbort` carrying
    the partial history when a step cannot be completed.
    """
    cfg = problem.config
    state = problem.initial_state()
    scales = _Scales()
    records = []
    deleted_total = int(problem.mesh.deleted.sum())
    peak = 0.0

    pending = deque((inc, 0) for inc in cfg.increments)
    while pending:
        d, depth = pending.popleft()
        try:
            rec = staggered_step(problem, state, d, scales, log)
        except StepFailure as exc:
            if depth >= cfg.max_cuts:
                if log:
                    log.write(f"ABORT at load {state.load_factor:.6g}: {exc}")
                if on_abort:
                    on_abort(state, records)
                raise SolverAbort(
                    f"step failed after {cfg.max_cuts} cuts: {exc}", records
                ) from exc
            if log:
                log.write(
                    f"  step cut (depth {depth + 1}): d={d * cfg.cut_factor:.4g} ({exc})"
                )
            parts = int(round(1.0 / cfg.cut_factor))
            for _ in range(parts):
                pending.appendleft((d * cfg.cut_factor, depth + 1))
            continue

        if cfg.delete_elements and cfg.solve_phase:
            newly = delete_damaged_elements(problem.mesh, state.phase, cfg.phi_c)
            if newly.size:
                problem.refresh_live()
            rec.deleted_this_step = int(newly.size)
            deleted_total += int(newly.size)
            if log and newly.size:
                log.write(
                    f"  deletion: step {rec.step} removed {newly.size} "
                    f"(cumulative {deleted_total})"
                )
        rec.deleted_total = deleted_total
        records.append(rec)
        if log:
            log.write(
                f"step {rec.step}: load={rec.load_factor:.6g} "
                f"reaction={rec.reaction:.6g} max_phi={rec.max_phi:.4f} "
                f"vol_ratio={rec.undamaged_volume_ratio:.6f} "
                f"staggered={rec.staggered_iters} deleted=+{rec.deleted_this_step}"
            )
        if on_step:
            on_step(rec, state)

        peak = max(peak, abs(rec.reaction))
        if cfg.stop_when_broken and peak > 0.0 and rec.max_phi > 0.9:
            broken = abs(rec.reaction) < cfg.stop_reaction_fraction * peak
            if broken:
                n_comp, _ = problem.mesh.connected_components()
                if n_comp >= 2 or not cfg.delete_elements:
                    if log:
                        log.write("early stop: specimen broken")
                    break
    return records, state
