"""Global DOF management, assembly, boundary conditions and solvers.

Node i owns DOFs (2i, 2i+1).  Element matrices are precomputed once and
scattered through cached COO index arrays; the damage driver rescales the
cached data by the per-element secant factor (1 - omega) instead of
re-forming element matrices.  BEM super-elements contribute dense blocks at
their mapped interface DOFs with the sign that balances interface
equilibrium.  Scatter order is fixed, so assembly is bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from polymicro import materials as mat
from polymicro import vem
from polymicro.mesh import polygon_geometry

log = logging.getLogger("polymicro")


class SolveError(Exception):
    pass


class SingularSystemError(SolveError):
    pass


class ConflictingBCError(SolveError):
    pass


class StepUnderflowError(SolveError):
    """Adaptive load step halved below its minimum."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class Model:
    """A mesh plus everything needed to assemble it."""

    mesh: object
    materials: dict                     # material_id -> ReducedElasticity
    super_elements: list = field(default_factory=list)
    tau_factor: float = 0.5
    thickness: float = 1.0
    damage: dict = field(default_factory=dict)   # material_id -> DamageParams
    nonlocal_table: object = None       # regularization.NonlocalTable or None
    crack_band: object = None           # regularization.CrackBandRule or None

    def material_of(self, element):
        region = self.mesh.region(element.region_id)
        return self.materials[region.material_id]


class ElementCache:
    """Per-element geometry, projector, pristine stiffness and DOF scatter
    data, grouped by vertex count for batched evaluation."""

    def __init__(self, model):
        mesh = model.mesh
        self.n_dofs = 2 * mesh.n_nodes
        self.elements = mesh.elements
        self.geoms = []
        self.projectors = []
        self.K0 = []
        self.dofs = []
        self.areas = np.zeros(mesh.n_elements)
        self.centroids = np.zeros((mesh.n_elements, 2))
        self.damage_params = []
        t = model.thickness
        for k, el in enumerate(mesh.elements):
            geom = polygon_geometry(el, mesh)
            elastic = model.material_of(el)
            stiff = vem.element_stiffness(geom, elastic, model.tau_factor)
            proj = vem.projector_matrix(geom)
            dof = np.empty(2 * el.n_vertices, dtype=np.int64)
            ids = np.asarray(el.vertex_ids, dtype=np.int64)
            dof[0::2] = 2 * ids
            dof[1::2] = 2 * ids + 1
            self.geoms.append(geom)
            self.projectors.append(proj)
            self.K0.append(t * stiff.K)
            self.dofs.append(dof)
            self.areas[k] = geom.area
            self.centroids[k] = geom.centroid
            region = mesh.region(el.region_id)
            self.damage_params.append(model.damage.get(region.material_id))

        # flat COO pattern for fast scaled re-assembly
        ii, jj, slices = [], [], []
        start = 0
        for K, dof in zip(self.K0, self.dofs):
            n = dof.size
            ii.append(np.repeat(dof, n))
            jj.append(np.tile(dof, n))
            slices.append((start, start + n * n))
            start += n * n
        self.coo_i = np.concatenate(ii) if ii else np.zeros(0, dtype=np.int64)
        self.coo_j = np.concatenate(jj) if jj else np.zeros(0, dtype=np.int64)
        self.k0_data = (np.concatenate([K.ravel() for K in self.K0])
                        if self.K0 else np.zeros(0))
        self.slices = slices
        self.block_sizes = np.array([dof.size ** 2 for dof in self.dofs],
                                    dtype=np.int64)
        self.damage_mask = np.array([p is not None for p in self.damage_params],
                                    dtype=bool)
        self.elastics = [model.material_of(el) for el in mesh.elements]
        # stacked per-vertex-count groups for batched strain/force evaluation
        self.groups = []
        by_m = {}
        for e, el in enumerate(mesh.elements):
            by_m.setdefault(el.n_vertices, []).append(e)
        for m, ids in sorted(by_m.items()):
            ids = np.asarray(ids, dtype=np.int64)
            self.groups.append({
                "ids": ids,
                "dofs": np.stack([self.dofs[e] for e in ids]),
                "P": np.stack([self.projectors[e].P for e in ids]),
                "K0": np.stack([self.K0[e] for e in ids]),
                "C": np.stack([self.elastics[e].C for e in ids]),
            })


@dataclass
class GlobalSystem:
    K: sp.csr_matrix
    F: np.ndarray
    fixed_dofs: np.ndarray = None     # int indices
    fixed_values: np.ndarray = None

    @property
    def n_dofs(self):
        return self.F.shape[0]


def assemble_global(model, cache=None, scale=None, external_force=None):
    """Assemble K (and F) from cached element matrices and super-elements.

    ``scale`` is the per-element secant factor (1 - omega); None means
    pristine.  Returns (GlobalSystem without BCs, cache).
    """
    if cache is None:
        cache = ElementCache(model)
    n = cache.n_dofs
    if scale is None:
        data = cache.k0_data
    else:
        data = cache.k0_data * np.repeat(scale, cache.block_sizes)
    parts_i, parts_j, parts_d = [cache.coo_i], [cache.coo_j], [data]
    for se in model.super_elements:
        dof = se.global_dofs()
        m = dof.size
        parts_i.append(np.repeat(dof, m))
        parts_j.append(np.tile(dof, m))
        parts_d.append((model.thickness * se.K).ravel())
    K = sp.coo_matrix(
        (np.concatenate(parts_d), (np.concatenate(parts_i), np.concatenate(parts_j))),
        shape=(n, n)).tocsr()
    F = np.zeros(n) if external_force is None else np.asarray(external_force, float)
    return GlobalSystem(K=K, F=F), cache


def apply_dirichlet(system, bcs):
    """Attach Dirichlet data (dof -> value).  Conflicting prescriptions on
    one DOF beyond 1e-12 raise ConflictingBCError."""
    seen = {}
    for dof, value in bcs:
        if dof in seen and abs(seen[dof] - value) > 1e-12 * max(1.0, abs(value)):
            raise ConflictingBCError(
                f"dof {dof} prescribed twice: {seen[dof]} vs {value}")
        seen[dof] = value
    idx = np.fromiter(seen.keys(), dtype=np.int64)
    val = np.fromiter((seen[i] for i in idx), dtype=float)
    order = np.argsort(idx)
    system.fixed_dofs = idx[order]
    system.fixed_values = val[order]
    return system


def solve_linear(system):
    """Direct sparse solve with row/column elimination of the fixed DOFs.

    The residual of the reduced system is checked against 1e-10 of the
    right-hand side; failure raises SingularSystemError.
    """
    n = system.n_dofs
    if system.fixed_dofs is None or system.fixed_dofs.size == 0:
        raise SingularSystemError("no constraints: rigid modes unconstrained")
    fixed = system.fixed_dofs
    free = np.setdiff1d(np.arange(n), fixed, assume_unique=False)
    U = np.zeros(n)
    U[fixed] = system.fixed_values

    K = system.K.tocsc()
    Kff = K[free][:, free]
    rhs = system.F[free] - K[free][:, fixed] @ system.fixed_values
    try:
        Uf = spla.spsolve(Kff.tocsc(), rhs)
    except Exception as exc:             # umfpack/superlu signal singularity
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(Uf)):
        raise SingularSystemError("factorization produced non-finite values")
    res = np.linalg.norm(Kff @ Uf - rhs)
    ref = max(np.linalg.norm(rhs), np.linalg.norm(system.F), 1e-300)
    if res > 1e-8 * ref:
        raise SingularSystemError(f"solver residual {res:.3e} vs reference {ref:.3e}")
    U[free] = Uf
    return U


def reaction_forces(system, U):
    """R = K_full U - F on the constrained DOFs (dict dof -> reaction)."""
    R = system.K @ U - system.F
    return {int(d): float(R[d]) for d in system.fixed_dofs}


def element_strains(cache, U):
    """Projected constant strain per element, (n_el, 3)."""
    out = np.zeros((len(cache.elements), 3))
    for g in cache.groups:
        ue = U[g["dofs"]]
        out[g["ids"]] = np.einsum("gij,gj->gi", g["P"], ue)
    return out


def element_stresses(cache, U, omegas=None):
    """Nominal stress per element; damaged elements scaled by (1 - omega)."""
    eps = element_strains(cache, U)
    sig = np.zeros_like(eps)
    for g in cache.groups:
        sig[g["ids"]] = np.einsum("gij,gj->gi", g["C"], eps[g["ids"]])
    if omegas is not None:
        sig *= (1.0 - np.asarray(omegas))[:, None]
    return eps, sig


def internal_force(cache, model, U, scale=None):
    f = np.zeros(cache.n_dofs)
    for g in cache.groups:
        fe = np.einsum("gij,gj->gi", g["K0"], U[g["dofs"]])
        if scale is not None:
            fe = fe * scale[g["ids"]][:, None]
        np.add.at(f, g["dofs"].ravel(), fe.ravel())
    for se in model.super_elements:
        dof = se.global_dofs()
        np.add.at(f, dof, model.thickness * (se.K @ U[dof]))
    return f


@dataclass
class LoadStepControl:
    """Adaptive displacement-control schedule for the nonlinear driver."""

    target: float = 1.0
    initial_step: float = 0.05
    min_step: float = 1e-5
    max_step: float = 0.25
    tol_rel: float = 1e-6
    max_iter: int = 50
    grow_iters: int = 5
    grow_factor: float = 1.5

    def __post_init__(self):
        if self.tol_rel <= 0 or self.min_step <= 0 or self.max_step < self.min_step:
            raise ValueError("inconsistent load step control")


@dataclass
class StepRecord:
    load_factor: float
    U: np.ndarray
    reactions: dict
    omega: np.ndarray
    r: np.ndarray
    iterations: int


def _damage_batches(cache):
    """Group damage-capable elements by material so the threshold evaluates
    vectorized; returns (batches, r0 array, rf array, law)."""
    n_el = len(cache.elements)
    r0 = np.zeros(n_el)
    rf = np.full(n_el, np.inf)
    law = None
    by_mat = {}
    for e in np.where(cache.damage_mask)[0]:
        p = cache.damage_params[e]
        r0[e] = p.r0
        rf[e] = p.rf
        if law is None:
            law = p.law
        elif law != p.law:
            raise SolveError("mixed damage laws in one model are not supported")
        key = id(cache.elastics[e].C), p.threshold
        by_mat.setdefault(key, (cache.elastics[e], p, []))[2].append(e)
    batches = [(el, p, np.asarray(ids, dtype=np.int64))
               for (el, p, ids) in by_mat.values()]
    return batches, r0, rf, law


def _update_damage_trial(cache, model, U, r_floor, batches, r0, rf, law):
    """Equivalent strains (nonlocal-averaged when configured), trial history
    and trial damage for the current iterate.

    ``r_floor`` is the running maximum over the committed history and the
    previous iterates of this increment: keeping the trial history monotone
    inside the correction loop stops the secant iteration from oscillating
    across the load peak."""
    n_el = len(cache.elements)
    tau = np.zeros(n_el)
    eps = element_strains(cache, U)
    for elastic, params, ids in batches:
        tau[ids] = mat.equivalent_strain_batch(eps[ids], elastic, params)
    if model.nonlocal_table is not None:
        tau = model.nonlocal_table.average(tau)
    r_trial = np.maximum(r_floor, np.where(cache.damage_mask, tau, 0.0))
    if law == mat.LINEAR:
        r_trial = np.where(cache.damage_mask, np.minimum(r_trial, rf), r_trial)
    omega = np.zeros(n_el)
    dmg = cache.damage_mask
    omega[dmg] = mat.damage_law_batch(r_trial[dmg], r0[dmg], rf[dmg], law)
    return tau, r_trial, omega


def incremental_solve(model, dirichlet_pattern, control, cache=None,
                      reaction_dofs=None, external_force=None, callback=None):
    """Displacement-controlled incremental-iterative driver.

    ``dirichlet_pattern`` maps dof -> unit value; each step prescribes
    load_factor * value.  Iterations use the secant stiffness
    (1 - omega) K0 with damage frozen during the linear solve and refreshed
    between iterations; history commits only at converged steps.  The step
    halves on failure and grows by ``grow_factor`` after fast convergence.
    Raises StepUnderflowError (carrying the partial history) if the step
    drops below its minimum.
    """
    if cache is None:
        cache = ElementCache(model)
    if model.crack_band is not None:
        model.crack_band.apply(cache)

    pattern_dofs = np.array(sorted(dirichlet_pattern), dtype=np.int64)
    pattern_vals = np.array([dirichlet_pattern[d] for d in pattern_dofs])
    n = cache.n_dofs
    free = np.setdiff1d(np.arange(n), pattern_dofs)
    F_ext = np.zeros(n) if external_force is None else np.asarray(external_force)

    n_el = len(cache.elements)
    r_committed = np.array([
        (p.r0 if p is not None else 0.0) for p in cache.damage_params])
    has_damage = bool(cache.damage_mask.any())
    if has_damage:
        dmg_batches, dmg_r0, dmg_rf, dmg_law = _damage_batches(cache)

    U = np.zeros(n)
    history = []
    lam = 0.0
    step = min(control.initial_step, control.max_step)
    ref_force = 0.0

    while lam < control.target - 1e-12:
        step = min(step, control.target - lam)
        lam_trial = lam + step
        U_trial = U.copy()
        U_trial[pattern_dofs] = lam_trial * pattern_vals

        converged = False
        omega = np.zeros(n_el)
        r_trial = r_committed.copy()
        r_iter = r_committed.copy()
        lu = None
        scale_used = None
        for it in range(control.max_iter + 1):
            if has_damage:
                _, r_trial, omega = _update_damage_trial(
                    cache, model, U_trial, r_iter,
                    dmg_batches, dmg_r0, dmg_rf, dmg_law)
                r_iter = r_trial
                scale = 1.0 - omega
            else:
                scale = None
            f_int = internal_force(cache, model, U_trial, scale)
            residual = F_ext - f_int
            ref = max(ref_force, np.linalg.norm(f_int), np.linalg.norm(F_ext), 1e-300)
            rnorm = np.linalg.norm(residual[free])
            if it > 0 and rnorm <= control.tol_rel * ref:
                converged = True
                n_iter = it
                break
            if it == control.max_iter:
                break
            # modified-Newton reuse: refactor only when the secant factors
            # moved appreciably; the residual stays exact either way.  The
            # iteration matrix keeps a residual stiffness so fully damaged
            # elements remain factorizable.
            refactor = (lu is None or scale_used is None
                        or (scale is not None
                            and np.abs(scale - scale_used).max() > 5e-4))
            if refactor:
                scale_K = None if scale is None else np.maximum(scale, 1e-8)
                sys_t, _ = assemble_global(model, cache, scale_K, None)
                try:
                    lu = spla.splu(sys_t.K.tocsc()[free][:, free])
                except Exception:
                    break
                scale_used = None if scale is None else scale.copy()
            dU = lu.solve(residual[free])
            if not np.all(np.isfinite(dU)):
                break
            U_trial[free] += dU

        if not converged:
            step *= 0.5
            if step < control.min_step:
                raise StepUnderflowError(
                    f"step underflow at load factor {lam:.6g}", history)
            log.debug("step rejected at lambda=%.5g, halving to %.3g", lam_trial, step)
            continue

        # commit
        lam = lam_trial
        U = U_trial
        r_committed = r_trial.copy()
        f_int = internal_force(cache, model, U,
                               (1.0 - omega) if has_damage else None)
        R_all = f_int - F_ext
        if reaction_dofs is None:
            reactions = {int(d): float(R_all[d]) for d in pattern_dofs}
        else:
            reactions = {int(d): float(R_all[d]) for d in reaction_dofs}
        ref_force = max(ref_force, np.linalg.norm(list(reactions.values()) or [0.0]),
                        np.linalg.norm(f_int))
        rec = StepRecord(load_factor=lam, U=U.copy(), reactions=reactions,
                         omega=omega.copy(), r=r_committed.copy(), iterations=n_iter)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if n_iter < control.grow_iters:
            step = min(step * control.grow_factor, control.max_step)
    return history
