"""Kinematic-uniform-BC homogenization, stress averaging, apparent stiffness
extraction and the analytic bounds used to validate it.

Cell solves are linear-elastic (damage states are excluded here).  Individual
cell solves are independent; ensemble reductions run in a fixed order so
repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from polymicro import bc
from polymicro.materials import isotropic_matrix, rotate_reduced
from polymicro.mesh import boundary_extract
from polymicro.system import (apply_dirichlet, assemble_global,
                              element_stresses, solve_linear)
from polymicro import bem as bem_mod


class HomogenizationError(Exception):
    pass


class EmptyEnsembleError(HomogenizationError):
    pass


UNIT_MACRO_STRAINS = (np.array([1.0, 0.0, 0.0]),
                      np.array([0.0, 1.0, 0.0]),
                      np.array([0.0, 0.0, 1.0]))


def kubc_displacements(macro_strain, boundary):
    """Dirichlet set u_i = eps_ij x_j on the given (nodeId, xy) boundary list;
    the Voigt shear is split symmetrically."""
    e = np.asarray(macro_strain, dtype=float)
    A = np.array([[e[0], 0.5 * e[2]], [0.5 * e[2], e[1]]])
    out = []
    for node, xy in boundary:
        u = A @ xy
        out.append((2 * node, float(u[0])))
        out.append((2 * node + 1, float(u[1])))
    return out


def average_stress(model, cache, U, omegas=None):
    """Volume-averaged Voigt stress: element-wise constant stresses over the
    VEM part plus boundary-traction integrals over each BEM inclusion; the
    total volume includes the inclusion areas."""
    _, sig = element_stresses(cache, U, omegas)
    total = np.zeros(3)
    vol = float(cache.areas.sum())
    total += sig.T @ cache.areas
    for se in model.super_elements:
        u, t = se.boundary_solution(U)
        total += bem_mod.boundary_stress_average(se.region, t)
        vol += se.region.area
    return total / vol


@dataclass
class ApparentStiffness:
    C: np.ndarray
    asymmetry: float
    cell_id: str = ""
    bc_kind: str = "KUBC"

    @property
    def symmetric(self):
        return 0.5 * (self.C + self.C.T)


def apparent_stiffness(model, cache=None, cell_id=""):
    """Column-wise apparent stiffness from the three unit macro-strain KUBC
    solves (Voigt columns xx, yy, xy).  The three cases share one
    factorization of the constrained operator."""
    import scipy.sparse.linalg as spla

    system, cache = assemble_global(model, cache)
    boundary = boundary_extract(model.mesh)
    n = system.n_dofs
    fixed = np.array(sorted({2 * i + c for i, _ in boundary for c in (0, 1)}),
                     dtype=np.int64)
    free = np.setdiff1d(np.arange(n), fixed)
    K = system.K.tocsc()
    Kff = K[free][:, free].tocsc()
    Kfc = K[free][:, fixed].tocsc()
    lu = spla.splu(Kff)
    C = np.zeros((3, 3))
    for j, e in enumerate(UNIT_MACRO_STRAINS):
        bc_map = dict(kubc_displacements(e, boundary))
        vals = np.array([bc_map[d] for d in fixed])
        U = np.zeros(n)
        U[fixed] = vals
        U[free] = lu.solve(-(Kfc @ vals))
        C[:, j] = average_stress(model, cache, U)
    asym = float(np.linalg.norm(C - C.T) / max(np.linalg.norm(C), 1e-300))
    return ApparentStiffness(C=C, asymmetry=asym, cell_id=cell_id)


@dataclass
class EnsembleStats:
    samples: list
    mean_C: np.ndarray
    moduli: dict                   # name -> (min, mean, max)
    symmetry_class: str

    @property
    def n_samples(self):
        return len(self.samples)


def _isotropic_moduli_from_C(C):
    """(E, G) of a plane-strain isotropic matrix by least squares over the
    four independent entries: C11 = C22 = lam + 2 mu, C12 = lam, C33 = mu."""
    # unknowns (lam, mu); rows: C11, C22, C12, C21, C33
    A = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    y = np.array([C[0, 0], C[1, 1], C[0, 1], C[1, 0], C[2, 2]])
    lam, mu = np.linalg.lstsq(A, y, rcond=None)[0]
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    return float(E), float(mu)


def _transverse_moduli_from_C(C):
    """(K23, G23) read from an isotropized transverse matrix:
    K = (C11 + C12)/2 with C11 first averaged with C22, G = C33."""
    c11 = 0.5 * (C[0, 0] + C[1, 1])
    c12 = 0.5 * (C[0, 1] + C[1, 0])
    return float(0.5 * (c11 + c12)), float(C[2, 2])


def extract_moduli(C, symmetry_class):
    if symmetry_class == "isotropic":
        E, G = _isotropic_moduli_from_C(C)
        return {"E": E, "G": G}
    if symmetry_class == "transverse":
        K, G = _transverse_moduli_from_C(C)
        return {"K23": K, "G23": G}
    raise HomogenizationError(f"unknown symmetry class {symmetry_class!r}")


def ensemble_moduli(samples, symmetry_class):
    """Ensemble mean of the apparent matrices and the moduli extracted from
    it, with per-sample scatter (min/mean/max per modulus)."""
    if not samples:
        raise EmptyEnsembleError("no samples")
    mean_C = np.mean([s.C for s in samples], axis=0)
    per_sample = [extract_moduli(s.symmetric, symmetry_class) for s in samples]
    names = per_sample[0].keys()
    mean_vals = extract_moduli(0.5 * (mean_C + mean_C.T), symmetry_class)
    moduli = {}
    for name in names:
        vals = np.array([p[name] for p in per_sample])
        moduli[name] = (float(vals.min()), mean_vals[name], float(vals.max()))
    return EnsembleStats(samples=list(samples), mean_C=mean_C, moduli=moduli,
                         symmetry_class=symmetry_class)


# ---------------------------------------------------------------------------
# analytic bounds
# ---------------------------------------------------------------------------

def _moduli_from_isotropic_plane_strain(C):
    mu = C[2, 2]
    lam = C[0, 1]
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    return float(E), float(mu)


def reuss_voigt_cubic(cubic, n_theta=3600):
    """First-order bounds of the planar aggregate of one cubic crystal:
    Voigt averages the rotated stiffness uniformly over orientation, Reuss
    inverts the averaged compliance.  Returns {'E': (lo, hi), 'G': (lo, hi)}.
    """
    thetas = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
    Cacc = np.zeros((3, 3))
    Sacc = np.zeros((3, 3))
    for th in thetas:
        Cr = rotate_reduced(cubic, th).C
        Cacc += Cr
        Sacc += np.linalg.inv(Cr)
    Cv = Cacc / n_theta
    Cr_ = np.linalg.inv(Sacc / n_theta)
    Ev, Gv = _moduli_from_isotropic_plane_strain(Cv)
    Er, Gr = _moduli_from_isotropic_plane_strain(Cr_)
    return {"E": (Er, Ev), "G": (Gr, Gv)}


def voigt_average_cubic_closed_form(C11, C12, C44):
    """Closed-form orientation average of the plane-strain cubic stiffness."""
    chi = C11 - C12 - 2.0 * C44
    return np.array([
        [C11 - chi / 4.0, C12 + chi / 4.0, 0.0],
        [C12 + chi / 4.0, C11 - chi / 4.0, 0.0],
        [0.0, 0.0, C44 + chi / 4.0],
    ])


def plane_strain_bulk_shear(E, nu):
    """(k23, G) of an isotropic phase: k23 = lam + mu."""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam + mu, mu


def hashin_hill_bounds(E_m, nu_m, E_f, nu_f, vf):
    """Two-phase transverse bounds on (K23, G23) of a fiber composite.

    Standard composite-cylinder expressions in terms of the phase
    plane-strain bulk and shear moduli; both pairs collapse to the matrix
    values in the dilute limit and coincide for identical phases.
    """
    k_m, g_m = plane_strain_bulk_shear(E_m, nu_m)
    k_f, g_f = plane_strain_bulk_shear(E_f, nu_f)
    # order so phase 1 is the compliant one: the "lower" expression then
    # really is the lower bound
    if k_f < k_m or g_f < g_m:
        k_m, k_f, g_m, g_f, vf = k_f, k_m, g_f, g_m, 1.0 - vf

    def k_bound(k1, k2, g1, v2):
        return k1 + v2 / (1.0 / (k2 - k1) + (1.0 - v2) / (k1 + g1)) \
            if k2 != k1 else k1

    def g_bound(g1, g2, k1, v2):
        if g2 == g1:
            return g1
        return g1 + v2 / (1.0 / (g2 - g1)
                          + (1.0 - v2) * (k1 + 2.0 * g1) / (2.0 * g1 * (k1 + g1)))

    k_lo = k_bound(k_m, k_f, g_m, vf)
    k_hi = k_bound(k_f, k_m, g_f, 1.0 - vf)
    g_lo = g_bound(g_m, g_f, k_m, vf)
    g_hi = g_bound(g_f, g_m, k_f, 1.0 - vf)
    return {"K23": (min(k_lo, k_hi), max(k_lo, k_hi)),
            "G23": (min(g_lo, g_hi), max(g_lo, g_hi))}


def analytic_bounds(kind, **constants):
    """Dispatch: kind = 'reuss_voigt_cubic' (C11, C12, C44) or
    'hashin_hill' (E_m, nu_m, E_f, nu_f, vf)."""
    if kind == "reuss_voigt_cubic":
        from polymicro.materials import cubic_plane_strain
        cubic = cubic_plane_strain(constants["C11"], constants["C12"],
                                   constants["C44"])
        return reuss_voigt_cubic(cubic, constants.get("n_theta", 3600))
    if kind == "hashin_hill":
        return hashin_hill_bounds(constants["E_m"], constants["nu_m"],
                                  constants["E_f"], constants["nu_f"],
                                  constants["vf"])
    raise HomogenizationError(f"unknown bound kind {kind!r}")
