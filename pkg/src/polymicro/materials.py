"""Reduced 2D elasticity and the scalar isotropic damage model.

Stiffness matrices are 3x3 Voigt operators acting on (exx, eyy, 2exy) and
returning (sxx, syy, sxy).  Damage follows the effective-stress format
sigma = (1 - omega) * C0 * eps with a history variable r driven by an
equivalent-strain measure; all operations are pure, the caller owns one
DamageState per element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class MaterialError(Exception):
    pass


class NonPositiveDefiniteError(MaterialError):
    pass


@dataclass(frozen=True)
class ReducedElasticity:
    """3x3 reduced stiffness with its analysis-mode tag.

    ``E``/``nu`` are kept for isotropic materials because the damage
    thresholds need them (out-of-plane terms, energy normalization); they
    are None for anisotropic matrices.
    """

    C: np.ndarray
    mode: str                 # "plane_strain" | "plane_stress"
    E: float | None = None
    nu: float | None = None

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        object.__setattr__(self, "C", C)
        if C.shape != (3, 3):
            raise MaterialError("reduced stiffness must be 3x3")
        if not np.allclose(C, C.T, rtol=1e-12, atol=1e-12 * abs(C).max()):
            raise MaterialError("reduced stiffness must be symmetric")
        if self.mode not in ("plane_strain", "plane_stress"):
            raise MaterialError(f"unknown analysis mode {self.mode!r}")

    def require_spd(self):
        if np.any(np.linalg.eigvalsh(self.C) <= 0.0):
            raise NonPositiveDefiniteError("reduced stiffness not positive definite")
        return self


def isotropic_matrix(E, nu, mode="plane_strain"):
    """Reduced isotropic stiffness for the requested analysis mode."""
    if E <= 0.0:
        raise MaterialError(f"Young's modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise MaterialError(f"Poisson's ratio out of range, got {nu}")
    if mode == "plane_strain":
        f = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        C = f * np.array([
            [1.0 - nu, nu, 0.0],
            [nu, 1.0 - nu, 0.0],
            [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)],
        ])
    elif mode == "plane_stress":
        f = E / (1.0 - nu * nu)
        C = f * np.array([
            [1.0, nu, 0.0],
            [nu, 1.0, 0.0],
            [0.0, 0.0, 0.5 * (1.0 - nu)],
        ])
    else:
        raise MaterialError(f"unknown analysis mode {mode!r}")
    return ReducedElasticity(C=C, mode=mode, E=float(E), nu=float(nu)).require_spd()


def isotropic_from_transverse(E22, G23, mode="plane_strain"):
    """In-plane isotropic phase given its transverse Young and shear moduli."""
    nu = E22 / (2.0 * G23) - 1.0
    return isotropic_matrix(E22, nu, mode)


def cubic_plane_strain(C11, C12, C44):
    """Plane-strain reduced stiffness of a cubic crystal in its lattice frame."""
    if C11 <= abs(C12) or C44 <= 0.0:
        raise NonPositiveDefiniteError(
            f"cubic constants violate C11 > |C12|, C44 > 0: {C11}, {C12}, {C44}")
    C = np.array([
        [C11, C12, 0.0],
        [C12, C11, 0.0],
        [0.0, 0.0, C44],
    ], dtype=float)
    return ReducedElasticity(C=C, mode="plane_strain").require_spd()


def _strain_rotation(theta):
    """Voigt strain rotation (engineering shear) from global to a frame
    rotated by +theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([
        [c * c, s * s, c * s],
        [s * s, c * c, -c * s],
        [-2.0 * c * s, 2.0 * c * s, c * c - s * s],
    ])


def rotate_reduced(elastic, theta):
    """Stiffness, in global axes, of a material whose principal axes are
    rotated by +``theta``; a Voigt congruence, so symmetry and definiteness
    are preserved exactly.  Matches the component rotation
    C'_abcd = R_ai R_bj R_ck R_dl C_ijkl with R the +theta rotation."""
    R = _strain_rotation(theta)    # global strain -> material frame
    C = R.T @ elastic.C @ R
    C = 0.5 * (C + C.T)
    return replace(elastic, C=C)


# ---------------------------------------------------------------------------
# isotropic damage
# ---------------------------------------------------------------------------

MAZARS = "mazars"
ENERGY_BETA = "energy"
MELRO = "melro"
LINEAR = "linear"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class DamageParams:
    threshold: str             # mazars | energy | melro
    law: str                   # linear | exponential
    r0: float
    rf: float
    f_t: float | None = None   # tensile strength (energy kind)
    f_c: float | None = None   # compressive strength (energy kind)
    X_t: float | None = None   # epoxy tensile strength (melro kind)
    X_c: float | None = None   # epoxy compressive strength (melro kind)

    def __post_init__(self):
        if not (self.rf > self.r0 > 0.0):
            raise MaterialError(f"need rf > r0 > 0, got r0={self.r0}, rf={self.rf}")
        if self.threshold not in (MAZARS, ENERGY_BETA, MELRO):
            raise MaterialError(f"unknown threshold kind {self.threshold!r}")
        if self.law not in (LINEAR, EXPONENTIAL):
            raise MaterialError(f"unknown damage law {self.law!r}")
        if self.threshold == ENERGY_BETA and (self.f_t is None or self.f_c is None):
            raise MaterialError("energy threshold needs f_t and f_c")
        if self.threshold == MELRO and (self.X_t is None or self.X_c is None):
            raise MaterialError("melro threshold needs X_t and X_c")

    def with_rf(self, rf):
        return replace(self, rf=max(rf, self.r0 * (1.0 + 1e-12)))


@dataclass(frozen=True)
class DamageState:
    r: float = 0.0
    omega: float = 0.0


def _principal_strains(strain, elastic):
    """The three principal strains: in-plane pair plus the out-of-plane one
    (zero in plane strain, -nu/(1-nu)*(e1+e2) in plane stress)."""
    exx, eyy, gxy = strain
    c = 0.5 * (exx + eyy)
    rad = math.hypot(0.5 * (exx - eyy), 0.5 * gxy)
    e1, e2 = c + rad, c - rad
    if elastic.mode == "plane_strain":
        e3 = 0.0
    else:
        if elastic.nu is None:
            raise MaterialError("plane-stress out-of-plane strain needs an "
                                "isotropic material")
        e3 = -elastic.nu / (1.0 - elastic.nu) * (e1 + e2)
    return e1, e2, e3


def _effective_stress_triplet(stress, elastic):
    """Principal effective stresses including the out-of-plane component."""
    sx, sy, t = stress
    c = 0.5 * (sx + sy)
    rad = math.hypot(0.5 * (sx - sy), t)
    s1, s2 = c + rad, c - rad
    if elastic.mode == "plane_strain":
        if elastic.nu is None:
            raise MaterialError("plane-strain out-of-plane stress needs an "
                                "isotropic material")
        s3 = elastic.nu * (sx + sy)
    else:
        s3 = 0.0
    return s1, s2, s3


def _out_of_plane_stress(stress, elastic):
    if elastic.mode == "plane_strain":
        if elastic.nu is None:
            raise MaterialError("out-of-plane stress needs an isotropic material")
        return elastic.nu * (stress[0] + stress[1])
    return 0.0


def equivalent_strain(strain, elastic, params):
    """Equivalent-strain measure tau driving the damage threshold.

    mazars : root of summed squared positive principal strains;
    energy : beta-weighted, stiffness-normalized energy norm, strain-like so
             the uniaxial threshold is f_t/E;
    melro  : the printed dimensionless invariant form (may be negative in
             compression-dominated states).
    """
    strain = np.asarray(strain, dtype=float)
    kind = params.threshold
    if kind == MAZARS:
        e1, e2, e3 = _principal_strains(strain, elastic)
        return math.sqrt(max(e1, 0.0) ** 2 + max(e2, 0.0) ** 2 + max(e3, 0.0) ** 2)

    stress = elastic.C @ strain
    if kind == ENERGY_BETA:
        s1, s2, s3 = _effective_stress_triplet(stress, elastic)
        abs_sum = abs(s1) + abs(s2) + abs(s3)
        m = 1.0 if abs_sum == 0.0 else (max(s1, 0.0) + max(s2, 0.0) + max(s3, 0.0)) / abs_sum
        n = params.f_c / params.f_t
        beta = m + (1.0 - m) / n
        psi2 = float(strain @ stress)        # 2 * stored energy density
        if elastic.E is None:
            raise MaterialError("energy threshold needs an isotropic material")
        return beta * math.sqrt(max(psi2, 0.0) / elastic.E)

    if kind == MELRO:
        sx, sy, t = stress
        s3 = _out_of_plane_stress(stress, elastic)
        i1 = sx + sy + s3
        j2 = ((sx - sy) ** 2 + (sy - s3) ** 2 + (s3 - sx) ** 2) / 6.0 + t * t
        return (3.0 * j2 + i1 * (params.X_c - params.X_t)) / (params.X_c * params.X_t)

    raise MaterialError(f"unknown threshold kind {kind!r}")


def equivalent_strain_gradient(strain, elastic, params):
    """d tau / d eps for the loading-branch consistent tangent.

    Non-smooth weights (Macaulay switches, the beta split) are frozen at the
    current state, which is the standard choice away from the kinks.
    """
    strain = np.asarray(strain, dtype=float)
    kind = params.threshold
    C = elastic.C

    if kind == MAZARS:
        exx, eyy, gxy = strain
        e1, e2, e3 = _principal_strains(strain, elastic)
        tau = math.sqrt(max(e1, 0.0) ** 2 + max(e2, 0.0) ** 2 + max(e3, 0.0) ** 2)
        if tau == 0.0:
            return np.zeros(3)
        rad = math.hypot(0.5 * (exx - eyy), 0.5 * gxy)
        if rad > 1e-300:
            d = 0.5 * (exx - eyy) / rad
            g = 0.25 * gxy / rad
            de1 = np.array([0.5 + 0.5 * d, 0.5 - 0.5 * d, g])
            de2 = np.array([0.5 - 0.5 * d, 0.5 + 0.5 * d, -g])
        else:
            de1 = np.array([0.5, 0.5, 0.0])
            de2 = np.array([0.5, 0.5, 0.0])
        if elastic.mode == "plane_strain":
            de3 = np.zeros(3)
        else:
            de3 = -elastic.nu / (1.0 - elastic.nu) * (de1 + de2)
        grad = (max(e1, 0.0) * de1 + max(e2, 0.0) * de2 + max(e3, 0.0) * de3) / tau
        return grad

    stress = C @ strain
    if kind == ENERGY_BETA:
        tau = equivalent_strain(strain, elastic, params)
        if tau == 0.0:
            return np.zeros(3)
        s1, s2, s3 = _effective_stress_triplet(stress, elastic)
        abs_sum = abs(s1) + abs(s2) + abs(s3)
        m = 1.0 if abs_sum == 0.0 else (max(s1, 0.0) + max(s2, 0.0) + max(s3, 0.0)) / abs_sum
        beta = m + (1.0 - m) / (params.f_c / params.f_t)
        return beta * beta * stress / (elastic.E * tau)

    if kind == MELRO:
        sx, sy, t = stress
        s3 = _out_of_plane_stress(stress, elastic)
        dsx, dsy, dt = C[0], C[1], C[2]
        if elastic.mode == "plane_strain":
            ds3 = elastic.nu * (C[0] + C[1])
        else:
            ds3 = np.zeros(3)
        mean = (sx + sy + s3) / 3.0
        dj2 = ((sx - mean) * dsx + (sy - mean) * dsy + (s3 - mean) * ds3
               + 2.0 * t * dt)
        di1 = dsx + dsy + ds3
        return (3.0 * dj2 + (params.X_c - params.X_t) * di1) / (params.X_c * params.X_t)

    raise MaterialError(f"unknown threshold kind {kind!r}")


def equivalent_strain_batch(strains, elastic, params):
    """Vectorized ``equivalent_strain`` over an (n, 3) strain array for one
    shared material and threshold kind."""
    e = np.asarray(strains, dtype=float)
    kind = params.threshold
    if kind == MAZARS:
        c = 0.5 * (e[:, 0] + e[:, 1])
        rad = np.hypot(0.5 * (e[:, 0] - e[:, 1]), 0.5 * e[:, 2])
        e1, e2 = c + rad, c - rad
        if elastic.mode == "plane_strain":
            e3 = np.zeros_like(e1)
        else:
            e3 = -elastic.nu / (1.0 - elastic.nu) * (e1 + e2)
        return np.sqrt(np.maximum(e1, 0.0) ** 2 + np.maximum(e2, 0.0) ** 2
                       + np.maximum(e3, 0.0) ** 2)

    s = e @ elastic.C.T
    if kind == ENERGY_BETA:
        c = 0.5 * (s[:, 0] + s[:, 1])
        rad = np.hypot(0.5 * (s[:, 0] - s[:, 1]), s[:, 2])
        s1, s2 = c + rad, c - rad
        s3 = (elastic.nu * (s[:, 0] + s[:, 1]) if elastic.mode == "plane_strain"
              else np.zeros_like(s1))
        abs_sum = np.abs(s1) + np.abs(s2) + np.abs(s3)
        pos_sum = np.maximum(s1, 0.0) + np.maximum(s2, 0.0) + np.maximum(s3, 0.0)
        m = np.where(abs_sum > 0.0, pos_sum / np.where(abs_sum > 0, abs_sum, 1.0), 1.0)
        beta = m + (1.0 - m) / (params.f_c / params.f_t)
        psi2 = np.einsum("ni,ni->n", e, s)
        return beta * np.sqrt(np.maximum(psi2, 0.0) / elastic.E)

    if kind == MELRO:
        sx, sy, t = s[:, 0], s[:, 1], s[:, 2]
        s3 = (elastic.nu * (sx + sy) if elastic.mode == "plane_strain"
              else np.zeros_like(sx))
        i1 = sx + sy + s3
        j2 = ((sx - sy) ** 2 + (sy - s3) ** 2 + (s3 - sx) ** 2) / 6.0 + t * t
        return (3.0 * j2 + i1 * (params.X_c - params.X_t)) / (params.X_c * params.X_t)

    raise MaterialError(f"unknown threshold kind {kind!r}")


def damage_law_batch(r, r0, rf, law):
    """Vectorized damage law with per-element thresholds."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    active = r > r0
    if law == LINEAR:
        rr = np.minimum(r, rf)
        out[active] = ((rf / (rf - r0)) * (1.0 - r0 / rr))[active]
        out[r >= rf] = 1.0
    else:
        out[active] = (1.0 - (r0 / r) * np.exp(-(r - r0)
                                               / (rf - r0)))[active]
    return np.clip(out, 0.0, 1.0)


def damage_law(r, params):
    """Damage omega(r): zero up to r0, then linear (capped at one) or
    exponential softening."""
    if r <= params.r0:
        return 0.0
    r0, rf = params.r0, params.rf
    if params.law == LINEAR:
        if r >= rf:
            return 1.0
        return (rf / (rf - r0)) * (1.0 - r0 / r)
    return 1.0 - (r0 / r) * math.exp(-(r - r0) / (rf - r0))


def damage_law_derivative(r, params):
    if r <= params.r0:
        return 0.0
    r0, rf = params.r0, params.rf
    if params.law == LINEAR:
        if r >= rf:
            return 0.0
        return (rf / (rf - r0)) * r0 / (r * r)
    e = math.exp(-(r - r0) / (rf - r0))
    return r0 * e * (1.0 / (r * r) + 1.0 / (r * (rf - r0)))


def damage_update(strain, state, elastic, params, tau=None):
    """One constitutive update: effective stress, threshold, history, damage,
    nominal stress and the tangent operator.

    ``tau`` overrides the local equivalent strain (nonlocal averaging).  The
    history r never decreases; for the linear law it is capped at rf, which
    reads the printed max{tau, rf} history as a saturation so omega <= 1.
    Returns (sigma, new_state, C_tan); the loading-branch tangent is used at
    the non-differentiable point r = r0 for Newton robustness.
    """
    strain = np.asarray(strain, dtype=float)
    stress_eff = elastic.C @ strain
    if tau is None:
        tau = equivalent_strain(strain, elastic, params)

    r_trial = max(state.r, tau)
    if params.law == LINEAR:
        r_trial = min(r_trial, params.rf)
    omega = damage_law(r_trial, params)
    omega = max(omega, state.omega)      # monotone even under parameter play
    new_state = DamageState(r=r_trial, omega=omega)
    sigma = (1.0 - omega) * stress_eff

    loading = tau >= state.r and r_trial > params.r0 and omega > state.omega - 1e-15
    C_tan = (1.0 - omega) * elastic.C
    if loading and tau > params.r0:
        dw = damage_law_derivative(r_trial, params)
        if dw != 0.0:
            grad = equivalent_strain_gradient(strain, elastic, params)
            C_tan = C_tan - dw * np.outer(stress_eff, grad)
    return sigma, new_state, C_tan


def uniaxial_stress_curve(eps_values, E, params):
    """Reference uniaxial response sigma(eps) for a strain-like threshold:
    E*eps below r0, (1-omega(r))*E*eps beyond, with r the running maximum."""
    out = np.zeros_like(np.asarray(eps_values, dtype=float))
    r = 0.0
    for i, eps in enumerate(eps_values):
        r = max(r, eps)
        h = min(r, params.rf) if params.law == LINEAR else r
        out[i] = (1.0 - damage_law(h, params)) * E * eps
    return out
