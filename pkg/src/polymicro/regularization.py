"""Mesh-objectivity machinery for the damage drivers.

Crack-band: per-element rescaling of the softening limit so the dissipated
energy per unit crack advance matches the fracture energy regardless of
element size.  Nonlocal: an immutable row-normalized averaging table over
element centroids; rows build independently, averaging is a sparse mat-vec.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

log = logging.getLogger("polymicro")

GAUSS = "gauss"
TRUNCATED_QUADRATIC = "truncated_quadratic"


class RegularizationError(Exception):
    pass


class StaleTableError(RegularizationError):
    """Averaging table built for a different mesh revision."""


def crack_band_width(coords, band_direction):
    """Band width of one element: extent of its vertex projections onto the
    direction perpendicular to the band."""
    d = np.asarray(band_direction, dtype=float)
    d = d / np.hypot(*d)
    perp = np.array([-d[1], d[0]])
    proj = np.asarray(coords, dtype=float) @ perp
    return float(proj.max() - proj.min())


def crack_band_adjust(G_f, f_t, eps_0, h_b):
    """Adjusted softening limit eps_f = 2 G_f / (h_b f_t), clamped from below
    at the elastic limit when the band exceeds h_max = 2 G_f / (eps_0 f_t)."""
    if h_b <= 0.0:
        raise RegularizationError("band width must be positive")
    eps_f = 2.0 * G_f / (h_b * f_t)
    h_max = 2.0 * G_f / (eps_0 * f_t)
    if h_b > h_max:
        log.warning("crack band width %.3g exceeds the admissible maximum "
                    "%.3g; softening limit clamped to the elastic strain", h_b, h_max)
        eps_f = eps_0
    return eps_f


@dataclass
class CrackBandRule:
    """Deferred per-element adjustment applied when the element cache is
    built: every damage-capable element gets rf = eps_f(h_b).

    With no fixed ``band_direction`` the band is taken perpendicular to the
    major principal stress at damage onset; that variant resolves lazily in
    the driver and is frozen thereafter.
    """

    G_f: float
    f_t: float
    eps_0: float
    band_direction: tuple | None = (0.0, 1.0)

    def apply(self, cache):
        if self.band_direction is None:
            return     # resolved at onset by the driver
        for e, params in enumerate(cache.damage_params):
            if params is None:
                continue
            coords = cache.geoms[e]
            verts = np.column_stack((coords.xi, coords.eta)) * coords.diameter \
                + coords.centroid
            h_b = crack_band_width(verts, self.band_direction)
            cache.damage_params[e] = params.with_rf(
                crack_band_adjust(self.G_f, self.f_t, self.eps_0, h_b))


def weight_function(d, kind, l_c=None, R=None):
    """Nonlocal weight alpha_0(d): a Gauss bell exp(-d^2 / 2 l_c^2) or the
    truncated quadratic (1 - d^2/R^2)^2 clipped at zero."""
    d = np.asarray(d, dtype=float)
    if kind == GAUSS:
        if l_c is None or l_c <= 0:
            raise RegularizationError("gauss weight needs l_c > 0")
        return np.exp(-d * d / (2.0 * l_c * l_c))
    if kind == TRUNCATED_QUADRATIC:
        if R is None or R <= 0:
            raise RegularizationError("truncated weight needs R > 0")
        return np.maximum(1.0 - d * d / (R * R), 0.0) ** 2
    raise RegularizationError(f"unknown weight kind {kind!r}")


@dataclass
class NonlocalTable:
    A: sp.csr_matrix
    kind: str
    R: float
    l_c: float | None
    mesh_revision: int

    def average(self, tau, mesh_revision=None):
        if mesh_revision is not None and mesh_revision != self.mesh_revision:
            raise StaleTableError(
                f"table built for revision {self.mesh_revision}, "
                f"mesh is at {mesh_revision}")
        return self.A @ np.asarray(tau, dtype=float)


def build_nonlocal_table(centroids, weights, kind, R=None, l_c=None,
                         mesh_revision=0, element_mask=None):
    """Row-normalized averaging table over element centroids.

    ``weights`` are the integration weights (area times thickness);
    neighbours come from a radius query (R, or a Gauss support wide enough
    to be exact to double precision when only l_c is given).  Rows of
    elements excluded by ``element_mask`` reduce to the identity.
    """
    centroids = np.asarray(centroids, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = centroids.shape[0]
    if kind == TRUNCATED_QUADRATIC and (R is None or R <= 0):
        raise RegularizationError("truncated kind needs R")
    if kind == GAUSS and (l_c is None or l_c <= 0):
        raise RegularizationError("gauss kind needs l_c")
    radius = R if R is not None else 8.5 * l_c   # exp(-36) < 1e-15: exact
    if kind == GAUSS and R is None:
        log.debug("gauss table: using support radius %.3g (= 8.5 l_c)", radius)

    mask = np.ones(n, dtype=bool) if element_mask is None else np.asarray(element_mask)
    tree = cKDTree(centroids[mask])
    active = np.where(mask)[0]
    rows, cols, vals = [], [], []
    for p in range(n):
        if not mask[p]:
            rows.append(p)
            cols.append(p)
            vals.append(1.0)
            continue
        idx = tree.query_ball_point(centroids[p], radius)
        nbr = active[np.asarray(idx, dtype=int)]
        d = np.hypot(*(centroids[nbr] - centroids[p]).T)
        a = w[nbr] * weight_function(d, kind, l_c=l_c, R=radius)
        s = a.sum()
        if s <= 0.0:
            rows.append(p)
            cols.append(p)
            vals.append(1.0)
            continue
        a /= s
        order = np.argsort(nbr)     # fixed column order for determinism
        rows.extend([p] * len(nbr))
        cols.extend(nbr[order].tolist())
        vals.extend(a[order].tolist())
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return NonlocalTable(A=A, kind=kind, R=radius, l_c=l_c,
                         mesh_revision=mesh_revision)


def nonlocal_average(table, tau, mesh_revision=None):
    """tau_bar = A tau (linear, monotone: all weights nonnegative)."""
    return table.average(tau, mesh_revision)


def brute_force_table(centroids, weights, kind, R=None, l_c=None):
    """O(N^2) reference implementation of the averaging weights."""
    centroids = np.asarray(centroids, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = centroids.shape[0]
    radius = R if R is not None else 8.5 * l_c
    A = np.zeros((n, n))
    for p in range(n):
        d = np.hypot(*(centroids - centroids[p]).T)
        a = w * weight_function(d, kind, l_c=l_c, R=radius)
        a[d > radius] = 0.0
        A[p] = a / a.sum()
    return A
