"""Lowest-order virtual element machinery on a single polygon.

Everything is element-local and pure: the strain projector built from edge
normals, the consistency stiffness it induces, the least-squares stabilization
that removes hourglass modes, nodal load vectors, and constant strain/stress
recovery.  All operators act on the interleaved vertex DOF vector
(ux1, uy1, ..., uxm, uym).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from polymicro.mesh import ZeroAreaError


class RankDeficientError(Exception):
    """Monomial matrix lost column rank (all vertices collinear)."""


@dataclass(frozen=True)
class ProjectorMatrix:
    """3 x 2m map from vertex displacements to the constant Voigt strain."""
    P: np.ndarray

    @property
    def n_vertices(self):
        return self.P.shape[1] // 2


@dataclass(frozen=True)
class ElementStiffness:
    K: np.ndarray
    K_consistency: np.ndarray
    K_stability: np.ndarray
    mu: float


def projector_matrix(geom):
    """Strain projector from the element geometry.

    Row pattern interleaves the per-vertex coefficients
    pi_ix = (n_x[i-1] |e[i-1]| + n_x[i] |e[i]|) / (2|E|) and the analogous
    pi_iy; the third row carries both for the engineering shear.
    """
    if geom.area <= 0.0:
        raise ZeroAreaError("projector needs positive element area")
    m = geom.n_vertices
    weighted = geom.normals * geom.edge_lengths[:, None]      # (m, 2)
    pi = (weighted + np.roll(weighted, 1, axis=0)) / (2.0 * geom.area)
    P = np.zeros((3, 2 * m))
    P[0, 0::2] = pi[:, 0]
    P[1, 1::2] = pi[:, 1]
    P[2, 0::2] = pi[:, 1]
    P[2, 1::2] = pi[:, 0]
    return ProjectorMatrix(P=P)


def consistency_stiffness(projector, elastic, area):
    """K_c = |E| P^T C P: exact on linear fields, rank 3."""
    P = projector.P
    return area * (P.T @ elastic.C @ P)


def monomial_matrix(geom):
    """2m x 6 matrix of scaled linear monomials evaluated at the vertices."""
    m = geom.n_vertices
    D = np.zeros((2 * m, 6))
    D[0::2, 0] = 1.0
    D[1::2, 1] = 1.0
    D[0::2, 2] = geom.xi
    D[1::2, 3] = geom.xi
    D[0::2, 4] = geom.eta
    D[1::2, 5] = geom.eta
    return D


def stability_matrix(geom, K_consistency, tau_factor=0.5):
    """Stabilization K_s = mu (I - Ps)^T (I - Ps) with Ps = D (D^T D)^-1 D^T.

    Ps reproduces nodal samples of every linear field, so K_s vanishes on
    them; mu = tau_factor * trace(K_c) sets the scaling.  The 6x6 normal
    system is solved by a Cholesky factorization: the scaled coordinates
    keep it well conditioned.  Raises RankDeficientError when the vertices
    are collinear.
    """
    D = monomial_matrix(geom)
    DtD = D.T @ D
    try:
        L = np.linalg.cholesky(DtD)
    except np.linalg.LinAlgError:
        raise RankDeficientError("collinear vertices: monomial matrix is "
                                 "rank deficient") from None
    W = np.linalg.solve(L.T, np.linalg.solve(L, D.T))   # (DtD)^-1 D^T
    Ps = D @ W
    n = Ps.shape[0]
    I_minus = np.eye(n) - Ps
    mu = tau_factor * float(np.trace(K_consistency))
    Ks = mu * (I_minus.T @ I_minus)
    return Ks, mu, Ps


def element_stiffness(geom, elastic, tau_factor=0.5):
    """Full element stiffness K = K_c + K_s (K_s = 0 on triangles)."""
    proj = projector_matrix(geom)
    Kc = consistency_stiffness(proj, elastic, geom.area)
    if geom.n_vertices == 3:
        m = 6
        return ElementStiffness(K=Kc, K_consistency=Kc,
                                K_stability=np.zeros((m, m)), mu=0.0)
    Ks, mu, _ = stability_matrix(geom, Kc, tau_factor)
    return ElementStiffness(K=Kc + Ks, K_consistency=Kc, K_stability=Ks, mu=mu)


def load_vectors(geom, body_load=None, edge_tractions=None):
    """Nodal force vector from a constant body load and edge tractions.

    The body term spreads |E| * f equally over the vertices (the constant
    projection of the load against the vertex-average test value).  Edge
    tractions are linear between the edge end nodes and integrated exactly:
    end a receives L(2 t_a + t_b)/6.  ``edge_tractions`` maps edge index i
    (vertex i -> i+1) to (t_a, t_b) or a single shared vector.
    """
    m = geom.n_vertices
    f = np.zeros(2 * m)
    if body_load is not None:
        b = np.asarray(body_load, dtype=float)
        f[0::2] += geom.area * b[0] / m
        f[1::2] += geom.area * b[1] / m
    if edge_tractions:
        for i, tr in edge_tractions.items():
            tr = np.asarray(tr, dtype=float)
            if tr.shape == (2,):
                ta = tb = tr
            else:
                ta, tb = tr
            L = geom.edge_lengths[i]
            j = (i + 1) % m
            f[2 * i:2 * i + 2] += L * (2.0 * ta + tb) / 6.0
            f[2 * j:2 * j + 2] += L * (ta + 2.0 * tb) / 6.0
    return f


def element_stress(projector, u_local, elastic):
    """Projected constant strain and the matching stress of one element."""
    eps = projector.P @ np.asarray(u_local, dtype=float)
    return eps, elastic.C @ eps
