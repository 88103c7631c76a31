"""Plane-strain collocation BEM with linear continuous elements.

A region is a closed CCW loop of straight segments around an inclusion; the
loop normal points out of the inclusion.  Collocation happens at the nodes.
Weakly singular displacement-kernel self integrals are done analytically on
straight elements; the strongly singular traction-kernel diagonal (with its
jump term) is completed from rigid-body annihilation, which also absorbs
the mild corners of polygonal loops.  A region condenses to the equivalent
stiffness K = M G^-1 H coupling into the global system.

Assembly per region is independent and all products are pure, so regions can
be processed concurrently; matrices are immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from polymicro.mesh import signed_area


class BemError(Exception):
    pass


class CoincidentPointsError(BemError):
    pass


class SingularGError(BemError):
    pass


class PointTooCloseError(BemError):
    """Interior evaluation point violates the half-element distance rule."""


def kelvin_constants(E, nu):
    """The four plane-strain kernel coefficients derived from (E, nu)."""
    C1 = -(1.0 + nu) / (4.0 * math.pi * (1.0 - nu) * E)
    C2 = 3.0 - 4.0 * nu
    C3 = -1.0 / (4.0 * math.pi * (1.0 - nu))
    C4 = 1.0 - 2.0 * nu
    return C1, C2, C3, C4


def kelvin_kernels(x0, x, normal, E, nu):
    """Fundamental displacements G* and tractions H* at field point x for a
    unit load at x0 (2x2 blocks, row = load direction)."""
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x - x0
    r = float(np.hypot(*d))
    if r == 0.0:
        raise CoincidentPointsError("field point equals source point")
    dr = d / r
    n = np.asarray(normal, dtype=float)
    C1, C2, C3, C4 = kelvin_constants(E, nu)
    eye = np.eye(2)
    rr = np.outer(dr, dr)
    G = C1 * (C2 * math.log(r) * eye - rr)
    drdn = float(dr @ n)
    skew = np.outer(dr, n) - np.outer(n, dr)
    H = (C3 / r) * (drdn * (C4 * eye + 2.0 * rr) - C4 * skew)
    return G, H


@dataclass
class BemRegion:
    """Closed loop (m nodes, m straight elements) with its H, G matrices."""

    coords: np.ndarray            # (m, 2) loop nodes, CCW around the inclusion
    E: float
    nu: float
    H: np.ndarray = field(default=None, repr=False)
    G: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 2 or self.coords.shape[0] < 3:
            raise BemError("loop needs at least 3 nodes")
        if signed_area(self.coords) <= 0.0:
            raise BemError("loop must be CCW around the inclusion")

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def area(self):
        return signed_area(self.coords)

    def edges(self):
        """Per element: (a, b, xa, xb, length, tangent, outward normal)."""
        m = self.n_nodes
        out = []
        for e in range(m):
            a, b = e, (e + 1) % m
            xa, xb = self.coords[a], self.coords[b]
            d = xb - xa
            L = float(np.hypot(*d))
            t = d / L
            n = np.array([t[1], -t[0]])
            out.append((a, b, xa, xb, L, t, n))
        return out


_GAUSS_CACHE = {}


def _gauss01(n):
    """Gauss-Legendre points/weights mapped to [0, 1]."""
    if n not in _GAUSS_CACHE:
        x, w = leggauss(n)
        _GAUSS_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS_CACHE[n]


def _blocks_batch(x0s, xa, xb, L, n, C1, C2, C3, C4, order, s0=0.0, s1=1.0):
    """Kernel x linear-shape integrals of one element for a batch of
    collocation points; integrates the (s0, s1) portion with the parent
    element's shape functions.  Returns (gA, gB, hA, hB) shaped (P, 2, 2)."""
    s, w = _gauss01(order)
    ps = s0 + s * (s1 - s0)
    pts = xa[None, :] + ps[:, None] * (xb - xa)[None, :]
    d = pts[None, :, :] - x0s[:, None, :]              # (P, K, 2)
    r = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
    dr = d / r[..., None]
    logr = np.log(r)
    drdn = dr @ n
    Na = 1.0 - ps
    Nb = ps
    wL = w * L * (s1 - s0)
    rr = dr[..., :, None] * dr[..., None, :]           # (P, K, 2, 2)
    eye = np.eye(2)[None, None, :, :]
    Gk = C1 * (C2 * logr[..., None, None] * eye - rr)
    skew = (dr[..., :, None] * n[None, None, None, :]
            - n[None, None, :, None] * dr[..., None, :])
    Hk = (C3 / r)[..., None, None] * (drdn[..., None, None]
                                      * (C4 * eye + 2.0 * rr) - C4 * skew)
    gA = np.einsum("k,pkij->pij", wL * Na, Gk)
    gB = np.einsum("k,pkij->pij", wL * Nb, Gk)
    hA = np.einsum("k,pkij->pij", wL * Na, Hk)
    hB = np.einsum("k,pkij->pij", wL * Nb, Hk)
    return gA, gB, hA, hB


def _segment_distances(x0s, xa, xb):
    d = xb - xa
    L2 = float(d @ d)
    s = np.clip((x0s - xa) @ d / L2, 0.0, 1.0)
    proj = xa[None, :] + s[:, None] * d[None, :]
    return np.hypot(*(x0s - proj).T)


def assemble_hg(region, n_gauss=8, n_gauss_near=24):
    """Dense H, G (2m x 2m) by nodal collocation.

    Off-diagonal blocks use Gauss quadrature (order raised to
    ``n_gauss_near`` with 4x subdivision when the collocation point is
    within one element length), batched over collocation points.  G blocks
    on the two elements adjacent to the collocation node use the exact
    log-weighted integrals; the adjacent H blocks of the opposite node come
    out constant on straight elements and are integrated exactly as well.
    The strongly singular H diagonal, including the boundary jump, is
    completed from H (rigid translation) = 0.
    """
    m = region.n_nodes
    E, nu = region.E, region.nu
    C1, C2, C3, C4 = kelvin_constants(E, nu)
    H = np.zeros((2 * m, 2 * m))
    G = np.zeros((2 * m, 2 * m))
    coords = region.coords
    eye = np.eye(2)

    row = np.arange(m)
    for (a, b, xa, xb, L, t, n) in region.edges():
        tt = np.outer(t, t)
        skew = np.outer(t, n) - np.outer(n, t)
        # exact singular integrals; r runs from the collocation node
        I_self = 0.5 * L * math.log(L) - 0.75 * L
        I_other = 0.5 * L * math.log(L) - 0.25 * L
        g_self = C1 * (C2 * I_self * eye - 0.5 * L * tt)
        g_other = C1 * (C2 * I_other * eye - 0.5 * L * tt)
        G[2 * a:2 * a + 2, 2 * a:2 * a + 2] += g_self
        G[2 * a:2 * a + 2, 2 * b:2 * b + 2] += g_other
        H[2 * a:2 * a + 2, 2 * b:2 * b + 2] += -C3 * C4 * skew
        G[2 * b:2 * b + 2, 2 * b:2 * b + 2] += g_self
        G[2 * b:2 * b + 2, 2 * a:2 * a + 2] += g_other
        H[2 * b:2 * b + 2, 2 * a:2 * a + 2] += C3 * C4 * skew

        other = row[(row != a) & (row != b)]
        if other.size == 0:
            continue
        x0s = coords[other]
        dist = _segment_distances(x0s, xa, xb)
        buckets = ((dist < L, None), ((dist >= L) & (dist < 3.0 * L), n_gauss_near),
                   (dist >= 3.0 * L, n_gauss))
        for mask, order in buckets:
            idx = other[mask]
            if idx.size == 0:
                continue
            if order is None:
                gA = np.zeros((idx.size, 2, 2))
                gB = np.zeros_like(gA)
                hA = np.zeros_like(gA)
                hB = np.zeros_like(gA)
                for k in range(4):
                    out = _blocks_batch(coords[idx], xa, xb, L, n,
                                        C1, C2, C3, C4, n_gauss_near,
                                        k / 4.0, (k + 1) / 4.0)
                    gA += out[0]
                    gB += out[1]
                    hA += out[2]
                    hB += out[3]
            else:
                gA, gB, hA, hB = _blocks_batch(coords[idx], xa, xb, L, n,
                                               C1, C2, C3, C4, order)
            rows2 = 2 * idx
            for i in range(2):
                for j in range(2):
                    G[rows2 + i, 2 * a + j] += gA[:, i, j]
                    G[rows2 + i, 2 * b + j] += gB[:, i, j]
                    H[rows2 + i, 2 * a + j] += hA[:, i, j]
                    H[rows2 + i, 2 * b + j] += hB[:, i, j]

    # diagonal completion: rigid translations produce no tractions
    Hb = H.reshape(m, 2, m, 2)
    diag = -Hb.sum(axis=2)
    for p in range(m):
        Hb[p, :, p, :] += diag[p]
    region.H = H
    region.G = G
    return H, G


def _point_segment_distance(x0, xa, xb):
    d = xb - xa
    L2 = float(d @ d)
    s = float(np.clip((x0 - xa) @ d / L2, 0.0, 1.0))
    proj = xa + s * d
    return float(np.hypot(*(x0 - proj)))


def _element_blocks(x0, xa, xb, L, t, n, C1, C2, C3, C4, order):
    """Gauss integration of kernel x linear shapes over one element; returns
    the 2x2 column blocks (G_a, G_b, H_a, H_b)."""
    s, w = _gauss01(order)
    pts = xa[None, :] + s[:, None] * (xb - xa)[None, :]
    d = pts - x0[None, :]
    r = np.hypot(d[:, 0], d[:, 1])
    dr = d / r[:, None]
    logr = np.log(r)
    drdn = dr @ n
    Na = 1.0 - s
    Nb = s
    wL = w * L

    rr = dr[:, :, None] * dr[:, None, :]
    eye = np.eye(2)[None, :, :]
    Gk = C1 * (C2 * logr[:, None, None] * eye - rr)
    skew = dr[:, :, None] * n[None, None, :] - n[None, :, None] * dr[:, None, :]
    Hk = (C3 / r)[:, None, None] * (drdn[:, None, None] * (C4 * eye + 2.0 * rr)
                                    - C4 * skew)
    gA = np.einsum("k,kij->ij", wL * Na, Gk)
    gB = np.einsum("k,kij->ij", wL * Nb, Gk)
    hA = np.einsum("k,kij->ij", wL * Na, Hk)
    hB = np.einsum("k,kij->ij", wL * Nb, Hk)
    return gA, gB, hA, hB


def _element_blocks_subdivided(x0, xa, xb, L, t, n, C1, C2, C3, C4, order, nsub):
    gA = np.zeros((2, 2))
    gB = np.zeros((2, 2))
    hA = np.zeros((2, 2))
    hB = np.zeros((2, 2))
    for k in range(nsub):
        s0, s1 = k / nsub, (k + 1) / nsub
        ya = xa + s0 * (xb - xa)
        yb = xa + s1 * (xb - xa)
        sub = _element_blocks(x0, ya, yb, L / nsub, t, n, C1, C2, C3, C4, order)
        # linear shapes of the parent element restricted to the sub-segment
        s, w = _gauss01(order)
        pts_s = s0 + s * (s1 - s0)
        # redo with parent shape functions for exactness
        pts = ya[None, :] + s[:, None] * (yb - ya)[None, :]
        d = pts - x0[None, :]
        r = np.hypot(d[:, 0], d[:, 1])
        dr = d / r[:, None]
        logr = np.log(r)
        drdn = dr @ n
        Na = 1.0 - pts_s
        Nb = pts_s
        wL = w * (L / nsub)
        rr = dr[:, :, None] * dr[:, None, :]
        eye = np.eye(2)[None, :, :]
        Gk = C1 * (C2 * logr[:, None, None] * eye - rr)
        skew = dr[:, :, None] * n[None, None, :] - n[None, :, None] * dr[:, None, :]
        Hk = (C3 / r)[:, None, None] * (drdn[:, None, None] * (C4 * eye + 2.0 * rr)
                                        - C4 * skew)
        gA += np.einsum("k,kij->ij", wL * Na, Gk)
        gB += np.einsum("k,kij->ij", wL * Nb, Gk)
        hA += np.einsum("k,kij->ij", wL * Na, Hk)
        hB += np.einsum("k,kij->ij", wL * Nb, Hk)
        del sub
    return gA, gB, hA, hB


def assemble_g_edgewise(region, n_gauss=8, n_gauss_near=24):
    """G against edge-wise (discontinuous) traction data: (2m x 4m), columns
    grouped per element as (t at first end, t at second end).

    Linear displacement fields have per-edge constant tractions that jump at
    loop corners; this operator represents them exactly, which the nodal
    (continuous) G cannot, and is what the linear-exactness identity uses.
    """
    m = region.n_nodes
    C1, C2, C3, C4 = kelvin_constants(region.E, region.nu)
    Ge = np.zeros((2 * m, 4 * m))
    coords = region.coords
    eye = np.eye(2)
    for e, (a, b, xa, xb, L, t, n) in enumerate(region.edges()):
        tt = np.outer(t, t)
        for p in range(m):
            x0 = coords[p]
            col = 4 * e
            if p == a or p == b:
                I_self = 0.5 * L * math.log(L) - 0.75 * L
                I_other = 0.5 * L * math.log(L) - 0.25 * L
                g_self = C1 * (C2 * I_self * eye - 0.5 * L * tt)
                g_other = C1 * (C2 * I_other * eye - 0.5 * L * tt)
                if p == a:
                    Ge[2 * p:2 * p + 2, col:col + 2] += g_self
                    Ge[2 * p:2 * p + 2, col + 2:col + 4] += g_other
                else:
                    Ge[2 * p:2 * p + 2, col:col + 2] += g_other
                    Ge[2 * p:2 * p + 2, col + 2:col + 4] += g_self
                continue
            dist = _point_segment_distance(x0, xa, xb)
            order = n_gauss_near if dist < 3.0 * L else n_gauss
            if dist < L:
                gA, gB, _, _ = _element_blocks_subdivided(
                    x0, xa, xb, L, t, n, C1, C2, C3, C4, n_gauss_near, 4)
            else:
                gA, gB, _, _ = _element_blocks(x0, xa, xb, L, t, n,
                                               C1, C2, C3, C4, order)
            Ge[2 * p:2 * p + 2, col:col + 2] += gA
            Ge[2 * p:2 * p + 2, col + 2:col + 4] += gB
    return Ge


def traction_force_map(region):
    """Traction-to-nodal-force map M: per element of length L the block
    (L/6) [[2I, I], [I, 2I]], assembled nodewise.  Symmetric PSD."""
    m = region.n_nodes
    M = np.zeros((2 * m, 2 * m))
    eye = np.eye(2)
    for (a, b, xa, xb, L, t, n) in region.edges():
        M[2 * a:2 * a + 2, 2 * a:2 * a + 2] += (L / 3.0) * eye
        M[2 * b:2 * b + 2, 2 * b:2 * b + 2] += (L / 3.0) * eye
        M[2 * a:2 * a + 2, 2 * b:2 * b + 2] += (L / 6.0) * eye
        M[2 * b:2 * b + 2, 2 * a:2 * a + 2] += (L / 6.0) * eye
    return M


@dataclass
class BemSuperElement:
    """Condensed inclusion stiffness K = M G^-1 H plus the node map from the
    loop positions to global mesh node ids."""

    region: BemRegion
    K: np.ndarray
    M: np.ndarray
    node_map: np.ndarray     # loop index -> global node id

    def global_dofs(self):
        dof = np.empty(2 * self.node_map.size, dtype=np.int64)
        dof[0::2] = 2 * self.node_map
        dof[1::2] = 2 * self.node_map + 1
        return dof

    def boundary_solution(self, U_global):
        """Loop displacement vector and the solved nodal tractions."""
        u = U_global[self.global_dofs()]
        t = np.linalg.solve(self.region.G, self.region.H @ u)
        return u, t


def super_element(region, node_map, n_gauss=8):
    """Build the BEM super-element of one inclusion region."""
    if region.H is None or region.G is None:
        assemble_hg(region, n_gauss=n_gauss)
    M = traction_force_map(region)
    cond = np.linalg.cond(region.G)
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularGError(f"G is numerically singular (cond {cond:.2e})")
    K = M @ np.linalg.solve(region.G, region.H)
    return BemSuperElement(region=region, K=K, M=M,
                           node_map=np.asarray(node_map, dtype=np.int64))


# ---------------------------------------------------------------------------
# interior evaluation
# ---------------------------------------------------------------------------

def _stress_kernels(x0, pts, normal, E, nu):
    """Third-order kernels of the interior stress identity
    sigma(x0) = sum_e int D t - int S u, in Voigt rows (11, 22, 12)."""
    mu = E / (2.0 * (1.0 + nu))
    d = pts - x0[None, :]
    r = np.hypot(d[:, 0], d[:, 1])
    dr = d / r[:, None]
    n = normal
    drdn = dr @ n
    k = pts.shape[0]
    pairs = ((0, 0), (1, 1), (0, 1))
    D = np.zeros((k, 3, 2))
    S = np.zeros((k, 3, 2))
    c4 = 1.0 - 2.0 * nu
    f_d = 1.0 / (4.0 * math.pi * (1.0 - nu) * r)
    f_s = mu / (2.0 * math.pi * (1.0 - nu) * r * r)
    for row, (i, j) in enumerate(pairs):
        dij = 1.0 if i == j else 0.0
        for kk in range(2):
            dki = 1.0 if kk == i else 0.0
            dkj = 1.0 if kk == j else 0.0
            D[:, row, kk] = f_d * (c4 * (dki * dr[:, j] + dkj * dr[:, i]
                                         - dij * dr[:, kk])
                                   + 2.0 * dr[:, i] * dr[:, j] * dr[:, kk])
            S[:, row, kk] = f_s * (
                2.0 * drdn * (c4 * dij * dr[:, kk]
                              + nu * (dki * dr[:, j] + dkj * dr[:, i])
                              - 4.0 * dr[:, i] * dr[:, j] * dr[:, kk])
                + 2.0 * nu * (n[i] * dr[:, j] * dr[:, kk]
                              + n[j] * dr[:, i] * dr[:, kk])
                + c4 * (2.0 * n[kk] * dr[:, i] * dr[:, j]
                        + n[j] * dki + n[i] * dkj)
                - (1.0 - 4.0 * nu) * n[kk] * dij)
    return D, S


def interior_fields(region, U, T, points, want="displacement",
                    n_gauss=12, n_gauss_near=24, enforce_distance=True):
    """Somigliana evaluation of displacements or stresses at interior points.

    Points must keep at least half the local element length from the
    boundary (PointTooCloseError otherwise); elements within one element
    length of a point are integrated with the raised quadrature order.
    ``T`` may be nodal (2m) or edge-expanded (4m).
    """
    m = region.n_nodes
    U = np.asarray(U, dtype=float)
    T = np.asarray(T, dtype=float)
    edgewise = T.shape[0] == 4 * m
    pts_in = np.atleast_2d(np.asarray(points, dtype=float))
    edges = region.edges()
    E, nu = region.E, region.nu
    C1, C2, C3, C4 = kelvin_constants(E, nu)

    if enforce_distance:
        for x0 in pts_in:
            for (a, b, xa, xb, L, t, n) in edges:
                if _point_segment_distance(x0, xa, xb) < 0.5 * L - 1e-12:
                    raise PointTooCloseError(
                        f"point {x0} closer than half the local element length")

    out = np.zeros((pts_in.shape[0], 2 if want == "displacement" else 3))
    for ip, x0 in enumerate(pts_in):
        acc = np.zeros(out.shape[1])
        for e, (a, b, xa, xb, L, t, n) in enumerate(edges):
            dist = _point_segment_distance(x0, xa, xb)
            order = n_gauss_near if dist < L else n_gauss
            s, w = _gauss01(order)
            pts = xa[None, :] + s[:, None] * (xb - xa)[None, :]
            if edgewise:
                ta, tb = T[4 * e:4 * e + 2], T[4 * e + 2:4 * e + 4]
            else:
                ta, tb = T[2 * a:2 * a + 2], T[2 * b:2 * b + 2]
            ua, ub = U[2 * a:2 * a + 2], U[2 * b:2 * b + 2]
            tvals = ta[None, :] * (1.0 - s)[:, None] + tb[None, :] * s[:, None]
            uvals = ua[None, :] * (1.0 - s)[:, None] + ub[None, :] * s[:, None]
            wL = w * L
            if want == "displacement":
                d = pts - x0[None, :]
                r = np.hypot(d[:, 0], d[:, 1])
                dr = d / r[:, None]
                rr = dr[:, :, None] * dr[:, None, :]
                eye = np.eye(2)[None, :, :]
                Gk = C1 * (C2 * np.log(r)[:, None, None] * eye - rr)
                drdn = dr @ n
                skew = (dr[:, :, None] * n[None, None, :]
                        - n[None, :, None] * dr[:, None, :])
                Hk = (C3 / r)[:, None, None] * (
                    drdn[:, None, None] * (C4 * eye + 2.0 * rr) - C4 * skew)
                acc += np.einsum("k,kij,kj->i", wL, Gk, tvals)
                acc -= np.einsum("k,kij,kj->i", wL, Hk, uvals)
            else:
                D, S = _stress_kernels(x0, pts, n, E, nu)
                acc += np.einsum("k,kij,kj->i", wL, D, tvals)
                acc -= np.einsum("k,kij,kj->i", wL, S, uvals)
        out[ip] = acc
    return out[0] if np.ndim(points) == 1 else out


def boundary_stress_average(region, T):
    """Volume-integrated stress of the inclusion from boundary tractions:
    the divergence identity int sigma_ij dOmega = oint t_i x_j dGamma,
    symmetrized, integrated exactly for piecewise-linear tractions.
    Returns the Voigt 3-vector (Ixx, Iyy, Ixy)."""
    m = region.n_nodes
    T = np.asarray(T, dtype=float)
    edgewise = T.shape[0] == 4 * m
    I = np.zeros((2, 2))
    for e, (a, b, xa, xb, L, t, n) in enumerate(region.edges()):
        if edgewise:
            ta, tb = T[4 * e:4 * e + 2], T[4 * e + 2:4 * e + 4]
        else:
            ta, tb = T[2 * a:2 * a + 2], T[2 * b:2 * b + 2]
        tm = 0.5 * (ta + tb)
        xm = 0.5 * (xa + xb)
        # Simpson is exact for the quadratic integrand t_i x_j
        I += (L / 6.0) * (np.outer(ta, xa) + 4.0 * np.outer(tm, xm)
                          + np.outer(tb, xb))
    I = 0.5 * (I + I.T)
    return np.array([I[0, 0], I[1, 1], I[0, 1]])


def circle_loop(center, radius, n):
    """CCW polygonal loop approximating a circle."""
    phi = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.column_stack((center[0] + radius * np.cos(phi),
                            center[1] + radius * np.sin(phi)))
