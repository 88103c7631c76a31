"""Shipped benchmark geometries and reference solutions.

The two nested-quad patch meshes are built from their published node table;
the inclusion profile used by the four-inclusion demo cell is an approximate
polyline (the original profile is only available as a drawing) and is kept
here so every run uses the identical geometry.
"""

from __future__ import annotations

import math

import numpy as np

from polymicro.mesh import PolyElement, PolygonalMesh, Region

# node table for the square patch: first 8 rows are mesh (1),
# all 12 rows are mesh (2)
PATCH_NODES = np.array([
    [0.000, 0.000],
    [1.000, 0.000],
    [1.000, 1.000],
    [0.000, 1.000],
    [0.562, 0.272],
    [0.728, 0.562],
    [0.438, 0.728],
    [0.272, 0.438],
    [0.562, 0.465],
    [0.535, 0.562],
    [0.438, 0.535],
    [0.465, 0.438],
])

_PATCH_ELEMENTS_1 = [
    (0, 1, 5, 4),
    (1, 2, 6, 5),
    (2, 3, 7, 6),
    (3, 0, 4, 7),
    (4, 5, 6, 7),
]

_PATCH_ELEMENTS_2 = [
    (0, 1, 5, 4),
    (1, 2, 6, 5),
    (2, 3, 7, 6),
    (3, 0, 4, 7),
    (4, 5, 9, 8),
    (5, 6, 10, 9),
    (6, 7, 11, 10),
    (7, 4, 8, 11),
    (8, 9, 10, 11),
]


def patch_mesh(which, material_id="patch"):
    """Patch-test mesh (1) or (2) on the unit square."""
    if which == 1:
        nodes, conn = PATCH_NODES[:8], _PATCH_ELEMENTS_1
    elif which == 2:
        nodes, conn = PATCH_NODES, _PATCH_ELEMENTS_2
    else:
        raise ValueError("patch mesh id must be 1 or 2")
    elements = [PolyElement(tuple(c), 0) for c in conn]
    return PolygonalMesh(nodes=nodes.copy(), elements=elements,
                         regions=[Region(0, "VEM", material_id)])


def patch_exact_fields(case, E, nu, q=1000.0, t=-400.0):
    """Exact displacement/stress of the two constant-stress patch cases
    (plane stress): (a) normal traction q on the right edge, (b) tangential
    traction t around the square."""
    if case == "a":
        def disp(x):
            return np.array([q * x[0] / E, -nu * q * x[1] / E])
        sigma = np.array([q, 0.0, 0.0])
    elif case == "b":
        G = E / (2.0 * (1.0 + nu))

        def disp(x):
            return np.array([0.0, t * x[0] / G])
        sigma = np.array([0.0, 0.0, t])
    else:
        raise ValueError("patch case must be 'a' or 'b'")
    return disp, sigma


def patch_tractions(case, q=1000.0, t=-400.0, tol=1e-12):
    """Boundary traction field for the patch cases; the left edge (x = 0)
    carries the Dirichlet data instead."""
    if case == "a":
        def fn(mid, normal):
            if abs(mid[0] - 1.0) < tol and normal[0] > 0.5:
                return (q, 0.0)
            return None
    else:
        def fn(mid, normal):
            if abs(mid[0]) < tol and normal[0] < -0.5:
                return None      # clamped edge
            if normal[0] > 0.5:
                return (0.0, t)
            if normal[1] > 0.5:
                return (t, 0.0)
            if normal[1] < -0.5:
                return (-t, 0.0)
            return None
    return fn


def patch_dirichlet(case, mesh, tol=1e-12):
    """Minimal constraints: case (a) rollers on the left edge plus one pinned
    corner; case (b) the left edge fully clamped (exact solution vanishes
    there)."""
    out = []
    for i in range(mesh.n_nodes):
        x, y = mesh.nodes[i]
        if abs(x) < tol:
            out.append((2 * i, 0.0))
            if case == "b":
                out.append((2 * i + 1, 0.0))
            elif abs(y) < tol:
                out.append((2 * i + 1, 0.0))
    return out


# ---------------------------------------------------------------------------
# involved inclusion profile for the four-inclusion unit cell: a smooth
# lobed blob sampled as a closed polyline (approximation of the drawn shape)
# ---------------------------------------------------------------------------

def inclusion_profile(n_points=48, lobes=3, amplitude=0.22, phase=0.0):
    """Closed CCW polyline of the reference lobed inclusion, unit mean radius."""
    phi = np.linspace(0.0, 2.0 * math.pi, n_points, endpoint=False)
    r = 1.0 + amplitude * np.cos(lobes * phi + phase) + 0.08 * np.sin(2.0 * phi)
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


FOUR_INCLUSION_PLACEMENTS = [
    # (cx, cy, mean radius, rotation)
    (0.30, 0.30, 0.130, 0.4),
    (0.72, 0.32, 0.115, 1.9),
    (0.28, 0.72, 0.120, 3.1),
    (0.70, 0.71, 0.135, 5.0),
]


def four_inclusion_curves(n_points=48):
    """The four lobed inclusions of the reference unit cell, as closed CCW
    polylines inside the unit square."""
    curves = []
    for cx, cy, r0, rot in FOUR_INCLUSION_PLACEMENTS:
        base = inclusion_profile(n_points=n_points, phase=0.0)
        c, s = math.cos(rot), math.sin(rot)
        R = np.array([[c, -s], [s, c]])
        curves.append(np.array([cx, cy]) + r0 * (base @ R.T))
    return curves


def ring_inclusion_mesh(n_sectors, n_rings, radius=0.25,
                        matrix_material="matrix", fiber_material="fiber"):
    """Structured conforming mesh of the unit square around a centered
    polygonal-circle hole: quad rings from the circle to the outer boundary,
    plus the hole loop as a BEM region (smooth-inclusion benchmark)."""
    c = np.array([0.5, 0.5])
    phi = np.linspace(0.0, 2.0 * math.pi, n_sectors, endpoint=False)
    circ = c + radius * np.column_stack((np.cos(phi), np.sin(phi)))
    rho_sq = 0.5 / np.maximum(np.abs(np.cos(phi)), np.abs(np.sin(phi)))
    outer = c + rho_sq[:, None] * np.column_stack((np.cos(phi), np.sin(phi)))
    nodes = []
    for j in range(n_rings + 1):
        t = j / n_rings
        nodes.append(circ + t * (outer - circ))
    nodes = np.concatenate(nodes)

    def nid(k, j):
        return j * n_sectors + k

    elements = []
    for j in range(n_rings):
        for k in range(n_sectors):
            elements.append(PolyElement(
                (nid(k, j), nid(k, j + 1), nid((k + 1) % n_sectors, j + 1),
                 nid((k + 1) % n_sectors, j)), 0))
    loop = list(range(n_sectors))
    return PolygonalMesh(
        nodes=nodes, elements=elements,
        regions=[Region(0, "VEM", matrix_material),
                 Region(1, "BEM", fiber_material)],
        interface_loops={1: loop})


# ---------------------------------------------------------------------------
# partially debonded single-fiber cell with twin kink cracks
# ---------------------------------------------------------------------------

DEBOND_DEFAULTS = dict(L=1.0, D=0.15, theta_d_deg=65.0,
                       E_fiber=13.5e3, nu_fiber=0.25,
                       E_matrix=2.79e3, nu_matrix=0.33)


def debond_interface_angles(theta_d, n_debond=16, n_bonded=32):
    """CCW interface sample angles with nodes exactly at +-theta_d, symmetric
    about the x-axis of the cell."""
    deb = np.linspace(-theta_d, theta_d, n_debond + 1)
    bond = np.linspace(theta_d, 2.0 * math.pi - theta_d, n_bonded + 1)[1:-1]
    return np.concatenate((deb, bond))


def debond_cell_mesh(target_h=0.035, seed=11, n_debond=16, n_bonded=32,
                     params=None):
    """Hybrid mesh of the partially debonded cell: matrix polygons, a single
    BEM fiber loop, matrix-face duplicates along the open arc, and the two
    initial kink cracks (length D/10, parallel to y) already cut in.

    Returns (mesh, cracks, fiber_loop_ids, info).  The point set is mirrored
    about the cell axis so the twin cracks see a symmetric mesh.
    """
    from polymicro import microgen as mg
    from polymicro import fracture as fr

    p = dict(DEBOND_DEFAULTS)
    if params:
        p.update(params)
    L, D = p["L"], p["D"]
    r = 0.5 * D
    c = np.array([0.5 * L, 0.5 * L])
    th = math.radians(p["theta_d_deg"])

    angles = debond_interface_angles(th, n_debond, n_bonded)
    curve = c + r * np.column_stack((np.cos(angles), np.sin(angles)))
    rng = np.random.default_rng(seed)
    mesh = mg.multiregion_mesh(L, [curve], target_h, mode="hybrid", rng=rng,
                               resample_interfaces=False,
                               symmetry_axis_y=c[1],
                               matrix_material="matrix",
                               inclusion_material="fiber")

    loop_ids = list(mesh.interface_loops[1])
    loop_xy = mesh.nodes[loop_ids]
    phi = np.arctan2(loop_xy[:, 1] - c[1], loop_xy[:, 0] - c[0])

    # matrix-face duplicates strictly inside the debonded arc
    nodes = [mesh.nodes[i].copy() for i in range(mesh.n_nodes)]
    rewire = {}
    for pos, v in enumerate(loop_ids):
        if abs(phi[pos]) < th - 1e-9:
            nodes.append(nodes[v].copy())
            rewire[v] = len(nodes) - 1
    elements = []
    for el in mesh.elements:
        ids = tuple(rewire.get(v, v) for v in el.vertex_ids)
        elements.append(type(el)(ids, el.region_id))
    mesh = mesh.with_revision(np.array(nodes), elements)

    # twin kink cracks at the arc ends, initially parallel to y
    a0 = D / 10.0
    p_up = c + r * np.array([math.cos(th), math.sin(th)])
    p_dn = c + r * np.array([math.cos(th), -math.sin(th)])
    keep_up = np.array([-math.sin(th), math.cos(th)])     # bonded-side tangent
    keep_dn = np.array([-math.sin(th), -math.cos(th)])
    mesh, crack_up = fr.insert_crack(mesh, [p_up, p_up + (0.0, a0)],
                                     keep_dir=keep_up, bem_regions=(1,))
    mesh, crack_dn = fr.insert_crack(mesh, [p_dn, p_dn - (0.0, a0)],
                                     keep_dir=keep_dn, bem_regions=(1,))
    info = dict(center=c, radius=r, theta_d=th, loop_ids=loop_ids, **p)
    return mesh, [crack_up, crack_dn], loop_ids, info


# ---------------------------------------------------------------------------
# three-point-bending beam outline (notched at the bottom midspan)
# ---------------------------------------------------------------------------

TPB_SPAN = 450.0
TPB_HEIGHT = 100.0
TPB_NOTCH_WIDTH = 5.0
TPB_NOTCH_DEPTH = 50.0


def tpb_outline():
    x0 = 0.5 * TPB_SPAN
    w = 0.5 * TPB_NOTCH_WIDTH
    return np.array([
        [0.0, 0.0], [x0 - w, 0.0], [x0 - w, TPB_NOTCH_DEPTH],
        [x0 + w, TPB_NOTCH_DEPTH], [x0 + w, 0.0], [TPB_SPAN, 0.0],
        [TPB_SPAN, TPB_HEIGHT], [0.0, TPB_HEIGHT]])


# ---------------------------------------------------------------------------
# tension specimen: bar with a smooth central neck, meshed with structured
# 8-node polygons (corner + mid-edge vertices); perturbing the nodes of the
# finest mesh yields its non-convex variant
# ---------------------------------------------------------------------------

TENSION_LENGTH = 10.0       # cm
TENSION_HALF_WIDTH = 1.0    # cm, away from the neck
TENSION_NECK_FACTOR = 0.8   # neck half-width / outer half-width
TENSION_NECK_SPAN = 4.0     # cm, length of the necked zone


def tension_half_width(x):
    s = abs(x - 0.5 * TENSION_LENGTH)
    if s >= 0.5 * TENSION_NECK_SPAN:
        return TENSION_HALF_WIDTH
    c = math.cos(math.pi * s / TENSION_NECK_SPAN)
    return TENSION_HALF_WIDTH * (1.0 - (1.0 - TENSION_NECK_FACTOR) * c * c)


def tension_specimen_mesh(nx, ny, perturb=0.0, seed=0, material_id="specimen"):
    """Structured mesh of 8-node polygons for the necked tension bar.

    nx * ny cells; every cell carries its four corners plus the four edge
    midpoints, so a nonzero ``perturb`` (fraction of the cell size, applied
    to interior nodes) turns the straight edges into kinked, generally
    non-convex outlines.
    """
    xs = np.linspace(0.0, TENSION_LENGTH, 2 * nx + 1)
    etas = np.linspace(-1.0, 1.0, 2 * ny + 1)
    nodes = np.zeros(((2 * nx + 1) * (2 * ny + 1), 2))
    keep = np.zeros(nodes.shape[0], dtype=bool)

    def nid(i, j):
        return i * (2 * ny + 1) + j

    for i, x in enumerate(xs):
        w = tension_half_width(x)
        for j, eta in enumerate(etas):
            nodes[nid(i, j)] = (x, eta * w)

    elements = []
    for ci in range(nx):
        for cj in range(ny):
            i0, j0 = 2 * ci, 2 * cj
            loop = [
                nid(i0, j0), nid(i0 + 1, j0), nid(i0 + 2, j0),
                nid(i0 + 2, j0 + 1), nid(i0 + 2, j0 + 2),
                nid(i0 + 1, j0 + 2), nid(i0, j0 + 2), nid(i0, j0 + 1),
            ]
            for v in loop:
                keep[v] = True
            elements.append(loop)

    # drop the unused cell-centre grid points, renumber
    index = -np.ones(nodes.shape[0], dtype=int)
    index[keep] = np.arange(int(keep.sum()))
    nodes = nodes[keep]
    elements = [PolyElement(tuple(int(index[v]) for v in loop), 0)
                for loop in elements]

    if perturb > 0.0:
        rng = np.random.default_rng(seed)
        hx = TENSION_LENGTH / (2 * nx)
        hy = 2.0 * TENSION_HALF_WIDTH / (2 * ny)
        interior = np.ones(nodes.shape[0], dtype=bool)
        for k, (x, y) in enumerate(nodes):
            w = tension_half_width(x)
            if (x < 1e-9 or x > TENSION_LENGTH - 1e-9
                    or abs(abs(y) - w) < 1e-9 * TENSION_LENGTH):
                interior[k] = False
        shift = rng.uniform(-perturb, perturb, size=(nodes.shape[0], 2))
        shift *= np.array([hx, hy])
        nodes = nodes + np.where(interior[:, None], shift, 0.0)

    return PolygonalMesh(nodes=nodes, elements=elements,
                         regions=[Region(0, "VEM", material_id)])
