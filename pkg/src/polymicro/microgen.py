"""Stochastic microstructure generation and polygonal meshing pipelines.

Voronoi work is delegated to Qhull through scipy; bounded diagrams come from
the mirror trick (reflecting seeds across the edges of a convex container
puts cell walls exactly on its boundary).  Grain meshes are centroidal
Voronoi tessellations relaxed by Lloyd iterations; composite meshes are the
polygonal dual of a triangulation kept conforming to the inclusion
interfaces.  Every generator is a deterministic function of its seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, Voronoi, cKDTree
from scipy.spatial import QhullError

from polymicro.mesh import (MeshError, PolyElement, PolygonalMesh, Region,
                            signed_area)

log = logging.getLogger("polymicro")


class GenerationError(MeshError):
    pass


class DegenerateSeedsError(GenerationError):
    pass


class PackingStalledError(GenerationError):
    def __init__(self, message, achieved_min_distance):
        super().__init__(message)
        self.achieved_min_distance = achieved_min_distance


class TriangulationFailure(GenerationError):
    pass


@dataclass(frozen=True)
class PolycrystalSpec:
    n_grains: int
    box_side: float
    rng_seed: int
    target_mesh_size: float

    def __post_init__(self):
        if self.n_grains < 1 or self.box_side <= 0 or self.target_mesh_size <= 0:
            raise GenerationError("invalid polycrystal spec")


@dataclass(frozen=True)
class GrainAttributes:
    grain_id: int
    theta: float
    material_id: str


@dataclass(frozen=True)
class FiberCellSpec:
    volume_fraction: float
    delta: float                     # cell side / fiber radius
    rng_seed: int
    fiber_shape: str = "circle"      # circle | polyline
    min_spacing_factor: float = 2.05  # min centre spacing in units of r

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 0.9:
            raise GenerationError("volume fraction out of (0, 0.9)")
        if self.delta <= 2.0:
            raise GenerationError("delta must exceed 2")
        if self.min_spacing_factor <= 2.0:
            raise GenerationError("min spacing must exceed the fiber diameter")

    @property
    def n_fibers(self):
        return int(round(self.volume_fraction * self.delta ** 2 / math.pi))


@dataclass
class FiberPacking:
    centers: np.ndarray          # (N, 2) in the unit cell [0, L)^2
    rotations: np.ndarray        # (N,)
    radius: float
    box_side: float
    realized_vf: float
    iterations: int


def _order_ccw(coords, anchor):
    ang = np.arctan2(coords[:, 1] - anchor[1], coords[:, 0] - anchor[0])
    return coords[np.argsort(ang)]


def _reflect(points, p0, p1):
    """Reflect points across the line through p0-p1."""
    d = p1 - p0
    d = d / np.hypot(*d)
    rel = points - p0
    along = rel @ d
    perp = rel - along[:, None] * d[None, :]
    return points - 2.0 * perp


def bounded_voronoi(seeds, polygon):
    """Voronoi cells of seeds inside a convex CCW polygon, exactly clipped.

    Mirroring every seed across each polygon edge line bounds all real cells
    and places shared walls exactly on the container boundary.  Returns one
    CCW coordinate loop per seed.  Degenerate (cocircular) inputs are
    perturbed once by 1e-10 of the container size before failing.
    """
    seeds = np.asarray(seeds, dtype=float)
    polygon = np.asarray(polygon, dtype=float)
    scale = max(polygon.max(axis=0) - polygon.min(axis=0))

    def attempt(pts):
        allpts = [pts]
        m = polygon.shape[0]
        for e in range(m):
            allpts.append(_reflect(pts, polygon[e], polygon[(e + 1) % m]))
        vor = Voronoi(np.concatenate(allpts))
        cells = []
        for i in range(pts.shape[0]):
            region = vor.regions[vor.point_region[i]]
            if not region or -1 in region:
                raise DegenerateSeedsError(f"unbounded cell for seed {i}")
            coords = vor.vertices[region]
            if signed_area(coords) < 0.0:
                coords = coords[::-1]
            cells.append(coords)
        return cells

    try:
        return attempt(seeds)
    except (QhullError, DegenerateSeedsError):
        rng = np.random.default_rng(12345)
        jitter = 1e-10 * scale * rng.standard_normal(seeds.shape)
        try:
            return attempt(seeds + jitter)
        except (QhullError, DegenerateSeedsError) as exc:
            raise DegenerateSeedsError(f"voronoi failed after perturbation: {exc}") from exc


def rectangle_polygon(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def voronoi_tessellate(seeds, box):
    """Bounded Voronoi diagram inside the rectangle (x0, y0, x1, y1): one
    convex CCW cell per seed, tiling the box exactly."""
    return bounded_voronoi(seeds, rectangle_polygon(*box))


def polygon_area_centroid(coords):
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return a, np.array([cx, cy])


def lloyd_cvt(seeds, polygon, max_iter=30, tol_factor=1e-3, h=None):
    """Centroidal Voronoi tessellation of a convex polygon by Lloyd
    relaxation: stop after ``max_iter`` sweeps or when the largest centroid
    motion drops below tol_factor * h."""
    pts = np.asarray(seeds, dtype=float).copy()
    if h is None:
        _, _ = None, None
        h = math.sqrt(abs(signed_area(polygon)) / max(len(pts), 1))
    cells = bounded_voronoi(pts, polygon)
    for _ in range(max_iter):
        centroids = np.array([polygon_area_centroid(c)[1] for c in cells])
        move = np.hypot(*(centroids - pts).T).max()
        pts = centroids
        cells = bounded_voronoi(pts, polygon)
        if move < tol_factor * h:
            break
    return cells, pts


def _sample_in_polygon(rng, polygon, n):
    lo = polygon.min(axis=0)
    hi = polygon.max(axis=0)
    out = []
    # convex container: cross-product sign test against each edge
    m = polygon.shape[0]
    edges = [(polygon[i], polygon[(i + 1) % m]) for i in range(m)]
    while len(out) < n:
        cand = lo + (hi - lo) * rng.random((4 * n, 2))
        for p in cand:
            if all(np.cross(b - a, p - a) > 0.0 for a, b in edges):
                out.append(p)
                if len(out) == n:
                    break
    return np.array(out)


def polycrystal_generate(spec, base_material="grain"):
    """Poisson-Voronoi grain morphology, each grain meshed independently by a
    CVT and stitched into a conforming mesh by promoting neighbour nodes to
    collinear vertices.  Returns (mesh, [GrainAttributes])."""
    rng = np.random.default_rng(spec.rng_seed)
    L = spec.box_side
    box = rectangle_polygon(0.0, 0.0, L, L)
    seeds = L * rng.random((spec.n_grains, 2))
    grains = bounded_voronoi(seeds, box)
    thetas = rng.uniform(0.0, 2.0 * math.pi, spec.n_grains)

    h = spec.target_mesh_size
    all_cells = []     # (grain id, coords)
    for g, grain in enumerate(grains):
        area = abs(signed_area(grain))
        n_el = max(1, int(round(area / (h * h))))
        if n_el == 1:
            all_cells.append((g, grain))
            continue
        init = _sample_in_polygon(rng, grain, n_el)
        cells, _ = lloyd_cvt(init, grain, h=h)
        for c in cells:
            all_cells.append((g, c))

    mesh = _stitch_cells(all_cells, n_regions=spec.n_grains,
                         material_ids=[f"{base_material}:{g}" for g in range(spec.n_grains)],
                         tol=1e-9 * L * math.sqrt(2.0))
    attrs = [GrainAttributes(g, float(thetas[g]), base_material)
             for g in range(spec.n_grains)]
    return mesh, attrs


def _stitch_cells(tagged_cells, n_regions, material_ids, tol):
    """Merge duplicate nodes across independently generated cells and insert
    every node sitting on a foreign edge as a collinear vertex."""
    raw = np.concatenate([c for _, c in tagged_cells])
    tree = cKDTree(raw)
    groups = tree.query_ball_point(raw, tol)
    canon = -np.ones(raw.shape[0], dtype=int)
    nodes = []
    for i in range(raw.shape[0]):
        if canon[i] >= 0:
            continue
        idx = len(nodes)
        nodes.append(raw[i])
        for j in groups[i]:
            if canon[j] < 0:
                canon[j] = idx
    nodes = np.array(nodes)

    loops = []
    offset = 0
    for g, c in tagged_cells:
        ids = [int(canon[offset + k]) for k in range(c.shape[0])]
        # drop consecutive duplicates from the merge
        loop = [v for k, v in enumerate(ids) if v != ids[(k - 1) % len(ids)]]
        offset += c.shape[0]
        if len(loop) >= 3:
            loops.append((g, loop))

    tree = cKDTree(nodes)
    out_elements = []
    for g, loop in loops:
        new_loop = []
        m = len(loop)
        for k in range(m):
            a, b = loop[k], loop[(k + 1) % m]
            pa, pb = nodes[a], nodes[b]
            new_loop.append(a)
            d = pb - pa
            L2 = float(d @ d)
            if L2 == 0.0:
                continue
            mid = 0.5 * (pa + pb)
            radius = 0.5 * math.sqrt(L2) + 2.0 * tol
            inside = []
            for j in tree.query_ball_point(mid, radius):
                if j == a or j == b:
                    continue
                s = float((nodes[j] - pa) @ d / L2)
                if not (1e-9 < s < 1.0 - 1e-9):
                    continue
                perp = nodes[j] - (pa + s * d)
                if float(np.hypot(*perp)) < tol:
                    inside.append((s, j))
            for _, j in sorted(inside):
                new_loop.append(j)
        out_elements.append(PolyElement(tuple(new_loop), g))

    regions = [Region(g, "VEM", material_ids[g]) for g in range(n_regions)]
    return PolygonalMesh(nodes=nodes, elements=out_elements, regions=regions)


# ---------------------------------------------------------------------------
# fiber packing
# ---------------------------------------------------------------------------

def _replicate(points, L):
    shifts = [(dx, dy) for dx in (-L, 0.0, L) for dy in (-L, 0.0, L)]
    return np.concatenate([points + np.array(s) for s in shifts])


def periodic_min_distance(points, L):
    """Minimum pairwise distance under periodic wrapping (brute force via a
    periodic KD-tree)."""
    if points.shape[0] < 2:
        return math.inf
    tree = cKDTree(np.mod(points, L), boxsize=L)
    d, _ = tree.query(np.mod(points, L), k=2)
    return float(d[:, 1].min())


def fiber_pack(spec):
    """Random periodic fiber arrangement by Delaunay-edge relaxation.

    Seeds scatter uniformly, get replicated into the 8 surrounding copies,
    and every Delaunay edge shorter than the minimum spacing pushes its ends
    apart (half the deficit plus a 5% margin each) until no short pair
    remains.  Fails with PackingStalledError past 10 N iterations.
    """
    rng = np.random.default_rng(spec.rng_seed)
    L = 1.0
    r = L / spec.delta
    n = spec.n_fibers
    if n < 1:
        raise GenerationError("volume fraction too small: no fibers")
    d_req = spec.min_spacing_factor * r
    # relax toward a slightly larger spacing: pair pushes interact, so the
    # iteration approaches its own threshold from below
    d_min = 1.02 * d_req
    pts = L * rng.random((n, 2))
    rotations = rng.uniform(0.0, 2.0 * math.pi, n)

    max_iter = max(10 * n, 50)
    it = 0
    if n > 1:
        while it < max_iter:
            it += 1
            rep = _replicate(pts, L)
            tri = Delaunay(rep)
            edges = set()
            for simplex in tri.simplices:
                for a in range(3):
                    u, v = simplex[a], simplex[(a + 1) % 3]
                    if u > v:
                        u, v = v, u
                    edges.add((u, v))
            # one push per physical fiber pair: keep the shortest replica
            # instance of each, anchored in the central copy
            shortest = {}
            for (u, v) in edges:
                if u >= n and v >= n:
                    continue
                iu, iv = u % n, v % n
                if iu == iv:
                    continue
                dvec = rep[v] - rep[u]
                dd = float(np.hypot(*dvec))
                if dd >= d_min:
                    continue
                key = (min(iu, iv), max(iu, iv))
                if key not in shortest or dd < shortest[key][0]:
                    sign = 1.0 if (iu, iv) == key else -1.0
                    shortest[key] = (dd, sign * dvec)
            if not shortest or periodic_min_distance(pts, L) >= d_req:
                break
            disp = np.zeros_like(pts)
            for (iu, iv), (dd, dvec) in shortest.items():
                if dd < 1e-12 * L:
                    ang = rng.uniform(0.0, 2.0 * math.pi)
                    dvec = np.array([math.cos(ang), math.sin(ang)])
                    dd = 1e-12 * L
                u = dvec / dd
                push = 0.5 * (d_min - dd) * 1.05
                disp[iu] -= push * u
                disp[iv] += push * u
            pts = np.mod(pts + disp, L)
        else:
            achieved = periodic_min_distance(pts, L)
            raise PackingStalledError(
                f"packing stalled after {max_iter} iterations", achieved)

    realized = n * math.pi * r * r / (L * L)
    if abs(realized - spec.volume_fraction) > 0.05:
        log.info("fiber rounding: target Vf=%.4f realized Vf=%.4f (N=%d)",
                 spec.volume_fraction, realized, n)
    return FiberPacking(centers=pts, rotations=rotations, radius=r,
                        box_side=L, realized_vf=realized, iterations=it)


def interior_fiber_arrangement(packing, min_spacing_factor=2.05,
                               clearance_factor=0.3, max_iter=None, seed=0):
    """Pull boundary-crossing fibers inside the cell window and re-relax.

    KUBC homogenization meshes the cell as-is, so fibers wrapping across the
    periodic boundary are moved inward (keeping the fiber count, hence the
    realized volume fraction) and the plain Delaunay push-apart runs without
    replicas until the spacing bound holds again inside the window.
    """
    L = packing.box_side
    r = packing.radius
    lo = r * (1.0 + clearance_factor)
    hi = L - lo
    pts = np.clip(np.mod(packing.centers, L), lo, hi)
    n = pts.shape[0]
    d_req = min_spacing_factor * r
    d_target = 1.02 * d_req
    rng = np.random.default_rng(seed)
    if max_iter is None:
        max_iter = max(20 * n, 100)
    it = 0
    while n > 1 and it < max_iter:
        it += 1
        tree = cKDTree(pts)
        pairs = tree.query_pairs(d_target, output_type="ndarray")
        if pairs.size == 0:
            break
        disp = np.zeros_like(pts)
        for a, b in pairs:
            dvec = pts[b] - pts[a]
            dd = float(np.hypot(*dvec))
            if dd < 1e-12 * L:
                ang = rng.uniform(0.0, 2.0 * math.pi)
                dvec = np.array([math.cos(ang), math.sin(ang)])
                dd = 1e-12 * L
            u = dvec / dd
            push = 0.5 * (d_target - dd) * 1.05
            disp[a] -= push * u
            disp[b] += push * u
        pts = np.clip(pts + disp, lo, hi)
        tree = cKDTree(pts)
        dmin, _ = tree.query(pts, k=2)
        if dmin[:, 1].min() >= d_req:
            break
    else:
        if n > 1:
            tree = cKDTree(pts)
            dmin, _ = tree.query(pts, k=2)
            raise PackingStalledError(
                f"interior re-packing stalled after {max_iter} iterations",
                float(dmin[:, 1].min()))
    return FiberPacking(centers=pts, rotations=packing.rotations.copy(),
                        radius=r, box_side=L, realized_vf=packing.realized_vf,
                        iterations=it)


def periodic_inclusion_curves(packing, profile=None, n_points=24):
    """Closed inclusion outlines inside the unit cell, including the parts of
    fibers that wrap across the periodic boundary (as clipped arcs is out of
    scope: fibers too close to the boundary are shifted inward by the caller
    or the cell is used with fully interior fibers)."""
    curves = []
    for (cx, cy), rot in zip(packing.centers, packing.rotations):
        if profile is None:
            phi = np.linspace(0.0, 2.0 * math.pi, n_points, endpoint=False)
            curve = np.column_stack((cx + packing.radius * np.cos(phi),
                                     cy + packing.radius * np.sin(phi)))
        else:
            c, s = math.cos(rot), math.sin(rot)
            R = np.array([[c, -s], [s, c]])
            curve = np.array([cx, cy]) + packing.radius * (profile @ R.T)
        curves.append(curve)
    return curves


# ---------------------------------------------------------------------------
# multi-region polygonal meshing (triangulate + polygonal dual)
# ---------------------------------------------------------------------------

def _resample_closed(curve, h):
    """Resample a closed polyline at near-uniform arclength spacing h."""
    curve = np.asarray(curve, dtype=float)
    if signed_area(curve) < 0.0:
        curve = curve[::-1]
    closed = np.vstack((curve, curve[:1]))
    seg = np.diff(closed, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    arclen = np.concatenate(([0.0], np.cumsum(seglen)))
    total = arclen[-1]
    n = max(8, int(round(total / h)))
    s = np.linspace(0.0, total, n, endpoint=False)
    out = np.empty((n, 2))
    k = 0
    for i, si in enumerate(s):
        while arclen[k + 1] < si:
            k += 1
        t = (si - arclen[k]) / seglen[k]
        out[i] = closed[k] + t * seg[k]
    return out


def _points_in_polygon(pts, poly):
    from matplotlib.path import Path
    return Path(poly, closed=False).contains_points(np.atleast_2d(pts))


def _point_in_polygon(p, poly):
    return bool(_points_in_polygon(np.asarray(p, dtype=float)[None, :], poly)[0])


def _dual_cells(points, triangles, tri_ids):
    """Median-dual polygons of a triangle subset: one cell per node, vertices
    at triangle centroids, shared-edge midpoints and (for boundary nodes of
    the subset) the node itself.  Vertices carry exact identity keys so
    adjacent cells share coordinates bit-for-bit."""
    tri_of_node = {}
    edge_tris = {}
    for t_local, tri in enumerate(triangles):
        for a in range(3):
            i = tri[a]
            tri_of_node.setdefault(i, []).append(t_local)
            j = tri[(a + 1) % 3]
            key = (i, j) if i < j else (j, i)
            edge_tris.setdefault(key, []).append(t_local)

    cells = []
    for node, tris in tri_of_node.items():
        # local edges at the node: map triangle -> its two node-adjacent edges
        def node_edges(t_local):
            tri = triangles[t_local]
            others = [v for v in tri if v != node]
            return [(node, others[0]), (node, others[1])]

        def ekey(e):
            return (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])

        # find a boundary start edge (used by exactly one subset triangle)
        edge_use = {}
        for t_local in tris:
            for e in node_edges(t_local):
                edge_use.setdefault(ekey(e), []).append(t_local)
        boundary_edges = [e for e, ts in edge_use.items() if len(ts) == 1]

        if boundary_edges:
            start_edge = boundary_edges[0]
            t_cur = edge_use[start_edge][0]
        else:
            t_cur = tris[0]
            start_edge = ekey(node_edges(t_cur)[0])

        ordered = []
        visited = set()
        edge_in = start_edge
        while t_cur is not None and t_cur not in visited:
            visited.add(t_cur)
            ordered.append((edge_in, t_cur))
            e1, e2 = (ekey(e) for e in node_edges(t_cur))
            edge_out = e2 if edge_in == e1 else e1
            nxt = [t for t in edge_use[edge_out] if t != t_cur]
            if not nxt:
                ordered.append((edge_out, None))
                break
            edge_in = edge_out
            t_cur = nxt[0]
        if len(visited) != len(tris):
            raise TriangulationFailure(
                f"disconnected triangle fan at node {node}")

        keys = []
        is_boundary = bool(boundary_edges)
        if is_boundary:
            keys.append(("n", node))
        for k, (edge_in, t_local) in enumerate(ordered):
            if is_boundary or k > 0:
                keys.append(("m",) + edge_in)
            if t_local is not None:
                keys.append(("c", tri_ids[t_local]))
        if not is_boundary:
            # closed fan: alternate centroid/midpoint, already cyclic
            keys = []
            for (edge_in, t_local) in ordered:
                keys.append(("m",) + edge_in)
                keys.append(("c", tri_ids[t_local]))
        cells.append((node, keys))
    return cells


def _key_coords(key, points, centroids):
    if key[0] == "n":
        return points[key[1]]
    if key[0] == "m":
        return 0.5 * (points[key[1]] + points[key[2]])
    return centroids[key[1]]


def multiregion_mesh(box_side, inclusion_curves, target_h, mode="hybrid",
                     rng=None, interface_h=None, matrix_material="matrix",
                     inclusion_material="fiber", max_retries=3,
                     resample_interfaces=True, symmetry_axis_y=None,
                     refine_boxes=()):
    """Conforming polygonal mesh of a square cell with inclusions.

    A scattered point set (box boundary, resampled interface nodes, jittered
    interior lattice) is Delaunay-triangulated; triangles are classified per
    region and each region is meshed by the polygonal dual of its triangle
    subset, so matrix polygons meet every inclusion exactly at the interface
    nodes and interface-edge midpoints.  ``mode='hybrid'`` leaves inclusion
    interiors empty and returns their interface loops for BEM regions;
    ``mode='vem'`` meshes the inclusions too.  ``symmetry_axis_y`` mirrors the
    interior scatter about a horizontal axis (crack-path symmetry studies);
    ``refine_boxes`` entries (x0, y0, x1, y1, h_fine) densify locally.
    """
    L = float(box_side)
    outline = rectangle_polygon(0.0, 0.0, L, L)
    return polygonal_domain_mesh(
        outline, inclusion_curves, target_h, mode=mode, rng=rng,
        interface_h=interface_h, matrix_material=matrix_material,
        inclusion_material=inclusion_material, max_retries=max_retries,
        resample_interfaces=resample_interfaces,
        symmetry_axis_y=symmetry_axis_y, refine_boxes=refine_boxes)


def polygonal_domain_mesh(outline, inclusion_curves, target_h, mode="hybrid",
                          rng=None, interface_h=None, matrix_material="matrix",
                          inclusion_material="fiber", max_retries=3,
                          resample_interfaces=True, symmetry_axis_y=None,
                          refine_boxes=()):
    """Polygonal-dual mesh of an arbitrary (possibly non-convex) CCW outline
    with optional inclusion regions; see ``multiregion_mesh``."""
    if rng is None:
        rng = np.random.default_rng(0)
    outline = np.asarray(outline, dtype=float)
    if signed_area(outline) < 0.0:
        outline = outline[::-1]
    if interface_h is None:
        interface_h = 0.75 * target_h

    if resample_interfaces:
        loops = [_resample_closed(c, interface_h) for c in inclusion_curves]
    else:
        loops = [np.asarray(c, dtype=float) for c in inclusion_curves]

    for attempt in range(max_retries + 1):
        points, iface_slices = _build_point_set(
            outline, loops, target_h, rng, symmetry_axis_y, refine_boxes)
        try:
            tri = Delaunay(points)
        except QhullError as exc:
            raise TriangulationFailure(str(exc)) from exc
        centroids = points[tri.simplices].mean(axis=1)
        region_of_tri = np.full(tri.simplices.shape[0], -1, dtype=int)
        inside = _points_in_polygon(centroids, outline)
        region_of_tri[inside] = 0
        for k, lp in enumerate(loops):
            lo = lp.min(axis=0)
            hi = lp.max(axis=0)
            cand = np.where(inside
                            & (centroids[:, 0] >= lo[0]) & (centroids[:, 0] <= hi[0])
                            & (centroids[:, 1] >= lo[1]) & (centroids[:, 1] <= hi[1]))[0]
            if cand.size == 0:
                continue
            mask = _points_in_polygon(centroids[cand], lp)
            region_of_tri[cand[mask]] = k + 1

        missing = _missing_interface_edges(tri, iface_slices)
        if not missing:
            break
        new_loops = []
        for k, lp in enumerate(loops):
            segs = missing.get(k, set())
            if not segs:
                new_loops.append(lp)
                continue
            pts = []
            m = lp.shape[0]
            for i in range(m):
                pts.append(lp[i])
                if i in segs:
                    pts.append(0.5 * (lp[i] + lp[(i + 1) % m]))
            new_loops.append(np.array(pts))
        loops = new_loops
        log.debug("re-triangulating: %d missing interface segments",
                  sum(len(v) for v in missing.values()))
    else:
        raise TriangulationFailure("interface segments missing after retries")

    tri_centroids = points[tri.simplices].mean(axis=1)
    key_index = {}
    nodes = []

    def nid(key):
        if key not in key_index:
            key_index[key] = len(nodes)
            nodes.append(_key_coords(key, points, tri_centroids))
        return key_index[key]

    elements = []
    regions = [Region(0, "VEM", matrix_material)]
    interface_loops = {}

    build_regions = [0] if mode == "hybrid" else list(range(len(loops) + 1))
    if mode == "hybrid":
        for k in range(len(loops)):
            regions.append(Region(k + 1, "BEM", inclusion_material))
    else:
        for k in range(len(loops)):
            regions.append(Region(k + 1, "VEM", inclusion_material))

    for r in build_regions:
        ids = np.where(region_of_tri == r)[0]
        if ids.size == 0:
            if r == 0:
                raise TriangulationFailure("matrix region has no triangles")
            continue
        cells = _dual_cells(points, tri.simplices[ids], ids)
        for node, keys in cells:
            loop = [nid(key) for key in keys]
            loop = [v for i, v in enumerate(loop) if v != loop[(i - 1) % len(loop)]]
            if len(loop) < 3:
                continue
            coords = np.array([nodes[v] for v in loop])
            if signed_area(coords) < 0.0:
                loop = loop[::-1]
            elements.append(PolyElement(tuple(loop), r))

    # interface loops: resampled nodes plus the midpoints between them
    for k, lp in enumerate(loops):
        start, end = iface_slices[k]
        m = end - start
        loop_ids = []
        for i in range(m):
            a = start + i
            b = start + (i + 1) % m
            loop_ids.append(nid(("n", a)))
            loop_ids.append(nid(("m", min(a, b), max(a, b))))
        interface_loops[k + 1] = loop_ids

    mesh = PolygonalMesh(nodes=np.array(nodes), elements=elements,
                         regions=regions, interface_loops=interface_loops)
    return mesh


def _sample_outline(outline, h, refine_boxes):
    """Outline polyline resampled per edge (corner vertices kept exact)."""
    pts = []
    m = outline.shape[0]
    for i in range(m):
        a, b = outline[i], outline[(i + 1) % m]
        mid = 0.5 * (a + b)
        h_loc = _local_h(mid, h, refine_boxes)
        L = float(np.hypot(*(b - a)))
        n = max(1, int(round(L / h_loc)))
        for k in range(n):
            pts.append(a + (k / n) * (b - a))
    return np.array(pts)


def _local_h(p, h, refine_boxes):
    for (x0, y0, x1, y1, hf) in refine_boxes:
        if x0 <= p[0] <= x1 and y0 <= p[1] <= y1:
            return hf
    return h


def _lattice(lo, hi, h, rng, jitter=0.2):
    nx = max(1, int(math.ceil((hi[0] - lo[0]) / h)))
    ny = max(1, int(math.ceil((hi[1] - lo[1]) / h)))
    xs = lo[0] + (np.arange(nx) + 0.5) * ((hi[0] - lo[0]) / nx)
    ys = lo[1] + (np.arange(ny) + 0.5) * ((hi[1] - lo[1]) / ny)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack((gx.ravel(), gy.ravel()))
    return pts + rng.uniform(-jitter, jitter, pts.shape) * \
        np.array([(hi[0] - lo[0]) / nx, (hi[1] - lo[1]) / ny])


def _distance_to_polyline(pts, poly, closed=True):
    segs = list(range(poly.shape[0] if closed else poly.shape[0] - 1))
    d = np.full(pts.shape[0], np.inf)
    m = poly.shape[0]
    for i in segs:
        a, b = poly[i], poly[(i + 1) % m]
        e = b - a
        L2 = float(e @ e)
        if L2 == 0.0:
            continue
        t = np.clip((pts - a) @ e / L2, 0.0, 1.0)
        proj = a + t[:, None] * e
        d = np.minimum(d, np.hypot(*(pts - proj).T))
    return d


def _build_point_set(outline, loops, h, rng, symmetry_axis_y=None,
                     refine_boxes=()):
    pts = []
    iface_slices = []
    pos = 0
    for lp in loops:
        pts.append(lp)
        iface_slices.append((pos, pos + lp.shape[0]))
        pos += lp.shape[0]
    boundary = _sample_outline(outline, h, refine_boxes)
    pts.append(boundary)
    pos += boundary.shape[0]

    lo = outline.min(axis=0)
    hi = outline.max(axis=0)
    interior = _lattice(lo, hi, h, rng)
    for (x0, y0, x1, y1, hf) in refine_boxes:
        coarse_in_box = ((interior[:, 0] >= x0) & (interior[:, 0] <= x1)
                         & (interior[:, 1] >= y0) & (interior[:, 1] <= y1))
        interior = interior[~coarse_in_box]
        interior = np.concatenate(
            [interior, _lattice((x0, y0), (x1, y1), hf, rng)])

    if symmetry_axis_y is not None:
        upper = interior[interior[:, 1] > symmetry_axis_y + 1e-12]
        mirrored = upper.copy()
        mirrored[:, 1] = 2.0 * symmetry_axis_y - mirrored[:, 1]
        interior = np.concatenate([upper, mirrored])

    keep = _points_in_polygon(interior, outline)
    h_arr = np.full(interior.shape[0], float(h))
    for (x0, y0, x1, y1, hf) in refine_boxes:
        in_box = ((interior[:, 0] >= x0) & (interior[:, 0] <= x1)
                  & (interior[:, 1] >= y0) & (interior[:, 1] <= y1))
        h_arr[in_box] = np.minimum(h_arr[in_box], hf)
    guard = np.concatenate([lp for lp in loops]) if loops else np.zeros((0, 2))
    if guard.shape[0]:
        tree = cKDTree(guard)
        d, _ = tree.query(interior)
        keep &= d > np.minimum(0.6 * h_arr, 0.6 * _min_loop_spacing(loops))
    keep &= _distance_to_polyline(interior, outline) > 0.4 * h_arr
    pts.append(interior[keep])
    return np.concatenate(pts), iface_slices


def _min_loop_spacing(loops):
    m = math.inf
    for lp in loops:
        seg = np.roll(lp, -1, axis=0) - lp
        m = min(m, float(np.hypot(seg[:, 0], seg[:, 1]).min()))
    return m if math.isfinite(m) else 1.0


def _missing_interface_edges(tri, iface_slices):
    edge_set = set()
    for simplex in tri.simplices:
        for a in range(3):
            i, j = simplex[a], simplex[(a + 1) % 3]
            edge_set.add((min(i, j), max(i, j)))
    missing = {}
    for k, (start, end) in enumerate(iface_slices):
        m = end - start
        for i in range(m):
            a = start + i
            b = start + (i + 1) % m
            if (min(a, b), max(a, b)) not in edge_set:
                missing.setdefault(k, set()).add(i)
    return missing


# ---------------------------------------------------------------------------
# small-element absorption
# ---------------------------------------------------------------------------

def absorb_small_elements(mesh, ratio_threshold):
    """Merge every element smaller than ratio_threshold * mean area into its
    largest-shared-edge neighbour of the same region by cancelling the shared
    directed edges; total area is conserved and non-convex unions are kept.
    Elements with no admissible neighbour are left untouched (warned)."""
    areas = np.array([abs(signed_area(mesh.element_coords(el)))
                      for el in mesh.elements])
    mean_area = areas.mean()
    limit = ratio_threshold * mean_area

    elements = {k: list(el.vertex_ids) for k, el in enumerate(mesh.elements)}
    region_of = {k: el.region_id for k, el in enumerate(mesh.elements)}
    area_of = dict(enumerate(areas))

    def directed_edges(loop):
        return [(loop[i], loop[(i + 1) % len(loop)]) for i in range(len(loop))]

    def build_edge_map():
        owner = {}
        for k, loop in elements.items():
            for e in directed_edges(loop):
                owner[e] = k
        return owner

    owner = build_edge_map()
    small = sorted((k for k in elements if area_of[k] < limit),
                   key=lambda k: area_of[k])
    n_merged = 0
    for k in small:
        if k not in elements or area_of[k] >= limit:
            continue
        loop = elements[k]
        shared = {}
        for (a, b) in directed_edges(loop):
            nb = owner.get((b, a))
            if nb is not None and nb != k and region_of[nb] == region_of[k]:
                shared[nb] = shared.get(nb, 0.0) + float(
                    np.hypot(*(mesh.nodes[b] - mesh.nodes[a])))
        if not shared:
            log.warning("element %d below size threshold has no same-region "
                        "neighbour; left untouched", k)
            continue
        nb = max(shared, key=shared.get)
        merged = _union_loops(elements[k], elements[nb])
        if merged is None:
            log.warning("skipping non-simple union of elements %d and %d", k, nb)
            continue
        for e in directed_edges(elements[k]):
            owner.pop(e, None)
        for e in directed_edges(elements[nb]):
            owner.pop(e, None)
        del elements[k]
        elements[nb] = merged
        area_of[nb] = area_of[nb] + area_of[k]
        del area_of[k]
        for e in directed_edges(merged):
            owner[e] = nb
        n_merged += 1

    new_elements = [PolyElement(tuple(loop), region_of[k])
                    for k, loop in sorted(elements.items())]
    log.info("absorbed %d small elements (threshold %.3g of mean area)",
             n_merged, ratio_threshold)
    return mesh.with_revision(mesh.nodes.copy(), new_elements)


def _union_loops(loop_a, loop_b):
    """Union of two edge-adjacent polygons by cancelling opposite directed
    edges; returns None when the result is not a single closed cycle."""
    edges = {}
    for loop in (loop_a, loop_b):
        m = len(loop)
        for i in range(m):
            a, b = loop[i], loop[(i + 1) % m]
            if (b, a) in edges:
                edges.pop((b, a))
            else:
                edges[(a, b)] = True
    if not edges:
        return None
    succ = {}
    for (a, b) in edges:
        if a in succ:
            return None      # branching boundary: would create a hole
        succ[a] = b
    start = next(iter(succ))
    out = [start]
    cur = succ[start]
    while cur != start:
        out.append(cur)
        if cur not in succ or len(out) > len(succ) + 1:
            return None
        cur = succ[cur]
    if len(out) != len(succ):
        return None
    return out
