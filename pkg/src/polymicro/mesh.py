"""Polygonal mesh data model, geometric primitives, validation and file I/O.

Meshes are immutable after construction: every query here is pure, so
concurrent evaluation over elements is safe.  Topology-changing operations
(crack insertion) build a new mesh revision instead of mutating in place.

Conventions
-----------
* element vertex loops are counter-clockwise;
* consecutive collinear vertices are allowed (hanging nodes);
* regions are tagged ``"VEM"`` or ``"BEM"``; a BEM region carries no area
  elements, only a closed interface loop of node indices, ordered CCW
  around the inclusion so the loop normal points into the matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree


class MeshError(Exception):
    """Base class for mesh construction/validation failures."""


class ZeroAreaError(MeshError):
    pass


class SelfIntersectionError(MeshError):
    pass


class NonManifoldError(MeshError):
    pass


class ZeroReferenceError(MeshError):
    """Relative error requested against a zero reference field."""


class ParseError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Region:
    id: int
    kind: str            # "VEM" | "BEM"
    material_id: str


@dataclass(frozen=True)
class PolyElement:
    vertex_ids: tuple
    region_id: int

    @property
    def n_vertices(self):
        return len(self.vertex_ids)


@dataclass
class PolygonalMesh:
    """Nodes, polygonal elements, region table and BEM interface loops."""

    nodes: np.ndarray                      # (N, 2) float
    elements: list                         # list[PolyElement]
    regions: list = field(default_factory=list)   # list[Region]
    interface_loops: dict = field(default_factory=dict)  # region id -> [node ids]
    revision: int = 0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError("nodes must be an (N, 2) array")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinates")
        if not self.regions:
            self.regions = [Region(0, "VEM", "default")]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return len(self.elements)

    def region(self, region_id):
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(f"unknown region id {region_id}")

    def element_coords(self, element):
        return self.nodes[list(element.vertex_ids)]

    def bbox_diagonal(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def with_revision(self, nodes, elements, interface_loops=None):
        """New mesh revision sharing the region table."""
        return PolygonalMesh(
            nodes=nodes,
            elements=elements,
            regions=list(self.regions),
            interface_loops=dict(self.interface_loops if interface_loops is None
                                 else interface_loops),
            revision=self.revision + 1,
        )


@dataclass(frozen=True)
class ElementGeometry:
    """Geometric quantities of one polygon.

    ``xi``/``eta`` are the vertex coordinates centred at the vertex mean and
    scaled by the diameter, so max(|xi|, |eta|) <= 1 always holds.
    """

    area: float
    centroid: np.ndarray        # (2,), arithmetic mean of the vertices
    diameter: float
    edge_lengths: np.ndarray    # (m,), edge i runs vertex i -> i+1
    normals: np.ndarray         # (m, 2), outward unit normals
    xi: np.ndarray              # (m,)
    eta: np.ndarray             # (m,)

    @property
    def n_vertices(self):
        return self.xi.shape[0]


def signed_area(coords):
    """Shoelace signed area of a vertex loop (positive for CCW)."""
    x = coords[:, 0]
    y = coords[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2):
    """True when open segments (p1,p2) and (q1,q2) cross at a single interior
    point; endpoint touching (any orientation test exactly zero) is not a
    proper crossing."""
    d1 = float(np.cross(q2 - q1, p1 - q1))
    d2 = float(np.cross(q2 - q1, p2 - q1))
    d3 = float(np.cross(p2 - p1, q1 - p1))
    d4 = float(np.cross(p2 - p1, q2 - p1))
    return d1 * d2 < 0.0 and d3 * d4 < 0.0


def polygon_self_intersects(coords, tol=0.0):
    """Check a vertex loop for proper edge crossings (vectorized over all
    edge pairs).

    Coincident opposite edges (zero-width crack slits produced by element
    splitting) are not counted: they touch but do not cross.
    """
    m = coords.shape[0]
    if m < 4:
        return False
    P1 = coords
    P2 = np.roll(coords, -1, axis=0)

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    # all (i, j) pairs of non-adjacent edges with j > i
    i_idx, j_idx = np.triu_indices(m, k=2)
    keep = ~((i_idx == 0) & (j_idx == m - 1))
    i_idx, j_idx = i_idx[keep], j_idx[keep]
    p1, p2 = P1[i_idx], P2[i_idx]
    q1, q2 = P1[j_idx], P2[j_idx]
    d1 = cross(q2 - q1, p1 - q1)
    d2 = cross(q2 - q1, p2 - q1)
    d3 = cross(p2 - p1, q1 - p1)
    d4 = cross(p2 - p1, q2 - p1)
    hits = (d1 * d2 < 0.0) & (d3 * d4 < 0.0)
    if not hits.any():
        return False
    # crossings found; discard exactly coincident (slit) edge pairs
    for i, j in zip(i_idx[hits], j_idx[hits]):
        a1, a2, b1, b2 = P1[i], P2[i], P1[j], P2[j]
        if (np.allclose(a1, b2, atol=tol) and np.allclose(a2, b1, atol=tol)) or (
           np.allclose(a1, b1, atol=tol) and np.allclose(a2, b2, atol=tol)):
            continue
        return True
    return False


def polygon_geometry(element, mesh):
    """Area, centroid, diameter, edge data and scaled coordinates of a polygon.

    Raises ZeroAreaError for degenerate polygons and SelfIntersectionError
    when the vertex loop crosses itself.
    """
    coords = mesh.element_coords(element)
    return polygon_geometry_from_coords(coords)


def polygon_geometry_from_coords(coords):
    coords = np.asarray(coords, dtype=float)
    m = coords.shape[0]
    if m < 3:
        raise MeshError("polygon needs at least 3 vertices")

    area = signed_area(coords)
    # diameter: max pairwise vertex distance (m is small, O(m^2) is fine)
    diff = coords[:, None, :] - coords[None, :, :]
    diameter = float(np.sqrt((diff ** 2).sum(axis=2)).max())
    if area <= 0.0 or area < 1e-14 * diameter ** 2:
        raise ZeroAreaError(f"degenerate polygon, signed area {area:.3e}")
    if polygon_self_intersects(coords):
        raise SelfIntersectionError("polygon edges cross")

    edges = np.roll(coords, -1, axis=0) - coords
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(lengths == 0.0):
        raise ZeroAreaError("zero-length edge")
    # CCW loop: outward normal of edge (dx, dy) is (dy, -dx)/|e|
    normals = np.column_stack((edges[:, 1], -edges[:, 0])) / lengths[:, None]

    centroid = coords.mean(axis=0)
    scaled = (coords - centroid) / diameter
    return ElementGeometry(
        area=area,
        centroid=centroid,
        diameter=diameter,
        edge_lengths=lengths,
        normals=normals,
        xi=scaled[:, 0],
        eta=scaled[:, 1],
    )


@dataclass
class ValidationReport:
    cw_elements: list = field(default_factory=list)
    self_intersecting: list = field(default_factory=list)
    short_edges: list = field(default_factory=list)        # (element, edge index)
    duplicate_nodes: list = field(default_factory=list)    # (i, j) pairs
    open_bem_loops: list = field(default_factory=list)
    invalid_vertex_refs: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.cw_elements or self.self_intersecting or self.short_edges
                    or self.duplicate_nodes or self.open_bem_loops
                    or self.invalid_vertex_refs)

    def summary(self):
        bits = []
        for name in ("cw_elements", "self_intersecting", "short_edges",
                     "duplicate_nodes", "open_bem_loops", "invalid_vertex_refs"):
            items = getattr(self, name)
            if items:
                bits.append(f"{name}: {len(items)}")
        return "ok" if not bits else "; ".join(bits)


def validate_mesh(mesh, tol_geom=None):
    """Report-only mesh checks: orientation, self-intersection, short edges,
    duplicate nodes within tolerance, open BEM loops, dangling vertex ids."""
    report = ValidationReport()
    if tol_geom is None:
        tol_geom = 1e-9 * max(mesh.bbox_diagonal(), 1e-300)

    n = mesh.n_nodes
    for k, el in enumerate(mesh.elements):
        ids = np.asarray(el.vertex_ids)
        if ids.min(initial=0) < 0 or ids.max(initial=-1) >= n:
            report.invalid_vertex_refs.append(k)
            continue
        coords = mesh.element_coords(el)
        if signed_area(coords) <= 0.0:
            report.cw_elements.append(k)
        if polygon_self_intersects(coords):
            report.self_intersecting.append(k)
        lengths = np.hypot(*(np.roll(coords, -1, axis=0) - coords).T)
        for i, ln in enumerate(lengths):
            if ln < tol_geom:
                report.short_edges.append((k, i))

    if n > 1:
        tree = cKDTree(mesh.nodes)
        for i, j in tree.query_pairs(tol_geom):
            report.duplicate_nodes.append((min(i, j), max(i, j)))

    for rid, loop in mesh.interface_loops.items():
        if len(loop) < 3:
            report.open_bem_loops.append(rid)
            continue
        pts = mesh.nodes[list(loop)]
        if signed_area(pts) <= 0.0:
            report.open_bem_loops.append(rid)
    return report


def boundary_extract(mesh):
    """Nodes on the external boundary: the union of edges used exactly once,
    excluding BEM interface edges (used once too, since inclusion interiors
    carry no area elements).

    Edges are counted over area elements; hanging nodes interior to a
    neighbour's straight edge still produce two half-edges on each side,
    so an edge-use count of one is an exact boundary test only on meshes
    where both sides of every interior interface carry matching vertices
    (the conforming meshes produced by the generators).  Raises
    NonManifoldError when an edge is used by more than two elements.
    """
    interface_edges = set()
    for loop in mesh.interface_loops.values():
        m = len(loop)
        for i in range(m):
            a, b = loop[i], loop[(i + 1) % m]
            interface_edges.add((a, b) if a < b else (b, a))
    counts = {}
    for el in mesh.elements:
        ids = el.vertex_ids
        m = len(ids)
        for i in range(m):
            a, b = ids[i], ids[(i + 1) % m]
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    boundary_nodes = set()
    for (a, b), c in counts.items():
        if c > 2:
            raise NonManifoldError(f"edge ({a}, {b}) used by {c} elements")
        if c == 1 and (a, b) not in interface_edges:
            boundary_nodes.add(a)
            boundary_nodes.add(b)
    out = sorted(boundary_nodes)
    return [(i, mesh.nodes[i].copy()) for i in out]


def field_error_metrics(field_a, field_b, weights=None):
    """Relative L2-type discrepancy of two sampled vector fields.

    Returns sqrt(sum w ||a - b||^2 / sum w ||b||^2) with b the reference.
    ``weights`` switches between the nodal form (None, unit weights) and the
    element-integral form (per-sample areas).  Raises ZeroReferenceError when
    the reference norm vanishes.
    """
    a = np.asarray(field_a, dtype=float)
    b = np.asarray(field_b, dtype=float)
    if a.shape != b.shape:
        raise MeshError(f"field shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a = a[:, None]
        b = b[:, None]
    w = np.ones(a.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    num = float(np.sum(w * np.sum((a - b) ** 2, axis=1)))
    den = float(np.sum(w * np.sum(b ** 2, axis=1)))
    if den == 0.0:
        raise ZeroReferenceError("reference field has zero norm")
    return float(np.sqrt(num / den))


# ---------------------------------------------------------------------------
# .pmesh text format
#
#   pmesh 1
#   nodes N
#   <id> <x> <y>                      (17 significant digits)
#   regions R
#   <id> <VEM|BEM> <materialId>
#   elements M
#   <id> <regionId> <m> <v1> ... <vm>
#   interfaces B
#   <regionId> <m> <n1> ... <nm>
# ---------------------------------------------------------------------------

def write_pmesh(mesh, path):
    lines = ["pmesh 1"]
    lines.append(f"nodes {mesh.n_nodes}")
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"{i} {float(x)!r} {float(y)!r}")
    lines.append(f"regions {len(mesh.regions)}")
    for r in mesh.regions:
        lines.append(f"{r.id} {r.kind} {r.material_id}")
    lines.append(f"elements {mesh.n_elements}")
    for k, el in enumerate(mesh.elements):
        verts = " ".join(str(v) for v in el.vertex_ids)
        lines.append(f"{k} {el.region_id} {el.n_vertices} {verts}")
    lines.append(f"interfaces {len(mesh.interface_loops)}")
    for rid, loop in sorted(mesh.interface_loops.items()):
        ids = " ".join(str(v) for v in loop)
        lines.append(f"{rid} {len(loop)} {ids}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _expect_header(tokens, name, lineno):
    if len(tokens) != 2 or tokens[0] != name:
        raise ParseError(f"expected '{name} <count>'", lineno)
    try:
        return int(tokens[1])
    except ValueError:
        raise ParseError(f"bad {name} count {tokens[1]!r}", lineno) from None


def read_pmesh(path):
    """Read a .pmesh file.  CW element loops are repaired (reversed) rather
    than rejected, which keeps hand-written generator output usable."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.split()) for i, ln in enumerate(raw)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError("empty file", 1)
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of file", lines[-1][0])
        item = lines[pos]
        pos += 1
        return item

    lineno, tokens = take()
    if tokens != ["pmesh", "1"]:
        raise ParseError("missing 'pmesh 1' header", lineno)

    lineno, tokens = take()
    n_nodes = _expect_header(tokens, "nodes", lineno)
    nodes = np.zeros((n_nodes, 2))
    for _ in range(n_nodes):
        lineno, tokens = take()
        if len(tokens) != 3:
            raise ParseError("node line must be 'id x y'", lineno)
        try:
            idx = int(tokens[0])
            nodes[idx] = (float(tokens[1]), float(tokens[2]))
        except (ValueError, IndexError):
            raise ParseError("malformed node line", lineno) from None

    lineno, tokens = take()
    n_regions = _expect_header(tokens, "regions", lineno)
    regions = []
    for _ in range(n_regions):
        lineno, tokens = take()
        if len(tokens) != 3 or tokens[1] not in ("VEM", "BEM"):
            raise ParseError("region line must be 'id VEM|BEM materialId'", lineno)
        regions.append(Region(int(tokens[0]), tokens[1], tokens[2]))

    lineno, tokens = take()
    n_elements = _expect_header(tokens, "elements", lineno)
    elements = [None] * n_elements
    for _ in range(n_elements):
        lineno, tokens = take()
        try:
            idx, region_id, m = int(tokens[0]), int(tokens[1]), int(tokens[2])
            verts = [int(t) for t in tokens[3:]]
        except (ValueError, IndexError):
            raise ParseError("malformed element line", lineno) from None
        if len(verts) != m:
            raise ParseError(f"vertex count {m} does not match "
                             f"{len(verts)} listed vertices", lineno)
        if m < 3:
            raise ParseError("element needs at least 3 vertices", lineno)
        if signed_area(nodes[verts]) < 0.0:
            verts = verts[::-1]
        elements[idx] = PolyElement(tuple(verts), region_id)

    interface_loops = {}
    if pos < len(lines):
        lineno, tokens = take()
        n_loops = _expect_header(tokens, "interfaces", lineno)
        for _ in range(n_loops):
            lineno, tokens = take()
            try:
                rid, m = int(tokens[0]), int(tokens[1])
                loop = [int(t) for t in tokens[2:]]
            except (ValueError, IndexError):
                raise ParseError("malformed interface line", lineno) from None
            if len(loop) != m:
                raise ParseError("interface loop count mismatch", lineno)
            interface_loops[rid] = loop

    return PolygonalMesh(nodes=nodes, elements=elements, regions=regions,
                         interface_loops=interface_loops)
