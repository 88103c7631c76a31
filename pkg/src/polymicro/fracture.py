"""LEFM crack propagation in the polygonal matrix.

Cracks are polylines cut into the mesh by element splitting: crack edges
become element edges, face nodes are duplicated pairwise (so the faces are
traction-free by construction) and the tip stays a single node.  A step that
ends inside a polygon leaves a zero-width slit, which the lowest-order
elements handle as coincident opposite edges.  Stress intensity factors come
from the ligament stresses ahead of the tip; the kink angle from the maximum
circumferential stress criterion.

Propagation is sequential (each step depends on the previous solve); the
inner solves use the standard assembly path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from polymicro.mesh import PolyElement, signed_area

log = logging.getLogger("polymicro")


def _cross2(a, b):
    return float(a[0] * b[1] - a[1] * b[0])


class FractureError(Exception):
    pass


class ZeroSifsError(FractureError):
    pass


class InsufficientSamplesError(FractureError):
    pass


class TipExitsDomainError(FractureError):
    pass


class TipEntersBemRegionError(FractureError):
    pass


def near_tip_field(K_I, K_II, r, theta, nu=0.0):
    """Mixed-mode near-tip stresses (sigma11, sigma22, tau12) in the tip
    polar frame, evaluated from the printed expansion (the shear component
    carries the 2*nu prefactor of the source form; see extract notes)."""
    if np.any(np.asarray(r) <= 0.0):
        raise FractureError("radius must be positive")
    f = 1.0 / np.sqrt(2.0 * math.pi * r)
    c = np.cos(0.5 * theta)
    s = np.sin(0.5 * theta)
    c3 = np.cos(1.5 * theta)
    s3 = np.sin(1.5 * theta)
    s11 = K_I * f * c * (1.0 - s * s3) + K_II * f * s * (2.0 + c * c3)
    s22 = K_I * f * c * (1.0 + s * s3) + K_II * f * s * c * c3
    t12 = 2.0 * nu * (K_I * f * c - K_II * f * s)
    return s11, s22, t12


def ligament_stress(K_I, K_II, r):
    """Ligament (theta = 0) stresses used by the extraction identities:
    sigma22 = K_I/sqrt(2 pi r), tau12 = K_II/sqrt(2 pi r).  The printed
    expansion's shear term is mode-II blind on the ligament, so the
    round-trip oracle pairs these with Eqs. (5.4)-(5.5)-style inversion."""
    f = 1.0 / np.sqrt(2.0 * math.pi * np.asarray(r, dtype=float))
    return K_I * f, K_II * f


def extract_sifs(samples):
    """SIF pair from ligament samples [(r, sigma22_local, tau12_local), ...]
    by K(r) = sigma sqrt(2 pi r) per radius and a linear-in-r extrapolation
    to r = 0 over at least three radii."""
    if len(samples) < 3:
        raise InsufficientSamplesError(
            f"need >= 3 ligament radii, got {len(samples)}")
    r = np.array([s[0] for s in samples])
    s22 = np.array([s[1] for s in samples])
    t12 = np.array([s[2] for s in samples])
    f = np.sqrt(2.0 * math.pi * r)
    kI = s22 * f
    kII = t12 * f
    A = np.column_stack((np.ones_like(r), r))
    cI = np.linalg.lstsq(A, kI, rcond=None)[0]
    cII = np.linalg.lstsq(A, kII, rcond=None)[0]
    return float(cI[0]), float(cII[0])


def kink_angle(K_I, K_II):
    """Kink angle of the maximum circumferential stress criterion.

    theta = 2 atan(rho/4 - sqrt(rho^2 + 8)/4) with rho = K_I/|K_II|, mirrored
    against the sign of K_II (mode I gives zero; pure mode II gives
    -sign(K_II) * 70.5288 degrees)."""
    if K_I == 0.0 and K_II == 0.0:
        raise ZeroSifsError("both stress intensity factors vanish")
    if K_II == 0.0:
        return 0.0
    rho = K_I / abs(K_II)
    theta = 2.0 * math.atan(0.25 * rho - 0.25 * math.sqrt(rho * rho + 8.0))
    return theta if K_II > 0.0 else -theta


# ---------------------------------------------------------------------------
# mesh surgery
# ---------------------------------------------------------------------------

@dataclass
class Crack:
    """A crack polyline with its face-node bookkeeping.

    ``points[k]`` is the k-th path point; interior path points carry a
    (left, right) node-id pair (duplicates at the same coordinates), the tip
    a single id.  Left/right is relative to the local path direction."""

    points: list
    left_ids: list
    right_ids: list
    tip_id: int
    tip_element: int | None = None     # element index holding the tip slit

    @property
    def tip(self):
        return self.points[-1]

    def tip_direction(self):
        d = self.points[-1] - self.points[-2]
        return d / np.hypot(*d)


class MeshEditor:
    """Mutable view of a mesh during crack surgery; ``finish`` produces the
    next mesh revision."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.nodes = [mesh.nodes[i].copy() for i in range(mesh.n_nodes)]
        self.elements = {k: list(el.vertex_ids) for k, el in enumerate(mesh.elements)}
        self.region_of = {k: el.region_id for k, el in enumerate(mesh.elements)}
        self.next_el = len(mesh.elements)

    def add_node(self, xy):
        self.nodes.append(np.asarray(xy, dtype=float).copy())
        return len(self.nodes) - 1

    def add_element(self, loop, region):
        self.elements[self.next_el] = list(loop)
        self.region_of[self.next_el] = region
        self.next_el += 1
        return self.next_el - 1

    def remove_element(self, k):
        del self.elements[k]
        del self.region_of[k]

    def coords(self, i):
        return self.nodes[i]

    def loop_coords(self, k):
        return np.array([self.nodes[i] for i in self.elements[k]])

    def elements_with_node(self, i):
        return [k for k, loop in self.elements.items() if i in loop]

    def element_containing(self, p, exclude=()):
        from matplotlib.path import Path
        for k, loop in self.elements.items():
            if k in exclude:
                continue
            poly = self.loop_coords(k)
            if Path(poly).contains_point(p):
                return k
        return None

    def finish(self, interface_loops=None):
        keys = sorted(self.elements)
        for k in keys:
            loop = self.elements[k]
            if len(set(loop)) != len(loop) or len(loop) < 3:
                raise FractureError(
                    f"element {k} degenerated during surgery (loop {loop}); "
                    "the crack path probably runs along existing mesh edges; "
                    "perturb the path into generic position")
            if signed_area(np.array([self.nodes[i] for i in loop])) <= 0.0:
                raise FractureError(
                    f"element {k} lost positive area during surgery")
        elements = [PolyElement(tuple(self.elements[k]), self.region_of[k])
                    for k in keys]
        return self.mesh.with_revision(np.array(self.nodes), elements,
                                       interface_loops)


def _insert_on_boundary(editor, el, point, tol, use_id=None):
    """Ensure ``point`` is a vertex of element ``el``: either an existing
    vertex id within tol, or a node inserted on the edge that contains it
    (reusing ``use_id`` when given, so both sides of a shared edge carry the
    same id).  Returns the vertex id."""
    loop = editor.elements[el]
    m = len(loop)
    for i, v in enumerate(loop):
        if np.hypot(*(editor.coords(v) - point)) < tol:
            return v
    for i in range(m):
        a, b = loop[i], loop[(i + 1) % m]
        pa, pb = editor.coords(a), editor.coords(b)
        d = pb - pa
        L2 = float(d @ d)
        if L2 == 0.0:
            continue
        s = float((point - pa) @ d / L2)
        if -1e-12 <= s <= 1.0 + 1e-12:
            perp = point - (pa + s * d)
            if float(np.hypot(*perp)) < tol:
                new = editor.add_node(pa + s * d) if use_id is None else use_id
                editor.elements[el] = loop[:i + 1] + [new] + loop[i + 1:]
                return new
    raise FractureError(f"point {point} not on boundary of element {el}")


def _split_element(editor, el, id_in, id_out, pair_in, pair_out,
                   known_left_id=None):
    """Split element ``el`` along the chord from vertex ``id_in`` to vertex
    ``id_out`` (both already vertices of the element).  ``pair_in``/
    ``pair_out`` are the (left, right) node ids to substitute on the two
    sides (either one may repeat the original id).  ``known_left_id`` pins
    the side assignment topologically (needed when an earlier slit leaves
    coincident face nodes whose geometric side is ambiguous).  Returns
    (left element index, right element index) relative to the chord
    direction."""
    loop = editor.elements[el]
    i = loop.index(id_in)
    j = loop.index(id_out)
    m = len(loop)
    arc1 = [loop[(i + k) % m] for k in range((j - i) % m + 1)]   # in -> out ccw
    arc2 = [loop[(j + k) % m] for k in range((i - j) % m + 1)]   # out -> in ccw
    p_in = editor.coords(id_in)
    p_out = editor.coords(id_out)
    v = p_out - p_in

    def side_of(arc):
        best, bestd = 0.0, -1.0
        for w in arc[1:-1]:
            rel = editor.coords(w) - p_in
            c = _cross2(v, rel)
            d = abs(c)
            if d > bestd:
                bestd, best = d, c
        return 1.0 if best > 0.0 else -1.0

    region = editor.region_of[el]
    if known_left_id is not None and (known_left_id in arc1[1:-1]
                                      or known_left_id in arc2[1:-1]):
        left_first = known_left_id in arc1[1:-1]
    else:
        left_first = side_of(arc1) > 0
    left_arc, right_arc = (arc1, arc2) if left_first else (arc2, arc1)

    def substitute(arc, new_in, new_out):
        out = list(arc)
        for k, w in enumerate(out):
            if w == id_in:
                out[k] = new_in
            elif w == id_out:
                out[k] = new_out
        return out

    left_loop = substitute(left_arc, pair_in[0], pair_out[0])
    right_loop = substitute(right_arc, pair_in[1], pair_out[1])
    editor.remove_element(el)
    kl = editor.add_element(left_loop, region)
    kr = editor.add_element(right_loop, region)
    return kl, kr


def _slit_element(editor, el, id_in, pair_in, tip_xy):
    """Partial split: insert the zero-width slit from vertex ``id_in`` to a
    new interior tip node.  Returns the tip node id."""
    tip = editor.add_node(tip_xy)
    loop = editor.elements[el]
    i = loop.index(id_in)
    m = len(loop)
    prev_v = loop[(i - 1) % m]
    p_in = editor.coords(id_in)
    v = np.asarray(tip_xy) - p_in
    c_prev = _cross2(v, editor.coords(prev_v) - p_in)
    # walking ... prev -> X -> tip -> X' -> next ... keeps the interior on
    # the left; the first copy is on prev's side of the slit
    first, second = (pair_in[0], pair_in[1]) if c_prev > 0 else \
                    (pair_in[1], pair_in[0])
    editor.elements[el] = loop[:i] + [first, tip, second] + loop[i + 1:]
    return tip


def _exit_point(editor, el, p, target, tol):
    """Where the open segment p -> target first leaves element ``el``; None
    when the target lies inside."""
    loop = editor.elements[el]
    m = len(loop)
    best_t = np.inf
    hit = None
    d = np.asarray(target, dtype=float) - p
    for i in range(m):
        a, b = loop[i], loop[(i + 1) % m]
        pa, pb = editor.coords(a), editor.coords(b)
        e = pb - pa
        denom = _cross2(d, e)
        if abs(denom) < 1e-300:
            continue
        t = _cross2(pa - p, e) / denom
        s = _cross2(pa - p, d) / denom
        if 1e-9 < t < min(best_t, 1.0 - 1e-9) and -1e-12 <= s <= 1.0 + 1e-12:
            q = p + t * d
            if np.hypot(*(q - p)) < tol:
                continue
            best_t = t
            hit = q
    return hit


def _vertex_bisector(editor, el, node):
    """Unit bisector of the element's corner sector at ``node``."""
    loop = editor.elements[el]
    i = loop.index(node)
    m = len(loop)
    p = editor.coords(node)
    e1 = editor.coords(loop[(i + 1) % m]) - p
    e2 = editor.coords(loop[(i - 1) % m]) - p
    e1 = e1 / max(np.hypot(*e1), 1e-300)
    e2 = e2 / max(np.hypot(*e2), 1e-300)
    b = e1 + e2
    n = np.hypot(*b)
    if n < 1e-12:
        b = np.array([-e1[1], e1[0]])
        n = 1.0
    return b / n


def _on_element_boundary(editor, el, point, tol):
    loop = editor.elements[el]
    m = len(loop)
    for i in range(m):
        pa = editor.coords(loop[i])
        pb = editor.coords(loop[(i + 1) % m])
        d = pb - pa
        L2 = float(d @ d)
        if L2 == 0.0:
            continue
        s = float(np.clip((point - pa) @ d / L2, 0.0, 1.0))
        if float(np.hypot(*(point - (pa + s * d)))) < tol:
            return True
    return False


def _neighbor_through(editor, el, point, tol):
    """The element on the other side of the boundary point of ``el``."""
    for k, loop in editor.elements.items():
        if k == el:
            continue
        m = len(loop)
        for i in range(m):
            pa = editor.coords(loop[i])
            pb = editor.coords(loop[(i + 1) % m])
            d = pb - pa
            L2 = float(d @ d)
            if L2 == 0.0:
                continue
            s = float((point - pa) @ d / L2)
            if -1e-9 <= s <= 1.0 + 1e-9:
                perp = point - (pa + s * d)
                if float(np.hypot(*perp)) < tol:
                    return k
    return None


def insert_crack(mesh, polyline, tol=None, keep_dir=None, bem_regions=()):
    """Cut an initial crack along ``polyline`` (mouth first).  The mouth must
    coincide with an existing mesh node (on the domain boundary or an
    interface); interior path points get duplicated face pairs and the final
    point becomes the tip.  ``keep_dir`` picks which side of the crack keeps
    the original mouth node id (elements on the other side are rewired to the
    duplicate).  Returns (new mesh, Crack)."""
    if tol is None:
        tol = 1e-9 * mesh.bbox_diagonal()
    editor = MeshEditor(mesh)
    pts = [np.asarray(p, dtype=float) for p in polyline]
    if len(pts) < 2:
        raise FractureError("crack polyline needs at least two points")

    mouth_id = None
    for i in range(mesh.n_nodes):
        if np.hypot(*(mesh.nodes[i] - pts[0])) < 10 * tol:
            mouth_id = i
            break
    if mouth_id is None:
        raise FractureError("crack mouth must coincide with a mesh node")

    v0 = pts[1] - pts[0]
    v0 = v0 / np.hypot(*v0)
    around = editor.elements_with_node(mouth_id)
    mouth_dup = editor.add_node(editor.coords(mouth_id))

    def bisector(el):
        return _vertex_bisector(editor, el, mouth_id)

    if keep_dir is None:
        keep_sign = 1.0    # left keeps the original id
    else:
        keep_sign = 1.0 if _cross2(v0, np.asarray(keep_dir)) > 0 else -1.0

    # the first traversed element is resolved inside the walk; the remaining
    # fan elements rewire by side
    start_el = None
    for el in around:
        coords_el = editor.loop_coords(el)
        probe = pts[0] + 1e-6 * mesh.bbox_diagonal() * v0
        from matplotlib.path import Path
        if Path(coords_el).contains_point(probe):
            start_el = el
            break
    if start_el is None:
        raise FractureError("no element contains the initial crack direction")

    mouth_pair = (mouth_id, mouth_dup) if keep_sign > 0 else (mouth_dup, mouth_id)
    for el in around:
        if el == start_el:
            continue
        s = _cross2(v0, bisector(el))
        want = mouth_pair[0] if s > 0 else mouth_pair[1]
        if want != mouth_id:
            loop = editor.elements[el]
            editor.elements[el] = [want if w == mouth_id else w for w in loop]

    crack = Crack(points=[pts[0]], left_ids=[mouth_pair[0]],
                  right_ids=[mouth_pair[1]], tip_id=mouth_id, tip_element=None)
    _advance(editor, crack, pts[1:], (mouth_pair[0], mouth_pair[1]),
             start_el, tol, bem_regions)
    new_mesh = editor.finish()
    crack.tip_element = None     # editor indices do not survive renumbering
    return new_mesh, crack


def extend_crack(mesh, crack, new_tip, tol=None, bem_regions=()):
    """Extend an existing crack from its tip to ``new_tip`` (single segment),
    splitting traversed polygons.  Returns (new mesh, crack)."""
    if tol is None:
        tol = 1e-9 * mesh.bbox_diagonal()
    editor = MeshEditor(mesh)
    owners = editor.elements_with_node(crack.tip_id)
    if not owners:
        raise FractureError("tip node not referenced by any element")
    start_el = owners[0]
    if len(owners) > 1:
        from matplotlib.path import Path
        d = np.asarray(new_tip, dtype=float) - crack.tip
        probe = crack.tip + 1e-6 * mesh.bbox_diagonal() * d / np.hypot(*d)
        for el in owners:
            if Path(editor.loop_coords(el)).contains_point(probe):
                start_el = el
                break
    # the old tip becomes an interior path point: it splits into a pair
    old_tip = crack.tip_id
    dup = editor.add_node(editor.coords(old_tip))
    pair = (old_tip, dup)
    crack.left_ids.append(pair[0])
    crack.right_ids.append(pair[1])
    _advance(editor, crack, [np.asarray(new_tip, dtype=float)], pair,
             start_el, tol, bem_regions)
    new_mesh = editor.finish()
    crack.tip_element = None
    return new_mesh, crack


def _advance(editor, crack, targets, entry_pair, start_el, tol, bem_regions):
    """March the crack through ``targets`` starting at the current entry
    (a vertex of ``start_el`` whose (left, right) ids are ``entry_pair``)."""
    cur_el = start_el
    cur_pair = entry_pair
    cur_vertex = crack.left_ids[-1]     # id present in cur_el's loop
    if cur_vertex not in editor.elements[cur_el]:
        cur_vertex = crack.right_ids[-1]
    hint = crack.left_ids[-2] if len(crack.left_ids) > 1 else None
    guard = 0
    for it, target in enumerate(targets):
        if it > 0:
            # continue from the slit tip of the previous target: the tip
            # becomes an interior path point and splits into a face pair
            old_tip = crack.tip_id
            dup = editor.add_node(editor.coords(old_tip))
            cur_pair = (old_tip, dup)
            crack.left_ids.append(cur_pair[0])
            crack.right_ids.append(cur_pair[1])
            cur_vertex = old_tip
            cur_el = crack.tip_element
            hint = crack.left_ids[-2]
        while True:
            guard += 1
            if guard > 10000:
                raise FractureError("crack advance did not terminate")
            if editor.region_of[cur_el] in bem_regions:
                raise TipEntersBemRegionError("crack reached an inclusion region")
            exit_pt = _exit_point(editor, cur_el, crack.points[-1], target, tol)
            if exit_pt is None:
                if _on_element_boundary(editor, cur_el, target, tol):
                    # through-running crack: the end opens on the boundary
                    out_id = _insert_on_boundary(editor, cur_el, target, tol)
                    out_dup = editor.add_node(editor.coords(out_id))
                    out_pair = (out_id, out_dup)
                    kl, kr = _split_element(editor, cur_el, cur_vertex, out_id,
                                            cur_pair, out_pair,
                                            known_left_id=hint)
                    v_end = np.asarray(target, dtype=float) - crack.points[-1]
                    for el2 in editor.elements_with_node(out_id):
                        if el2 in (kl, kr):
                            continue
                        bis = _vertex_bisector(editor, el2, out_id)
                        if _cross2(v_end, bis) <= 0:
                            loop2 = editor.elements[el2]
                            editor.elements[el2] = [
                                out_dup if w == out_id else w for w in loop2]
                    crack.points.append(np.asarray(target, dtype=float))
                    crack.left_ids.append(out_pair[0])
                    crack.right_ids.append(out_pair[1])
                    crack.tip_id = out_id
                    crack.tip_element = None
                    break
                tip = _slit_element(editor, cur_el, cur_vertex, cur_pair, target)
                crack.points.append(np.asarray(target, dtype=float))
                crack.tip_id = tip
                crack.tip_element = cur_el
                break
            out_id = _insert_on_boundary(editor, cur_el, exit_pt, tol)
            # locate the neighbour before splitting, insert the same id there
            nxt = _neighbor_through(editor, cur_el, exit_pt, tol)
            if nxt is None:
                raise TipExitsDomainError(
                    f"crack exits the meshed domain at {exit_pt}")
            _insert_on_boundary(editor, nxt, exit_pt, tol, use_id=out_id)
            out_dup = editor.add_node(editor.coords(out_id))
            out_pair = (out_id, out_dup)
            _split_element(editor, cur_el, cur_vertex, out_id,
                           cur_pair, out_pair, known_left_id=hint)
            crack.points.append(np.asarray(exit_pt, dtype=float))
            crack.left_ids.append(out_pair[0])
            crack.right_ids.append(out_pair[1])
            cur_el = nxt
            cur_pair = out_pair
            cur_vertex = out_id
            hint = None
    return crack


def _element_containing_point(mesh, p, cache=None):
    from matplotlib.path import Path
    for k, el in enumerate(mesh.elements):
        if Path(mesh.nodes[list(el.vertex_ids)]).contains_point(p):
            return k
    return None


def sample_ligament_sifs(mesh, cache, U, crack, radii_factors=(1.0, 2.0, 3.0)):
    """SIFs from the element-constant stresses ahead of the tip.

    Ligament samples sit at radii ``factor * h_loc`` along the current tip
    direction (h_loc = mean size of the tip-adjacent elements); the sampled
    element stress rotates into the tip frame before the K identities and
    the r -> 0 extrapolation."""
    from polymicro.system import element_stresses
    tip = crack.tip
    d = crack.tip_direction()
    e2 = np.array([-d[1], d[0]])
    owners = [k for k, el in enumerate(mesh.elements)
              if crack.tip_id in el.vertex_ids]
    if not owners:
        raise InsufficientSamplesError("tip node not attached to any element")
    h_loc = float(np.mean([math.sqrt(cache.areas[k]) for k in owners]))
    _, sig = element_stresses(cache, U)
    samples = []
    for f in radii_factors:
        r = f * h_loc
        p = tip + r * d
        k = _element_containing_point(mesh, p)
        if k is None:
            continue
        s = sig[k]
        S = np.array([[s[0], s[2]], [s[2], s[1]]])
        s22 = float(e2 @ S @ e2)
        t12 = float(d @ S @ e2)
        samples.append((r, s22, t12))
    if len(samples) < 3:
        raise InsufficientSamplesError(
            f"only {len(samples)} ligament samples inside the mesh")
    return extract_sifs(samples), h_loc


@dataclass
class CrackStepRecord:
    step: int
    tip: np.ndarray
    K_I: float
    K_II: float
    theta_c: float


def propagate_crack(mesh, cracks, solve_fn, delta_a, max_steps,
                    bem_regions=(), radii_factors=(1.0, 2.0, 3.0),
                    on_step=None):
    """Quasi-static propagation loop: solve, extract SIFs, kink, extend.

    ``solve_fn(mesh) -> (cache, U)`` performs the linear analysis on the
    current revision.  Each crack advances by ``delta_a`` along its kinked
    direction per step; traversed polygons are split and the mesh revision
    replaced.  Stops early when a tip leaves the domain or would enter an
    inclusion region.  Returns (histories per crack, final mesh, records).
    """
    records = []
    for step in range(max_steps):
        cache, U = solve_fn(mesh)
        extensions = []
        for crack in cracks:
            (kI, kII), h_loc = sample_ligament_sifs(mesh, cache, U, crack,
                                                    radii_factors)
            try:
                theta = kink_angle(kI, kII)
            except ZeroSifsError:
                theta = 0.0
            d = crack.tip_direction()
            phi = math.atan2(d[1], d[0]) + theta
            new_tip = crack.tip + delta_a * np.array([math.cos(phi),
                                                      math.sin(phi)])
            extensions.append((crack, new_tip, kI, kII, theta))
        try:
            for crack, new_tip, kI, kII, theta in extensions:
                mesh, crack = extend_crack(mesh, crack, new_tip,
                                           bem_regions=bem_regions)
                records.append(CrackStepRecord(step=step, tip=new_tip,
                                               K_I=kI, K_II=kII, theta_c=theta))
        except (TipExitsDomainError, TipEntersBemRegionError) as exc:
            log.info("propagation stopped at step %d: %s", step, exc)
            break
        if on_step is not None:
            on_step(step, mesh, cracks, records)
    return cracks, mesh, records
