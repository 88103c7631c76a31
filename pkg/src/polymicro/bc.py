"""Boundary-condition assembly helpers shared by the drivers and pipelines."""

from __future__ import annotations

import numpy as np


def boundary_edges(mesh):
    """Edges used by exactly one element: (element index, local edge, (a, b))."""
    counts = {}
    where = {}
    for k, el in enumerate(mesh.elements):
        ids = el.vertex_ids
        m = len(ids)
        for i in range(m):
            a, b = ids[i], ids[(i + 1) % m]
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
            where[key] = (k, i, (a, b))
    return [where[key] for key, c in counts.items() if c == 1]


def edge_normal(mesh, a, b):
    """Outward unit normal of boundary edge a->b (element loop is CCW)."""
    d = mesh.nodes[b] - mesh.nodes[a]
    L = float(np.hypot(*d))
    return np.array([d[1], -d[0]]) / L, L


def traction_force_vector(mesh, traction_fn, thickness=1.0):
    """Consistent nodal forces for tractions on the external boundary.

    ``traction_fn(midpoint, normal)`` returns the traction vector on that
    edge or None to skip it; linear shape functions are integrated exactly
    (constant traction per edge -> half to each end node).
    """
    F = np.zeros(2 * mesh.n_nodes)
    for _, _, (a, b) in boundary_edges(mesh):
        n, L = edge_normal(mesh, a, b)
        mid = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
        t = traction_fn(mid, n)
        if t is None:
            continue
        t = np.asarray(t, dtype=float)
        half = 0.5 * L * thickness * t
        F[2 * a:2 * a + 2] += half
        F[2 * b:2 * b + 2] += half
    return F


def dirichlet_from_function(mesh, node_ids, value_fn):
    """(dof, value) pairs from ``value_fn(x) -> (ux | None, uy | None)``."""
    out = []
    for i in node_ids:
        ux, uy = value_fn(mesh.nodes[i])
        if ux is not None:
            out.append((2 * i, float(ux)))
        if uy is not None:
            out.append((2 * i + 1, float(uy)))
    return out


def nodes_where(mesh, predicate):
    return [i for i in range(mesh.n_nodes) if predicate(mesh.nodes[i])]
