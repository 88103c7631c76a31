"""Result-bundle writers: CSV curves, legacy-VTK polygon fields, manifest.

Floats are written with full repr (17 significant digits) so bundles are
bit-stable under the determinism contract; the manifest records a SHA-256
per artifact and one over the whole bundle.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np


class IoError(Exception):
    pass


def _fmt(x):
    return repr(float(x))


def write_csv(path, header, rows):
    try:
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                                  else str(v) for v in row) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def write_vtk_polydata(path, mesh, point_data=None, cell_data=None,
                       title="polymicro fields"):
    """Legacy ASCII VTK POLYDATA with POLYGONS cells; vector point data and
    scalar/vector cell data."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA"]
    n = mesh.n_nodes
    lines.append(f"POINTS {n} double")
    for x, y in mesh.nodes:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    size = sum(el.n_vertices + 1 for el in mesh.elements)
    lines.append(f"POLYGONS {mesh.n_elements} {size}")
    for el in mesh.elements:
        lines.append(f"{el.n_vertices} " + " ".join(str(v) for v in el.vertex_ids))

    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 2:
                lines.append(f"VECTORS {name} double")
                for row in arr:
                    lines.append(f"{_fmt(row[0])} {_fmt(row[1])} 0.0")
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                for v in arr:
                    lines.append(_fmt(v))
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_elements}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 2:
                lines.append(f"FIELD {name}_field 1")
                lines.append(f"{name} {arr.shape[1]} {arr.shape[0]} double")
                for row in arr:
                    lines.append(" ".join(_fmt(v) for v in row))
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                for v in arr:
                    lines.append(_fmt(v))
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class ResultBundle:
    """Output directory with a manifest tying the artifacts to their run."""

    def __init__(self, out_dir, config_path=None, seed=None, deterministic=False):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.summary = {}
        self.artifacts = []
        self.config_path = config_path
        self.seed = seed
        self.deterministic = deterministic

    def path(self, name):
        full = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def add(self, name):
        self.artifacts.append(name)
        return self.path(name)

    def write_summary(self):
        import polymicro
        with open(self.path("summary.json"), "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        manifest = {
            "version": polymicro.__version__,
            "seed": self.seed,
            "deterministic": self.deterministic,
            "config": None,
            "artifacts": {},
        }
        if self.config_path and os.path.exists(self.config_path):
            manifest["config"] = {
                "path": os.path.basename(self.config_path),
                "sha256": file_sha256(self.config_path),
            }
        for name in sorted(set(self.artifacts + ["summary.json"])):
            full = os.path.join(self.out_dir, name)
            if os.path.exists(full):
                manifest["artifacts"][name] = file_sha256(full)
        blob = json.dumps(manifest["artifacts"], sort_keys=True).encode()
        manifest["bundle_sha256"] = hashlib.sha256(blob).hexdigest()
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
