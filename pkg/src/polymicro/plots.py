"""Figure rendering for the report path: every pipeline drops PNG figures
next to its delimited output.  Uses the Agg backend; PNGs carry no volatile
metadata so bundles stay byte-reproducible."""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt
from matplotlib.collections import PolyCollection

_SAVEKW = dict(dpi=130, metadata={"Software": "polymicro"})


def _poly_collection(mesh, values=None, cmap="viridis"):
    polys = [mesh.nodes[list(el.vertex_ids)] for el in mesh.elements]
    pc = PolyCollection(polys, edgecolors="k", linewidths=0.15)
    if values is not None:
        pc.set_array(np.asarray(values))
        pc.set_cmap(cmap)
    else:
        pc.set_facecolor("0.92")
    return pc


def mesh_figure(path, mesh, values=None, title="", cbar_label="",
                cracks=None, region_colors=False):
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    if region_colors and values is None:
        values = np.array([el.region_id for el in mesh.elements], dtype=float)
        pc = _poly_collection(mesh, values, cmap="tab20")
    else:
        pc = _poly_collection(mesh, values)
    ax.add_collection(pc)
    if values is not None and not region_colors:
        fig.colorbar(pc, ax=ax, label=cbar_label, shrink=0.85)
    for rid, loop in mesh.interface_loops.items():
        pts = mesh.nodes[list(loop) + [loop[0]]]
        ax.plot(pts[:, 0], pts[:, 1], "-", color="crimson", lw=1.0)
    if cracks:
        for crk in cracks:
            pts = np.array(crk.points)
            ax.plot(pts[:, 0], pts[:, 1], "-", color="k", lw=1.8)
            ax.plot(*pts[-1], "o", color="k", ms=3)
    ax.set_aspect("equal")
    ax.autoscale()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def curve_figure(path, x, y, xlabel, ylabel, title="", marker="o-"):
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    ax.plot(x, y, marker, ms=3, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def bounds_figure(path, samples, mean, bounds, names, title=""):
    """Per-modulus scatter of ensemble samples against analytic bounds."""
    fig, axes = plt.subplots(1, len(names), figsize=(4.6 * len(names), 4.0))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        vals = np.array([s[name] for s in samples])
        lo, hi = bounds[name]
        ax.axhspan(lo, hi, color="0.85", label="bounds")
        ax.plot(np.arange(len(vals)), vals, "o", ms=4, label="samples")
        ax.axhline(mean[name], color="crimson", lw=1.4, label="ensemble mean")
        ax.set_title(f"{name}")
        ax.set_xlabel("realization")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)


def crack_history_figure(path, records, title=""):
    fig, axes = plt.subplots(1, 2, figsize=(9.6, 4.2))
    steps = [r.step for r in records]
    axes[0].plot(steps, [r.K_I for r in records], "o-", ms=3, label="K_I")
    axes[0].plot(steps, [r.K_II for r in records], "s-", ms=3, label="K_II")
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("stress intensity")
    axes[0].legend()
    axes[0].grid(alpha=0.3)
    axes[1].plot(steps, [np.degrees(r.theta_c) for r in records], "o-", ms=3)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("kink angle [deg]")
    axes[1].grid(alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)
