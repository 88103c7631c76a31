"""Analysis pipelines behind the CLI: each takes a RunConfig, runs the
requested study and writes a result bundle (summary.json, CSV curves, VTK
fields, PNG figures, .pmesh dumps).

Ensemble members are independent; ``threads`` caps a worker pool and the
reduction always happens in sample order, so results do not depend on the
schedule.  ``deterministic`` forces the serial path.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from polymicro import bc, bem, benchmarks as bench, microgen as mg
from polymicro import export, homogenization as hg, plots
from polymicro import regularization as reg
from polymicro.materials import rotate_reduced, uniaxial_stress_curve
from polymicro.mesh import (boundary_extract, field_error_metrics,
                            validate_mesh, write_pmesh)
from polymicro.system import (ElementCache, LoadStepControl, Model,
                              apply_dirichlet, assemble_global,
                              element_stresses, incremental_solve,
                              reaction_forces, solve_linear)
from polymicro import fracture as fr

log = logging.getLogger("polymicro")


class PipelineError(Exception):
    pass


def run_pipeline(cfg, out_dir, seed=None, threads=1, deterministic=False):
    bundle = export.ResultBundle(out_dir, config_path=cfg.path, seed=seed,
                                 deterministic=deterministic)
    runner = {
        "patch-test": run_patch_test,
        "solve": run_solve,
        "homogenize": run_homogenize,
        "damage": run_damage,
        "crack": run_crack,
        "mesh-gen": run_mesh_gen,
    }[cfg.analysis]
    runner(cfg, bundle, seed=seed, threads=threads, deterministic=deterministic)
    bundle.summary["analysis"] = cfg.analysis
    bundle.write_summary()
    return bundle


# ---------------------------------------------------------------------------
# patch test
# ---------------------------------------------------------------------------

def solve_patch_case(mesh_id, case, elastic, q=1000.0, t=-400.0,
                     material_id="patch"):
    """Assemble and solve one constant-stress patch case; returns
    (mesh, cache, U, e_u, e_sigma)."""
    mesh = bench.patch_mesh(mesh_id, material_id)
    model = Model(mesh=mesh, materials={material_id: elastic})
    F = bc.traction_force_vector(mesh, bench.patch_tractions(case, q=q, t=t))
    system, cache = assemble_global(model, external_force=F)
    apply_dirichlet(system, bench.patch_dirichlet(case, mesh))
    U = solve_linear(system)
    disp, sig_exact = bench.patch_exact_fields(case, elastic.E, elastic.nu, q=q, t=t)
    u_exact = np.array([disp(x) for x in mesh.nodes])
    e_u = field_error_metrics(U.reshape(-1, 2), u_exact)
    eps, sig = element_stresses(cache, U)
    e_s = field_error_metrics(sig, np.tile(sig_exact, (mesh.n_elements, 1)),
                              weights=cache.areas)
    return mesh, cache, U, e_u, e_s


def run_patch_test(cfg, bundle, **kw):
    errs = []
    sec = cfg.section("patch")
    case = sec.get("case", "a")
    mesh_id = int(sec.get("mesh", "1"))
    q = float(sec.get("q", "1000"))
    t = float(sec.get("t", "-400"))
    mat_name = sec.get("material", "patch")
    elastic = cfg.materials.get(mat_name)
    if elastic is None:
        raise PipelineError(f"patch material {mat_name!r} not configured")
    mesh, cache, U, e_u, e_s = solve_patch_case(mesh_id, case, elastic, q, t,
                                                mat_name)
    eps, sig = element_stresses(cache, U)
    export.write_csv(bundle.add("curves/nodal_displacements.csv"),
                     ["node", "ux", "uy"],
                     [(i, U[2 * i], U[2 * i + 1]) for i in range(mesh.n_nodes)])
    export.write_vtk_polydata(bundle.add("fields/patch.vtk"), mesh,
                              point_data={"displacement": U.reshape(-1, 2)},
                              cell_data={"stress": sig})
    plots.mesh_figure(bundle.add("figures/patch_sxx.png"), mesh,
                      values=sig[:, 0] if case == "a" else sig[:, 2],
                      title=f"patch case ({case}), mesh ({mesh_id})",
                      cbar_label="sxx" if case == "a" else "sxy")
    bundle.summary.update({"case": case, "mesh": mesh_id,
                           "e_u": e_u, "e_sigma": e_s,
                           "passes_1e-12": bool(e_u <= 1e-12 and e_s <= 1e-12)})


# ---------------------------------------------------------------------------
# linear solve of a cell under KUBC
# ---------------------------------------------------------------------------

def build_cell_model(cfg, rng):
    """Mesh + model for the [geometry] section (four-inclusion demo cell or a
    centered circular inclusion), in the requested scheme."""
    sec = cfg.section("geometry")
    kind = sec.get("kind", "four-inclusion")
    scheme = sec.get("scheme", "hybrid")
    target_h = float(sec.get("target-h", "0.03"))
    matrix_name = sec.get("matrix-material", "matrix")
    fiber_name = sec.get("fiber-material", "fiber")
    if kind == "four-inclusion":
        curves = bench.four_inclusion_curves()
    elif kind == "circle":
        r = float(sec.get("radius", "0.2"))
        curves = [bem.circle_loop((0.5, 0.5), r, 64)]
    else:
        raise PipelineError(f"unknown geometry kind {kind!r}")

    mesh = mg.multiregion_mesh(1.0, curves, target_h, mode=scheme, rng=rng,
                               matrix_material=matrix_name,
                               inclusion_material=fiber_name)
    materials = dict(cfg.materials)
    supers = []
    if scheme == "hybrid":
        fiber = materials[fiber_name]
        for rid, loop in mesh.interface_loops.items():
            region = bem.BemRegion(mesh.nodes[loop], E=fiber.E, nu=fiber.nu)
            supers.append(bem.super_element(region, np.asarray(loop)))
    return Model(mesh=mesh, materials=materials, super_elements=supers)


def sample_displacement_field(model, cache, U, points):
    """Displacement at arbitrary points: the element's projected linear field
    for VEM polygons, the boundary-integral representation inside BEM
    inclusions; points with no admissible evaluation return NaN."""
    from matplotlib.path import Path
    from scipy.spatial import cKDTree
    from polymicro.vem import monomial_matrix
    mesh = model.mesh
    pts = np.asarray(points, dtype=float)
    out = np.full((pts.shape[0], 2), np.nan)
    paths = [Path(mesh.nodes[list(el.vertex_ids)]) for el in mesh.elements]
    tree = cKDTree(cache.centroids)
    k_query = min(12, mesh.n_elements)
    _, neighbors = tree.query(pts, k=k_query)
    neighbors = np.atleast_2d(neighbors)
    inclusion = [(se, Path(se.region.coords)) for se in model.super_elements]
    bem_solutions = {}
    for ip, p in enumerate(pts):
        found = False
        for k in neighbors[ip]:
            if paths[k].contains_point(p):
                geom = cache.geoms[k]
                D = monomial_matrix(geom)
                a, *_ = np.linalg.lstsq(D, U[cache.dofs[k]], rcond=None)
                xi = (p - geom.centroid) / geom.diameter
                out[ip, 0] = a[0] + a[2] * xi[0] + a[4] * xi[1]
                out[ip, 1] = a[1] + a[3] * xi[0] + a[5] * xi[1]
                found = True
                break
        if found:
            continue
        for se, path in inclusion:
            if path.contains_point(p):
                if id(se) not in bem_solutions:
                    bem_solutions[id(se)] = se.boundary_solution(U)
                u_b, t_b = bem_solutions[id(se)]
                try:
                    out[ip] = bem.interior_fields(se.region, u_b, t_b, p,
                                                  want="displacement")
                except bem.PointTooCloseError:
                    pass
                break
    return out


def run_solve(cfg, bundle, seed=None, **kw):
    rng = np.random.default_rng(0 if seed is None else seed)
    model = build_cell_model(cfg, rng)
    sec = cfg.section("bc")
    exx = float(sec.get("exx", "0"))
    eyy = float(sec.get("eyy", "0"))
    gxy = float(sec.get("gxy", "0"))
    boundary = boundary_extract(model.mesh)
    system, cache = assemble_global(model)
    apply_dirichlet(system, hg.kubc_displacements((exx, eyy, gxy), boundary))
    U = solve_linear(system)
    eps, sig = element_stresses(cache, U)
    sigma_bar = hg.average_stress(model, cache, U)
    export.write_vtk_polydata(bundle.add("fields/solution.vtk"), model.mesh,
                              point_data={"displacement": U.reshape(-1, 2)},
                              cell_data={"strain": eps, "stress": sig})
    export.write_csv(bundle.add("curves/element_fields.csv"),
                     ["element", "exx", "eyy", "gxy", "sxx", "syy", "sxy"],
                     [(k, *eps[k], *sig[k]) for k in range(len(eps))])
    plots.mesh_figure(bundle.add("figures/sxx.png"), model.mesh,
                      values=sig[:, 0], title="sxx", cbar_label="sxx")
    bundle.summary.update({
        "dofs": 2 * model.mesh.n_nodes,
        "elements": model.mesh.n_elements,
        "average_stress": sigma_bar.tolist(),
    })


# ---------------------------------------------------------------------------
# homogenization ensembles
# ---------------------------------------------------------------------------

def polycrystal_sample_model(cubic, n_grains, target_h, seed,
                             base_material="grain"):
    spec = mg.PolycrystalSpec(n_grains=n_grains, box_side=1.0, rng_seed=seed,
                              target_mesh_size=target_h)
    mesh, attrs = mg.polycrystal_generate(spec, base_material)
    materials = {f"{base_material}:{a.grain_id}": rotate_reduced(cubic, a.theta)
                 for a in attrs}
    return Model(mesh=mesh, materials=materials), attrs


def fiber_cell_model(matrix, fiber, vf, delta, target_h, seed,
                     scheme="hybrid", n_circle=28, spacing_factor=2.15):
    packing = mg.fiber_pack(mg.FiberCellSpec(volume_fraction=vf, delta=delta,
                                             rng_seed=seed,
                                             min_spacing_factor=spacing_factor))
    # wrap-around fibers are pulled inside the window (keeps the count and
    # the realized volume fraction; KUBC does not need periodic geometry)
    packing = mg.interior_fiber_arrangement(packing,
                                            min_spacing_factor=spacing_factor,
                                            seed=seed + 77)
    curves = mg.periodic_inclusion_curves(packing, n_points=n_circle)
    rng = np.random.default_rng(seed + 911)
    mesh = mg.multiregion_mesh(1.0, curves, target_h, mode=scheme, rng=rng,
                               interface_h=2.0 * math.pi * packing.radius / n_circle,
                               matrix_material="matrix",
                               inclusion_material="fiber", max_retries=6)
    materials = {"matrix": matrix, "fiber": fiber}
    supers = []
    if scheme == "hybrid":
        for rid, loop in mesh.interface_loops.items():
            region = bem.BemRegion(mesh.nodes[loop], E=fiber.E, nu=fiber.nu)
            supers.append(bem.super_element(region, np.asarray(loop)))
    return Model(mesh=mesh, materials=materials, super_elements=supers), packing


def run_homogenize(cfg, bundle, seed=None, threads=1, deterministic=False):
    sec = cfg.section("ensemble")
    kind = sec.get("kind", "polycrystal")
    n_samples = int(sec.get("realizations", "10"))
    base_seed = int(sec.get("seed", "1000")) if seed is None else seed
    target_h = float(sec.get("target-h", "0.025"))

    if kind == "polycrystal":
        mat_name = sec.get("material", "crystal")
        cubic = cfg.materials[mat_name]
        n_grains = int(sec.get("grains", "200"))
        symmetry = "isotropic"
        C = cubic.C
        bounds = hg.reuss_voigt_cubic(cubic)

        def make_model(k):
            return polycrystal_sample_model(cubic, n_grains, target_h,
                                            base_seed + k)[0]
    elif kind == "fiber":
        matrix = cfg.materials[sec.get("matrix-material", "matrix")]
        fiber = cfg.materials[sec.get("fiber-material", "fiber")]
        vf = float(sec.get("vf", "0.29"))
        delta = float(sec.get("delta", "30"))
        scheme = sec.get("scheme", "hybrid")
        symmetry = "transverse"
        bounds = hg.hashin_hill_bounds(matrix.E, matrix.nu, fiber.E, fiber.nu, vf)

        def make_model(k):
            return fiber_cell_model(matrix, fiber, vf, delta, target_h,
                                    base_seed + k, scheme)[0]
    else:
        raise PipelineError(f"unknown ensemble kind {kind!r}")

    def one(k):
        model = make_model(k)
        app = hg.apparent_stiffness(model, cell_id=f"sample{k}")
        return app

    if deterministic or threads <= 1:
        samples = [one(k) for k in range(n_samples)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(one, range(n_samples)))

    stats = hg.ensemble_moduli(samples, symmetry)
    names = list(stats.moduli.keys())
    per_sample = [hg.extract_moduli(s.symmetric, symmetry) for s in samples]
    rows = []
    for k, (s, mod) in enumerate(zip(samples, per_sample)):
        rows.append((k, *s.C.ravel(), *[mod[n] for n in names], s.asymmetry))
    export.write_csv(bundle.add("curves/samples.csv"),
                     ["sample", *[f"C{i}{j}" for i in range(1, 4)
                                  for j in range(1, 4)],
                      *names, "asymmetry"], rows)
    in_bounds = {}
    summary_rows = []
    for n in names:
        lo, hi = bounds[n]
        mn, mean, mx = stats.moduli[n]
        in_bounds[n] = bool(lo <= mean <= hi)
        summary_rows.append((n, mn, mean, mx, lo, hi))
    export.write_csv(bundle.add("curves/ensemble.csv"),
                     ["modulus", "min", "mean", "max", "bound_low", "bound_high"],
                     summary_rows)
    plots.bounds_figure(bundle.add("figures/bounds.png"), per_sample,
                        {n: stats.moduli[n][1] for n in names}, bounds, names,
                        title=f"{kind} ensemble ({n_samples} realizations)")
    bundle.summary.update({
        "kind": kind,
        "realizations": n_samples,
        "moduli": {n: dict(zip(("min", "mean", "max"), stats.moduli[n]))
                   for n in names},
        "bounds": {n: list(bounds[n]) for n in names},
        "within_bounds": in_bounds,
        "all_within_bounds": bool(all(in_bounds.values())),
        "mean_asymmetry": float(np.mean([s.asymmetry for s in samples])),
    })


# ---------------------------------------------------------------------------
# damage analyses
# ---------------------------------------------------------------------------

def uniaxial_damage_run(E, params, eps_max, n_steps=60):
    """Single-element displacement-driven uniaxial bar (nu = 0); returns
    (strain, stress) arrays from the incremental driver."""
    from polymicro.materials import isotropic_matrix
    from polymicro.mesh import PolyElement, PolygonalMesh, Region
    elastic = isotropic_matrix(E, 0.0, "plane_stress")
    mesh = PolygonalMesh(
        nodes=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        elements=[PolyElement((0, 1, 2, 3), 0)],
        regions=[Region(0, "VEM", "bar")])
    model = Model(mesh=mesh, materials={"bar": elastic}, damage={"bar": params})
    pattern = {2: eps_max, 4: eps_max, 0: 0.0, 6: 0.0, 1: 0.0, 3: 0.0}
    ctrl = LoadStepControl(target=1.0, initial_step=1.0 / n_steps,
                           max_step=1.0 / n_steps, tol_rel=1e-10)
    hist = incremental_solve(model, pattern, ctrl)
    eps = np.array([h.load_factor * eps_max for h in hist])
    sig = np.array([-(h.reactions[0] + h.reactions[6]) for h in hist])
    return eps, sig


def tension_specimen_run(mesh, elastic, params, crack_band, thickness,
                         u_max=0.035, max_step=0.02, tol=1e-6, max_iter=400):
    """Necked-bar displacement-controlled damage run; returns (u, F, hist)."""
    model = Model(mesh=mesh, materials={"specimen": elastic},
                  thickness=thickness, damage={"specimen": params},
                  crack_band=crack_band)
    pattern = {}
    right = []
    for i in range(mesh.n_nodes):
        x, y = mesh.nodes[i]
        if x > bench.TENSION_LENGTH - 1e-9:
            pattern[2 * i] = u_max
            right.append(i)
        if x < 1e-9:
            pattern[2 * i] = 0.0
    pin = min(range(mesh.n_nodes),
              key=lambda i: abs(mesh.nodes[i][0]) + abs(mesh.nodes[i][1]))
    pattern[2 * pin + 1] = 0.0
    ctrl = LoadStepControl(target=1.0, initial_step=max_step, min_step=1e-5,
                           max_step=max_step, tol_rel=tol, max_iter=max_iter)
    hist = incremental_solve(model, pattern, ctrl,
                             reaction_dofs=[2 * i for i in right])
    u = np.array([h.load_factor * u_max for h in hist])
    F = np.array([sum(h.reactions.values()) for h in hist])
    return u, F, hist


def dissipated_energy(u, F):
    """Work input minus the recoverable elastic part at the last state."""
    return float(np.trapezoid(F, u) - 0.5 * F[-1] * u[-1])


def tpb_run(target_h, fine_h, elastic, params, R, u_max=0.8, max_step=0.04,
            tol=1e-5, max_iter=400, thickness=1.0, rng_seed=5):
    """Three-point-bending run on the notched beam with nonlocal averaging;
    returns (mesh, u, F, hist, cache)."""
    x0 = 0.5 * bench.TPB_SPAN
    outline = bench.tpb_outline()
    mesh = mg.polygonal_domain_mesh(
        outline, [], target_h, mode="hybrid", rng=np.random.default_rng(rng_seed),
        refine_boxes=[(x0 - 40.0, 0.0, x0 + 40.0, bench.TPB_HEIGHT, fine_h)],
        matrix_material="beam")
    model = Model(mesh=mesh, materials={"beam": elastic}, thickness=thickness,
                  damage={"beam": params})
    cache = ElementCache(model)
    table = reg.build_nonlocal_table(cache.centroids, cache.areas,
                                     reg.TRUNCATED_QUADRATIC, R=R,
                                     mesh_revision=mesh.revision,
                                     element_mask=cache.damage_mask)
    model.nonlocal_table = table

    # supports at the bottom corners, load point on the top midspan
    def nearest(x, y):
        return int(np.argmin(np.hypot(mesh.nodes[:, 0] - x,
                                      mesh.nodes[:, 1] - y)))
    left = nearest(0.0, 0.0)
    right = nearest(bench.TPB_SPAN, 0.0)
    top = nearest(x0, bench.TPB_HEIGHT)
    pattern = {2 * left: 0.0, 2 * left + 1: 0.0, 2 * right + 1: 0.0,
               2 * top + 1: -u_max}
    ctrl = LoadStepControl(target=1.0, initial_step=max_step, min_step=1e-5,
                           max_step=max_step, tol_rel=tol, max_iter=max_iter)
    hist = incremental_solve(model, pattern, ctrl, cache=cache,
                             reaction_dofs=[2 * top + 1])
    u = np.array([h.load_factor * u_max for h in hist])
    F = np.array([-h.reactions[2 * top + 1] for h in hist])
    return mesh, u, F, hist, cache


def run_damage(cfg, bundle, seed=None, **kw):
    sec = cfg.section("case")
    kind = sec.get("kind", "uniaxial")
    sol = cfg.section("solver")
    max_iter = int(sol.get("max-iter", "400"))
    tol = float(sol.get("tol", "1e-6"))

    if kind == "uniaxial":
        mat_name = sec.get("material", "bar")
        params = cfg.damage[mat_name]
        E = cfg.materials[mat_name].E
        eps_max = float(sec.get("eps-max", str(3 * params.rf)))
        eps, sig = uniaxial_damage_run(E, params, eps_max,
                                       int(sec.get("steps", "60")))
        ref = uniaxial_stress_curve(eps, E, params)
        dev = float(np.abs(sig - ref).max() / max(np.abs(ref).max(), 1e-300))
        export.write_csv(bundle.add("curves/uniaxial.csv"),
                         ["strain", "stress", "reference"],
                         list(zip(eps, sig, ref)))
        plots.curve_figure(bundle.add("figures/uniaxial.png"), eps, sig,
                           "strain", "stress", title=f"{params.law} softening")
        bundle.summary.update({"kind": kind, "max_rel_deviation": dev,
                               "matches_reference_1e-8": bool(dev <= 1e-8)})
        return

    if kind == "tension":
        mat_name = sec.get("material", "specimen")
        elastic = cfg.materials[mat_name]
        params = cfg.damage[mat_name]
        G_f = float(sec.get("G_f", "0.125"))
        f_t = params.f_t
        thickness = float(sec.get("thickness", "20"))
        u_max = float(sec.get("u-max", "0.035"))
        meshes = sec.get("meshes", "16x4,24x6,32x8,48x12,48x12p").split(",")
        results = []
        curves = {}
        for name in meshes:
            name = name.strip()
            pert = name.endswith("p")
            nx, ny = (int(v) for v in name.rstrip("p").split("x"))
            mesh = bench.tension_specimen_mesh(nx, ny,
                                               perturb=0.12 if pert else 0.0,
                                               seed=4, material_id=mat_name)
            band = reg.CrackBandRule(G_f=G_f, f_t=f_t, eps_0=params.r0,
                                     band_direction=(0.0, 1.0))
            u, F, hist = tension_specimen_run(
                mesh, elastic, params, band, thickness, u_max=u_max,
                tol=tol, max_iter=max_iter)
            results.append((name, float(F.max()), dissipated_energy(u, F)))
            curves[name] = (u, F)
            export.write_csv(bundle.add(f"curves/tension_{name}.csv"),
                             ["step", "loadFactor", "reactionSum"],
                             [(i, u[i] / u_max, F[i]) for i in range(len(u))])
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6.0, 4.4))
        for name, (u, F) in curves.items():
            ax.plot(u, F, "-", lw=1.3, label=name)
        ax.set_xlabel("imposed displacement")
        ax.set_ylabel("reaction force")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(bundle.add("figures/tension_curves.png"), dpi=130,
                    metadata={"Software": "polymicro"})
        plt.close(fig)
        peaks = np.array([r[1] for r in results])
        eds = np.array([r[2] for r in results])
        export.write_csv(bundle.add("curves/tension_summary.csv"),
                         ["mesh", "peak", "dissipated"], results)
        bundle.summary.update({
            "kind": kind,
            "peaks": {r[0]: r[1] for r in results},
            "dissipated": {r[0]: r[2] for r in results},
            "peak_spread": float((peaks.max() - peaks.min()) / peaks.mean()),
            "energy_spread": float((eds.max() - eds.min()) / eds.mean()),
        })
        return

    if kind == "tpb":
        mat_name = sec.get("material", "beam")
        elastic = cfg.materials[mat_name]
        params = cfg.damage[mat_name]
        R = float(sec.get("R", "4"))
        u_max = float(sec.get("u-max", "0.8"))
        meshes = sec.get("meshes", "V1,V2").split(",")
        scale = {"V1": (18.0, 3.4), "V2": (14.0, 2.8), "V3": (10.0, 2.0)}
        results = {}
        for name in meshes:
            name = name.strip()
            th, fh = scale[name]
            mesh, u, F, hist, cache = tpb_run(th, fh, elastic, params, R,
                                              u_max=u_max, tol=tol,
                                              max_iter=max_iter)
            export.write_csv(bundle.add(f"curves/tpb_{name}.csv"),
                             ["step", "loadFactor", "reactionSum"],
                             [(i, u[i] / u_max, F[i]) for i in range(len(u))])
            plots.mesh_figure(bundle.add(f"figures/tpb_damage_{name}.png"),
                              mesh, values=hist[-1].omega,
                              title=f"damage, mesh {name}", cbar_label="omega")
            results[name] = (mesh, u, F, hist, cache)
        peaks = {n: float(r[2].max()) for n, r in results.items()}
        vals = np.array(list(peaks.values()))
        bundle.summary.update({
            "kind": kind,
            "peaks": peaks,
            "peak_spread": float((vals.max() - vals.min()) / vals.mean()),
        })
        return
    raise PipelineError(f"unknown damage case {kind!r}")


# ---------------------------------------------------------------------------
# crack propagation (partial-debond demo)
# ---------------------------------------------------------------------------

def debond_demo(target_h=0.04, seed=11, delta_a=None, max_steps=10,
                on_revision=None):
    """The partially debonded fiber cell with twin kink cracks under remote
    x-tension; returns (cracks, final mesh, records, info)."""
    mesh, cracks, loop_ids, info = bench.debond_cell_mesh(target_h=target_h,
                                                          seed=seed)
    from polymicro.materials import isotropic_matrix
    region = bem.BemRegion(mesh.nodes[loop_ids], E=info["E_fiber"],
                           nu=info["nu_fiber"])
    se = bem.super_element(region, np.asarray(loop_ids))
    elastic = isotropic_matrix(info["E_matrix"], info["nu_matrix"],
                               "plane_strain")
    c = info["center"]
    L = info["L"]
    if delta_a is None:
        delta_a = info["D"] / 10.0

    def solve_fn(m):
        model = Model(mesh=m, materials={"matrix": elastic},
                      super_elements=[se])
        F = bc.traction_force_vector(
            m, lambda mid, n: (np.sign(n[0]), 0.0)
            if abs(n[0]) > 0.5 and (mid[0] < 1e-9 or mid[0] > L - 1e-9)
            else None)
        diri = []
        axis = [i for i in range(m.n_nodes) if abs(m.nodes[i][1] - c[1]) < 1e-9]
        for i in axis:
            diri.append((2 * i + 1, 0.0))
        diri.append((2 * min(axis, key=lambda i: m.nodes[i][0]), 0.0))
        system, cache = assemble_global(model, external_force=F)
        apply_dirichlet(system, diri)
        return cache, solve_linear(system)

    cracks, mesh_f, records = fr.propagate_crack(
        mesh, cracks, solve_fn, delta_a, max_steps, bem_regions=(1,),
        on_step=on_revision)
    return cracks, mesh_f, records, info


def run_crack(cfg, bundle, seed=None, **kw):
    sec = cfg.section("case")
    target_h = float(sec.get("target-h", "0.04"))
    max_steps = int(sec.get("steps", "10"))
    dump_every = int(sec.get("dump-every", "1"))
    rng_seed = int(sec.get("seed", "11")) if seed is None else seed

    revisions = []

    def on_revision(step, mesh, cracks, records):
        if step % dump_every == 0:
            path = bundle.add(f"meshes/step_{step:03d}.pmesh")
            write_pmesh(mesh, path)
        revisions.append(step)

    cracks, mesh_f, records, info = debond_demo(
        target_h=target_h, seed=rng_seed, max_steps=max_steps,
        on_revision=on_revision)
    export.write_csv(bundle.add("curves/crack_history.csv"),
                     ["step", "tipX", "tipY", "K_I", "K_II", "thetaC"],
                     [(r.step, r.tip[0], r.tip[1], r.K_I, r.K_II, r.theta_c)
                      for r in records])
    plots.crack_history_figure(bundle.add("figures/sif_history.png"), records,
                               title="debonded-fiber kink cracks")
    plots.mesh_figure(bundle.add("figures/crack_paths.png"), mesh_f,
                      cracks=cracks, title="crack paths")
    up, dn = cracks
    pts_up = np.array(up.points)
    pts_dn = np.array(dn.points)
    n = min(len(pts_up), len(pts_dn))
    cy = info["center"][1]
    mirror = float(np.max(np.abs(pts_up[:n, 1] + pts_dn[:n, 1] - 2 * cy)))
    ratios = [abs(r.K_II / r.K_I) for r in records if r.step >= 1]
    bundle.summary.update({
        "steps": max_steps,
        "mirror_deviation": mirror,
        "max_KII_over_KI_after_kink": float(max(ratios)) if ratios else None,
        "mode_I_dominant": bool(ratios and max(ratios) < 0.3),
    })


# ---------------------------------------------------------------------------
# microstructure generation
# ---------------------------------------------------------------------------

def run_mesh_gen(cfg, bundle, seed=None, **kw):
    sec = cfg.section("microstructure")
    kind = sec.get("kind", "polycrystal")
    rng_seed = int(sec.get("seed", "0")) if seed is None else seed
    if kind == "polycrystal":
        spec = mg.PolycrystalSpec(
            n_grains=int(sec.get("grains", "10")),
            box_side=float(sec.get("box", "1.0")),
            rng_seed=rng_seed,
            target_mesh_size=float(sec.get("mesh-size", "0.05")))
        mesh, attrs = mg.polycrystal_generate(spec, sec.get("material", "grain"))
        write_pmesh(mesh, bundle.add("meshes/polycrystal.pmesh"))
        export.write_csv(bundle.add("curves/grain_attributes.csv"),
                         ["grainId", "theta", "materialId"],
                         [(a.grain_id, a.theta, a.material_id) for a in attrs])
        plots.mesh_figure(bundle.add("figures/mesh.png"), mesh,
                          region_colors=True, title=f"{spec.n_grains} grains")
        report = validate_mesh(mesh)
        bundle.summary.update({"kind": kind, "elements": mesh.n_elements,
                               "nodes": mesh.n_nodes, "grains": spec.n_grains,
                               "valid": report.ok, "validation": report.summary()})
    elif kind == "fiber-cell":
        spec = mg.FiberCellSpec(
            volume_fraction=float(sec.get("vf", "0.29")),
            delta=float(sec.get("delta", "30")),
            rng_seed=rng_seed)
        packing = mg.fiber_pack(spec)
        export.write_csv(bundle.add("curves/fibers.csv"),
                         ["fiber", "x", "y", "rotation"],
                         [(k, *packing.centers[k], packing.rotations[k])
                          for k in range(packing.centers.shape[0])])
        mesh_flag = sec.get("mesh", "no") in ("yes", "true", "1")
        summary = {"kind": kind, "fibers": int(packing.centers.shape[0]),
                   "realized_vf": packing.realized_vf,
                   "min_distance_over_r": float(
                       mg.periodic_min_distance(packing.centers, 1.0)
                       / packing.radius)}
        if mesh_flag:
            target_h = float(sec.get("mesh-size", "0.02"))
            curves = mg.periodic_inclusion_curves(packing)
            mesh = mg.multiregion_mesh(1.0, curves, target_h, mode="hybrid",
                                       rng=np.random.default_rng(rng_seed + 1))
            write_pmesh(mesh, bundle.add("meshes/fiber_cell.pmesh"))
            plots.mesh_figure(bundle.add("figures/mesh.png"), mesh,
                              title=f"Vf={packing.realized_vf:.3f}")
            summary.update({"elements": mesh.n_elements, "nodes": mesh.n_nodes})
        bundle.summary.update(summary)
    else:
        raise PipelineError(f"unknown microstructure kind {kind!r}")
