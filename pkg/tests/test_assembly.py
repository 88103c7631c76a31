"""Global assembly, boundary conditions, linear and incremental solvers."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from polymicro import bc, bem, benchmarks as bench
from polymicro.materials import (DamageParams, isotropic_matrix,
                                 uniaxial_stress_curve)
from polymicro.mesh import PolyElement, PolygonalMesh, Region, field_error_metrics
from polymicro.pipelines import solve_patch_case
from polymicro.system import (ConflictingBCError, ElementCache,
                              LoadStepControl, Model, SingularSystemError,
                              apply_dirichlet, assemble_global,
                              element_stresses, incremental_solve,
                              reaction_forces, solve_linear)

ELASTIC = isotropic_matrix(70000.0, 0.3, "plane_stress")


def unit_square_mesh():
    return PolygonalMesh(
        nodes=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        elements=[PolyElement((0, 1, 2, 3), 0)],
        regions=[Region(0, "VEM", "m")])


class TestAssembleGlobal:
    def test_single_element_equals_element_matrix(self):
        from polymicro import vem
        from polymicro.mesh import polygon_geometry
        mesh = unit_square_mesh()
        model = Model(mesh=mesh, materials={"m": ELASTIC})
        system, cache = assemble_global(model)
        geom = polygon_geometry(mesh.elements[0], mesh)
        K_el = vem.element_stiffness(geom, ELASTIC).K
        assert_allclose(system.K.toarray(), K_el, atol=1e-12)

    def test_rigid_translation_nullity(self):
        mesh = bench.patch_mesh(2)
        model = Model(mesh=mesh, materials={"patch": ELASTIC})
        system, _ = assemble_global(model)
        t = np.zeros(system.n_dofs)
        t[0::2] = 1.0
        assert np.abs(system.K @ t).max() <= 1e-10 * np.abs(system.K.data).max()

    def test_hybrid_rigid_nullity(self):
        fiber = isotropic_matrix(7.0, 0.25, "plane_strain")
        matrix = isotropic_matrix(1.0, 0.3, "plane_strain")
        from polymicro import microgen as mg
        circle = bem.circle_loop((0.5, 0.5), 0.2, 32)
        mesh = mg.multiregion_mesh(1.0, [circle], 0.1, mode="hybrid",
                                   rng=np.random.default_rng(1))
        loop = mesh.interface_loops[1]
        region = bem.BemRegion(mesh.nodes[loop], E=fiber.E, nu=fiber.nu)
        se = bem.super_element(region, np.asarray(loop))
        model = Model(mesh=mesh, materials={"matrix": matrix, "fiber": fiber},
                      super_elements=[se])
        system, _ = assemble_global(model)
        for c in (0, 1):
            t = np.zeros(system.n_dofs)
            t[c::2] = 1.0
            assert np.linalg.norm(system.K @ t) <= \
                1e-8 * np.abs(system.K.data).max() * np.linalg.norm(t)


class TestDirichletAndSolve:
    def test_patch_case_a_table_values(self):
        _, _, _, e_u, e_s = solve_patch_case(1, "a", ELASTIC)
        assert e_u <= 1e-12
        assert e_s <= 1e-12

    def test_linear_field_boundary_patch(self):
        """Clamping the whole boundary to a linear field reproduces it."""
        mesh = bench.patch_mesh(2)
        model = Model(mesh=mesh, materials={"patch": ELASTIC})
        A = np.array([[3e-4, 1e-4], [1e-4, -2e-4]])
        bdry = bc.nodes_where(mesh, lambda x: min(x) < 1e-12 or max(x) > 1 - 1e-12)
        diri = bc.dirichlet_from_function(mesh, bdry, lambda x: tuple(A @ x))
        system, _ = assemble_global(model)
        apply_dirichlet(system, diri)
        U = solve_linear(system)
        assert field_error_metrics(U.reshape(-1, 2), mesh.nodes @ A.T) <= 1e-12

    def test_zero_dirichlet_zero_solution(self):
        mesh = bench.patch_mesh(1)
        model = Model(mesh=mesh, materials={"patch": ELASTIC})
        bdry = bc.nodes_where(mesh, lambda x: min(x) < 1e-12 or max(x) > 1 - 1e-12)
        diri = bc.dirichlet_from_function(mesh, bdry, lambda x: (0.0, 0.0))
        system, _ = assemble_global(model)
        apply_dirichlet(system, diri)
        assert_allclose(solve_linear(system), 0.0, atol=1e-14)

    def test_conflicting_bc(self):
        mesh = unit_square_mesh()
        model = Model(mesh=mesh, materials={"m": ELASTIC})
        system, _ = assemble_global(model)
        with pytest.raises(ConflictingBCError):
            apply_dirichlet(system, [(0, 0.0), (0, 1.0)])

    def test_unconstrained_raises(self):
        mesh = unit_square_mesh()
        model = Model(mesh=mesh, materials={"m": ELASTIC})
        system, _ = assemble_global(model)
        with pytest.raises(SingularSystemError):
            solve_linear(system)

    def test_pinned_with_balanced_loads(self):
        """Single pinned node plus a self-balanced load pair: solvable with
        reaction equal to minus the applied sum."""
        mesh = unit_square_mesh()
        model = Model(mesh=mesh, materials={"m": ELASTIC})
        F = np.zeros(8)
        F[2] = 1.0      # +x at node 1
        F[4] = -1.0     # -x at node 2
        system, _ = assemble_global(model, external_force=F)
        # node 0 pinned, node 1 vertical roller: kills all rigid modes
        apply_dirichlet(system, [(0, 0.0), (1, 0.0), (3, 0.0)])
        U = solve_linear(system)
        R = reaction_forces(system, U)
        assert sum(R.values()) + F.sum() == pytest.approx(0.0, abs=1e-10)

    def test_reaction_equilibrium_patch(self):
        mesh, cache, U, _, _ = solve_patch_case(1, "a", ELASTIC)
        model = Model(mesh=mesh, materials={"patch": ELASTIC})
        F = bc.traction_force_vector(mesh, bench.patch_tractions("a"))
        system, _ = assemble_global(model, external_force=F)
        apply_dirichlet(system, bench.patch_dirichlet("a", mesh))
        R = reaction_forces(system, U)
        x_reactions = sum(v for d, v in R.items() if d % 2 == 0)
        assert x_reactions == pytest.approx(-1000.0, rel=1e-10)

    def test_renumbering_invariance(self):
        mesh = bench.patch_mesh(2)
        perm = np.random.default_rng(0).permutation(mesh.n_nodes)
        inv = np.argsort(perm)
        mesh2 = PolygonalMesh(
            nodes=mesh.nodes[perm],
            elements=[PolyElement(tuple(int(inv[v]) for v in el.vertex_ids), 0)
                      for el in mesh.elements],
            regions=[Region(0, "VEM", "patch")])
        for m, label in ((mesh, "orig"), (mesh2, "perm")):
            model = Model(mesh=m, materials={"patch": ELASTIC})
            F = bc.traction_force_vector(m, bench.patch_tractions("a"))
            system, _ = assemble_global(model, external_force=F)
            apply_dirichlet(system, bench.patch_dirichlet("a", m))
            U = solve_linear(system)
            if label == "orig":
                U_ref = U
            else:
                U_perm = U.reshape(-1, 2)[inv].ravel()
        assert np.abs(U_perm - U_ref).max() <= 1e-10 * max(
            1e-30, np.abs(U_ref).max())


class TestIncrementalSolve:
    def test_elastic_model_linear_response(self):
        mesh = unit_square_mesh()
        model = Model(mesh=mesh, materials={"m": ELASTIC})
        pattern = {2: 1e-3, 4: 1e-3, 0: 0.0, 6: 0.0, 1: 0.0, 3: 0.0}
        ctrl = LoadStepControl(target=1.0, initial_step=0.25, max_step=0.25,
                               tol_rel=1e-10)
        hist = incremental_solve(model, pattern, ctrl)
        assert all(h.iterations == 1 for h in hist)
        F = [sum(h.reactions[d] for d in (2, 4)) for h in hist]
        lam = [h.load_factor for h in hist]
        slopes = np.array(F) / np.array(lam)
        assert np.abs(slopes - slopes[0]).max() <= 1e-9 * abs(slopes[0])

    def test_matches_single_linear_solve(self):
        mesh = bench.patch_mesh(1)
        model = Model(mesh=mesh, materials={"patch": ELASTIC})
        A = np.array([[3e-4, 0.0], [0.0, -1e-4]])
        bdry = bc.nodes_where(mesh, lambda x: min(x) < 1e-12 or max(x) > 1 - 1e-12)
        pattern = {}
        for i in bdry:
            u = A @ mesh.nodes[i]
            pattern[2 * i] = u[0]
            pattern[2 * i + 1] = u[1]
        ctrl = LoadStepControl(target=1.0, initial_step=0.5, max_step=0.5,
                               tol_rel=1e-12)
        hist = incremental_solve(model, pattern, ctrl)
        system, _ = assemble_global(model)
        apply_dirichlet(system, list(pattern.items()))
        U_direct = solve_linear(system)
        assert np.abs(hist[-1].U - U_direct).max() <= 1e-10

    @pytest.mark.parametrize("law", ["linear", "exponential"])
    def test_uniaxial_damage_traces_reference(self, law):
        E = 20000.0
        elastic = isotropic_matrix(E, 0.0, "plane_stress")
        mesh = unit_square_mesh()
        params = DamageParams(threshold="mazars", law=law, r0=5e-4, rf=5e-3)
        model = Model(mesh=mesh, materials={"m": elastic},
                      damage={"m": params})
        eps_max = 8e-3
        pattern = {2: eps_max, 4: eps_max, 0: 0.0, 6: 0.0, 1: 0.0, 3: 0.0}
        ctrl = LoadStepControl(target=1.0, initial_step=0.02, max_step=0.02,
                               tol_rel=1e-10)
        hist = incremental_solve(model, pattern, ctrl)
        eps = np.array([h.load_factor * eps_max for h in hist])
        sig = np.array([-(h.reactions[0] + h.reactions[6]) for h in hist])
        ref = uniaxial_stress_curve(eps, E, params)
        assert np.abs(sig - ref).max() <= 1e-8 * np.abs(ref).max()
        # Kuhn-Tucker: history never decreases
        rs = np.array([h.r[0] for h in hist])
        assert np.all(np.diff(rs) >= -1e-15)

    def test_damage_snapshot_monotone(self):
        E = 20000.0
        elastic = isotropic_matrix(E, 0.0, "plane_stress")
        mesh = unit_square_mesh()
        params = DamageParams(threshold="mazars", law="exponential",
                              r0=5e-4, rf=5e-3)
        model = Model(mesh=mesh, materials={"m": elastic}, damage={"m": params})
        pattern = {2: 6e-3, 4: 6e-3, 0: 0.0, 6: 0.0, 1: 0.0, 3: 0.0}
        ctrl = LoadStepControl(target=1.0, initial_step=0.1, max_step=0.1,
                               tol_rel=1e-8)
        hist = incremental_solve(model, pattern, ctrl)
        w = np.array([h.omega[0] for h in hist])
        assert np.all(np.diff(w) >= -1e-15)
