"""KUBC homogenization, stress averaging, moduli extraction and bounds."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from polymicro import bc, bem, benchmarks as bench, homogenization as hg
from polymicro import microgen as mg
from polymicro.materials import (cubic_plane_strain, isotropic_from_transverse,
                                 isotropic_matrix, rotate_reduced)
from polymicro.mesh import boundary_extract
from polymicro.pipelines import solve_patch_case
from polymicro.system import Model, assemble_global, apply_dirichlet, solve_linear

ISO = isotropic_matrix(70000.0, 0.3, "plane_strain")


class TestKubc:
    def test_uniaxial_values(self):
        bcs = hg.kubc_displacements((0.01, 0.0, 0.0), [(7, np.array([1.0, 0.5]))])
        d = dict(bcs)
        assert d[14] == pytest.approx(0.01)
        assert d[15] == pytest.approx(0.0)

    def test_pure_shear_split(self):
        bcs = dict(hg.kubc_displacements((0.0, 0.0, 1.0),
                                         [(0, np.array([0.2, 0.7]))]))
        assert bcs[0] == pytest.approx(0.35)    # 0.5 * y
        assert bcs[1] == pytest.approx(0.10)    # 0.5 * x

    def test_zero_strain(self):
        bcs = hg.kubc_displacements((0, 0, 0), [(0, np.array([0.3, 0.4]))])
        assert all(v == 0.0 for _, v in bcs)


class TestAverageStress:
    def test_patch_case_a(self):
        elastic = isotropic_matrix(70000.0, 0.3, "plane_stress")
        mesh, cache, U, _, _ = solve_patch_case(1, "a", elastic)
        model = Model(mesh=mesh, materials={"patch": elastic})
        avg = hg.average_stress(model, cache, U)
        assert_allclose(avg, [1000.0, 0.0, 0.0], atol=1e-8)

    def test_zero_solution(self):
        mesh = bench.patch_mesh(1)
        model = Model(mesh=mesh, materials={"patch": ISO})
        from polymicro.system import ElementCache
        cache = ElementCache(model)
        assert_allclose(hg.average_stress(model, cache,
                                          np.zeros(2 * mesh.n_nodes)), 0.0)

    def test_hybrid_matches_pure_patch(self):
        """Same-material BEM inclusion under KUBC: the volume + boundary
        average agrees with the independent reaction route (Eq. 4.42 vs the
        outer-boundary identity) and both sit on the homogeneous value to
        the hybrid solve's accuracy."""
        circle = bem.circle_loop((0.5, 0.5), 0.2, 64)
        mesh = mg.multiregion_mesh(1.0, [circle], 0.05, mode="hybrid",
                                   rng=np.random.default_rng(5))
        loop = mesh.interface_loops[1]
        region = bem.BemRegion(mesh.nodes[loop], E=ISO.E, nu=ISO.nu)
        se = bem.super_element(region, np.asarray(loop))
        model = Model(mesh=mesh, materials={"matrix": ISO, "fiber": ISO},
                      super_elements=[se])
        eps_bar = np.array([2e-3, -1e-3, 8e-4])
        boundary = boundary_extract(mesh)
        system, cache = assemble_global(model)
        apply_dirichlet(system, hg.kubc_displacements(eps_bar, boundary))
        U = solve_linear(system)
        avg = hg.average_stress(model, cache, U)
        R = system.K @ U - system.F
        I = np.zeros((2, 2))
        for i, xy in boundary:
            I += np.outer(R[2 * i:2 * i + 2], xy)
        I = 0.5 * (I + I.T)
        avg_reaction = np.array([I[0, 0], I[1, 1], I[0, 1]])
        exact = ISO.C @ eps_bar
        scale = np.abs(exact).max()
        assert np.abs(avg - avg_reaction).max() <= 1e-5 * scale
        assert np.abs(avg - exact).max() <= 1e-4 * scale


class TestApparentStiffness:
    def test_homogeneous_cell(self):
        mesh = bench.patch_mesh(2)
        model = Model(mesh=mesh, materials={"patch": ISO})
        app = hg.apparent_stiffness(model)
        assert np.abs(app.C - ISO.C).max() <= 1e-8 * np.abs(ISO.C).max()
        assert app.asymmetry <= 1e-12

    def test_scale_invariance(self):
        spec = mg.PolycrystalSpec(n_grains=5, box_side=1.0, rng_seed=3,
                                  target_mesh_size=0.2)
        mesh, attrs = mg.polycrystal_generate(spec)
        cubic = cubic_plane_strain(168.0, 121.0, 75.0)
        mats = {f"grain:{a.grain_id}": rotate_reduced(cubic, a.theta)
                for a in attrs}
        app1 = hg.apparent_stiffness(Model(mesh=mesh, materials=mats))
        mesh2 = mesh.with_revision(3.7 * mesh.nodes, list(mesh.elements))
        app2 = hg.apparent_stiffness(Model(mesh=mesh2, materials=mats))
        assert np.abs(app1.C - app2.C).max() <= 1e-10 * np.abs(app1.C).max()


class TestEnsemble:
    def test_single_sample_mean(self):
        app = hg.ApparentStiffness(C=ISO.C.copy(), asymmetry=0.0)
        stats = hg.ensemble_moduli([app], "isotropic")
        assert_allclose(stats.mean_C, ISO.C)
        E, G = stats.moduli["E"][1], stats.moduli["G"][1]
        assert E == pytest.approx(70000.0, rel=1e-10)
        assert G == pytest.approx(70000.0 / 2.6, rel=1e-10)

    def test_identical_samples_zero_scatter(self):
        app = hg.ApparentStiffness(C=ISO.C.copy(), asymmetry=0.0)
        stats = hg.ensemble_moduli([app, app, app], "isotropic")
        lo, mean, hi = stats.moduli["E"]
        assert lo == pytest.approx(hi)

    def test_empty_raises(self):
        with pytest.raises(hg.EmptyEnsembleError):
            hg.ensemble_moduli([], "isotropic")

    def test_transverse_extraction(self):
        # transversely isotropic matrix: C11 = k + G, C12 = k - G, C33 = G
        k, G = 5.0, 2.0
        C = np.array([[k + G, k - G, 0.0], [k - G, k + G, 0.0], [0.0, 0.0, G]])
        app = hg.ApparentStiffness(C=C, asymmetry=0.0)
        stats = hg.ensemble_moduli([app], "transverse")
        assert stats.moduli["K23"][1] == pytest.approx(k)
        assert stats.moduli["G23"][1] == pytest.approx(G)


class TestBounds:
    def test_isotropic_single_phase_collapse(self):
        iso_cubic = cubic_plane_strain(3.0, 1.0, 1.0)   # C44 = (C11-C12)/2
        b = hg.reuss_voigt_cubic(iso_cubic, 360)
        assert b["E"][0] == pytest.approx(b["E"][1], rel=1e-10)
        assert b["G"][0] == pytest.approx(b["G"][1], rel=1e-10)

    def test_copper_quadrature_matches_closed_form(self):
        cubic = cubic_plane_strain(168.0, 121.0, 75.0)
        b = hg.reuss_voigt_cubic(cubic, 3600)
        Cv = hg.voigt_average_cubic_closed_form(168.0, 121.0, 75.0)
        Ev, Gv = hg._moduli_from_isotropic_plane_strain(Cv)
        assert b["E"][1] == pytest.approx(Ev, rel=1e-10)
        assert b["G"][1] == pytest.approx(Gv, rel=1e-10)

    def test_reuss_below_voigt(self):
        for name, c in (("copper", (168.0, 121.0, 75.0)),
                        ("gold", (185.0, 158.0, 40.0)),
                        ("nickel", (251.0, 150.0, 124.0))):
            b = hg.reuss_voigt_cubic(cubic_plane_strain(*c), 720)
            assert b["E"][0] < b["E"][1]
            assert b["G"][0] < b["G"][1]

    def test_hashin_hill_dilute_collapse(self):
        b = hg.hashin_hill_bounds(4.2, 0.34, 15.0, 0.07, 0.0)
        k_m, g_m = hg.plane_strain_bulk_shear(4.2, 0.34)
        assert b["K23"][0] == pytest.approx(k_m)
        assert b["K23"][1] == pytest.approx(k_m)
        assert b["G23"][0] == pytest.approx(g_m)

    def test_hashin_hill_equal_phases(self):
        b = hg.hashin_hill_bounds(4.2, 0.34, 4.2, 0.34, 0.37)
        assert b["K23"][0] == pytest.approx(b["K23"][1])

    def test_hashin_hill_ordering_and_monotonicity(self):
        prev_lo = None
        for vf in (0.1, 0.2, 0.3, 0.4):
            b = hg.hashin_hill_bounds(3.35, 0.3508, 74.0, 0.2013, vf)
            assert b["K23"][0] <= b["K23"][1]
            assert b["G23"][0] <= b["G23"][1]
            if prev_lo is not None:
                assert b["K23"][0] > prev_lo   # stiffer with more fibers
            prev_lo = b["K23"][0]

    def test_dispatch(self):
        b = hg.analytic_bounds("reuss_voigt_cubic", C11=168.0, C12=121.0,
                               C44=75.0, n_theta=360)
        assert "E" in b and "G" in b
        b2 = hg.analytic_bounds("hashin_hill", E_m=4.2, nu_m=0.34, E_f=15.0,
                                nu_f=0.07, vf=0.29)
        assert "K23" in b2


class TestBoundaryVolumeIdentity:
    def test_uniform_state_identity(self):
        """The boundary-traction integral equals the volume integral for a
        uniform stress state, exactly (divergence-theorem reading)."""
        elastic = isotropic_matrix(70.0, 0.3, "plane_strain")
        loop = bem.circle_loop((0.4, 0.6), 0.25, 48)
        region = bem.BemRegion(loop, E=elastic.E, nu=elastic.nu)
        sig = np.array([7.0, -2.0, 3.0])
        S = np.array([[sig[0], sig[2]], [sig[2], sig[1]]])
        m = region.n_nodes
        Te = np.zeros(4 * m)
        for e, (a, b, xa, xb, L, t, n) in enumerate(region.edges()):
            tr = S @ n
            Te[4 * e:4 * e + 2] = tr
            Te[4 * e + 2:4 * e + 4] = tr
        avg = bem.boundary_stress_average(region, Te)
        assert np.abs(avg - sig * region.area).max() <= \
            1e-10 * np.abs(sig).max() * region.area
