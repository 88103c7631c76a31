"""Near-tip fields, SIF extraction, kink criterion and crack surgery."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from polymicro import fracture as fr
from polymicro.materials import isotropic_matrix
from polymicro.mesh import (PolyElement, PolygonalMesh, Region,
                            polygon_geometry, validate_mesh)
from polymicro.system import Model, assemble_global


def grid_mesh(n):
    xs = np.linspace(0.0, 1.0, n + 1)
    nid = lambda i, j: i * (n + 1) + j
    nodes = np.array([[xs[i], xs[j]] for i in range(n + 1)
                      for j in range(n + 1)])
    els = [PolyElement((nid(i, j), nid(i + 1, j), nid(i + 1, j + 1),
                        nid(i, j + 1)), 0)
           for i in range(n) for j in range(n)]
    return PolygonalMesh(nodes=nodes, elements=els,
                         regions=[Region(0, "VEM", "m")])


def hard_issues(mesh):
    r = validate_mesh(mesh)
    return (r.cw_elements or r.self_intersecting or r.short_edges
            or r.open_bem_loops or r.invalid_vertex_refs)


def zero_modes(mesh):
    model = Model(mesh=mesh,
                  materials={"m": isotropic_matrix(100.0, 0.3, "plane_strain")})
    system, _ = assemble_global(model)
    w = np.linalg.eigvalsh(system.K.toarray())
    return int((np.abs(w) <= 1e-9 * np.abs(w).max()).sum())


class TestNearTipField:
    def test_mode_one_ligament(self):
        r = 0.1
        s11, s22, t12 = fr.near_tip_field(1.0, 0.0, r, 0.0, nu=0.3)
        f = 1.0 / math.sqrt(2 * math.pi * r)
        assert s22 == pytest.approx(f)
        assert s11 == pytest.approx(f)
        # printed shear term carries the 2 nu prefactor
        assert t12 == pytest.approx(0.6 * f)

    def test_zero_sifs_zero_field(self):
        out = fr.near_tip_field(0.0, 0.0, 0.05, 0.3, nu=0.3)
        assert_allclose(out, 0.0)

    def test_mode_two_ligament_s22_vanishes(self):
        _, s22, _ = fr.near_tip_field(0.0, 1.0, 0.1, 0.0, nu=0.3)
        assert s22 == pytest.approx(0.0, abs=1e-15)

    def test_negative_radius_rejected(self):
        with pytest.raises(fr.FractureError):
            fr.near_tip_field(1.0, 0.0, -0.1, 0.0)


class TestKinkAngle:
    def test_pure_mode_one(self):
        assert fr.kink_angle(1.0, 0.0) == 0.0

    def test_pure_mode_two(self):
        got = math.degrees(fr.kink_angle(0.0, 1.0))
        assert got == pytest.approx(-70.5288, abs=1e-3)
        assert math.degrees(fr.kink_angle(0.0, -1.0)) == \
            pytest.approx(70.5288, abs=1e-3)

    def test_equal_modes(self):
        assert math.degrees(fr.kink_angle(1.0, 1.0)) == \
            pytest.approx(-53.1301, abs=1e-3)

    def test_zero_raises(self):
        with pytest.raises(fr.ZeroSifsError):
            fr.kink_angle(0.0, 0.0)

    def test_continuity_and_bound(self):
        last = 0.0
        for ratio in np.linspace(0.0, 10.0, 200):
            th = fr.kink_angle(ratio, 1.0)
            assert abs(math.degrees(th)) <= 70.529
            if ratio > 0:
                assert abs(th - last) < 0.15
            last = th


class TestExtraction:
    def test_round_trip_exact_sampling(self):
        K = (1.0, 0.5)
        samples = []
        for r in (0.01, 0.02, 0.03):
            s22, t12 = fr.ligament_stress(K[0], K[1], r)
            samples.append((r, s22, t12))
        got = fr.extract_sifs(samples)
        assert got[0] == pytest.approx(K[0], rel=0.02)
        assert got[1] == pytest.approx(K[1], rel=0.02)

    def test_round_trip_with_linear_perturbation(self):
        """A subdominant linear-in-r term is removed by the extrapolation."""
        rng = np.random.default_rng(0)
        for _ in range(10):
            KI, KII = rng.uniform(0.5, 2.0), rng.uniform(0.0, 4.0)
            a1, a2 = rng.uniform(-1.0, 1.0, 2)
            samples = []
            for r in (0.01, 0.02, 0.03):
                s22, t12 = fr.ligament_stress(KI, KII, r)
                f = math.sqrt(2 * math.pi * r)
                samples.append((r, s22 + a1 * r / f, t12 + a2 * r / f))
            got = fr.extract_sifs(samples)
            assert got[0] == pytest.approx(KI, rel=0.02, abs=1e-9)
            assert got[1] == pytest.approx(KII, rel=0.02, abs=1e-9)

    def test_bounded_stress_extrapolates_to_zero(self):
        samples = [(r, 5.0, -1.0) for r in (0.01, 0.005, 0.0025)]
        got = fr.extract_sifs(samples)
        ref = 5.0 * math.sqrt(2 * math.pi * 0.01)
        assert abs(got[0]) < ref

    def test_insufficient_samples(self):
        with pytest.raises(fr.InsufficientSamplesError):
            fr.extract_sifs([(0.01, 1.0, 0.0), (0.02, 1.0, 0.0)])


class TestSurgery:
    def test_partial_crack_conserves_area(self):
        mesh = grid_mesh(4)
        A0 = sum(polygon_geometry(e, mesh).area for e in mesh.elements)
        mouth = mesh.nodes[2]     # (0, 0.5)
        mesh2, crack = fr.insert_crack(mesh, [mouth, np.array([0.6, 0.52])])
        A1 = sum(polygon_geometry(e, mesh2).area for e in mesh2.elements)
        assert A1 == pytest.approx(A0, abs=1e-12)
        assert not hard_issues(mesh2)
        assert zero_modes(mesh2) == 3

    def test_kinked_extension(self):
        mesh = grid_mesh(4)
        A0 = sum(polygon_geometry(e, mesh).area for e in mesh.elements)
        mesh, crack = fr.insert_crack(mesh, [mesh.nodes[2],
                                             np.array([0.6, 0.52])])
        mesh, crack = fr.extend_crack(mesh, crack, np.array([0.85, 0.62]))
        mesh, crack = fr.extend_crack(mesh, crack, np.array([0.93, 0.47]))
        A = sum(polygon_geometry(e, mesh).area for e in mesh.elements)
        assert A == pytest.approx(A0, abs=1e-12)
        assert not hard_issues(mesh)
        assert zero_modes(mesh) == 3
        # duplicated partners exist for every interior path point
        assert len(crack.left_ids) == len(crack.points) - 1

    def test_through_crack_splits_domain(self):
        mesh = grid_mesh(4)
        A0 = sum(polygon_geometry(e, mesh).area for e in mesh.elements)
        mesh2, _ = fr.insert_crack(
            mesh, [mesh.nodes[2], np.array([0.53, 0.52]),
                   np.array([1.0, 0.54])])
        A = sum(polygon_geometry(e, mesh2).area for e in mesh2.elements)
        assert A == pytest.approx(A0, abs=1e-12)
        assert zero_modes(mesh2) == 6

    def test_crack_faces_decoupled(self):
        """Face pairs carry distinct DOFs: pulling them apart costs nothing
        through the crack."""
        mesh = grid_mesh(4)
        mesh2, crack = fr.insert_crack(mesh, [mesh.nodes[2],
                                              np.array([0.6, 0.52])])
        left = set(crack.left_ids) - set(crack.right_ids)
        right = set(crack.right_ids) - set(crack.left_ids)
        assert left and right
        for a in left:
            for b in right:
                assert a != b

    def test_degenerate_path_rejected(self):
        mesh = grid_mesh(4)
        with pytest.raises(fr.FractureError):
            # runs exactly along mesh edges: nodal-release territory
            fr.insert_crack(mesh, [mesh.nodes[2], np.array([0.52, 0.5]),
                                   np.array([1.0, 0.5])])


class TestPropagation:
    def test_edge_crack_runs_mode_one(self):
        from polymicro import microgen as mg
        from polymicro.system import apply_dirichlet, solve_linear
        rng = np.random.default_rng(17)
        mesh = mg.multiregion_mesh(1.0, [], 0.06, mode="hybrid", rng=rng)
        i0 = min(range(mesh.n_nodes),
                 key=lambda i: mesh.nodes[i][0] ** 2
                 + (mesh.nodes[i][1] - 0.5) ** 2)
        mesh, crack = fr.insert_crack(
            mesh, [mesh.nodes[i0], np.array([0.3, mesh.nodes[i0][1] + 0.013])])
        elastic = isotropic_matrix(1000.0, 0.3, "plane_strain")

        def solve_fn(m):
            model = Model(mesh=m, materials={"matrix": elastic})
            diri = []
            for i in range(m.n_nodes):
                x, y = m.nodes[i]
                if y > 1 - 1e-9:
                    diri.append((2 * i + 1, 0.02))
                if y < 1e-9:
                    diri.append((2 * i + 1, 0.0))
                    if x < 0.08:
                        diri.append((2 * i, 0.0))
            system, cache = assemble_global(model)
            apply_dirichlet(system, diri)
            return cache, solve_linear(system)

        cracks, mesh_f, recs = fr.propagate_crack(mesh, [crack], solve_fn,
                                                  delta_a=0.09, max_steps=4)
        assert len(recs) == 4
        assert all(r.K_I > 0 for r in recs)
        assert all(abs(r.K_II / r.K_I) < 0.35 for r in recs)
        assert not hard_issues(mesh_f)
        A = sum(polygon_geometry(e, mesh_f).area for e in mesh_f.elements)
        assert A == pytest.approx(1.0, abs=1e-9)
