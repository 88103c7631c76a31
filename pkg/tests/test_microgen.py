"""Microstructure generators and the polygonal meshing pipelines."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from polymicro import bem, microgen as mg
from polymicro.mesh import (PolyElement, PolygonalMesh, Region,
                            polygon_geometry, signed_area, validate_mesh)


def total_area(mesh):
    return sum(polygon_geometry(el, mesh).area for el in mesh.elements)


class TestVoronoi:
    def test_single_seed_fills_box(self):
        cells = mg.voronoi_tessellate(np.array([[0.4, 0.6]]), (0, 0, 1, 1))
        assert len(cells) == 1
        assert abs(signed_area(cells[0])) == pytest.approx(1.0)

    def test_two_seeds_bisector(self):
        cells = mg.voronoi_tessellate(np.array([[0.25, 0.5], [0.75, 0.5]]),
                                      (0, 0, 1, 1))
        for cell in cells:
            assert abs(signed_area(cell)) == pytest.approx(0.5)
        assert all(abs(x - 0.5) < 1e-12 for x, y in cells[0]
                   if x > 0.25)         # wall on the perpendicular bisector

    def test_quadrant_seeds_rasterization_oracle(self):
        seeds = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75],
                          [0.75, 0.75]])
        cells = mg.voronoi_tessellate(seeds, (0, 0, 1, 1))
        # nearest-seed rasterization oracle
        g = (np.arange(50) + 0.5) / 50
        gx, gy = np.meshgrid(g, g)
        pts = np.column_stack((gx.ravel(), gy.ravel()))
        d = ((pts[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
        counts = np.bincount(d.argmin(axis=1), minlength=4) / pts.shape[0]
        for k, cell in enumerate(cells):
            assert abs(signed_area(cell)) == pytest.approx(counts[k], abs=2e-2)
            assert abs(signed_area(cell)) == pytest.approx(0.25, rel=1e-10)

    def test_cells_convex_and_tile(self):
        rng = np.random.default_rng(8)
        seeds = rng.random((40, 2))
        cells = mg.voronoi_tessellate(seeds, (0, 0, 1, 1))
        total = sum(abs(signed_area(c)) for c in cells)
        assert total == pytest.approx(1.0, rel=1e-10)
        for cell, seed in zip(cells, seeds):
            m = cell.shape[0]
            for i in range(m):
                e = cell[(i + 1) % m] - cell[i]
                rel = cell[(i + 2) % m] - cell[i]
                assert np.cross(e, rel) > -1e-9     # convexity
            # seed inside its cell
            from matplotlib.path import Path
            assert Path(cell).contains_point(seed)


class TestPolycrystal:
    def test_ten_grains_conforming(self):
        spec = mg.PolycrystalSpec(n_grains=10, box_side=1.0, rng_seed=42,
                                  target_mesh_size=0.1)
        mesh, attrs = mg.polycrystal_generate(spec)
        assert len({el.region_id for el in mesh.elements}) == 10
        assert validate_mesh(mesh).ok
        assert total_area(mesh) == pytest.approx(1.0, rel=1e-10)
        assert all(0.0 <= a.theta < 2 * math.pi for a in attrs)

    def test_single_grain(self):
        spec = mg.PolycrystalSpec(n_grains=1, box_side=1.0, rng_seed=1,
                                  target_mesh_size=0.25)
        mesh, attrs = mg.polycrystal_generate(spec)
        assert len(attrs) == 1
        assert total_area(mesh) == pytest.approx(1.0, rel=1e-10)

    def test_deterministic(self):
        spec = mg.PolycrystalSpec(n_grains=6, box_side=1.0, rng_seed=9,
                                  target_mesh_size=0.12)
        m1, a1 = mg.polycrystal_generate(spec)
        m2, a2 = mg.polycrystal_generate(spec)
        assert np.array_equal(m1.nodes, m2.nodes)
        assert [e.vertex_ids for e in m1.elements] == \
            [e.vertex_ids for e in m2.elements]
        assert [x.theta for x in a1] == [x.theta for x in a2]

    @pytest.mark.parametrize("n_g,seed", [(10, 0), (50, 1), (200, 2)])
    def test_random_sizes_validate(self, n_g, seed):
        spec = mg.PolycrystalSpec(n_grains=n_g, box_side=1.0, rng_seed=seed,
                                  target_mesh_size=0.06)
        mesh, _ = mg.polycrystal_generate(spec)
        assert validate_mesh(mesh).ok
        assert total_area(mesh) == pytest.approx(1.0, rel=1e-10)


class TestFiberPack:
    def test_fiber_count_formula(self):
        assert mg.FiberCellSpec(volume_fraction=0.29, delta=10,
                                rng_seed=0).n_fibers == 9
        # round(0.44 * 2500 / pi) = 350
        assert mg.FiberCellSpec(volume_fraction=0.44, delta=50,
                                rng_seed=0).n_fibers == 350

    def test_single_fiber_no_relaxation(self):
        spec = mg.FiberCellSpec(volume_fraction=0.03, delta=10, rng_seed=5)
        assert spec.n_fibers == 1
        packing = mg.fiber_pack(spec)
        assert packing.iterations == 0
        assert packing.centers.shape == (1, 2)

    @pytest.mark.parametrize("vf,delta,seed", [(0.29, 10, 1), (0.29, 30, 7),
                                               (0.44, 50, 3)])
    def test_periodic_min_distance(self, vf, delta, seed):
        spec = mg.FiberCellSpec(volume_fraction=vf, delta=delta, rng_seed=seed)
        packing = mg.fiber_pack(spec)
        # independent O(N^2) periodic oracle
        pts = packing.centers
        L = packing.box_side
        n = pts.shape[0]
        dmin = math.inf
        for i in range(n):
            for j in range(i + 1, n):
                d = np.abs(pts[i] - pts[j])
                d = np.minimum(d, L - d)
                dmin = min(dmin, float(np.hypot(*d)))
        assert dmin >= 2.0 * packing.radius
        assert dmin >= spec.min_spacing_factor * packing.radius - 1e-12

    def test_determinism(self):
        spec = mg.FiberCellSpec(volume_fraction=0.2, delta=15, rng_seed=11)
        p1 = mg.fiber_pack(spec)
        p2 = mg.fiber_pack(spec)
        assert np.array_equal(p1.centers, p2.centers)
        assert np.array_equal(p1.rotations, p2.rotations)

    def test_interior_arrangement(self):
        spec = mg.FiberCellSpec(volume_fraction=0.29, delta=20, rng_seed=3,
                                min_spacing_factor=2.15)
        packing = mg.interior_fiber_arrangement(mg.fiber_pack(spec),
                                                min_spacing_factor=2.15)
        r = packing.radius
        assert packing.centers.min() >= r
        assert packing.centers.max() <= 1.0 - r
        n = packing.centers.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                assert np.hypot(*(packing.centers[i] - packing.centers[j])) \
                    >= 2.0 * r


class TestMultiregion:
    def test_circle_hole_conformity(self):
        circle = bem.circle_loop((0.5, 0.5), 0.2, 48)
        mesh = mg.multiregion_mesh(1.0, [circle], 0.06, mode="hybrid",
                                   rng=np.random.default_rng(5))
        assert validate_mesh(mesh).ok
        loop = mesh.interface_loops[1]
        used = set()
        for el in mesh.elements:
            used.update(el.vertex_ids)
        assert set(loop) <= used         # every loop node used by a polygon
        hole = signed_area(mesh.nodes[loop])
        assert total_area(mesh) + hole == pytest.approx(1.0, rel=1e-9)

    def test_no_inclusions_pure_dual(self):
        mesh = mg.multiregion_mesh(1.0, [], 0.1, mode="hybrid",
                                   rng=np.random.default_rng(3))
        assert validate_mesh(mesh).ok
        assert not mesh.interface_loops
        assert total_area(mesh) == pytest.approx(1.0, rel=1e-10)

    def test_vem_mode_meshes_inclusions(self):
        circle = bem.circle_loop((0.5, 0.5), 0.2, 48)
        mesh = mg.multiregion_mesh(1.0, [circle], 0.06, mode="vem",
                                   rng=np.random.default_rng(5))
        regions = {el.region_id for el in mesh.elements}
        assert regions == {0, 1}
        assert total_area(mesh) == pytest.approx(1.0, rel=1e-9)
        assert validate_mesh(mesh).ok

    def test_four_inclusion_cell_scale(self):
        from polymicro.benchmarks import four_inclusion_curves
        mesh = mg.multiregion_mesh(1.0, four_inclusion_curves(), 0.05,
                                   mode="hybrid", rng=np.random.default_rng(2))
        assert len(mesh.interface_loops) == 4
        assert validate_mesh(mesh).ok


class TestAbsorb:
    def test_identity_when_nothing_small(self):
        mesh = mg.multiregion_mesh(1.0, [], 0.15, mode="hybrid",
                                   rng=np.random.default_rng(1))
        out = mg.absorb_small_elements(mesh, 1e-6)
        assert out.n_elements == mesh.n_elements

    def test_two_element_merge_conserves_area(self):
        nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [1.05, 0],
                          [1.05, 1]], dtype=float)
        els = [PolyElement((0, 1, 2, 3), 0), PolyElement((1, 4, 5, 2), 0)]
        mesh = PolygonalMesh(nodes=nodes, elements=els,
                             regions=[Region(0, "VEM", "m")])
        before = total_area(mesh)
        out = mg.absorb_small_elements(mesh, 0.5)
        assert out.n_elements == 1
        assert total_area(out) == pytest.approx(before, rel=1e-12)
        assert validate_mesh(out).ok

    def test_histogram_shift_on_fiber_cell(self):
        """Absorption reduces the small-element count by at least 80%."""
        spec = mg.FiberCellSpec(volume_fraction=0.3, delta=12, rng_seed=2,
                                min_spacing_factor=2.15)
        packing = mg.interior_fiber_arrangement(mg.fiber_pack(spec),
                                                min_spacing_factor=2.15)
        curves = mg.periodic_inclusion_curves(packing, n_points=24)
        mesh = mg.multiregion_mesh(1.0, curves, 0.05, mode="hybrid",
                                   rng=np.random.default_rng(4), max_retries=6)
        areas = np.array([polygon_geometry(el, mesh).area
                          for el in mesh.elements])
        thresh = 0.2 * areas.mean()
        n_small_before = int((areas < thresh).sum())
        out = mg.absorb_small_elements(mesh, 0.2)
        areas2 = np.array([polygon_geometry(el, out).area
                           for el in out.elements])
        n_small_after = int((areas2 < thresh).sum())
        assert total_area(out) == pytest.approx(total_area(mesh), rel=1e-12)
        assert validate_mesh(out).ok
        if n_small_before:
            assert n_small_after <= 0.2 * n_small_before

    def test_island_left_untouched(self):
        # a single tiny element with no same-region neighbour stays
        nodes = np.array([[0, 0], [0.1, 0], [0.1, 0.1], [0, 0.1]], dtype=float)
        mesh = PolygonalMesh(nodes=nodes,
                             elements=[PolyElement((0, 1, 2, 3), 0)],
                             regions=[Region(0, "VEM", "m")])
        out = mg.absorb_small_elements(mesh, 2.0)
        assert out.n_elements == 1
