import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsslip.mesh import (DIRICHLET, NAVIER, Mesh, MeshError, build_lshape, build_unit_square,
                         check_conformity, facet_geometry, on_line, refine, refine_uniform)


def boundary_facets_by_enumeration(mesh):
    """Edges used by exactly one cell, found by brute-force counting."""
    count = {}
    for a, b, c in mesh.cells.tolist():
        for e in ((a, b), (b, c), (c, a)):
            key = tuple(sorted(e))
            count[key] = count.get(key, 0) + 1
    return [e for e, k in count.items() if k == 1]


class TestGenerators:
    def test_unit_square_n4(self):
        m = build_unit_square(4)
        assert (m.n_vertices, m.n_cells) == (25, 32)
        assert m.h_max == pytest.approx(0.3535533905932738, abs=1e-15)
        assert round(m.h_max, 4) == 0.3536
        check_conformity(m)

    def test_unit_square_n1(self):
        m = build_unit_square(1)
        assert (m.n_vertices, m.n_cells) == (4, 2)
        assert m.h_max == pytest.approx(math.sqrt(2))

    def test_navier_tagging_matches_enumeration(self):
        m = build_unit_square(4, on_line(y=1.0))
        edges = boundary_facets_by_enumeration(m)
        top = [e for e in edges if np.allclose(m.vertices[list(e), 1], 1.0)]
        assert len(edges) == 16 and len(top) == 4
        assert np.sum(m.boundary_tags == NAVIER) == 4
        assert np.sum(m.boundary_tags == DIRICHLET) == 12

    def test_lshape_n1(self):
        m = build_lshape(1)
        assert (m.n_vertices, m.n_cells) == (8, 6)
        assert round(m.h_max, 4) == 1.4142
        nav = m.facets_with_tag(NAVIER)
        assert nav.size == 2
        mids = m.facet_midpoints[nav]
        assert sorted(np.round(mids, 12).tolist()) == [[-0.5, 0.0], [0.0, -0.5]]

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_lshape_corner_once(self, n):
        m = build_lshape(n)
        assert np.sum(np.all(m.vertices == 0.0, axis=1)) == 1
        check_conformity(m)
        assert m.areas.sum() == pytest.approx(3.0, abs=1e-13)

    @pytest.mark.parametrize("bad", [0, -2, 1.5])
    def test_invalid_subdivision(self, bad):
        with pytest.raises(ValueError):
            build_unit_square(bad)


class TestFacetGeometry:
    def test_top_edge(self):
        m = build_unit_square(2)
        top = [f for f in range(m.n_facets) if np.allclose(m.facet_midpoints[f, 1], 1.0)]
        h, n, t, cells = facet_geometry(m, top[0])
        assert np.allclose(n, [0.0, 1.0])
        assert np.allclose(np.abs(t), [1.0, 0.0])
        assert len(cells) == 1

    def test_bottom_edge_outward(self):
        m = build_unit_square(1)
        f = [f for f in range(m.n_facets)
             if np.allclose(m.facet_midpoints[f], [0.5, 0.0])][0]
        h, n, t, _ = facet_geometry(m, f)
        assert np.allclose(n, [0.0, -1.0])
        assert h == pytest.approx(1.0)

    def test_lengths(self):
        m = refine(build_lshape(2), [0, 3, 7])
        for f in range(m.n_facets):
            a, b = m.vertices[m.facets[f]]
            assert facet_geometry(m, f)[0] == pytest.approx(np.hypot(*(b - a)), rel=1e-15)

    def test_normal_tangent_orthonormal(self):
        m = build_lshape(3)
        n, t = m.facet_normals, m.facet_tangents
        assert np.allclose(np.einsum("ij,ij->i", n, t), 0.0)
        assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
        # boundary normals point out of the domain
        bnd = np.flatnonzero(m.facet_cells[:, 1] < 0)
        probe = m.facet_midpoints[bnd] + 1e-6 * n[bnd]
        outside = (np.any(np.abs(probe) > 1.0, axis=1)
                   | ((probe[:, 0] < 0) & (probe[:, 1] < 0)))
        assert np.all(outside)


class TestRefinement:
    def test_both_cells(self):
        m0 = build_unit_square(1)
        m = refine(m0, [0, 1])
        check_conformity(m)
        assert m.n_cells >= 4
        assert m.h_max < m0.h_max

    def test_single_cell_conforming(self):
        m = refine(build_unit_square(1), [0])
        check_conformity(m)
        assert len(boundary_facets_by_enumeration(m)) == len(m.boundary_facets)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_uniform_diameter_bound(self, k):
        m = refine_uniform(build_unit_square(4), k)
        check_conformity(m)
        assert m.h_max <= math.sqrt(2) / 4 * 2 ** (-k / 2) + 1e-14

    def test_tags_inherited(self):
        m = refine_uniform(build_unit_square(2, on_line(y=1.0)), 2)
        nav = m.facets_with_tag(NAVIER)
        assert np.allclose(m.facet_midpoints[nav, 1], 1.0)
        assert m.facet_lengths[nav].sum() == pytest.approx(1.0)

    def test_area_preserved(self):
        m = refine(build_lshape(2), [0, 5, 9])
        assert m.areas.sum() == pytest.approx(3.0, abs=1e-13)

    def test_bad_index(self):
        with pytest.raises(IndexError):
            refine(build_unit_square(1), [5])

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=6),
                    min_size=1, max_size=5))
    def test_random_marking_stays_conforming(self, rounds):
        m = build_lshape(1)
        area = m.areas.sum()
        for picks in rounds:
            m = refine(m, [p % m.n_cells for p in picks])
            check_conformity(m)
        assert m.areas.sum() == pytest.approx(area, abs=1e-12)


class TestConformityChecker:
    def test_hanging_vertex_detected(self):
        # two cells on the left, one unsplit cell on the right: vertex 4 hangs
        v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], float)
        cells = np.array([[0, 1, 4], [0, 4, 3], [1, 2, 3]])
        bf = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
        m = Mesh(v, cells, bf, np.full(4, DIRICHLET), np.zeros(3, int))
        with pytest.raises(MeshError):
            check_conformity(m)

    def test_clockwise_cell_detected(self):
        m = build_unit_square(1)
        bad = Mesh(m.vertices, m.cells[:, ::-1], m.boundary_facets, m.boundary_tags,
                   m.refinement_edge)
        with pytest.raises(MeshError):
            check_conformity(bad)
