import math

import numpy as np
import pytest

from nsslip.fem import (CellEvaluator, affine_maps, build_space, evaluate, line_rule,
                        locate_points, map_to_physical, shape_functions, transfer, triangle_rule)
from nsslip.mesh import build_lshape, build_unit_square, refine, refine_uniform


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


class TestQuadrature:
    @pytest.mark.parametrize("order", range(0, 13))
    def test_triangle_exactness(self, order):
        rule = triangle_rule(order)
        x, y = rule.points.T
        for a in range(order + 1):
            for b in range(order + 1 - a):
                assert np.dot(rule.weights, x ** a * y ** b) == pytest.approx(
                    monomial_integral(a, b), abs=1e-14)

    @pytest.mark.parametrize("order", range(0, 12))
    def test_line_exactness(self, order):
        t, w = line_rule(order)
        for a in range(order + 1):
            assert np.dot(w, t ** a) == pytest.approx(1.0 / (a + 1), abs=1e-14)

    def test_area_by_quadrature(self):
        mesh = refine(build_lshape(2), [1, 4, 6])
        space = build_space(mesh, 1)
        rule = triangle_rule(2)
        ev = CellEvaluator(space, np.arange(mesh.n_cells), rule.points, rule.weights)
        v = mesh.vertices[mesh.cells]
        area = 0.5 * np.abs((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                            - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1]))
        assert np.allclose(ev.weights.sum(axis=1), area, rtol=0, atol=1e-14)

    def test_negative_order(self):
        with pytest.raises(ValueError):
            triangle_rule(-1)


class TestShapeFunctions:
    def test_p1_barycenter(self):
        vals, _, _ = shape_functions(1, [[1 / 3, 1 / 3]])
        assert np.allclose(vals, 1 / 3)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_lagrange_property(self, degree):
        from nsslip.fem import reference_nodes

        vals, _, _ = shape_functions(degree, reference_nodes(degree))
        assert np.allclose(vals, np.eye(vals.shape[0]), atol=1e-15)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_partition_of_unity(self, degree):
        pts = np.random.default_rng(0).random((20, 2)) * 0.5
        vals, grads, _ = shape_functions(degree, pts)
        assert np.allclose(vals.sum(axis=1), 1.0)
        assert np.allclose(grads.sum(axis=1), 0.0)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_derivatives_by_finite_differences(self, degree):
        rng = np.random.default_rng(1)
        pts = rng.random((15, 2)) * 0.45 + 0.05
        h = 1e-5
        _, grads, hess = shape_functions(degree, pts)
        for k, e in enumerate(np.eye(2)):
            vp, gp, _ = shape_functions(degree, pts + h * e)
            vm, gm, _ = shape_functions(degree, pts - h * e)
            assert np.allclose((vp - vm) / (2 * h), grads[..., k], atol=1e-8)
            assert np.allclose((gp - gm) / (2 * h), hess[..., k], atol=1e-6)

    def test_p2_hessian_constant(self):
        _, _, hess = shape_functions(2, np.random.default_rng(2).random((10, 2)) * 0.5)
        assert np.allclose(hess, hess[0:1])


class TestAffineMaps:
    def test_identity(self):
        v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        x0, J, det, inv = affine_maps(v, np.array([[0, 1, 2]]))
        assert np.allclose(J[0], np.eye(2)) and det[0] == 1.0
        _, g, h = shape_functions(2, [[0.2, 0.3]])
        pg, ph = map_to_physical(J, inv, g, h)
        assert np.allclose(pg[0], g) and np.allclose(ph[0], h)

    def test_scaling_by_two(self):
        v = 2.0 * np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        _, J, det, inv = affine_maps(v, np.array([[0, 1, 2]]))
        _, g, _ = shape_functions(1, [[0.2, 0.3]])
        assert np.allclose(map_to_physical(J, inv, g)[0], 0.5 * g)
        assert det[0] == pytest.approx(4.0)

    def test_degenerate(self):
        v = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(ValueError):
            affine_maps(v, np.array([[0, 1, 2]]))


class TestSpace:
    def test_p1_counts(self):
        s = build_space(build_unit_square(4), 1)
        assert s.n_dofs_pressure == 25 and s.n_dofs_velocity == 50

    def test_p2_counts(self):
        s = build_space(build_unit_square(1), 2)
        assert s.n_dofs_pressure == 9

    @pytest.mark.parametrize("degree", [1, 2])
    def test_shared_edge_dofs(self, degree):
        mesh = refine(build_lshape(2), [0, 2])
        s = build_space(mesh, degree)
        ref = np.array([[0.5, 0.0], [0.0, 0.5], [0.5, 0.5], [0.25, 0.0]])
        for f in mesh.interior_facets[:20]:
            a, b = mesh.facet_cells[f]
            pts = mesh.vertices[mesh.facets[f]]
            pts = np.vstack([pts, pts.mean(axis=0)])
            coords = s.node_coordinates
            da = {tuple(np.round(coords[d], 12)): d for d in s.cell_dofs[a]}
            db = {tuple(np.round(coords[d], 12)): d for d in s.cell_dofs[b]}
            shared = set(da) & set(db)
            assert len(shared) == degree + 1
            for key in shared:
                assert da[key] == db[key]

    @pytest.mark.parametrize("degree", [1, 2])
    def test_interpolation_reproduces_polynomials(self, degree):
        mesh = refine(build_lshape(2), [3, 8])
        s = build_space(mesh, degree)
        if degree == 1:
            f = lambda p: 1.0 + 2.0 * p[..., 0] - 3.0 * p[..., 1]
        else:
            f = lambda p: p[..., 0] ** 2 - p[..., 0] * p[..., 1] + 0.5 * p[..., 1]
        c = s.interpolate_scalar(f)
        rule = triangle_rule(4)
        ev = CellEvaluator(s, np.arange(mesh.n_cells), rule.points, rule.weights)
        v, _ = ev.scalar(c)
        assert np.allclose(v, f(ev.points), atol=1e-13)

    def test_pressure_mass(self):
        s = build_space(build_lshape(2), 2)
        assert s.pressure_mass.sum() == pytest.approx(3.0, abs=1e-13)


class TestPointLocation:
    def test_locate_vertices_and_outside(self):
        mesh = build_lshape(2)
        pts = np.array([[0.5, 0.5], [-0.5, -0.5], [-0.25, 0.75], [2.0, 0.0]])
        cells, ref = locate_points(mesh, pts)
        assert cells[1] == -1 and cells[3] == -1
        assert np.all(cells[[0, 2]] >= 0)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_transfer_exact_for_space_polynomials(self, degree):
        coarse = build_lshape(2)
        fine = refine(refine_uniform(coarse, 1), [0, 1, 2, 3])
        s0, s1 = build_space(coarse, degree), build_space(fine, degree)

        def vel(p):
            x, y = p[..., 0], p[..., 1]
            if degree == 1:
                return np.stack([1 + x - y, 2 * x], axis=-1)
            return np.stack([x * y, y * y - x], axis=-1)

        def pres(p):
            return p[..., 0] - 2 * p[..., 1] + (degree - 1) * p[..., 0] ** 2

        x1 = transfer(s0, s0.interpolate(vel, pres), s1)
        assert np.allclose(x1, s1.interpolate(vel, pres), atol=1e-13)

    def test_evaluate_nan_outside(self):
        s = build_space(build_unit_square(2), 1)
        u, p = evaluate(s, s.interpolate(lambda q: q, lambda q: q[..., 0]),
                        np.array([[0.3, 0.4], [1.5, 0.5]]))
        assert np.allclose(u[0], [0.3, 0.4]) and p[0] == pytest.approx(0.3)
        assert np.isnan(u[1]).all() and np.isnan(p[1])

    def test_transfer_outside_raises(self):
        s0 = build_space(build_unit_square(2), 1)
        s1 = build_space(build_lshape(1), 1)
        with pytest.raises(ValueError):
            transfer(s0, np.zeros(s0.n_dofs), s1)
