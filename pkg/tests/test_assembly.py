import numpy as np
import pytest
import scipy.sparse as sp

from helpers import linear_exact, patch_problem, quadratic_exact, stokes_config
from nsslip.assembly import (NitscheConfig, PhysicalConfig, ProblemConfig, StabConfig,
                             apply_dirichlet, assemble_operator, local_reynolds,
                             navier_facet_matrices, tau_bound, tau_delta, xi)
from nsslip.fem import build_space
from nsslip.mesh import NAVIER, build_unit_square, any_of, on_line, refine
from nsslip.solver import enforce_zero_mean, linear_solve
from reference_assembly import reference_cell_matrix

M_K = 0.0814814


class TestStabilizationParameters:
    @pytest.mark.parametrize("y, expected", [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0), (7.3, 1.0)])
    def test_xi(self, y, expected):
        assert xi(y) == expected

    def test_xi_negative(self):
        with pytest.raises(ValueError):
            xi(-0.1)

    def test_local_reynolds(self):
        assert local_reynolds(0.0, 0.1, 1.0, M_K) == 0.0
        assert local_reynolds(1.0, 0.1, 0.01, M_K) == pytest.approx(0.2037035, rel=1e-12)
        assert local_reynolds(1.0, 0.2, 0.01, M_K) == pytest.approx(2 * 0.2037035, rel=1e-12)

    def test_tau_delta_diffusive_limit(self):
        tau, delta = tau_delta(0.0, 0.1, 1.0, StabConfig(1.0, M_K))
        assert tau == pytest.approx(M_K * 0.01 / 8, rel=1e-14)
        assert tau == pytest.approx(1.0185175e-4, rel=1e-7)
        assert delta == 0.0

    def test_tau_delta_advective(self):
        assert local_reynolds(10.0, 0.1, 0.001, M_K) == pytest.approx(20.37035)
        tau, delta = tau_delta(10.0, 0.1, 0.001, StabConfig(1.0, M_K))
        assert tau == pytest.approx(0.005) and delta == pytest.approx(1.0)

    def test_tau_continuous_at_switch(self):
        stab = StabConfig(1.0, M_K)
        u = 4.0 * 0.01 / (M_K * 0.1)  # Re_K = 1
        lo, hi = tau_delta(u * (1 - 1e-12), 0.1, 0.01, stab), tau_delta(u, 0.1, 0.01, stab)
        assert np.allclose(lo, hi, rtol=1e-9)

    def test_tau_bound_random(self):
        rng = np.random.default_rng(42)
        u = 10.0 ** rng.uniform(-6, 4, 1000)
        h = 10.0 ** rng.uniform(-5, 0, 1000)
        nu = 10.0 ** rng.uniform(-5, 1, 1000)
        for m_k in (M_K, 1 / 3, 1e-3):
            tau, _ = tau_delta(u, h, nu, StabConfig(1.0, m_k))
            assert np.all(tau <= tau_bound(h, nu, m_k) + 1e-15)

    @pytest.mark.parametrize("kwargs", [dict(lam=0.0), dict(m_k=0.5), dict(p_norm=0.5)])
    def test_stab_validation(self, kwargs):
        with pytest.raises(ValueError):
            StabConfig(**kwargs)

    @pytest.mark.parametrize("kwargs", [dict(theta=2), dict(gamma=0.0), dict(beta=-1.0)])
    def test_nitsche_validation(self, kwargs):
        with pytest.raises(ValueError):
            NitscheConfig(**kwargs)


def _advection(space, seed=0):
    rng = np.random.default_rng(seed)
    x = np.zeros(space.n_dofs)
    x[:2 * space.n_nodes] = rng.normal(size=2 * space.n_nodes)
    return x


class TestCellKernel:
    """Block-structured assembly against the dense reference formulation."""

    @pytest.mark.parametrize("degree", [1, 2])
    @pytest.mark.parametrize("nu", [1.0, 0.01])
    @pytest.mark.parametrize("newton", [False, True])
    def test_matches_reference(self, degree, nu, newton):
        mesh = refine(build_unit_square(3), [0, 5])   # no Navier facets: cells only
        space = build_space(mesh, degree)
        exact = quadratic_exact(nu)
        cfg = ProblemConfig(NitscheConfig(), StabConfig(), exact.physical(10.0))
        x = _advection(space, 1)
        sysm = assemble_operator(space, x, cfg, newton=newton)
        A, b = reference_cell_matrix(space, x, cfg, newton=newton)
        scale = abs(A).max()
        assert abs(sysm.matrix - A).max() <= 1e-13 * scale
        assert np.allclose(sysm.rhs, b, rtol=0, atol=1e-12 * np.abs(b).max())

    def test_p1_second_derivatives_irrelevant(self):
        space = build_space(build_unit_square(4, on_line(y=1.0)), 1)
        cfg = patch_problem()[1]
        x = _advection(space)
        a = assemble_operator(space, x, cfg, with_second=True).matrix
        b = assemble_operator(space, x, cfg, with_second=False).matrix
        assert abs(a - b).max() <= 1e-14 * abs(a).max()


class TestNitscheTerms:
    def test_symmetric_variant_p1_stokes(self):
        mesh = build_unit_square(4, any_of(on_line(y=1.0), on_line(x=0.0)))
        space = build_space(mesh, 1)
        A = assemble_operator(space, None, stokes_config(theta=1)).matrix
        assert abs(A - A.T).max() <= 1e-12

    def test_symmetric_variant_p2_galerkin(self):
        mesh = build_unit_square(3, on_line(y=1.0))
        space = build_space(mesh, 2)
        A = assemble_operator(space, None, stokes_config(theta=1), stabilization=False).matrix
        assert abs(A - A.T).max() <= 1e-12

    @pytest.mark.parametrize("theta", [0, -1])
    def test_other_variants_not_symmetric(self, theta):
        mesh = build_unit_square(3, on_line(y=1.0))
        A = assemble_operator(build_space(mesh, 1), None, stokes_config(theta=theta)).matrix
        assert abs(A - A.T).max() > 1e-3

    def test_theta_difference_supported_on_navier_facets(self):
        mesh = build_unit_square(4, on_line(y=1.0))
        space = build_space(mesh, 1)
        A1 = assemble_operator(space, None, stokes_config(theta=1)).matrix
        A0 = assemble_operator(space, None, stokes_config(theta=0)).matrix
        D = (A1 - A0).tocoo()
        D.eliminate_zeros()
        nav = mesh.facets_with_tag(NAVIER)
        nav_nodes = space.facet_nodes(nav)
        owner_nodes = np.unique(space.cell_dofs[mesh.facet_cells[nav, 0]])
        N = space.n_nodes
        # test side: stress of v on the owner cells; trial side: u . n on the facet
        assert set((D.row % N).tolist()) <= set(owner_nodes.tolist())
        assert set((D.col % N).tolist()) <= set(nav_nodes.tolist())
        assert D.nnz > 0

    def test_penalty_on_single_facet(self):
        nu, gamma = 0.7, 13.0
        mesh = build_unit_square(2, on_line(y=0.0))
        space = build_space(mesh, 1)
        cfg = ProblemConfig(NitscheConfig(1, gamma, 0.0), StabConfig(), PhysicalConfig(nu))
        f = mesh.facets_with_tag(NAVIER)[0]
        dofs, A, _ = navier_facet_matrices(space, cfg, [f])
        u = np.zeros(dofs.shape[1])
        u[3:6] = 1.0  # constant (0, 1): u . n = -1 on y = 0
        assert u @ A[0] @ u == pytest.approx(gamma * nu, rel=1e-13)

    def test_no_navier_facets(self):
        space = build_space(build_unit_square(2), 2)
        dofs, A, b = navier_facet_matrices(space, stokes_config())
        assert dofs.shape[0] == A.shape[0] == b.shape[0] == 0


def _solve_frozen(space, cfg, exact):
    """One linear solve with the advection frozen at the interpolated exact field."""
    xi_ = space.interpolate(exact.velocity, exact.pressure)
    system = apply_dirichlet(assemble_operator(space, xi_, cfg), space, cfg.physical.dirichlet)
    x = linear_solve(enforce_zero_mean(system, space))[:space.n_dofs]
    return x, xi_


class TestPatch:
    @pytest.mark.parametrize("theta", [-1, 0, 1])
    @pytest.mark.parametrize("degree", [1, 2])
    def test_linear_field_reproduced(self, theta, degree):
        mesh, cfg, exact = patch_problem(theta=theta, n=3)
        space = build_space(refine(mesh, [2, 7]), degree)
        x, ref = _solve_frozen(space, cfg, exact)
        N = space.n_nodes
        m = space.pressure_mass
        ref[2 * N:] -= m @ ref[2 * N:] / m.sum()
        assert np.abs(x - ref).max() <= 1e-10

    @pytest.mark.parametrize("theta", [-1, 0, 1])
    def test_quadratic_field_reproduced_by_p2(self, theta):
        mesh, cfg, exact = patch_problem(theta=theta, n=3, nu=0.05, exact=quadratic_exact(0.05))
        space = build_space(mesh, 2)
        x, ref = _solve_frozen(space, cfg, exact)
        N = space.n_nodes
        m = space.pressure_mass
        ref[2 * N:] -= m @ ref[2 * N:] / m.sum()
        assert np.abs(x - ref).max() <= 1e-10

    def test_uniform_flow(self):
        # u = (1, 0), p = 0, f = 0, slip wall y = 0 with beta = 0
        mesh = build_unit_square(4, on_line(y=0.0))
        space = build_space(mesh, 1)
        cfg = ProblemConfig(NitscheConfig(1, 10.0, 0.0), StabConfig(),
                            PhysicalConfig(1.0, dirichlet=lambda p: np.stack(
                                [np.ones(len(p)), np.zeros(len(p))], axis=-1)))
        system = apply_dirichlet(assemble_operator(space, None, cfg), space, cfg.physical.dirichlet)
        x = linear_solve(enforce_zero_mean(system, space))
        N = space.n_nodes
        assert np.allclose(x[:N], 1.0, atol=1e-12) and np.allclose(x[N:3 * N], 0.0, atol=1e-12)


class TestDirichlet:
    def test_constraint_count(self):
        mesh = build_unit_square(3, on_line(y=1.0))
        space = build_space(mesh, 2)
        coords = space.node_coordinates
        on_d = ((np.isclose(coords[:, 0], 0) | np.isclose(coords[:, 0], 1)
                 | np.isclose(coords[:, 1], 0)))
        assert space.dirichlet_dofs.size == 2 * on_d.sum()

    def test_zero_data_gives_zero(self):
        space = build_space(build_unit_square(3), 1)
        system = assemble_operator(space, None, stokes_config())
        system.rhs[:] = 1.0
        out = apply_dirichlet(system, space, None)
        assert np.all(out.rhs[space.dirichlet_dofs] == 0.0)
        x = linear_solve(enforce_zero_mean(out, space))
        assert np.all(x[space.dirichlet_dofs] == 0.0)
