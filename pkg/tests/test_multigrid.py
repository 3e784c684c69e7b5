"""Transfer operators, V-cycle, and solver loop."""

import numpy as np
import pytest
import scipy.linalg as sla

from hhgscale.coefficients import catalog, sample_nodal
from hhgscale.mesh import RefinedGrid, unit_cube_6, unit_cube_12, unit_square
from hhgscale.multigrid import (GridHierarchy, prolongation_matrix, solve,
                                vcycle)
from hhgscale.operators import Operator
from hhgscale.oracle import assemble_global


@pytest.fixture(scope="module")
def cube():
    return unit_cube_6()


@pytest.fixture(scope="module")
def cube_pair(cube):
    return RefinedGrid(cube, 2), RefinedGrid(cube, 3)


@pytest.fixture(scope="module")
def P(cube_pair):
    return prolongation_matrix(*cube_pair)


def test_prolongation_shape(cube_pair, P):
    gc, gf = cube_pair
    assert P.shape == (gf.n_nodes, gc.n_nodes)
    # each fine node is either a coarse node or an edge midpoint
    assert np.diff(P.indptr).max() == 2
    assert np.diff(P.indptr).min() == 1


def test_prolongation_reproduces_constants(cube_pair, P):
    gc, _ = cube_pair
    assert np.abs(P @ np.ones(gc.n_nodes) - 1.0).max() == 0.0


def test_prolongation_reproduces_affine(cube_pair, P):
    gc, gf = cube_pair

    def aff(x):
        return 2.0 * x[:, 0] - 0.7 * x[:, 1] + 0.3 * x[:, 2] + 1.0

    err = np.abs(P @ aff(gc.node_coords) - aff(gf.node_coords)).max()
    assert err < 1e-13


def test_prolongation_reproduces_affine_2d():
    m = unit_square()
    gc, gf = RefinedGrid(m, 1), RefinedGrid(m, 2)
    P2 = prolongation_matrix(gc, gf)

    def aff(x):
        return 0.4 * x[:, 0] + 1.3 * x[:, 1] - 0.2

    assert np.abs(P2 @ aff(gc.node_coords) - aff(gf.node_coords)).max() < 1e-13


def test_prolongation_weights(cube_pair, P):
    # coarse-coincident rows carry a single 1.0, midpoints two 0.5s
    for row in range(P.shape[0]):
        vals = sorted(P.data[P.indptr[row]:P.indptr[row + 1]])
        assert vals == [1.0] or vals == [0.5, 0.5]


def test_prolongation_requires_shared_macro(cube_pair):
    _, gf = cube_pair
    other = RefinedGrid(unit_cube_12(), 2)
    with pytest.raises(ValueError, match="macro"):
        prolongation_matrix(other, gf)


def test_prolongation_requires_adjacent_levels(cube, cube_pair):
    _, gf = cube_pair
    with pytest.raises(ValueError, match="one level"):
        prolongation_matrix(RefinedGrid(cube, 1), gf)


def test_restriction_is_scaled_adjoint(cube_pair, P):
    # restriction = P^T followed by zeroing coarse boundary rows, so the
    # adjoint identity holds on coarse vectors supported away from the
    # boundary
    gc, gf = cube_pair
    rng = np.random.default_rng(7)
    for _ in range(100):
        uc = rng.normal(size=gc.n_nodes)
        uc[gc.dirichlet_mask] = 0.0
        v = rng.normal(size=gf.n_nodes)
        r = P.T @ v
        r[gc.dirichlet_mask] = 0.0
        assert abs((P @ uc) @ v - uc @ r) < 1e-12


def test_hierarchy_restrict_zeroes_boundary(cube):
    hier = GridHierarchy(cube, 2, "const", lmin=1)
    gf = hier.grids[2]
    r = np.ones(gf.n_nodes)
    rc = hier.restrict(2, r)
    assert np.all(rc[hier.grids[1].dirichlet_mask] == 0.0)
    assert rc.shape == (hier.grids[1].n_nodes,)


def test_smoother_matches_dense_gauss_seidel(cube):
    # one sweep == lexicographic forward GS over the free rows of the
    # assembled matrix
    g = RefinedGrid(cube, 2)
    kf = sample_nodal(catalog("cos3d", m=3), g)
    op = Operator(g, "scaling", kf)
    A = assemble_global(g, "scaling", kf).toarray()
    rng = np.random.default_rng(3)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    u0 = rng.normal(size=g.n_nodes)
    u0[g.dirichlet_mask] = 0.0

    uref = u0.copy()
    for i in np.flatnonzero(~g.dirichlet_mask):
        uref[i] += (f[i] - A[i] @ uref) / A[i, i]
    u = u0.copy()
    op.smooth(u, f, sweeps=1)
    assert np.abs(u - uref).max() < 1e-13

    # and with relaxation
    uref = u0.copy()
    for i in np.flatnonzero(~g.dirichlet_mask):
        uref[i] += 1.4 * (f[i] - A[i] @ uref) / A[i, i]
    u = u0.copy()
    op.smooth(u, f, sweeps=1, omega=1.4)
    assert np.abs(u - uref).max() < 1e-13


def test_smoother_keeps_exact_solution(cube):
    g = RefinedGrid(cube, 2)
    kf = sample_nodal(catalog("cos3d", m=3), g)
    op = Operator(g, "scaling", kf)
    A = assemble_global(g, "scaling", kf).toarray()
    rng = np.random.default_rng(4)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    ii = np.flatnonzero(~g.dirichlet_mask)
    ustar = np.zeros(g.n_nodes)
    ustar[ii] = sla.solve(A[np.ix_(ii, ii)], f[ii])
    u = ustar.copy()
    op.smooth(u, f, sweeps=3)
    assert np.abs(u - ustar).max() < 1e-12 * np.abs(ustar).max()


def test_smoother_decreases_energy(cube):
    g = RefinedGrid(cube, 2)
    kf = sample_nodal(catalog("cos3d", m=3), g)
    op = Operator(g, "scaling", kf)
    A = assemble_global(g, "scaling", kf).toarray()
    rng = np.random.default_rng(5)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    ii = np.flatnonzero(~g.dirichlet_mask)
    Ar = A[np.ix_(ii, ii)]
    ustar = np.zeros(g.n_nodes)
    ustar[ii] = sla.solve(Ar, f[ii])
    u = rng.normal(size=g.n_nodes)
    u[g.dirichlet_mask] = 0.0
    prev = np.inf
    for _ in range(10):
        op.smooth(u, f, sweeps=1)
        e = (u - ustar)[ii]
        en = e @ (Ar @ e)
        assert en <= prev * (1 + 1e-12)
        prev = en


def test_vcycle_zero_stays_zero(cube):
    hier = GridHierarchy(cube, 3, "const")
    g = hier.grids[3]
    u = np.zeros(g.n_nodes)
    vcycle(hier, u, np.zeros(g.n_nodes))
    assert np.all(u == 0.0)


def test_vcycle_fixed_point(cube):
    # an exact discrete solution passes through one V-cycle unchanged
    hier = GridHierarchy(cube, 3, "scaling", catalog("cos3d", m=3))
    g = hier.grids[3]
    kf = sample_nodal(catalog("cos3d", m=3), g)
    A = assemble_global(g, "scaling", kf)
    rng = np.random.default_rng(6)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    import scipy.sparse.linalg as spla
    ustar = spla.spsolve(A.tocsc(), f)
    u = ustar.copy()
    vcycle(hier, u, f)
    assert np.linalg.norm(u - ustar) <= 1e-12 * np.linalg.norm(ustar)


def test_poisson_contraction(cube):
    hier = GridHierarchy(cube, 4, "const")
    g = hier.grids[4]
    rng = np.random.default_rng(0)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    u, rep = solve(hier, f, stop="iters:10")
    assert rep.iterations == 10
    for i in range(5, 10):
        assert rep.residuals[i + 1] / rep.residuals[i] <= 0.2
    assert rep.rho is not None and rep.rho <= 0.2
    assert rep.flops_add > 0 and rep.flops_mul > 0


def test_rate_insensitive_to_variant(cube):
    rng = np.random.default_rng(5)
    rho = {}
    for variant in ("scaling", "nodal"):
        hier = GridHierarchy(cube, 4, variant, catalog("cos3d", m=3))
        g = hier.grids[4]
        f = rng.normal(size=g.n_nodes)
        f[g.dirichlet_mask] = 0.0
        _, rep = solve(hier, f, stop="iters:12")
        rho[variant] = rep.rho
    assert abs(rho["scaling"] - rho["nodal"]) <= 0.05


def test_rate_insensitive_to_level():
    rng = np.random.default_rng(5)
    m = unit_square()
    rhos = []
    for l in (3, 4, 5, 6):
        hier = GridHierarchy(m, l, "scaling", catalog("sin2d", m=2))
        g = hier.grids[l]
        f = rng.normal(size=g.n_nodes)
        f[g.dirichlet_mask] = 0.0
        _, rep = solve(hier, f, stop="iters:12")
        rhos.append(rep.rho)
    assert max(rhos) - min(rhos) < 0.1


def test_solve_drop_mode(cube):
    hier = GridHierarchy(cube, 3, "scaling", catalog("cos3d", m=3))
    g = hier.grids[3]
    rng = np.random.default_rng(8)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    u, rep = solve(hier, f, stop="drop:1e-9")
    assert rep.residuals[-1] <= 1e-9 * rep.residuals[0]
    assert not rep.diverged


def test_solve_exact_start_stops_immediately(cube):
    hier = GridHierarchy(cube, 3, "scaling", catalog("cos3d", m=3))
    g = hier.grids[3]
    kf = sample_nodal(catalog("cos3d", m=3), g)
    A = assemble_global(g, "scaling", kf)
    rng = np.random.default_rng(9)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    import scipy.sparse.linalg as spla
    ustar = spla.spsolve(A.tocsc(), f)
    _, rep = solve(hier, f, u0=ustar, stop="drop:1e-9")
    assert rep.iterations == 0
    assert rep.rho is None


def test_solve_rejects_bad_stop(cube):
    hier = GridHierarchy(cube, 2, "const")
    f = np.zeros(hier.grids[2].n_nodes)
    with pytest.raises(ValueError, match="stop"):
        solve(hier, f, stop="until:tuesday")


def test_divergence_aborts(cube):
    # over-relaxation beyond 2 makes the sweep expansive; the run must
    # stop with a diverged report instead of burning max_cycles
    hier = GridHierarchy(cube, 3, "const", omega=2.2)
    g = hier.grids[3]
    rng = np.random.default_rng(1)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    _, rep = solve(hier, f, stop="iters:50")
    assert rep.diverged
    assert rep.iterations < 10
    assert rep.residuals[-1] > rep.residuals[0]


def test_hierarchy_rejects_missing_coefficient(cube):
    with pytest.raises(ValueError, match="coefficient"):
        GridHierarchy(cube, 2, "scaling")


def test_hierarchy_scalar_coefficient_matches_const(cube):
    # a constant coefficient runs through the variable-coefficient path
    # and lands on the same operator
    hier_s = GridHierarchy(cube, 2, "scaling", 2.5)
    hier_c = GridHierarchy(cube, 2, "const", 2.5)
    g = hier_s.grids[2]
    rng = np.random.default_rng(11)
    u = rng.normal(size=g.n_nodes)
    d = hier_s.ops[2].apply(u) - hier_c.ops[2].apply(u)
    assert np.abs(d).max() < 1e-12


def test_coarse_solve_levels(cube):
    # lmin above zero still solves: coarsest operator is the level-1 grid
    hier = GridHierarchy(cube, 3, "const", lmin=1)
    g = hier.grids[3]
    rng = np.random.default_rng(12)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    _, rep = solve(hier, f, stop="drop:1e-9")
    assert rep.residuals[-1] <= 1e-9 * rep.residuals[0]


def test_coarse_solve_iterative_path():
    # deep coarsest grid exceeds the dense cutoff and falls back to CG
    m = unit_square()
    hier = GridHierarchy(m, 6, "scaling", catalog("sin2d", m=2), lmin=5)
    assert hier.grids[5].n_interior > 500
    g = hier.grids[6]
    rng = np.random.default_rng(13)
    f = rng.normal(size=g.n_nodes)
    f[g.dirichlet_mask] = 0.0
    _, rep = solve(hier, f, stop="drop:1e-9")
    assert rep.residuals[-1] <= 1e-9 * rep.residuals[0]
