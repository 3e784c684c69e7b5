"""Sparse-assembly oracle: the independent route the stencil code is checked
against."""
import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from hhgscale.coefficients import catalog, sample_nodal
from hhgscale.mesh import PrimitiveKind, RefinedGrid, unit_cube_6, unit_square
from hhgscale.operators import Operator
from hhgscale.oracle import (assemble_global, extreme_eigenvalues, spd_check,
                             write_matrixmarket)


@pytest.fixture(scope="module")
def grid2():
    return RefinedGrid(unit_square(), 2)


@pytest.fixture(scope="module")
def grid3():
    return RefinedGrid(unit_cube_6(), 2)


def test_unit_laplacian_spectrum(grid2):
    # On the diagonal-split unit square the P1 stiffness matrix with k = 1
    # is the five-point stencil (the diagonal edges see right angles, so
    # their entries vanish); its eigenvalues are known in closed form.
    A = assemble_global(grid2, "const", 1.0, reduced=True)
    n = 2 ** grid2.level
    got = np.sort(np.linalg.eigvalsh(A.toarray()))
    c = np.cos(np.arange(1, n) * np.pi / n)
    want = np.sort((4.0 - 2.0 * (c[:, None] + c[None, :])).ravel())
    assert np.allclose(got, want, atol=1e-12)


def test_constant_field_collapses_variants(grid2):
    cval = 2.5
    kf = sample_nodal(lambda x: np.full(len(x), cval), grid2)
    A_const = assemble_global(grid2, "const", cval)
    for variant in ("scaling", "nodal", "scaling_ma2"):
        A = assemble_global(grid2, variant, kf)
        assert abs(A - A_const).max() == 0.0


@pytest.mark.parametrize("variant", ["scaling", "nodal"])
def test_assembly_matches_matrix_free(grid3, variant):
    kf = sample_nodal(catalog("cos3d", m=2), grid3)
    op = Operator(grid3, variant, kf)
    A = assemble_global(grid3, variant, kf)
    rng = np.random.default_rng(3)
    scale = abs(A).max()
    for _ in range(5):
        u = rng.normal(size=grid3.n_nodes)
        u[grid3.dirichlet_mask] = 0.0
        diff = A @ u - op.apply(u)
        assert np.abs(diff[~grid3.dirichlet_mask]).max() <= 1e-12 * scale


def test_reduced_is_interior_block(grid2):
    kf = sample_nodal(catalog("sin2d", m=2), grid2)
    A_full = assemble_global(grid2, "scaling", kf)
    A_red = assemble_global(grid2, "scaling", kf, reduced=True)
    ii = grid2.interior_ids
    assert abs(A_red - A_full[np.ix_(ii, ii)]).max() == 0.0


def test_full_matrix_has_identity_dirichlet_rows(grid2):
    kf = sample_nodal(catalog("sin2d", m=2), grid2)
    A = assemble_global(grid2, "scaling", kf).toarray()
    for i in np.nonzero(grid2.dirichlet_mask)[0][:5]:
        row = A[i].copy()
        assert row[i] == 1.0
        row[i] = 0.0
        assert not row.any()


def test_hybrid_all_nodal_equals_nodal(grid3):
    kf = sample_nodal(catalog("cos3d", m=2), grid3)
    allk = frozenset({PrimitiveKind.VERTEX, PrimitiveKind.EDGE,
                      PrimitiveKind.FACE, PrimitiveKind.VOLUME})
    A_h = assemble_global(grid3, "hybrid", kf, hybrid_nodal=allk)
    A_n = assemble_global(grid3, "nodal", kf)
    assert abs(A_h - A_n).max() == 0.0


def test_hybrid_empty_set_equals_scaling(grid3):
    kf = sample_nodal(catalog("cos3d", m=2), grid3)
    A_h = assemble_global(grid3, "hybrid", kf)
    A_s = assemble_global(grid3, "scaling", kf)
    assert abs(A_h - A_s).max() == 0.0


def test_midpoint_is_2d_only(grid3):
    with pytest.raises(ValueError, match="2D"):
        assemble_global(grid3, "midpoint", lambda x: np.ones(len(x)))


def test_extreme_eigenvalues_dense_path():
    rng = np.random.default_rng(11)
    M = rng.normal(size=(40, 40))
    A = sp.csr_matrix(M + M.T)
    lmin, lmax, ok = extreme_eigenvalues(A)
    w = np.linalg.eigvalsh(A.toarray())
    assert ok
    assert np.isclose(lmin, w[0], atol=1e-10)
    assert np.isclose(lmax, w[-1], atol=1e-10)


def test_extreme_eigenvalues_power_path():
    # diagonal matrix just past the dense cutoff with separated extremes
    rng = np.random.default_rng(5)
    d = rng.uniform(1.0, 2.0, size=3100)
    d[17] = 0.5
    d[2040] = 4.0
    A = sp.diags(d).tocsr()
    lmin, lmax, ok = extreme_eigenvalues(A, tol=1e-9)
    assert ok
    assert np.isclose(lmin, 0.5, rtol=1e-7)
    assert np.isclose(lmax, 4.0, rtol=1e-7)


def test_spd_check_witness_direction():
    A = sp.csr_matrix(np.diag([1.0, -0.5, 3.0]))
    ok, w = spd_check(A)
    assert not ok
    assert w @ (A @ w) < 0
    ok2, w2 = spd_check(sp.csr_matrix(np.diag([1.0, 0.5, 3.0])))
    assert ok2 and w2 is None


def test_matrixmarket_roundtrip(tmp_path, grid2):
    kf = sample_nodal(catalog("sin2d", m=2), grid2)
    A = assemble_global(grid2, "scaling", kf, reduced=True)
    path = tmp_path / "mat.mtx"
    write_matrixmarket(path, A)
    B = scipy.io.mmread(path).tocsr()
    assert abs(A - B).max() == 0.0
