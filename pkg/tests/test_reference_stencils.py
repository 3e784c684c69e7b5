"""Element matrices, reference stencils and edge typing.

The stencil values are cross-checked against an independent assembly oracle
that loops over all fine elements of a refined grid and builds local
matrices from scratch via a Vandermonde solve.
"""
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhgscale import mesh
from hhgscale import reference_stencils as rs


def oracle_local_stiffness(V):
    """Independent local stiffness: Vandermonde solve, 1-point quadrature."""
    d = V.shape[1]
    M = np.vstack([np.ones(d + 1), V.T])
    C = np.linalg.inv(M)
    G = C[:, 1:]
    vol = abs(np.linalg.det(M)) / (2.0 if d == 2 else 6.0)
    return vol * (G @ G.T)


def oracle_interior_row(macro, t, level, node):
    """Stencil at an interior lattice node by brute-force element loop."""
    conn = macro.elements[t]
    V = macro.vertices[conn]
    E = V[1:] - V[0]
    n = 2 ** level
    le = mesh.lattice_elements(macro.dim, level)
    rel = le - np.asarray(node)
    touch = (rel == 0).all(axis=2).any(axis=1)
    center = 0.0
    vals = {}
    for tet in rel[touch]:
        A = oracle_local_stiffness((tet @ E) / n + 0.0)
        ci = int(np.nonzero((tet == 0).all(axis=1))[0][0])
        center += A[ci, ci]
        for v in range(macro.dim + 1):
            if v == ci:
                continue
            key = tuple(tet[v].tolist())
            vals[key] = vals.get(key, 0.0) + A[ci, v]
    return center, vals


# -- element matrices -----------------------------------------------------------

def test_stiffness_unit_right_triangle():
    A = rs.element_stiffness(np.array([(0.0, 0), (1, 0), (0, 1)]))
    want = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(A, want, atol=1e-14)


def test_stiffness_equilateral_triangle():
    V = np.array([(0.0, 0), (1, 0), (0.5, np.sqrt(3) / 2)])
    A = rs.element_stiffness(V)
    B = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    assert np.allclose(A, B / (2 * np.sqrt(3)), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_stiffness_matches_oracle_and_annihilates_constants(seed):
    rng = np.random.default_rng(seed)
    d = 2 + seed % 2
    V = rng.normal(size=(d + 1, d))
    while abs(np.linalg.det(V[1:] - V[0])) < 1e-3:
        V = rng.normal(size=(d + 1, d))
    A = rs.element_stiffness(V)
    assert np.allclose(A, oracle_local_stiffness(V), atol=1e-11)
    assert np.allclose(A.sum(axis=1), 0.0, atol=1e-12)
    assert np.allclose(A, A.T)
    w = np.linalg.eigvalsh(A)
    assert w[0] > -1e-12
    assert np.sum(np.abs(w) < 1e-10) == 1


def test_stiffness_tensor_coefficient():
    rng = np.random.default_rng(3)
    V = rng.normal(size=(4, 3))
    K = np.eye(3) * 2.5
    A1 = rs.element_stiffness(V, np.array(2.5))
    A2 = rs.element_stiffness(V[None], K[None])[0]
    assert np.allclose(A1, A2, atol=1e-12)


def test_mass_matrix_integrates_to_volume():
    V = np.array([(0.0, 0, 0), (2, 0, 0), (0, 3, 0), (0, 0, 4)])
    M = rs.element_mass(V)
    vol = 2 * 3 * 4 / 6
    assert np.isclose(M.sum(), vol)
    assert np.allclose(M, M.T)
    # diagonal twice the off-diagonal
    assert np.isclose(M[0, 0], 2 * M[0, 1])


def test_degenerate_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        rs.element_stiffness(np.array([(0.0, 0), (1, 0), (2, 0)]))


# -- environment tables ----------------------------------------------------------

def test_environment_counts():
    e3 = rs.environment(3)
    assert e3.nelems == 24
    assert e3.nshapes == 6
    counts = Counter(e3.elem_shape.tolist())
    assert set(counts.values()) == {4}
    assert sorted(e3.dir_valence.tolist()) == [4] * 6 + [6] * 8
    assert e3.term_ptr[-1] == 72
    e2 = rs.environment(2)
    assert e2.nelems == 6
    assert e2.nshapes == 2
    assert (e2.dir_valence == 2).all()


def test_cse_schedule_lengths():
    assert len(rs.environment(3).cse_schedule) == 40
    assert len(rs.environment(2).cse_schedule) == 9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cse_schedule_computes_element_sums(seed):
    rng = np.random.default_rng(seed)
    for dim in (2, 3):
        env = rs.environment(dim)
        k = rng.normal(size=env.ndirs + 1)
        slots = np.zeros(env.n_slots)
        slots[:env.ndirs + 1] = k
        for dst, a, b in env.cse_schedule:
            slots[dst] = slots[a] + slots[b]
        want = k[env.elem_pts].sum(axis=1)
        assert np.allclose(slots[env.cse_sums], want, atol=1e-12)


# -- reference stencils ----------------------------------------------------------

def _dir_value(s, dirs, d):
    j = next(i for i, v in enumerate(dirs.tolist()) if tuple(v) == d)
    return s[j]


def test_stencil_unit_reference_tet_matches_figure():
    m = mesh.reference_simplex(3)
    center, s = rs.reference_stencil(m, 0, level=2)
    assert np.isclose(center, 5.0 / 3.0)
    assert np.isclose(s.sum() + center, 0.0, atol=1e-13)
    fmt = Counter(f"{v:+.1e}" for v in s)
    assert fmt == {"-3.3e-01": 4, "-1.7e-01": 2, "-8.3e-02": 4, "+8.3e-02": 4}
    D = mesh.DIRS_3D
    assert np.isclose(_dir_value(s, D, (1, -1, 1)), 1.0 / 12.0)   # gray
    assert np.isclose(_dir_value(s, D, (0, 1, 0)), -1.0 / 6.0)    # green
    assert np.isclose(_dir_value(s, D, (1, 0, -1)), 1.0 / 12.0)   # blue
    assert np.isclose(_dir_value(s, D, (1, 0, 0)), -1.0 / 3.0)
    assert np.isclose(_dir_value(s, D, (1, -1, 0)), -1.0 / 12.0)


def test_stencil_regular_tet_matches_figure():
    h = 1.0 / np.sqrt(2.0)
    V = np.array([(1, 0, -h), (-1, 0, -h), (0, 1, h), (0, -1, h)])
    m = mesh.MacroMesh(V, [(0, 1, 2, 3)])
    center, s = rs.reference_stencil(m, 0, level=2)
    assert f"{center:+.1e}" == "+2.4e+00"
    fmt = Counter(f"{v:+.1e}" for v in s)
    assert fmt == {"+1.2e-01": 2, "-5.9e-02": 4, "-2.9e-01": 8}
    assert np.isclose(s.sum() + center, 0.0, atol=1e-12)


@pytest.mark.parametrize("level", [2, 3, 4])
def test_stencil_equals_assembly_oracle_3d(level):
    rng = np.random.default_rng(42)
    V = rng.normal(size=(4, 3)) * 2.0
    m = mesh.MacroMesh(V, [(0, 1, 2, 3)])
    center, s = rs.reference_stencil(m, 0, level=level)
    node = (1, 1, 1)
    oc, ov = oracle_interior_row(m, 0, level, node)
    assert np.isclose(center, oc, rtol=1e-12)
    for j, d in enumerate(map(tuple, mesh.DIRS_3D.tolist())):
        assert np.isclose(s[j], ov[d], rtol=1e-11, atol=1e-14), d


def test_stencil_equals_assembly_oracle_2d():
    rng = np.random.default_rng(11)
    V = rng.normal(size=(3, 2))
    m = mesh.MacroMesh(V, [(0, 1, 2)])
    center, s = rs.reference_stencil(m, 0, level=3)
    oc, ov = oracle_interior_row(m, 0, 3, (2, 3))
    assert np.isclose(center, oc)
    for j, d in enumerate(map(tuple, mesh.DIRS_2D.tolist())):
        assert np.isclose(s[j], ov[d], rtol=1e-12, atol=1e-15)


def test_stencil_scale_law():
    m = mesh.reference_simplex(3)
    _, s2 = rs.reference_stencil(m, 0, level=2)
    _, s5 = rs.reference_stencil(m, 0, level=5)
    assert np.allclose(s5, s2 * 2.0 ** (2 - 5))
    m2 = mesh.reference_simplex(2)
    _, t3 = rs.reference_stencil(m2, 0, level=3)
    _, t6 = rs.reference_stencil(m2, 0, level=6)
    assert np.allclose(t3, t6)  # 2D stencils are scale invariant


def test_stencil_mirror_symmetry():
    rng = np.random.default_rng(5)
    V = rng.normal(size=(4, 3))
    m = mesh.MacroMesh(V, [(0, 1, 2, 3)])
    _, s = rs.reference_stencil(m, 0, level=2)
    assert np.allclose(s[:7], s[7:])


def test_mass_stencil_sums_to_patch_volume():
    m = mesh.reference_simplex(3)
    level = 3
    c, s = rs.mass_stencil(m, 0, level=level)
    # row sum of the mass matrix = integral of the hat function = |patch|/(d+1)
    vol_elem = (1.0 / 6.0) / 8 ** level
    assert np.isclose(c + s.sum(), 24 * vol_elem / 4)
    # center = 2 * vol/20 per element, neighbors vol/20 per shared element
    assert np.isclose(c, 24 * 2 * vol_elem / 20)
    env = rs.environment(3)
    assert np.allclose(s, env.dir_valence * vol_elem / 20)


# -- edge typing ----------------------------------------------------------------

def test_edge_colors_reference_tet():
    m = mesh.reference_simplex(3)
    colors, s, center = rs.classify_edge_types(m, 0, level=2)
    D = mesh.DIRS_3D.tolist()
    gray = [i for i, c in enumerate(colors) if c == rs.EDGE_GRAY]
    assert [tuple(D[i]) for i in gray] == [(1, -1, 1), (-1, 1, -1)]
    assert all(s[i] > 0 for i in gray)
    blue = [i for i, c in enumerate(colors) if c == rs.EDGE_BLUE]
    assert [tuple(D[i]) for i in blue] == [(1, 0, -1), (-1, 0, 1)]
    assert all(s[i] > 0 for i in blue)
    green = [i for i, c in enumerate(colors) if c == rs.EDGE_GREEN]
    assert all(s[i] < 0 for i in green)
    assert (colors == rs.EDGE_RED).sum() == 8


def test_edge_colors_regular_tet_all_red_nonpositive():
    h = 1.0 / np.sqrt(2.0)
    V = np.array([(1, 0, -h), (-1, 0, -h), (0, 1, h), (0, -1, h)])
    m = mesh.MacroMesh(V, [(0, 1, 2, 3)])
    colors, s, _ = rs.classify_edge_types(m, 0, level=2)
    assert all(s[i] <= 0 for i in range(14) if colors[i] == rs.EDGE_RED)
    # both candidates negative: tie rule picks the lower direction index
    assert colors[1] == rs.EDGE_BLUE and colors[4] == rs.EDGE_GREEN


def test_edge_colors_2d():
    m = mesh.MacroMesh([(0, 0), (1, 0), (0.5, np.sqrt(3) / 2)], [(0, 1, 2)])
    colors, s, _ = rs.classify_edge_types(m, 0, level=2)
    assert (colors == rs.EDGE_PLAIN).all()      # no obtuse angle
    assert (s <= 1e-14).all()
    ob = mesh.obtuse_square()
    colors, s, _ = rs.classify_edge_types(ob, 2, level=2)
    gray = colors == rs.EDGE_GRAY
    assert gray.sum() == 2                       # one mirror pair
    assert (s[gray] > 0).all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_edge_color_signs_consistent(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(4, 3))
    while abs(np.linalg.det(V[1:] - V[0])) < 1e-2:
        V = rng.normal(size=(4, 3))
    m = mesh.MacroMesh(V, [(0, 1, 2, 3)])
    colors, s, _ = rs.classify_edge_types(m, 0, level=2)
    if not rs.detect_obtuse(V):
        # without obtuse dihedrals: gray positive, candidates not both
        # positive, red entries non-positive
        assert s[6] > 0
        assert not (s[1] > 1e-13 and s[4] > 1e-13)
        assert all(s[i] <= 1e-13 for i in range(14)
                   if colors[i] == rs.EDGE_RED)
    # blue is the positive candidate when exactly one is positive
    if s[4] > 0 and s[1] <= 0:
        assert colors[4] == rs.EDGE_BLUE
    if s[1] > 0 and s[4] <= 0:
        assert colors[1] == rs.EDGE_BLUE
    # colors are mirror-symmetric
    assert np.array_equal(colors[:7], colors[7:])


# -- eigenvalue bound -------------------------------------------------------------

def test_lambda_min_equilateral():
    V = np.array([(0.0, 0), (1, 0), (0.5, np.sqrt(3) / 2)])
    lam, a12 = rs.lambda_min(V)
    assert np.isclose(lam, 1.0 / (2 * np.sqrt(3)))
    assert a12 <= 0


def test_lambda_min_right_isoceles_matches_dense_oracle():
    V = np.array([(0.0, 0), (1, 0), (0, 1)])
    lam, _ = rs.lambda_min(V)
    # oracle: full dense generalized eigensolve on the kernel complement
    import scipy.linalg as sla
    A = oracle_local_stiffness(V)
    B = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    w = sla.eigh(A, B + np.outer(np.ones(3), np.ones(3)))[0]
    # adding 11^T to B shifts only the kernel eigenvalue away from the rest
    w_clean = sorted(x for x in w if x > 1e-10)
    assert np.isclose(lam, w_clean[0], rtol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_lambda_min_positive_and_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(3, 2))
    while abs(np.linalg.det(V[1:] - V[0])) < 1e-2:
        V = rng.normal(size=(3, 2))
    lam, a12 = rs.lambda_min(V)
    assert lam > 0
    lam2, _ = rs.lambda_min(V * 7.5)
    assert np.isclose(lam, lam2, rtol=1e-10)
    # permuting vertices does not change the eigenvalue
    lam3, _ = rs.lambda_min(V[[2, 0, 1]])
    assert np.isclose(lam, lam3, rtol=1e-10)


def test_lambda_min_a12_positive_for_obtuse():
    ob = mesh.obtuse_square()
    for t in (1, 2):
        lam, a12 = rs.lambda_min(ob.vertices[ob.elements[t]])
        assert lam > 0
        assert a12 > 0


# -- obtuse detection --------------------------------------------------------------

def test_detect_obtuse_examples():
    assert not rs.detect_obtuse(
        np.array([(0.0, 0), (1, 0), (0.5, np.sqrt(3) / 2)]))
    assert rs.detect_obtuse(np.array([(0.0, 0), (4, 0), (3.5, 0.5)]))
    assert not rs.detect_obtuse(
        np.array([(0.0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]))
    flags = rs.mesh_obtuse_elements(mesh.obtuse_square())
    assert flags.tolist() == [False, True, True, False]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_detect_obtuse_matches_angle_oracle_2d(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(3, 2))
    while abs(np.linalg.det(V[1:] - V[0])) < 1e-2:
        V = rng.normal(size=(3, 2))
    got = rs.detect_obtuse(V)
    want = False
    for i in range(3):
        u = V[(i + 1) % 3] - V[i]
        w = V[(i + 2) % 3] - V[i]
        if u @ w < 0:
            want = True
    assert got == want
