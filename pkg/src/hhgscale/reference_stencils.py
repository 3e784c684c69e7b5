"""Element matrices, reference stencils, edge typing and local eigenvalues.

Everything in this module is a pure function of macro-element geometry.  The
local environment of an interior lattice node (24 tetrahedra in 3D, 6
triangles in 2D) is a fixed combinatorial object; per macro element only the
six (two in 2D) distinct element shapes need their stiffness matrices, the
rest follows from index tables.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .mesh import DIRS_2D, DIRS_3D, MacroMesh, RefinedGrid, lattice_elements

__all__ = [
    "Environment", "environment", "element_gradients", "element_stiffness",
    "element_mass", "environment_matrices", "reference_stencil",
    "mass_stencil", "classify_edge_types", "lambda_min", "detect_obtuse",
    "EDGE_GRAY", "EDGE_BLUE", "EDGE_GREEN", "EDGE_RED", "EDGE_PLAIN",
    "COLOR_NAMES",
]

EDGE_GRAY, EDGE_BLUE, EDGE_GREEN, EDGE_RED, EDGE_PLAIN = 0, 1, 2, 3, 4
COLOR_NAMES = {EDGE_GRAY: "gray", EDGE_BLUE: "blue", EDGE_GREEN: "green",
               EDGE_RED: "red", EDGE_PLAIN: "plain"}

# In 3D the interior edge of the macro-element sub-class (the direction not
# parallel to any macro edge) and the two candidate directions contributed by
# the octahedral sub-classes, as indices into DIRS_3D.
_GRAY_3D = 6        # (1, -1, 1)
_CAND_3D = (1, 4)   # (0, 1, 0) and (1, 0, -1)

# Canonical element order of the environment: each element as its sorted
# point-id tuple (0 = center node, 1 + j = neighbor in direction j).  The
# addition schedules below index elements in exactly this order.
_ELEMS_3D = (
    (0, 8, 11, 12), (0, 8, 12, 13), (0, 8, 11, 14), (0, 8, 10, 14),
    (0, 8, 9, 13), (0, 8, 9, 10), (0, 3, 11, 12), (0, 3, 12, 13),
    (0, 6, 11, 14), (0, 6, 10, 14), (0, 2, 3, 11), (0, 2, 6, 11),
    (0, 4, 9, 13), (0, 4, 9, 10), (0, 3, 7, 13), (0, 4, 7, 13),
    (0, 5, 6, 10), (0, 4, 5, 10), (0, 1, 2, 3), (0, 1, 3, 7),
    (0, 1, 2, 6), (0, 1, 5, 6), (0, 1, 4, 7), (0, 1, 4, 5),
)
_ELEMS_2D = (
    (0, 4, 6), (0, 4, 5), (0, 2, 6), (0, 3, 5), (0, 1, 2), (0, 1, 3),
)

# Addition schedules computing all element nodal sums of the environment with
# the minimal number of additions (40 in 3D, 9 in 2D).  Slots 0..ndirs hold
# the sampled coefficient at the center (slot 0) and at neighbor j (slot 1+j);
# each schedule row (dst, a, b) performs slots[dst] = slots[a] + slots[b].
# Found once by exhaustive search over pair-sharing decompositions; validated
# against direct summation in the tests.
_CSE_3D = (
    (15, 0, 1), (16, 0, 10), (17, 0, 11), (18, 0, 13), (19, 8, 12),
    (20, 8, 14), (21, 8, 9), (22, 3, 12), (23, 6, 14), (24, 2, 3),
    (25, 2, 6), (26, 4, 9), (27, 3, 7), (28, 4, 7), (29, 5, 6), (30, 4, 5),
    (31, 17, 19), (32, 18, 19), (33, 17, 20), (34, 16, 20), (35, 18, 21),
    (36, 16, 21), (37, 17, 22), (38, 18, 22), (39, 17, 23), (40, 16, 23),
    (41, 17, 24), (42, 17, 25), (43, 18, 26), (44, 16, 26), (45, 18, 27),
    (46, 18, 28), (47, 16, 29), (48, 16, 30), (49, 15, 24), (50, 15, 27),
    (51, 15, 25), (52, 15, 29), (53, 15, 28), (54, 15, 30),
)
_CSE_SUMS_3D = (31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44, 45,
                46, 47, 48, 49, 50, 51, 52, 53, 54)
_CSE_2D = (
    (7, 0, 1), (8, 0, 5), (9, 0, 6),
    (10, 9, 4), (11, 8, 4), (12, 9, 2), (13, 8, 3), (14, 7, 2), (15, 7, 3),
)
_CSE_SUMS_2D = (10, 11, 12, 13, 14, 15)


class Environment:
    """Combinatorics of the element patch around an interior lattice node."""

    def __init__(self, dim: int):
        self.dim = dim
        dirs = DIRS_2D if dim == 2 else DIRS_3D
        self.dirs = dirs
        self.ndirs = len(dirs)
        didx = {tuple(d): i for i, d in enumerate(dirs.tolist())}

        le = lattice_elements(dim, 2)
        node = np.ones(dim, dtype=np.int64)
        rel = le - node
        touch = (rel == 0).all(axis=2).any(axis=1)
        found = {}
        for t in rel[touch]:
            ids = sorted((0 if not any(v) else 1 + didx[tuple(v)], tuple(v))
                         for v in t.tolist())
            key = tuple(p for p, _ in ids)
            found[key] = np.array([v for _, v in ids], dtype=np.int64)

        order = _ELEMS_2D if dim == 2 else _ELEMS_3D
        if set(found) != set(order):
            raise AssertionError("environment does not match the frozen tables")
        self.nelems = len(order)
        self.elem_pts = np.array(order, dtype=np.int64)
        self.elem_offsets = np.stack([found[key] for key in order])

        # distinct shapes modulo translation (6 in 3D, 2 in 2D).  A shape is
        # keyed by its lexicographically sorted, origin-translated vertex
        # offsets; elem_perm maps each element's slot order into that
        # canonical order so one matrix per shape serves all its elements.
        shape_of = {}
        self.elem_shape = np.empty(self.nelems, dtype=np.int64)
        self.elem_perm = np.empty((self.nelems, dim + 1), dtype=np.int64)
        shape_offs = []
        for t in range(self.nelems):
            offs = self.elem_offsets[t]
            rows = sorted(range(dim + 1), key=lambda v: tuple(offs[v]))
            canon = offs[rows] - offs[rows[0]]
            key = tuple(map(tuple, canon.tolist()))
            if key not in shape_of:
                shape_of[key] = len(shape_offs)
                shape_offs.append(canon)
            self.elem_shape[t] = shape_of[key]
            for pos, v in enumerate(rows):
                self.elem_perm[t, v] = pos
        self.shape_offsets = np.array(shape_offs)
        self.nshapes = len(shape_offs)

        # accumulation terms per direction: stencil entry j collects
        # A_t[0, slot] over all (t, slot) with elem_pts[t, slot] == 1 + j
        ptr = [0]
        te, ts = [], []
        for j in range(self.ndirs):
            for t in range(self.nelems):
                for v in range(1, dim + 1):
                    if self.elem_pts[t, v] == 1 + j:
                        te.append(t)
                        ts.append(v)
            ptr.append(len(te))
        self.term_ptr = np.array(ptr, dtype=np.int64)
        self.term_elem = np.array(te, dtype=np.int64)
        self.term_slot = np.array(ts, dtype=np.int64)
        self.dir_valence = np.diff(self.term_ptr)

        if dim == 3:
            self.cse_schedule = np.array(_CSE_3D, dtype=np.int64)
            self.cse_sums = np.array(_CSE_SUMS_3D, dtype=np.int64)
        else:
            self.cse_schedule = np.array(_CSE_2D, dtype=np.int64)
            self.cse_sums = np.array(_CSE_SUMS_2D, dtype=np.int64)
        self.n_slots = int(self.cse_schedule[:, 0].max()) + 1
        self._check_schedule()

    def _check_schedule(self):
        rng = np.random.default_rng(12345)
        k = rng.normal(size=self.ndirs + 1)
        slots = np.zeros(self.n_slots)
        slots[:self.ndirs + 1] = k
        for dst, a, b in self.cse_schedule:
            slots[dst] = slots[a] + slots[b]
        want = k[self.elem_pts].sum(axis=1)
        if not np.allclose(slots[self.cse_sums], want):
            raise AssertionError("element-sum schedule is inconsistent")


@lru_cache(maxsize=None)
def environment(dim: int) -> Environment:
    return Environment(dim)


# ---------------------------------------------------------------------------
# element matrices
# ---------------------------------------------------------------------------

def element_gradients(verts):
    """Barycentric gradients and volumes for a batch of simplices.

    verts: (m, d+1, d).  Returns (grads (m, d+1, d), vol (m,)).
    """
    verts = np.asarray(verts, dtype=np.float64)
    squeeze = verts.ndim == 2
    if squeeze:
        verts = verts[None]
    m, dp1, d = verts.shape
    E = verts[:, 1:] - verts[:, :1]
    det = np.linalg.det(E)
    if np.any(det == 0.0):
        raise ValueError("degenerate simplex")
    Einv = np.linalg.inv(E)
    grads = np.empty((m, dp1, d))
    grads[:, 1:] = np.swapaxes(Einv, 1, 2)
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    fac = 2.0 if d == 2 else 6.0
    vol = np.abs(det) / fac
    if squeeze:
        return grads[0], vol[0]
    return grads, vol


def element_stiffness(verts, coeff=None):
    """Exact linear-FE stiffness matrices for a batch of simplices.

    coeff is None (Laplace), per-element scalars (m,) or tensors (m, d, d).
    Rows sum to zero exactly up to roundoff.
    """
    grads, vol = element_gradients(verts)
    squeeze = grads.ndim == 2
    if squeeze:
        grads, vol = grads[None], np.atleast_1d(vol)
    if coeff is None:
        A = np.einsum("mid,mjd->mij", grads, grads)
    else:
        coeff = np.asarray(coeff, dtype=np.float64)
        if coeff.ndim <= 1:
            A = np.einsum("m,mid,mjd->mij", np.atleast_1d(coeff), grads, grads)
        else:
            A = np.einsum("mid,mde,mje->mij", grads, coeff, grads)
    A *= vol[:, None, None]
    return A[0] if squeeze else A


def element_mass(verts):
    """Consistent linear-FE mass matrices: vol * (1 + delta_ij) / ((d+1)(d+2))."""
    verts = np.asarray(verts, dtype=np.float64)
    squeeze = verts.ndim == 2
    if squeeze:
        verts = verts[None]
    m, dp1, d = verts.shape
    _, vol = element_gradients(verts)
    base = (np.ones((dp1, dp1)) + np.eye(dp1)) / ((d + 1) * (d + 2))
    M = vol[:, None, None] * base
    return M[0] if squeeze else M


# ---------------------------------------------------------------------------
# reference stencils
# ---------------------------------------------------------------------------

def _edge_matrix(grid_or_mesh, t):
    if isinstance(grid_or_mesh, RefinedGrid):
        macro = grid_or_mesh.macro
    else:
        macro = grid_or_mesh
    V = macro.vertices[macro.elements[t]]
    return V[1:] - V[0]


def environment_matrices(E, level, matrix=element_stiffness, coeff=None):
    """Matrices of the d+1 environment element shapes, expanded per element.

    E is the macro element's edge matrix (rows x_i - x_0); fine elements at
    ``level`` have lattice offsets scaled by 2**-level through E.
    """
    d = E.shape[1]
    env = environment(d)
    n = 1 << level
    verts = (env.shape_offsets @ E) / n
    if coeff is None:
        shape_mats = matrix(verts)
    else:
        shape_mats = matrix(verts, coeff)
    p = env.elem_perm
    mats = shape_mats[env.elem_shape[:, None, None],
                      p[:, :, None], p[:, None, :]]
    return env, mats


def reference_stencil(grid_or_mesh, t: int, level=None):
    """Constant-coefficient interior stencil of macro element t.

    Returns (center, s) with s indexed by the lattice direction tables; the
    center equals minus the sum of the off-center entries.
    """
    if level is None:
        if not isinstance(grid_or_mesh, RefinedGrid):
            raise ValueError("level required when passing a macro mesh")
        level = grid_or_mesh.level
    E = _edge_matrix(grid_or_mesh, t)
    env, mats = environment_matrices(E, level)
    s = np.zeros(env.ndirs)
    for j in range(env.ndirs):
        lo, hi = env.term_ptr[j], env.term_ptr[j + 1]
        s[j] = mats[env.term_elem[lo:hi], 0, env.term_slot[lo:hi]].sum()
    center = mats[:, 0, 0].sum()
    return center, s


def mass_stencil(grid_or_mesh, t: int, level=None):
    """Interior stencil of the consistent mass matrix for macro element t."""
    if level is None:
        level = grid_or_mesh.level
    E = _edge_matrix(grid_or_mesh, t)
    env, mats = environment_matrices(E, level, matrix=element_mass)
    s = np.zeros(env.ndirs)
    for j in range(env.ndirs):
        lo, hi = env.term_ptr[j], env.term_ptr[j + 1]
        s[j] = mats[env.term_elem[lo:hi], 0, env.term_slot[lo:hi]].sum()
    center = mats[:, 0, 0].sum()
    return center, s


# ---------------------------------------------------------------------------
# edge typing
# ---------------------------------------------------------------------------

def classify_edge_types(grid_or_mesh, t: int, level=None):
    """Color table of the stencil directions of macro element t.

    3D: the direction not parallel to any macro edge is gray; of the two
    sub-class candidate directions the one with positive stencil sign is
    blue (if neither is positive the lower direction index is blue); the
    rest are red.  2D: directions with positive stencil entries are gray,
    the rest plain.  Colors come in mirror pairs.
    """
    center, s = reference_stencil(grid_or_mesh, t, level=level)
    dim = 2 if len(s) == 6 else 3
    half = len(s) // 2
    colors = np.empty(len(s), dtype=np.int64)
    # right angles produce analytically zero entries; the sign test must not
    # flip on rounding noise from rotated vertex coordinates
    tol = 1e-12 * np.abs(s).max()
    if dim == 2:
        colors[:] = EDGE_PLAIN
        colors[s > tol] = EDGE_GRAY
    else:
        colors[:] = EDGE_RED
        colors[_GRAY_3D] = EDGE_GRAY
        c1, c2 = _CAND_3D
        if s[c2] > tol and s[c1] <= tol:
            blue, green = c2, c1
        else:
            blue, green = c1, c2
        colors[blue] = EDGE_BLUE
        colors[green] = EDGE_GREEN
        colors[half:] = colors[:half]
    return colors, s, center


# ---------------------------------------------------------------------------
# local eigenvalue bound (2D)
# ---------------------------------------------------------------------------

_B_2D = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])
# orthonormal basis of the complement of the constant vector
_Q_2D = np.column_stack([
    np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0),
    np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0),
])


def _rotate_largest_angle_last(verts):
    """Cyclic renumbering placing the largest interior angle at local node 3."""
    verts = np.asarray(verts, dtype=np.float64)
    dots = []
    for i in range(3):
        u = verts[(i + 1) % 3] - verts[i]
        v = verts[(i + 2) % 3] - verts[i]
        dots.append((u @ v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    big = int(np.argmin(dots))  # smallest cosine = largest angle
    order = [(big + 1) % 3, (big + 2) % 3, big]
    return verts[order]


def lambda_min(verts):
    """Smallest non-degenerate eigenvalue of the local generalized problem.

    Solves A_T x = lambda B x with B = 3I - 11^T on the complement of the
    shared constant kernel (Q^T B Q = 3I, so a dense 2x2 solve suffices).
    Returns (lambda_min, a12) where a12 is the off-diagonal stiffness entry
    of the two vertices flanking the largest angle.
    """
    verts = _rotate_largest_angle_last(np.asarray(verts, dtype=np.float64))
    A = element_stiffness(verts)
    red = _Q_2D.T @ A @ _Q_2D / 3.0
    lam = np.linalg.eigvalsh(red)
    return float(lam[0]), float(A[0, 1])


# ---------------------------------------------------------------------------
# obtuse detection
# ---------------------------------------------------------------------------

def detect_obtuse(verts):
    """True where a simplex has an obtuse interior (2D) or dihedral (3D) angle.

    A positive off-diagonal Laplace stiffness entry is equivalent to the
    angle opposite that vertex pair exceeding pi/2, in both dimensions.
    """
    A = element_stiffness(verts)
    squeeze = A.ndim == 2
    if squeeze:
        A = A[None]
    dp1 = A.shape[1]
    iu = np.triu_indices(dp1, k=1)
    off = A[:, iu[0], iu[1]]
    scale = np.abs(A).max(axis=(1, 2))
    res = (off > 1e-12 * scale[:, None]).any(axis=1)
    return bool(res[0]) if squeeze else res


def mesh_obtuse_elements(macro: MacroMesh):
    """Boolean mask of macro elements with an obtuse (dihedral) angle."""
    return detect_obtuse(macro.vertices[macro.elements])
