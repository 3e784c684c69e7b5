"""Coefficient data on refined grids.

Scalar coefficients are sampled once per global node and stored per macro
element in lattice layout, the layout the stencil kernels consume.  Copies of
a node shared by several macro elements are gathered from the same global
value, so they are bitwise identical whenever the coefficient function is
continuous.  Tensor coefficients are split into M scalar component fields
paired with first-order operators; blending maps induce their tensor through
the Jacobian formula.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .mesh import DIRS_2D, DIRS_3D, RefinedGrid

__all__ = [
    "CoefficientField", "TensorCoefficient", "BlendingMap",
    "sample_nodal", "kmin_field", "tensor_decompose_2d", "tensor_decompose_3d",
    "TENSOR_DIRS_2D", "TENSOR_DIRS_3D",
    "sin2d", "sigmoid2d", "cos3d", "tensor3d_poly", "cylinder_blend",
    "catalog",
]

# first-order operators of the M-term splitting; entry 0 is the full gradient,
# the rest are directional derivatives
TENSOR_DIRS_2D = (None, (1.0, 1.0), (0.0, 1.0))
TENSOR_DIRS_3D = (None, (1.0, 1.0, 0.0), (1.0, 0.0, 1.0), (0.0, 1.0, 1.0),
                  (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class CoefficientField:
    """Nodal samples of a scalar function, one row per macro element."""

    def __init__(self, grid: RefinedGrid, values: np.ndarray):
        self.grid = grid
        self.values = values
        values.setflags(write=False)

    def resample(self, fn, require_positive=True):
        """Fresh field from a new function on the same grid (nonlinear hook)."""
        return sample_nodal(fn, self.grid, require_positive=require_positive)


def sample_nodal(fn, grid: RefinedGrid, require_positive=True) -> CoefficientField:
    """Sample fn once per global node and store per macro element.

    fn maps an (N, d) coordinate array to N values.
    """
    vals = np.asarray(fn(grid.node_coords), dtype=np.float64)
    if vals.shape != (grid.n_nodes,):
        raise ValueError("coefficient function must return one value per node")
    if require_positive and np.any(vals <= 0.0):
        i = int(np.argmin(vals))
        raise ValueError(
            f"non-positive coefficient {vals[i]:.6g} at node {i}, "
            f"x = {grid.node_coords[i]}")
    return CoefficientField(grid, vals[grid.elem_gidx])


@lru_cache(maxsize=8)
def _lattice_neighbor_table(dim: int, n: int):
    """Flat lattice index of each node's neighbor per direction, -1 outside."""
    from .mesh import SimplexLattice
    lat = SimplexLattice(dim, n)
    dirs = DIRS_2D if dim == 2 else DIRS_3D
    tbl = np.full((len(dirs), lat.size), -1, dtype=np.int64)
    for j, d in enumerate(dirs):
        q = lat.coords + d
        valid = (q >= 0).all(axis=1) & (q.sum(axis=1) <= n)
        tbl[j, valid] = lat.index(q[valid])
    tbl.setflags(write=False)
    return tbl


def kmin_field(field: CoefficientField) -> CoefficientField:
    """Per-node minimum of the field over its closed patch within each T.

    The minimum runs over the node itself and its lattice neighbors inside
    the closure of the macro element, so values on macro boundaries are
    one-sided by construction.
    """
    grid = field.grid
    tbl = _lattice_neighbor_table(grid.dim, grid.n)
    vals = field.values
    out = vals.copy()
    for j in range(tbl.shape[0]):
        m = tbl[j] >= 0
        out[:, m] = np.minimum(out[:, m], vals[:, tbl[j][m]])
    return CoefficientField(grid, out)


# ---------------------------------------------------------------------------
# tensor coefficients
# ---------------------------------------------------------------------------

def tensor_decompose_2d(Kfn):
    """Split a symmetric 2x2 tensor function into 3 scalar components.

    With D_1 = grad, D_2 = d/dx + d/dy, D_3 = d/dy the identity
    sum_m k_m (D_m v)(D_m w) = grad(v) . K grad(w) holds for
    k_1 = K_11 - K_12, k_2 = K_12, k_3 = K_22 - K_11.
    """
    def k1(p):
        K = Kfn(p)
        return K[:, 0, 0] - K[:, 0, 1]

    def k2(p):
        return Kfn(p)[:, 0, 1]

    def k3(p):
        K = Kfn(p)
        return K[:, 1, 1] - K[:, 0, 0]

    return [k1, k2, k3]


def tensor_decompose_3d(Kfn):
    """Split a symmetric 3x3 tensor function into 6 scalar components.

    Mirrors the 2D construction: the gradient carries the first diagonal
    remainder, each off-diagonal K_pq rides on (d_p + d_q), and d/dy, d/dz
    absorb the remaining diagonal differences:
      k_1 = K_xx - K_xy - K_xz          (on grad)
      k_2 = K_xy   k_3 = K_xz   k_4 = K_yz
      k_5 = K_yy - K_xx + K_xz - K_yz   (on d/dy)
      k_6 = K_zz - K_xx + K_xy - K_yz   (on d/dz)
    """
    def comp(i, j):
        return lambda p: Kfn(p)[:, i, j]

    def k1(p):
        K = Kfn(p)
        return K[:, 0, 0] - K[:, 0, 1] - K[:, 0, 2]

    def k5(p):
        K = Kfn(p)
        return K[:, 1, 1] - K[:, 0, 0] + K[:, 0, 2] - K[:, 1, 2]

    def k6(p):
        K = Kfn(p)
        return K[:, 2, 2] - K[:, 0, 0] + K[:, 0, 1] - K[:, 1, 2]

    return [k1, comp(0, 1), comp(0, 2), comp(1, 2), k5, k6]


class TensorCoefficient:
    """M scalar component fields plus their first-order operators."""

    def __init__(self, grid: RefinedGrid, Kfn, check_spd=True):
        self.grid = grid
        self.Kfn = Kfn
        if grid.dim == 2:
            comps = tensor_decompose_2d(Kfn)
            self.dirs = TENSOR_DIRS_2D
        else:
            comps = tensor_decompose_3d(Kfn)
            self.dirs = TENSOR_DIRS_3D
        self.fields = [sample_nodal(c, grid, require_positive=False)
                       for c in comps]
        if check_spd:
            self.check_spd(grid.node_coords)

    @property
    def M(self):
        return len(self.fields)

    def reconstruct(self, points):
        """Tensor rebuilt from the component functions, K = k1 I + sum k_m c c^T."""
        points = np.asarray(points, dtype=np.float64)
        d = points.shape[1]
        if d == 2:
            comps = tensor_decompose_2d(self.Kfn)
        else:
            comps = tensor_decompose_3d(self.Kfn)
        K = np.zeros((len(points), d, d))
        k1 = np.asarray(comps[0](points))
        K += k1[:, None, None] * np.eye(d)
        for m in range(1, len(comps)):
            c = np.asarray(self.dirs[m])
            km = np.asarray(comps[m](points))
            K += km[:, None, None] * np.outer(c, c)
        return K

    def check_spd(self, points):
        """Verify the sampled tensor is symmetric positive definite (minors)."""
        K = np.asarray(self.Kfn(points), dtype=np.float64)
        if not np.allclose(K, np.swapaxes(K, 1, 2), atol=1e-12):
            raise ValueError("tensor coefficient is not symmetric")
        d = K.shape[1]
        ok = K[:, 0, 0] > 0
        det2 = K[:, 0, 0] * K[:, 1, 1] - K[:, 0, 1] * K[:, 1, 0]
        ok &= det2 > 0
        if d == 3:
            ok &= np.linalg.det(K) > 0
        if not ok.all():
            i = int(np.argmin(ok))
            raise ValueError(f"tensor not positive definite at point {points[i]}")


# ---------------------------------------------------------------------------
# blending maps
# ---------------------------------------------------------------------------

class BlendingMap:
    """Map from the physical to the reference domain with analytic Jacobian."""

    def __init__(self, phi, jacobian, inverse=None):
        self.phi = phi
        self.jacobian = jacobian
        self.inverse = inverse

    def tensor(self, points):
        """Induced tensor (D phi)(D phi)^T / |det D phi| at physical points."""
        J = np.asarray(self.jacobian(np.asarray(points, dtype=np.float64)))
        det = np.linalg.det(J)
        if np.any(det == 0.0):
            raise ValueError("singular blending Jacobian")
        K = np.einsum("nij,nkj->nik", J, J) / np.abs(det)[:, None, None]
        return K


# ---------------------------------------------------------------------------
# built-in catalog
# ---------------------------------------------------------------------------

def sin2d(m):
    """k(x, y) = 2 + sin(m pi x) sin(m pi y)."""
    def k(p):
        return 2.0 + np.sin(m * np.pi * p[:, 0]) * np.sin(m * np.pi * p[:, 1])
    return k


def sigmoid2d(m, eta):
    """k(x, y) = eta / (1 + exp(-m (y - x - 0.2))) + 1."""
    def k(p):
        return eta / (1.0 + np.exp(-m * (p[:, 1] - p[:, 0] - 0.2))) + 1.0
    return k


def cos3d(m):
    """k(x, y, z) = cos(m pi x y z) + 2."""
    def k(p):
        return np.cos(m * np.pi * p[:, 0] * p[:, 1] * p[:, 2]) + 2.0
    return k


def tensor3d_poly():
    """Symmetric positive definite polynomial tensor on the unit cube."""
    def K(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        one = np.ones_like(x)
        K = np.empty((len(p), 3, 3))
        K[:, 0, 0] = x ** 2 + 2 * y ** 2 + 3 * z ** 2 + one
        K[:, 1, 1] = 2 * x ** 2 + 3 * y ** 2 + z ** 2 + one
        K[:, 2, 2] = 3 * x ** 2 + y ** 2 + 2 * z ** 2 + one
        K[:, 0, 1] = K[:, 1, 0] = -(y ** 2)
        K[:, 0, 2] = K[:, 2, 0] = -(z ** 2)
        K[:, 1, 2] = K[:, 2, 1] = -(x ** 2)
        return K
    return K


def _cyl_w(z, z1=4.0):
    return 0.2 * np.sin(z * np.pi / z1)


def _cyl_wp(z, z1=4.0):
    return 0.2 * np.pi / z1 * np.cos(z * np.pi / z1)


def cylinder_blend(z1=4.0, material=True):
    """Half-cylinder mantle blending: map, and the tensor on the reference box.

    The physical shell (radius between r1 and r2, angle in (0, pi), height
    z1, warped inward by w(z)) maps to the reference box via
    phi(x, y, z) = (sqrt(x^2+y^2) + w(z), arccos(x / sqrt(x^2+y^2)), z).
    On the reference box the induced tensor evaluates in closed form with
    radius rho = x - w(z); the variable material a = 1 + z multiplies it.
    """
    def phi(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        rho = np.hypot(x, y)
        return np.column_stack([rho + _cyl_w(z, z1), np.arccos(x / rho), z])

    def jac(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        rho = np.hypot(x, y)
        J = np.zeros((len(p), 3, 3))
        J[:, 0, 0] = x / rho
        J[:, 0, 1] = y / rho
        J[:, 0, 2] = _cyl_wp(z, z1)
        J[:, 1, 0] = -y / rho ** 2
        J[:, 1, 1] = x / rho ** 2
        J[:, 2, 2] = 1.0
        return J

    def inverse(ref):
        xh, yh, zh = ref[:, 0], ref[:, 1], ref[:, 2]
        rho = xh - _cyl_w(zh, z1)
        return np.column_stack([rho * np.cos(yh), rho * np.sin(yh), zh])

    bmap = BlendingMap(phi, jac, inverse=inverse)

    def K_ref(p):
        xh, zh = p[:, 0], p[:, 2]
        rho = xh - _cyl_w(zh, z1)
        wp = _cyl_wp(zh, z1)
        K = np.zeros((len(p), 3, 3))
        K[:, 0, 0] = wp ** 2 + 1.0
        K[:, 0, 2] = K[:, 2, 0] = wp
        K[:, 1, 1] = 1.0 / rho ** 2
        K[:, 2, 2] = 1.0
        K *= rho[:, None, None]
        if material:
            K *= (1.0 + zh)[:, None, None]
        return K

    return bmap, K_ref


def catalog(name, **params):
    """Coefficient catalog lookup by name."""
    entries = {
        "sin2d": lambda m=2: sin2d(m),
        "sigmoid2d": lambda m=50, eta=100.0: sigmoid2d(m, eta),
        "cos3d": lambda m=3: cos3d(m),
        "tensor3d_poly": lambda: tensor3d_poly(),
        "cylinder_blend": lambda z1=4.0, material=True:
            cylinder_blend(z1, material),
    }
    if name not in entries:
        raise KeyError(f"unknown coefficient {name!r}; "
                       f"available: {sorted(entries)}")
    return entries[name](**params)
