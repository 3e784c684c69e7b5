"""Manufactured solutions, error norms, and convergence orders.

Each catalog case carries a closed-form solution, its gradient, the matching
right-hand side (derived symbolically once at construction), the coefficient
in the form the operators expect, and a default macro mesh.  Error norms
come in two flavours: a scaled nodal L2 norm for the structured 3D studies
and 5th-order quadrature L2/H1 norms for the 2D table.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .coefficients import catalog
from .mesh import (cylinder_shell_box, unit_cube_6, unit_cube_12,
                   unit_square_regular)
from .oracle import assemble_global

__all__ = [
    "ManufacturedCase", "cases", "divergence_residual", "weak_rhs",
    "NormRow", "error_norms", "eoc", "midpoint_variant_stencil",
    "dirichlet_system", "CSV_HEADER", "write_rows",
]


# ---------------------------------------------------------------------------
# simplex quadrature
# ---------------------------------------------------------------------------

def _tri_quad_5():
    s = math.sqrt(15.0)
    a1, w1 = (6.0 - s) / 21.0, (155.0 - s) / 1200.0
    a2, w2 = (6.0 + s) / 21.0, (155.0 + s) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        c = 1.0 - 2.0 * a
        pts += [(a, a, c), (a, c, a), (c, a, a)]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


def _tet_quad_5():
    s = math.sqrt(15.0)
    pts = [(0.25, 0.25, 0.25, 0.25)]
    wts = [16.0 / 135.0]
    for a, w in (((7.0 + s) / 34.0, (2665.0 - 14.0 * s) / 37800.0),
                 ((7.0 - s) / 34.0, (2665.0 + 14.0 * s) / 37800.0)):
        c = 1.0 - 3.0 * a
        pts += [(a, a, a, c), (a, a, c, a), (a, c, a, a), (c, a, a, a)]
        wts += [w] * 4
    b = (10.0 - 2.0 * s) / 40.0
    c = 0.5 - b
    pts += [(b, b, c, c), (b, c, b, c), (b, c, c, b),
            (c, b, b, c), (c, b, c, b), (c, c, b, b)]
    wts += [10.0 / 189.0] * 6
    return np.array(pts), np.array(wts)


def _tri_quad_2():
    # edge midpoints
    pts = np.array([(0.5, 0.5, 0.0), (0.5, 0.0, 0.5), (0.0, 0.5, 0.5)])
    return pts, np.full(3, 1.0 / 3.0)


def _tet_quad_2():
    s5 = math.sqrt(5.0)
    a, b = (5.0 + 3.0 * s5) / 20.0, (5.0 - s5) / 20.0
    pts = np.array([(a, b, b, b), (b, a, b, b), (b, b, a, b), (b, b, b, a)])
    return pts, np.full(4, 0.25)


QUAD5 = {2: _tri_quad_5(), 3: _tet_quad_5()}
QUAD2 = {2: _tri_quad_2(), 3: _tet_quad_2()}


def _volumes(V):
    """Simplex volumes from vertex coordinate stacks (n, d+1, d)."""
    E = V[:, 1:] - V[:, :1]
    d = V.shape[2]
    return np.abs(np.linalg.det(E)) / math.factorial(d)


# ---------------------------------------------------------------------------
# manufactured cases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form solution with matching coefficient and right-hand side."""

    name: str
    dim: int
    u: object
    grad: object
    f: object
    coeff: object
    tensor: bool
    mesh: object
    box: tuple
    params: dict


def _lam(syms, expr):
    fn = sp.lambdify(syms, expr, "numpy")

    def call(X):
        X = np.asarray(X, dtype=float)
        out = np.asarray(fn(*(X[:, i] for i in range(len(syms)))),
                         dtype=float)
        if out.ndim == 0:
            out = np.full(len(X), float(out))
        return out
    return call


def _lam_vec(syms, exprs):
    fns = [_lam(syms, e) for e in exprs]

    def call(X):
        return np.column_stack([f(X) for f in fns])
    return call


def _scalar_case(name, syms, u_expr, k_expr, coeff, mesh, box, params):
    grad_e = [sp.diff(u_expr, s) for s in syms]
    f_expr = -sum(sp.diff(k_expr * g, s) for g, s in zip(grad_e, syms))
    return ManufacturedCase(
        name=name, dim=len(syms), u=_lam(syms, u_expr),
        grad=_lam_vec(syms, grad_e), f=_lam(syms, f_expr), coeff=coeff,
        tensor=False, mesh=mesh, box=box, params=params)


def _tensor_case(name, syms, u_expr, K_expr, coeff, mesh, box, params):
    grad_e = [sp.diff(u_expr, s) for s in syms]
    d = len(syms)
    flux = [sum(K_expr[i, j] * grad_e[j] for j in range(d)) for i in range(d)]
    f_expr = -sum(sp.diff(flux[i], syms[i]) for i in range(d))
    return ManufacturedCase(
        name=name, dim=d, u=_lam(syms, u_expr), grad=_lam_vec(syms, grad_e),
        f=_lam(syms, f_expr), coeff=coeff, tensor=True, mesh=mesh, box=box,
        params=params)


def _poly2d(m=2):
    x, y = sp.symbols("x y")
    u = x ** 4 * y / (x * y + 1)
    k = 2 + sp.sin(m * sp.pi * x) * sp.sin(m * sp.pi * y)
    return _scalar_case(
        "poly2d", (x, y), u, k, catalog("sin2d", m=m),
        lambda: unit_square_regular(16),
        (np.zeros(2), np.ones(2)), {"m": m})


def _poly3d(m=3):
    x, y, z = sp.symbols("x y z")
    u = (x ** 3 * y + z ** 2) / (x * y * z + 1)
    k = sp.cos(m * sp.pi * x * y * z) + 2
    return _scalar_case(
        "poly3d", (x, y, z), u, k, catalog("cos3d", m=m), unit_cube_6,
        (np.zeros(3), np.ones(3)), {"m": m})


def _tensor3d():
    x, y, z = sp.symbols("x y z")
    u = (x ** 4 * y + 2 * z) / (x * y * z + 1)
    K = sp.Matrix([
        [x ** 2 + 2 * y ** 2 + 3 * z ** 2 + 1, -y ** 2, -z ** 2],
        [-y ** 2, 2 * x ** 2 + 3 * y ** 2 + z ** 2 + 1, -x ** 2],
        [-z ** 2, -x ** 2, 3 * x ** 2 + y ** 2 + 2 * z ** 2 + 1]])
    return _tensor_case(
        "tensor3d", (x, y, z), u, K, catalog("tensor3d_poly"), unit_cube_12,
        (np.zeros(3), np.ones(3)), {})


def _affine3d():
    x, y, z = sp.symbols("x y z")
    u = -7 * x + y + 3 * z
    k = 2 * x + 3 * y + 5 * z + 1

    def kfn(X):
        return 2 * X[:, 0] + 3 * X[:, 1] + 5 * X[:, 2] + 1.0

    return _scalar_case(
        "affine3d", (x, y, z), u, k, kfn, unit_cube_12,
        (np.zeros(3), np.ones(3)), {})


def _cylinder(z1=4.0, r1=0.8, r2=1.0):
    x, y, z = sp.symbols("x y z")
    w = sp.Rational(1, 5) * sp.sin(sp.pi * z / z1)
    wp = sp.diff(w, z)
    rho = x - w
    K = rho * (1 + z) * sp.Matrix([
        [wp ** 2 + 1, 0, wp],
        [0, 1 / rho ** 2, 0],
        [wp, 0, 1]])
    u = sp.sin((x - r1) / (r2 - r1) * sp.pi) * sp.cos(4 * y) * sp.exp(z / 2)
    _, K_ref = catalog("cylinder_blend", z1=z1, material=True)
    return _tensor_case(
        "cylinder", (x, y, z), u, K, K_ref,
        lambda: cylinder_shell_box(1, 6, 8, r1=r1, r2=r2, z1=z1),
        (np.array([r1, 0.0, 0.0]), np.array([r2, np.pi, z1])),
        {"z1": z1, "r1": r1, "r2": r2})


def cases(name, **params):
    """Manufactured-case catalog lookup by name."""
    builders = {
        "poly2d": _poly2d,
        "poly3d": _poly3d,
        "tensor3d": _tensor3d,
        "affine3d": _affine3d,
        "cylinder": _cylinder,
    }
    if name not in builders:
        raise KeyError(f"unknown case {name!r}; "
                       f"available: {sorted(builders)}")
    return builders[name](**params)


def divergence_residual(case, n=1000, seed=0, h=1e-3):
    """Scaled residual of f + div(K grad u) at random interior points.

    The divergence is formed by 4th-order central differences of the flux
    K grad u, with K taken from the numeric coefficient the operators use.
    A small value ties the symbolic right-hand side to that coefficient.
    """
    rng = np.random.default_rng(seed)
    lo, hi = case.box
    # keep the difference stencil strictly inside the box
    P = lo + (0.05 + 0.9 * rng.random((n, case.dim))) * (hi - lo)

    def flux(X):
        g = case.grad(X)
        if case.tensor:
            return np.einsum("kij,kj->ki", case.coeff(X), g)
        return np.asarray(case.coeff(X))[:, None] * g

    div = np.zeros(n)
    for i in range(case.dim):
        e = np.zeros(case.dim)
        e[i] = h
        div += (-flux(P + 2 * e)[:, i] + 8 * flux(P + e)[:, i]
                - 8 * flux(P - e)[:, i] + flux(P - 2 * e)[:, i]) / (12 * h)
    r = case.f(P) + div
    return float(np.abs(r).max() / max(1.0, np.abs(case.f(P)).max()))


# ---------------------------------------------------------------------------
# right-hand sides and error norms
# ---------------------------------------------------------------------------

def weak_rhs(case, grid, mode):
    """Nodal load vector for the case's right-hand side.

    mode 'quadrature2' integrates f against the hat functions with a
    2nd-order simplex rule; 'interpolate_mass' interpolates f and applies
    the consistent mass matrix.
    """
    if case.dim != grid.dim:
        raise ValueError("case and grid dimensions differ")
    d = grid.dim
    load = np.zeros(grid.n_nodes)
    if mode == "interpolate_mass":
        fv = case.f(grid.node_coords)
        for t in range(grid.macro.n_elements):
            ids = grid.fine_elements(t)
            vol = _volumes(grid.node_coords[ids])
            s = fv[ids].sum(axis=1)
            scale = vol / ((d + 1) * (d + 2))
            for j in range(d + 1):
                np.add.at(load, ids[:, j], scale * (s + fv[ids[:, j]]))
    elif mode == "quadrature2":
        bar, wts = QUAD2[d]
        for t in range(grid.macro.n_elements):
            ids = grid.fine_elements(t)
            V = grid.node_coords[ids]
            vol = _volumes(V)
            for q in range(len(wts)):
                xq = np.einsum("j,kjd->kd", bar[q], V)
                fq = case.f(xq)
                for j in range(d + 1):
                    np.add.at(load, ids[:, j],
                              vol * wts[q] * bar[q, j] * fq)
    else:
        raise ValueError(f"unknown weak rhs mode {mode!r}")
    return load


def dirichlet_system(case, grid, mode):
    """Load vector and initial guess carrying the exact boundary trace."""
    g = case.u(grid.node_coords)
    f = weak_rhs(case, grid, mode)
    f[grid.dirichlet_mask] = g[grid.dirichlet_mask]
    u0 = np.zeros(grid.n_nodes)
    u0[grid.dirichlet_mask] = g[grid.dirichlet_mask]
    return f, u0


@dataclass(frozen=True)
class NormRow:
    l2_discrete: float
    l2_quad: float | None
    h1: float | None


def error_norms(case, u_h, grid, quad=True):
    """Error norms of a discrete solution against the case's solution.

    The discrete L2 norm scales the nodal error vector by h^(d/2) over
    non-Dirichlet nodes.  With quad=True the L2 and H1-seminorm errors are
    also integrated elementwise with a 5th-order rule.
    """
    d = grid.dim
    e_nodes = u_h - case.u(grid.node_coords)
    mask = ~grid.dirichlet_mask
    h = grid.h_ref()
    l2d = float(np.sqrt(h ** d * np.sum(e_nodes[mask] ** 2)))
    if not quad:
        return NormRow(l2d, None, None)
    bar, wts = QUAD5[d]
    acc_l2 = 0.0
    acc_h1 = 0.0
    for t in range(grid.macro.n_elements):
        ids = grid.fine_elements(t)
        V = grid.node_coords[ids]
        E = V[:, 1:] - V[:, :1]
        vol = np.abs(np.linalg.det(E)) / math.factorial(d)
        Einv = np.linalg.inv(E)
        uv = u_h[ids]
        # piecewise gradient: columns of E^-1 are the hat gradients
        gu = np.einsum("kda,ka->kd", Einv, uv[:, 1:] - uv[:, :1])
        for q in range(len(wts)):
            xq = np.einsum("j,kjd->kd", bar[q], V)
            ev = uv @ bar[q] - case.u(xq)
            acc_l2 += wts[q] * float(vol @ ev ** 2)
            ge = gu - case.grad(xq)
            acc_h1 += wts[q] * float(vol @ np.sum(ge ** 2, axis=1))
    return NormRow(l2d, float(np.sqrt(acc_l2)), float(np.sqrt(acc_h1)))


def eoc(errors):
    """log2 error ratios between consecutive levels; nan where undefined."""
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("need errors from at least two levels")
    out = np.full(len(e) - 1, np.nan)
    ok = (e[:-1] > 0) & (e[1:] > 0)
    out[ok] = np.log2(e[:-1][ok] / e[1:][ok])
    return out


def midpoint_variant_stencil(grid, coeff_fn, node, neighbor):
    """Stiffness entry under one-point barycenter quadrature (2D only)."""
    if grid.dim != 2:
        raise ValueError("midpoint integration is 2D only")
    A = assemble_global(grid, "midpoint", coeff_fn)
    return float(A[node, neighbor])


# ---------------------------------------------------------------------------
# result tables
# ---------------------------------------------------------------------------

CSV_HEADER = ["case", "variant", "level", "dofs", "err_l2_discrete",
              "err_l2_quad", "err_h1", "eoc_l2", "eoc_h1", "rho", "iters",
              "tts_seconds", "flops_add", "flops_mul"]


def write_rows(path, rows, header=None):
    """Write result dicts to CSV in a fixed column order."""
    cols = CSV_HEADER if header is None else list(header)
    with open(path, "w", newline="") as fh:
        wtr = csv.DictWriter(fh, fieldnames=cols)
        wtr.writeheader()
        for row in rows:
            clean = {k: ("" if row.get(k) is None else row[k]) for k in cols}
            wtr.writerow(clean)
