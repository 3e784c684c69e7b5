"""Geometric multigrid V-cycles over the refinement hierarchy.

Coarse operators are re-discretizations: every level samples the coefficient
at its own nodes and builds its own stencils (no Galerkin products).  Grid
transfer uses linear interpolation for the nested P1 spaces; restriction is
its exact transpose with the residual forced to zero on Dirichlet rows.
"""
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .coefficients import TensorCoefficient, sample_nodal
from .mesh import DIRS_2D, DIRS_3D, RefinedGrid
from .operators import Operator

__all__ = ["GridHierarchy", "SolveReport", "prolongation_matrix", "vcycle",
           "solve"]


def prolongation_matrix(coarse: RefinedGrid, fine: RefinedGrid):
    """Sparse linear interpolation from coarse nodes to fine nodes.

    Fine nodes that coincide with coarse nodes copy them; the remaining
    nodes are midpoints of exactly one coarse lattice edge and average its
    endpoints.  The edge direction is recovered from the parity of the fine
    lattice coordinates.
    """
    if fine.macro is not coarse.macro:
        raise ValueError("levels must share one macro mesh")
    if fine.level != coarse.level + 1:
        raise ValueError("prolongation spans exactly one level")
    dim = fine.dim
    dirs = DIRS_2D if dim == 2 else DIRS_3D
    half = len(dirs) // 2
    by_parity = {tuple(np.int64(d) & 1): d for d in dirs[:half]}

    C = fine.lat.coords
    parity = (C & 1).astype(np.int64)
    pcode = parity @ (1 << np.arange(dim, dtype=np.int64))
    even = pcode == 0

    rows, cols, vals = [], [], []
    seen = np.zeros(fine.n_nodes, dtype=bool)
    for t in range(fine.macro.n_elements):
        gf = fine.elem_gidx[t]
        gc = coarse.elem_gidx[t]
        r = gf[even]
        new = ~seen[r]
        rows.append(r[new])
        cols.append(gc[coarse.lat.index(C[even][new] // 2)])
        vals.append(np.ones(new.sum()))
        seen[r[new]] = True
        for p, d in by_parity.items():
            m = pcode == (np.asarray(p, dtype=np.int64)
                          @ (1 << np.arange(dim, dtype=np.int64)))
            r = gf[m]
            new = ~seen[r]
            if not new.any():
                continue
            Cm = C[m][new]
            lo = (Cm - d) // 2
            hi = (Cm + d) // 2
            if lo.min() < 0 or hi.min() < 0:
                raise AssertionError("midpoint parent left the lattice")
            r = r[new]
            for par in (lo, hi):
                rows.append(r)
                cols.append(gc[coarse.lat.index(par)])
                vals.append(np.full(len(r), 0.5))
            seen[r] = True
    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_nodes, coarse.n_nodes)).tocsr()
    return P


@dataclass
class SolveReport:
    residuals: list
    iterations: int
    rho: float | None
    wall_time: float
    flops_add: int
    flops_mul: int
    diverged: bool = False
    extra: dict = field(default_factory=dict)


class GridHierarchy:
    """Grids and operators for levels lmin..lmax over one macro mesh.

    coeff is None or a number (constant coefficient), a scalar field
    callable, or, with tensor=True, a tensor field callable; fields are
    re-sampled on every level.  The hybrid I-set applies on every level.
    """

    def __init__(self, macro, lmax, variant, coeff=None, lmin=0,
                 hybrid_nodal=frozenset(), tensor=False, omega=1.0,
                 coarse_tol=1e-12):
        if lmax < lmin:
            raise ValueError("lmax must be >= lmin")
        self.lmin, self.lmax = lmin, lmax
        self.variant = variant
        self.omega = omega
        self.coarse_tol = coarse_tol
        self.grids, self.ops, self.P = {}, {}, {}
        self._coarse_lu = None
        for lvl in range(lmin, lmax + 1):
            grid = RefinedGrid(macro, lvl)
            if variant == "const":
                op = Operator(grid, "const", coeff)
            elif coeff is None:
                raise ValueError(f"variant {variant!r} needs a coefficient")
            elif tensor:
                op = Operator(grid, variant, TensorCoefficient(grid, coeff),
                              hybrid_nodal=hybrid_nodal)
            else:
                fn = coeff if callable(coeff) else \
                    (lambda x, c=float(coeff): np.full(len(x), c))
                op = Operator(grid, variant, sample_nodal(fn, grid),
                              hybrid_nodal=hybrid_nodal)
            self.grids[lvl] = grid
            self.ops[lvl] = op
            if lvl > lmin:
                self.P[lvl] = prolongation_matrix(self.grids[lvl - 1], grid)

    def prolongate(self, lvl, u_coarse):
        """Interpolate a level lvl-1 function to level lvl."""
        return self.P[lvl] @ u_coarse

    def restrict(self, lvl, r_fine):
        """Transpose-of-P restriction of a level lvl residual to lvl-1."""
        r = self.P[lvl].T @ r_fine
        r[self.grids[lvl - 1].dirichlet_mask] = 0.0
        return r

    def flops(self):
        add = sum(op.flops_add for op in self.ops.values())
        mul = sum(op.flops_mul for op in self.ops.values())
        return add, mul

    # -- coarsest level ----------------------------------------------------

    def coarse_solve(self, f):
        """Solve the lmin problem with zero Dirichlet data."""
        op = self.ops[self.lmin]
        grid = self.grids[self.lmin]
        ii = grid.interior_ids
        u = np.zeros(grid.n_nodes)
        if len(ii) == 0:
            return u
        if len(ii) <= 500:
            if self._coarse_lu is None:
                A = np.empty((len(ii), len(ii)))
                e = np.zeros(grid.n_nodes)
                for j, i in enumerate(ii):
                    e[i] = 1.0
                    A[:, j] = op.apply(e)[ii]
                    e[i] = 0.0
                self._coarse_lu = scipy.linalg.lu_factor(A)
            u[ii] = scipy.linalg.lu_solve(self._coarse_lu, f[ii])
            return u
        u[ii] = self._cg(op, ii, f[ii])
        return u

    def _cg(self, op, ii, b):
        grid = op.grid
        buf = np.zeros(grid.n_nodes)

        def matvec(x):
            buf[ii] = x
            return op.apply(buf)[ii]

        x = np.zeros_like(b)
        r = b.copy()
        p = r.copy()
        rs = float(r @ r)
        b0 = np.sqrt(rs)
        if b0 == 0.0:
            return x
        for _ in range(20 * len(b) + 10):
            Ap = matvec(p)
            alpha = rs / float(p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            rs_new = float(r @ r)
            if np.sqrt(rs_new) <= self.coarse_tol * b0:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        return x


def vcycle(hier: GridHierarchy, u, f, level=None, pre=3, post=3):
    """One V(pre, post) cycle; updates u in place and returns it."""
    lvl = hier.lmax if level is None else level
    op = hier.ops[lvl]
    if lvl == hier.lmin:
        grid = hier.grids[lvl]
        sol = hier.coarse_solve(f)
        sol[grid.dirichlet_mask] = u[grid.dirichlet_mask]
        u[:] = sol
        return u
    op.smooth(u, f, sweeps=pre, omega=hier.omega)
    r = op.residual(u, f)
    rc = hier.restrict(lvl, r)
    ec = np.zeros(hier.grids[lvl - 1].n_nodes)
    vcycle(hier, ec, rc, lvl - 1, pre, post)
    u += hier.P[lvl] @ ec
    op.smooth(u, f, sweeps=post, omega=hier.omega)
    return u


def _parse_stop(stop):
    kind, _, val = str(stop).partition(":")
    if kind == "iters":
        return "iters", int(val)
    if kind == "drop":
        return "drop", float(val)
    raise ValueError(f"stop must be 'iters:N' or 'drop:F', got {stop!r}")


def solve(hier: GridHierarchy, f, u0=None, stop="iters:10", pre=3, post=3,
          max_cycles=100):
    """Repeated V-cycles with residual tracking.

    Aborts (diverged report) after residual growth over three consecutive
    cycles.  rho follows the (r_i*/r_5)^(1/(i*-5)) convention and is None
    for runs shorter than six cycles.
    """
    op = hier.ops[hier.lmax]
    grid = hier.grids[hier.lmax]
    f = np.asarray(f, dtype=np.float64)
    u = np.zeros(grid.n_nodes) if u0 is None else \
        np.array(u0, dtype=np.float64, copy=True)
    mode, val = _parse_stop(stop)
    hscale = 2.0 ** (-hier.lmax * grid.dim / 2.0)

    a0, m0 = hier.flops()
    t0 = time.perf_counter()
    res = [hscale * float(np.linalg.norm(op.residual(u, f)))]
    target = val * res[0] if mode == "drop" else None
    floor = 1e-15 * max(hscale * float(np.linalg.norm(f)), 1e-300)
    n_cycles = val if mode == "iters" else max_cycles
    grow = 0
    diverged = False
    if res[0] > floor:
        for _ in range(n_cycles):
            vcycle(hier, u, f, pre=pre, post=post)
            res.append(hscale * float(np.linalg.norm(op.residual(u, f))))
            grow = grow + 1 if res[-1] > res[-2] else 0
            if grow >= 3:
                diverged = True
                break
            if mode == "drop" and res[-1] <= target:
                break
            if res[-1] <= floor:
                break
    wall = time.perf_counter() - t0
    a1, m1 = hier.flops()
    i_star = len(res) - 1
    rho = None
    if i_star > 5 and res[5] > 0:
        rho = float((res[i_star] / res[5]) ** (1.0 / (i_star - 5)))
    return u, SolveReport(residuals=res, iterations=i_star, rho=rho,
                          wall_time=wall, flops_add=a1 - a0,
                          flops_mul=m1 - m0, diverged=diverged)
