"""Matrix-free operator variants on a refined grid.

A variant is applied in three pieces: volume-interior rows go through the
stencil kernels (one pass per macro element, output written into the
contiguous volume block of the result), rows owned by surface primitives
(macro vertices, edges, faces) come from a pre-assembled sparse matrix built
element-wise from the shell elements, and Dirichlet rows act as the identity.
The hybrid variant mixes the two bilinear forms by row: surface primitive
classes listed in `hybrid_nodal` take their rows from the nodal-integration
form, everything else from the scaling form.
"""
from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import kernels as kn
from .coefficients import (CoefficientField, TensorCoefficient, kmin_field)
from .mesh import (DIRS_2D, DIRS_3D, LOCAL_EDGES_2D, LOCAL_EDGES_3D,
                   PrimitiveKind, RefinedGrid, SimplexLattice,
                   lattice_elements)
from .reference_stencils import (EDGE_GRAY, classify_edge_types,
                                 element_stiffness, environment,
                                 environment_matrices, lambda_min,
                                 reference_stencil)

__all__ = ["Operator", "VARIANTS", "ma2_marks", "parse_hybrid_set"]

VARIANTS = ("const", "nodal", "scaling", "scaling_ma2", "hybrid", "stored")

_KIND_NAMES = {"wv": PrimitiveKind.VERTEX, "we": PrimitiveKind.EDGE,
               "wf": PrimitiveKind.FACE}


def parse_hybrid_set(spec: str):
    """Parse a row-set spec like 'wv+we' or 'w' into primitive kinds."""
    s = spec.strip().lower()
    if s in ("w", "all"):
        return frozenset(_KIND_NAMES.values())
    if not s:
        return frozenset()
    kinds = set()
    for tok in s.replace(",", "+").split("+"):
        if tok not in _KIND_NAMES:
            raise ValueError(f"unknown primitive class {tok!r} in {spec!r}")
        kinds.add(_KIND_NAMES[tok])
    return frozenset(kinds)


@lru_cache(maxsize=32)
def _vol_pos(dim: int, n: int):
    """Lattice flat indices of volume-interior nodes, in volume order."""
    if n - (dim + 1) < 0:
        return np.empty(0, dtype=np.int64)
    lat = SimplexLattice(dim, n)
    inner = SimplexLattice(dim, n - (dim + 1))
    pos = lat.index(inner.coords + 1)
    pos.setflags(write=False)
    return pos


@lru_cache(maxsize=32)
def _shell_edge_tables(dim: int, level: int):
    """Per shell element: lattice flat vertex ids and edge direction pair ids."""
    lat = SimplexLattice(dim, 1 << level)
    le = lattice_elements(dim, level, shell_only=True)
    lidx = lat.index(le)
    edges = LOCAL_EDGES_2D if dim == 2 else LOCAL_EDGES_3D
    dirs = np.asarray(DIRS_2D if dim == 2 else DIRS_3D)
    half = len(dirs) // 2
    pair = np.full((len(le), len(edges)), -1, dtype=np.int8)
    for ei, (a, b) in enumerate(edges):
        off = le[:, b] - le[:, a]
        for di in range(half):
            hit = np.all(off == dirs[di], axis=1) | \
                np.all(off == -dirs[di], axis=1)
            pair[hit, ei] = di
    if (pair < 0).any():
        raise AssertionError("shell edge not aligned with a lattice direction")
    lidx.setflags(write=False)
    pair.setflags(write=False)
    return lidx, pair


def ma2_marks(grid: RefinedGrid, field: CoefficientField):
    """Per-macro-element safeguard decision for the 2D scaling variant.

    An obtuse macro element is marked when any lattice edge along its gray
    direction satisfies the pre-asymptotic criterion
    (k_e - m_e) a12 > m_e lambda_min, where m_e is the mean of the nodal
    k_min safeguard field over the edge.  Marked elements then use the
    k_min mean as the factor on every gray edge.

    Returns (marked bool array, gray direction pair index or -1, kmin field).
    """
    if grid.dim != 2:
        raise ValueError("the safeguard marking is defined in 2D")
    km = kmin_field(field)
    ne = grid.macro.n_elements
    marked = np.zeros(ne, dtype=bool)
    gray_pair = np.full(ne, -1, dtype=np.int64)
    lat = grid.lat
    dirs = np.asarray(DIRS_2D)
    for t in range(ne):
        colors, s, _ = classify_edge_types(grid, t)
        gray = np.nonzero(colors[:3] == EDGE_GRAY)[0]
        if len(gray) == 0:
            continue
        g = int(gray[0])
        gray_pair[t] = g
        verts = grid.macro.vertices[grid.macro.elements[t]]
        lam, _ = lambda_min(verts)
        a12 = s[g] / 2.0
        # every lattice edge along the gray direction, once
        p = lat.coords
        q = p + dirs[g]
        ok = (q >= 0).all(axis=1) & (q.sum(axis=1) <= grid.n)
        pi = lat.index(p[ok])
        qi = lat.index(q[ok])
        kv = field.values[t]
        kmv = km.values[t]
        k_e = 0.5 * (kv[pi] + kv[qi])
        m_e = 0.5 * (kmv[pi] + kmv[qi])
        if np.any((k_e - m_e) * a12 > m_e * lam):
            marked[t] = True
    return marked, gray_pair, km


def _hadamard_rows(A_hat, kel):
    """Element matrices of the scaling form: mean factors with zero row sums."""
    K = 0.5 * (kel[:, :, None] + kel[:, None, :])
    A = K * A_hat
    m = A.shape[1]
    A[:, np.arange(m), np.arange(m)] = 0.0
    A[:, np.arange(m), np.arange(m)] = -A.sum(axis=2)
    return A


class Operator:
    """One operator variant bound to a grid and coefficient data."""

    def __init__(self, grid: RefinedGrid, variant: str, coeff=None,
                 hybrid_nodal=frozenset()):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "stored":
            raise ValueError("build the stored variant via store_stencils()")
        self.grid = grid
        self.variant = variant
        self.coeff = coeff
        self.hybrid_nodal = frozenset(hybrid_nodal)
        self.dim = grid.dim
        self.is_tensor = isinstance(coeff, TensorCoefficient)
        self.flops_add = 0
        self.flops_mul = 0
        self._stored = None

        if variant == "const":
            self.const_value = 1.0 if coeff is None else float(coeff)
            if self.const_value <= 0:
                raise ValueError("constant coefficient must be positive")
        elif self.is_tensor:
            if variant == "scaling_ma2":
                raise ValueError("the safeguard is defined for scalar "
                                 "coefficients only")
            if coeff.grid is not grid:
                raise ValueError("coefficient sampled on a different grid")
        else:
            if not isinstance(coeff, CoefficientField):
                raise ValueError("variant needs a sampled coefficient field")
            if coeff.grid is not grid:
                raise ValueError("coefficient sampled on a different grid")

        self._env = environment(self.dim)
        self._nvol = len(_vol_pos(self.dim, grid.n))
        self._setup_volume_tables()
        self._setup_surface()

    # -- setup ------------------------------------------------------------

    def _macro_E(self, t):
        V = self.grid.macro.vertices[self.grid.macro.elements[t]]
        return V[1:] - V[0]

    def _component_dirs(self):
        from .coefficients import TENSOR_DIRS_2D, TENSOR_DIRS_3D
        return TENSOR_DIRS_2D if self.dim == 2 else TENSOR_DIRS_3D

    def _setup_volume_tables(self):
        grid = self.grid
        ne = grid.macro.n_elements
        env = self._env
        d = self.dim
        self._sh = []      # half reference stencils, or (M, ndirs) stacks
        self._fac = []     # nodal geometry factors
        self._kg = None    # safeguarded gray-edge coefficient per macro
        self._gmask = None
        self.ma2_marked = None

        if self.variant == "scaling_ma2":
            if d == 3:
                self._warn_3d_safeguard()
            else:
                marked, gray_pair, km = ma2_marks(grid, self.coeff)
                self.ma2_marked = marked
                self._gmask = np.zeros((ne, 2 * len(DIRS_2D) // 2),
                                       dtype=np.uint8)
                self._kg = []
                half = len(DIRS_2D) // 2
                for t in range(ne):
                    if marked[t] and gray_pair[t] >= 0:
                        g = int(gray_pair[t])
                        self._gmask[t, g] = 1
                        self._gmask[t, g + half] = 1
                        self._kg.append(km.values[t])
                    else:
                        self._kg.append(self.coeff.values[t])

        for t in range(ne):
            if self.is_tensor:
                E = self._macro_E(t)
                dirs = self._component_dirs()
                shm = []
                facm = []
                for m in range(self.coeff.M):
                    if m == 0:
                        cf = None
                    else:
                        c = np.asarray(dirs[m])
                        cf = np.broadcast_to(np.outer(c, c),
                                             (env.nshapes, d, d))
                    _, mats = environment_matrices(E, grid.level, coeff=cf)
                    s = np.empty(len(env.term_ptr) - 1)
                    for j in range(len(s)):
                        lo, hi = env.term_ptr[j], env.term_ptr[j + 1]
                        s[j] = mats[env.term_elem[lo:hi], 0,
                                    env.term_slot[lo:hi]].sum()
                    shm.append(s / 2.0)
                    facm.append(mats[env.term_elem, 0, env.term_slot]
                                / (d + 1))
                self._sh.append(np.ascontiguousarray(shm))
                self._fac.append(np.ascontiguousarray(facm))
            else:
                _, s = reference_stencil(grid, t)
                self._sh.append(s / 2.0)
                if self.variant == "nodal":
                    E = self._macro_E(t)
                    _, mats = environment_matrices(E, grid.level)
                    self._fac.append(mats[env.term_elem, 0, env.term_slot]
                                     / (d + 1))
                else:
                    self._fac.append(None)

    def _warn_3d_safeguard(self):
        """3D safeguard is a diagnostic only; the operator stays plain scaling."""
        grid = self.grid
        hits = []
        for t in range(grid.macro.n_elements):
            colors, s, _ = classify_edge_types(grid, t)
            pos = np.nonzero(s > 0)[0]
            if len(pos) == 0:
                continue
            kv = self.coeff.values[t]
            ratio = kv.max() / kv.min()
            if ratio > 2.0:
                hits.append(t)
        if hits:
            warnings.warn(
                "3D safeguard not implemented: macro elements "
                f"{hits} have positive stencil directions and strong "
                "coefficient variation; using plain scaling rows",
                RuntimeWarning, stacklevel=3)

    def _element_matrices_for_rows(self, t, ids, lidx, pair, nodal_rows):
        """Element matrices for the shell elements of macro t."""
        grid = self.grid
        verts = grid.node_coords[ids]
        if self.variant == "const":
            A_hat = element_stiffness(verts)
            return self.const_value * A_hat
        if self.is_tensor:
            dirs = self._component_dirs()
            A = None
            for m in range(self.coeff.M):
                kel = self.coeff.fields[m].values[t][lidx]
                if m == 0:
                    A_m = element_stiffness(verts)
                else:
                    c = np.asarray(dirs[m])
                    cf = np.broadcast_to(np.outer(c, c),
                                         (len(verts), self.dim, self.dim))
                    A_m = element_stiffness(verts, cf)
                if nodal_rows:
                    contrib = kel.mean(axis=1)[:, None, None] * A_m
                else:
                    contrib = 0.5 * (kel[:, :, None] + kel[:, None, :]) * A_m
                A = contrib if A is None else A + contrib
            if not nodal_rows:
                m = A.shape[1]
                A[:, np.arange(m), np.arange(m)] = 0.0
                A[:, np.arange(m), np.arange(m)] = -A.sum(axis=2)
            return A
        A_hat = element_stiffness(verts)
        kel = self.coeff.values[t][lidx]
        if nodal_rows:
            return kel.mean(axis=1)[:, None, None] * A_hat
        if self.variant == "scaling_ma2" and self.dim == 2 \
                and self.ma2_marked is not None and self.ma2_marked[t]:
            # gray edges of a marked element scale with the safeguard field
            K = 0.5 * (kel[:, :, None] + kel[:, None, :])
            kg = self._kg[t][lidx]
            g = int(np.nonzero(self._gmask[t][:3])[0][0])
            edges = LOCAL_EDGES_2D
            for ei, (a, b) in enumerate(edges):
                hit = pair[:, ei] == g
                val = 0.5 * (kg[hit, a] + kg[hit, b])
                K[hit, a, b] = val
                K[hit, b, a] = val
            A = K * A_hat
            m = A.shape[1]
            A[:, np.arange(m), np.arange(m)] = 0.0
            A[:, np.arange(m), np.arange(m)] = -A.sum(axis=2)
            return A
        return _hadamard_rows(A_hat, kel)

    def _setup_surface(self):
        grid = self.grid
        d = self.dim
        lidx, pair = _shell_edge_tables(d, grid.level)
        surface_row = (np.arange(grid.n_nodes) < grid.n_surface_nodes) \
            & ~grid.dirichlet_mask
        rows_list, cols_list, data_list = [], [], []
        nloc = d + 1
        for t in range(grid.macro.n_elements):
            ids = grid.fine_elements(t, shell_only=True)
            if self.variant == "hybrid":
                A_s = self._element_matrices_for_rows(t, ids, lidx, pair,
                                                      nodal_rows=False)
                A_n = self._element_matrices_for_rows(t, ids, lidx, pair,
                                                      nodal_rows=True)
                kind = grid.node_kind[ids]
                use_nodal = np.isin(
                    kind, [int(k) for k in self.hybrid_nodal])
                A = np.where(use_nodal[:, :, None], A_n, A_s)
            else:
                A = self._element_matrices_for_rows(
                    t, ids, lidx, pair, nodal_rows=self.variant == "nodal")
            r = np.repeat(ids, nloc, axis=1).ravel()
            c = np.tile(ids, (1, nloc)).ravel()
            keep = surface_row[r]
            rows_list.append(r[keep])
            cols_list.append(c[keep])
            data_list.append(A.ravel()[keep])
        rows = np.concatenate(rows_list)
        cols = np.concatenate(cols_list)
        data = np.concatenate(data_list)
        S = sp.coo_matrix((data, (rows, cols)),
                          shape=(grid.n_nodes, grid.n_nodes)).tocsr()
        S.sum_duplicates()
        self._S = S
        self._surf_diag = S.diagonal()
        self._surf_rows = np.nonzero(surface_row)[0].astype(np.int64)

    # -- volume kernel dispatch -------------------------------------------

    def _run_volume(self, mode, t, u, out_or_f, omega=1.0):
        """mode: 'apply' writes rows to out, 'gs' updates u in place,
        'dump' writes stencil weights."""
        grid = self.grid
        n, d = grid.n, self.dim
        if self._nvol == 0:
            return
        base = grid.lat.base
        if mode == "gs":
            uloc = u[grid.elem_gidx[t]]
            s0 = grid.vol_start[t]
            fv = out_or_f[s0:s0 + self._nvol]
            tgt = uloc
        elif mode == "apply":
            uloc = u[grid.elem_gidx[t]]
            s0 = grid.vol_start[t]
            tgt = out_or_f[s0:s0 + self._nvol]
        else:
            uloc = None
            tgt = out_or_f

        env = self._env
        if self.variant == "const":
            s = self.const_value * 2.0 * self._sh[t]
            c0 = -s.sum()
            if mode == "apply":
                (kn.apply_const_2d if d == 2 else kn.apply_const_3d)(
                    n, base, uloc, s, c0, tgt)
            elif mode == "gs":
                w = np.empty((self._nvol, len(s) + 1))
                w[:, 0] = c0
                w[:, 1:] = s
                (kn.gs_stored_2d if d == 2 else kn.gs_stored_3d)(
                    n, base, uloc, fv, w, omega)
            else:
                tgt[:, 0] = c0
                tgt[:, 1:] = s
        elif self.is_tensor:
            km = np.ascontiguousarray(
                np.stack([f.values[t] for f in self.coeff.fields]))
            if self.variant == "nodal":
                args = (km, env.cse_schedule, env.cse_sums, self._fac[t],
                        env.term_ptr, env.term_elem)
                if mode == "apply":
                    kn.apply_nodal_tensor_3d(n, base, uloc, *args, tgt)
                elif mode == "gs":
                    kn.gs_nodal_tensor_3d(n, base, uloc, fv, *args, omega)
                else:
                    kn.dump_nodal_tensor_3d(n, base, km, *args[1:], tgt)
            else:
                if mode == "apply":
                    kn.apply_scaling_tensor_3d(n, base, uloc, km,
                                               self._sh[t], tgt)
                elif mode == "gs":
                    kn.gs_scaling_tensor_3d(n, base, uloc, fv, km,
                                            self._sh[t], omega)
                else:
                    kn.dump_scaling_tensor_3d(n, base, km, self._sh[t], tgt)
        else:
            kv = self.coeff.values[t]
            if self.variant == "nodal":
                args = (kv, env.cse_schedule, env.cse_sums, self._fac[t],
                        env.term_ptr, env.term_elem)
                if d == 2:
                    fns = (kn.apply_nodal_2d, kn.gs_nodal_2d, kn.dump_nodal_2d)
                else:
                    fns = (kn.apply_nodal_3d, kn.gs_nodal_3d, kn.dump_nodal_3d)
                if mode == "apply":
                    fns[0](n, base, uloc, *args, tgt)
                elif mode == "gs":
                    fns[1](n, base, uloc, fv, *args, omega)
                else:
                    fns[2](n, base, kv, *args[1:], tgt)
            elif d == 2:
                if self.variant == "scaling_ma2":
                    kg, g = self._kg[t], self._gmask[t]
                else:
                    kg, g = kv, np.zeros(6, dtype=np.uint8)
                if mode == "apply":
                    kn.apply_scaling_2d(n, base, uloc, kv, kg, g,
                                        self._sh[t], tgt)
                elif mode == "gs":
                    kn.gs_scaling_2d(n, base, uloc, fv, kv, kg, g,
                                     self._sh[t], omega)
                else:
                    kn.dump_scaling_2d(n, base, kv, kg, g, self._sh[t], tgt)
            else:
                if mode == "apply":
                    kn.apply_scaling_3d(n, base, uloc, kv, self._sh[t], tgt)
                elif mode == "gs":
                    kn.gs_scaling_3d(n, base, uloc, fv, kv, self._sh[t],
                                     omega)
                else:
                    kn.dump_scaling_3d(n, base, kv, self._sh[t], tgt)

        if mode == "gs":
            s0 = grid.vol_start[t]
            u[s0:s0 + self._nvol] = uloc[_vol_pos(d, n)]

    def _count(self, napplies=1):
        from .costmodel import analytic_count
        v = self.variant
        if self.is_tensor:
            return
        if v in ("scaling", "scaling_ma2", "hybrid"):
            cnt = analytic_count("scaling", self.dim)
        elif v in ("nodal", "const", "stored"):
            cnt = analytic_count(v, self.dim)
        else:
            return
        total = self._nvol * self.grid.macro.n_elements * napplies
        self.flops_add += cnt.add * total
        self.flops_mul += cnt.mul * total

    # -- public operations --------------------------------------------------

    def apply(self, u):
        """Matrix action A u with identity on Dirichlet rows."""
        grid = self.grid
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (grid.n_nodes,):
            raise ValueError("grid function has wrong length")
        out = self._S.dot(u)
        if self._stored is not None:
            self._apply_stored(u, out)
        else:
            for t in range(grid.macro.n_elements):
                self._run_volume("apply", t, u, out)
        out[grid.dirichlet_mask] = u[grid.dirichlet_mask]
        self._count()
        return out

    def _apply_stored(self, u, out):
        grid = self.grid
        n, d = grid.n, self.dim
        for t in range(grid.macro.n_elements):
            uloc = u[grid.elem_gidx[t]]
            s0 = grid.vol_start[t]
            tgt = out[s0:s0 + self._nvol]
            (kn.apply_stored_2d if d == 2 else kn.apply_stored_3d)(
                n, grid.lat.base, uloc, self._stored[t], tgt)

    def residual(self, u, f):
        """r = f - A u, forced to zero on Dirichlet rows."""
        r = np.asarray(f, dtype=np.float64) - self.apply(u)
        r[self.grid.dirichlet_mask] = 0.0
        return r

    def smooth(self, u, f, sweeps=1, omega=1.0):
        """Forward Gauss-Seidel in global node order, in place."""
        grid = self.grid
        S = self._S
        for _ in range(sweeps):
            kn.csr_gs(self._surf_rows, S.indptr, S.indices, S.data,
                      self._surf_diag, u, f, omega)
            if self._stored is not None:
                for t in range(grid.macro.n_elements):
                    uloc = u[grid.elem_gidx[t]]
                    s0 = grid.vol_start[t]
                    fv = f[s0:s0 + self._nvol]
                    (kn.gs_stored_2d if self.dim == 2 else kn.gs_stored_3d)(
                        grid.n, grid.lat.base, uloc, fv, self._stored[t],
                        omega)
                    u[s0:s0 + self._nvol] = uloc[_vol_pos(self.dim, grid.n)]
            else:
                for t in range(grid.macro.n_elements):
                    self._run_volume("gs", t, u, f, omega)
        return u

    def stencil_weights(self, t):
        """Volume stencil table of macro element t: rows (center, s_dirs)."""
        ndirs = len(DIRS_2D if self.dim == 2 else DIRS_3D)
        w = np.zeros((self._nvol, ndirs + 1))
        if self._nvol:
            if self._stored is not None:
                w[:] = self._stored[t]
            else:
                self._run_volume("dump", t, None, w)
        return w

    def store_stencils(self):
        """Precompute all volume stencils; returns the stored-variant twin."""
        grid = self.grid
        op = object.__new__(Operator)
        op.__dict__.update(self.__dict__)
        op.variant = "stored"
        op.source_variant = self.variant
        op.flops_add = 0
        op.flops_mul = 0
        op._stored = [self.stencil_weights(t)
                      for t in range(grid.macro.n_elements)]
        op.bytes_required = sum(w.nbytes for w in op._stored)
        return op
