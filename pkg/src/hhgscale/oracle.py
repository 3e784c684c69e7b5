"""Assembled-matrix ground truth and spectral diagnostics.

Assembly here deliberately bypasses the stencil machinery: it loops the fine
elements of every macro element and emits one local matrix per element, built
from the factor-matrix form (factor matrix Hadamard-multiplied into the
constant-coefficient element stiffness, diagonal fixed by the zero-row-sum
rule).  Equivalence of this path with the matrix-free apply is the executable
core of the library's correctness argument, so keep it independent.
"""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .coefficients import CoefficientField, TensorCoefficient
from .mesh import (DIRS_2D, DIRS_3D, LOCAL_EDGES_2D, LOCAL_EDGES_3D,
                   RefinedGrid, lattice_elements)
from .reference_stencils import element_stiffness

__all__ = ["assemble_global", "extreme_eigenvalues", "spd_check",
           "write_matrixmarket"]


def _edge_dir_pairs(dim, level):
    """Direction pair id of every local edge of every fine element."""
    le = lattice_elements(dim, level)
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
    return le, pair


def _factor_matrix(kel, A_hat, nodal):
    """Factor matrices K_t: nodal uses the element mean everywhere, the
    scaling form uses edge means off the diagonal; both get the diagonal
    from the zero-row-sum rule, which for the nodal form is a no-op."""
    if nodal:
        kbar = kel.mean(axis=1)
        return kbar[:, None, None] * A_hat
    K = 0.5 * (kel[:, :, None] + kel[:, None, :])
    A = K * A_hat
    m = A.shape[1]
    A[:, np.arange(m), np.arange(m)] = 0.0
    A[:, np.arange(m), np.arange(m)] = -A.sum(axis=2)
    return A


def assemble_global(grid: RefinedGrid, variant: str, coeff=None,
                    hybrid_nodal=frozenset(), reduced=False):
    """Sparse matrix whose action equals the matrix-free apply.

    variant: 'const' | 'nodal' | 'scaling' | 'scaling_ma2' | 'hybrid' |
    'midpoint'.  With reduced=True the matrix is restricted to non-Dirichlet
    rows and columns; otherwise Dirichlet rows are identity rows.
    """
    dim = grid.dim
    is_tensor = isinstance(coeff, TensorCoefficient)
    nloc = dim + 1

    marked = gray_pair = km = None
    if variant == "scaling_ma2" and dim == 2:
        from .operators import ma2_marks
        marked, gray_pair, km = ma2_marks(grid, coeff)
    le, pair = _edge_dir_pairs(dim, grid.level)
    lidx = grid.lat.index(le)
    edges = LOCAL_EDGES_2D if dim == 2 else LOCAL_EDGES_3D

    rows_list, cols_list, data_list = [], [], []
    for t in range(grid.macro.n_elements):
        ids = grid.fine_elements(t)
        verts = grid.node_coords[ids]
        A_hat = element_stiffness(verts)
        if variant == "const":
            c = 1.0 if coeff is None else float(coeff)
            A = c * A_hat
        elif variant == "midpoint":
            if dim != 2:
                raise ValueError("midpoint variant is 2D only")
            bary = verts.mean(axis=1)
            A = np.asarray(coeff(bary))[:, None, None] * A_hat
        elif is_tensor:
            A = None
            from .coefficients import TENSOR_DIRS_2D, TENSOR_DIRS_3D
            dirs = TENSOR_DIRS_2D if dim == 2 else TENSOR_DIRS_3D
            for m in range(coeff.M):
                kel = coeff.fields[m].values[t][lidx]
                if m == 0:
                    A_m = A_hat
                else:
                    cvec = np.asarray(dirs[m])
                    cf = np.broadcast_to(np.outer(cvec, cvec),
                                         (len(verts), dim, dim))
                    A_m = element_stiffness(verts, cf)
                if variant == "nodal":
                    part = kel.mean(axis=1)[:, None, None] * A_m
                else:
                    part = 0.5 * (kel[:, :, None] + kel[:, None, :]) * A_m
                A = part if A is None else A + part
            if variant != "nodal":
                A[:, np.arange(nloc), np.arange(nloc)] = 0.0
                A[:, np.arange(nloc), np.arange(nloc)] = -A.sum(axis=2)
        else:
            kel = coeff.values[t][lidx]
            if variant == "nodal":
                A = _factor_matrix(kel, A_hat, nodal=True)
            elif variant == "hybrid":
                A_n = _factor_matrix(kel, A_hat, nodal=True)
                A_s = _factor_matrix(kel, A_hat, nodal=False)
                kind = grid.node_kind[ids]
                use_nodal = np.isin(kind, [int(k) for k in hybrid_nodal])
                A = np.where(use_nodal[:, :, None], A_n, A_s)
            else:
                K = 0.5 * (kel[:, :, None] + kel[:, None, :])
                if marked is not None and marked[t]:
                    g = int(gray_pair[t])
                    kg = km.values[t][lidx]
                    for ei, (a, b) in enumerate(edges):
                        hit = pair[:, ei] == g
                        val = 0.5 * (kg[hit, a] + kg[hit, b])
                        K[hit, a, b] = val
                        K[hit, b, a] = val
                A = K * A_hat
                A[:, np.arange(nloc), np.arange(nloc)] = 0.0
                A[:, np.arange(nloc), np.arange(nloc)] = -A.sum(axis=2)
        r = np.repeat(ids, nloc, axis=1).ravel()
        c = np.tile(ids, (1, nloc)).ravel()
        keep = ~grid.dirichlet_mask[r]
        rows_list.append(r[keep])
        cols_list.append(c[keep])
        data_list.append(A.ravel()[keep])

    rows = np.concatenate(rows_list)
    cols = np.concatenate(cols_list)
    data = np.concatenate(data_list)
    if reduced:
        old2new = np.full(grid.n_nodes, -1, dtype=np.int64)
        old2new[grid.interior_ids] = np.arange(grid.n_interior)
        keep = old2new[cols] >= 0
        A = sp.coo_matrix(
            (data[keep], (old2new[rows[keep]], old2new[cols[keep]])),
            shape=(grid.n_interior, grid.n_interior)).tocsr()
    else:
        d_ids = np.nonzero(grid.dirichlet_mask)[0]
        rows = np.concatenate([rows, d_ids])
        cols = np.concatenate([cols, d_ids])
        data = np.concatenate([data, np.ones(len(d_ids))])
        A = sp.coo_matrix((data, (rows, cols)),
                          shape=(grid.n_nodes, grid.n_nodes)).tocsr()
    A.sum_duplicates()
    return A


def extreme_eigenvalues(A, tol=1e-8, maxiter=20000):
    """(lambda_min, lambda_max) of a symmetric sparse matrix.

    Dense solve below 3000 unknowns; shifted power iterations above, with
    the residual certified against tol * ||A||.  Returns a third element
    flagging convergence.
    """
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n <= 3000:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        w, V = scipy.linalg.eigh(dense)
        return float(w[0]), float(w[-1]), True

    rng = np.random.default_rng(1234)
    norm_est = float(abs(A).sum(axis=1).max())  # row-sum norm bounds |lambda|

    def dominant(M, shift):
        # largest eigenvalue of (M + shift I), returned without the shift
        x = rng.normal(size=n)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(maxiter):
            y = M.dot(x) + shift * x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return -shift, True
            x = y / ny
            z = M.dot(x) + shift * x
            lam = float(x.dot(z))
            if np.linalg.norm(z - lam * x) <= tol * max(norm_est, 1.0):
                return lam - shift, True
        return lam - shift, False

    lmax, ok1 = dominant(A, norm_est)
    neg = -A
    top_neg, ok2 = dominant(neg, 2.0 * norm_est)
    return float(-top_neg), float(lmax), bool(ok1 and ok2)


def spd_check(A, tol=1e-10):
    """(is_positive, witness): witness is a direction of negative energy."""
    n = A.shape[0]
    if n <= 3000:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        w, V = scipy.linalg.eigh(dense)
        ok = w[0] > -tol * max(abs(w[-1]), 1e-300)
        return bool(ok), (None if ok else V[:, 0])
    lmin, lmax, _ = extreme_eigenvalues(A)
    return lmin > -tol * abs(lmax), None


def write_matrixmarket(path, A):
    """Coordinate-format text export for external inspection."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
