"""Hot loops over one macro element's lattice arrays.

Every kernel walks the volume-interior lattice nodes of one macro element in
(k, j, i) ascending order, which is exactly the global numbering order of the
volume nodes, so apply kernels write their output sequentially.  Lattice rows
are addressed through the `base` row-start table; the seven row bases a node's
15-point stencil touches are hoisted per (k, j) row.  Gauss-Seidel kernels
update the gathered lattice array in place so later nodes see fresh values.

No fastmath: bitwise reproducibility across runs is part of the contract.
"""
import numpy as np
from numba import njit

# direction order matches mesh.DIRS_2D / mesh.DIRS_3D


# ---------------------------------------------------------------------------
# 3D apply
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def apply_const_3d(n, base, v, s, c0, out):
    """out_c = c0*v_p + sum_d s[d]*v_nbr  (15 mult, 14 add per node)."""
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                acc = c0 * v[p]
                acc += s[0] * v[p + 1]
                acc += s[1] * v[bju + i]
                acc += s[2] * v[bku + i]
                acc += s[3] * v[bjd + i + 1]
                acc += s[4] * v[bkd + i + 1]
                acc += s[5] * v[bkdju + i]
                acc += s[6] * v[bkujd + i + 1]
                acc += s[7] * v[p - 1]
                acc += s[8] * v[bjd + i]
                acc += s[9] * v[bkd + i]
                acc += s[10] * v[bju + i - 1]
                acc += s[11] * v[bku + i - 1]
                acc += s[12] * v[bkujd + i]
                acc += s[13] * v[bkdju + i - 1]
                out[c] = acc
                c += 1


@njit(cache=True, nogil=True)
def apply_stored_3d(n, base, v, w, out):
    """Classic stencil apply from per-node weights w[c] = (diag, s_0..s_13)."""
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                acc = w[c, 0] * v[p]
                acc += w[c, 1] * v[p + 1]
                acc += w[c, 2] * v[bju + i]
                acc += w[c, 3] * v[bku + i]
                acc += w[c, 4] * v[bjd + i + 1]
                acc += w[c, 5] * v[bkd + i + 1]
                acc += w[c, 6] * v[bkdju + i]
                acc += w[c, 7] * v[bkujd + i + 1]
                acc += w[c, 8] * v[p - 1]
                acc += w[c, 9] * v[bjd + i]
                acc += w[c, 10] * v[bkd + i]
                acc += w[c, 11] * v[bju + i - 1]
                acc += w[c, 12] * v[bku + i - 1]
                acc += w[c, 13] * v[bkujd + i]
                acc += w[c, 14] * v[bkdju + i - 1]
                out[c] = acc
                c += 1


@njit(cache=True, nogil=True)
def apply_scaling_3d(n, base, v, kc, sh, out):
    """Mean-scaled stencil apply; sh holds the half reference entries."""
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                v0 = v[p]
                k0 = kc[p]
                q = p + 1
                acc = (k0 + kc[q]) * sh[0] * (v[q] - v0)
                q = bju + i
                acc += (k0 + kc[q]) * sh[1] * (v[q] - v0)
                q = bku + i
                acc += (k0 + kc[q]) * sh[2] * (v[q] - v0)
                q = bjd + i + 1
                acc += (k0 + kc[q]) * sh[3] * (v[q] - v0)
                q = bkd + i + 1
                acc += (k0 + kc[q]) * sh[4] * (v[q] - v0)
                q = bkdju + i
                acc += (k0 + kc[q]) * sh[5] * (v[q] - v0)
                q = bkujd + i + 1
                acc += (k0 + kc[q]) * sh[6] * (v[q] - v0)
                q = p - 1
                acc += (k0 + kc[q]) * sh[7] * (v[q] - v0)
                q = bjd + i
                acc += (k0 + kc[q]) * sh[8] * (v[q] - v0)
                q = bkd + i
                acc += (k0 + kc[q]) * sh[9] * (v[q] - v0)
                q = bju + i - 1
                acc += (k0 + kc[q]) * sh[10] * (v[q] - v0)
                q = bku + i - 1
                acc += (k0 + kc[q]) * sh[11] * (v[q] - v0)
                q = bkujd + i
                acc += (k0 + kc[q]) * sh[12] * (v[q] - v0)
                q = bkdju + i - 1
                acc += (k0 + kc[q]) * sh[13] * (v[q] - v0)
                out[c] = acc
                c += 1


@njit(cache=True, nogil=True)
def apply_nodal_3d(n, base, v, kc, sched, sums, fac, tptr, telem, out):
    """Nodal-integration apply: element k-sums via the add schedule, then
    per-direction accumulation with precomputed geometry factors."""
    buf = np.empty(55)
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                buf[0] = kc[p]
                for d in range(14):
                    buf[1 + d] = kc[nb[d]]
                for r in range(sched.shape[0]):
                    buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
                v0 = v[p]
                t0 = tptr[0]
                s = buf[sums[telem[t0]]] * fac[t0]
                for t in range(t0 + 1, tptr[1]):
                    s += buf[sums[telem[t]]] * fac[t]
                acc = s * (v[nb[0]] - v0)
                for d in range(1, 14):
                    t0 = tptr[d]
                    s = buf[sums[telem[t0]]] * fac[t0]
                    for t in range(t0 + 1, tptr[d + 1]):
                        s += buf[sums[telem[t]]] * fac[t]
                    acc += s * (v[nb[d]] - v0)
                out[c] = acc
                c += 1


@njit(cache=True, nogil=True)
def apply_scaling_tensor_3d(n, base, v, km, shm, out):
    """Component-wise mean scaling; km is (M, size), shm is (M, 14)."""
    M = km.shape[0]
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                v0 = v[p]
                acc = 0.0
                for d in range(14):
                    q = nb[d]
                    s = 0.0
                    for m in range(M):
                        s += (km[m, p] + km[m, q]) * shm[m, d]
                    acc += s * (v[q] - v0)
                out[c] = acc
                c += 1


@njit(cache=True, nogil=True)
def apply_nodal_tensor_3d(n, base, v, km, sched, sums, fac, tptr, telem, out):
    """Nodal apply for the M-component splitting; fac is (M, nterms)."""
    M = km.shape[0]
    buf = np.empty(55)
    esum = np.empty((M, 24))
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                for m in range(M):
                    buf[0] = km[m, p]
                    for d in range(14):
                        buf[1 + d] = km[m, nb[d]]
                    for r in range(sched.shape[0]):
                        buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
                    for e in range(24):
                        esum[m, e] = buf[sums[e]]
                v0 = v[p]
                acc = 0.0
                for d in range(14):
                    s = 0.0
                    for t in range(tptr[d], tptr[d + 1]):
                        e = telem[t]
                        for m in range(M):
                            s += esum[m, e] * fac[m, t]
                    acc += s * (v[nb[d]] - v0)
                out[c] = acc
                c += 1


# ---------------------------------------------------------------------------
# 3D stencil dumps (feed the stored variant)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def dump_scaling_3d(n, base, kc, sh, w):
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                k0 = kc[p]
                w[c, 1] = (k0 + kc[p + 1]) * sh[0]
                w[c, 2] = (k0 + kc[bju + i]) * sh[1]
                w[c, 3] = (k0 + kc[bku + i]) * sh[2]
                w[c, 4] = (k0 + kc[bjd + i + 1]) * sh[3]
                w[c, 5] = (k0 + kc[bkd + i + 1]) * sh[4]
                w[c, 6] = (k0 + kc[bkdju + i]) * sh[5]
                w[c, 7] = (k0 + kc[bkujd + i + 1]) * sh[6]
                w[c, 8] = (k0 + kc[p - 1]) * sh[7]
                w[c, 9] = (k0 + kc[bjd + i]) * sh[8]
                w[c, 10] = (k0 + kc[bkd + i]) * sh[9]
                w[c, 11] = (k0 + kc[bju + i - 1]) * sh[10]
                w[c, 12] = (k0 + kc[bku + i - 1]) * sh[11]
                w[c, 13] = (k0 + kc[bkujd + i]) * sh[12]
                w[c, 14] = (k0 + kc[bkdju + i - 1]) * sh[13]
                s = 0.0
                for d in range(14):
                    s += w[c, 1 + d]
                w[c, 0] = -s
                c += 1


@njit(cache=True, nogil=True)
def dump_nodal_3d(n, base, kc, sched, sums, fac, tptr, telem, w):
    buf = np.empty(55)
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                buf[0] = kc[p]
                for d in range(14):
                    buf[1 + d] = kc[nb[d]]
                for r in range(sched.shape[0]):
                    buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
                tot = 0.0
                for d in range(14):
                    t0 = tptr[d]
                    s = buf[sums[telem[t0]]] * fac[t0]
                    for t in range(t0 + 1, tptr[d + 1]):
                        s += buf[sums[telem[t]]] * fac[t]
                    w[c, 1 + d] = s
                    tot += s
                w[c, 0] = -tot
                c += 1


@njit(cache=True, nogil=True)
def dump_scaling_tensor_3d(n, base, km, shm, w):
    M = km.shape[0]
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                tot = 0.0
                for d in range(14):
                    q = nb[d]
                    s = 0.0
                    for m in range(M):
                        s += (km[m, p] + km[m, q]) * shm[m, d]
                    w[c, 1 + d] = s
                    tot += s
                w[c, 0] = -tot
                c += 1


@njit(cache=True, nogil=True)
def dump_nodal_tensor_3d(n, base, km, sched, sums, fac, tptr, telem, w):
    M = km.shape[0]
    buf = np.empty(55)
    esum = np.empty((M, 24))
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                for m in range(M):
                    buf[0] = km[m, p]
                    for d in range(14):
                        buf[1 + d] = km[m, nb[d]]
                    for r in range(sched.shape[0]):
                        buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
                    for e in range(24):
                        esum[m, e] = buf[sums[e]]
                tot = 0.0
                for d in range(14):
                    s = 0.0
                    for t in range(tptr[d], tptr[d + 1]):
                        e = telem[t]
                        for m in range(M):
                            s += esum[m, e] * fac[m, t]
                    w[c, 1 + d] = s
                    tot += s
                w[c, 0] = -tot
                c += 1


# ---------------------------------------------------------------------------
# 3D Gauss-Seidel (forward, in place on the gathered lattice array)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def gs_stored_3d(n, base, u, fv, w, omega):
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                acc = w[c, 1] * u[p + 1]
                acc += w[c, 2] * u[bju + i]
                acc += w[c, 3] * u[bku + i]
                acc += w[c, 4] * u[bjd + i + 1]
                acc += w[c, 5] * u[bkd + i + 1]
                acc += w[c, 6] * u[bkdju + i]
                acc += w[c, 7] * u[bkujd + i + 1]
                acc += w[c, 8] * u[p - 1]
                acc += w[c, 9] * u[bjd + i]
                acc += w[c, 10] * u[bkd + i]
                acc += w[c, 11] * u[bju + i - 1]
                acc += w[c, 12] * u[bku + i - 1]
                acc += w[c, 13] * u[bkujd + i]
                acc += w[c, 14] * u[bkdju + i - 1]
                d0 = w[c, 0]
                if d0 == 0.0:
                    raise ValueError("zero central stencil entry")
                u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / d0
                c += 1


@njit(cache=True, nogil=True)
def gs_scaling_3d(n, base, u, fv, kc, sh, omega):
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                k0 = kc[p]
                acc = 0.0
                diag = 0.0
                for d in range(14):
                    q = nb[d]
                    sd = (k0 + kc[q]) * sh[d]
                    acc += sd * u[q]
                    diag -= sd
                if diag == 0.0:
                    raise ValueError("zero central stencil entry")
                u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / diag
                c += 1


@njit(cache=True, nogil=True)
def gs_nodal_3d(n, base, u, fv, kc, sched, sums, fac, tptr, telem, omega):
    buf = np.empty(55)
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                buf[0] = kc[p]
                for d in range(14):
                    buf[1 + d] = kc[nb[d]]
                for r in range(sched.shape[0]):
                    buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
                acc = 0.0
                diag = 0.0
                for d in range(14):
                    t0 = tptr[d]
                    s = buf[sums[telem[t0]]] * fac[t0]
                    for t in range(t0 + 1, tptr[d + 1]):
                        s += buf[sums[telem[t]]] * fac[t]
                    acc += s * u[nb[d]]
                    diag -= s
                if diag == 0.0:
                    raise ValueError("zero central stencil entry")
                u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / diag
                c += 1


@njit(cache=True, nogil=True)
def gs_scaling_tensor_3d(n, base, u, fv, km, shm, omega):
    M = km.shape[0]
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                acc = 0.0
                diag = 0.0
                for d in range(14):
                    q = nb[d]
                    s = 0.0
                    for m in range(M):
                        s += (km[m, p] + km[m, q]) * shm[m, d]
                    acc += s * u[q]
                    diag -= s
                if diag == 0.0:
                    raise ValueError("zero central stencil entry")
                u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / diag
                c += 1


@njit(cache=True, nogil=True)
def gs_nodal_tensor_3d(n, base, u, fv, km, sched, sums, fac, tptr, telem,
                       omega):
    M = km.shape[0]
    buf = np.empty(55)
    esum = np.empty((M, 24))
    nb = np.empty(14, np.int64)
    c = 0
    for k in range(1, n - 2):
        for j in range(1, n - 1 - k):
            b = base[k, j]
            bju = base[k, j + 1]
            bjd = base[k, j - 1]
            bku = base[k + 1, j]
            bkd = base[k - 1, j]
            bkdju = base[k - 1, j + 1]
            bkujd = base[k + 1, j - 1]
            for i in range(1, n - k - j):
                p = b + i
                nb[0] = p + 1
                nb[1] = bju + i
                nb[2] = bku + i
                nb[3] = bjd + i + 1
                nb[4] = bkd + i + 1
                nb[5] = bkdju + i
                nb[6] = bkujd + i + 1
                nb[7] = p - 1
                nb[8] = bjd + i
                nb[9] = bkd + i
                nb[10] = bju + i - 1
                nb[11] = bku + i - 1
                nb[12] = bkujd + i
                nb[13] = bkdju + i - 1
                for m in range(M):
                    buf[0] = km[m, p]
                    for d in range(14):
                        buf[1 + d] = km[m, nb[d]]
                    for r in range(sched.shape[0]):
                        buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
                    for e in range(24):
                        esum[m, e] = buf[sums[e]]
                acc = 0.0
                diag = 0.0
                for d in range(14):
                    s = 0.0
                    for t in range(tptr[d], tptr[d + 1]):
                        e = telem[t]
                        for m in range(M):
                            s += esum[m, e] * fac[m, t]
                    acc += s * u[nb[d]]
                    diag -= s
                if diag == 0.0:
                    raise ValueError("zero central stencil entry")
                u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / diag
                c += 1


# ---------------------------------------------------------------------------
# 2D kernels; the scaling ones take a per-direction selector g so gray
# directions can read the safeguarded coefficient array kg
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def apply_const_2d(n, base, v, s, c0, out):
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            acc = c0 * v[p]
            acc += s[0] * v[p + 1]
            acc += s[1] * v[bju + i]
            acc += s[2] * v[bjd + i + 1]
            acc += s[3] * v[p - 1]
            acc += s[4] * v[bjd + i]
            acc += s[5] * v[bju + i - 1]
            out[c] = acc
            c += 1


@njit(cache=True, nogil=True)
def apply_stored_2d(n, base, v, w, out):
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            acc = w[c, 0] * v[p]
            acc += w[c, 1] * v[p + 1]
            acc += w[c, 2] * v[bju + i]
            acc += w[c, 3] * v[bjd + i + 1]
            acc += w[c, 4] * v[p - 1]
            acc += w[c, 5] * v[bjd + i]
            acc += w[c, 6] * v[bju + i - 1]
            out[c] = acc
            c += 1


@njit(cache=True, nogil=True)
def apply_scaling_2d(n, base, v, kc, kg, g, sh, out):
    nb = np.empty(6, np.int64)
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            nb[0] = p + 1
            nb[1] = bju + i
            nb[2] = bjd + i + 1
            nb[3] = p - 1
            nb[4] = bjd + i
            nb[5] = bju + i - 1
            v0 = v[p]
            if g[0]:
                sd = (kg[p] + kg[p + 1]) * sh[0]
            else:
                sd = (kc[p] + kc[p + 1]) * sh[0]
            acc = sd * (v[p + 1] - v0)
            for d in range(1, 6):
                q = nb[d]
                if g[d]:
                    sd = (kg[p] + kg[q]) * sh[d]
                else:
                    sd = (kc[p] + kc[q]) * sh[d]
                acc += sd * (v[q] - v0)
            out[c] = acc
            c += 1


@njit(cache=True, nogil=True)
def apply_nodal_2d(n, base, v, kc, sched, sums, fac, tptr, telem, out):
    buf = np.empty(16)
    nb = np.empty(6, np.int64)
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            nb[0] = p + 1
            nb[1] = bju + i
            nb[2] = bjd + i + 1
            nb[3] = p - 1
            nb[4] = bjd + i
            nb[5] = bju + i - 1
            buf[0] = kc[p]
            for d in range(6):
                buf[1 + d] = kc[nb[d]]
            for r in range(sched.shape[0]):
                buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
            v0 = v[p]
            t0 = tptr[0]
            s = buf[sums[telem[t0]]] * fac[t0]
            for t in range(t0 + 1, tptr[1]):
                s += buf[sums[telem[t]]] * fac[t]
            acc = s * (v[nb[0]] - v0)
            for d in range(1, 6):
                t0 = tptr[d]
                s = buf[sums[telem[t0]]] * fac[t0]
                for t in range(t0 + 1, tptr[d + 1]):
                    s += buf[sums[telem[t]]] * fac[t]
                acc += s * (v[nb[d]] - v0)
            out[c] = acc
            c += 1


@njit(cache=True, nogil=True)
def dump_scaling_2d(n, base, kc, kg, g, sh, w):
    nb = np.empty(6, np.int64)
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            nb[0] = p + 1
            nb[1] = bju + i
            nb[2] = bjd + i + 1
            nb[3] = p - 1
            nb[4] = bjd + i
            nb[5] = bju + i - 1
            tot = 0.0
            for d in range(6):
                q = nb[d]
                if g[d]:
                    sd = (kg[p] + kg[q]) * sh[d]
                else:
                    sd = (kc[p] + kc[q]) * sh[d]
                w[c, 1 + d] = sd
                tot += sd
            w[c, 0] = -tot
            c += 1


@njit(cache=True, nogil=True)
def dump_nodal_2d(n, base, kc, sched, sums, fac, tptr, telem, w):
    buf = np.empty(16)
    nb = np.empty(6, np.int64)
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            nb[0] = p + 1
            nb[1] = bju + i
            nb[2] = bjd + i + 1
            nb[3] = p - 1
            nb[4] = bjd + i
            nb[5] = bju + i - 1
            buf[0] = kc[p]
            for d in range(6):
                buf[1 + d] = kc[nb[d]]
            for r in range(sched.shape[0]):
                buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
            tot = 0.0
            for d in range(6):
                t0 = tptr[d]
                s = buf[sums[telem[t0]]] * fac[t0]
                for t in range(t0 + 1, tptr[d + 1]):
                    s += buf[sums[telem[t]]] * fac[t]
                w[c, 1 + d] = s
                tot += s
            w[c, 0] = -tot
            c += 1


@njit(cache=True, nogil=True)
def gs_stored_2d(n, base, u, fv, w, omega):
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            acc = w[c, 1] * u[p + 1]
            acc += w[c, 2] * u[bju + i]
            acc += w[c, 3] * u[bjd + i + 1]
            acc += w[c, 4] * u[p - 1]
            acc += w[c, 5] * u[bjd + i]
            acc += w[c, 6] * u[bju + i - 1]
            d0 = w[c, 0]
            if d0 == 0.0:
                raise ValueError("zero central stencil entry")
            u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / d0
            c += 1


@njit(cache=True, nogil=True)
def gs_scaling_2d(n, base, u, fv, kc, kg, g, sh, omega):
    nb = np.empty(6, np.int64)
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            nb[0] = p + 1
            nb[1] = bju + i
            nb[2] = bjd + i + 1
            nb[3] = p - 1
            nb[4] = bjd + i
            nb[5] = bju + i - 1
            acc = 0.0
            diag = 0.0
            for d in range(6):
                q = nb[d]
                if g[d]:
                    sd = (kg[p] + kg[q]) * sh[d]
                else:
                    sd = (kc[p] + kc[q]) * sh[d]
                acc += sd * u[q]
                diag -= sd
            if diag == 0.0:
                raise ValueError("zero central stencil entry")
            u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / diag
            c += 1


@njit(cache=True, nogil=True)
def gs_nodal_2d(n, base, u, fv, kc, sched, sums, fac, tptr, telem, omega):
    buf = np.empty(16)
    nb = np.empty(6, np.int64)
    c = 0
    for j in range(1, n - 1):
        b = base[j]
        bju = base[j + 1]
        bjd = base[j - 1]
        for i in range(1, n - j):
            p = b + i
            nb[0] = p + 1
            nb[1] = bju + i
            nb[2] = bjd + i + 1
            nb[3] = p - 1
            nb[4] = bjd + i
            nb[5] = bju + i - 1
            buf[0] = kc[p]
            for d in range(6):
                buf[1 + d] = kc[nb[d]]
            for r in range(sched.shape[0]):
                buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
            acc = 0.0
            diag = 0.0
            for d in range(6):
                t0 = tptr[d]
                s = buf[sums[telem[t0]]] * fac[t0]
                for t in range(t0 + 1, tptr[d + 1]):
                    s += buf[sums[telem[t]]] * fac[t]
                acc += s * u[nb[d]]
                diag -= s
            if diag == 0.0:
                raise ValueError("zero central stencil entry")
            u[p] = (1.0 - omega) * u[p] + omega * (fv[c] - acc) / diag
            c += 1


# ---------------------------------------------------------------------------
# sparse rows (surface nodes)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def csr_gs(rows, indptr, indices, data, diag, u, f, omega):
    """Forward Gauss-Seidel restricted to the given rows of a CSR matrix."""
    for ri in range(rows.shape[0]):
        r = rows[ri]
        acc = 0.0
        for idx in range(indptr[r], indptr[r + 1]):
            col = indices[idx]
            if col != r:
                acc += data[idx] * u[col]
        d0 = diag[r]
        if d0 == 0.0:
            raise ValueError("zero central stencil entry")
        u[r] = (1.0 - omega) * u[r] + omega * (f[r] - acc) / d0
