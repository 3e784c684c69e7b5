"""Operation counts and memory-traffic model for the stencil variants.

Two routes to the same numbers: `analytic_count` is the closed-form budget
per volume-interior node, `measured_count` replays the kernel arithmetic for
real grid nodes through a counting float type.  The two must agree exactly,
and the replayed values must equal the kernel output bitwise; tests enforce
both.  Traffic figures are bytes per apply under an infinite cache
(optimistic) and a cache that misses on every lattice read (pessimistic).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import DIRS_2D, DIRS_3D

__all__ = ["OpCount", "Traffic", "analytic_count", "traffic",
           "measured_count", "replay_node", "operations_table",
           "traffic_table"]


@dataclass(frozen=True)
class OpCount:
    add: int
    mul: int

    @property
    def total(self):
        return self.add + self.mul


# (variant, dim) -> (adds, mults) per volume-interior node and apply.
# Scaling and nodal rebuild their stencil on the fly, so assembly is part of
# the apply budget; const and stored only pay the 15-point (7-point) product.
_ANALYTIC = {
    ("scaling", 3): (41, 28),
    ("nodal", 3): (125, 86),
    ("const", 3): (14, 15),
    ("stored", 3): (14, 15),
    ("scaling", 2): (17, 12),
    ("nodal", 2): (26, 18),
    ("const", 2): (6, 7),
    ("stored", 2): (6, 7),
}


def analytic_count(variant: str, dim: int) -> OpCount:
    """Floating-point adds and mults per volume-interior node per apply."""
    try:
        a, m = _ANALYTIC[(variant, dim)]
    except KeyError:
        raise KeyError(f"no operation count for variant {variant!r} "
                       f"in {dim}D") from None
    return OpCount(a, m)


@dataclass(frozen=True)
class Traffic:
    optimistic: int
    pessimistic: int


def traffic(variant: str, n_nodes: int) -> Traffic:
    """Bytes moved per apply over N volume-interior nodes (3D).

    Optimistic assumes every lattice value is read once; pessimistic charges
    every stencil access.  The on-the-fly variants stream one coefficient
    and one vector value (8+8 bytes) per node plus a fixed table (the 32
    reference stencils of 24 bytes each); stored streams 15 weights per node.
    """
    N = int(n_nodes)
    if variant == "stored":
        return Traffic(120 * N, 120 * N)
    if variant == "nodal":
        return Traffic(768 + 8 * N, 768 + 120 * N)
    if variant == "scaling":
        return Traffic(112 + 8 * N, 112 + 120 * N)
    raise KeyError(f"no traffic model for variant {variant!r}")


class _Tally:
    __slots__ = ("add", "mul")

    def __init__(self):
        self.add = 0
        self.mul = 0


class _CF:
    """Float wrapper that tallies adds (with subs) and mults."""
    __slots__ = ("v", "t")

    def __init__(self, v, t):
        self.v = v
        self.t = t

    def __add__(self, other):
        self.t.add += 1
        return _CF(self.v + other.v, self.t)

    def __sub__(self, other):
        self.t.add += 1
        return _CF(self.v - other.v, self.t)

    def __mul__(self, other):
        self.t.mul += 1
        return _CF(self.v * other.v, self.t)


def _neighbor_flats(lat, c_coords, dim):
    dirs = DIRS_2D if dim == 2 else DIRS_3D
    return [int(lat.index(c_coords + np.asarray(d))) for d in dirs]


def replay_node(op, u, t, c):
    """Recompute volume row c of macro element t of Operator.apply(u).

    Pure-Python mirror of the kernel arithmetic, in the kernel's operation
    order.  Returns (value, OpCount) where value is bitwise what the kernel
    writes and the count covers that node's floating-point work.
    """
    from .operators import _vol_pos

    grid = op.grid
    dim = grid.dim
    lat = grid.lat
    pos = _vol_pos(dim, grid.n)
    p = int(pos[c])
    coords = lat.coords[p]
    nb = _neighbor_flats(lat, coords, dim)
    gidx = grid.elem_gidx[t]
    v = u[gidx]
    tal = _Tally()

    def cf(x):
        return _CF(float(x), tal)

    variant = op.variant
    if variant == "hybrid":
        variant = "scaling"
    if variant == "scaling_ma2":
        variant = "scaling" if dim == 3 else "scaling_ma2"

    if variant in ("const", "stored"):
        if variant == "const":
            s = op.const_value * 2.0 * op._sh[t]
            c0 = -s.sum()
        else:
            w = op._stored[t][c]
            c0 = w[0]
            s = w[1:]
        acc = cf(c0) * cf(v[p])
        for d in range(len(nb)):
            acc = acc + cf(s[d]) * cf(v[nb[d]])
        return acc.v, OpCount(tal.add, tal.mul)

    if variant in ("scaling", "scaling_ma2"):
        if op.is_tensor:
            raise ValueError("tensor variants have no analytic count")
        kc = op.coeff.values[t]
        sh = op._sh[t]
        v0 = cf(v[p])
        k0 = cf(kc[p])
        if variant == "scaling_ma2":
            g = op._gmask[t]
            kg = op._kg[t]
        else:
            g = np.zeros(len(nb), dtype=np.uint8)
            kg = kc
        q = nb[0]
        k0_eff = cf(kg[p]) if g[0] else k0
        kq = cf(kg[q] if g[0] else kc[q])
        acc = (k0_eff + kq) * cf(sh[0]) * (cf(v[q]) - v0)
        for d in range(1, len(nb)):
            q = nb[d]
            kp = cf(kg[p]) if g[d] else k0
            kq = cf(kg[q] if g[d] else kc[q])
            acc = acc + (kp + kq) * cf(sh[d]) * (cf(v[q]) - v0)
        return acc.v, OpCount(tal.add, tal.mul)

    if variant == "nodal":
        if op.is_tensor:
            raise ValueError("tensor variants have no analytic count")
        kc = op.coeff.values[t]
        env = op._env
        fac = op._fac[t]
        sched = env.cse_schedule
        sums = env.cse_sums
        tptr = env.term_ptr
        telem = env.term_elem
        buf = [None] * env.n_slots
        buf[0] = cf(kc[p])
        for d in range(len(nb)):
            buf[1 + d] = cf(kc[nb[d]])
        for r in range(sched.shape[0]):
            buf[sched[r, 0]] = buf[sched[r, 1]] + buf[sched[r, 2]]
        v0 = cf(v[p])

        def dir_sum(d):
            t0 = tptr[d]
            s = buf[sums[telem[t0]]] * cf(fac[t0])
            for tt in range(t0 + 1, tptr[d + 1]):
                s = s + buf[sums[telem[tt]]] * cf(fac[tt])
            return s

        acc = dir_sum(0) * (cf(v[nb[0]]) - v0)
        for d in range(1, len(nb)):
            acc = acc + dir_sum(d) * (cf(v[nb[d]]) - v0)
        return acc.v, OpCount(tal.add, tal.mul)

    raise ValueError(f"cannot replay variant {op.variant!r}")


def measured_count(op, max_nodes: int = 32, seed: int = 0) -> OpCount:
    """Per-node count measured by replaying kernel arithmetic on op's grid.

    Samples up to max_nodes volume-interior nodes spread over the macro
    elements and insists every node costs the same.
    """
    grid = op.grid
    if op._nvol == 0:
        raise ValueError("grid has no volume-interior nodes; refine further")
    rng = np.random.default_rng(seed)
    u = rng.normal(size=grid.n_nodes)
    per_macro = max(1, max_nodes // grid.macro.n_elements)
    counts = set()
    for t in range(grid.macro.n_elements):
        locs = rng.choice(op._nvol, size=min(per_macro, op._nvol),
                          replace=False)
        for c in locs:
            _, cnt = replay_node(op, u, t, int(c))
            counts.add((cnt.add, cnt.mul))
    if len(counts) != 1:
        raise AssertionError(f"non-uniform per-node cost: {sorted(counts)}")
    a, m = counts.pop()
    return OpCount(a, m)


def operations_table():
    """Per-node operation budget rows for every modeled variant."""
    rows = []
    for (variant, dim), (a, m) in sorted(_ANALYTIC.items(),
                                         key=lambda kv: (-kv[0][1], kv[0][0])):
        rows.append({"dim": dim, "variant": variant, "adds": a, "mults": m,
                     "total": a + m})
    return rows


def traffic_table(n_nodes: int):
    """Traffic model rows for the 3D variants at a given node count."""
    rows = []
    for variant in ("stored", "nodal", "scaling"):
        tr = traffic(variant, n_nodes)
        rows.append({"variant": variant, "n_nodes": int(n_nodes),
                     "bytes_optimistic": tr.optimistic,
                     "bytes_pessimistic": tr.pessimistic})
    return rows
