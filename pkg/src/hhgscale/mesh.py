"""Macro meshes and their structured uniform refinements.

A simplicial macro mesh (triangles in 2D, tetrahedra in 3D) is refined
uniformly ``level`` times.  Each macro element then carries a barycentric
lattice with ``n = 2**level`` subdivisions per edge; refinement of a
tetrahedron follows Bey's red rule, so the fine elements fall into a fixed
small set of congruence classes and the interior of every macro element is
translation invariant.

Fine nodes are identified globally through the macro entity (vertex, edge,
face, element interior) whose relative interior contains them.  Every shared
node is stored exactly once, so coordinates of nodes on shared macro
boundaries are bitwise identical across the elements that touch them.

Global node numbering is grouped by owner kind: macro vertices first, then
edge interiors (per edge), face interiors (per face, 3D), and element
interiors last.  Element-interior ("volume") nodes of one macro element are
contiguous and ordered lexicographically by (k, j, i) lattice coordinates;
smoothers rely on this order.
"""
from __future__ import annotations

import itertools
from enum import IntEnum
from functools import lru_cache

import numpy as np

__all__ = [
    "PrimitiveKind", "MacroMesh", "RefinedGrid", "SimplexLattice",
    "load_macro_mesh", "refine_uniform", "classify_primitives", "neighborhood",
    "lattice_elements", "unit_square", "unit_square_regular", "unit_cube_6",
    "unit_cube_12", "obtuse_square", "obtuse_kite_band", "cylinder_shell_box",
    "reference_simplex",
    "DIRS_2D", "DIRS_3D",
]

# Neighbor directions of an interior lattice node, second half mirrors the
# first: MIRROR[j] = (j + npos) % ndirs.  These are exactly the fine-edge
# directions produced by red refinement (checked in the stencil module).
DIRS_2D = np.array(
    [(1, 0), (0, 1), (1, -1),
     (-1, 0), (0, -1), (-1, 1)], dtype=np.int64)
DIRS_3D = np.array(
    [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, -1, 0), (1, 0, -1), (0, 1, -1),
     (1, -1, 1),
     (-1, 0, 0), (0, -1, 0), (0, 0, -1), (-1, 1, 0), (-1, 0, 1), (0, -1, 1),
     (-1, 1, -1)], dtype=np.int64)

LOCAL_EDGES_2D = [(0, 1), (0, 2), (1, 2)]
LOCAL_EDGES_3D = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
# Face i is opposite local vertex i.
LOCAL_FACES_3D = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]


class PrimitiveKind(IntEnum):
    VERTEX = 0
    EDGE = 1
    FACE = 2      # 3D only
    VOLUME = 3    # element interior (both dimensions)


class MeshFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# macro mesh
# ---------------------------------------------------------------------------

def _unique_rows(rows: np.ndarray):
    """Sorted unique rows plus the inverse map."""
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inverse.reshape(rows.shape[0], -1)


class MacroMesh:
    """Conforming simplicial mesh given by vertices and element connectivity.

    Elements are reoriented on construction so that every element has
    positive volume.  Entity tables (edges, and faces in 3D) are derived with
    vertices sorted ascending; boundary entities are those contained in a
    (d-1)-face incident to exactly one element.
    """

    def __init__(self, vertices, elements, dim=None):
        vertices = np.asarray(vertices, dtype=np.float64)
        elements = np.asarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshFormatError("vertices must be (n, 2) or (n, 3)")
        self.dim = int(dim if dim is not None else vertices.shape[1])
        if vertices.shape[1] != self.dim:
            raise MeshFormatError("vertex coordinate count does not match DIM")
        if elements.ndim != 2 or elements.shape[1] != self.dim + 1:
            raise MeshFormatError(
                f"elements must have {self.dim + 1} vertex indices each")
        self.vertices = vertices
        self.elements = elements.copy()
        self._validate_and_orient()
        self._build_entities()

    # -- construction helpers ------------------------------------------------

    def _validate_and_orient(self):
        nv = len(self.vertices)
        if self.elements.min(initial=0) < 0 or self.elements.max(initial=-1) >= nv:
            raise MeshFormatError("element vertex index out of range")
        for m, conn in enumerate(self.elements):
            if len(set(conn.tolist())) != self.dim + 1:
                raise MeshFormatError(f"element {m} repeats a vertex")
        vol = self.signed_volumes()
        if np.any(vol == 0.0):
            bad = int(np.nonzero(vol == 0.0)[0][0])
            raise MeshFormatError(f"element {bad} is degenerate (zero volume)")
        flip = vol < 0
        if np.any(flip):
            cols = self.elements[flip]
            cols[:, [0, 1]] = cols[:, [1, 0]]
            self.elements[flip] = cols

    def signed_volumes(self):
        v = self.vertices[self.elements]
        e = v[:, 1:] - v[:, :1]
        if self.dim == 2:
            det = e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0]
            return det / 2.0
        det = np.linalg.det(e)
        return det / 6.0

    def _build_entities(self):
        elems = self.elements
        nv = len(self.vertices)
        local_edges = LOCAL_EDGES_2D if self.dim == 2 else LOCAL_EDGES_3D
        pairs = np.sort(elems[:, local_edges], axis=2).reshape(-1, 2)
        self.edges, inv = _unique_rows(pairs)
        self.elem_edges = inv.reshape(len(elems), len(local_edges))

        if self.dim == 3:
            tri = np.sort(elems[:, LOCAL_FACES_3D], axis=2).reshape(-1, 3)
            self.faces, finv = _unique_rows(tri)
            self.elem_faces = finv.reshape(len(elems), 4)
            counts = np.bincount(self.elem_faces.ravel(), minlength=len(self.faces))
            if counts.max(initial=0) > 2:
                raise MeshFormatError("non-conforming mesh: face shared by >2 elements")
            self.boundary_face = counts == 1
            self.boundary_vertex = np.zeros(nv, dtype=bool)
            self.boundary_vertex[self.faces[self.boundary_face].ravel()] = True
            # edge is boundary iff contained in a boundary face
            bkey = set()
            for f in self.faces[self.boundary_face]:
                a, b, c = f
                bkey.update({(a, b), (a, c), (b, c)})
            self.boundary_edge = np.array(
                [tuple(e) in bkey for e in self.edges], dtype=bool)
        else:
            counts = np.bincount(self.elem_edges.ravel(), minlength=len(self.edges))
            if counts.max(initial=0) > 2:
                raise MeshFormatError("non-conforming mesh: edge shared by >2 elements")
            self.boundary_edge = counts == 1
            self.boundary_vertex = np.zeros(nv, dtype=bool)
            self.boundary_vertex[self.edges[self.boundary_edge].ravel()] = True
            self.faces = np.zeros((0, 3), dtype=np.int64)
            self.elem_faces = np.zeros((len(elems), 0), dtype=np.int64)
            self.boundary_face = np.zeros(0, dtype=bool)

        enc = self.edges[:, 0] * nv + self.edges[:, 1]
        self._edge_key = enc
        if self.dim == 3:
            f = self.faces
            self._face_key = (f[:, 0] * nv + f[:, 1]) * nv + f[:, 2]

    # -- lookups ---------------------------------------------------------------

    def edge_index(self, a, b):
        a, b = (a, b) if a < b else (b, a)
        key = a * len(self.vertices) + b
        i = np.searchsorted(self._edge_key, key)
        if i >= len(self._edge_key) or self._edge_key[i] != key:
            raise KeyError(f"no edge ({a}, {b})")
        return int(i)

    def face_index(self, tri):
        a, b, c = sorted(tri)
        nv = len(self.vertices)
        key = (a * nv + b) * nv + c
        i = np.searchsorted(self._face_key, key)
        if i >= len(self._face_key) or self._face_key[i] != key:
            raise KeyError(f"no face {tri}")
        return int(i)

    @property
    def n_elements(self):
        return len(self.elements)

    def element_scale(self):
        """Mean element length scale (d! * mean volume)**(1/d)."""
        fac = 2.0 if self.dim == 2 else 6.0
        return float((fac * np.abs(self.signed_volumes()).mean()) ** (1.0 / self.dim))


def load_macro_mesh(source) -> MacroMesh:
    """Parse the plain-text mesh format.

    Line 1: ``DIM d``; then ``VERTICES n`` followed by n coordinate lines;
    then ``ELEMENTS m`` followed by m 0-based index lines.  Blank lines and
    ``#`` comments are allowed anywhere.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        try:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        except (OSError, ValueError):
            text = str(source)

    lines = []
    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((no, body))

    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"unexpected end of file while reading {what}")
        item = lines[pos]
        pos += 1
        return item

    no, head = take("DIM header")
    parts = head.split()
    if len(parts) != 2 or parts[0].upper() != "DIM":
        raise MeshFormatError(f"line {no}: expected 'DIM d', got {head!r}")
    dim = int(parts[1])
    if dim not in (2, 3):
        raise MeshFormatError(f"line {no}: DIM must be 2 or 3")

    no, head = take("VERTICES header")
    parts = head.split()
    if len(parts) != 2 or parts[0].upper() != "VERTICES":
        raise MeshFormatError(f"line {no}: expected 'VERTICES n', got {head!r}")
    nv = int(parts[1])
    verts = np.empty((nv, dim))
    for i in range(nv):
        no, body = take("vertex coordinates")
        vals = body.split()
        if len(vals) != dim:
            raise MeshFormatError(f"line {no}: expected {dim} coordinates")
        verts[i] = [float(v) for v in vals]

    no, head = take("ELEMENTS header")
    parts = head.split()
    if len(parts) != 2 or parts[0].upper() != "ELEMENTS":
        raise MeshFormatError(f"line {no}: expected 'ELEMENTS m', got {head!r}")
    ne = int(parts[1])
    elems = np.empty((ne, dim + 1), dtype=np.int64)
    for i in range(ne):
        no, body = take("element indices")
        vals = body.split()
        if len(vals) != dim + 1:
            raise MeshFormatError(f"line {no}: expected {dim + 1} vertex indices")
        elems[i] = [int(v) for v in vals]

    if pos != len(lines):
        no, body = lines[pos]
        raise MeshFormatError(f"line {no}: trailing content {body!r}")
    return MacroMesh(verts, elems, dim=dim)


# ---------------------------------------------------------------------------
# built-in meshes
# ---------------------------------------------------------------------------

def reference_simplex(dim) -> MacroMesh:
    """Unit reference triangle / tetrahedron as a one-element mesh."""
    if dim == 2:
        return MacroMesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
    return MacroMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)],
                     [(0, 1, 2, 3)])


def unit_square() -> MacroMesh:
    """Unit square split along the main diagonal into two triangles."""
    return MacroMesh([(0, 0), (1, 0), (1, 1), (0, 1)],
                     [(0, 1, 2), (0, 2, 3)])


def unit_square_regular(k: int, diag: str = "ur") -> MacroMesh:
    """Regular k-by-k triangulated unit square (2*k*k elements)."""
    xs = np.linspace(0.0, 1.0, k + 1)
    vx, vy = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([vx.ravel(), vy.ravel()])
    elems = []
    for j in range(k):
        for i in range(k):
            ll = j * (k + 1) + i
            lr, ul, ur = ll + 1, ll + (k + 1), ll + (k + 2)
            if diag == "ur":
                elems += [(ll, lr, ur), (ll, ur, ul)]
            elif diag == "ul":
                elems += [(lr, ur, ul), (lr, ul, ll)]
            else:
                raise ValueError("diag must be 'ur' or 'ul'")
    return MacroMesh(verts, elems)


def unit_cube_6() -> MacroMesh:
    """Unit cube split into 6 tetrahedra sharing the (0,0,0)-(1,1,1) diagonal."""
    corners = [(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)]
    cid = {c: i for i, c in enumerate(corners)}

    def idx(p):
        return cid[tuple(int(v) for v in p)]

    elems = []
    axes = np.eye(3, dtype=int)
    for perm in itertools.permutations(range(3)):
        a = axes[perm[0]]
        b = a + axes[perm[1]]
        elems.append((idx((0, 0, 0)), idx(a), idx(b), idx((1, 1, 1))))
    return MacroMesh(np.array(corners, dtype=float), elems)


def unit_cube_12() -> MacroMesh:
    """Unit cube split into 12 tetrahedra around the center vertex."""
    corners = [(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)]
    verts = np.array(corners + [(0.5, 0.5, 0.5)], dtype=float)
    c = 8
    # faces as cyclic corner quadruples (x+2y+4z indexing)
    quads = [
        (0, 2, 6, 4),  # x = 0
        (1, 3, 7, 5),  # x = 1
        (0, 1, 5, 4),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 1, 3, 2),  # z = 0
        (4, 5, 7, 6),  # z = 1
    ]
    elems = []
    for q0, q1, q2, q3 in quads:
        elems.append((q0, q1, q2, c))
        elems.append((q0, q2, q3, c))
    return MacroMesh(verts, elems)


def obtuse_square() -> MacroMesh:
    """Unit square with two obtuse macro elements.

    The two interior elements have their largest angle (about 117 degrees) at
    the mid-side vertices, which makes the associated reference-stencil
    entries positive; the sharp coefficient fronts used by the eigenvalue
    study run straight through the upper obtuse element.
    """
    verts = [(0, 0), (1, 0), (1, 0.5), (1, 1), (0, 1), (0, 0.5)]
    elems = [(0, 1, 2), (0, 2, 3), (0, 3, 5), (3, 4, 5)]
    return MacroMesh(verts, elems)


def obtuse_kite_band(cols: int = 5, rows: int = 4, step: float = 0.313,
                     aspect: float = 1.15, tau: float = -0.17) -> MacroMesh:
    """Strip of right triangles with one flipped-diagonal kite in the middle.

    The strip is a cols-by-rows grid of squares rotated 45 degrees so that
    its long axis follows the line y = x + 0.2; each square is split along
    the same diagonal into two right triangles.  Around the center cell pair
    the local grid vertex is dropped and the hole is covered by a kite whose
    splitting diagonal runs across the strip instead of along it.  That
    produces exactly two obtuse elements (the last two in the element list,
    apex angle 2*atan(aspect)) while every other element keeps a right
    angle, so only the kite pair can carry positive off-center stencil
    entries.

    step is the in-strip grid spacing, aspect stretches the strip in the
    cross direction, and tau shifts the whole strip by tau*step*aspect
    across the line y = x + 0.2 (the kite diagonal straddles that line for
    |tau| < 1).  The defaults are the coordinates used by the eigenvalue
    study; they were tuned so the indefiniteness of the scaled operator and
    its cure are both visible within six refinement levels.
    """
    if cols < 4 or rows < 2 or rows % 2:
        raise ValueError("need cols >= 4 and even rows >= 2")
    half = rows // 2
    e_along = np.array([1.0, 1.0]) / np.sqrt(2.0)
    e_across = np.array([-1.0, 1.0]) / np.sqrt(2.0)
    origin = np.array([0.3, 0.5]) + tau * step * aspect * e_across
    i0 = (cols - 1) // 2

    pts, imap = [], {}
    for k in range(-half, half + 1):
        for i in range(cols + 1):
            if (i, k) == (i0 + 1, 0):
                continue  # the kite replaces this vertex's patch
            imap[(i, k)] = len(pts)
            pts.append(origin + i * step * e_along
                       + k * step * aspect * e_across)

    def idx(i, k):
        return imap[(i, k)]

    elems = []
    for k in range(-half, half):
        for i in range(cols):
            if k == -1 and i == i0:
                elems.append((idx(i, k), idx(i + 1, k), idx(i, k + 1)))
            elif k == -1 and i == i0 + 1:
                elems.append((idx(i, k), idx(i + 1, k), idx(i + 1, k + 1)))
            elif k == 0 and i == i0:
                elems.append((idx(i, k), idx(i + 1, k + 1), idx(i, k + 1)))
            elif k == 0 and i == i0 + 1:
                elems.append((idx(i + 1, k), idx(i + 1, k + 1), idx(i, k + 1)))
            else:
                a, b = idx(i, k), idx(i + 1, k)
                c, d = idx(i + 1, k + 1), idx(i, k + 1)
                elems.append((a, b, c))
                elems.append((a, c, d))
    p, q = idx(i0 + 1, -1), idx(i0 + 1, 1)
    r1, r2 = idx(i0, 0), idx(i0 + 2, 0)
    elems.append((p, q, r1))
    elems.append((p, q, r2))
    return MacroMesh(np.array(pts), elems)


def cylinder_shell_box(nr: int = 1, na: int = 6, nz: int = 8,
                       r1: float = 0.8, r2: float = 1.0,
                       z1: float = 4.0) -> MacroMesh:
    """Reference box (r1,r2) x (0,pi) x (0,z1) as nr*na*nz blocks of 6 tets."""
    xs = np.linspace(r1, r2, nr + 1)
    ys = np.linspace(0.0, np.pi, na + 1)
    zs = np.linspace(0.0, z1, nz + 1)

    def vid(i, j, k):
        return i + (nr + 1) * (j + (na + 1) * k)

    verts = np.array([(xs[i], ys[j], zs[k])
                      for k in range(nz + 1)
                      for j in range(na + 1)
                      for i in range(nr + 1)], dtype=float)
    axes = np.eye(3, dtype=int)
    elems = []
    for k in range(nz):
        for j in range(na):
            for i in range(nr):
                o = np.array([i, j, k])
                for perm in itertools.permutations(range(3)):
                    a = o + axes[perm[0]]
                    b = a + axes[perm[1]]
                    elems.append((vid(*o), vid(*a), vid(*b), vid(*(o + 1))))
    return MacroMesh(verts, elems)


# ---------------------------------------------------------------------------
# barycentric lattices
# ---------------------------------------------------------------------------

class SimplexLattice:
    """Index bookkeeping for the barycentric lattice of one d-simplex.

    Nodes are integer tuples with nonnegative entries summing to at most n;
    flat order is k-major then j then i (j-major then i in 2D).
    """

    def __init__(self, dim: int, n: int):
        if n < 0:
            raise ValueError("lattice size must be >= 0")
        self.dim, self.n = dim, n
        if dim == 2:
            row = n + 1 - np.arange(n + 1)
            starts = np.concatenate([[0], np.cumsum(row)])
            self.size = int(starts[-1])
            self.base = starts[:-1].astype(np.int64)
            jj = np.repeat(np.arange(n + 1), row)
            ii = np.arange(self.size) - self.base[jj]
            self.coords = np.column_stack([ii, jj])
        elif dim == 3:
            base = np.full((n + 1, n + 1), -1, dtype=np.int64)
            off = 0
            ii = np.empty(0, dtype=np.int64)
            parts = []
            for k in range(n + 1):
                for j in range(n + 1 - k):
                    ln = n + 1 - k - j
                    base[k, j] = off
                    parts.append((k, j, ln))
                    off += ln
            self.size = off
            self.base = base
            kk = np.concatenate([np.full(ln, k) for k, j, ln in parts]) \
                if parts else np.empty(0, np.int64)
            jj = np.concatenate([np.full(ln, j) for k, j, ln in parts]) \
                if parts else np.empty(0, np.int64)
            ii = np.concatenate([np.arange(ln) for k, j, ln in parts]) \
                if parts else np.empty(0, np.int64)
            self.coords = np.column_stack([ii, jj, kk]).astype(np.int64)
        else:
            raise ValueError("dim must be 2 or 3")

    def index(self, pts):
        """Flat index of lattice points given as (..., dim) integer array."""
        pts = np.asarray(pts, dtype=np.int64)
        if self.dim == 2:
            return self.base[pts[..., 1]] + pts[..., 0]
        return self.base[pts[..., 2], pts[..., 1]] + pts[..., 0]


# ---------------------------------------------------------------------------
# fine elements (lattice coordinates), red refinement
# ---------------------------------------------------------------------------

# index set: 0..d are vertices, the rest are edge midpoints in LOCAL_EDGES order
_RED_2D = [(0, 3, 4), (3, 1, 5), (4, 5, 2), (3, 5, 4)]
_BEY_3D = [
    (0, 4, 5, 6), (4, 1, 7, 8), (5, 7, 2, 9), (6, 8, 9, 3),
    (4, 5, 6, 8), (4, 5, 7, 8), (5, 6, 8, 9), (5, 7, 8, 9),
]


def _children(tets: np.ndarray, dim: int) -> np.ndarray:
    v = tets
    if dim == 2:
        mids = [(v[:, a] + v[:, b]) // 2 for a, b in LOCAL_EDGES_2D]
        pool = np.stack([v[:, 0], v[:, 1], v[:, 2]] + mids, axis=1)
        pat = _RED_2D
    else:
        mids = [(v[:, a] + v[:, b]) // 2 for a, b in LOCAL_EDGES_3D]
        pool = np.stack([v[:, i] for i in range(4)] + mids, axis=1)
        pat = _BEY_3D
    out = np.concatenate([pool[:, p] for p in pat], axis=0)
    return out


@lru_cache(maxsize=None)
def lattice_elements(dim: int, level: int, shell_only: bool = False):
    """Fine elements of the reference lattice at ``2**level`` subdivisions.

    Returns an int array (nt, d+1, d) of lattice vertex coordinates.  With
    ``shell_only`` the recursion prunes sub-trees that cannot touch the macro
    boundary, keeping only elements with at least one vertex on it.
    """
    n = 1 << level
    if dim == 2:
        tets = np.array([[(0, 0), (n, 0), (0, n)]], dtype=np.int64)
    else:
        tets = np.array([[(0, 0, 0), (n, 0, 0), (0, n, 0), (0, 0, n)]],
                        dtype=np.int64)
    for _ in range(level):
        tets = _children(tets, dim)
        if shell_only:
            bary_last = n - tets.sum(axis=2)
            mins = np.minimum(tets.min(axis=(1, 2)), bary_last.min(axis=1))
            tets = tets[mins == 0]
    tets.setflags(write=False)
    return tets


# ---------------------------------------------------------------------------
# refined grid
# ---------------------------------------------------------------------------

class RefinedGrid:
    """One uniform refinement level of a macro mesh with global numbering."""

    def __init__(self, macro: MacroMesh, level: int):
        if level < 0:
            raise ValueError("level must be >= 0")
        self.macro = macro
        self.level = level
        self.dim = macro.dim
        self.n = 1 << level
        self.lat = SimplexLattice(self.dim, self.n)
        self._number_nodes()
        self._build_coords()
        self._build_gidx()
        self._build_dirichlet()

    # -- numbering -------------------------------------------------------------

    def _number_nodes(self):
        m, n = self.macro, self.n
        nv = len(m.vertices)
        n_edge = max(n - 1, 0)
        n_face = (n - 1) * (n - 2) // 2 if n >= 2 else 0
        if self.dim == 3:
            n_vol = (n - 1) * (n - 2) * (n - 3) // 6 if n >= 3 else 0
        else:
            n_vol = n_face
            n_face = 0
        self.nodes_per_edge = n_edge
        self.nodes_per_face = n_face
        self.nodes_per_volume = n_vol

        off = nv
        self.edge_start = off + np.arange(len(m.edges), dtype=np.int64) * n_edge
        off += len(m.edges) * n_edge
        self.face_start = off + np.arange(len(m.faces), dtype=np.int64) * n_face
        off += len(m.faces) * n_face
        self.vol_start = off + np.arange(m.n_elements, dtype=np.int64) * n_vol
        off += m.n_elements * n_vol
        self.n_nodes = off
        # nodes below this id live on macro-element boundaries
        self.n_surface_nodes = int(self.vol_start[0]) if m.n_elements else off

        kind = np.empty(self.n_nodes, dtype=np.int8)
        owner = np.empty(self.n_nodes, dtype=np.int64)
        kind[:nv] = PrimitiveKind.VERTEX
        owner[:nv] = np.arange(nv)
        for e in range(len(m.edges)):
            s = self.edge_start[e]
            kind[s:s + n_edge] = PrimitiveKind.EDGE
            owner[s:s + n_edge] = e
        for f in range(len(m.faces)):
            s = self.face_start[f]
            kind[s:s + n_face] = PrimitiveKind.FACE
            owner[s:s + n_face] = f
        for t in range(m.n_elements):
            s = self.vol_start[t]
            kind[s:s + n_vol] = PrimitiveKind.VOLUME
            owner[s:s + n_vol] = t
        self.node_kind = kind
        self.node_owner = owner

    # -- canonical coordinates ---------------------------------------------------

    def _build_coords(self):
        m, n, d = self.macro, self.n, self.dim
        V = m.vertices
        coords = np.empty((self.n_nodes, d))
        coords[:len(V)] = V
        t = np.arange(1, n) / n if n > 1 else np.empty(0)
        for e, (a, b) in enumerate(m.edges):
            s = self.edge_start[e]
            coords[s:s + self.nodes_per_edge] = V[a] + np.outer(t, V[b] - V[a])
        if self.nodes_per_face:
            ilat = SimplexLattice(2, n - 3)
            st = ilat.coords + 1  # interior (s,t) pairs in rank order
            for f, (a, b, c) in enumerate(m.faces):
                s = self.face_start[f]
                coords[s:s + self.nodes_per_face] = (
                    V[a]
                    + st[:, :1] / n * (V[b] - V[a])
                    + st[:, 1:] / n * (V[c] - V[a]))
        if self.nodes_per_volume:
            ilat = SimplexLattice(d, n - (d + 1))
            ijk = ilat.coords + 1
            for t_, conn in enumerate(m.elements):
                s = self.vol_start[t_]
                E = V[conn[1:]] - V[conn[0]]
                coords[s:s + self.nodes_per_volume] = V[conn[0]] + (ijk @ E) / n
        self.node_coords = coords

    # -- per-element lattice -> global map ----------------------------------------

    def _build_gidx(self):
        m, n, d = self.macro, self.n, self.dim
        lat = self.lat
        pts = lat.coords  # (size, d)
        # bary[v] is the integer barycentric coordinate w.r.t. local vertex v
        bary = np.empty((d + 1, lat.size), dtype=np.int64)
        bary[0] = n - pts.sum(axis=1)
        for a in range(d):
            bary[a + 1] = pts[:, a]
        pos = bary > 0
        cnt = pos.sum(axis=0)

        face_ilat = SimplexLattice(2, n - 3) if (d == 3 and n >= 3) else None
        vol_ilat = SimplexLattice(d, n - (d + 1)) if n >= d + 1 else None

        gidx = np.empty((m.n_elements, lat.size), dtype=np.int64)
        is_vert = cnt == 1
        which_vert = np.argmax(pos[:, is_vert], axis=0)
        is_vol = cnt == d + 1
        vol_rank = vol_ilat.index(pts[is_vol] - 1) if vol_ilat is not None else None

        for t, conn in enumerate(m.elements):
            g = gidx[t]
            g[is_vert] = conn[which_vert]
            for p in range(d + 1):
                for q in range(p + 1, d + 1):
                    sel = pos[p] & pos[q] & (cnt == 2)
                    if not sel.any():
                        continue
                    gp, gq = int(conn[p]), int(conn[q])
                    e = m.edge_index(gp, gq)
                    hi = q if gq > gp else p
                    g[sel] = self.edge_start[e] + bary[hi, sel] - 1
            if d == 3:
                for lv in LOCAL_FACES_3D:
                    sel = pos[lv[0]] & pos[lv[1]] & pos[lv[2]] & (cnt == 3)
                    if not sel.any():
                        continue
                    globs = [int(conn[l]) for l in lv]
                    order = np.argsort(globs, kind="stable")
                    lb, lc = lv[order[1]], lv[order[2]]
                    f = m.face_index(globs)
                    rank = face_ilat.index(
                        np.column_stack([bary[lb, sel] - 1, bary[lc, sel] - 1]))
                    g[sel] = self.face_start[f] + rank
            if vol_rank is not None:
                g[is_vol] = self.vol_start[t] + vol_rank
        self.elem_gidx = gidx

    # -- boundary conditions -------------------------------------------------------

    def _build_dirichlet(self):
        m = self.macro
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[:len(m.vertices)] = m.boundary_vertex
        ne_ = self.nodes_per_edge
        for e in np.nonzero(m.boundary_edge)[0]:
            s = self.edge_start[e]
            mask[s:s + ne_] = True
        nf = self.nodes_per_face
        for f in np.nonzero(m.boundary_face)[0]:
            s = self.face_start[f]
            mask[s:s + nf] = True
        self.dirichlet_mask = mask
        self.interior_ids = np.nonzero(~mask)[0]

    # -- queries -------------------------------------------------------------------

    @property
    def n_interior(self) -> int:
        return len(self.interior_ids)

    def fine_elements(self, t: int, shell_only: bool = False) -> np.ndarray:
        """Global node ids of the fine elements inside macro element t."""
        le = lattice_elements(self.dim, self.level, shell_only)
        return self.elem_gidx[t][self.lat.index(le)]

    def macro_h(self, t: int) -> float:
        """Longest fine edge length in macro element t."""
        conn = self.macro.elements[t]
        V = self.macro.vertices[conn]
        pairs = LOCAL_EDGES_2D if self.dim == 2 else LOCAL_EDGES_3D
        lengths = [np.linalg.norm(V[a] - V[b]) for a, b in pairs]
        return max(lengths) / self.n

    def h_ref(self) -> float:
        """Nominal mesh width 2**-level times the mean macro element scale."""
        return self.macro.element_scale() / self.n


def refine_uniform(mesh: MacroMesh, level: int) -> RefinedGrid:
    return RefinedGrid(mesh, level)


def classify_primitives(grid: RefinedGrid):
    """Node-count summary per owner kind, useful for sanity checks."""
    kinds, counts = np.unique(grid.node_kind, return_counts=True)
    return {PrimitiveKind(int(k)).name.lower(): int(c)
            for k, c in zip(kinds, counts)}


def neighborhood(grid: RefinedGrid, t: int) -> np.ndarray:
    """Physical offsets of the stencil neighbors of an interior node of t.

    Offsets are the lattice directions mapped through the macro element's
    affine coordinate frame and scaled by the refinement width.
    """
    conn = grid.macro.elements[t]
    V = grid.macro.vertices[conn]
    E = V[1:] - V[0]
    dirs = DIRS_2D if grid.dim == 2 else DIRS_3D
    return (dirs @ E) / grid.n
