"""Desk-scale experiment drivers behind the command line runner.

Each driver takes a plain options dict (parsed key=value pairs), runs one
table-sized study serially, and returns rows for the analysis CSV schema
together with a divergence flag.  run() dispatches by experiment name and
writes the CSV files.

Levels follow the conventions of the studies they reproduce: the 3D cube
studies count levels from the third refinement of the macro mesh (their
level 1 is refinement depth 3) and the shell study from the second, while
the 2D study and the eigenvalue sweep use refinement depth directly.
"""

import math
import statistics
import time
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from . import analysis as an
from . import costmodel
from .coefficients import TensorCoefficient, catalog, sample_nodal
from .mesh import RefinedGrid, obtuse_kite_band, unit_cube_6, unit_cube_12, \
    unit_square_regular
from .multigrid import GridHierarchy, solve
from .operators import parse_hybrid_set
from .oracle import assemble_global

EXPERIMENT_NAMES = ("conv2d", "conv3d_scalar", "conv3d_tensor", "eigen2d",
                    "repro3d", "cost", "cylinder")

EIGEN_HEADER = ["case", "variant", "level", "dofs", "eta",
                "lambda_min", "lambda_max"]
OPS_HEADER = ["dim", "variant", "adds", "mults", "total"]
TRAFFIC_HEADER = ["variant", "n_nodes", "bytes_optimistic",
                  "bytes_pessimistic"]

# Fig-5(b)-style sweep over every scaled-primitive subset.
REPRO_VARIANTS = ("nodal", "hybrid:w", "hybrid:wv+we", "hybrid:wv+wf",
                  "hybrid:we+wf", "hybrid:wv", "hybrid:we", "scale_all")


def _variant_spec(token):
    """(operator variant, hybrid I-set) for a user-facing variant token."""
    fixed = {
        "nodal": ("nodal", frozenset()),
        "midpoint": ("midpoint", frozenset()),
        "scale_all": ("scaling", frozenset()),
        "ma2": ("scaling_ma2", frozenset()),
        # scale surface+volume rows except where named: volface keeps
        # vertices and edges nodal, vol keeps the whole surface nodal.
        "scale_volface": ("hybrid", parse_hybrid_set("wv+we")),
        "scale_vol": ("hybrid", parse_hybrid_set("w")),
    }
    if token in fixed:
        return fixed[token]
    if token.startswith("hybrid:"):
        return "hybrid", parse_hybrid_set(token[len("hybrid:"):])
    raise ValueError(f"unknown variant token {token!r}")


def _as_list(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _levels(opts, default):
    vals = _as_list(opts.get("levels"))
    return [int(v) for v in (vals if vals is not None else default)]


def _variants(opts, default):
    vals = _as_list(opts.get("variants"))
    return [str(v) for v in (vals if vals is not None else default)]


def _timed(fn, timing):
    """(result, seconds or None): median of 3 wall times when requested.

    With timing off the work runs once and the tts column stays empty,
    which keeps repeated runs byte-identical.
    """
    if not timing:
        return fn(), None
    samples = []
    result = None
    for _ in range(3):
        t0 = time.perf_counter()
        result = fn()
        samples.append(time.perf_counter() - t0)
    return result, statistics.median(samples)


def _direct_solve(case, grid, variant, hyb, rhs_mode):
    """Assembled sparse solve of one case with the exact boundary trace."""
    if variant == "midpoint":
        cf = case.coeff
    elif case.tensor:
        cf = TensorCoefficient(grid, case.coeff)
    else:
        cf = sample_nodal(case.coeff, grid)
    A = assemble_global(grid, variant, cf, hybrid_nodal=hyb)
    f, u0 = an.dirichlet_system(case, grid, rhs_mode)
    free = ~grid.dirichlet_mask
    rhs = f[free] - A[free][:, ~free] @ u0[~free]
    u = u0.copy()
    u[free] = spla.spsolve(A[free][:, free].tocsc(), rhs)
    return u


def _blank_row(case, variant, level, dofs):
    row = {k: None for k in an.CSV_HEADER}
    row.update(case=case, variant=variant, level=level, dofs=dofs)
    return row


def _flop_cols(rep):
    """(adds, mults) or empty cells; tensor kernels are not counted."""
    if rep.flops_add == 0 and rep.flops_mul == 0:
        return None, None
    return rep.flops_add, rep.flops_mul


def _fill_eoc(rows, err_key, eoc_key):
    errs = [row[err_key] for row in rows]
    if len(errs) < 2:
        return
    for row, rate in zip(rows[1:], an.eoc(errs)):
        row[eoc_key] = None if math.isnan(rate) else float(rate)


def conv2d(opts):
    """2D convergence sweep over an oscillatory scalar coefficient.

    Base mesh is a calibrated 7x7 grid of right triangles on the unit
    square; every level is solved exactly and error norms are integrated
    with the 5th-order rule.  The midpoint variant evaluates k at element
    barycenters, the others sample it nodally.
    """
    ms = [int(v) for v in _as_list(opts.get("m")) or (2, 4, 8)]
    levels = _levels(opts, range(0, 5))
    variants = _variants(opts, ("midpoint", "nodal", "scale_all"))
    base = int(opts.get("base", 7))
    diag = str(opts.get("diag", "ur"))
    timing = int(opts.get("timing", 0))
    macro = unit_square_regular(base, diag=diag)
    rows = []
    for m in ms:
        case = an.cases("poly2d", m=m)
        for tok in variants:
            variant, hyb = _variant_spec(tok)
            block = []
            for lvl in levels:
                grid = RefinedGrid(macro, lvl)
                u, tts = _timed(lambda: _direct_solve(
                    case, grid, variant, hyb, "quadrature2"), timing)
                nr = an.error_norms(case, u, grid, quad=True)
                row = _blank_row(f"poly2d_m{m}", tok, lvl, grid.n_interior)
                row.update(err_l2_discrete=nr.l2_discrete,
                           err_l2_quad=nr.l2_quad, err_h1=nr.h1,
                           tts_seconds=tts)
                block.append(row)
            _fill_eoc(block, "err_l2_quad", "eoc_l2")
            _fill_eoc(block, "err_h1", "eoc_h1")
            rows.extend(block)
    return rows, False


def conv3d_scalar(opts):
    """3D convergence and multigrid study with a scalar coefficient.

    Kuhn-split unit cube, V(3,3) cycles with a fixed iteration budget,
    interpolated right-hand side, discrete L2 error.  Study level L maps
    to refinement depth L+2.
    """
    ms = [int(v) for v in _as_list(opts.get("m")) or (3, 8)]
    levels = _levels(opts, range(1, 6))
    variants = _variants(opts, ("nodal", "scale_volface", "scale_all"))
    stop = str(opts.get("stop", "iters:10"))
    timing = int(opts.get("timing", 0))
    macro = unit_cube_6()
    rows = []
    diverged = False
    for m in ms:
        case = an.cases("poly3d", m=m)
        for tok in variants:
            variant, hyb = _variant_spec(tok)
            block = []
            for L in levels:
                hier = GridHierarchy(macro, L + 2, variant,
                                     coeff=case.coeff, hybrid_nodal=hyb)
                grid = hier.grids[hier.lmax]
                f, u0 = an.dirichlet_system(case, grid, "interpolate_mass")
                (u, rep), tts = _timed(
                    lambda: solve(hier, f, u0=u0, stop=stop), timing)
                diverged = diverged or rep.diverged
                nr = an.error_norms(case, u, grid, quad=False)
                row = _blank_row(f"poly3d_m{m}", tok, L, grid.n_interior)
                fa, fm = _flop_cols(rep)
                row.update(err_l2_discrete=nr.l2_discrete, rho=rep.rho,
                           iters=rep.iterations, tts_seconds=tts,
                           flops_add=fa, flops_mul=fm)
                block.append(row)
            _fill_eoc(block, "err_l2_discrete", "eoc_l2")
            rows.extend(block)
    return rows, diverged


def conv3d_tensor(opts):
    """3D tensor-coefficient study on the 12-tet cube.

    V(3,3) cycles run to a fixed residual drop; otherwise the protocol
    matches the scalar study.  Study level L maps to depth L+2.
    """
    levels = _levels(opts, range(1, 5))
    variants = _variants(opts, ("nodal", "scale_volface"))
    stop = str(opts.get("stop", "drop:1e-9"))
    timing = int(opts.get("timing", 0))
    macro = unit_cube_12()
    case = an.cases("tensor3d")
    rows = []
    diverged = False
    for tok in variants:
        variant, hyb = _variant_spec(tok)
        block = []
        for L in levels:
            hier = GridHierarchy(macro, L + 2, variant, coeff=case.coeff,
                                 hybrid_nodal=hyb, tensor=True)
            grid = hier.grids[hier.lmax]
            f, u0 = an.dirichlet_system(case, grid, "interpolate_mass")
            (u, rep), tts = _timed(
                lambda: solve(hier, f, u0=u0, stop=stop), timing)
            diverged = diverged or rep.diverged
            nr = an.error_norms(case, u, grid, quad=False)
            row = _blank_row("tensor3d", tok, L, grid.n_interior)
            fa, fm = _flop_cols(rep)
            row.update(err_l2_discrete=nr.l2_discrete, rho=rep.rho,
                       iters=rep.iterations, tts_seconds=tts,
                       flops_add=fa, flops_mul=fm)
            block.append(row)
        _fill_eoc(block, "err_l2_discrete", "eoc_l2")
        rows.extend(block)
    return rows, diverged


def _extreme_eigs(A, prev_min):
    """Extreme eigenvalues of a symmetric sparse matrix, deterministically.

    Dense solve below 5000 unknowns.  Above that, shift-invert Lanczos
    with the shift bootstrapped from the coarser level's minimum, which
    tracks lambda_min through sign changes under refinement, and a fixed
    start vector so reruns bit-match.
    """
    n = A.shape[0]
    if n <= 5000:
        w = scipy.linalg.eigvalsh(A.toarray())
        return float(w[0]), float(w[-1])
    if prev_min is None or prev_min == 0.0:
        sigma = -1.0
    elif prev_min > 0.0:
        sigma = 0.05 * prev_min
    else:
        sigma = 1.5 * prev_min
    v0 = np.full(n, 1.0 / math.sqrt(n))
    Ac = A.tocsc()
    low = spla.eigsh(Ac, k=2, sigma=sigma, which="LM", tol=1e-10, v0=v0,
                     return_eigenvectors=False)
    high = spla.eigsh(Ac, k=1, which="LA", tol=1e-10, v0=v0,
                      return_eigenvectors=False)
    return float(min(low)), float(high[0])


def eigen2d(opts):
    """Extreme stiffness eigenvalues across levels for a steep coefficient.

    An obtuse pair inside an otherwise right-angled strip lets the plain
    scaling stencil go indefinite on coarse levels; the safeguarded and
    nodal variants stay positive.  Reduced (interior) matrices only.
    """
    etas = [float(v) for v in
            _as_list(opts.get("eta")) or (1.0, 10.0, 100.0, 1000.0)]
    levels = _levels(opts, range(0, 6))
    variants = _variants(opts, ("nodal", "scale_all", "ma2"))
    m = float(opts.get("m", 50))
    macro = obtuse_kite_band()
    rows = []
    for eta in etas:
        kfn = catalog("sigmoid2d", m=m, eta=eta)
        for tok in variants:
            variant, hyb = _variant_spec(tok)
            prev = None
            for lvl in levels:
                grid = RefinedGrid(macro, lvl)
                cf = sample_nodal(kfn, grid)
                A = assemble_global(grid, variant, cf, hybrid_nodal=hyb,
                                    reduced=True)
                lmin, lmax = _extreme_eigs(A, prev)
                prev = lmin
                rows.append({"case": "sigmoid2d", "variant": tok,
                             "level": lvl, "dofs": A.shape[0], "eta": eta,
                             "lambda_min": lmin, "lambda_max": lmax})
    return rows, False


def repro3d(opts):
    """Affine-solution reproduction for every scaled-primitive subset.

    With an affine solution and affine coefficient, variants that keep
    vertices and edges nodal reproduce the solution to round-off; scaling
    those primitive rows leaves a mesh-independent defect.
    """
    lvl = int(opts.get("level", 4))
    variants = _variants(opts, REPRO_VARIANTS)
    timing = int(opts.get("timing", 0))
    macro = unit_cube_12()
    case = an.cases("affine3d")
    grid = RefinedGrid(macro, lvl)
    rows = []
    for tok in variants:
        variant, hyb = _variant_spec(tok)
        u, tts = _timed(lambda: _direct_solve(
            case, grid, variant, hyb, "interpolate_mass"), timing)
        nr = an.error_norms(case, u, grid, quad=False)
        row = _blank_row("affine3d", tok, lvl, grid.n_interior)
        row.update(err_l2_discrete=nr.l2_discrete, tts_seconds=tts)
        rows.append(row)
    return rows, False


def cylinder(opts):
    """Deformed shell solved in mapped coordinates with a blended tensor.

    The physical domain is a cylindrical shell with a sinusoidally waving
    inner wall and height-dependent material; pulling the weak form back
    to the reference box turns it into a tensor-coefficient problem on 48
    macro blocks.  Study level L maps to refinement depth L+1.
    """
    levels = _levels(opts, range(1, 5))
    variants = _variants(opts, ("nodal", "scale_all"))
    stop = str(opts.get("stop", "drop:1e-8"))
    timing = int(opts.get("timing", 0))
    case = an.cases("cylinder")
    macro = case.mesh()
    rows = []
    diverged = False
    for tok in variants:
        variant, hyb = _variant_spec(tok)
        block = []
        for L in levels:
            hier = GridHierarchy(macro, L + 1, variant, coeff=case.coeff,
                                 hybrid_nodal=hyb, tensor=True)
            grid = hier.grids[hier.lmax]
            f, u0 = an.dirichlet_system(case, grid, "interpolate_mass")
            (u, rep), tts = _timed(
                lambda: solve(hier, f, u0=u0, stop=stop), timing)
            diverged = diverged or rep.diverged
            nr = an.error_norms(case, u, grid, quad=False)
            row = _blank_row("cylinder", tok, L, grid.n_interior)
            fa, fm = _flop_cols(rep)
            row.update(err_l2_discrete=nr.l2_discrete, rho=rep.rho,
                       iters=rep.iterations, tts_seconds=tts,
                       flops_add=fa, flops_mul=fm)
            block.append(row)
        _fill_eoc(block, "err_l2_discrete", "eoc_l2")
        rows.extend(block)
    return rows, diverged


_DRIVERS = {
    "conv2d": conv2d,
    "conv3d_scalar": conv3d_scalar,
    "conv3d_tensor": conv3d_tensor,
    "eigen2d": eigen2d,
    "repro3d": repro3d,
    "cylinder": cylinder,
}


def run(name, opts=None, outdir="."):
    """Run one experiment, write its CSV output; returns (paths, diverged)."""
    if name not in EXPERIMENT_NAMES:
        raise KeyError(f"unknown experiment {name!r}; "
                       f"available: {', '.join(EXPERIMENT_NAMES)}")
    opts = dict(opts or {})
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    if name == "cost":
        n_nodes = int(float(opts.get("n_nodes", 1e6)))
        ops_path = out / "ops.csv"
        traffic_path = out / "traffic.csv"
        an.write_rows(ops_path, costmodel.operations_table(),
                      header=OPS_HEADER)
        an.write_rows(traffic_path, costmodel.traffic_table(n_nodes),
                      header=TRAFFIC_HEADER)
        return [ops_path, traffic_path], False
    rows, diverged = _DRIVERS[name](opts)
    header = EIGEN_HEADER if name == "eigen2d" else an.CSV_HEADER
    path = out / f"{name}.csv"
    an.write_rows(path, rows, header=header)
    return [path], diverged
