"""Command line experiment runner.

Usage: hhg-scale <experiment> [--config FILE] [key=value ...] [--out DIR]

Options come from an optional key=value config file, overridden by
key=value arguments on the command line.  Values parse as int, float,
inclusive ranges ("1..4"), or comma lists; anything else stays a string.
Exit status is 0 on success, 1 if a solver diverged, 2 on bad input.

A side entrance, `hhg-scale stencil dump [mesh=...] [t=...] [level=...]`,
prints the reference stencil and edge-type table of one macro element as
CSV on stdout.
"""

import argparse
import csv
import sys
from pathlib import Path

from .experiments import EXPERIMENT_NAMES, run


def _parse_value(text):
    """int | float | list | str, judged by shape."""
    text = text.strip()
    if "," in text:
        return [_parse_value(part) for part in text.split(",") if part]
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            return text
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _read_config(path):
    """key=value lines with # comments; later keys win."""
    opts = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        opts[key.strip()] = _parse_value(val)
    return opts


def _stencil_dump(opts, out=sys.stdout):
    """CSV stencil and edge-type table for one macro element."""
    from .mesh import DIRS_2D, DIRS_3D, obtuse_kite_band, unit_cube_6, \
        unit_cube_12, unit_square_regular
    from .reference_stencils import COLOR_NAMES, classify_edge_types

    meshes = {
        "square": lambda: unit_square_regular(1),
        "kite": obtuse_kite_band,
        "cube6": unit_cube_6,
        "cube12": unit_cube_12,
    }
    name = str(opts.get("mesh", "cube6"))
    if name not in meshes:
        raise ValueError(f"unknown mesh {name!r}; "
                         f"available: {', '.join(sorted(meshes))}")
    macro = meshes[name]()
    t = int(opts.get("t", 0))
    level = int(opts.get("level", 2))
    colors, s, center = classify_edge_types(macro, t, level=level)
    dirs = DIRS_2D if macro.dim == 2 else DIRS_3D
    wtr = csv.writer(out, lineterminator="\n")
    wtr.writerow(["direction", "offset", "entry", "edge_type"])
    zero = " ".join("0" for _ in range(macro.dim))
    wtr.writerow(["center", zero, repr(float(center)), ""])
    for i in range(len(dirs)):
        off = " ".join(str(int(c)) for c in dirs[i])
        wtr.writerow([i, off, repr(float(s[i])), COLOR_NAMES[int(colors[i])]])


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="hhg-scale",
        description="Run a desk-scale stencil-scaling experiment and write "
                    "its results as CSV.")
    ap.add_argument("experiment", choices=EXPERIMENT_NAMES + ("stencil",),
                    help="experiment name, or 'stencil' for the dump tool")
    ap.add_argument("params", nargs="*", metavar="key=value",
                    help="option overrides, e.g. m=3 levels=1..4 "
                         "variants=nodal,scale_all")
    ap.add_argument("--config", metavar="FILE",
                    help="key=value option file read before the overrides")
    ap.add_argument("--out", default=".", metavar="DIR",
                    help="output directory for CSV files (default: .)")
    ns = ap.parse_args(argv)

    try:
        opts = _read_config(ns.config) if ns.config else {}
        words = []
        for tok in ns.params:
            if "=" in tok:
                key, _, val = tok.partition("=")
                opts[key.strip()] = _parse_value(val)
            else:
                words.append(tok)
        if ns.experiment == "stencil":
            if words != ["dump"]:
                raise ValueError("usage: hhg-scale stencil dump [key=value ...]")
            _stencil_dump(opts)
            return 0
        if words:
            raise ValueError(f"stray arguments: {' '.join(words)}")
        paths, diverged = run(ns.experiment, opts, ns.out)
    except (KeyError, ValueError, OSError) as exc:
        print(f"hhg-scale: error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    if diverged:
        print("hhg-scale: solver diverged", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
