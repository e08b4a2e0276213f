"""
File formats: mesh text files, CSV reports and legacy-VTK field output.

Mesh files are plain text::

    ns-mesh 1
    vertices <n>
    <x> <y>
    ...
    cells <m>
    <a> <b> <c> [<refinement edge>]
    ...
    boundary <k>
    <a> <b> <D|NAV>
    ...

Lines starting with ``#`` are ignored. Every boundary facet must be listed.
"""
from __future__ import annotations

import csv
import math
import os
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .mesh import DIRICHLET, NAVIER, TAG_NAMES, Mesh, MeshError, check_conformity, \
    longest_edge_labels

MESH_MAGIC = "ns-mesh 1"
_TAG_CODES = {"D": DIRICHLET, "NAV": NAVIER}

REPORT_COLUMNS = ("h", "dofs", "l2_p", "rate_l2_p", "l2_u", "rate_l2_u", "h1_u", "rate_h1_u",
                  "total_error", "rate_total_error", "psi", "rate_psi", "effectivity")


def fmt_float(x) -> str:
    """17 significant digits in scientific notation; empty for missing values."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return "{:.16e}".format(x)


def fmt_rate(x) -> str:
    if x is None or math.isnan(float(x)):
        return ""
    return "{:.2f}".format(float(x))


# -- meshes ---------------------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    lines = [MESH_MAGIC, "vertices {}".format(mesh.n_vertices)]
    lines += ["{:.17g} {:.17g}".format(x, y) for x, y in mesh.vertices]
    lines.append("cells {}".format(mesh.n_cells))
    lines += ["{} {} {} {}".format(a, b, c, r)
              for (a, b, c), r in zip(mesh.cells, mesh.refinement_edge)]
    lines.append("boundary {}".format(len(mesh.boundary_facets)))
    lines += ["{} {} {}".format(a, b, TAG_NAMES[t])
              for (a, b), t in zip(mesh.boundary_facets, mesh.boundary_tags)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _section(lines, i, name, path):
    if i >= len(lines) or not lines[i].startswith(name + " "):
        raise MeshError("{}: expected '{} <count>' section".format(path, name))
    try:
        count = int(lines[i].split()[1])
    except ValueError:
        raise MeshError("{}: bad count in '{}'".format(path, lines[i])) from None
    body = lines[i + 1:i + 1 + count]
    if len(body) != count or count < 0:
        raise MeshError("{}: section '{}' is truncated".format(path, name))
    return body, i + 1 + count


def read_mesh(path) -> Mesh:
    """Read a mesh file and check conformity."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != MESH_MAGIC:
        raise MeshError("{}: missing '{}' header".format(path, MESH_MAGIC))
    vb, i = _section(lines, 1, "vertices", path)
    cb, i = _section(lines, i, "cells", path)
    bb, i = _section(lines, i, "boundary", path)
    try:
        vertices = np.array([[float(t) for t in ln.split()] for ln in vb], dtype=float)
        crow = [[int(t) for t in ln.split()] for ln in cb]
        brow = [ln.split() for ln in bb]
    except ValueError as exc:
        raise MeshError("{}: {}".format(path, exc)) from None
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("{}: vertices need two coordinates".format(path))
    if any(len(r) not in (3, 4) for r in crow):
        raise MeshError("{}: cells need three vertex indices".format(path))
    cells = np.array([r[:3] for r in crow], dtype=np.int64)
    if any(len(r) != 3 or r[2] not in _TAG_CODES for r in brow):
        raise MeshError("{}: boundary lines are '<a> <b> D|NAV'".format(path))
    facets = np.array([[int(r[0]), int(r[1])] for r in brow], dtype=np.int64).reshape(-1, 2)
    tags = np.array([_TAG_CODES[r[2]] for r in brow], dtype=np.int64)
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise MeshError("{}: cell vertex index out of range".format(path))
    if all(len(r) == 4 for r in crow):
        ref = np.array([r[3] for r in crow], dtype=np.int64)
    else:
        ref = longest_edge_labels(vertices, cells)
    mesh = Mesh(vertices, cells, facets, tags, ref)
    check_conformity(mesh)
    return mesh


# -- reports --------------------------------------------------------------------

def report_rows(entries: Sequence, rates: str = "h") -> List[dict]:
    """Rows of the convergence table from level results or adaptive records.

    ``rates`` is "h" (ratio of mesh sizes) or "dofs" (ratio of unknowns).
    """
    from .verification import rate_dofs, rate_h

    rows = [{"h": e.h_max, "dofs": e.dofs, "errors": getattr(e, "errors", None), "psi": e.psi}
            for e in entries]
    xs = [r["h"] if rates == "h" else r["dofs"] for r in rows]
    fn = rate_h if rates == "h" else rate_dofs

    def column(values):
        out = [math.nan]
        for i in range(1, len(values)):
            a, b = values[i - 1], values[i]
            if a is None or b is None or not (a > 0 and b > 0) or xs[i] == xs[i - 1]:
                out.append(math.nan)
            else:
                out.append(float(fn([a, b], [xs[i - 1], xs[i]])[0]))
        return out

    def err(name):
        return [getattr(r["errors"], name) if r["errors"] is not None else None for r in rows]

    cols = {name: err(name) for name in ("l2_p", "l2_u", "h1_u", "total_error")}
    cols["psi"] = [r["psi"] for r in rows]
    table = []
    rate_cols = {k: column(v) for k, v in cols.items()}
    eff = err("effectivity")
    for i, r in enumerate(rows):
        row = {"h": r["h"], "dofs": r["dofs"], "effectivity": eff[i]}
        for k in cols:
            row[k] = cols[k][i]
            row["rate_" + k] = rate_cols[k][i]
        table.append(row)
    return table


def write_report(path, table: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in table:
            out = []
            for c in REPORT_COLUMNS:
                v = row.get(c)
                if c == "dofs":
                    out.append(str(int(v)))
                elif c.startswith("rate_"):
                    out.append(fmt_rate(v))
                else:
                    out.append(fmt_float(v))
            w.writerow(out)


def write_slip(path, entries: Sequence) -> None:
    """``h, slip_error`` per level."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("h", "slip_error"))
        for e in entries:
            w.writerow((fmt_float(e.h_max), fmt_float(e.slip_error)))


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- fields -----------------------------------------------------------------------

# VTK quadratic triangle: vertices, then edges (0,1), (1,2), (2,0); local
# edge i of a cell is opposite vertex i, so the edge order is 2, 0, 1.
_VTK_P2_ORDER = np.array([0, 1, 2, 5, 3, 4])


def write_fields(state, path, title: str = "nsslip solution") -> None:
    """Legacy ASCII unstructured grid with point velocity and pressure."""
    space = state.space
    pts = space.node_coordinates
    conn = space.cell_dofs
    if space.degree == 1:
        cell_type = 5
    else:
        conn = conn[:, _VTK_P2_ORDER]
        cell_type = 22
    u = state.velocity
    p = state.pressure
    nc, nv = conn.shape
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", "POINTS {} double".format(len(pts))]
    out += ["{:.17g} {:.17g} 0".format(x, y) for x, y in pts]
    out.append("CELLS {} {}".format(nc, nc * (nv + 1)))
    out += [" ".join([str(nv)] + [str(i) for i in row]) for row in conn]
    out.append("CELL_TYPES {}".format(nc))
    out += [str(cell_type)] * nc
    out.append("POINT_DATA {}".format(len(pts)))
    out.append("VECTORS velocity double")
    out += ["{:.17g} {:.17g} 0".format(a, b) for a, b in u]
    out.append("SCALARS pressure double 1")
    out.append("LOOKUP_TABLE default")
    out += ["{:.17g}".format(v) for v in p]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError("cannot write field file {}: {}".format(path, exc)) from exc


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
