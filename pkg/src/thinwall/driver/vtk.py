"""Legacy ASCII VTK unstructured-grid export and a minimal reader."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import StaleFieldError
from ..mesh import SimplicialMesh
from ..objectives import DesignState

POINT_FIELDS = ("phi", "phi_tilde", "rho", "rho_tilde", "rho_bar")
_CELL_TYPE = {2: 5, 3: 10}  # VTK_TRIANGLE, VTK_TETRA
_DIM_OF_TYPE = {5: 2, 10: 3}


def _fmt(values) -> str:
    return "\n".join("%.17g" % v for v in np.asarray(values, dtype=float).ravel())


def export_vtk(state: DesignState, mesh: SimplicialMesh, path, indicator=None) -> Path:
    """Write nodes, elements, nodal design fields and the cell indicator ``w``.

    Output bytes depend only on the inputs.  ``indicator`` defaults to zeros
    when not supplied.
    """
    if state.mesh_version != mesh.version:
        raise StaleFieldError("design state is bound to a different mesh version")
    path = Path(path)
    w = np.zeros(mesh.n_elements) if indicator is None else np.asarray(indicator, dtype=float)
    if w.shape != (mesh.n_elements,):
        raise StaleFieldError("indicator length does not match the element count")
    d = mesh.dimension
    pts = np.zeros((mesh.n_nodes, 3))
    pts[:, :d] = mesh.nodes
    k = d + 1
    lines = ["# vtk DataFile Version 3.0", "thinwall design", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double",
             "\n".join(" ".join("%.17g" % c for c in row) for row in pts),
             f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}",
             "\n".join(f"{k} " + " ".join(map(str, row)) for row in mesh.elements.tolist()),
             f"CELL_TYPES {mesh.n_elements}",
             "\n".join([str(_CELL_TYPE[d])] * mesh.n_elements),
             f"POINT_DATA {mesh.n_nodes}"]
    for name in POINT_FIELDS:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(getattr(state, name))]
    lines += [f"CELL_DATA {mesh.n_elements}", "SCALARS w double 1", "LOOKUP_TABLE default", _fmt(w)]
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc.strerror or exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Parse a file written by ``export_vtk``.

    Returns a dict with ``points`` (n, 3), ``cells`` (m, k), ``cell_types``,
    ``point_data`` and ``cell_data`` (name -> array).
    """
    path = Path(path)
    try:
        tokens = path.read_text().split()
    except OSError as exc:
        raise OSError(f"cannot read VTK file {path}: {exc.strerror or exc}") from exc
    out = {"point_data": {}, "cell_data": {}}
    pos, section = 0, None

    def take(n, kind=float):
        nonlocal pos
        vals = np.array(tokens[pos:pos + n], dtype=kind)
        if len(vals) != n:
            raise ValueError(f"{path}: truncated data")
        pos += n
        return vals

    while pos < len(tokens):
        tok = tokens[pos]
        if tok == "POINTS":
            n = int(tokens[pos + 1])
            pos += 3
            out["points"] = take(3 * n).reshape(n, 3)
        elif tok == "CELLS":
            m, size = int(tokens[pos + 1]), int(tokens[pos + 2])
            pos += 3
            flat = take(size, np.int64)
            k = int(flat[0]) if m else 0
            out["cells"] = flat.reshape(m, k + 1)[:, 1:]
        elif tok == "CELL_TYPES":
            m = int(tokens[pos + 1])
            pos += 2
            out["cell_types"] = take(m, np.int64)
        elif tok in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if tok == "POINT_DATA" else "cell_data"
            out[section + "_count"] = int(tokens[pos + 1])
            pos += 2
        elif tok == "SCALARS":
            name = tokens[pos + 1]
            pos += 3
            if tokens[pos].isdigit():  # optional component count
                pos += 1
            if tokens[pos] == "LOOKUP_TABLE":
                pos += 2
            out[section][name] = take(out[section + "_count"])
        else:
            pos += 1
    if "points" not in out or "cells" not in out:
        raise ValueError(f"{path}: not an unstructured-grid VTK file")
    return out


def mesh_info(path) -> dict:
    """Summary statistics of a VTK snapshot."""
    data = read_vtk(path)
    types = data.get("cell_types", np.zeros(0, dtype=np.int64))
    dim = _DIM_OF_TYPE.get(int(types[0]), 0) if len(types) else 0
    info = {
        "points": len(data["points"]),
        "cells": len(data["cells"]),
        "dimension": dim,
        "point_arrays": sorted(data["point_data"]),
        "cell_arrays": sorted(data["cell_data"]),
    }
    if len(data["cells"]) and dim:
        x = data["points"][:, :dim][data["cells"]]
        edges = x[:, 1:] - x[:, :1]
        vol = np.abs(np.linalg.det(edges)) / (2.0 if dim == 2 else 6.0)
        info.update(volume=float(vol.sum()), min_cell_volume=float(vol.min()),
                    max_cell_volume=float(vol.max()))
    for name, vals in data["point_data"].items():
        info[f"{name}_range"] = (float(vals.min()), float(vals.max())) if len(vals) else None
    return info
