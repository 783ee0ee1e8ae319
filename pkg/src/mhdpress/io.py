"""VTK legacy ASCII fields, CSV tables, JSON reports and flat key=value run configuration."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .exceptions import ConfigError, ParseError
from .fem import Field

logger = logging.getLogger(__name__)

VTK_TETRA = 10


def vertex_values(fld):
    """Values of a field at the mesh vertices, shape (nv, ncomp).

    Continuous spaces number the vertex nodes first; broken fields are
    averaged over the cells sharing a vertex.
    """
    mesh = fld.mesh
    nv = mesh.n_vertices
    sp_ = fld.space
    if sp_.continuous:
        return fld.nodal()[:nv].copy()
    from .fem import LagrangeElement
    corners = np.eye(4)
    phi, _ = LagrangeElement(sp_.degree).evaluate(corners)
    loc = np.einsum("vl,tlc->tvc", phi, fld._local())
    acc = np.zeros((nv, sp_.ncomp))
    cnt = np.zeros(nv)
    np.add.at(acc, mesh.tets.ravel(), loc.reshape(-1, sp_.ncomp))
    np.add.at(cnt, mesh.tets.ravel(), 1.0)
    return acc / cnt[:, None]


def write_vtk(path, mesh, point_data, title="mhdpress"):
    """Write an unstructured tetrahedral grid with point data.

    ``point_data`` maps names to Fields or arrays of shape (nv,) / (nv, 3).
    """
    nv, nt = mesh.n_vertices, mesh.n_tets
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, mesh.vertices, fmt="%.17g")
        fh.write(f"CELLS {nt} {5 * nt}\n")
        np.savetxt(fh, np.hstack([np.full((nt, 1), 4), mesh.tets]), fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, VTK_TETRA), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
        for name, val in point_data.items():
            arr = vertex_values(val) if isinstance(val, Field) else np.asarray(val, dtype=float)
            arr = arr.reshape(nv, -1)
            if arr.shape[1] == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            elif arr.shape[1] == 3:
                fh.write(f"VECTORS {name} double\n")
            else:
                raise ValueError(f"point data {name!r} must have 1 or 3 components")
            np.savetxt(fh, arr, fmt="%.17g")
    return path


@dataclass
class VTKGrid:
    points: np.ndarray
    cells: np.ndarray
    point_data: dict = field(default_factory=dict)
    title: str = ""


def read_vtk(path):
    """Read back what :func:`write_vtk` produces (legacy ASCII, tetrahedra only)."""
    with open(path) as fh:
        tokens_by_line = [ln.split() for ln in fh.read().splitlines()]
    if not tokens_by_line or not tokens_by_line[0] or tokens_by_line[0][0] != "#":
        raise ParseError(f"{path}: not a legacy VTK file")
    title = " ".join(tokens_by_line[1])
    flat = [t for ln in tokens_by_line[2:] for t in ln]
    pos = 0

    def take(n, conv=float):
        nonlocal pos
        out = [conv(x) for x in flat[pos:pos + n]]
        if len(out) != n:
            raise ParseError(f"{path}: truncated data")
        pos += n
        return out

    points = cells = None
    data = {}
    nv = 0
    try:
        while pos < len(flat):
            key = flat[pos]
            pos += 1
            if key in ("ASCII", "DATASET", "UNSTRUCTURED_GRID"):
                continue
            if key == "POINTS":
                nv = int(flat[pos])
                pos += 2
                points = np.array(take(3 * nv)).reshape(nv, 3)
            elif key == "CELLS":
                nc, size = int(flat[pos]), int(flat[pos + 1])
                pos += 2
                raw = np.array(take(size, int)).reshape(nc, 5)
                cells = raw[:, 1:]
            elif key == "CELL_TYPES":
                nc = int(flat[pos])
                pos += 1
                take(nc, int)
            elif key == "POINT_DATA":
                pos += 1
            elif key == "SCALARS":
                name = flat[pos]
                pos += 3
                if flat[pos] == "LOOKUP_TABLE":
                    pos += 2
                data[name] = np.array(take(nv))
            elif key == "VECTORS":
                name = flat[pos]
                pos += 2
                data[name] = np.array(take(3 * nv)).reshape(nv, 3)
            else:
                raise ParseError(f"{path}: unexpected keyword {key!r}")
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed VTK data ({exc})") from exc
    if points is None or cells is None:
        raise ParseError(f"{path}: missing POINTS or CELLS")
    return VTKGrid(points, cells, data, title)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)
    return path


def to_jsonable(v):
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, (np.floating, np.integer)):
        return to_jsonable(v.item())
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, Field):
        return f"<field {v.space!r}>"
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2)
    return path


# ---------------------------------------------------------------- configuration
@dataclass
class RunConfig:
    """Settings of a CLI run; see :func:`load_config` for the file format."""

    mesh: str | None = None
    builtin: str | None = "cube:2"
    solver: str = "linearized"
    degree: int = 2
    case: str | None = "stream-cube"
    amplitude: float = 1.0
    data: str | None = None
    tol: float = 1e-8
    max_iters: int = 50
    damping: float = 1.0
    jobs: int = 1
    out: str = "mhdpress-out"
    levels: int = 3
    start: int = 2
    filter: str | None = None

    def validate(self):
        if self.degree not in (1, 2):
            raise ConfigError(f"degree must be 1 or 2, got {self.degree}")
        if not math.isfinite(self.amplitude):
            raise ConfigError("amplitude must be finite")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.max_iters < 1 or self.jobs < 1:
            raise ConfigError("tol, max_iters and jobs must be positive")
        if self.levels < 2:
            raise ConfigError("levels must be at least 2")
        return self


def _coerce(kind, text):
    if text.lower() in ("none", ""):
        return None
    if kind in (int, "int", "int | None"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def load_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment, dashes in keys map to underscores."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        try:
            values[key] = _coerce(types[key], val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{no}: bad value for {key}: {val!r}") from exc
    return values
