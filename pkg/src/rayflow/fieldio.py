"""Columnar CSV snapshots of grid fields with JSON sidecar metadata.

Numbers are written with repr-exact precision (%.17g) so a save/load
round trip reproduces the arrays bit for bit.  Complex components are
stored as paired real columns.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .grid import (ChartGrid, Christoffel3Field, CovectorField, GridField,
                   ScalarField, SymTensor2Field, VectorField, make_grid)

SCHEMA_VERSION = 1

_FIELD_TYPES = {
    "scalar": ScalarField,
    "vector": VectorField,
    "covector": CovectorField,
    "sym_tensor2": SymTensor2Field,
    "christoffel3": Christoffel3Field,
}
_TYPE_NAMES = {v: k for k, v in _FIELD_TYPES.items()}


def build_string() -> str:
    return f"rayflow-{__version__}"


def _component_labels(f: GridField) -> list[str]:
    shape = type(f).comp_shape
    if shape == ():
        labels = ["value"]
    else:
        labels = ["c" + "".join(str(i + 1) for i in idx) for idx in np.ndindex(*shape)]
    if f.is_complex:
        return [lab + suffix for lab in labels for suffix in ("_re", "_im")]
    return labels


def grid_meta(grid: ChartGrid) -> dict:
    return {
        "names": list(grid.names),
        "mins": list(grid.mins),
        "maxs": list(grid.maxs),
        "npts": list(grid.npts),
        "periodic": list(grid.periodic),
    }


def grid_from_meta(meta: dict) -> ChartGrid:
    return make_grid(meta["names"], meta["mins"], meta["maxs"], meta["npts"], meta["periodic"])


def save_field(f: GridField, basepath: str | Path) -> tuple[Path, Path]:
    """Write ``basepath.csv`` and ``basepath.json`` describing the field.

    The CSV has coordinate columns first, then component columns, rows in
    C order over grid indices.  Returns the two paths written.
    """
    base = Path(basepath)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")

    meta = {
        "schema_version": SCHEMA_VERSION,
        "build": build_string(),
        "field_type": _TYPE_NAMES[type(f)],
        "dtype": "complex" if f.is_complex else "real",
        "grid": grid_meta(f.grid),
        "components": _component_labels(f),
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    grid = f.grid
    x1, x2, x3 = grid.meshes()
    ncomp = int(np.prod(type(f).comp_shape)) if type(f).comp_shape else 1
    flat = f.data.reshape(ncomp, -1)
    cols = [x1.ravel(), x2.ravel(), x3.ravel()]
    for c in range(ncomp):
        if f.is_complex:
            cols.append(flat[c].real)
            cols.append(flat[c].imag)
        else:
            cols.append(flat[c])
    header = list(grid.names) + meta["components"]
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION} build={build_string()}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([f"{v:.17g}" for v in row])
    return csv_path, json_path


def load_field(basepath: str | Path) -> GridField:
    """Inverse of :func:`save_field`; validates metadata against the data."""
    base = Path(basepath)
    meta = json.loads(base.with_suffix(".json").read_text())
    if meta["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {meta['schema_version']}")
    grid = grid_from_meta(meta["grid"])
    cls = _FIELD_TYPES[meta["field_type"]]
    ncomp = int(np.prod(cls.comp_shape)) if cls.comp_shape else 1
    is_complex = meta["dtype"] == "complex"

    rows = []
    with open(base.with_suffix(".csv")) as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        want = list(grid.names) + meta["components"]
        if header != want:
            raise ValueError(f"CSV header {header} does not match metadata {want}")
        for row in reader:
            rows.append([float(v) for v in row])
    table = np.array(rows)
    npoints = int(np.prod(grid.shape))
    if table.shape[0] != npoints:
        raise ValueError(f"expected {npoints} rows, found {table.shape[0]}")

    vals = table[:, 3:]
    if is_complex:
        comp = vals[:, 0::2] + 1j * vals[:, 1::2]
    else:
        comp = vals
    data = comp.T.reshape(cls.comp_shape + grid.shape)
    return cls(grid, data)
