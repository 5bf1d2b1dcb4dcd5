"""NARF grid files, CSV export and 16-bit PGM heatmaps.

A NARF file is one UTF-8 JSON header line followed by raw little-endian
float64 ``(re, im)`` pairs.  Grid fields are written row-major over grid rows
(``x1`` index), grid columns (``x2`` index), matrix row, matrix column.
Sinograms use offsets in place of grid rows and angles in place of columns.
Gauge fields store their three components ``A1, A2, A0`` one after another.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .gauge_field import GaugeField, GridSpec, MatrixField
from .ray_transport import Sinogram


def _header(grid: GridSpec, shape, kind: str, **extra) -> dict:
    rows, cols = shape[-2:]
    head = {"narf": 1, "n": grid.n, "m": rows, "rows": rows, "cols": cols,
            "R": grid.R, "half_extent": grid.half_extent, "kind": kind}
    head.update(extra)
    return head


def _write(path, head: dict, values: np.ndarray) -> None:
    data = np.ascontiguousarray(values, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write((json.dumps(head, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(data.view("<f8").tobytes())


def write_field(path, f: MatrixField, kind: str = "field") -> None:
    _write(path, _header(f.grid, f.values.shape, kind, layout="grid"), f.values)


def write_gauge(path, A: GaugeField, kind: str = "gauge") -> None:
    c = complex(A.coupling)
    head = _header(A.grid, A.a1.values.shape, kind, layout="grid", components=3,
                   coupling=[c.real, c.imag])
    _write(path, head, np.stack([A.a1.values, A.a2.values, A.a0.values]))


def write_sinogram(path, s: Sinogram, grid: GridSpec) -> None:
    head = _header(grid, s.values.shape, s.kind, layout="sinogram",
                   offsets=[float(v) for v in s.offsets], angles=[float(v) for v in s.angles])
    _write(path, head, s.values)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        head = json.loads(fh.readline().decode("utf-8"))
    if head.get("narf") != 1:
        raise ValueError(f"{path}: not a NARF v1 file")
    return head


def read(path):
    """Load a NARF file as a MatrixField, GaugeField or Sinogram."""
    with open(path, "rb") as fh:
        head = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    if head.get("narf") != 1:
        raise ValueError(f"{path}: not a NARF v1 file")
    data = np.frombuffer(raw, dtype="<f8").astype(float).view(np.complex128)
    grid = GridSpec(head["n"], head["R"], head["half_extent"])
    rows, cols = head["rows"], head["cols"]
    if head.get("layout") == "sinogram":
        offsets = np.asarray(head["offsets"])
        angles = np.asarray(head["angles"])
        vals = data.reshape(len(offsets), len(angles), rows, cols)
        return Sinogram(offsets, angles, vals, head["kind"])
    ncomp = head.get("components", 1)
    vals = data.reshape(ncomp, grid.n, grid.n, rows, cols)
    if ncomp == 3:
        coupling = complex(*head.get("coupling", [1.0, 0.0]))
        return GaugeField(*(MatrixField(grid, v) for v in vals), coupling=coupling)
    return MatrixField(grid, vals[0])


def write_csv(path, s: Sinogram) -> None:
    rows, cols = s.values.shape[2:]
    names = [f"{p}_{i}{j}" for i in range(rows) for j in range(cols) for p in ("re", "im")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y2", "phi"] + names)
        for a, y2 in enumerate(s.offsets):
            for b, phi in enumerate(s.angles):
                v = s.values[a, b].ravel()
                w.writerow([f"{y2:.17g}", f"{phi:.17g}"]
                           + [f"{x:.17g}" for z in v for x in (z.real, z.imag)])


def write_pgm(path, values: np.ndarray) -> None:
    """16-bit binary PGM of the largest entry magnitude at each sample (rows = first axis)."""
    mag = np.abs(values).reshape(values.shape[0], values.shape[1], -1).max(axis=2)
    top = mag.max()
    img = np.zeros(mag.shape, ">u2") if top == 0 else np.round(mag / top * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialise {type(obj).__name__}")
