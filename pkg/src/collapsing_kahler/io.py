"""Serialization of fields, forms, run logs and distance tables.

Binary layout: the 4-byte magic ``KFLD``, a little-endian uint32 header
length, a UTF-8 JSON header (domain descriptor, kind, shape, flags), then the
arrays as little-endian float64 in row-major order.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BaseDomain, BaseForm, ScalarField

__all__ = ["write_field", "read_field", "write_field_csv", "write_rows_csv", "read_rows_csv",
           "write_matrix_csv", "format_value", "atomic_write_text"]

MAGIC = b"KFLD"


def format_value(v) -> str:
    """Deterministic text form of a scalar ("%.12e" for reals)."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12e}"
    return str(v)


def atomic_write_text(path, text: str):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_field(path, obj: ScalarField | BaseForm, extra: Mapping | None = None) -> Path:
    """Write a field or form in the flat binary layout."""
    dom = obj.domain
    if isinstance(obj, ScalarField):
        header = {"type": "field", "dirichlet": obj.dirichlet}
        arrays = [obj.values]
    elif isinstance(obj, BaseForm):
        header = {"type": "form", "positive": obj.positive,
                  "singular": [[p.real, p.imag, e] for p, e in obj.singular]}
        arrays = [obj.regular_part] if obj.singular else [obj.density]
    else:
        raise TypeError("expected a ScalarField or BaseForm")
    header.update(domain=dom.descriptor(), shape=list(dom.shape), arrays=len(arrays))
    if extra:
        header["extra"] = dict(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C"))
    os.replace(tmp, path)
    return path


def read_field(path) -> tuple[ScalarField | BaseForm, dict]:
    """Read a file written by :func:`write_field`; returns the object and its header."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a field file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        shape = tuple(header["shape"])
        count = int(np.prod(shape))
        arrays = [np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
                  for _ in range(header["arrays"])]
    dom = BaseDomain.from_descriptor(header["domain"])
    if header["type"] == "field":
        return ScalarField(dom, arrays[0], dirichlet=header["dirichlet"]), header
    singular = tuple((complex(a, b), e) for a, b, e in header["singular"])
    if singular:
        return BaseForm.from_regular(dom, arrays[0], singular, positive=header["positive"]), header
    return BaseForm(dom, arrays[0], positive=header["positive"]), header


def write_field_csv(path, obj: ScalarField | BaseForm) -> Path:
    """``x,y,value`` rows for every node inside the domain."""
    dom = obj.domain
    vals = obj.values if isinstance(obj, ScalarField) else obj.density
    lines = ["x,y,value"]
    for z, v in zip(dom.s[dom.inside], vals[dom.inside]):
        lines.append(f"{format_value(z.real)},{format_value(z.imag)},{format_value(v)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def write_rows_csv(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    """Write dict rows with deterministic column order and number formatting."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(format_value(r.get(c, "")) for c in columns))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {}
        for k, v in r.items():
            try:
                d[k] = float(v)
            except (TypeError, ValueError):
                d[k] = v
        out.append(d)
    return out


def write_matrix_csv(path, matrix: np.ndarray, labels: Iterable[str] | None = None) -> Path:
    """Square distance matrix as CSV (optional label row and column)."""
    m = np.asarray(matrix, dtype=float)
    labels = [str(k) for k in range(m.shape[1])] if labels is None else list(labels)
    lines = ["," + ",".join(labels)]
    for lab, row in zip(labels, m):
        lines.append(lab + "," + ",".join(format_value(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)
