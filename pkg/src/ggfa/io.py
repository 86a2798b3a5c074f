"""File formats: schema sidecar, data CSV, and the versioned model file."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BINARY, CONTINUOUS, Dataset, ModelParams, Schema

FORMAT_VERSION = 1


class DataError(ValueError):
    """Malformed input file; the message carries the location."""


def fmt(v: float) -> str:
    """17 significant digits: round-trips every double exactly."""
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite value {v}")
    return format(v, ".17g")


# --------------------------------------------------------------------------
# schema sidecar: CSV with header ``name,kind``
# --------------------------------------------------------------------------


def read_schema(path) -> list[tuple[str, str]]:
    """Columns in file order; use :meth:`Schema.from_columns` for internal order."""
    cols = []
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip().lower() for c in rows[0]] != ["name", "kind"]:
        raise DataError(f"{path}: schema file must start with the header 'name,kind'")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DataError(f"{path}: line {lineno}: expected 'name,kind'")
        name, kind = row[0].strip(), row[1].strip().lower()
        if kind not in (CONTINUOUS, BINARY):
            raise DataError(f"{path}: line {lineno}: unknown kind {kind!r}")
        cols.append((name, kind))
    if not cols:
        raise DataError(f"{path}: schema lists no columns")
    names = [n for n, _ in cols]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise DataError(f"{path}: duplicate column names {sorted(dup)}")
    return cols


def write_schema(schema: Schema, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "kind"])
        w.writerows(schema.columns)


# --------------------------------------------------------------------------
# data CSV
# --------------------------------------------------------------------------


def load_csv(data_path, schema_path, log_columns=()) -> Dataset:
    """Read a data CSV; empty cells are missing.

    Columns are reordered so the continuous block precedes the binary block.
    ``log_columns`` names continuous columns to replace by their natural log.
    """
    schema = Schema.from_columns(read_schema(schema_path))
    kinds = dict(schema.columns)
    for name in log_columns:
        if kinds.get(name) != CONTINUOUS:
            raise DataError(f"--log-columns: {name!r} is not a continuous column")
    with open(data_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{data_path}: file is empty") from None
        unknown = [h for h in header if h not in kinds]
        if unknown:
            raise DataError(f"{data_path}: unknown column {unknown[0]!r} (not in schema)")
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError(f"{data_path}: schema column {missing[0]!r} absent from header")
        if len(set(header)) != len(header):
            raise DataError(f"{data_path}: duplicate header names")
        pos = [header.index(n) for n in schema.names]
        rows = []
        for rownum, raw in enumerate(reader, start=1):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(
                    f"{data_path}: row {rownum}: expected {len(header)} cells, got {len(raw)}"
                )
            vals = []
            for name, p in zip(schema.names, pos):
                cell = raw[p].strip()
                if cell == "":
                    vals.append(np.nan)
                elif kinds[name] == BINARY:
                    if cell not in ("0", "1"):
                        raise DataError(
                            f"{data_path}: row {rownum}, column {name!r}: binary cell must be 0 or 1, got {cell!r}"
                        )
                    vals.append(float(cell))
                else:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{data_path}: row {rownum}, column {name!r}: cannot parse number {cell!r}"
                        ) from None
                    if not math.isfinite(v):
                        raise DataError(f"{data_path}: row {rownum}, column {name!r}: non-finite value")
                    if name in log_columns:
                        if v <= 0:
                            raise DataError(
                                f"{data_path}: row {rownum}, column {name!r}: log of non-positive value"
                            )
                        v = math.log(v)
                    vals.append(v)
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(schema.names))
    return Dataset(schema, arr[:, : schema.p_x], arr[:, schema.p_x :])


def _cell(v: float, binary: bool) -> str:
    if np.isnan(v):
        return ""
    return str(int(v)) if binary else fmt(v)


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.schema.names)
        for x, y in dataset.rows():
            w.writerow([_cell(v, False) for v in x] + [_cell(v, True) for v in y])


def write_table(rows: list[dict], path, columns=None) -> None:
    """Write a list of records as CSV; floats get 17 significant digits."""
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_table_cell(r.get(c, "")) for c in columns])


def _table_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else fmt(v)
    return str(v)


# --------------------------------------------------------------------------
# model file: JSON with 17-digit numbers
# --------------------------------------------------------------------------


@dataclass
class ModelFile:
    schema: Schema
    params: ModelParams
    canonical: bool = False
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.schema.p_x, self.schema.q) != (self.params.p_x, self.params.q):
            raise ValueError("schema does not match model dimensions")


def _dump(obj, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}"{k}": {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict)) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _dump(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def model_to_text(mf: ModelFile) -> str:
    p = mf.params
    doc = {
        "format_version": FORMAT_VERSION,
        "schema": [{"name": n, "kind": k} for n, k in mf.schema.columns],
        "p_z": p.p_z,
        "mu_x": [float(v) for v in p.mu_x],
        "psi": [float(v) for v in p.psi],
        "b": [float(v) for v in p.b],
        "c": float(p.c),
        "W_hat": [[float(v) for v in row] for row in p.W_hat],
        "G_hat": [[float(v) for v in row] for row in p.G_hat],
        "canonical": bool(mf.canonical),
        "fit": mf.fit,
    }
    return _dump(doc) + "\n"


def save_model(mf: ModelFile, path) -> None:
    Path(path).write_text(model_to_text(mf))


def model_from_text(text: str) -> ModelFile:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {doc.get('format_version')!r}")
    schema = Schema(tuple((c["name"], c["kind"]) for c in doc["schema"]))
    p_z = int(doc["p_z"])
    p_x, q = schema.p_x, schema.q
    params = ModelParams(
        np.array(doc["mu_x"], dtype=float),
        np.array(doc["psi"], dtype=float),
        np.array(doc["b"], dtype=float),
        float(doc["c"]),
        np.array(doc["W_hat"], dtype=float).reshape(p_x, p_z),
        np.array(doc["G_hat"], dtype=float).reshape(q, p_z),
    )
    return ModelFile(schema, params, bool(doc.get("canonical", False)), dict(doc.get("fit", {})))


def load_model(path) -> ModelFile:
    try:
        return model_from_text(Path(path).read_text())
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from None
