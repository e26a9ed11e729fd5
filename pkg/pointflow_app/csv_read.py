import csv
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from utils.exceptions import DataError, ParseError

from .flow_oracle import Geometry
from .sampling import PointCloud

logger = logging.getLogger(__name__)

COORD_COLUMNS = ("x", "y")
FIELD_COLUMNS = ("u", "v", "p")
# Optional 0/1 column marking points on an object surface.
SURFACE_COLUMN = "is_surface"
# Comment lines of the form "# key: <json>" carry cloud metadata.
META_KEYS = ("geometry", "meta")


def _parse_comment(line, path, line_number, found):
    body = line.lstrip("#").strip()
    key, sep, payload = body.partition(":")
    key = key.strip().lower()
    if not sep or key not in META_KEYS:
        return
    try:
        found[key] = json.loads(payload)
    except json.JSONDecodeError as e:
        raise ParseError(f"unreadable {key} metadata ({e.msg})", line=line_number, path=path)


def _surface_flag(cell, path, line_number):
    value = cell.strip()
    if value not in ("0", "1"):
        raise ParseError(f"{SURFACE_COLUMN} must be 0 or 1, got '{value}'", line=line_number, path=path)
    return value == "1"


def _header_indices(row, path, line_number):
    header = [cell.strip().lower() for cell in row]
    indices = {}
    for column in COORD_COLUMNS + FIELD_COLUMNS + (SURFACE_COLUMN,):
        if column in header:
            indices[column] = header.index(column)
    for column in COORD_COLUMNS:
        if column not in indices:
            raise ParseError(f"missing column '{column}' in header {row}", line=line_number, path=path)
    present = [c for c in FIELD_COLUMNS if c in indices]
    if present and len(present) != len(FIELD_COLUMNS):
        missing = [c for c in FIELD_COLUMNS if c not in indices][0]
        raise ParseError(f"missing column '{missing}' in header {row}", line=line_number, path=path)
    extra = [cell for cell in header if cell not in indices]
    if extra:
        logger.debug(f"{path}: ignoring columns {extra}")
    return indices


def read_sample(path, require_fields=False):
    """
    Read a sample CSV with header ``x,y,u,v,p`` (or ``x,y`` for prediction input).

    Lines starting with ``#`` are comments; ``# geometry: {...}`` and ``# meta: {...}`` carry
    JSON metadata. An optional ``is_surface`` column (0 or 1) becomes the surface mask.

    Raises:
        ParseError: malformed row (with its line number) or a missing header column.
        DataError: missing file, no rows, or no fields when ``require_fields`` is set.
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Sample file not found: {path}")
        raise DataError(f"Sample file not found: {path}")

    found = {}
    indices = None
    rows = []
    flags = []
    with open(path, newline="", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                _parse_comment(line.strip(), path, line_number, found)
                continue
            row = next(csv.reader([line]))
            if indices is None:
                indices = _header_indices(row, path, line_number)
                columns = [c for c in COORD_COLUMNS + FIELD_COLUMNS if c in indices]
                continue
            if len(row) <= max(indices.values()):
                raise ParseError(f"expected {len(columns)} values, got {len(row)}", line=line_number, path=path)
            try:
                values = [float(row[indices[c]]) for c in columns]
            except ValueError:
                raise ParseError(f"non-numeric value in row {row}", line=line_number, path=path)
            if not np.all(np.isfinite(values)):
                raise ParseError(f"non-finite value in row {row}", line=line_number, path=path)
            rows.append(values)
            if SURFACE_COLUMN in indices:
                flags.append(_surface_flag(row[indices[SURFACE_COLUMN]], path, line_number))

    if indices is None:
        raise ParseError("no header line found", path=path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    fields = table[:, 2:5] if table.shape[1] == 5 else None
    if require_fields and fields is None:
        raise ParseError("missing column 'u' (fields are required here)", path=path)

    geometry = Geometry.from_dict(found["geometry"]) if "geometry" in found else None
    surface_mask = np.array(flags, dtype=bool) if flags else None
    return PointCloud(
        coords=table[:, :2], fields=fields, geometry=geometry, surface_mask=surface_mask, meta=found.get("meta", {}),
    )


def write_sample(path, cloud):
    """Write ``cloud`` as CSV with full-precision values (exact 64-bit round-trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = pd.DataFrame(cloud.coords, columns=list(COORD_COLUMNS))
    if cloud.fields is not None:
        for i, column in enumerate(FIELD_COLUMNS):
            data[column] = cloud.fields[:, i]
    if cloud.surface_mask is not None:
        data[SURFACE_COLUMN] = np.asarray(cloud.surface_mask, dtype=bool).astype(int)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if cloud.geometry is not None:
            handle.write(f"# geometry: {json.dumps(cloud.geometry.to_dict(), sort_keys=True)}\n")
        if cloud.meta:
            handle.write(f"# meta: {json.dumps(cloud.meta, sort_keys=True)}\n")
        data.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    return path
