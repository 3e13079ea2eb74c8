"""Matrix files and result streams.

Matrix files are CSV. The first cell of the header names the orientation
as ``<rows>/<columns>`` (for example ``observations/draws``), the rest of
the header labels the columns, and each following line starts with a row
label. Values are written with 17 significant digits so files re-parse to
identical floats.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

SCHEMA = "wslim.results/1"
AXES = ("observations", "draws", "coefficients", "points", "covariates")


class MatrixParseError(ValueError):
    def __init__(self, path, row, column, message):
        self.path, self.row, self.column = str(path), row, column
        where = f"{self.path}: line {row}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{where}: {message}")


def _fmt(v):
    return "%.17g" % v


def write_matrix(path, matrix, rows="observations", columns="draws"):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{rows}/{columns}"] + [str(j) for j in range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            w.writerow([str(i)] + [_fmt(v) for v in row])
    return path


def read_matrix(path, rows="observations", columns="draws"):
    """Read a matrix file, transposing it if its header declares the opposite orientation.

    Raises
    ------
    MatrixParseError
        On a malformed header, a ragged row or a non-numeric cell, with the
        line and column of the problem.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        lines = list(csv.reader(fh))
    if not lines:
        raise MatrixParseError(path, 1, None, "empty file")
    head = lines[0]
    tag = head[0].strip() if head else ""
    if tag.count("/") != 1:
        raise MatrixParseError(path, 1, 1, f"header must start with '<rows>/<columns>', got {tag!r}")
    r_axis, c_axis = (s.strip() for s in tag.split("/"))
    if (r_axis, c_axis) == (rows, columns):
        transpose = False
    elif (r_axis, c_axis) == (columns, rows):
        transpose = True
    else:
        raise MatrixParseError(path, 1, 1, f"expected orientation {rows}/{columns}, got {tag}")
    width = len(head) - 1
    if width < 1:
        raise MatrixParseError(path, 1, None, "header has no data columns")
    data = []
    for ln, row in enumerate(lines[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) - 1 != width:
            raise MatrixParseError(path, ln, None, f"expected {width} values, found {len(row) - 1}")
        vals = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError:
                raise MatrixParseError(path, ln, col, f"not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise MatrixParseError(path, ln, col, f"non-finite value {cell!r}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise MatrixParseError(path, 2, None, "no data rows")
    M = np.array(data, dtype=np.float64)
    return M.T.copy() if transpose else M


def json_ready(obj):
    """Recursively convert numpy values and non-finite floats into JSON-safe objects."""
    if isinstance(obj, dict):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return json_ready(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(record):
    return json.dumps(json_ready(record), sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def read_jsonl(path):
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
