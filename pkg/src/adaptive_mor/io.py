"""Binary matrix container, CSV export and JSON manifests.

Container layout (all little-endian)::

    bytes 0..7    magic b"ADMORMAT"
    bytes 8..15   rows  (uint64)
    bytes 16..23  cols  (uint64)
    bytes 24..    rows*cols float64, row-major
"""

import csv
import hashlib
import json
from pathlib import Path
import struct

import numpy as np

from .errors import InvalidInputError

MAGIC = b"ADMORMAT"
_HEADER = struct.Struct("<8sQQ")


def write_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype="<f8"))
    if M.ndim != 2:
        raise InvalidInputError("only 2-D arrays can be stored")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M.shape[0], M.shape[1]))
        fh.write(np.ascontiguousarray(M).tobytes(order="C"))


def read_matrix(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidInputError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise InvalidInputError(f"{path}: expected {rows}x{cols} payload, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)


def write_matrix_csv(path, M):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def write_rows_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def read_rows_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(repr(float(x)) for x in np.ravel(v))
    return v


def config_hash(cfg_dict):
    blob = json.dumps(cfg_dict, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
