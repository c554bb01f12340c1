"""Plain-text field dumps.

Format, version 1: a single header line

    sigmaflow-field v1; dims=32,32,32; axis=pole_shifted,pole_shifted,periodic; chart=round_sphere

followed by one line per grid node in row-major order. Scalar fields write
one value per line; symmetric tensor fields write the upper triangle
(i <= j, lexicographic) comma-separated. Values use repr-exact %.17g so a
round trip preserves every bit.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigurationError, NumericError

FORMAT_TAG = "sigmaflow-field"
FORMAT_VERSION = 1


def _require_finite(values, path):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"refusing to write non-finite values to {path}")


def _header(geom):
    g = geom.grid
    dims = ",".join(str(s) for s in g.shape)
    axis = ",".join(g.axis_kind)
    return (f"{FORMAT_TAG} v{FORMAT_VERSION}; dims={dims}; "
            f"axis={axis}; chart={geom.name}")


def _atomic_write(path, lines):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    os.replace(tmp, path)


def write_scalar_field(path, geom, values):
    values = np.broadcast_to(np.asarray(values, dtype=float), geom.grid.shape)
    _require_finite(values, path)
    lines = [_header(geom)]
    lines.extend("%.17g" % v for v in values.ravel(order="C"))
    _atomic_write(path, lines)


def write_tensor_field(path, geom, field):
    n = geom.grid.ndim
    field = np.broadcast_to(np.asarray(field, dtype=float),
                            geom.grid.shape + (n, n))
    _require_finite(field, path)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    flat = field.reshape(-1, n, n)
    lines = [_header(geom)]
    for row in flat:
        lines.append(",".join("%.17g" % row[i, j] for i, j in pairs))
    _atomic_write(path, lines)


def _parse_header(line):
    parts = [p.strip() for p in line.strip().split(";")]
    tag = parts[0].split()
    if len(tag) != 2 or tag[0] != FORMAT_TAG or not tag[1].startswith("v"):
        raise ConfigurationError(f"not a field dump: bad header {line!r}")
    version = int(tag[1][1:])
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported field dump version {version}")
    meta = {}
    for part in parts[1:]:
        key, _, value = part.partition("=")
        meta[key.strip()] = value.strip()
    if "dims" not in meta or "axis" not in meta or "chart" not in meta:
        raise ConfigurationError("field dump header is missing required keys")
    meta["dims"] = tuple(int(d) for d in meta["dims"].split(","))
    meta["axis"] = tuple(meta["axis"].split(","))
    return meta


def read_field(path):
    """Read a dump; returns (array, meta).

    Scalar dumps come back with the grid shape, tensor dumps with an extra
    (n, n) symmetric block per node.
    """
    with open(path) as fh:
        header = fh.readline()
        meta = _parse_header(header)
        data = [line.split(",") for line in fh if line.strip()]
    shape = meta["dims"]
    count = int(np.prod(shape))
    if len(data) != count:
        raise ConfigurationError(
            f"field dump has {len(data)} rows, grid needs {count}")
    width = len(data[0])
    values = np.array([[float(v) for v in row] for row in data], dtype=float)
    if width == 1:
        return values.reshape(shape), meta
    n = len(shape)
    if width != n * (n + 1) // 2:
        raise ConfigurationError(
            f"field dump rows have {width} entries; expected 1 or {n * (n + 1) // 2}")
    full = np.empty((count, n, n), dtype=float)
    col = 0
    for i in range(n):
        for j in range(i, n):
            full[:, i, j] = values[:, col]
            full[:, j, i] = values[:, col]
            col += 1
    return full.reshape(shape + (n, n)), meta
