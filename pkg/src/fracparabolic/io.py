"""Artifact files: JSON configs and reports, CSV field tables, atomic writes.

CSV field layout (KernelField and friends)::

    # fracparabolic <kind> field
    # digest: <sha256 of the canonical config>
    # generated: <UTC timestamp>          (the only line that varies between reruns)
    # meta: <compact JSON: grid, times, derivative, extra metadata>
    t,x,[xi,]i,j,re,im
    ...

x is written as x1..xn columns for n > 1.  Numbers use repr-exact '%.17g'
formatting, so identical computations give byte-identical bodies.  Report
JSON never carries timestamps.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

_FMT = "%.17g"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def atomic_write(path, text: str) -> Path:
    """Write text to a temp file beside path, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None


def write_json(path, obj, digest: str | None = None) -> Path:
    doc = dict(obj)
    if digest is not None:
        doc = {"config_digest": digest, **doc}
    return atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_jsonl(path, rows, digest: str | None = None) -> Path:
    lines = [canonical_json({"config_digest": digest, **r} if digest else r) for r in rows]
    return atomic_write(path, "\n".join(lines) + "\n")


def _header(kind: str, digest: str, meta: dict, columns) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return (f"# fracparabolic {kind} field\n# digest: {digest}\n# generated: {stamp}\n"
            f"# meta: {canonical_json(meta)}\n" + ",".join(columns) + "\n")


def _table(columns) -> str:
    """Rows of equally long 1-D arrays as CSV text."""
    mat = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    lines = [",".join(_FMT % v for v in row) for row in mat]
    return "\n".join(lines) + ("\n" if lines else "")


def field_csv(kind: str, times, points, values, digest: str, meta: dict | None = None,
              xi=None) -> str:
    """CSV text for values[t, p, (xi,) i, j] sampled at times x points (x xi)."""
    times = np.asarray(times, dtype=float)
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(pts.shape[0], -1)
    vals = np.asarray(values)
    n = pts.shape[1]
    xcols = ["x"] if n == 1 else [f"x{k + 1}" for k in range(n)]
    N = vals.shape[-1]
    T, P = len(times), pts.shape[0]
    if xi is None:
        vals = vals.reshape(T, P, N, N)
        grids = np.meshgrid(np.arange(T), np.arange(P), np.arange(N), np.arange(N), indexing="ij")
        ti, pi, ii, jj = (g.ravel() for g in grids)
        cols = [times[ti]] + [pts[pi, k] for k in range(n)] + [ii, jj]
        names = ["t"] + xcols + ["i", "j"]
        flat = vals.reshape(-1)
    else:
        xi = np.asarray(xi, dtype=float)
        X = len(xi)
        vals = vals.reshape(T, P, X, N, N)
        grids = np.meshgrid(np.arange(T), np.arange(P), np.arange(X), np.arange(N), np.arange(N),
                            indexing="ij")
        ti, pi, xj, ii, jj = (g.ravel() for g in grids)
        cols = [times[ti]] + [pts[pi, k] for k in range(n)] + [xi[xj], ii, jj]
        names = ["t"] + xcols + ["xi", "i", "j"]
        flat = vals.reshape(-1)
    cols += [flat.real, flat.imag]
    names += ["re", "im"]
    return _header(kind, digest, meta or {}, names) + _table(cols)


def write_field(path, field_, digest: str, meta: dict | None = None) -> Path:
    """Write a KernelField in the documented CSV layout."""
    m = {"kind": field_.kind, "derivative": list(field_.derivative),
         "grid": None if field_.grid is None else field_.grid.to_dict(), **(meta or {}),
         **{k: v for k, v in field_.meta.items() if isinstance(v, (str, int, float))}}
    return atomic_write(path, field_csv(field_.kind, field_.times, field_.points, field_.values, digest, m))


def write_table(path, kind: str, columns: dict, digest: str, meta: dict | None = None) -> Path:
    """Generic CSV with named numeric columns and the standard header."""
    names = list(columns)
    return atomic_write(path, _header(kind, digest, meta or {}, names) + _table([columns[k] for k in names]))


def csv_body(path) -> str:
    """The data part of an artifact CSV (everything but '#' comment lines)."""
    return "".join(l for l in Path(path).read_text().splitlines(keepends=True) if not l.startswith("#"))


def read_field_csv(path):
    """(meta, header columns, data array) of a CSV written by this module."""
    meta, digest = {}, None
    lines = Path(path).read_text().splitlines()
    for line in lines:
        if line.startswith("# meta: "):
            meta = json.loads(line[len("# meta: "):])
        elif line.startswith("# digest: "):
            digest = line[len("# digest: "):]
    body = [l for l in lines if not l.startswith("#")]
    cols = body[0].split(",")
    data = np.array([[float(v) for v in l.split(",")] for l in body[1:]]) if len(body) > 1 \
        else np.zeros((0, len(cols)))
    meta["digest"] = digest
    return meta, cols, data
