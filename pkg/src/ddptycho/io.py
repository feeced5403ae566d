"""On-disk formats: PTYA arrays, JSON metadata, convergence CSV and PNG renders.

PTYA layout (all little-endian)::

    offset 0   4 bytes   magic b"PTYA"
    offset 4   u16       format version (1)
    offset 6   u8        dtype code (1 = float64, 2 = complex128)
    offset 7   u8        ndim
    offset 8   u64 * n   dims
    then                 row-major payload

Every writer goes through :func:`atomic_write`, so a crashed run never
leaves a half-written file under the final name.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

__all__ = [
    "PTYA_MAGIC",
    "PTYA_VERSION",
    "SCHEMA_VERSION",
    "atomic_write",
    "write_array",
    "read_array",
    "encode_array",
    "decode_array",
    "write_meta",
    "read_meta",
    "write_csv",
    "read_csv",
    "csv_header",
    "render_png",
    "read_image",
]

PTYA_MAGIC = b"PTYA"
PTYA_VERSION = 1
SCHEMA_VERSION = 1

_CODES = {1: np.dtype("<f8"), 2: np.dtype("<c16")}
_HEADER = struct.Struct("<4sHBB")


def atomic_write(path, data: bytes) -> Path:
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def encode_array(array) -> bytes:
    a = np.asarray(array)
    if np.iscomplexobj(a):
        code, a = 2, a.astype("<c16", copy=False)
    elif a.dtype.kind in "fiub":
        code, a = 1, a.astype("<f8", copy=False)
    else:
        raise FormatError(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise FormatError("too many dimensions")
    head = _HEADER.pack(PTYA_MAGIC, PTYA_VERSION, code, a.ndim)
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + dims + np.ascontiguousarray(a).tobytes(order="C")


def decode_array(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(buf)} bytes)", offset=len(buf))
    magic, version, code, ndim = _HEADER.unpack_from(buf, 0)
    if magic != PTYA_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}", offset=0)
    if version != PTYA_VERSION:
        raise FormatError(f"{source}: unsupported version {version}", offset=4)
    if code not in _CODES:
        raise FormatError(f"{source}: unknown dtype code {code}", offset=6)
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise FormatError(f"{source}: truncated dims", offset=len(buf))
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dtype = _CODES[code]
    need = int(np.prod(shape, dtype=np.uint64)) * dtype.itemsize
    have = len(buf) - off
    if have != need:
        raise FormatError(f"{source}: payload is {have} bytes, expected {need} for shape {shape}",
                          offset=off + min(have, need))
    return np.frombuffer(buf, dtype=dtype, offset=off).reshape(shape).astype(dtype.newbyteorder("="))


def write_array(path, array) -> Path:
    return atomic_write(path, encode_array(array))


def read_array(path, shape=None, complex_=None) -> np.ndarray:
    """Read a PTYA file, optionally checking its shape and dtype family."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing array file") from exc
    a = decode_array(buf, str(path))
    if shape is not None and tuple(a.shape) != tuple(shape):
        raise FormatError(f"{path}: shape {a.shape}, expected {tuple(shape)}", offset=8)
    if complex_ is not None and np.iscomplexobj(a) != complex_:
        raise FormatError(f"{path}: expected {'complex' if complex_ else 'real'} data", offset=6)
    return a


def write_meta(path, meta: dict) -> Path:
    meta = {"schema_version": SCHEMA_VERSION, **meta}
    text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
    return atomic_write(path, text.encode("utf-8"))


def read_meta(path) -> dict:
    path = Path(path)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing meta file") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", offset=exc.pos) from exc
    if not isinstance(meta, dict) or meta.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema version {meta.get('schema_version')!r}")
    return meta


def csv_header(D: int, lagrangian: bool) -> list[str]:
    cols = ["iter", "rf", "re"]
    if lagrangian:
        cols.append("lagrangian")
    cols += [f"t_sub_{d}_ms" for d in range(D)]
    return cols + ["t_virtual_ms", "t_actual_ms"]


def write_csv(path, records, D: int, lagrangian: bool = False) -> Path:
    """Convergence log, one row per iteration; times in milliseconds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(D, lagrangian))
    for rec in records:
        row = [rec.iteration, repr(rec.rf), repr(rec.re)]
        if lagrangian:
            row.append("" if rec.lagrangian is None else repr(rec.lagrangian))
        row += [f"{1e3 * t:.6f}" for t in rec.t_sub]
        row += [f"{1e3 * rec.t_virtual:.6f}", f"{1e3 * rec.t_actual:.6f}"]
        w.writerow(row)
    return atomic_write(path, buf.getvalue().encode("utf-8"))


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns of a convergence log as float arrays (blank cells become NaN)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing convergence log") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:3] != ["iter", "rf", "re"]:
        raise FormatError(f"{path}: not a convergence log")
    head, body = rows[0], rows[1:]
    cols = {}
    for k, name in enumerate(head):
        cols[name] = np.array([float(r[k]) if r[k] else np.nan for r in body])
    return cols


def render_png(path, values, lo: float, hi: float) -> dict:
    """8-bit grayscale render with ``[lo, hi]`` mapped linearly onto ``[0, 255]``.

    Returns the window mapping, to be recorded in the run metadata.
    """
    if not hi > lo:
        raise ValueError("empty display window")
    v = np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    img = Image.fromarray(np.round(255 * v).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write(path, buf.getvalue())
    return {"file": Path(path).name, "window": [lo, hi], "levels": 256}


def read_image(path) -> np.ndarray:
    """Grayscale image scaled to [0, 1]; PTYA files are returned as stored."""
    path = Path(path)
    if path.suffix.lower() == ".ptya":
        return read_array(path)
    try:
        with Image.open(path) as img:
            gray = img.convert("I;16") if img.mode.startswith("I") else img.convert("L")
            a = np.asarray(gray, dtype=np.float64)
            top = 65535.0 if gray.mode.startswith("I") else 255.0
    except (FileNotFoundError, OSError) as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from exc
    return a / top
