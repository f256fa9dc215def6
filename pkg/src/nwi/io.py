"""File formats for property maps and channel data.

``NWIMAP01`` layout: a 32-byte header (8-byte magic, ``nx`` and ``nz`` as little-endian
uint32, a uint32 map-kind tag, 12 zero bytes) followed by ``nx * nz`` little-endian
float64 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput, IoError
from .grid import PROPERTY_NAMES

MAGIC = b"NWIMAP01"
_HEADER = struct.Struct("<8sIII12x")
KIND_TAGS = {name: i for i, name in enumerate(PROPERTY_NAMES)}
KIND_TAGS["other"] = 255


def write_nwimap(path, values, kind="other"):
    m = np.asarray(values, dtype="<f8")
    if m.ndim != 2:
        raise InvalidInput("maps must be 2-D")
    tag = KIND_TAGS[kind] if isinstance(kind, str) else int(kind)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1], tag))
            fh.write(np.ascontiguousarray(m).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_nwimap(path):
    """Return ``(map, kind_tag)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise IoError(f"{path}: truncated header")
    magic, nx, nz, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IoError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != nx * nz * 8:
        raise IoError(f"{path}: expected {nx * nz * 8} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(nx, nz).astype(float), tag


def write_csv(path, values):
    """Row-major text, one grid row (fixed x index) per line, full float64 precision."""
    m = np.atleast_2d(np.asarray(values, float))
    try:
        np.savetxt(path, m, delimiter=",", fmt="%.17g")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def write_pgm(path, values, lo, hi):
    """16-bit binary graymap (P5, maxval 65535), linearly scaled so ``lo -> 0`` and ``hi -> 65535``."""
    if not hi > lo:
        raise InvalidInput("pgm scaling needs hi > lo")
    m = np.asarray(values, float)
    scaled = np.clip((m - lo) / (hi - lo), 0.0, 1.0) * 65535.0
    pix = np.rint(scaled).astype(">u2")
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n65535\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pix.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pgm(path):
    """Reader for the files :func:`write_pgm` produces (no comments in the header)."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise IoError(f"{path}: not a binary graymap")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 65535:
        raise IoError(f"{path}: only 16-bit graymaps are supported")
    data = raw[len(raw) - 2 * width * height:]
    return np.frombuffer(data, dtype=">u2").reshape(height, width).astype(np.uint16)
