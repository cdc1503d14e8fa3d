"""Binary snapshot format for restartable runs.

Layout (little-endian, C order):

    bytes 0..3   magic "FSIP"
    u32          format version (currently 1)
    u32          n            cells per side
    f64          R            outer radius
    f64          time
    f64[(n+1)*n] u2
    f64[n*(n+1)] u3
    f64[n*n]     p
    f64[6]       xi2, xi3, delta2, delta3, omega, theta
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_MAGIC = b"FSIP"
_VERSION = 1


@dataclass
class Snapshot:
    """Plain data restored from (or destined for) a checkpoint file."""

    n: int
    R: float
    time: float
    u2: np.ndarray
    u3: np.ndarray
    p: np.ndarray
    structure: np.ndarray  # (xi2, xi3, delta2, delta3, omega, theta)


def save_checkpoint(path, n, R, time, u2, u3, p, structure):
    """Write a snapshot atomically (temp file + rename)."""
    n = int(n)
    if u2.shape != (n + 1, n) or u3.shape != (n, n + 1) or p.shape != (n, n):
        raise ConfigError("checkpoint arrays do not match the grid size")
    sv = np.asarray(structure, dtype=float).reshape(6)
    header = _MAGIC + struct.pack("<IIdd", _VERSION, n, float(R), float(time))
    payload = b"".join([
        header,
        np.ascontiguousarray(u2, dtype="<f8").tobytes(),
        np.ascontiguousarray(u3, dtype="<f8").tobytes(),
        np.ascontiguousarray(p, dtype="<f8").tobytes(),
        sv.astype("<f8").tobytes(),
    ])
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read and validate a snapshot written by ``save_checkpoint``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 28 or raw[:4] != _MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    R, time = struct.unpack_from("<dd", raw, 12)
    sizes = ((n + 1) * n, n * (n + 1), n * n, 6)
    want = 28 + 8 * sum(sizes)
    if len(raw) != want:
        raise ConfigError(
            f"{path}: truncated checkpoint ({len(raw)} bytes, "
            f"expected {want})")
    off = 28
    arrays = []
    for count in sizes:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count,
                                    offset=off).copy())
        off += 8 * count
    u2 = arrays[0].reshape(n + 1, n)
    u3 = arrays[1].reshape(n, n + 1)
    p = arrays[2].reshape(n, n)
    if not all(np.isfinite(a).all() for a in arrays):
        raise ConfigError(f"{path}: checkpoint contains non-finite values")
    return Snapshot(n=n, R=R, time=time, u2=u2, u3=u3, p=p,
                    structure=arrays[3])
