"""File formats: cube, matrix CSV, PGM maps, key-value documents, checkpoints.

Cube file
    UTF-8 header of ``key = value`` lines starting with ``MACU-CUBE 1`` and
    ending with ``end_header``; then ``n_pixels * n_bands`` little-endian
    float32 values, pixel-major.  Keys: ``n_pixels``, ``n_bands``, ``dtype``
    (``f32``), ``byte_order`` (``little``), ``layout`` (``pixel-major``) and,
    for images, ``rows`` and ``cols`` (pixels stored row-major over the grid).

Checkpoint file
    ``MACUCKPT`` magic, uint32 format version, uint32 header length, a UTF-8
    JSON header (variant, dims, seed, array names and shapes in order), then
    every array as little-endian float64 in C order.  The order is ``M0``
    followed by :func:`macu.model.param_order`.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import AecParams, param_order


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- cube

CUBE_MAGIC = "MACU-CUBE 1"


@dataclass
class Cube:
    data: np.ndarray  # N x L float32
    grid: tuple[int, int] | None = None

    @property
    def n_pixels(self):
        return self.data.shape[0]

    @property
    def n_bands(self):
        return self.data.shape[1]


def cube_bytes(data, grid=None) -> bytes:
    data = np.asarray(data)
    if data.ndim != 2:
        raise FormatError("cube data must be N x L")
    N, L = data.shape
    lines = [CUBE_MAGIC, f"n_pixels = {N}", f"n_bands = {L}"]
    if grid is not None:
        rows, cols = grid
        if rows * cols != N:
            raise FormatError(f"grid {rows}x{cols} does not hold {N} pixels")
        lines += [f"rows = {rows}", f"cols = {cols}"]
    lines += ["dtype = f32", "byte_order = little", "layout = pixel-major", "end_header"]
    header = ("\n".join(lines) + "\n").encode("utf-8")
    return header + np.ascontiguousarray(data, dtype="<f4").tobytes()


def write_cube(path, data, grid=None):
    atomic_write(path, cube_bytes(data, grid))


def read_cube(path) -> Cube:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(CUBE_MAGIC.encode()) or end < 0:
        raise FormatError(f"{path}: not a cube file")
    header = parse_kv(raw[:end].decode("utf-8").split("\n", 1)[1])
    payload = raw[end + len(b"end_header\n") :]
    for key in ("n_pixels", "n_bands", "dtype", "byte_order", "layout"):
        if key not in header:
            raise FormatError(f"{path}: header lacks {key!r}")
    if (header["dtype"], header["byte_order"], header["layout"]) != (
        "f32",
        "little",
        "pixel-major",
    ):
        raise FormatError(f"{path}: unsupported encoding")
    N, L = int(header["n_pixels"]), int(header["n_bands"])
    if len(payload) != N * L * 4:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {N * L * 4}")
    grid = None
    if "rows" in header or "cols" in header:
        grid = (int(header["rows"]), int(header["cols"]))
        if grid[0] * grid[1] != N:
            raise FormatError(f"{path}: grid does not match n_pixels")
    data = np.frombuffer(payload, dtype="<f4").reshape(N, L).astype(np.float32)
    return Cube(data, grid)


# ---------------------------------------------------------------- CSV / PGM


def matrix_csv(X) -> str:
    """Comma-separated rows, each value in shortest round-trip form."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in X)


def write_matrix_csv(path, X):
    atomic_write(path, matrix_csv(X))


def read_matrix_csv(path) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return X


def pgm_bytes(img) -> bytes:
    """8-bit binary PGM; values are clipped to [0, 1] and scaled to 0..255."""
    img = np.asarray(img, dtype=np.float64)
    rows, cols = img.shape
    px = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + px.tobytes()


def write_pgm(path, img):
    atomic_write(path, pgm_bytes(img))


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise FormatError(f"{path}: expected an 8-bit P5 PGM")
    cols, rows = int(parts[1]), int(parts[2])
    px = np.frombuffer(parts[4], dtype=np.uint8)
    if px.size != rows * cols:
        raise FormatError(f"{path}: truncated PGM payload")
    return px.reshape(rows, cols)


# ---------------------------------------------------------------- key = value


def kv_text(d: dict) -> str:
    out = []
    for k, v in d.items():
        if "\n" in str(v) or "=" in str(k):
            raise FormatError(f"cannot encode {k!r} as a flat key-value line")
        out.append(f"{k} = {v}\n")
    return "".join(out)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def write_kv(path, d: dict):
    atomic_write(path, kv_text(d))


# ---------------------------------------------------------------- checkpoint

CKPT_MAGIC = b"MACUCKPT"
CKPT_VERSION = 1


def checkpoint_bytes(theta: AecParams) -> bytes:
    L, P = theta.M0.shape
    names = ["M0"] + param_order(L, P, theta.variant)
    arrays = [theta.M0] + [theta.params[k] for k in names[1:]]
    header = {
        "variant": theta.variant,
        "n_bands": L,
        "n_endmembers": P,
        "seed": int(theta.seed),
        "arrays": [[k, list(a.shape)] for k, a in zip(names, arrays)],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb + body


def save_checkpoint(path, theta: AecParams):
    atomic_write(path, checkpoint_bytes(theta))


def load_checkpoint(path) -> AecParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<II", raw, len(CKPT_MAGIC))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = len(CKPT_MAGIC) + 8
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    if off != len(raw):
        raise FormatError(f"{path}: trailing bytes after the last array")
    M0 = arrays.pop("M0")
    return AecParams(header["variant"], M0, arrays, int(header["seed"]))
