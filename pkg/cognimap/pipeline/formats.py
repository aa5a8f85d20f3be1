"""
Sequence directory file formats

Grids (depth, confidence, flow, features) are ``.f32`` files: a 16-byte
little-endian header (magic ``CMGR``, u32 width, u32 height, u32 channels)
followed by row-major float32 values. Poses, intrinsics and matches are
whitespace-separated text; masks are binary PGM.
"""

import os
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from cognimap.core.exceptions import IngestError, InputShapeError
from cognimap.models.geometry_models import Intrinsics, Pose
from cognimap.models.motion_models import KeypointMatches

GRID_MAGIC = b"CMGR"
GRID_HEADER = struct.Struct("<4sIII")

INTRINSICS_FILE = "intrinsics.txt"
DEPTH_SUFFIX = ".depth.f32"
CONF_SUFFIX = ".conf.f32"
FLOW_SUFFIX = ".flow.f32"
FEAT_SUFFIX = ".feat.f32"
POSE_SUFFIX = ".pose.txt"
MATCHES_SUFFIX = ".matches.txt"
MASK_SUFFIX = ".pgm"

PathLike = Union[str, Path]


def frame_stem(index: int) -> str:
    return f"{index:06d}"


# Atomic writes

def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write through a sibling temp file and rename into place"""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# Grids

def encode_grid(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype="<f4")
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise InputShapeError(f"grids are H x W or H x W x C, got shape {values.shape}")
    h, w, c = values.shape
    return GRID_HEADER.pack(GRID_MAGIC, w, h, c) + np.ascontiguousarray(values).tobytes()


def decode_grid(data: bytes, path: Optional[str] = None, field: Optional[str] = None) -> np.ndarray:
    """H x W x C float32 array of an encoded grid"""
    if len(data) < GRID_HEADER.size:
        raise IngestError("grid header is truncated", path=path, field=field)
    magic, w, h, c = GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise IngestError(f"bad grid magic {magic!r}", path=path, field=field)
    expected = w * h * c * 4
    body = data[GRID_HEADER.size:]
    if len(body) != expected:
        raise IngestError(f"expected {expected} bytes for a {w}x{h}x{c} grid, found {len(body)}",
                          path=path, field=field)
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float32)


def write_grid(path: PathLike, values: np.ndarray) -> None:
    atomic_write_bytes(path, encode_grid(values))


def read_grid(path: PathLike, field: Optional[str] = None) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise IngestError(f"cannot read grid: {e}", path=str(path), field=field) from e
    return decode_grid(data, path=str(path), field=field)


# Masks

def encode_pgm(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + (mask.astype(np.uint8) * 255).tobytes()


def write_pgm(path: PathLike, mask: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(mask))


def read_pgm(path: PathLike) -> np.ndarray:
    """Boolean mask of a binary PGM (non-zero is set)"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise IngestError(f"cannot read mask: {e}", path=str(path), field="mask") from e
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos) + 1 or len(data)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestError("PGM header is truncated", path=str(path), field="mask")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5" or not all(t.isdigit() for t in tokens[1:]):
        raise IngestError("not a binary PGM", path=str(path), field="mask")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise IngestError("16-bit PGM masks are not supported", path=str(path), field="mask")
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise IngestError(f"expected {w * h} mask bytes, found {len(body)}", path=str(path), field="mask")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w) > 0


# Text records

def _numbers(text: str, path: str, field: str) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split()], dtype=np.float64)
    except ValueError as e:
        raise IngestError(f"non-numeric value: {e}", path=path, field=field) from e
    if not np.all(np.isfinite(values)):
        raise IngestError("non-finite value", path=path, field=field)
    return values


def format_pose(pose: Pose) -> str:
    rows = pose.matrix()
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in rows) + "\n"


def parse_pose(text: str, path: str = "") -> Pose:
    """4x4 row-major world-to-camera matrix"""
    values = _numbers(text, path, "pose")
    if values.shape[0] != 16:
        raise IngestError(f"pose needs 16 values, found {values.shape[0]}", path=path, field="pose")
    matrix = values.reshape(4, 4)
    if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
        raise IngestError("last pose row must be 0 0 0 1", path=path, field="pose")
    pose = Pose.from_matrix(matrix)
    if not pose.is_valid(tol=1e-6):
        raise IngestError("pose rotation is not orthonormal", path=path, field="pose")
    return pose


def format_intrinsics(k: Intrinsics) -> str:
    return f"{k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g} {k.width} {k.height}\n"


def parse_intrinsics(text: str, path: str = "") -> Intrinsics:
    """``fx fy cx cy width height``"""
    values = _numbers(text, path, "intrinsics")
    if values.shape[0] != 6:
        raise IngestError(f"intrinsics need 6 values, found {values.shape[0]}", path=path, field="intrinsics")
    fx, fy, cx, cy, w, h = values
    if w != int(w) or h != int(h):
        raise IngestError("image size must be integral", path=path, field="intrinsics")
    try:
        return Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=int(w), height=int(h))
    except ValueError as e:
        raise IngestError(str(e), path=path, field="intrinsics") from e


def format_matches(matches: KeypointMatches) -> str:
    lines = [
        f"{a[0]:.17g} {a[1]:.17g} {b[0]:.17g} {b[1]:.17g} {s:.17g}"
        for a, b, s in zip(matches.pixels_t, matches.pixels_t2, matches.scores)
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_matches(text: str, path: str = "") -> KeypointMatches:
    """``x1 y1 x2 y2 score`` per line"""
    rows = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        values = _numbers(line, path, f"matches line {number}")
        if values.shape[0] != 5:
            raise IngestError(f"line {number} needs 5 values", path=path, field="matches")
        rows.append(values)
    if not rows:
        return KeypointMatches.empty()
    data = np.vstack(rows)
    return KeypointMatches(data[:, 0:2], data[:, 2:4], data[:, 4])
