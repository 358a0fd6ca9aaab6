"""Binary file formats: AVFD float grids, AVFC section containers, PNG helpers.

AVFD is a raw little-endian float32 grid with a 16-byte header
(magic "AVFD", then uint32 height/width/channels). AVFC is a generic
versioned section container used for field checkpoints.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

AVFD_MAGIC = b"AVFD"
AVFC_MAGIC = b"AVFC"
AVFC_VERSION = 1


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


def write_float_grid(path: str | Path, grid: np.ndarray) -> None:
    """Write an H×W or H×W×C array as an AVFD little-endian float32 grid."""
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"expected H×W or H×W×C grid, got shape {arr.shape}")
    h, w, c = arr.shape
    header = AVFD_MAGIC + struct.pack("<III", h, w, c)
    data = arr.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + data)


def read_float_grid(path: str | Path) -> np.ndarray:
    """Read an AVFD grid; returns H×W for single channel, else H×W×C."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != AVFD_MAGIC:
        raise FormatError(f"{path}: missing AVFD header")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write an H×W (grayscale) or H×W×3 (RGB) array in [0, 1] as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(str(path), format="PNG")


def read_png(path: str | Path) -> np.ndarray:
    """Read a PNG into a float array in [0, 1]; RGB(A) images drop alpha."""
    img = Image.open(str(path))
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr


# ---------------------------------------------------------------------------
# AVFC section container
# ---------------------------------------------------------------------------


def write_container(path: str | Path, sections: dict[str, bytes], version: int = AVFC_VERSION) -> None:
    """Write named byte sections in deterministic (insertion) order."""
    parts = [AVFC_MAGIC, struct.pack("<II", version, len(sections))]
    for name, payload in sections.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    Path(path).write_bytes(b"".join(parts))


def read_container(path: str | Path, expect_version: int = AVFC_VERSION) -> dict[str, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != AVFC_MAGIC:
        raise FormatError(f"{path}: missing AVFC header")
    version, count = struct.unpack("<II", raw[4:12])
    if version != expect_version:
        raise FormatError(f"{path}: container version {version}, expected {expect_version}")
    sections: dict[str, bytes] = {}
    off = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (size,) = struct.unpack_from("<Q", raw, off)
        off += 8
        sections[name] = raw[off : off + size]
        off += size
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return sections


def pack_array(arr: np.ndarray) -> bytes:
    """Serialize an array (dtype, shape, raw bytes) for a container section."""
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.str.encode("ascii")
    head = struct.pack("<B", len(dt)) + dt + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + arr.tobytes(order="C")


def unpack_array(payload: bytes) -> np.ndarray:
    (dt_len,) = struct.unpack_from("<B", payload, 0)
    dt = payload[1 : 1 + dt_len].decode("ascii")
    off = 1 + dt_len
    (ndim,) = struct.unpack_from("<B", payload, off)
    off += 1
    shape = struct.unpack_from(f"<{ndim}Q", payload, off) if ndim else ()
    off += 8 * ndim
    return np.frombuffer(payload, dtype=dt, offset=off).reshape(shape).copy()


def pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def unpack_json(payload: bytes):
    return json.loads(payload.decode("utf-8"))
