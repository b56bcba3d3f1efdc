"""Writers and readers for the engine's file formats.

Implements the two documented binary layouts this tool exchanges with the
retrieval engine:

* ".vgfm" weight container: magic "VGFM", u32 LE version (=1), u32 LE
  header length, UTF-8 JSON header, then per-conv-layer float32 LE blobs
  (weights in (out, in, h, w) row-major order, then biases) in the
  header's layer order.
* ".vgt" raw tensor: magic "VGT1", u32 LE ndims, ndims u32 LE sizes,
  float32 LE values in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .schedule import conv_layers

VGFM_MAGIC = b"VGFM"
VGFM_VERSION = 1
WEIGHT_ORDER = "out_in_h_w"
VGT_MAGIC = b"VGT1"


class ContainerError(Exception):
    pass


def build_header(schedule: dict, mean: tuple[float, ...]) -> dict:
    return {
        "name": schedule.get("name", "converted"),
        "input_shape": [int(d) for d in schedule["input_shape"]],
        "normalization_mean": [float(m) for m in mean],
        "weight_order": WEIGHT_ORDER,
        "layers": schedule["layers"],
    }


def write_container(path, header: dict,
                    blobs: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    """Write header + blobs atomically; no partial file is left on failure."""
    path = Path(path)
    raw_header = json.dumps(header).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(VGFM_MAGIC)
            fh.write(struct.pack("<II", VGFM_VERSION, len(raw_header)))
            fh.write(raw_header)
            for layer in conv_layers(header):
                w, b = blobs[layer["name"]]
                fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_header(path) -> dict:
    """Parse and sanity-check a container header (no blobs are read)."""
    with open(path, "rb") as fh:
        if fh.read(4) != VGFM_MAGIC:
            raise ContainerError(f"{path}: not a VGFM container")
        raw = fh.read(8)
        if len(raw) < 8:
            raise ContainerError(f"{path}: truncated header")
        version, header_len = struct.unpack("<II", raw)
        if version != VGFM_VERSION:
            raise ContainerError(f"{path}: unsupported version {version}")
        raw_header = fh.read(header_len)
    if len(raw_header) < header_len:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw_header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: header is not valid JSON: {e}") from None
    for key in ("input_shape", "normalization_mean", "layers"):
        if key not in header:
            raise ContainerError(f"{path}: header lacks {key!r}")
    if header.get("weight_order") != WEIGHT_ORDER:
        raise ContainerError(
            f"{path}: unexpected weight order {header.get('weight_order')!r}")
    return header


def write_vgt(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(VGT_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_vgt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != VGT_MAGIC:
        raise ContainerError(f"{path}: not a VGT1 tensor file")
    (ndims,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndims}I", raw, 8)
    offset = 8 + 4 * ndims
    count = int(np.prod(dims))
    if len(raw) != offset + 4 * count:
        raise ContainerError(f"{path}: payload length mismatch")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
