"""The two tool operations: checkpoint conversion and empirical verification."""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .container import build_header, read_header, read_vgt, write_container
from .engine import extract_descriptor
from .reference import run_reference
from .schedule import (activation_indices, canonical_schedule, conv_layers,
                       expected_source_shape)


class ConvertError(Exception):
    pass


def convert(source, out, mean: tuple[float, ...] | None = None,
            schedule: dict | None = None, layout: str = "hwio",
            log=None) -> dict:
    """Convert a checkpoint into a ".vgfm" container; returns the header.

    Weights are reordered from the source layout into (out, in, h, w).
    Normalization means come from the checkpoint metadata unless the caller
    passes explicit ones.  float32 payloads survive bit-exactly.
    """
    log = log or sys.stderr
    if layout not in ("hwio", "oihw"):
        raise ConvertError(f"unknown weight layout {layout!r} (hwio or oihw)")
    checkpoint = load_checkpoint(source)
    schedule = schedule or canonical_schedule()

    wanted = conv_layers(schedule)
    missing = [l["name"] for l in wanted if l["name"] not in checkpoint.arrays]
    if missing:
        raise ConvertError(
            f"checkpoint {checkpoint.source} lacks layers: {', '.join(missing)}")

    blobs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for layer in wanted:
        name = layer["name"]
        w, b = checkpoint.arrays[name]
        expected = expected_source_shape(layer)
        if layout == "oihw":
            expected = (expected[3], expected[2], expected[0], expected[1])
        if tuple(w.shape) != expected:
            raise ConvertError(
                f"layer {name!r}: expected source weights {expected}, "
                f"found {tuple(w.shape)}")
        if b.shape[0] != layer["out_channels"]:
            raise ConvertError(
                f"layer {name!r}: expected {layer['out_channels']} biases, "
                f"found {b.shape[0]}")
        if layout == "hwio":
            w = w.transpose(3, 2, 0, 1)
        blobs[name] = (np.ascontiguousarray(w, dtype=np.float32),
                       np.asarray(b, dtype=np.float32))

    resolved_mean = _resolve_mean(mean, checkpoint, schedule)
    header = build_header(schedule, resolved_mean)
    extras = [x for x in checkpoint.arrays if x not in {l["name"] for l in wanted}]
    if extras:
        print(f"note: ignoring checkpoint layers outside the schedule: "
              f"{', '.join(sorted(extras))}", file=log)
    if checkpoint.extras:
        print(f"note: ignoring checkpoint variables: "
              f"{', '.join(sorted(checkpoint.extras))}", file=log)
    write_container(out, header, blobs)
    return header


def _resolve_mean(flag_mean, checkpoint: Checkpoint, schedule: dict):
    channels = int(schedule["input_shape"][2])
    for candidate, origin in ((flag_mean, "--mean"),
                              (checkpoint.mean, "checkpoint metadata"),
                              (schedule.get("normalization_mean"), "schedule")):
        if candidate is None:
            continue
        values = tuple(float(v) for v in candidate)
        if len(values) != channels:
            raise ConvertError(
                f"{origin} provides {len(values)} means, input has {channels} "
                f"channels")
        return values
    raise ConvertError(
        "no normalization means: checkpoint has no metadata, pass --mean r,g,b")


def load_image_array(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".vgt":
        return read_vgt(path).astype(np.float64)
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        a = np.asarray(img, dtype=np.float64)
    return a


def verify(source, container, image_path, engine_cmd: list[str],
           layers: list[int] | None = None, workdir=None) -> dict:
    """Compare the engine's layer outputs against the reference forward pass.

    Returns a report dict; discrepancies are report content, not errors.
    """
    header = read_header(container)
    checkpoint = load_checkpoint(source)
    taps = layers if layers else activation_indices(header)
    if not taps:
        raise ConvertError("schedule has no activation layers to compare")
    image = load_image_array(image_path)
    reference = run_reference(header, checkpoint.arrays, image, list(taps))

    names = {l["index"]: l["name"] for l in header["layers"]}
    rows = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for tap in taps:
            engine_vec = extract_descriptor(engine_cmd, container, image_path,
                                            tap, tmp)
            ref_vec = reference[tap].ravel()
            if engine_vec.shape != ref_vec.shape:
                raise ConvertError(
                    f"layer {tap}: engine returned {engine_vec.shape[0]} values, "
                    f"reference has {ref_vec.shape[0]}")
            diff = float(np.max(np.abs(engine_vec.astype(np.float64) - ref_vec)))
            rows.append({"layer": int(tap), "name": names.get(tap, "?"),
                         "length": int(ref_vec.size), "max_abs_diff": diff})
    return {
        "container": str(container),
        "checkpoint": str(checkpoint.source),
        "image": str(image_path),
        "layers": rows,
        "max_abs_diff": max(r["max_abs_diff"] for r in rows),
    }
