"""Reference forward pass over source-layout checkpoint weights.

This is the converter-side ground truth for `verify`: it consumes the
checkpoint arrays in their native (h, w, in, out) order, runs the schedule
in float64 on top of scipy's correlation kernels, and never touches the
converted container.  Any transposition mistake in the conversion then
shows up as a layer-output difference against the engine.

Preprocessing mirrors the engine's documented convention: bilinear resize
with half-pixel centers and edge clamping, then per-channel mean
subtraction.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import correlate2d


class ReferenceError(Exception):
    pass


def preprocess(image: np.ndarray, target_hw: tuple[int, int],
               mean: tuple[float, ...]) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ReferenceError(f"image must be (H, W, C), got shape {a.shape}")
    a = _resize_axis(a, target_hw[0], 0)
    a = _resize_axis(a, target_hw[1], 1)
    if a.shape[2] != len(mean):
        raise ReferenceError(
            f"image has {a.shape[2]} channels but {len(mean)} means given")
    return a - np.asarray(mean, dtype=np.float64)


def _resize_axis(a: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = a.shape[axis]
    if in_len == out_len:
        return a
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1.0)
    lo_idx = np.floor(src).astype(np.int64)
    hi_idx = np.minimum(lo_idx + 1, in_len - 1)
    frac = (src - lo_idx).reshape([-1 if d == axis else 1 for d in range(a.ndim)])
    lo = np.take(a, lo_idx, axis=axis)
    hi = np.take(a, hi_idx, axis=axis)
    return lo * (1.0 - frac) + hi * frac


def _conv(x: np.ndarray, w_hwio: np.ndarray, bias: np.ndarray,
          stride: int, pad: int) -> np.ndarray:
    f, _, cin, cout = w_hwio.shape
    if x.shape[2] != cin:
        raise ReferenceError(
            f"conv expects {cin} input channels, volume has {x.shape[2]}")
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    h_out = (x.shape[0] + 2 * pad - f) // stride + 1
    w_out = (x.shape[1] + 2 * pad - f) // stride + 1
    out = np.empty((h_out, w_out, cout), dtype=np.float64)
    for co in range(cout):
        acc = np.zeros((xp.shape[0] - f + 1, xp.shape[1] - f + 1), dtype=np.float64)
        for ci in range(cin):
            acc += correlate2d(xp[:, :, ci], w_hwio[:, :, ci, co], mode="valid")
        out[:, :, co] = acc[::stride, ::stride][:h_out, :w_out] + float(bias[co])
    return out


def _pool(x: np.ndarray, window: int, stride: int, pad: int) -> np.ndarray:
    h, w, c = x.shape
    h_out = (h + 2 * pad - window) // stride + 1
    w_out = (w + 2 * pad - window) // stride + 1
    xp = np.full((h + 2 * pad, w + 2 * pad, c), -np.inf, dtype=np.float64)
    xp[pad:pad + h, pad:pad + w] = x
    out = np.empty((h_out, w_out, c), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            patch = xp[i * stride:i * stride + window,
                       j * stride:j * stride + window]
            out[i, j] = patch.max(axis=(0, 1))
    return out


def _activation(x: np.ndarray, spec: str) -> np.ndarray:
    if spec == "relu":
        return np.maximum(x, 0.0)
    if spec == "abrelu" or spec.startswith("abrelu:"):
        alpha = float(spec.split(":", 1)[1]) if ":" in spec else 1.0
        beta = alpha * x.mean()
        return np.maximum(x - beta, 0.0)
    raise ReferenceError(f"unknown activation {spec!r}")


def run_reference(header: dict, checkpoint_arrays: dict, image: np.ndarray,
                  taps: list[int]) -> dict[int, np.ndarray]:
    """Outputs at the requested layer indices for one image."""
    target = header["input_shape"]
    mean = tuple(header["normalization_mean"])
    volume = preprocess(image, (int(target[0]), int(target[1])), mean)
    if volume.shape != tuple(int(d) for d in target):
        raise ReferenceError(
            f"preprocessed volume {volume.shape} does not match input shape {target}")
    wanted = set(taps)
    last = max(wanted) if wanted else 0
    outputs: dict[int, np.ndarray] = {}
    for layer in header["layers"]:
        idx = layer["index"]
        if idx == 0:
            pass
        elif layer["kind"] == "conv":
            name = layer["name"]
            if name not in checkpoint_arrays:
                raise ReferenceError(f"checkpoint has no arrays for layer {name!r}")
            w, b = checkpoint_arrays[name]
            volume = _conv(volume, np.asarray(w, dtype=np.float64),
                           np.asarray(b, dtype=np.float64),
                           int(layer["stride"]), int(layer["padding"]))
        elif layer["kind"] == "pool":
            volume = _pool(volume, int(layer["filter_size"]),
                           int(layer["stride"]), int(layer.get("padding", 0)))
        elif layer["kind"] == "activation":
            volume = _activation(volume, layer["activation"])
        if idx in wanted:
            outputs[idx] = volume.copy()
        if idx >= last:
            break
    missing = wanted - set(outputs)
    if missing:
        raise ReferenceError(f"tap indices {sorted(missing)} not in schedule")
    return outputs
