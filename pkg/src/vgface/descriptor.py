"""Image ingestion, preprocessing and descriptor-variant extraction.

A descriptor variant is a small recipe: which layer's output becomes the
feature vector (the tap) and which activation layers get their rectifier
replaced by the average-biased one.  Variant names follow a compact
grammar, e.g.

    35R        tap layer 35, no replacement
    35AR2      tap layer 35, replace its rectifier, alpha = 2
    33AR_35    replace at 33, but tap layer 35
    33,35AR    replace at 33 and 35, tap 35
    30AR       replace at 30 and tap there

The tap must be an activation layer, so descriptors are always rectifier
outputs: non-negative and finite.  Extraction flattens the tap volume into
a 1-D vector in row-major order.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .activations import ActivationKind
from .errors import ConfigError, FormatError
from .network import KIND_ACTIVATION, NetworkSpec, WeightStore, forward
from .tensor import Shape, Tensor, flatten, read_vgt, write_vgt

_SINGLE = re.compile(r"^(\d+)(R|AR(\d*))$")
_TAIL = re.compile(r"^(\d+)AR(\d*)_(\d+)$")
_PAIR = re.compile(r"^(\d+),(\d+)AR(\d*)$")

_GRAMMAR_HELP = (
    "expected <tap>R, <tap>AR[alpha], <at>AR[alpha]_<tap> or <a>,<b>AR[alpha] "
    "(e.g. 35R, 35AR2, 33AR_35, 33,35AR)"
)


@dataclass(frozen=True)
class DescriptorVariant:
    """Named recipe: tap layer plus per-layer activation replacements."""

    name: str
    tap_layer: int
    overrides: Mapping[int, ActivationKind] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "overrides", dict(self.overrides))
        if any(idx > self.tap_layer for idx in self.overrides):
            raise ConfigError(
                f"variant {self.name!r}: override beyond tap layer {self.tap_layer}"
            )


def _alpha(digits: str) -> float:
    return float(digits) if digits else 1.0


def parse_variant(name: str) -> DescriptorVariant:
    """Parse a variant name; unknown names raise ConfigError with the grammar."""
    text = name.strip()
    m = _SINGLE.match(text)
    if m:
        tap = int(m.group(1))
        if m.group(2) == "R":
            return DescriptorVariant(text, tap)
        return DescriptorVariant(text, tap, {tap: ActivationKind.abrelu(_alpha(m.group(3)))})
    m = _TAIL.match(text)
    if m:
        at, tap = int(m.group(1)), int(m.group(3))
        if at >= tap:
            raise ConfigError(
                f"bad variant {name!r}: replacement layer {at} must precede tap {tap}"
            )
        return DescriptorVariant(text, tap, {at: ActivationKind.abrelu(_alpha(m.group(2)))})
    m = _PAIR.match(text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if a >= b:
            raise ConfigError(f"bad variant {name!r}: layers must be ascending")
        kind = ActivationKind.abrelu(_alpha(m.group(3)))
        return DescriptorVariant(text, b, {a: kind, b: kind})
    raise ConfigError(f"unknown variant {name!r}: {_GRAMMAR_HELP}")


@dataclass(frozen=True)
class Descriptor:
    """Flat feature vector for one image."""

    values: Tensor
    variant: str
    source: str = ""

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError(f"descriptor values must be 1-D, got {self.values.dims}")
        if float(self.values.data.min()) < 0:
            raise ValueError("descriptor values must be non-negative")

    def __len__(self) -> int:
        return self.values.size


def preprocess(image: Tensor, target: Shape, mean: Sequence[float]) -> Tensor:
    """Bilinear resize to the target (H, W), then subtract per-channel means.

    Resize uses half-pixel centers with edge clamping: output pixel i samples
    source coordinate (i + 0.5) * in/out - 0.5.  Interpolation runs in
    float64 and the result is stored as float32.
    """
    if image.ndim != 3:
        raise FormatError(f"image must be (H, W, C), got {image.dims}")
    if len(target) != 3:
        raise FormatError(f"target shape must be (H, W, C), got {target!r}")
    channels = image.dims[2]
    if channels != target[2]:
        raise FormatError(
            f"image has {channels} channels, network expects {target[2]}"
        )
    if len(mean) != channels:
        raise FormatError(
            f"need one mean per channel ({channels}), got {len(mean)}"
        )
    a = image.data.astype(np.float64)
    a = _resize_axis(a, target[0], axis=0)
    a = _resize_axis(a, target[1], axis=1)
    a = a - np.asarray(mean, dtype=np.float64)
    return Tensor._wrap(a.astype(np.float32))


def _resize_axis(a: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = a.shape[axis]
    if in_len == out_len:
        return a
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_len - 1)
    t = src - i0
    t = t.reshape([-1 if d == axis else 1 for d in range(a.ndim)])
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    return lo + (hi - lo) * t


def extract(spec: NetworkSpec, weights: WeightStore, variant: DescriptorVariant,
            image: Tensor, source: str = "") -> Descriptor:
    """Run the network to the variant's tap and flatten the output volume.

    The image must already be preprocessed to the network's input shape.
    """
    tap = spec.layer(variant.tap_layer)
    if tap.kind != KIND_ACTIVATION:
        raise ConfigError(
            f"variant {variant.name!r}: tap layer {variant.tap_layer} "
            f"({tap.name!r}) is not an activation layer"
        )
    out = forward(spec, weights, image, variant.tap_layer, variant.overrides)
    return Descriptor(values=flatten(out), variant=variant.name, source=source)


def load_image(path) -> Tensor:
    """Load an image file as a float32 (H, W, C) tensor.

    ".vgt" files are read verbatim; PNG/PPM/PGM (and anything else Pillow
    decodes) come back as 0..255 values, RGB unless the source is grayscale.
    """
    path = Path(path)
    if path.suffix.lower() == ".vgt":
        t = read_vgt(path)
        if t.ndim == 2:
            t = Tensor._wrap(t.data.reshape(t.dims + (1,)).copy())
        if t.ndim != 3:
            raise FormatError(f"{path}: image tensor must be (H, W[, C]), got {t.dims}")
        return t
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            a = np.asarray(img, dtype=np.float32)
    except (UnidentifiedImageError, OSError) as e:
        raise FormatError(f"{path}: cannot decode image: {e}") from None
    if a.ndim == 2:
        a = a[:, :, None]
    return Tensor._wrap(np.ascontiguousarray(a))


def extract_from_file(spec: NetworkSpec, weights: WeightStore,
                      variant: DescriptorVariant, path) -> Descriptor:
    image = load_image(path)
    prepared = preprocess(image, spec.input_shape, spec.normalization_mean)
    return extract(spec, weights, variant, prepared, source=str(path))


def extract_many(spec: NetworkSpec, weights: WeightStore,
                 variant: DescriptorVariant, paths: Sequence,
                 threads: int = 1) -> list[Descriptor]:
    """Extract descriptors for many images; output order follows input order."""
    if threads <= 1 or len(paths) <= 1:
        return [extract_from_file(spec, weights, variant, p) for p in paths]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: extract_from_file(spec, weights, variant, p),
                             paths))


def write_descriptor_matrix(directory, variant_name: str,
                            descriptors: Sequence[Descriptor],
                            subjects: Sequence[str] | None = None) -> tuple[Path, Path]:
    """Dump descriptors as one (N, D) ".vgt" matrix plus a JSON sidecar.

    The sidecar maps rows to their source records so the matrix can be
    re-associated with a manifest later.
    """
    if not descriptors:
        raise ValueError("nothing to write: no descriptors")
    lengths = {len(d) for d in descriptors}
    if len(lengths) != 1:
        raise ValueError(f"descriptor lengths differ: {sorted(lengths)}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    safe = variant_name.replace(",", "_")
    matrix_path = directory / f"{safe}.vgt"
    sidecar_path = directory / f"{safe}.json"
    matrix = np.stack([d.values.data for d in descriptors])
    write_vgt(Tensor._wrap(np.ascontiguousarray(matrix)), matrix_path)
    records = []
    for row, d in enumerate(descriptors):
        rec = {"row": row, "source": d.source}
        if subjects is not None:
            rec["subject"] = subjects[row]
        records.append(rec)
    sidecar = {
        "variant": variant_name,
        "length": int(matrix.shape[1]),
        "count": int(matrix.shape[0]),
        "matrix": matrix_path.name,
        "records": records,
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return matrix_path, sidecar_path


def read_descriptor_matrix(sidecar_path) -> tuple[str, np.ndarray, list[dict]]:
    """Read a matrix + sidecar pair; returns (variant, matrix, records)."""
    sidecar_path = Path(sidecar_path)
    try:
        sidecar = json.loads(sidecar_path.read_text())
        variant = sidecar["variant"]
        records = sidecar["records"]
        matrix_name = sidecar["matrix"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{sidecar_path}: bad descriptor sidecar: {e}") from None
    matrix = read_vgt(sidecar_path.parent / matrix_name)
    if matrix.ndim != 2:
        raise FormatError(f"{sidecar_path}: descriptor matrix must be 2-D")
    if matrix.dims[0] != len(records):
        raise FormatError(
            f"{sidecar_path}: sidecar lists {len(records)} records but matrix "
            f"has {matrix.dims[0]} rows"
        )
    return variant, matrix.data, records
