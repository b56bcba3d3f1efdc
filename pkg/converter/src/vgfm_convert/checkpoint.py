"""Checkpoint readers: MatConvNet-style .mat structs and flat .mat/.npz.

Two source layouts are understood:

* struct layout (.mat): a top-level `net` struct in the simplenn style,
  `net.layers` holding conv/relu/pool entries with `weights = {W, b}`, and
  normalization metadata under `net.meta.normalization.averageImage` (or
  the older `net.normalization.averageImage`).
* flat layout (.mat or .npz): one `<layer>_weight` and `<layer>_bias`
  array per conv layer, plus an optional `normalization_mean` vector.

Conv weight arrays are expected in (h, w, in, out) order in both layouts;
biases may come as (n,), (n, 1) or (1, n).  A full average image is
reduced to per-channel means.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    """Per-layer (weight, bias) arrays plus optional normalization means."""

    arrays: dict[str, tuple[np.ndarray, np.ndarray]]
    mean: tuple[float, ...] | None = None
    source: str = ""
    extras: list[str] = field(default_factory=list)

    def layer_names(self) -> list[str]:
        return sorted(self.arrays)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".npz":
        return _load_flat_npz(path)
    if suffix == ".mat":
        return _load_mat(path)
    raise CheckpointError(f"{path}: unsupported checkpoint type {suffix!r}")


def _load_flat_npz(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as data:
            variables = {k: np.asarray(data[k]) for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: cannot read npz archive: {e}") from None
    return _from_flat_variables(variables, str(path))


def _load_mat(path) -> Checkpoint:
    try:
        data = scipy.io.loadmat(path, struct_as_record=False, squeeze_me=True)
    except (OSError, ValueError, TypeError, NotImplementedError) as e:
        raise CheckpointError(f"{path}: cannot read mat file: {e}") from None
    if "net" in data:
        return _from_simplenn_struct(data["net"], str(path))
    variables = {k: np.asarray(v) for k, v in data.items()
                 if not k.startswith("__")}
    return _from_flat_variables(variables, str(path))


def _from_flat_variables(variables: dict, source: str) -> Checkpoint:
    arrays: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    extras = []
    mean = None
    for key, value in variables.items():
        if key == "normalization_mean":
            mean = _mean_from_array(np.asarray(value, dtype=np.float64))
        elif key.endswith("_weight"):
            name = key[:-len("_weight")]
            bias_key = f"{name}_bias"
            if bias_key not in variables:
                raise CheckpointError(f"{source}: {key} has no matching {bias_key}")
            arrays[name] = (_as_weight(value, source, name),
                            _as_bias(variables[bias_key], source, name))
        elif key.endswith("_bias"):
            pass  # consumed together with its weight
        else:
            extras.append(key)
    if not arrays:
        raise CheckpointError(f"{source}: no '<layer>_weight' arrays found")
    return Checkpoint(arrays=arrays, mean=mean, source=source, extras=extras)


def _from_simplenn_struct(net, source: str) -> Checkpoint:
    layers = getattr(net, "layers", None)
    if layers is None:
        raise CheckpointError(f"{source}: net struct has no layers")
    if not isinstance(layers, np.ndarray):
        layers = np.asarray([layers])
    arrays: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    extras = []
    for entry in np.ravel(layers):
        kind = str(getattr(entry, "type", ""))
        name = str(getattr(entry, "name", ""))
        if kind != "conv":
            if kind not in ("relu", "pool", "input", ""):
                extras.append(f"{name or kind} ({kind})")
            continue
        weights = getattr(entry, "weights", None)
        if weights is None:  # pre-2015 field names
            w, b = getattr(entry, "filters", None), getattr(entry, "biases", None)
        else:
            cells = list(np.ravel(np.asarray(weights, dtype=object)))
            if len(cells) < 2:
                raise CheckpointError(f"{source}: layer {name!r} needs W and b")
            w, b = cells[0], cells[1]
        if w is None or b is None:
            raise CheckpointError(f"{source}: layer {name!r} has no weight arrays")
        arrays[name] = (_as_weight(w, source, name), _as_bias(b, source, name))
    if not arrays:
        raise CheckpointError(f"{source}: no conv layers in net struct")
    return Checkpoint(arrays=arrays, mean=_struct_mean(net), source=source,
                      extras=extras)


def _struct_mean(net) -> tuple[float, ...] | None:
    for holder in (getattr(net, "meta", None), net):
        normalization = getattr(holder, "normalization", None)
        image = getattr(normalization, "averageImage", None)
        if image is not None:
            return _mean_from_array(np.asarray(image, dtype=np.float64))
    return None


def _mean_from_array(a: np.ndarray) -> tuple[float, ...]:
    a = np.squeeze(a)
    if a.ndim == 1:
        return tuple(float(v) for v in a)
    if a.ndim == 3:  # full average image: reduce to per-channel means
        return tuple(float(v) for v in a.mean(axis=(0, 1)))
    raise CheckpointError(f"cannot interpret normalization metadata of shape {a.shape}")


def _as_weight(value, source: str, name: str) -> np.ndarray:
    a = np.asarray(value)
    if a.ndim == 2:
        # mat loading squeezes 1x1xInxOut fc-style filters down to (in, out)
        a = a.reshape((1, 1) + a.shape)
    if a.ndim != 4:
        raise CheckpointError(
            f"{source}: layer {name!r} weight must be 4-D (h, w, in, out), "
            f"got shape {a.shape}")
    return a


def _as_bias(value, source: str, name: str) -> np.ndarray:
    a = np.squeeze(np.asarray(value))
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise CheckpointError(
            f"{source}: layer {name!r} bias must be a vector, got shape {a.shape}")
    return a
