"""Spec-driven feed-forward engine and the ".vgfm" weight container.

A network is a declarative list of layers (input, conv, pool, activation)
whose shapes chain: with spatial size D, filter f, stride s and padding p a
conv or pool layer produces floor((D + 2p - f) / s) + 1.  Fully-connected
layers are expressed as convolutions whose filter covers the whole spatial
extent (f = input size, p = 0), so one conv code path serves both.

The forward pass runs a single sample (no batch dimension) through layers
1..tap and returns the tap layer's volume; later layers never execute.
Activation layers can be substituted per call, which is how descriptor
variants swap plain ReLU for the average-biased one.

Weight container ".vgfm":

    magic "VGFM" | u32 LE version (=1) | u32 LE header length |
    UTF-8 JSON header | per-conv-layer float32 LE blobs

The JSON header carries the layer schedule, the input shape, the
per-channel normalization means and the weight dimension order, which is
always "out_in_h_w".  Blobs follow in layer order: for each conv layer
first the weights (out * in * f * f values, row-major), then the biases
(out values).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activations import ActivationKind, apply_activation
from .errors import ConfigError, FormatError, ShapeError, WeightError
from .tensor import Shape, Tensor

VGFM_MAGIC = b"VGFM"
VGFM_VERSION = 1
WEIGHT_ORDER = "out_in_h_w"

KIND_INPUT = "input"
KIND_CONV = "conv"
KIND_POOL = "pool"
KIND_ACTIVATION = "activation"


@dataclass(frozen=True)
class LayerSpec:
    """One declarative layer.  For pool layers `filter_size` is the window."""

    index: int
    name: str
    kind: str
    filter_size: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    stride: int | None = None
    padding: int | None = None
    activation: ActivationKind | None = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"layer index must be >= 0, got {self.index}")
        if self.kind == KIND_CONV:
            _require_positive(self.name, filter_size=self.filter_size,
                              in_channels=self.in_channels,
                              out_channels=self.out_channels, stride=self.stride)
            if self.padding is None or self.padding < 0:
                raise ValueError(f"{self.name}: padding must be >= 0")
        elif self.kind == KIND_POOL:
            _require_positive(self.name, filter_size=self.filter_size, stride=self.stride)
            if self.padding is None or self.padding < 0:
                raise ValueError(f"{self.name}: padding must be >= 0")
            if self.padding >= self.filter_size:
                raise ValueError(f"{self.name}: pool padding must be < window")
        elif self.kind == KIND_ACTIVATION:
            if self.activation is None:
                raise ValueError(f"{self.name}: activation layer needs an ActivationKind")
        elif self.kind != KIND_INPUT:
            raise ValueError(f"{self.name}: unknown layer kind {self.kind!r}")


def _require_positive(name: str, **fields: int | None) -> None:
    for key, value in fields.items():
        if value is None or value < 1:
            raise ValueError(f"{name}: {key} must be a positive integer, got {value}")


def _out_size(d: int, f: int, s: int, p: int) -> int:
    return (d + 2 * p - f) // s + 1


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer schedule plus input shape and normalization means."""

    name: str
    layers: tuple[LayerSpec, ...]
    input_shape: Shape
    normalization_mean: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for pos, layer in enumerate(self.layers):
            if layer.index != pos:
                raise ValueError(
                    f"layer indices must be 0..n-1 and contiguous; "
                    f"position {pos} holds index {layer.index} ({layer.name})"
                )
        if self.layers[0].kind != KIND_INPUT:
            raise ValueError("layer 0 must be the input layer")
        if len(self.input_shape) != 3:
            raise ValueError("input shape must be (H, W, C)")
        mean = tuple(float(m) for m in self.normalization_mean)
        if len(mean) not in (0, self.input_shape[2]):
            raise ValueError(
                f"normalization_mean needs one value per channel "
                f"({self.input_shape[2]}), got {len(mean)}"
            )
        if not mean:
            mean = (0.0,) * self.input_shape[2]
        object.__setattr__(self, "normalization_mean", mean)
        object.__setattr__(self, "layers", tuple(self.layers))
        self.chain_shapes()  # shapes must chain at construction

    def chain_shapes(self) -> tuple[tuple[int, int, int], ...]:
        """Output (H, W, C) of every layer; raises ShapeError on a broken chain."""
        shapes: list[tuple[int, int, int]] = []
        h, w, c = self.input_shape.dims
        for layer in self.layers:
            if layer.kind == KIND_INPUT:
                pass
            elif layer.kind == KIND_CONV:
                if layer.in_channels != c:
                    raise ShapeError(
                        f"layer {layer.name!r}: expects {layer.in_channels} input "
                        f"channels, previous layer provides {c}"
                    )
                h2 = _out_size(h, layer.filter_size, layer.stride, layer.padding)
                w2 = _out_size(w, layer.filter_size, layer.stride, layer.padding)
                if h2 < 1 or w2 < 1:
                    raise ShapeError(
                        f"layer {layer.name!r}: filter {layer.filter_size} does not "
                        f"fit input {h}x{w} (stride {layer.stride}, pad {layer.padding})"
                    )
                h, w, c = h2, w2, layer.out_channels
            elif layer.kind == KIND_POOL:
                h2 = _out_size(h, layer.filter_size, layer.stride, layer.padding)
                w2 = _out_size(w, layer.filter_size, layer.stride, layer.padding)
                if h2 < 1 or w2 < 1:
                    raise ShapeError(
                        f"layer {layer.name!r}: window {layer.filter_size} does not "
                        f"fit input {h}x{w}"
                    )
                h, w = h2, w2
            shapes.append((h, w, c))
        return tuple(shapes)

    def layer(self, index: int) -> LayerSpec:
        if not 0 <= index < len(self.layers):
            raise ConfigError(
                f"layer index {index} out of range 0..{len(self.layers) - 1}"
            )
        return self.layers[index]

    def conv_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers if l.kind == KIND_CONV)

    def activation_indices(self) -> tuple[int, ...]:
        return tuple(l.index for l in self.layers if l.kind == KIND_ACTIVATION)


@dataclass(frozen=True)
class ConvWeights:
    """Weights (out, in, f, f) and bias (out,) for one conv layer."""

    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got {self.weights.dims}")
        if self.weights.dims[2] != self.weights.dims[3]:
            raise ShapeError(f"conv filters must be square, got {self.weights.dims}")
        if self.bias.ndim != 1 or self.bias.dims[0] != self.weights.dims[0]:
            raise ShapeError(
                f"bias length {self.bias.dims} must match output channels "
                f"{self.weights.dims[0]}"
            )


class WeightStore:
    """Immutable mapping from conv layer name to its weights."""

    def __init__(self, entries: Mapping[str, ConvWeights]):
        self._entries = dict(entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def get(self, name: str) -> ConvWeights:
        try:
            return self._entries[name]
        except KeyError:
            raise WeightError(f"no weights stored for layer {name!r}") from None

    def validate_against(self, spec: NetworkSpec) -> None:
        """Every conv layer must have an entry of exactly the declared shape."""
        for layer in spec.conv_layers():
            if layer.name not in self._entries:
                raise WeightError(f"missing weights for layer {layer.name!r}")
            entry = self._entries[layer.name]
            expected = (layer.out_channels, layer.in_channels,
                        layer.filter_size, layer.filter_size)
            if entry.weights.dims != expected:
                raise WeightError(
                    f"layer {layer.name!r}: expected weights {expected}, "
                    f"found {entry.weights.dims}"
                )


def conv2d_forward(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
                   pad: int = 0) -> Tensor:
    """2-D convolution of an (H, W, Cin) volume with (Cout, Cin, f, f) filters.

    out[i, j, o] = b[o] + sum_{ci,u,v} x_pad[i*s + u, j*s + v, ci] * w[o, ci, u, v]

    with zero padding outside the borders.  Accumulates in float64 with a
    fixed summation order, stores float32.
    """
    a = x.data
    wt = w.data
    if a.ndim != 3:
        raise ShapeError(f"conv input must be (H, W, C), got {a.shape}")
    if wt.ndim != 4 or wt.shape[2] != wt.shape[3]:
        raise ShapeError(f"conv weights must be (out, in, f, f), got {wt.shape}")
    cout, cin, f, _ = wt.shape
    if a.shape[2] != cin:
        raise ShapeError(f"input has {a.shape[2]} channels, weights expect {cin}")
    if b.ndim != 1 or b.dims[0] != cout:
        raise ShapeError(f"bias must have length {cout}, got {b.dims}")
    if stride < 1 or pad < 0:
        raise ValueError(f"stride must be >= 1 and pad >= 0, got s={stride} p={pad}")
    h, wd = a.shape[:2]
    h_out = _out_size(h, f, stride, pad)
    w_out = _out_size(wd, f, stride, pad)
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"filter {f} does not fit input {h}x{wd} (stride {stride}, pad {pad})"
        )

    xp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=np.float64)
    xp[pad:pad + h, pad:pad + wd, :] = a
    wk = wt.astype(np.float64).transpose(2, 3, 1, 0)  # (f, f, cin, cout)
    acc = np.empty((h_out, w_out, cout), dtype=np.float64)
    acc[:] = b.data
    hi = (h_out - 1) * stride + 1
    wi = (w_out - 1) * stride + 1
    for u in range(f):
        for v in range(f):
            acc += xp[u:u + hi:stride, v:v + wi:stride, :] @ wk[u, v]
    return Tensor._wrap(acc.astype(np.float32))


def maxpool_forward(x: Tensor, window: int, stride: int, pad: int = 0) -> Tensor:
    """Per-channel max over window x window patches.

    Padded cells never participate in the max (pad must be < window, so
    every patch covers at least one real cell).
    """
    a = x.data
    if a.ndim != 3:
        raise ShapeError(f"pool input must be (H, W, C), got {a.shape}")
    if window < 1 or stride < 1 or pad < 0:
        raise ValueError(f"bad pool parameters f={window} s={stride} p={pad}")
    if pad >= window:
        raise ValueError(f"pool padding {pad} must be < window {window}")
    h, w, c = a.shape
    h_out = _out_size(h, window, stride, pad)
    w_out = _out_size(w, window, stride, pad)
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"window {window} does not fit input {h}x{w}")
    if pad:
        xp = np.full((h + 2 * pad, w + 2 * pad, c), -np.inf, dtype=np.float32)
        xp[pad:pad + h, pad:pad + w, :] = a
    else:
        xp = a
    win = sliding_window_view(xp, (window, window), axis=(0, 1))
    sub = win[::stride, ::stride][:h_out, :w_out]
    return Tensor._wrap(np.ascontiguousarray(sub.max(axis=(3, 4))))


def forward(spec: NetworkSpec, weights: WeightStore, x: Tensor, tap: int,
            overrides: Mapping[int, ActivationKind] | None = None) -> Tensor:
    """Run layers 1..tap and return the tap layer's output volume.

    `overrides` substitutes the activation of specific layers for this call
    only; keys must refer to activation layers.  Layers after the tap are
    never executed.
    """
    overrides = dict(overrides or {})
    spec.layer(tap)  # range check
    for idx, kind in overrides.items():
        if spec.layer(idx).kind != KIND_ACTIVATION:
            raise ConfigError(
                f"override target {idx} ({spec.layer(idx).name!r}) is not an "
                f"activation layer"
            )
        if not isinstance(kind, ActivationKind):
            raise ConfigError(f"override for layer {idx} is not an ActivationKind")

    if x.dims != spec.input_shape.dims:
        raise ShapeError(
            f"input volume {x.dims} does not match network input "
            f"{spec.input_shape.dims}"
        )
    v = x
    for layer in spec.layers[1:tap + 1]:
        try:
            if layer.kind == KIND_CONV:
                entry = weights.get(layer.name)
                expected = (layer.out_channels, layer.in_channels,
                            layer.filter_size, layer.filter_size)
                if entry.weights.dims != expected:
                    raise WeightError(
                        f"expected weights {expected}, found {entry.weights.dims}"
                    )
                v = conv2d_forward(v, entry.weights, entry.bias,
                                   layer.stride, layer.padding)
            elif layer.kind == KIND_POOL:
                v = maxpool_forward(v, layer.filter_size, layer.stride, layer.padding)
            elif layer.kind == KIND_ACTIVATION:
                kind = overrides.get(layer.index, layer.activation)
                v = apply_activation(kind, v)
        except (ShapeError, WeightError) as e:
            raise type(e)(f"layer {layer.name!r} (index {layer.index}): {e}") from None
    return v


# --- canonical 16-layer face network (Table-style schedule) ---

_CONV_BLOCKS = (
    (1, 2, 64),
    (2, 2, 128),
    (3, 3, 256),
    (4, 3, 512),
    (5, 3, 512),
)


def vggface_spec(normalization_mean: Sequence[float] = (0.0, 0.0, 0.0),
                 name: str = "vggface16") -> NetworkSpec:
    """The canonical 36-layer schedule: five conv blocks, then fc6/fc7.

    fc6 and fc7 are conv layers whose filter spans the full spatial extent,
    producing 1x1x4096 volumes.  The classification head is not part of the
    schedule; the last layer is the final rectifier.
    """
    layers: list[LayerSpec] = [LayerSpec(0, "input", KIND_INPUT)]
    idx = 1
    cin = 3
    for block, n_convs, cout in _CONV_BLOCKS:
        for j in range(1, n_convs + 1):
            layers.append(LayerSpec(idx, f"conv{block}_{j}", KIND_CONV,
                                    filter_size=3, in_channels=cin,
                                    out_channels=cout, stride=1, padding=1))
            idx += 1
            layers.append(LayerSpec(idx, f"relu{block}_{j}", KIND_ACTIVATION,
                                    activation=ActivationKind.relu()))
            idx += 1
            cin = cout
        layers.append(LayerSpec(idx, f"pool{block}", KIND_POOL,
                                filter_size=2, stride=2, padding=0))
        idx += 1
    layers.append(LayerSpec(idx, "fc6", KIND_CONV, filter_size=7, in_channels=512,
                            out_channels=4096, stride=1, padding=0))
    layers.append(LayerSpec(idx + 1, "relu6", KIND_ACTIVATION,
                            activation=ActivationKind.relu()))
    layers.append(LayerSpec(idx + 2, "fc7", KIND_CONV, filter_size=1,
                            in_channels=4096, out_channels=4096, stride=1, padding=0))
    layers.append(LayerSpec(idx + 3, "relu7", KIND_ACTIVATION,
                            activation=ActivationKind.relu()))
    return NetworkSpec(name=name, layers=tuple(layers),
                       input_shape=Shape(224, 224, 3),
                       normalization_mean=tuple(normalization_mean))


# --- container serialization ---

def _layer_to_json(layer: LayerSpec) -> dict:
    d: dict = {"index": layer.index, "name": layer.name, "kind": layer.kind}
    for key in ("filter_size", "in_channels", "out_channels", "stride", "padding"):
        value = getattr(layer, key)
        if value is not None:
            d[key] = value
    if layer.activation is not None:
        d["activation"] = layer.activation.serialize()
    return d


def _layer_from_json(d: dict) -> LayerSpec:
    try:
        kind = d["kind"]
        activation = None
        if kind == KIND_ACTIVATION:
            activation = ActivationKind.parse(d["activation"])
        return LayerSpec(
            index=int(d["index"]),
            name=str(d["name"]),
            kind=kind,
            filter_size=d.get("filter_size"),
            in_channels=d.get("in_channels"),
            out_channels=d.get("out_channels"),
            stride=d.get("stride"),
            padding=d.get("padding"),
            activation=activation,
        )
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise FormatError(f"bad layer entry {d!r}: {e}") from None


def spec_to_header(spec: NetworkSpec) -> dict:
    return {
        "name": spec.name,
        "input_shape": list(spec.input_shape.dims),
        "normalization_mean": list(spec.normalization_mean),
        "weight_order": WEIGHT_ORDER,
        "layers": [_layer_to_json(l) for l in spec.layers],
    }


def spec_from_header(header: dict) -> NetworkSpec:
    if header.get("weight_order") != WEIGHT_ORDER:
        raise FormatError(
            f"container declares weight order {header.get('weight_order')!r}, "
            f"this engine requires {WEIGHT_ORDER!r}"
        )
    try:
        layers = tuple(_layer_from_json(d) for d in header["layers"])
        return NetworkSpec(
            name=str(header.get("name", "unnamed")),
            layers=layers,
            input_shape=Shape(*header["input_shape"]),
            normalization_mean=tuple(header.get("normalization_mean", ())),
        )
    except FormatError:
        raise
    except ShapeError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad container header: {e}") from None


def save_weights(path, spec: NetworkSpec, weights: WeightStore) -> None:
    """Write a ".vgfm" container; blobs follow the header's layer order."""
    weights.validate_against(spec)
    header = json.dumps(spec_to_header(spec)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VGFM_MAGIC)
        fh.write(struct.pack("<II", VGFM_VERSION, len(header)))
        fh.write(header)
        for layer in spec.conv_layers():
            entry = weights.get(layer.name)
            fh.write(np.ascontiguousarray(entry.weights.data, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(entry.bias.data, dtype="<f4").tobytes())


def read_container_header(path) -> tuple[NetworkSpec, int]:
    """Parse the header only; returns (spec, payload offset).

    Also checks that the file size matches the payload the header implies,
    so corrupt or truncated containers are rejected before any blob is read.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != VGFM_MAGIC:
            raise FormatError(f"{path}: not a VGFM container (magic {magic!r})")
        raw = fh.read(8)
        if len(raw) < 8:
            raise FormatError(f"{path}: truncated header")
        version, header_len = struct.unpack("<II", raw)
        if version != VGFM_VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        header_raw = fh.read(header_len)
        if len(header_raw) < header_len:
            raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(header_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON: {e}") from None
    spec = spec_from_header(header)
    offset = 12 + header_len
    expected = offset + 4 * sum(
        l.out_channels * (l.in_channels * l.filter_size * l.filter_size + 1)
        for l in spec.conv_layers()
    )
    actual = os.stat(path).st_size
    if actual != expected:
        raise FormatError(
            f"{path}: payload size mismatch (expected {expected} bytes, "
            f"found {actual})"
        )
    return spec, offset


def load_weights(path) -> tuple[NetworkSpec, WeightStore]:
    """Load and fully validate a ".vgfm" container."""
    spec, offset = read_container_header(path)
    entries: dict[str, ConvWeights] = {}
    with open(path, "rb") as fh:
        fh.seek(offset)
        for layer in spec.conv_layers():
            n_w = layer.out_channels * layer.in_channels * layer.filter_size ** 2
            shape = (layer.out_channels, layer.in_channels,
                     layer.filter_size, layer.filter_size)
            w = _read_blob(fh, n_w, path, layer.name).reshape(shape)
            b = _read_blob(fh, layer.out_channels, path, layer.name)
            try:
                entries[layer.name] = ConvWeights(Tensor._wrap(w), Tensor._wrap(b))
            except ValueError as e:
                raise FormatError(f"{path}: layer {layer.name!r}: {e}") from None
    store = WeightStore(entries)
    store.validate_against(spec)
    return spec, store


def _read_blob(fh, count: int, path, name: str) -> np.ndarray:
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError(f"{path}: truncated weight blob for layer {name!r}")
    return np.frombuffer(raw, dtype="<f4").copy()


def describe_layers(spec: NetworkSpec) -> list[tuple[int, str, str, str, str]]:
    """Rows of (index, name, kind, filter text, volume text) for display."""
    rows = []
    for layer, (h, w, c) in zip(spec.layers, spec.chain_shapes()):
        if layer.kind == KIND_CONV:
            filt = (f"f:{layer.filter_size},{layer.in_channels},"
                    f"{layer.out_channels}, s:{layer.stride}, p:{layer.padding}")
        elif layer.kind == KIND_POOL:
            filt = f"f:{layer.filter_size}, s:{layer.stride}, p:{layer.padding}"
        else:
            filt = "n/a"
        volume = f"{h},{c}" if h == w else f"{h}x{w},{c}"
        rows.append((layer.index, layer.name, layer.kind, filt, volume))
    return rows
