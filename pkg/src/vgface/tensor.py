"""Dense float32 tensors and the raw ".vgt" tensor file format.

Every volume in the engine is a `Tensor`: an immutable, C-contiguous
(row-major, last dimension fastest) array of 32-bit floats.  Reductions
accumulate in 64-bit and round to 32-bit once, so results are deterministic
and independent of how work is split across threads.

The ".vgt" file format holds one raw tensor:

    magic "VGT1" | u32 LE ndims | ndims x u32 LE sizes | float32 LE values

Values are stored in row-major order.  It is used for test fixtures,
image inputs and descriptor dumps.
"""

from __future__ import annotations

import struct
from typing import Callable, Sequence

import numpy as np

from .errors import FormatError, ShapeError

VGT_MAGIC = b"VGT1"

# refuse absurd headers before trusting their size fields
_MAX_NDIMS = 32


class Shape:
    """Tuple of positive dimension sizes; equality is dimension-wise."""

    __slots__ = ("dims",)

    def __init__(self, *dims: int):
        if len(dims) == 1 and isinstance(dims[0], (tuple, list, Shape)):
            dims = tuple(dims[0].dims if isinstance(dims[0], Shape) else dims[0])
        if not dims:
            raise ShapeError("shape needs at least one dimension")
        for d in dims:
            if not isinstance(d, (int, np.integer)) or d < 1:
                raise ShapeError(f"dimension sizes must be positive integers, got {dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))

    def __setattr__(self, name, value):
        raise AttributeError("Shape is immutable")

    def __eq__(self, other):
        if isinstance(other, Shape):
            return self.dims == other.dims
        if isinstance(other, tuple):
            return self.dims == other
        return NotImplemented

    def __hash__(self):
        return hash(self.dims)

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __repr__(self):
        return f"Shape{self.dims}"

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n


class Tensor:
    """Immutable dense volume of float32 values.

    Construction copies the input, casts to float32 and rejects empty or
    non-finite data.  `data` exposes a read-only numpy view.
    """

    __slots__ = ("_a",)

    def __init__(self, values, dims: Sequence[int] | None = None):
        a = np.array(values, dtype=np.float32, order="C")
        if dims is not None:
            a = np.ascontiguousarray(a.reshape(tuple(dims)))
        _validate_array(a)
        a.flags.writeable = False
        object.__setattr__(self, "_a", a)

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "Tensor":
        """Adopt a freshly-allocated float32 C-contiguous array without copying."""
        if a.dtype != np.float32 or not a.flags.c_contiguous:
            a = np.ascontiguousarray(a, dtype=np.float32)
        _validate_array(a)
        if a.flags.writeable:
            a.flags.writeable = False
        obj = object.__new__(cls)
        object.__setattr__(obj, "_a", a)
        return obj

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def data(self) -> np.ndarray:
        return self._a

    @property
    def dims(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def shape(self) -> Shape:
        return Shape(*self._a.shape)

    @property
    def ndim(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    def tolist(self):
        return self._a.tolist()

    def __repr__(self):
        return f"Tensor(dims={self.dims})"

    # scalar arithmetic, enough for shift/scale style identities
    def __add__(self, c):
        return Tensor._wrap(self._a + np.float32(c))

    __radd__ = __add__

    def __sub__(self, c):
        return Tensor._wrap(self._a - np.float32(c))

    def __mul__(self, s):
        return Tensor._wrap(self._a * np.float32(s))

    __rmul__ = __mul__


def _validate_array(a: np.ndarray) -> None:
    if a.ndim < 1:
        raise ShapeError("tensors must have at least one dimension")
    if any(d < 1 for d in a.shape):
        raise ShapeError(f"every dimension must be >= 1, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("tensor values must be finite (no NaN/Inf)")


def mean_volume(t: Tensor) -> float:
    """Average over the whole volume (all elements, every dimension).

    Accumulates in float64 and rounds the result to float32 precision.
    """
    a = t.data
    if a.size == 0:
        raise ValueError("mean_volume of an empty tensor is undefined")
    return float(np.float32(a.sum(dtype=np.float64) / a.size))


def map_elementwise(t: Tensor, f: Callable[[float], float]) -> Tensor:
    """Apply a scalar function to every element, preserving shape."""
    out = np.vectorize(f, otypes=[np.float32])(t.data)
    return Tensor._wrap(np.ascontiguousarray(out))


def flatten(t: Tensor) -> Tensor:
    """Reshape to 1-D in row-major order; values are unchanged."""
    return Tensor._wrap(t.data.flatten())


def write_vgt(t: Tensor, path) -> None:
    """Write a tensor as a ".vgt" file."""
    a = np.ascontiguousarray(t.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(VGT_MAGIC)
        fh.write(struct.pack("<I", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}I", *t.dims))
        fh.write(a.tobytes())


def read_vgt(path) -> Tensor:
    """Read a ".vgt" file, validating magic, sizes and payload length."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != VGT_MAGIC:
        raise FormatError(f"{path}: not a VGT1 tensor file")
    (ndims,) = struct.unpack_from("<I", raw, 4)
    if not 1 <= ndims <= _MAX_NDIMS:
        raise FormatError(f"{path}: implausible dimension count {ndims}")
    header_end = 8 + 4 * ndims
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndims}I", raw, 8)
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: dimension sizes must be >= 1, got {dims}")
    count = 1
    for d in dims:
        count *= d
    expected = header_end + 4 * count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch (expected {expected} bytes, found {len(raw)})"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=header_end)
    if not np.isfinite(values).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    return Tensor._wrap(values.reshape(dims).copy())
