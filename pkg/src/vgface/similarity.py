"""Distance measures between descriptors; lower distance means more similar.

All five measures accumulate in float64.  Chi-square skips components where
both vectors are zero (no evidence either way) and carries no constant
prefactor, which cannot affect rankings.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


class DistanceKind(enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"
    L1 = "l1"
    D1 = "d1"
    CHISQ = "chisq"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "DistanceKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            names = "|".join(k.value for k in cls)
            raise ConfigError(f"unknown distance {text!r} (expected {names})") from None


_NONNEG_KINDS = frozenset({DistanceKind.CHISQ, DistanceKind.D1})


def _as_vector(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    if a.ndim != 1:
        raise ShapeError(f"distance operands must be 1-D, got shape {a.shape}")
    return a.astype(np.float64)


def distance(kind: DistanceKind, x, y) -> float:
    """Distance between two equal-length vectors."""
    a, b = _as_vector(x), _as_vector(y)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if kind in _NONNEG_KINDS and (a.min() < 0 or b.min() < 0):
        raise ValueError(f"{kind} requires non-negative components")
    return float(_pairwise(kind, a, b))


def _pairwise(kind: DistanceKind, a: np.ndarray, b: np.ndarray) -> float:
    if kind is DistanceKind.EUCLIDEAN:
        d = a - b
        return np.sqrt((d * d).sum())
    if kind is DistanceKind.L1:
        return np.abs(a - b).sum()
    if kind is DistanceKind.COSINE:
        na = np.sqrt((a * a).sum())
        nb = np.sqrt((b * b).sum())
        if na == 0.0 or nb == 0.0:
            return 1.0
        # rounding can push the similarity a hair past 1 for aligned vectors
        return max(0.0, 1.0 - (a @ b) / (na * nb))
    if kind is DistanceKind.CHISQ:
        s = a + b
        d = a - b
        mask = s > 0
        return (d[mask] ** 2 / s[mask]).sum()
    if kind is DistanceKind.D1:
        return (np.abs(a - b) / (1.0 + a + b)).sum()
    raise ConfigError(f"unhandled distance kind {kind!r}")


def gallery_distances(kind: DistanceKind, probe, gallery_matrix) -> np.ndarray:
    """Distances from one probe vector to every row of an (N, D) matrix."""
    p = _as_vector(probe)
    m = np.asarray(gallery_matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"gallery matrix must be 2-D, got shape {m.shape}")
    if m.shape[1] != p.shape[0]:
        raise ShapeError(f"length mismatch: probe {p.shape[0]} vs gallery {m.shape[1]}")
    if kind in _NONNEG_KINDS and (p.min() < 0 or m.min() < 0):
        raise ValueError(f"{kind} requires non-negative components")
    if kind is DistanceKind.EUCLIDEAN:
        d = m - p
        return np.sqrt((d * d).sum(axis=1))
    if kind is DistanceKind.L1:
        return np.abs(m - p).sum(axis=1)
    if kind is DistanceKind.COSINE:
        np_norm = np.sqrt((p * p).sum())
        row_norms = np.sqrt((m * m).sum(axis=1))
        out = np.ones(m.shape[0], dtype=np.float64)
        if np_norm == 0.0:
            return out
        ok = row_norms > 0
        out[ok] = np.maximum(0.0, 1.0 - (m[ok] @ p) / (row_norms[ok] * np_norm))
        return out
    if kind is DistanceKind.CHISQ:
        s = m + p
        d = m - p
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, d * d / safe, 0.0).sum(axis=1)
    if kind is DistanceKind.D1:
        return (np.abs(m - p) / (1.0 + m + p)).sum(axis=1)
    raise ConfigError(f"unhandled distance kind {kind!r}")


def rank_gallery(kind: DistanceKind, probe, gallery: Sequence) -> list[int]:
    """Gallery indices sorted by ascending distance; ties break by index.

    Stable and deterministic: equal distances keep ascending gallery order.
    """
    if len(gallery) == 0:
        raise ValueError("gallery must not be empty")
    rows = []
    for g in gallery:
        values = getattr(g, "values", g)
        rows.append(values.data if isinstance(values, Tensor) else np.asarray(values))
    matrix = np.stack(rows)
    probe_values = getattr(probe, "values", probe)
    dists = gallery_distances(kind, probe_values, matrix)
    return list(np.argsort(dists, kind="stable"))
