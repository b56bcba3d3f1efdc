"""Bundled invariant suite behind the `selftest` subcommand.

Each check re-derives an expected result independently (brute-force loops,
hand-computed anchors) and compares the engine against it, so a broken
build fails loudly in the field without needing the dev test suite.
"""

from __future__ import annotations

import sys

import numpy as np

from . import activations, evaluation, network, similarity
from .evaluation import DatasetManifest, FaceRecord, run_experiment
from .similarity import DistanceKind
from .tensor import Tensor


def _conv_loops(x, w, b, stride, pad):
    h, wd, cin = x.shape
    cout, _, f, _ = w.shape
    h_out = (h + 2 * pad - f) // stride + 1
    w_out = (wd + 2 * pad - f) // stride + 1
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=np.float64)
    xp[pad:pad + h, pad:pad + wd] = x
    out = np.zeros((h_out, w_out, cout), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for o in range(cout):
                acc = float(b[o])
                for ci in range(cin):
                    for u in range(f):
                        for v in range(f):
                            acc += xp[i * stride + u, j * stride + v, ci] * w[o, ci, u, v]
                out[i, j, o] = acc
    return out


def _pool_loops(x, window, stride, pad):
    h, wd, c = x.shape
    h_out = (h + 2 * pad - window) // stride + 1
    w_out = (wd + 2 * pad - window) // stride + 1
    xp = np.full((h + 2 * pad, wd + 2 * pad, c), -np.inf, dtype=np.float64)
    xp[pad:pad + h, pad:pad + wd] = x
    out = np.zeros((h_out, w_out, c), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for ch in range(c):
                out[i, j, ch] = xp[i * stride:i * stride + window,
                                   j * stride:j * stride + window, ch].max()
    return out


def _check_alpha_zero() -> str | None:
    rng = np.random.default_rng(7)
    for _ in range(200):
        t = Tensor(rng.normal(size=rng.integers(1, 64)).astype(np.float32))
        a = activations.ab_relu(t, 0.0).data
        r = activations.relu(t).data
        if not np.array_equal(a, r):
            return "alpha=0 output differs from plain rectifier"
    return None


def _check_shift_invariance() -> str | None:
    rng = np.random.default_rng(8)
    for _ in range(100):
        t = Tensor(rng.normal(size=(4, 5)).astype(np.float32))
        for c in (-3.0, 0.25, 5.0):
            base = activations.ab_relu(t, 1.0).data
            shifted = activations.ab_relu(t + c, 1.0).data
            if np.abs(shifted - base).max() > 1e-5:
                return f"shift by {c} moved outputs"
    return None


def _check_conv_oracle() -> str | None:
    rng = np.random.default_rng(9)
    for _ in range(30):
        h, wd = rng.integers(2, 8, size=2)
        cin, cout = rng.integers(1, 4, size=2)
        f = int(rng.integers(1, min(h, wd) + 1))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        x = rng.normal(size=(h, wd, cin)).astype(np.float32)
        w = rng.normal(size=(cout, cin, f, f)).astype(np.float32)
        b = rng.normal(size=cout).astype(np.float32)
        got = network.conv2d_forward(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        want = _conv_loops(x, w, b, stride, pad)
        if np.abs(got - want).max() > 1e-5:
            return f"conv mismatch {np.abs(got - want).max():.2e}"
    return None


def _check_pool_oracle() -> str | None:
    rng = np.random.default_rng(10)
    for _ in range(30):
        h, wd = rng.integers(2, 9, size=2)
        c = int(rng.integers(1, 4))
        window = int(rng.integers(1, min(h, wd) + 1))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, window))
        x = rng.normal(size=(h, wd, c)).astype(np.float32)
        got = network.maxpool_forward(Tensor(x), window, stride, pad).data
        want = _pool_loops(x, window, stride, pad)
        if np.abs(got - want).max() > 1e-5:
            return "pool mismatch"
    return None


def _check_distances() -> str | None:
    if abs(similarity.distance(DistanceKind.CHISQ, [1, 0], [0, 1]) - 2.0) > 1e-9:
        return "chisq hand value"
    if abs(similarity.distance(DistanceKind.D1, [1, 2], [3, 5]) - 0.775) > 1e-9:
        return "d1 hand value"
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.uniform(0, 5, size=16)
        y = rng.uniform(0, 5, size=16)
        for kind in DistanceKind:
            d_xy = similarity.distance(kind, x, y)
            d_yx = similarity.distance(kind, y, x)
            if d_xy < 0:
                return f"{kind} negative"
            if abs(d_xy - d_yx) > 1e-6 * max(1.0, abs(d_xy)):
                return f"{kind} asymmetric"
            if kind is not DistanceKind.COSINE and similarity.distance(kind, x, x) != 0.0:
                return f"{kind} self-distance nonzero"
    return None


def _check_anmrr() -> str | None:
    if evaluation.anmrr([[1, 2], [1, 2]]) != 0.0:
        return "perfect retrieval should give 0"
    if evaluation.anmrr([[100, 101]], window=None) != 1.0:
        return "total miss should give 1"
    got = evaluation.anmrr([[1, 3]])
    if abs(got - 0.5 / 3.5) > 1e-6:
        return f"anchor fixture gave {got}"
    return None


def _synthetic_clusters(rng):
    centers = 5.0 + 10.0 * np.eye(4)
    rows = []
    subjects = []
    for s in range(4):
        for _ in range(8):
            rows.append(np.abs(centers[s] + 0.1 * rng.normal(size=4)))
            subjects.append(f"s{s}")
    return np.asarray(rows), subjects


def _check_end_to_end() -> str | None:
    rng = np.random.default_rng(12)
    matrix, subjects = _synthetic_clusters(rng)
    manifest = DatasetManifest([FaceRecord(subject=s) for s in subjects])
    report = run_experiment(manifest, matrix, DistanceKind.CHISQ,
                            cutoffs=(1, 7, 10), anmrr_window="cutoff")
    if report.arp[1] != 1.0 or report.arp[7] != 1.0:
        return f"cluster fixture precision {report.arp}"
    if report.anmrr[10] != 0.0:
        return f"cluster fixture rank metric {report.anmrr[10]}"
    return None


def _check_determinism() -> str | None:
    rng = np.random.default_rng(12)
    matrix, subjects = _synthetic_clusters(rng)
    manifest = DatasetManifest([FaceRecord(subject=s) for s in subjects])
    a = run_experiment(manifest, matrix, DistanceKind.EUCLIDEAN, threads=1)
    b = run_experiment(manifest, matrix, DistanceKind.EUCLIDEAN, threads=4)
    if a != b:
        return "reports differ across thread counts"
    return None


CHECKS = (
    ("activation alpha=0 collapse", _check_alpha_zero),
    ("activation shift invariance", _check_shift_invariance),
    ("convolution vs loop oracle", _check_conv_oracle),
    ("max-pool vs loop oracle", _check_pool_oracle),
    ("distance axioms and hand values", _check_distances),
    ("rank-metric anchors", _check_anmrr),
    ("synthetic end-to-end retrieval", _check_end_to_end),
    ("thread-count determinism", _check_determinism),
)


def run_selftest(out=None) -> int:
    out = out or sys.stdout
    failures = 0
    for name, check in CHECKS:
        try:
            problem = check()
        except Exception as e:  # a crash is a failure, not an abort
            problem = f"raised {type(e).__name__}: {e}"
        if problem is None:
            print(f"[PASS] {name}", file=out)
        else:
            print(f"[FAIL] {name}: {problem}", file=out)
            failures += 1
    print(f"selftest: {len(CHECKS) - failures}/{len(CHECKS)} checks passed", file=out)
    return 0 if failures == 0 else 3
