"""Acceptance gate: one test per criterion, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -v` (or `-s` for the per-criterion
PASS lines).  Every test prints a single line when its criterion holds.
"""

import json
import time

import numpy as np
import pytest

from oracles import conv2d_loops, maxpool_loops
from vgface.activations import ActivationKind, ab_relu, relu
from vgface.cli import main
from vgface.descriptor import parse_variant
from vgface.errors import ConfigError
from vgface.evaluation import DatasetManifest, FaceRecord, anmrr, run_experiment
from vgface.network import conv2d_forward, maxpool_forward, vggface_spec
from vgface.similarity import DistanceKind, distance
from vgface.tensor import Tensor, mean_volume, write_vgt


def _report(name, detail=""):
    print(f"PASS {name}" + (f" ({detail})" if detail else ""))


def _random_tensor(rng, max_side=8, max_depth=64):
    shape = (int(rng.integers(1, max_side + 1)),
             int(rng.integers(1, max_side + 1)),
             int(rng.integers(1, max_depth + 1)))
    return Tensor(rng.normal(size=shape).astype(np.float32))


def test_a01_alpha_zero_collapse():
    """ab_relu(x, 0) bit-equals relu(x) on >= 1000 seeded tensors in < 5 s."""
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    for _ in range(1000):
        t = _random_tensor(rng)
        np.testing.assert_array_equal(ab_relu(t, 0.0).data, relu(t).data)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"took {elapsed:.2f}s, budget is 5s"
    _report("alpha-zero collapse", f"1000 tensors, {elapsed:.2f}s")


def test_a02_shift_invariance():
    """ab_relu(x + c, 1) == ab_relu(x, 1) within 1e-5 absolute."""
    rng = np.random.default_rng(1002)
    for _ in range(500):
        t = _random_tensor(rng, max_side=6, max_depth=16)
        base = ab_relu(t, 1.0).data
        for c in (-10.0, -0.1, 0.1, 10.0):
            np.testing.assert_allclose(ab_relu(t + c, 1.0).data, base, atol=1e-5)
    _report("shift invariance", "500 tensors x 4 shifts")


def test_a03_scale_equivariance():
    """ab_relu(s*x, a) == s*ab_relu(x, a) within 1e-5 relative.

    The 1e-6 absolute floor covers float32 cancellation for elements right
    at the shifted threshold, where a one-ulp rounding difference makes a
    pure relative bound unsatisfiable at 32-bit precision.
    """
    rng = np.random.default_rng(1003)
    for _ in range(200):
        t = _random_tensor(rng, max_side=6, max_depth=16)
        for s in (0.5, 3.0):
            for alpha in (1.0, 2.0, 5.0):
                lhs = ab_relu(t * s, alpha).data
                rhs = s * ab_relu(t, alpha).data
                np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-6)
    _report("scale equivariance", "200 tensors x {0.5,3} x {1,2,5}")


def test_a04_support_relations():
    """Support inclusion vs plain relu, conditioned on the volume mean sign."""
    rng = np.random.default_rng(1004)
    checked_neg = 0
    checked_pos = 0
    while checked_neg < 500 or checked_pos < 500:
        t = _random_tensor(rng, max_side=5, max_depth=8)
        m = mean_volume(t)
        r = relu(t).data > 0
        a = ab_relu(t, 1.0).data > 0
        if m <= 0 and checked_neg < 500:
            assert np.all(a[r]), "relu support must be contained in ab_relu support"
            checked_neg += 1
        elif m >= 0 and checked_pos < 500:
            assert np.all(r[a]), "ab_relu support must be contained in relu support"
            checked_pos += 1
    _report("support relations", "500 cases per regime, 100%")


def test_a05_conv_pool_oracle():
    """conv2d/maxpool match nested-loop oracles within 1e-5 absolute."""
    rng = np.random.default_rng(1005)
    conv_cases = 0
    while conv_cases < 200:
        h, wd = rng.integers(1, 9, size=2)
        cin, cout = (int(v) for v in rng.integers(1, 5, size=2))
        f = int(rng.integers(1, min(h, wd) + 1))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        if (h + 2 * pad - f) // stride + 1 < 1:
            continue
        x = rng.normal(size=(h, wd, cin)).astype(np.float32)
        w = rng.normal(size=(cout, cin, f, f)).astype(np.float32)
        b = rng.normal(size=cout).astype(np.float32)
        got = conv2d_forward(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        np.testing.assert_allclose(got, conv2d_loops(x, w, b, stride, pad), atol=1e-5)
        conv_cases += 1
    pool_cases = 0
    while pool_cases < 200:
        h, wd = rng.integers(1, 10, size=2)
        c = int(rng.integers(1, 5))
        window = int(rng.integers(1, min(h, wd) + 1))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, window))
        x = rng.normal(size=(h, wd, c)).astype(np.float32)
        got = maxpool_forward(Tensor(x), window, stride, pad).data
        np.testing.assert_allclose(got, maxpool_loops(x, window, stride, pad),
                                   atol=1e-5)
        pool_cases += 1
    _report("conv/pool oracle", "200 conv + 200 pool cases")


def test_a06_canonical_shape_chain():
    """All 36 volume sizes reproduce; the tap-32 output is (1, 1, 4096)."""
    from test_network import CANONICAL_VOLUMES

    spec = vggface_spec()
    shapes = spec.chain_shapes()
    assert [(h, c) for (h, w, c) in shapes] == CANONICAL_VOLUMES
    assert all(h == w for (h, w, _) in shapes)
    assert shapes[32] == (1, 1, 4096)
    _report("canonical shape chain", "36 volumes + tap-32 (1,1,4096)")


def test_a07_distance_axioms():
    """Symmetry/non-negativity/self-distance on 1000 pairs; exact hand values."""
    assert distance(DistanceKind.CHISQ, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(
        2.0, abs=1e-9)
    assert distance(DistanceKind.D1, [1.0, 2.0], [3.0, 5.0]) == pytest.approx(
        0.775, abs=1e-9)
    rng = np.random.default_rng(1007)
    for _ in range(1000):
        n = int(rng.integers(1, 24))
        x = rng.uniform(0, 8, size=n)
        y = rng.uniform(0, 8, size=n)
        for kind in DistanceKind:
            d_xy = distance(kind, x, y)
            assert d_xy >= 0
            assert d_xy == pytest.approx(distance(kind, y, x), rel=1e-6, abs=1e-12)
            if kind is DistanceKind.COSINE:
                assert distance(kind, x, x) <= 1e-6
            else:
                assert distance(kind, x, x) == 0.0
    _report("distance axioms", "5 kinds x 1000 pairs + hand values")


def test_a08_rank_metric_anchors():
    """Perfect retrieval -> 0, total miss -> 1, hand fixture -> 0.142857."""
    assert anmrr([[1, 2, 3], [1, 2]]) == 0.0
    assert anmrr([[999, 1000], [500, 501, 502]]) == 1.0
    assert anmrr([[1, 3]]) == pytest.approx(0.142857, abs=1e-6)
    _report("rank-metric anchors", "0 / 1 / 0.142857")


def _acceptance_clusters():
    rng = np.random.default_rng(42)
    centers = 5.0 + 10.0 * np.eye(4)
    rows = []
    labels = []
    for s in range(4):
        for _ in range(8):
            rows.append(np.abs(centers[s] + 0.1 * rng.normal(size=4)))
            labels.append(f"subject{s}")
    return np.asarray(rows), labels


def test_a09_synthetic_end_to_end():
    """4 subjects x 8 tight clusters: perfect precision, zero rank penalty."""
    t0 = time.perf_counter()
    matrix, labels = _acceptance_clusters()
    manifest = DatasetManifest([FaceRecord(subject=s) for s in labels])
    report = run_experiment(manifest, matrix, DistanceKind.CHISQ,
                            cutoffs=(1, 7, 10), anmrr_window="cutoff")
    assert 100.0 * report.arp[1] == pytest.approx(100.00, abs=1e-9)
    assert 100.0 * report.arp[7] == pytest.approx(100.00, abs=1e-9)
    assert report.anmrr[10] == 0.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"took {elapsed:.2f}s, budget is 1s"
    _report("synthetic end-to-end retrieval", f"{elapsed:.3f}s")


def test_a10_cli_thread_determinism(tmp_path):
    """cmd_evaluate emits byte-identical CSV for --threads 1 and 8."""
    matrix, labels = _acceptance_clusters()
    matrix_path = tmp_path / "m.vgt"
    write_vgt(Tensor(matrix.astype(np.float32)), matrix_path)
    manifest_path = tmp_path / "m.json"
    manifest_path.write_text(json.dumps(
        [{"descriptor": i, "subject": s} for i, s in enumerate(labels)]))
    outputs = []
    for threads in ("1", "8"):
        out = tmp_path / f"r{threads}.csv"
        assert main(["evaluate", "--manifest", str(manifest_path),
                     "--matrix", str(matrix_path), "--distance", "chisq",
                     "--threads", threads, "--output", str(out)]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    _report("CLI thread determinism", "byte-identical CSV")


def test_a11_variant_grammar():
    """The 12 shorthand names map to their exact (tap, overrides) tuples."""
    expected = {
        "35R": (35, {}),
        "35AR": (35, {35: 1.0}),
        "35AR2": (35, {35: 2.0}),
        "35AR5": (35, {35: 5.0}),
        "33R": (33, {}),
        "33AR": (33, {33: 1.0}),
        "33AR2": (33, {33: 2.0}),
        "33AR5": (33, {33: 5.0}),
        "33AR_35": (35, {33: 1.0}),
        "33,35AR": (35, {33: 1.0, 35: 1.0}),
        "30AR_35": (35, {30: 1.0}),
        "30AR": (30, {30: 1.0}),
    }
    for name, (tap, overrides) in expected.items():
        v = parse_variant(name)
        assert v.tap_layer == tap, name
        assert {i: k for i, k in v.overrides.items()} == {
            i: ActivationKind.abrelu(a) for i, a in overrides.items()}, name
    for bad in ("36Q", "AR", "x35R", "35 AR", "emd"):
        with pytest.raises(ConfigError):
            parse_variant(bad)
    _report("variant grammar", "12 names + rejections")
