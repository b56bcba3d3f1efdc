import json

import numpy as np
import pytest

from vgface.activations import ActivationKind
from vgface.network import (ConvWeights, LayerSpec, NetworkSpec, WeightStore,
                            save_weights)
from vgface.tensor import Shape, Tensor, write_vgt

_MINI_BLOCKS = (
    (1, 2, 4),
    (2, 2, 8),
    (3, 3, 8),
    (4, 3, 16),
    (5, 3, 16),
)


def mini_canonical_spec(mean=(10.0, 20.0, 30.0)):
    """Same 36-layer structure as the full schedule, tiny channels.

    Layer indices, names and kinds all line up with the canonical network,
    so the shorthand variant catalog (taps 30/33/35) applies unchanged while
    a forward pass stays desk-cheap.  Input is 32x32x3; five pools bring the
    spatial size to 1, so fc6 has filter size 1.
    """
    layers = [LayerSpec(0, "input", "input")]
    idx = 1
    cin = 3
    for block, n_convs, cout in _MINI_BLOCKS:
        for j in range(1, n_convs + 1):
            layers.append(LayerSpec(idx, f"conv{block}_{j}", "conv",
                                    filter_size=3, in_channels=cin,
                                    out_channels=cout, stride=1, padding=1))
            idx += 1
            layers.append(LayerSpec(idx, f"relu{block}_{j}", "activation",
                                    activation=ActivationKind.relu()))
            idx += 1
            cin = cout
        layers.append(LayerSpec(idx, f"pool{block}", "pool",
                                filter_size=2, stride=2, padding=0))
        idx += 1
    layers.append(LayerSpec(idx, "fc6", "conv", filter_size=1, in_channels=16,
                            out_channels=32, stride=1, padding=0))
    layers.append(LayerSpec(idx + 1, "relu6", "activation",
                            activation=ActivationKind.relu()))
    layers.append(LayerSpec(idx + 2, "fc7", "conv", filter_size=1,
                            in_channels=32, out_channels=32, stride=1, padding=0))
    layers.append(LayerSpec(idx + 3, "relu7", "activation",
                            activation=ActivationKind.relu()))
    return NetworkSpec("mini-canonical", tuple(layers), Shape(32, 32, 3), mean)


def random_store(spec, seed=100):
    rng = np.random.default_rng(seed)
    entries = {}
    for layer in spec.conv_layers():
        w = 0.3 * rng.normal(size=(layer.out_channels, layer.in_channels,
                                   layer.filter_size, layer.filter_size))
        b = 0.1 * rng.normal(size=layer.out_channels)
        entries[layer.name] = ConvWeights(Tensor(w.astype(np.float32)),
                                          Tensor(b.astype(np.float32)))
    return WeightStore(entries)


@pytest.fixture(scope="session")
def mini_model(tmp_path_factory):
    """Path to a .vgfm container for the mini canonical network."""
    spec = mini_canonical_spec()
    store = random_store(spec)
    path = tmp_path_factory.mktemp("model") / "mini.vgfm"
    save_weights(path, spec, store)
    return path


@pytest.fixture(scope="session")
def face_dataset(tmp_path_factory):
    """Four 32x32x3 .vgt images (2 subjects x 2) plus a manifest file."""
    rng = np.random.default_rng(200)
    root = tmp_path_factory.mktemp("faces")
    entries = []
    for i, subject in enumerate(("alice", "alice", "bob", "bob")):
        base = 40.0 if subject == "alice" else 200.0
        img = np.clip(base + 25.0 * rng.normal(size=(32, 32, 3)), 0, 255)
        path = root / f"img{i}.vgt"
        write_vgt(Tensor(img.astype(np.float32)), path)
        entries.append({"path": str(path), "subject": subject})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2))
    return manifest
