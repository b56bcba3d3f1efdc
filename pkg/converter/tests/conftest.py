import json
import sys

import numpy as np
import pytest

from toynet import toy_arrays, toy_schedule, write_flat_npz


@pytest.fixture
def engine_cmd():
    return [sys.executable, "-m", "vgface.cli"]


@pytest.fixture
def engine_cmd_text():
    return f'"{sys.executable}" -m vgface.cli'


@pytest.fixture
def toy_setup(tmp_path):
    """Schedule file, flat checkpoint and a sample image, ready to convert."""
    schedule_path = tmp_path / "schedule.json"
    schedule_path.write_text(json.dumps(toy_schedule()))
    checkpoint_path = write_flat_npz(tmp_path / "toy.npz", toy_arrays(),
                                     mean=[5.0, 10.0, 15.0])
    rng = np.random.default_rng(99)
    image = rng.uniform(0, 255, size=(6, 6, 3)).astype(np.float32)
    from vgfm_convert.container import write_vgt

    image_path = tmp_path / "sample.vgt"
    write_vgt(image_path, image)
    return {"schedule": schedule_path, "checkpoint": checkpoint_path,
            "image": image_path, "tmp": tmp_path}
