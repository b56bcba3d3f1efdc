"""Layer schedules in the container-header JSON schema.

A schedule is a plain dict: {"name", "input_shape", "layers": [...]} where
each layer entry carries index/name/kind plus the conv/pool parameters or
the activation string.  The built-in default is the canonical 36-layer
face-network schedule (five 3x3 conv blocks with 2x2 pools, then fc6/fc7
expressed as full-extent convolutions); anything else can be supplied as a
JSON file with the same shape.
"""

from __future__ import annotations

import json
from pathlib import Path


class ScheduleError(Exception):
    pass


_CONV_BLOCKS = (
    (1, 2, 64),
    (2, 2, 128),
    (3, 3, 256),
    (4, 3, 512),
    (5, 3, 512),
)


def canonical_schedule() -> dict:
    """The 36-layer schedule the pretrained face release follows."""
    layers = [{"index": 0, "name": "input", "kind": "input"}]
    idx = 1
    cin = 3
    for block, n_convs, cout in _CONV_BLOCKS:
        for j in range(1, n_convs + 1):
            layers.append({"index": idx, "name": f"conv{block}_{j}", "kind": "conv",
                           "filter_size": 3, "in_channels": cin,
                           "out_channels": cout, "stride": 1, "padding": 1})
            idx += 1
            layers.append({"index": idx, "name": f"relu{block}_{j}",
                           "kind": "activation", "activation": "relu"})
            idx += 1
            cin = cout
        layers.append({"index": idx, "name": f"pool{block}", "kind": "pool",
                       "filter_size": 2, "stride": 2, "padding": 0})
        idx += 1
    layers.append({"index": idx, "name": "fc6", "kind": "conv", "filter_size": 7,
                   "in_channels": 512, "out_channels": 4096, "stride": 1,
                   "padding": 0})
    layers.append({"index": idx + 1, "name": "relu6", "kind": "activation",
                   "activation": "relu"})
    layers.append({"index": idx + 2, "name": "fc7", "kind": "conv",
                   "filter_size": 1, "in_channels": 4096, "out_channels": 4096,
                   "stride": 1, "padding": 0})
    layers.append({"index": idx + 3, "name": "relu7", "kind": "activation",
                   "activation": "relu"})
    return {"name": "vggface16", "input_shape": [224, 224, 3], "layers": layers}


def load_schedule(path) -> dict:
    try:
        schedule = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ScheduleError(f"cannot read schedule {path}: {e}") from None
    validate_schedule(schedule)
    return schedule


def validate_schedule(schedule: dict) -> None:
    if not isinstance(schedule, dict):
        raise ScheduleError("schedule must be a JSON object")
    shape = schedule.get("input_shape")
    if (not isinstance(shape, (list, tuple)) or len(shape) != 3
            or any(int(d) < 1 for d in shape)):
        raise ScheduleError(f"schedule needs input_shape [H, W, C], got {shape!r}")
    layers = schedule.get("layers")
    if not isinstance(layers, list) or not layers:
        raise ScheduleError("schedule needs a non-empty layers array")
    for pos, layer in enumerate(layers):
        if not isinstance(layer, dict):
            raise ScheduleError(f"layer {pos} must be an object")
        if layer.get("index") != pos:
            raise ScheduleError(f"layer indices must be contiguous; slot {pos} "
                                f"holds {layer.get('index')!r}")
        kind = layer.get("kind")
        name = layer.get("name")
        if not name:
            raise ScheduleError(f"layer {pos} needs a name")
        if kind == "conv":
            for key in ("filter_size", "in_channels", "out_channels", "stride"):
                if int(layer.get(key, 0)) < 1:
                    raise ScheduleError(f"layer {name}: bad {key}")
            if int(layer.get("padding", -1)) < 0:
                raise ScheduleError(f"layer {name}: bad padding")
        elif kind == "pool":
            if int(layer.get("filter_size", 0)) < 1 or int(layer.get("stride", 0)) < 1:
                raise ScheduleError(f"layer {name}: bad pool parameters")
            if not 0 <= int(layer.get("padding", 0)) < int(layer["filter_size"]):
                raise ScheduleError(f"layer {name}: pool padding must be < window")
        elif kind == "activation":
            if not layer.get("activation"):
                raise ScheduleError(f"layer {name}: missing activation")
        elif kind != "input":
            raise ScheduleError(f"layer {name}: unknown kind {kind!r}")
    if layers[0].get("kind") != "input":
        raise ScheduleError("layer 0 must be the input layer")


def conv_layers(schedule: dict) -> list[dict]:
    return [l for l in schedule["layers"] if l["kind"] == "conv"]


def activation_indices(schedule: dict) -> list[int]:
    return [l["index"] for l in schedule["layers"] if l["kind"] == "activation"]


def expected_source_shape(layer: dict) -> tuple[int, int, int, int]:
    """Checkpoint conv arrays use (h, w, in, out) order."""
    f = layer["filter_size"]
    return (f, f, layer["in_channels"], layer["out_channels"])
