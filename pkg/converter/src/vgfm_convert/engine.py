"""Subprocess driver for the retrieval engine's command-line interface."""

from __future__ import annotations

import json
import shlex
import subprocess
from pathlib import Path

import numpy as np

from .container import read_vgt

DEFAULT_ENGINE = "vgface"


class EngineInvocationError(Exception):
    pass


def parse_engine_cmd(text: str | None) -> list[str]:
    cmd = shlex.split(text) if text else [DEFAULT_ENGINE]
    if not cmd:
        raise EngineInvocationError("empty engine command")
    return cmd


def extract_descriptor(engine_cmd: list[str], container, image_path,
                       tap_index: int, workdir) -> np.ndarray:
    """Run `<engine> extract` tapping one layer; returns the descriptor row."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    manifest = workdir / "manifest.json"
    manifest.write_text(json.dumps(
        [{"path": str(image_path), "subject": "probe"}]))
    outdir = workdir / f"tap{tap_index}"
    variant = f"{tap_index}R"
    argv = engine_cmd + [
        "extract", "--model", str(container), "--manifest", str(manifest),
        "--variant", variant, "--output", str(outdir), "--threads", "1",
    ]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=600)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise EngineInvocationError(f"cannot run {argv[0]!r}: {e}") from None
    if proc.returncode != 0:
        raise EngineInvocationError(
            f"engine exited with {proc.returncode} for tap {tap_index}: "
            f"{proc.stderr.strip()}")
    matrix = read_vgt(outdir / f"{variant}.vgt")
    if matrix.ndim != 2 or matrix.shape[0] != 1:
        raise EngineInvocationError(
            f"expected a single descriptor row, got shape {matrix.shape}")
    return matrix[0]
