"""Offline conversion of pretrained checkpoints into ".vgfm" containers,
plus empirical verification against the retrieval engine's forward pass."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .container import ContainerError, read_header, read_vgt, write_vgt
from .convert import ConvertError, convert, verify
from .schedule import ScheduleError, canonical_schedule, load_schedule

__version__ = "0.1.0"
