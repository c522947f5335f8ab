"""
Model checkpoint container shared by EdgeNet and DNA-lite.

A checkpoint is one JSON document (orjson, sorted keys):

    {
      "format": "adauctionlab.checkpoint",
      "version": 1,
      "kind": "edgenet" | "dnalite",
      "step": <int>,
      "config": {...network config...},
      "params": {"<name>": {"shape": [...], "data": [row-major values]}},
      "optimizer": {...} | null,
      "state": {...} | null
    }

Doubles are written in shortest round-trip form, so load(save(p)) == p
bit for bit. Writes are atomic.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from layers import ParameterSet
import storage


CHECKPOINT_FORMAT = "adauctionlab.checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, mismatched or incompatible checkpoint files."""


@dataclass
class Checkpoint:
    kind: str
    step: int
    config: Dict[str, Any]
    arrays: Dict[str, np.ndarray]
    optimizer: Optional[Dict[str, Any]] = None
    state: Optional[Dict[str, Any]] = field(default=None)


def save_checkpoint(
    path: Union[str, Path],
    kind: str,
    params: ParameterSet,
    config: Dict[str, Any],
    step: int = 0,
    optimizer: Optional[Dict[str, Any]] = None,
    state: Optional[Dict[str, Any]] = None,
) -> Path:
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "step": int(step),
        "config": config,
        "params": {
            name: {"shape": list(array.shape), "data": array.ravel().tolist()}
            for name, array in params.arrays().items()
        },
        "optimizer": optimizer,
        "state": state,
    }
    return storage.write_json(path, document, indent=False)


def load_checkpoint(path: Union[str, Path], kind: Optional[str] = None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint().

    Raises:
        FileNotFoundError: If the file does not exist
        CheckpointError: On a foreign file, version or kind mismatch, or a
            parameter whose data does not fill its shape
    """
    try:
        document = storage.read_json(path)
    except ValueError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {document.get('version')} is not supported (expected {CHECKPOINT_VERSION})"
        )
    if kind is not None and document.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {document.get('kind')!r}")

    arrays: Dict[str, np.ndarray] = {}
    for name, entry in document.get("params", {}).items():
        shape = tuple(entry["shape"])
        data = np.array(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: parameter {name} has {data.size} values for shape {shape}")
        arrays[name] = data.reshape(shape)

    return Checkpoint(
        kind=document["kind"],
        step=int(document.get("step", 0)),
        config=document.get("config", {}),
        arrays=arrays,
        optimizer=document.get("optimizer"),
        state=document.get("state"),
    )
