"""
File I/O utilities for AdAuctionLab.

All artifacts (auction logs, checkpoints, reports, training logs) are written
through this module:
- JSON via orjson (shortest round-trip float repr, so doubles survive exactly)
- Atomic replace for whole-file writes, so an interrupted run never leaves a
  half-written checkpoint behind
- Transient OSErrors retried with tenacity
"""

import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Union

import orjson
from tenacity import (
    retry,
    retry_if_exception_type,
    retry_if_not_exception_type,
    stop_after_attempt,
    wait_fixed,
)


PathLike = Union[str, Path]

JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS

_io_retry = retry(
    retry=retry_if_exception_type(OSError) & retry_if_not_exception_type(FileNotFoundError),
    stop=stop_after_attempt(3),
    wait=wait_fixed(0.2),
    reraise=True,
)


def dumps(obj: Any, indent: bool = False) -> bytes:
    """Serialize to JSON bytes with sorted keys (stable output for identical input)."""
    options = JSON_OPTIONS | (orjson.OPT_INDENT_2 if indent else 0)
    return orjson.dumps(obj, option=options)


def loads(data: Union[bytes, str]) -> Any:
    return orjson.loads(data)


@_io_retry
def write_bytes_atomic(path: PathLike, payload: bytes) -> Path:
    """Write ``payload`` to ``path`` via a temp file in the same directory, then replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_text_atomic(path: PathLike, text: str) -> Path:
    return write_bytes_atomic(path, text.encode("utf-8"))


def write_json(path: PathLike, obj: Any, indent: bool = True) -> Path:
    return write_bytes_atomic(path, dumps(obj, indent=indent) + b"\n")


def write_lines(path: PathLike, lines: Iterable[bytes]) -> Path:
    """Write newline-terminated byte lines atomically."""
    return write_bytes_atomic(path, b"".join(line + b"\n" for line in lines))


@_io_retry
def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return orjson.loads(path.read_bytes())


@_io_retry
def append_line(path: PathLike, line: str) -> None:
    """Append one line to an append-only text file, creating it if needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(line.rstrip("\n") + "\n")
