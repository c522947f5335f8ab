"""
Console output shared by every experiment command.

Banner headers, numbered ``[i/n]`` steps, ✓/✗/ℹ markers, before/after
summary lines and saved-artifact listings. Detail lines only appear when
ADLAB_VERBOSE is set (``--verbose``). Colors are dropped when NO_COLOR is
set or stdout is not a terminal, so captured output stays plain.
"""

import os
import sys
from pathlib import Path
from typing import Iterable, Union

WIDTH = 80


class Colors:
    BLUE = '\033[94m'
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'


def verbose() -> bool:
    """Verbose flag, read at call time so --verbose can set it after import."""
    return os.getenv('ADLAB_VERBOSE', '').lower() in ('1', 'true', 'yes')


def _paint(text: str, *codes: str, stream=None) -> str:
    stream = stream or sys.stdout
    if os.getenv('NO_COLOR') or not getattr(stream, 'isatty', lambda: False)():
        return text
    return f"{''.join(codes)}{text}{Colors.END}"


def print_header(text: str) -> None:
    rule = _paint('=' * WIDTH, Colors.BOLD, Colors.BLUE)
    print(f"\n{rule}\n{_paint(text.center(WIDTH), Colors.BOLD, Colors.BLUE)}\n{rule}\n")


def print_step(step_num: int, total_steps: int, text: str) -> None:
    print(f"{_paint(f'[{step_num}/{total_steps}]', Colors.BOLD)} {_paint(text, Colors.CYAN)}")


def print_success(text: str) -> None:
    print(f"{_paint('✓', Colors.GREEN)} {text}")


def print_error(text: str) -> None:
    """Errors go to stderr so report output on stdout stays clean."""
    print(f"{_paint('✗', Colors.RED, stream=sys.stderr)} {text}", file=sys.stderr)


def print_info(text: str) -> None:
    print(f"{_paint('ℹ', Colors.YELLOW)} {text}")


def print_detail(text: str) -> None:
    if verbose():
        print(f"      {_paint('→', Colors.CYAN)} {text}")


def print_change(label: str, before: float, after: float, fmt: str = ".5f", unit: str = "") -> None:
    """Indented ``label: before -> after`` line for training summaries."""
    print(f"  {label + ':':<7} {before:{fmt}}{unit} -> {after:{fmt}}{unit}")


def print_saved(paths: Iterable[Union[str, Path]]) -> None:
    for path in paths:
        print(f"  Saved: {path}")


def format_duration(seconds: float) -> str:
    """``850ms``, ``12.3s``, ``4m 05s`` or ``1h 02m``."""
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(seconds), 60)
    if minutes < 60:
        return f"{minutes}m {secs:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes:02d}m"
