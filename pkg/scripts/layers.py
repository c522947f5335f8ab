"""
Named parameter containers and the small layer helpers the networks share.
"""

from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

import numgrad as ng
from numgrad import Tensor


Shape = Tuple[int, ...]


class ParameterSet:
    """
    Ordered mapping from parameter name to trainable Tensor.

    Names are dotted paths ("enc.l0.attn.Wq"); iteration order is the
    declaration order, which fixes the optimizer's state layout.
    """

    def __init__(self, tensors: Mapping[str, Tensor]):
        self._tensors: Dict[str, Tensor] = dict(tensors)

    @classmethod
    def initialize(cls, shapes: Mapping[str, Shape], seed: int) -> "ParameterSet":
        """
        Glorot-uniform weights; vectors and scalars start at zero, except
        layer-norm gains (names ending in ".g"), which start at one.
        """
        rng = np.random.default_rng(seed)
        tensors: Dict[str, Tensor] = {}
        for name, shape in shapes.items():
            if name.endswith(".g"):
                data = np.ones(shape)
            elif len(shape) >= 2:
                limit = np.sqrt(6.0 / (shape[-2] + shape[-1]))
                data = rng.uniform(-limit, limit, size=shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(tensors)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParameterSet":
        return cls({name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()})

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"Unknown parameter: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def tensors(self) -> List[Tensor]:
        return list(self._tensors.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter value."""
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values in place, keeping Tensor identity (optimizers hold references)."""
        missing = set(self._tensors) - set(arrays)
        if missing:
            raise KeyError(f"Missing parameters: {sorted(missing)}")
        for name, t in self._tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ng.ShapeError(f"Parameter {name}: shape {value.shape} != {t.shape}")
            t.data[...] = value

    def count(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self._tensors.values())


def linear(x: Tensor, params: ParameterSet, prefix: str) -> Tensor:
    """x @ W + b for parameters ``{prefix}.W`` and ``{prefix}.b``."""
    return x @ params[f"{prefix}.W"] + params[f"{prefix}.b"]


def linear_shapes(prefix: str, d_in: int, d_out: int) -> Dict[str, Shape]:
    return {f"{prefix}.W": (d_in, d_out), f"{prefix}.b": (d_out,)}


def layer_norm(x: Tensor, params: ParameterSet, prefix: str, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale by ``{prefix}.g`` and shift by ``{prefix}.b``."""
    centered = x - ng.mean(x, axis=-1, keepdims=True)
    variance = ng.mean(centered * centered, axis=-1, keepdims=True)
    return centered * ng.power(variance + eps, -0.5) * params[f"{prefix}.g"] + params[f"{prefix}.b"]


def layer_norm_shapes(prefix: str, width: int) -> Dict[str, Shape]:
    return {f"{prefix}.g": (width,), f"{prefix}.b": (width,)}


def check_width(name: str, array: np.ndarray, expected: int) -> None:
    if array.shape[-1] != expected:
        raise ng.ShapeError(f"{name}: expected trailing dimension {expected}, got shape {array.shape}")
