"""
EdgeNet: encoder -> decoder -> heads, wrapped as a Mechanism.

Winners pay p~_i * b_i per click; losers pay nothing. In argmax mode the
slot assignment is the column-by-column argmax of R; in sample mode it is
the decoder's sampled selection. Training bills the same assignment
through assignment_tensor().
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from auction import AuctionBatch, Mechanism, MechanismOutcome, feasible_assignment
from checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
import decoder
import encoder
from layers import ParameterSet, Shape
from models import AuctionInstance, EdgeNetConfig


DecodeMode = Literal["argmax", "sample"]


@dataclass
class EdgeNetParams:
    """All learnable weights (encoder, decoder, heads) plus the dimensions they were built for."""
    config: EdgeNetConfig
    tensors: ParameterSet

    @staticmethod
    def shapes(config: EdgeNetConfig) -> Dict[str, Shape]:
        shapes = encoder.param_shapes(config)
        shapes.update(decoder.param_shapes(config.d_h, config.d_c, config.d_a, config.head_hidden))
        return shapes

    @classmethod
    def initialize(cls, config: EdgeNetConfig, seed: int = 0) -> "EdgeNetParams":
        return cls(config=config, tensors=ParameterSet.initialize(cls.shapes(config), seed))

    @classmethod
    def bid_ranking(cls, config: EdgeNetConfig, seed: int = 0, w3: float = 3.0) -> "EdgeNetParams":
        """
        Random weights with v and the payment MLP output zeroed: slots go by
        bid and every winner pays its threshold bid, which is GSP when all
        pCTRs are equal.
        """
        params = cls.initialize(config, seed)
        for name in ("dec.attn.v", "head.w_p", "head.b_p", "head.w_q"):
            params.tensors[name].data[...] = 0.0
        params.tensors["dec.attn.w3"].data[...] = w3
        return params

    @property
    def bid_weight(self) -> float:
        """exp(w3), the slope of every logit in its own ad's bid."""
        return float(np.exp(self.tensors["dec.attn.w3"].data))


@dataclass(frozen=True)
class ForwardPass:
    context: encoder.EncodedContext
    trace: decoder.DecodeTrace
    heads: decoder.HeadOutputs


def forward(
    batch: AuctionBatch,
    params: EdgeNetParams,
    mode: DecodeMode = "argmax",
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    context: Optional[encoder.EncodedContext] = None,
) -> ForwardPass:
    """
    Full differentiable pass over a batch.

    ``context`` may be passed in to reuse an encoding across bid profiles;
    the encoder never sees bids, so any profile of the same instances fits.
    """
    if context is None:
        context = encoder.encode(encoder.embed(batch, params), params)
    trace = decoder.decode(context, batch.bids, params, batch.n_slots, mode=mode, seed=seed, rng=rng)
    return ForwardPass(context=context, trace=trace, heads=decoder.output_heads(trace, params))


def assignments(result: ForwardPass, mode: DecodeMode) -> List[List[int]]:
    """Slot -> winner lists as deployed: argmax over R columns, or the sampled selection."""
    trace, column_probs = result.trace, result.heads.column_probs.data
    if mode == "sample":
        return [[int(i) for i in row] for row in trace.selected]
    return [
        feasible_assignment(column_probs[row], "argmax", bids=trace.bids[row])
        for row in range(trace.selected.shape[0])
    ]


def assignment_tensor(result: ForwardPass, mode: DecodeMode) -> np.ndarray:
    """assignments() as a (B, N, K) one-hot array."""
    b, n, k = result.heads.allocation.shape
    onehot = np.zeros((b, n, k))
    for row, winners in enumerate(assignments(result, mode)):
        onehot[row, winners, np.arange(len(winners))] = 1.0
    return onehot


def _outcomes(result: ForwardPass, mode: DecodeMode) -> List[MechanismOutcome]:
    trace, heads = result.trace, result.heads
    outcomes = []
    for row, assignment in enumerate(assignments(result, mode)):
        bids = trace.bids[row]
        quotes = heads.fractions.data[row] * bids
        payments = np.zeros_like(bids)
        payments[assignment] = quotes[assignment]
        outcomes.append(MechanismOutcome(
            allocation=heads.allocation.data[row].copy(),
            payments=payments,
            assignment=assignment,
            price_quotes=quotes,
        ))
    return outcomes


def run_mechanism(
    instance: AuctionInstance,
    params: EdgeNetParams,
    mode: DecodeMode = "argmax",
    seed: Optional[int] = None,
) -> MechanismOutcome:
    """Encode, decode, apply the heads and settle payments for one instance."""
    return _outcomes(forward(AuctionBatch.from_instances([instance]), params, mode, seed), mode)[0]


class EdgeNetMechanism(Mechanism):
    """Frozen EdgeNet parameters as a Mechanism; run_many evaluates in batches."""

    name = "edgenet"

    def __init__(
        self,
        params: EdgeNetParams,
        mode: DecodeMode = "argmax",
        seed: Optional[int] = None,
        chunk_size: int = 512,
    ):
        self.params = params
        self.mode = mode
        self.seed = seed
        self.chunk_size = chunk_size

    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        return run_mechanism(instance, self.params, self.mode, self.seed)

    def run_many(self, instances: Sequence[AuctionInstance]) -> List[MechanismOutcome]:
        rng = np.random.default_rng(self.seed) if self.mode == "sample" else None
        outcomes: List[MechanismOutcome] = []
        for start in range(0, len(instances), self.chunk_size):
            batch = AuctionBatch.from_instances(instances[start:start + self.chunk_size])
            outcomes.extend(_outcomes(forward(batch, self.params, self.mode, rng=rng), self.mode))
        return outcomes


# ============================================================================
# Persistence
# ============================================================================

def save_params(
    params: EdgeNetParams,
    path: Union[str, Path],
    step: int = 0,
    optimizer: Optional[Dict[str, Any]] = None,
    state: Optional[Dict[str, Any]] = None,
) -> Path:
    return save_checkpoint(
        path, "edgenet", params.tensors, params.config.model_dump(mode="json"),
        step=step, optimizer=optimizer, state=state,
    )


def load_params(path: Union[str, Path]) -> Tuple[EdgeNetParams, Checkpoint]:
    """
    Load EdgeNet parameters; the checkpoint is returned for resume state.

    Raises:
        CheckpointError: If the file is not an EdgeNet checkpoint or its
            parameters do not match its recorded config
    """
    ckpt = load_checkpoint(path, kind="edgenet")
    config = EdgeNetConfig(**ckpt.config)
    expected = EdgeNetParams.shapes(config)
    if set(expected) != set(ckpt.arrays):
        raise CheckpointError(f"{path}: parameter names do not match an EdgeNet with config {ckpt.config}")
    for name, shape in expected.items():
        if ckpt.arrays[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: parameter {name} has shape {ckpt.arrays[name].shape}, expected {shape}")
    tensors = ParameterSet.from_arrays({name: ckpt.arrays[name] for name in expected})
    return EdgeNetParams(config=config, tensors=tensors), ckpt
