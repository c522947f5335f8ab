"""
DNA-lite: a learned rank score inside a GSP auction.

    score_i = MLP(x_i, pCTR_i, pCVR_i, log1p(CPC_i)) + exp(w_b) * b_i

The feature part never sees the bid, so the score is strictly increasing in
the ad's own bid and each winner's price is the smallest bid that keeps its
slot (found by bisection).

Training maximizes the weighted platform metrics under a soft ranking: slot
j draws from softmax((score + log remaining) / tau) and every ad's remaining
mass shrinks by the probability it was just drawn with. Revenue is
proxied by bid x expected clicks during training.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import numgrad as ng
from auction import AuctionBatch, Mechanism, MechanismOutcome, rank_order, ranked_outcome
from checkpoint import CheckpointError, load_checkpoint, save_checkpoint
import console
from layers import ParameterSet, Shape
from models import AuctionInstance, DnaLiteConfig, ObjectiveWeights
from numgrad import Tensor, Tape
from trainer import TrainingDivergedError


REMAINING_FLOOR = 1e-12
PRICE_TOLERANCE = 1e-9


@dataclass
class DnaLiteParams:
    config: DnaLiteConfig
    d_x: int
    tensors: ParameterSet

    @staticmethod
    def shapes(d_x: int, hidden: int) -> Dict[str, Shape]:
        return {
            "dna.W1": (d_x + 3, hidden),
            "dna.b1": (hidden,),
            "dna.w2": (hidden, 1),
            "dna.b2": (),
            "dna.w_b": (),
        }

    @classmethod
    def initialize(cls, d_x: int, config: Optional[DnaLiteConfig] = None, seed: Optional[int] = None) -> "DnaLiteParams":
        config = config or DnaLiteConfig()
        seed = config.seed if seed is None else seed
        tensors = ParameterSet.initialize(cls.shapes(d_x, config.hidden), seed)
        return cls(config=config, d_x=d_x, tensors=tensors)

    @property
    def bid_weight(self) -> float:
        return float(np.exp(self.tensors["dna.w_b"].data))


@dataclass
class DnaLiteResult:
    params: DnaLiteParams
    objective_history: List[float] = field(default_factory=list)
    initial_objective: float = 0.0
    final_objective: float = 0.0


# ============================================================================
# Scores and soft ranking
# ============================================================================

def score_inputs(batch: AuctionBatch) -> np.ndarray:
    """(B, N, d_x + 3) network inputs: features, pCTR, pCVR, log1p(CPC)."""
    extras = np.stack([batch.pctr, batch.pcvr, np.log1p(batch.cpc)], axis=-1)
    return np.concatenate([batch.ad_features, extras], axis=-1)


def quality_scores(params: DnaLiteParams, batch: AuctionBatch) -> Tensor:
    """Bid-free part of the rank score, shape (B, N)."""
    w = params.tensors
    b, n = batch.bids.shape
    hidden = ng.tanh(Tensor(score_inputs(batch)) @ w["dna.W1"] + w["dna.b1"])
    return (hidden @ w["dna.w2"]).reshape(b, n) + w["dna.b2"]


def rank_scores(params: DnaLiteParams, batch: AuctionBatch) -> Tensor:
    return quality_scores(params, batch) + ng.exp(params.tensors["dna.w_b"]) * batch.bids


def soft_rank(scores: Tensor, n_slots: int, temperature: float) -> Tensor:
    """
    Per-slot soft selection probabilities, shape (B, N, K).

    Column j is softmax((score + log remaining) / temperature) over ads;
    as temperature -> 0 the columns become the hard ranking by score.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    remaining = Tensor(np.ones(scores.shape))
    columns = []
    for _ in range(n_slots):
        probs = ng.softmax((scores + ng.log(remaining + REMAINING_FLOOR)) * (1.0 / temperature), axis=1)
        columns.append(probs)
        remaining = remaining * (1.0 - probs)
    return ng.stack(columns, axis=2)


def expected_objective(probs: Tensor, batch: AuctionBatch, weights: ObjectiveWeights) -> Tensor:
    """
    Weighted expected metrics per instance, shape (B,).

    The revenue term bills each expected click at the ad's bid, not at the
    retention price the deployed auction charges. The bid bounds that price
    from above, so the trained objective overstates realized revenue.
    """
    per_click = weights.revenue * batch.bids + weights.ctr + weights.cvr * batch.pcvr
    value = batch.click_rates() * per_click[:, :, None]
    return ng.sum_(ng.sum_(probs * value, axis=2), axis=1)


def _objective(params: DnaLiteParams, batch: AuctionBatch, weights: ObjectiveWeights) -> Tensor:
    probs = soft_rank(rank_scores(params, batch), batch.n_slots, params.config.temperature)
    return ng.mean(expected_objective(probs, batch, weights))


# ============================================================================
# Training
# ============================================================================

def dnalite_train(
    instances: Sequence[AuctionInstance],
    weights: ObjectiveWeights,
    config: Optional[DnaLiteConfig] = None,
    held_out: Optional[Sequence[AuctionInstance]] = None,
) -> DnaLiteResult:
    """
    Fit the rank-score network by Adam on the soft-ranking objective.

    Minibatch k is drawn from default_rng([seed, k]), so a run is fully
    determined by its config.

    Raises:
        ValueError: If ``instances`` is empty
        TrainingDivergedError: If the objective becomes non-finite
    """
    if not instances:
        raise ValueError("DNA-lite training needs at least one instance")
    config = config or DnaLiteConfig()
    data = AuctionBatch.from_instances(instances)
    evaluation = AuctionBatch.from_instances(held_out) if held_out else data
    params = DnaLiteParams.initialize(data.ad_features.shape[-1], config)
    optimizer = ng.Adam(params.tensors.tensors(), learning_rate=config.learning_rate)

    result = DnaLiteResult(params=params)
    result.initial_objective = _objective(params, evaluation, weights).item()
    console.print_detail(f"DNA-lite initial objective: {result.initial_objective:.5f}")

    for step in range(1, config.steps + 1):
        rng = np.random.default_rng([config.seed, step])
        rows = rng.integers(0, len(data), size=min(config.batch_size, len(data)))
        with Tape() as tape:
            objective = _objective(params, data.take(rows), weights)
            loss = -objective
        if not np.isfinite(loss.item()):
            raise TrainingDivergedError(f"DNA-lite objective became non-finite at step {step}")
        ng.backward(tape, loss)
        optimizer.step()
        result.objective_history.append(objective.item())

    result.final_objective = _objective(params, evaluation, weights).item()
    console.print_detail(f"DNA-lite final objective: {result.final_objective:.5f}")
    return result


# ============================================================================
# Mechanism
# ============================================================================

def _position(i: int, bid: float, quality_i: float, slope: float, scores: np.ndarray, bids: np.ndarray) -> int:
    """How many other ads rank ahead of ad ``i`` when it bids ``bid``."""
    own = quality_i + slope * bid
    ahead = (scores > own) | ((scores == own) & ((bids > bid) | ((bids == bid) & (np.arange(len(bids)) < i))))
    ahead[i] = False
    return int(ahead.sum())


def retention_price(
    i: int,
    rank: int,
    quality: np.ndarray,
    slope: float,
    bids: np.ndarray,
    tol: float = PRICE_TOLERANCE,
    max_iter: int = 200,
) -> float:
    """
    Smallest bid in [0, b_i] keeping ad ``i`` at ``rank`` or better, others fixed.

    Falls back to inverting the next-ranked score when bisection cannot
    bracket or does not converge.
    """
    scores = quality + slope * bids

    def retains(bid: float) -> bool:
        return _position(i, bid, quality[i], slope, scores, bids) <= rank

    if retains(0.0):
        return 0.0
    lo, hi = 0.0, float(bids[i])
    if retains(hi):
        for _ in range(max_iter):
            if hi - lo <= tol:
                return hi
            mid = 0.5 * (lo + hi)
            if retains(mid):
                hi = mid
            else:
                lo = mid

    order = rank_order(scores, bids)
    following = order[rank + 1] if rank + 1 < len(order) else None
    if following is None:
        return 0.0
    return float(np.clip((scores[following] - quality[i]) / slope, 0.0, bids[i]))


class DnaLiteMechanism(Mechanism):
    name = "dnalite"

    def __init__(self, params: DnaLiteParams):
        self.params = params

    def _quality(self, instances: Sequence[AuctionInstance]) -> np.ndarray:
        return quality_scores(self.params, AuctionBatch.from_instances(instances)).data

    def _settle(self, instance: AuctionInstance, quality: np.ndarray) -> MechanismOutcome:
        bids = instance.bids()
        slope = self.params.bid_weight
        order = rank_order(quality + slope * bids, bids)
        winners = [int(i) for i in order[:instance.slot_count]]
        prices = [retention_price(i, rank, quality, slope, bids) for rank, i in enumerate(winners)]
        return ranked_outcome(instance, winners, prices)

    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        return self._settle(instance, self._quality([instance])[0])

    def run_many(self, instances: Sequence[AuctionInstance]) -> List[MechanismOutcome]:
        if not instances:
            return []
        quality = self._quality(instances)
        return [self._settle(inst, quality[k]) for k, inst in enumerate(instances)]


def dnalite_run(instance: AuctionInstance, params: DnaLiteParams) -> MechanismOutcome:
    return DnaLiteMechanism(params).run(instance)


# ============================================================================
# Persistence
# ============================================================================

def save_params(params: DnaLiteParams, path: Union[str, Path]) -> Path:
    config = {"d_x": params.d_x, **params.config.model_dump(mode="json")}
    return save_checkpoint(path, "dnalite", params.tensors, config)


def load_params(path: Union[str, Path]) -> DnaLiteParams:
    ckpt = load_checkpoint(path, kind="dnalite")
    config: Dict[str, Any] = dict(ckpt.config)
    d_x = int(config.pop("d_x"))
    dna_config = DnaLiteConfig(**config)
    expected: Dict[str, Tuple[int, ...]] = DnaLiteParams.shapes(d_x, dna_config.hidden)
    for name, shape in expected.items():
        if name not in ckpt.arrays or ckpt.arrays[name].shape != shape:
            raise CheckpointError(f"{path}: parameter {name} missing or not of shape {shape}")
    return DnaLiteParams(config=dna_config, d_x=d_x, tensors=ParameterSet.from_arrays(
        {name: ckpt.arrays[name] for name in expected}
    ))
