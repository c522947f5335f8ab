"""
Augmented-Lagrangian training of EdgeNet.

Loss on a minibatch (minimized):

    L = -mean_b sum_i F_all_i + sum_i rho_i * rgt_i + (rho / 2) * sum_i rgt_i^2

F_all_i is the weighted per-ad platform value (revenue, expected clicks,
expected orders) and rgt_i the differentiable regret of candidate position
i. Every multiplier_period steps the multipliers take an ascent step
rho_i += rho * (mean regret over the period) and rho grows by
penalty_growth up to penalty_max.

With the straight-through estimator both terms are valued on the decoded
one-hot assignment (the one deployment bills) while gradients follow the
soft allocation R.

Every random draw of step k comes from default_rng([seed, k]), so a resumed
run reproduces an uninterrupted one bit for bit.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

import console
import numgrad as ng
from auction import AuctionBatch
from edgenet import EdgeNetMechanism, EdgeNetParams, assignment_tensor, forward, load_params, save_params
from encoder import EncodedContext
from layers import ParameterSet
from models import (
    AllocationEstimator, AuctionInstance, EdgeNetConfig, ObjectiveWeights, PerturbationScheme, TrainConfig,
)
from numgrad import Tensor, Tape
from regret import empirical_regret
import storage


TRAINING_LOG_COLUMNS = (
    "step", "loss", "objective", "regret", "ic_r", "penalty", "multiplier_mean", "multiplier_max",
)


class TrainingDivergedError(ValueError):
    """Raised when the training loss becomes non-finite."""


# ============================================================================
# Objective terms
# ============================================================================

def per_ad_metrics(
    source: Union[AuctionInstance, AuctionBatch],
    allocation: Union[Tensor, np.ndarray],
    fractions: Union[Tensor, np.ndarray],
    weights: ObjectiveWeights,
) -> Tensor:
    """
    Weighted per-ad platform value F_all.

        revenue_i = p~_i * b_i * sum_j R_ij * pCTR_i * gamma_j   (click basis)
                  = p~_i * b_i * sum_j R_ij                       (impression basis)
        ctr_i     = sum_j R_ij * pCTR_i * gamma_j
        cvr_i     = sum_j R_ij * pCTR_i * pCVR_i * gamma_j

    Returns (N,) for a single instance with an (N, K) allocation, else (B, N).
    """
    single = isinstance(source, AuctionInstance)
    batch = AuctionBatch.from_instances([source]) if single else source
    allocation, fractions = ng.as_tensor(allocation), ng.as_tensor(fractions)
    b, n = batch.bids.shape
    if allocation.ndim == 2:
        allocation = allocation.reshape(1, n, batch.n_slots)
        fractions = fractions.reshape(1, n)

    clicks = ng.sum_(allocation * batch.click_rates(), axis=2)
    orders = clicks * batch.pcvr
    if weights.revenue_basis == "click":
        revenue = fractions * batch.bids * clicks
    else:
        revenue = fractions * batch.bids * ng.sum_(allocation, axis=2)
    total = revenue * weights.revenue + clicks * weights.ctr + orders * weights.cvr
    return total[0] if single else total


def truthful_values(batch: AuctionBatch, value_model: str) -> np.ndarray:
    """Per-click truthful values, (B, N)."""
    if value_model == "conversion":
        return batch.pcvr * batch.cpc
    return batch.bids


def smooth_max(values: Tensor, temperature: float, axis: int = -1) -> Tensor:
    """temperature * (logsumexp(values / temperature) - log G): between the mean and the max, -> max as temperature -> 0."""
    count = values.shape[axis]
    return (ng.logsumexp(values * (1.0 / temperature), axis=axis) - np.log(count)) * temperature


def straight_through(allocation: Tensor, assignment: np.ndarray) -> Tensor:
    """Value of the one-hot ``assignment``, gradient of the soft ``allocation``."""
    return allocation + (assignment - allocation.data)


def soft_regret(
    params: EdgeNetParams,
    batch: AuctionBatch,
    scheme: PerturbationScheme,
    temperature: float,
    context: Optional[EncodedContext] = None,
    estimator: AllocationEstimator = "straight_through",
) -> Tensor:
    """
    Differentiable regret per candidate position, shape (N,).

    The truthful profile and every grid misreport are decoded in argmax mode
    from one shared encoding. Utilities bill the price quote p~ x reported
    bid against the deployed assignment (``estimator="straight_through"``)
    or the soft allocation R (``"soft"``); either way gradients flow through
    R. The smooth max over the grid is hinged at 0 and averaged over the
    batch.
    """
    if len(batch) == 0:
        raise ValueError("soft_regret needs a non-empty batch")
    b, n = batch.bids.shape
    factors = scheme.multipliers()
    g = len(factors)

    misreports = np.broadcast_to(batch.bids[:, None, None, :], (b, n, g, n)).copy()
    for i in range(n):
        misreports[:, i, :, i] = batch.bids[:, i, None] * factors[None, :]
    rows = np.concatenate([np.arange(b), np.repeat(np.arange(b), n * g)])
    profiles = batch.take(rows).with_bids(np.concatenate([batch.bids, misreports.reshape(b * n * g, n)]))

    if context is None:
        context = forward(batch, params).context
    result = forward(profiles, params, mode="argmax", context=context.take(rows))
    allocation = result.heads.allocation
    if estimator == "straight_through":
        allocation = straight_through(allocation, assignment_tensor(result, "argmax"))

    values = truthful_values(batch, scheme.value_model)[rows]
    clicks = ng.sum_(allocation * profiles.click_rates(), axis=2)
    utilities = clicks * (values - result.heads.fractions * profiles.bids)

    truthful = utilities[:b]
    deviating = utilities[b:]
    own = np.tile(np.repeat(np.arange(n), g), b)
    own_utility = deviating[np.arange(b * n * g), own].reshape(b, n, g)
    gains = own_utility - truthful.reshape(b, n, 1)
    return ng.mean(ng.maximum(smooth_max(gains, temperature, axis=2), 0.0), axis=0)


# ============================================================================
# Lagrangian state
# ============================================================================

@dataclass
class LagrangianState:
    multipliers: np.ndarray
    penalty: float
    period_regret: np.ndarray
    period_steps: int = 0

    @classmethod
    def initial(cls, n_ads: int, config: TrainConfig) -> "LagrangianState":
        return cls(
            multipliers=np.full(n_ads, config.multiplier_init),
            penalty=config.penalty_init,
            period_regret=np.zeros(n_ads),
        )

    def record(self, regret: np.ndarray) -> None:
        self.period_regret = self.period_regret + regret
        self.period_steps += 1

    def update(self, growth: float, cap: float) -> None:
        """Multiplier ascent with the period's mean regret, then grow the penalty weight."""
        if self.period_steps:
            mean_regret = self.period_regret / self.period_steps
            self.multipliers = self.multipliers + self.penalty * mean_regret
        self.penalty = min(self.penalty * growth, cap)
        self.period_regret = np.zeros_like(self.period_regret)
        self.period_steps = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "multipliers": self.multipliers.tolist(),
            "penalty": self.penalty,
            "period_regret": self.period_regret.tolist(),
            "period_steps": self.period_steps,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LagrangianState":
        return cls(
            multipliers=np.array(data["multipliers"], dtype=np.float64),
            penalty=float(data["penalty"]),
            period_regret=np.array(data["period_regret"], dtype=np.float64),
            period_steps=int(data["period_steps"]),
        )

    def copy(self) -> "LagrangianState":
        return LagrangianState.from_dict(self.to_dict())


def lagrangian(platform: Tensor, regrets: Optional[Tensor], state: LagrangianState) -> Tensor:
    loss = -platform
    if regrets is not None:
        loss = loss + ng.sum_(regrets * state.multipliers) + ng.sum_(regrets * regrets) * (state.penalty / 2.0)
    return loss


# ============================================================================
# Training loop
# ============================================================================

@dataclass
class TrainRecord:
    step: int
    loss: float
    objective: float
    regret: float
    ic_r: Optional[float]
    penalty: float
    multiplier_mean: float
    multiplier_max: float

    def tsv(self) -> str:
        values = [
            str(self.step), f"{self.loss:.10g}", f"{self.objective:.10g}", f"{self.regret:.10g}",
            "" if self.ic_r is None else f"{self.ic_r:.6f}",
            f"{self.penalty:.10g}", f"{self.multiplier_mean:.10g}", f"{self.multiplier_max:.10g}",
        ]
        return "\t".join(values)


@dataclass
class TrainResult:
    params: EdgeNetParams
    state: LagrangianState
    history: List[TrainRecord] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0
    initial_ic_r: float = 0.0
    final_ic_r: float = 0.0
    steps_run: int = 0


def _batch_loss(
    params: EdgeNetParams,
    batch: AuctionBatch,
    weights: ObjectiveWeights,
    config: TrainConfig,
    state: LagrangianState,
    mode: str,
    rng: Optional[np.random.Generator] = None,
):
    result = forward(batch, params, mode=mode, rng=rng)
    allocation = result.heads.allocation
    if config.allocation_estimator == "straight_through":
        allocation = straight_through(allocation, assignment_tensor(result, mode))
    values = per_ad_metrics(batch, allocation, result.heads.fractions, weights)
    platform = ng.mean(ng.sum_(values, axis=1))
    regrets = None
    if config.regret_penalty:
        regrets = soft_regret(
            params, batch, config.regret, config.regret_temperature,
            context=result.context, estimator=config.allocation_estimator,
        )
    return lagrangian(platform, regrets, state), platform, regrets


def _audit(params: EdgeNetParams, instances: Sequence[AuctionInstance], scheme: PerturbationScheme) -> float:
    return empirical_regret(EdgeNetMechanism(params, mode="argmax"), instances, scheme).ic_r


def _truncate_log(log_path: Union[str, Path], last_step: int) -> int:
    """Keep the header and rows up to ``last_step``; returns how many rows were dropped."""
    path = Path(log_path)
    header = "\t".join(TRAINING_LOG_COLUMNS)
    rows = path.read_text().splitlines()[1:] if path.exists() else []
    kept = []
    for row in rows:
        step = row.split("\t", 1)[0]
        if step.isdigit() and int(step) <= last_step:
            kept.append(row)
    storage.write_text_atomic(path, "\n".join([header, *kept]) + "\n")
    return len(rows) - len(kept)


def train(
    instances: Sequence[AuctionInstance],
    weights: ObjectiveWeights,
    config: TrainConfig,
    net_config: EdgeNetConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
    log_path: Optional[Union[str, Path]] = None,
    audit_instances: Optional[Sequence[AuctionInstance]] = None,
    resume: bool = False,
    initial_params: Optional[EdgeNetParams] = None,
) -> TrainResult:
    """
    Train EdgeNet parameters on ``instances``.

    Args:
        instances: Training auctions
        weights: Objective weights lambda
        config: Optimizer, regret and schedule settings
        net_config: Network dimensions (ignored when resuming)
        checkpoint_path: Checkpoint file, written every checkpoint_every steps
        log_path: Append-only TSV training log
        audit_instances: Held-out slice for the periodic hard IC-R audit
            (defaults to the first audit_instances training instances)
        resume: Continue from ``checkpoint_path`` if it exists; training-log
            rows past the checkpointed step are dropped first
        initial_params: Warm start for a fresh run (copied; net_config is
            then ignored)

    Returns:
        TrainResult with the trained parameters and trajectories

    Raises:
        ValueError: If ``instances`` is empty
        TrainingDivergedError: If the loss becomes non-finite; the last good
            parameters are restored (and checkpointed when a path is given)
    """
    if not instances:
        raise ValueError("Training needs at least one instance")
    data = AuctionBatch.from_instances(instances)
    audit_set = list(audit_instances or instances[:config.audit_instances])[:config.audit_instances]
    reference_batch = data.take(np.arange(min(config.batch_size, len(data))))

    start_step = 0
    ckpt_state: Dict[str, Any] = {}
    if resume and checkpoint_path and Path(checkpoint_path).exists():
        params, ckpt = load_params(checkpoint_path)
        start_step, ckpt_state = ckpt.step, ckpt.state or {}
        state = LagrangianState.from_dict(ckpt_state["lagrangian"])
        optimizer = ng.Adam(params.tensors.tensors(), learning_rate=config.learning_rate)
        if ckpt.optimizer:
            optimizer.load_state_dict(ckpt.optimizer)
        reference_state = LagrangianState.from_dict(ckpt_state["reference_lagrangian"])
        console.print_info(f"Resuming from step {start_step} ({checkpoint_path})")
        if log_path and start_step > 0:
            dropped = _truncate_log(log_path, start_step)
            if dropped:
                console.print_detail(f"dropped {dropped} training-log rows past step {start_step}")
    else:
        if initial_params is not None:
            params = EdgeNetParams(
                config=initial_params.config,
                tensors=ParameterSet.from_arrays(initial_params.tensors.arrays()),
            )
        elif config.init == "bid_ranking":
            params = EdgeNetParams.bid_ranking(net_config, seed=config.seed)
        else:
            params = EdgeNetParams.initialize(net_config, seed=config.seed)
        state = LagrangianState.initial(data.n_ads, config)
        optimizer = ng.Adam(params.tensors.tensors(), learning_rate=config.learning_rate)
        reference_state = state.copy()

    result = TrainResult(params=params, state=state)
    if start_step == 0:
        result.initial_loss = _batch_loss(
            params, reference_batch, weights, config, reference_state, "argmax"
        )[0].item()
        result.initial_ic_r = _audit(params, audit_set, config.regret)
        if log_path:
            storage.write_text_atomic(log_path, "\t".join(TRAINING_LOG_COLUMNS) + "\n")
        console.print_detail(f"initial loss {result.initial_loss:.6f}, IC-R {result.initial_ic_r:.2f}%")
    else:
        result.initial_loss = float(ckpt_state.get("initial_loss", 0.0))
        result.initial_ic_r = float(ckpt_state.get("initial_ic_r", 0.0))

    def checkpoint(step: int) -> None:
        if not checkpoint_path:
            return
        save_params(params, checkpoint_path, step=step, optimizer=optimizer.state_dict(), state={
            "lagrangian": state.to_dict(),
            "reference_lagrangian": reference_state.to_dict(),
            "initial_loss": result.initial_loss,
            "initial_ic_r": result.initial_ic_r,
            "train": config.model_dump(mode="json"),
        })

    last_good = params.tensors.arrays()
    last_good_step = start_step
    started = time.time()

    for step in range(start_step + 1, config.steps + 1):
        rng = np.random.default_rng([config.seed, step])
        rows = rng.integers(0, len(data), size=min(config.batch_size, len(data)))
        with Tape() as tape:
            loss, platform, regrets = _batch_loss(
                params, data.take(rows), weights, config, state, config.decode_mode, rng=rng
            )

        if not np.isfinite(loss.item()):
            params.tensors.load_arrays(last_good)
            if checkpoint_path:
                checkpoint(last_good_step)
            raise TrainingDivergedError(
                f"Loss became non-finite at step {step}; parameters restored to step {last_good_step}"
            )
        last_good = params.tensors.arrays()
        last_good_step = step - 1
        ng.backward(tape, loss)
        optimizer.step()

        regret_values = regrets.data.copy() if regrets is not None else np.zeros(data.n_ads)
        if config.regret_penalty:
            state.record(regret_values)
            if step % config.multiplier_period == 0:
                state.update(config.penalty_growth, config.penalty_max)

        ic_r = None
        if step % config.audit_every == 0 or step == config.steps:
            ic_r = _audit(params, audit_set, config.regret)

        record = TrainRecord(
            step=step,
            loss=loss.item(),
            objective=platform.item(),
            regret=float(regret_values.mean()),
            ic_r=ic_r,
            penalty=state.penalty,
            multiplier_mean=float(state.multipliers.mean()),
            multiplier_max=float(state.multipliers.max()),
        )
        result.history.append(record)
        if log_path:
            storage.append_line(log_path, record.tsv())

        if step % config.log_every == 0 or step == config.steps:
            audit_note = f", IC-R {ic_r:.2f}%" if ic_r is not None else ""
            console.print_info(
                f"step {step}/{config.steps}: loss {record.loss:.5f}, objective {record.objective:.5f}, "
                f"regret {record.regret:.5f}{audit_note} ({console.format_duration(time.time() - started)})"
            )
        if step % config.checkpoint_every == 0 or step == config.steps:
            checkpoint(step)

        result.steps_run += 1

    result.final_loss = _batch_loss(params, reference_batch, weights, config, reference_state, "argmax")[0].item()
    result.final_ic_r = _audit(params, audit_set, config.regret)
    return result
