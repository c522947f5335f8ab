"""
Data models for AdAuctionLab using Pydantic for validation and serialization.

This module defines the validated data structures used throughout the lab:
- Configuration models (experiment file, synthetic data, training, baselines)
- Auction domain models (candidates, users, instances, logs)
- Report models (regret reports, metric tables)

Numeric working state (allocation matrices, network parameters, traces) lives
in numpy-backed dataclasses next to the code that produces it.
"""

from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


LOG_SCHEMA_VERSION = 1

AllocationEstimator = Literal["straight_through", "soft"]


def default_slot_discounts(n_slots: int) -> List[float]:
    """Position discounts gamma: (1.0, 0.7, 0.5), then geometric decay by 0.8."""
    gammas = [1.0, 0.7, 0.5]
    while len(gammas) < n_slots:
        gammas.append(gammas[-1] * 0.8)
    return gammas[:n_slots]


def _check_discounts(gammas: List[float]) -> List[float]:
    if not gammas:
        raise ValueError("slot_discounts must not be empty")
    if gammas[0] != 1.0:
        raise ValueError(f"slot_discounts must start at 1.0, got {gammas[0]}")
    if any(g <= 0 for g in gammas):
        raise ValueError("slot_discounts must be positive")
    if any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError(f"slot_discounts must be strictly decreasing, got {gammas}")
    return gammas


# ============================================================================
# Configuration Models
# ============================================================================

class SynthConfig(BaseModel):
    """Synthetic auction-log generator parameters."""
    n_ads: int = Field(10, gt=0, description="Candidate ads per auction (N)")
    n_slots: int = Field(3, gt=0, description="Ad slots per page view (K)")
    d_x: int = Field(8, gt=0, description="Ad feature length")
    d_y: int = Field(8, gt=0, description="User feature length")
    bid_log_mean: float = Field(0.0, description="Log-normal bid location (mu)")
    bid_log_sigma: float = Field(0.5, gt=0, description="Log-normal bid scale (sigma)")
    pctr_alpha: float = Field(2.0, gt=0, description="pCTR Beta alpha")
    pctr_beta: float = Field(8.0, gt=0, description="pCTR Beta beta")
    pcvr_alpha: float = Field(2.0, gt=0, description="pCVR Beta alpha")
    pcvr_beta: float = Field(18.0, gt=0, description="pCVR Beta beta")
    cpc_low: float = Field(5.0, ge=0, description="Lower bound of value per conversion")
    cpc_high: float = Field(50.0, ge=0, description="Upper bound of value per conversion")
    correlation: float = Field(0.8, ge=0, le=1, description="Signal strength of pCTR/pCVR in ad features")
    instances: int = Field(20000, ge=0, description="Training instances to generate")
    test_instances: int = Field(4000, ge=0, description="Test instances to generate")
    slot_discounts: Optional[List[float]] = Field(None, description="Position discounts; defaults per K")
    seed: int = Field(7, description="Generator seed")

    @model_validator(mode="after")
    def validate_shape(self) -> "SynthConfig":
        if self.n_slots > self.n_ads:
            raise ValueError(f"n_slots ({self.n_slots}) cannot exceed n_ads ({self.n_ads})")
        if self.cpc_low > self.cpc_high:
            raise ValueError(f"cpc_low ({self.cpc_low}) exceeds cpc_high ({self.cpc_high})")
        if self.slot_discounts is not None:
            if len(self.slot_discounts) != self.n_slots:
                raise ValueError(f"slot_discounts needs {self.n_slots} entries, got {len(self.slot_discounts)}")
            _check_discounts(self.slot_discounts)
        return self

    def discounts(self) -> List[float]:
        return list(self.slot_discounts) if self.slot_discounts else default_slot_discounts(self.n_slots)


class EdgeNetConfig(BaseModel):
    """Network dimensions for the encoder, decoder and output heads."""
    d_x: int = Field(8, gt=0, description="Ad feature length")
    d_y: int = Field(8, gt=0, description="User feature length")
    d_e: int = Field(16, gt=0, description="Embedding width")
    d_h: int = Field(32, gt=0, description="Transformer model width")
    d_c: int = Field(32, gt=0, description="Context / recurrent state width")
    d_a: int = Field(32, gt=0, description="Pointer attention width")
    d_ff: int = Field(64, gt=0, description="Feed-forward width")
    n_layers: int = Field(1, gt=0, description="Transformer layers")
    n_heads: int = Field(2, gt=0, description="Attention heads")
    head_hidden: int = Field(16, gt=0, description="Hidden width of the payment head MLP")

    @model_validator(mode="after")
    def validate_heads(self) -> "EdgeNetConfig":
        if self.d_h % self.n_heads:
            raise ValueError(f"n_heads ({self.n_heads}) must divide d_h ({self.d_h})")
        return self


class PerturbationScheme(BaseModel):
    """Misreport grid {(1 + k*delta) * b_i : k = -m..m, k != 0}."""
    relative_step: float = Field(0.05, gt=0, description="Relative step delta")
    half_width: int = Field(10, gt=0, description="Grid half-width m")
    floor_fraction: float = Field(0.01, gt=0, lt=1, description="Smallest misreport as a fraction of the bid")
    value_model: Literal["bid", "conversion"] = Field(
        "bid", description="Truthful per-click value: the logged bid, or pCVR x CPC"
    )

    def multipliers(self) -> np.ndarray:
        """Bid multipliers 1 + k*delta, truncated at floor_fraction."""
        ks = np.arange(-self.half_width, self.half_width + 1)
        factors = 1.0 + ks[ks != 0] * self.relative_step
        return factors[factors >= self.floor_fraction]

    def grid(self, bid: float) -> np.ndarray:
        """Positive misreports around ``bid``; the truthful point is excluded."""
        return self.multipliers() * bid


class ObjectiveWeights(BaseModel):
    """Preference weights lambda over the platform metrics."""
    revenue: float = Field(1.0, ge=0, description="Weight of the revenue metric")
    ctr: float = Field(0.0, ge=0, description="Weight of the expected-click metric")
    cvr: float = Field(0.0, ge=0, description="Weight of the expected-order metric")
    revenue_basis: Literal["click", "impression"] = Field(
        "click", description="Bill revenue per expected click or per allocated impression"
    )

    @model_validator(mode="after")
    def validate_positive(self) -> "ObjectiveWeights":
        if max(self.revenue, self.ctr, self.cvr) <= 0:
            raise ValueError("At least one objective weight must be positive")
        return self


class TrainConfig(BaseModel):
    """Augmented-Lagrangian training parameters for EdgeNet."""
    batch_size: int = Field(32, gt=0, description="Instances per minibatch")
    steps: int = Field(500, gt=0, description="Optimizer steps")
    learning_rate: float = Field(1e-3, gt=0, description="Adam learning rate")
    regret: PerturbationScheme = Field(
        default_factory=lambda: PerturbationScheme(relative_step=0.1, half_width=5),
        description="Misreport grid used by the differentiable regret",
    )
    regret_temperature: float = Field(0.01, gt=0, description="Smooth-max temperature tau_r")
    regret_penalty: bool = Field(True, description="Include the regret terms in the Lagrangian")
    allocation_estimator: AllocationEstimator = Field(
        "straight_through",
        description="Bill objective and regret on the decoded assignment (straight-through) or on soft R",
    )
    multiplier_init: float = Field(1.0, ge=0, description="Initial per-position multipliers rho_i")
    penalty_init: float = Field(10.0, gt=0, description="Initial quadratic penalty weight rho")
    penalty_growth: float = Field(1.5, ge=1, description="Penalty growth factor per multiplier update")
    penalty_max: float = Field(1e4, gt=0, description="Penalty weight cap")
    multiplier_period: int = Field(50, gt=0, description="Steps between multiplier updates (T_rho)")
    init: Literal["random", "bid_ranking"] = Field(
        "bid_ranking", description="Fresh-run start: random weights, or bid ranking with threshold-bid prices"
    )
    decode_mode: Literal["sample", "argmax"] = Field("sample", description="Selection rule for training rollouts")
    seed: int = Field(0, description="Initialization and minibatch seed")
    checkpoint_every: int = Field(100, gt=0, description="Checkpoint cadence in steps")
    log_every: int = Field(50, gt=0, description="Console progress cadence in steps")
    audit_every: int = Field(100, gt=0, description="Hard IC-R audit cadence in steps")
    audit_instances: int = Field(32, gt=0, description="Instances in the training-time audit slice")


class GspConfig(BaseModel):
    """Squashed GSP: rank by bid x pCTR^sigma."""
    squashing: float = Field(1.0, ge=0, description="Squashing exponent sigma")
    tune: bool = Field(True, description="Pick sigma from tune_grid by training-log RPM")
    tune_grid: List[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5], description="Candidate sigmas")

    @field_validator("tune_grid")
    @classmethod
    def validate_grid(cls, v: List[float]) -> List[float]:
        if not v or any(s < 0 for s in v):
            raise ValueError("tune_grid must be a non-empty list of non-negative exponents")
        return v


class UgspConfig(BaseModel):
    """Utility-based GSP: r_i = l1*b_i*pCTR_i + l2*pCTR_i + l3*pCVR_i."""
    lambda1: float = Field(1.0, gt=0, description="Weight of the eCPM term")
    lambda2: float = Field(0.5, ge=0, description="Weight of pCTR in o_i")
    lambda3: float = Field(0.5, ge=0, description="Weight of pCVR in o_i")


class DnaLiteConfig(BaseModel):
    """Learned-rank-score GSP stand-in."""
    hidden: int = Field(16, gt=0, description="Hidden width of the rank-score MLP")
    temperature: float = Field(0.1, gt=0, description="Soft-ranking temperature tau")
    steps: int = Field(300, gt=0, description="Optimizer steps")
    batch_size: int = Field(64, gt=0, description="Instances per minibatch")
    learning_rate: float = Field(3e-3, gt=0, description="Adam learning rate")
    seed: int = Field(0, description="Initialization and minibatch seed")


class PathsConfig(BaseModel):
    """Where logs, checkpoints and reports are written."""
    train_log: str = Field("data/train.log.jsonl", description="Training auction log")
    test_log: str = Field("data/test.log.jsonl", description="Test auction log")
    checkpoint_dir: str = Field("data/checkpoints", description="Checkpoint directory")
    reports_dir: str = Field("data/reports", description="Report directory")
    training_log: str = Field("data/training.log.tsv", description="Append-only training log")


class EvalConfig(BaseModel):
    """Mechanism comparison settings."""
    mechanisms: List[Literal["gsp", "ugsp", "dnalite", "edgenet"]] = Field(
        default_factory=lambda: ["gsp", "ugsp", "dnalite", "edgenet"], description="Rows of the table"
    )
    reference: str = Field("edgenet", description="Mechanism whose metrics normalize to 1.0")
    seeds: List[int] = Field(default_factory=lambda: [0], description="Evaluation seeds")
    sampled_clicks: bool = Field(False, description="Bernoulli click simulation instead of expectations")
    audit_instances: int = Field(200, gt=0, description="Test instances used for IC-R")
    bar_charts: bool = Field(False, description="Also write per-metric SVG bar charts")

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("At least one seed is required")
        return v

    @model_validator(mode="after")
    def validate_reference(self) -> "EvalConfig":
        if self.reference not in self.mechanisms:
            raise ValueError(f"reference {self.reference!r} must be one of the compared mechanisms {self.mechanisms}")
        return self


class ExperimentConfig(BaseModel):
    """Main experiment configuration loaded from config/experiment.config.json."""
    paths: PathsConfig = Field(default_factory=PathsConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    edgenet: EdgeNetConfig = Field(default_factory=EdgeNetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    objective: ObjectiveWeights = Field(default_factory=ObjectiveWeights)
    gsp: GspConfig = Field(default_factory=GspConfig)
    ugsp: UgspConfig = Field(default_factory=UgspConfig)
    dnalite: DnaLiteConfig = Field(default_factory=DnaLiteConfig)
    regret: PerturbationScheme = Field(default_factory=PerturbationScheme)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1, description="Training seeds for compare")

    @model_validator(mode="after")
    def validate_dimensions(self) -> "ExperimentConfig":
        if (self.edgenet.d_x, self.edgenet.d_y) != (self.synth.d_x, self.synth.d_y):
            raise ValueError(
                f"edgenet feature sizes ({self.edgenet.d_x}, {self.edgenet.d_y}) "
                f"must match synth ({self.synth.d_x}, {self.synth.d_y})"
            )
        return self


# ============================================================================
# Auction Domain Models
# ============================================================================

class AdCandidate(BaseModel):
    """One advertiser's entry in an auction."""
    model_config = ConfigDict(frozen=True)

    bid: float = Field(..., gt=0, description="Bid per click")
    pctr: float = Field(..., ge=0, le=1, description="Predicted click-through rate")
    pcvr: float = Field(..., ge=0, le=1, description="Predicted conversion rate")
    cpc_value: float = Field(..., ge=0, description="Value per conversion")
    features: List[float] = Field(default_factory=list, description="Ad feature vector x_i")


class UserContext(BaseModel):
    """Page-view user features y."""
    model_config = ConfigDict(frozen=True)

    features: List[float] = Field(default_factory=list, description="User feature vector y")


class AuctionInstance(BaseModel):
    """
    One page view: a user, N candidate ads and K slots.

    Array accessors return fresh numpy copies; instances are immutable.
    """
    model_config = ConfigDict(frozen=True)

    user: UserContext
    candidates: List[AdCandidate]
    slot_count: int = Field(..., gt=0, description="Number of slots K")
    slot_discounts: List[float] = Field(..., description="Position discounts gamma, gamma_1 = 1")

    @model_validator(mode="after")
    def validate_instance(self) -> "AuctionInstance":
        if self.slot_count > len(self.candidates):
            raise ValueError(f"slot_count ({self.slot_count}) exceeds candidates ({len(self.candidates)})")
        if len(self.slot_discounts) != self.slot_count:
            raise ValueError(f"slot_discounts needs {self.slot_count} entries, got {len(self.slot_discounts)}")
        _check_discounts(self.slot_discounts)
        lengths = {len(ad.features) for ad in self.candidates}
        if len(lengths) > 1:
            raise ValueError(f"Candidate feature lengths differ: {sorted(lengths)}")
        return self

    @property
    def n_ads(self) -> int:
        return len(self.candidates)

    def bids(self) -> np.ndarray:
        return np.array([ad.bid for ad in self.candidates], dtype=np.float64)

    def pctrs(self) -> np.ndarray:
        return np.array([ad.pctr for ad in self.candidates], dtype=np.float64)

    def pcvrs(self) -> np.ndarray:
        return np.array([ad.pcvr for ad in self.candidates], dtype=np.float64)

    def cpc_values(self) -> np.ndarray:
        return np.array([ad.cpc_value for ad in self.candidates], dtype=np.float64)

    def ad_features(self) -> np.ndarray:
        return np.array([ad.features for ad in self.candidates], dtype=np.float64).reshape(self.n_ads, -1)

    def user_features(self) -> np.ndarray:
        return np.array(self.user.features, dtype=np.float64)

    def discounts(self) -> np.ndarray:
        return np.array(self.slot_discounts, dtype=np.float64)

    def click_rates(self) -> np.ndarray:
        """Expected clicks pCTR_i * gamma_j for every (ad, slot) pair."""
        return self.pctrs()[:, None] * self.discounts()[None, :]

    def with_bid(self, i: int, bid: float) -> "AuctionInstance":
        """Copy with ad ``i`` reporting ``bid``; every other field is shared."""
        candidates = list(self.candidates)
        candidates[i] = candidates[i].model_copy(update={"bid": float(bid)})
        return self.model_copy(update={"candidates": candidates})

    def permuted(self, order: List[int]) -> "AuctionInstance":
        """Copy with candidates reordered so that new position k holds old ad order[k]."""
        return self.model_copy(update={"candidates": [self.candidates[k] for k in order]})


class AuctionLog(BaseModel):
    """Ordered, homogeneous collection of auction instances."""
    schema_version: int = Field(LOG_SCHEMA_VERSION, description="Log file schema version")
    n_ads: int = Field(..., gt=0)
    n_slots: int = Field(..., gt=0)
    d_x: int = Field(..., ge=0)
    d_y: int = Field(..., ge=0)
    slot_discounts: List[float]
    instances: List[AuctionInstance] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_homogeneous(self) -> "AuctionLog":
        _check_discounts(self.slot_discounts)
        for k, inst in enumerate(self.instances):
            shape = (inst.n_ads, inst.slot_count, len(inst.candidates[0].features), len(inst.user.features))
            if shape != (self.n_ads, self.n_slots, self.d_x, self.d_y):
                raise ValueError(
                    f"Instance {k} has (N, K, d_x, d_y) = {shape}, log expects "
                    f"{(self.n_ads, self.n_slots, self.d_x, self.d_y)}"
                )
            if inst.slot_discounts != self.slot_discounts:
                raise ValueError(f"Instance {k} slot discounts differ from the log header")
        return self

    def __len__(self) -> int:
        return len(self.instances)


# ============================================================================
# Report Models
# ============================================================================

class RegretReport(BaseModel):
    """Empirical ex-post regret of one mechanism over a set of instances."""
    mechanism: str = Field(..., description="Mechanism name")
    instances: int = Field(..., ge=1, description="Instances averaged over (L)")
    per_position_regret: List[float] = Field(..., description="Mean regret per candidate position")
    per_position_utility: List[float] = Field(..., description="Mean truthful utility per candidate position")
    ic_r: float = Field(..., ge=0, description="Mean relative utility gain from misreporting, percent")
    scheme: PerturbationScheme

    @field_validator("per_position_regret")
    @classmethod
    def validate_non_negative(cls, v: List[float]) -> List[float]:
        if any(r < 0 for r in v):
            raise ValueError("Regret must be non-negative")
        return v

    @property
    def mean_regret(self) -> float:
        return float(np.mean(self.per_position_regret)) if self.per_position_regret else 0.0


class MetricStat(BaseModel):
    """Mean and standard deviation over seeds."""
    mean: float
    std: float = Field(..., ge=0)


class MetricRow(BaseModel):
    """One mechanism's row of a comparison table."""
    mechanism: str
    ctr: MetricStat
    rpm: MetricStat
    cvr: MetricStat
    ic_r: Optional[float] = Field(None, description="IC-R percent, when audited")
    raw: Dict[str, float] = Field(default_factory=dict, description="Un-normalized seed-mean metrics")


class MetricTable(BaseModel):
    """Comparison table normalized to a reference mechanism."""
    reference: str
    seeds: List[int]
    rows: List[MetricRow]

    @model_validator(mode="after")
    def validate_reference(self) -> "MetricTable":
        if not any(row.mechanism == self.reference for row in self.rows):
            raise ValueError(f"Reference mechanism {self.reference!r} has no row")
        return self

    def row(self, mechanism: str) -> MetricRow:
        for row in self.rows:
            if row.mechanism == mechanism:
                return row
        raise KeyError(mechanism)
