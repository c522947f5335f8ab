"""
Auction core: valuation and utility math, feasibility checks, and the
Mechanism interface shared by EdgeNet and every baseline.

Conventions used across the lab:
- Allocation matrices are N x K (ads x slots) probabilities.
- Payments are per click; a winner of slot j is billed its per-click price
  times its expected clicks pCTR_i * gamma_j.
- Ties are broken by higher bid first, then lower candidate index.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np

from models import AdCandidate, AuctionInstance


FEASIBILITY_TOL = 1e-9


class AllocationError(ValueError):
    """Raised when an allocation or outcome violates feasibility."""


# ============================================================================
# Valuation and utility
# ============================================================================

def valuation(ad: AdCandidate, slot: int, slot_discounts: Sequence[float]) -> float:
    """
    Value to the advertiser of winning ``slot`` (0-based).

    v_ij = pCTR x pCVR x CPC x gamma_j
    """
    if not 0 <= slot < len(slot_discounts):
        raise IndexError(f"Slot {slot} out of range for {len(slot_discounts)} slots")
    return ad.pctr * ad.pcvr * ad.cpc_value * slot_discounts[slot]


def slot_valuations(instance: AuctionInstance, i: int) -> np.ndarray:
    """valuation() for ad ``i`` over every slot."""
    ad = instance.candidates[i]
    return np.array([valuation(ad, j, instance.slot_discounts) for j in range(instance.slot_count)])


def per_click_value(instance: AuctionInstance, i: int, value_model: str = "bid") -> float:
    """
    Truthful value of one click for ad ``i``.

    "bid" treats the logged bid as truthful play; "conversion" uses
    pCVR x CPC, which is valuation() divided by the slot's expected clicks.
    """
    ad = instance.candidates[i]
    if value_model == "bid":
        return ad.bid
    if value_model == "conversion":
        return ad.pcvr * ad.cpc_value
    raise ValueError(f"Unknown value model: {value_model!r}")


def utility(
    valuations: np.ndarray,
    outcome: "MechanismOutcome",
    i: int,
    billing: Optional[np.ndarray] = None,
    allocation: Literal["realized", "expected"] = "realized",
) -> float:
    """
    Utility of advertiser ``i``: sum_j R_ij v_ij - charge_i.

    Args:
        valuations: Per-slot valuations v_i. (length K)
        outcome: Mechanism outcome
        i: Advertiser index
        billing: Optional per-slot billing units (expected clicks). When
            given the charge is p_i * sum_j R_ij * billing_j, otherwise p_i.
        allocation: "realized" bills the deployed one-hot assignment;
            "expected" bills the probability matrix R at the ad's price quote

    Returns:
        Utility in money; negative when the payment exceeds the value
    """
    if allocation == "expected":
        row = outcome.allocation[i]
        price = outcome.payments[i] if outcome.price_quotes is None else outcome.price_quotes[i]
    else:
        row = outcome.realized_allocation()[i]
        price = outcome.payments[i]
    charge = price if billing is None else price * float(row @ billing)
    return float(row @ valuations) - float(charge)


# ============================================================================
# Ranking and assignment
# ============================================================================

def rank_order(scores: np.ndarray, bids: np.ndarray) -> np.ndarray:
    """Indices sorted by score desc, then bid desc, then index asc."""
    idx = np.arange(len(scores))
    return np.lexsort((idx, -np.asarray(bids), -np.asarray(scores)))


def feasible_assignment(
    allocation: np.ndarray,
    mode: Literal["argmax", "sample"] = "argmax",
    seed: Optional[int] = None,
    bids: Optional[np.ndarray] = None,
) -> List[int]:
    """
    Turn an allocation matrix into K distinct winners, slot by slot.

    Each slot draws from its column restricted to ads not chosen yet:
    argmax (tie-break per rank_order), or a categorical sample from the
    renormalized column. A column with zero mass left falls back to argmax.

    Raises:
        AllocationError: If no unchosen ad remains for a slot
    """
    n_ads, n_slots = allocation.shape
    bids = np.zeros(n_ads) if bids is None else np.asarray(bids, dtype=np.float64)
    rng = np.random.default_rng(seed)
    chosen: List[int] = []
    available = np.ones(n_ads, dtype=bool)

    for j in range(n_slots):
        if not available.any():
            raise AllocationError(f"Internal error: no unchosen ad left for slot {j}")
        column = np.where(available, allocation[:, j], 0.0)
        mass = column.sum()
        if mode == "sample" and mass > 0:
            winner = int(rng.choice(n_ads, p=column / mass))
        else:
            scores = np.where(available, allocation[:, j], -np.inf)
            winner = int(rank_order(scores, bids)[0])
        chosen.append(winner)
        available[winner] = False
    return chosen


def assignment_matrix(assignment: Sequence[int], n_ads: int, n_slots: int) -> np.ndarray:
    """One-hot N x K matrix of a slot -> winner list (missing slots stay empty)."""
    matrix = np.zeros((n_ads, n_slots))
    for j, winner in enumerate(assignment):
        matrix[winner, j] = 1.0
    return matrix


# ============================================================================
# Outcomes and the mechanism interface
# ============================================================================

@dataclass(frozen=True)
class MechanismOutcome:
    """
    Allocation R, optional slot assignment and per-click payments.

    ``assignment[j]`` is the winner of slot j; it may be shorter than K when
    a mechanism leaves trailing slots empty. ``price_quotes`` optionally holds
    the per-click price every ad would pay if allocated (losers included);
    expected-allocation utilities bill against it.
    """
    allocation: np.ndarray
    payments: np.ndarray
    assignment: Optional[List[int]] = None
    price_quotes: Optional[np.ndarray] = None

    def realized_allocation(self) -> np.ndarray:
        """The deployed allocation: one-hot assignment when present, else R."""
        if self.assignment is None:
            return self.allocation
        return assignment_matrix(self.assignment, *self.allocation.shape)

    def winners(self) -> List[int]:
        if self.assignment is not None:
            return list(self.assignment)
        return [int(i) for i in np.flatnonzero(self.allocation.sum(axis=1) > 0)]


def check_allocation(allocation: np.ndarray, tol: float = FEASIBILITY_TOL) -> None:
    """Raise AllocationError unless entries are in [0,1] and rows/columns sum to <= 1."""
    if allocation.ndim != 2:
        raise AllocationError(f"Allocation must be N x K, got shape {allocation.shape}")
    if np.any(allocation < -tol) or np.any(allocation > 1 + tol):
        raise AllocationError("Allocation entries must lie in [0, 1]")
    if np.any(allocation.sum(axis=0) > 1 + tol):
        raise AllocationError(f"Column sums exceed 1: {allocation.sum(axis=0)}")
    if np.any(allocation.sum(axis=1) > 1 + tol):
        raise AllocationError(f"Row sums exceed 1: {allocation.sum(axis=1)}")


def check_outcome(instance: AuctionInstance, outcome: MechanismOutcome, tol: float = FEASIBILITY_TOL) -> None:
    """
    Validate an outcome against the auction-core invariants.

    Raises:
        AllocationError: On any infeasible allocation, duplicate winner,
            payment above bid, negative payment or payment by a loser
    """
    n_ads, n_slots = instance.n_ads, instance.slot_count
    if outcome.allocation.shape != (n_ads, n_slots):
        raise AllocationError(f"Allocation shape {outcome.allocation.shape} != {(n_ads, n_slots)}")
    check_allocation(outcome.allocation, tol)
    if outcome.assignment is not None:
        if len(outcome.assignment) > n_slots:
            raise AllocationError(f"Assignment has {len(outcome.assignment)} winners for {n_slots} slots")
        if len(set(outcome.assignment)) != len(outcome.assignment):
            raise AllocationError(f"Assignment winners are not distinct: {outcome.assignment}")
    payments = outcome.payments
    if np.any(payments < -tol):
        raise AllocationError(f"Negative payment: {payments}")
    if np.any(payments > instance.bids() + tol):
        raise AllocationError("Payment exceeds bid")
    won = outcome.realized_allocation().sum(axis=1) > 0
    if np.any(payments[~won] != 0.0):
        raise AllocationError("An unallocated ad was charged")


class Mechanism(ABC):
    """Allocation + payment rule. Implementations must be pure per instance."""

    name: str = "mechanism"

    @abstractmethod
    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        """Run the auction on one instance."""

    def run_many(self, instances: Sequence[AuctionInstance]) -> List[MechanismOutcome]:
        """Run the auction on several instances; batched implementations override this."""
        return [self.run(inst) for inst in instances]


def ranked_outcome(
    instance: AuctionInstance,
    order: Sequence[int],
    prices: Sequence[float],
) -> MechanismOutcome:
    """Outcome for rank-based mechanisms: ``order[j]`` wins slot j and pays ``prices[j]``."""
    n_ads, n_slots = instance.n_ads, instance.slot_count
    winners = [int(i) for i in order[:n_slots]]
    payments = np.zeros(n_ads)
    for winner, price in zip(winners, prices):
        payments[winner] = price
    return MechanismOutcome(
        allocation=assignment_matrix(winners, n_ads, n_slots),
        payments=payments,
        assignment=winners,
    )


# ============================================================================
# Batched arrays
# ============================================================================

@dataclass(frozen=True)
class AuctionBatch:
    """
    Dense arrays for B homogeneous instances, as consumed by the networks.

    Shapes: ad_features (B, N, d_x), user_features (B, d_y), bids / pctr /
    pcvr / cpc (B, N), discounts (K,).
    """
    ad_features: np.ndarray
    user_features: np.ndarray
    bids: np.ndarray
    pctr: np.ndarray
    pcvr: np.ndarray
    cpc: np.ndarray
    discounts: np.ndarray

    @classmethod
    def from_instances(cls, instances: Sequence[AuctionInstance]) -> "AuctionBatch":
        if not instances:
            raise ValueError("Cannot batch an empty list of instances")
        first = instances[0]
        shape = (first.n_ads, first.slot_count)
        for k, inst in enumerate(instances):
            if (inst.n_ads, inst.slot_count) != shape or inst.slot_discounts != first.slot_discounts:
                raise ValueError(f"Instance {k} is not homogeneous with instance 0")
        return cls(
            ad_features=np.stack([inst.ad_features() for inst in instances]),
            user_features=np.stack([inst.user_features() for inst in instances]),
            bids=np.stack([inst.bids() for inst in instances]),
            pctr=np.stack([inst.pctrs() for inst in instances]),
            pcvr=np.stack([inst.pcvrs() for inst in instances]),
            cpc=np.stack([inst.cpc_values() for inst in instances]),
            discounts=first.discounts(),
        )

    def __len__(self) -> int:
        return self.bids.shape[0]

    @property
    def n_ads(self) -> int:
        return self.bids.shape[1]

    @property
    def n_slots(self) -> int:
        return self.discounts.shape[0]

    def click_rates(self) -> np.ndarray:
        """Expected clicks pCTR_i * gamma_j, shape (B, N, K)."""
        return self.pctr[:, :, None] * self.discounts[None, None, :]

    def take(self, rows: np.ndarray) -> "AuctionBatch":
        """Rows ``rows`` of every array (repeats allowed)."""
        rows = np.asarray(rows, dtype=np.int64)
        return AuctionBatch(
            ad_features=self.ad_features[rows],
            user_features=self.user_features[rows],
            bids=self.bids[rows],
            pctr=self.pctr[rows],
            pcvr=self.pcvr[rows],
            cpc=self.cpc[rows],
            discounts=self.discounts,
        )

    def with_bids(self, bids: np.ndarray) -> "AuctionBatch":
        bids = np.asarray(bids, dtype=np.float64)
        if bids.shape != self.bids.shape:
            raise ValueError(f"Bid matrix shape {bids.shape} != {self.bids.shape}")
        return AuctionBatch(
            ad_features=self.ad_features, user_features=self.user_features, bids=bids,
            pctr=self.pctr, pcvr=self.pcvr, cpc=self.cpc, discounts=self.discounts,
        )
