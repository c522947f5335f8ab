"""
Squashed generalized second-price auction.

Ads rank by bid x pCTR^sigma. The winner of slot j pays the minimum
per-click bid that keeps its rank:

    p = score_(j+1) / pCTR_i^sigma

where score_(j+1) is the next eligible score (0 when none). With sigma > 0
an ad with pCTR = 0 scores 0 regardless of bid and is not eligible to win.
"""

from typing import List, Optional, Sequence

import numpy as np

from auction import Mechanism, MechanismOutcome, rank_order, ranked_outcome
import evalkit
from models import AuctionInstance, GspConfig


class GspMechanism(Mechanism):
    name = "gsp"

    def __init__(self, config: Optional[GspConfig] = None, squashing: Optional[float] = None):
        config = config or GspConfig()
        self.squashing = config.squashing if squashing is None else float(squashing)
        if self.squashing < 0:
            raise ValueError(f"Squashing exponent must be non-negative, got {self.squashing}")

    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        return gsp_run(instance, self.squashing)


def gsp_run(instance: AuctionInstance, squashing: float = 1.0) -> MechanismOutcome:
    bids = instance.bids()
    quality = instance.pctrs() ** squashing
    scores = bids * quality
    eligible = quality > 0

    order = [int(i) for i in rank_order(scores, bids) if eligible[i]]
    prices: List[float] = []
    for rank, winner in enumerate(order[:instance.slot_count]):
        next_score = scores[order[rank + 1]] if rank + 1 < len(order) else 0.0
        prices.append(min(next_score / quality[winner], bids[winner]))
    return ranked_outcome(instance, order, prices)


def tune_squashing(
    instances: Sequence[AuctionInstance],
    grid: Sequence[float],
) -> float:
    """
    Pick the squashing exponent with the highest expected RPM on ``instances``.

    Ties keep the earlier grid entry.
    """
    if not grid:
        raise ValueError("Squashing grid must not be empty")
    best_sigma, best_rpm = float(grid[0]), -np.inf
    for sigma in grid:
        rpm = evalkit.simulate_metrics(GspMechanism(squashing=sigma), instances).rpm
        if rpm > best_rpm:
            best_sigma, best_rpm = float(sigma), rpm
    return best_sigma
