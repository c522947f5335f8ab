"""
Utility-based GSP.

Rank score r_i = l1 * b_i * pCTR_i + o_i with o_i = l2 * pCTR_i + l3 * pCVR_i.
The winner of a slot pays the bid at which its score would fall to the
next-ranked ad's:

    p_i = (l1 * b_next * pCTR_next + o_next - o_i) / (l1 * pCTR_i)

clamped to [0, b_i]. With no successor, b_next * pCTR_next and o_next are 0.
Ads with l1 * pCTR_i = 0 cannot win.
"""

from typing import List, Optional

from auction import Mechanism, MechanismOutcome, rank_order, ranked_outcome
from models import AuctionInstance, UgspConfig


class UgspMechanism(Mechanism):
    name = "ugsp"

    def __init__(self, config: Optional[UgspConfig] = None):
        self.config = config or UgspConfig()

    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        return ugsp_run(instance, self.config)


def ugsp_run(instance: AuctionInstance, config: UgspConfig) -> MechanismOutcome:
    l1, l2, l3 = config.lambda1, config.lambda2, config.lambda3
    bids, pctr = instance.bids(), instance.pctrs()
    quality = l2 * pctr + l3 * instance.pcvrs()
    ecpm = bids * pctr
    # r_i / l1: same order as r_i, and bid x pCTR exactly when quality is zero
    scores = ecpm + quality / l1
    eligible = l1 * pctr > 0

    order = [int(i) for i in rank_order(scores, bids) if eligible[i]]
    prices: List[float] = []
    for rank, winner in enumerate(order[:instance.slot_count]):
        if rank + 1 < len(order):
            nxt = order[rank + 1]
            next_ecpm, next_quality = ecpm[nxt], quality[nxt]
        else:
            next_ecpm, next_quality = 0.0, 0.0
        price = (next_ecpm + (next_quality - quality[winner]) / l1) / pctr[winner]
        prices.append(min(max(price, 0.0), bids[winner]))
    return ranked_outcome(instance, order, prices)
