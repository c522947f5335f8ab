"""
Single-slot calibration mechanisms for the regret auditor.

Both allocate only the first slot, to the highest bid (ties to the lower
index); further slots stay empty. The second-price oracle is truthful, the
first-price one is not.
"""

from auction import Mechanism, MechanismOutcome, rank_order, ranked_outcome
from models import AuctionInstance


def _top_two(instance: AuctionInstance):
    bids = instance.bids()
    order = rank_order(bids, bids)
    runner_up = float(bids[order[1]]) if len(order) > 1 else 0.0
    return bids, int(order[0]), runner_up


class SecondPriceOracle(Mechanism):
    name = "second-price"

    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        _, winner, runner_up = _top_two(instance)
        return ranked_outcome(instance, [winner], [runner_up])


class FirstPriceMechanism(Mechanism):
    name = "first-price"

    def run(self, instance: AuctionInstance) -> MechanismOutcome:
        bids, winner, _ = _top_two(instance)
        return ranked_outcome(instance, [winner], [float(bids[winner])])
