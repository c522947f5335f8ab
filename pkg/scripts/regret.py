"""
Empirical ex-post regret and the IC-R metric.

For advertiser i with truthful per-click value v_i, the regret on one
instance is the largest utility gain over a grid of misreported bids with
every other bid held fixed, floored at 0. Utilities are billed per click:

    u_i = sum_j A_ij * pCTR_i * gamma_j * (v_i - p_i)

where A is the realized (one-hot) allocation, or the probability matrix R
when auditing expected allocations.

IC-R is the mean, over (instance, advertiser) pairs with positive truthful
utility, of regret / truthful utility, in percent.
"""

from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from auction import Mechanism, MechanismOutcome, per_click_value, slot_valuations, utility
from models import AuctionInstance, PerturbationScheme, RegretReport


AllocationView = Literal["realized", "expected"]


def truthful_valuations(instance: AuctionInstance, i: int, value_model: str = "bid") -> np.ndarray:
    """Per-slot valuations v_ij under the chosen truthful-value convention."""
    if value_model == "conversion":
        return slot_valuations(instance, i)
    return per_click_value(instance, i, value_model) * instance.click_rates()[i]


def advertiser_utility(
    instance: AuctionInstance,
    outcome: MechanismOutcome,
    i: int,
    value_model: str = "bid",
    allocation: AllocationView = "realized",
) -> float:
    return utility(
        truthful_valuations(instance, i, value_model),
        outcome,
        i,
        billing=instance.click_rates()[i],
        allocation=allocation,
    )


def _misreports(instance: AuctionInstance, scheme: PerturbationScheme) -> List[Tuple[int, AuctionInstance]]:
    profiles = []
    for i, ad in enumerate(instance.candidates):
        for bid in scheme.grid(ad.bid):
            profiles.append((i, instance.with_bid(i, bid)))
    return profiles


def regret_profile(
    mech: Mechanism,
    instance: AuctionInstance,
    scheme: PerturbationScheme,
    allocation: AllocationView = "realized",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Regret and truthful utility of every advertiser on one instance.

    All misreports go through one run_many() call so batched mechanisms
    evaluate them together.
    """
    profiles = _misreports(instance, scheme)
    outcomes = mech.run_many([instance] + [inst for _, inst in profiles])
    truthful = outcomes[0]

    n = instance.n_ads
    base = np.array([
        advertiser_utility(instance, truthful, i, scheme.value_model, allocation) for i in range(n)
    ])
    best_gain = np.zeros(n)
    for (i, _), outcome in zip(profiles, outcomes[1:]):
        # Utility is scored against the truthful instance: the value stays v_i
        gain = advertiser_utility(instance, outcome, i, scheme.value_model, allocation) - base[i]
        best_gain[i] = max(best_gain[i], gain)
    return best_gain, base


def expost_regret(
    mech: Mechanism,
    instance: AuctionInstance,
    i: int,
    scheme: Optional[PerturbationScheme] = None,
    allocation: AllocationView = "realized",
) -> float:
    """Largest utility gain advertiser ``i`` can get by misreporting on ``instance``, floored at 0."""
    scheme = scheme or PerturbationScheme()
    if not 0 <= i < instance.n_ads:
        raise IndexError(f"Advertiser {i} out of range for {instance.n_ads} ads")
    regrets, _ = regret_profile(mech, instance, scheme, allocation)
    return float(regrets[i])


def empirical_regret(
    mech: Mechanism,
    instances: Sequence[AuctionInstance],
    scheme: Optional[PerturbationScheme] = None,
    allocation: AllocationView = "realized",
    name: Optional[str] = None,
) -> RegretReport:
    """
    Average ex-post regret per candidate position over ``instances``, plus IC-R.

    Raises:
        ValueError: If ``instances`` is empty
    """
    scheme = scheme or PerturbationScheme()
    if not instances:
        raise ValueError("Cannot estimate regret on an empty dataset")

    regrets, utilities = zip(*(regret_profile(mech, inst, scheme, allocation) for inst in instances))
    regrets, utilities = np.stack(regrets), np.stack(utilities)

    positive = utilities > 0
    ic_r = float(np.mean(regrets[positive] / utilities[positive]) * 100.0) if positive.any() else 0.0

    return RegretReport(
        mechanism=name or mech.name,
        instances=len(instances),
        per_position_regret=regrets.mean(axis=0).tolist(),
        per_position_utility=utilities.mean(axis=0).tolist(),
        ic_r=ic_r,
        scheme=scheme,
    )
