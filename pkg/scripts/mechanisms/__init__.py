"""
Mechanisms module for AdAuctionLab.

This package holds the reference mechanisms EdgeNet is compared against:
- Squashed GSP (gsp)
- Utility-based GSP (ugsp)
- DNA-lite, a learned rank score inside GSP (dnalite)
- Single-slot second-price / first-price oracles for regret calibration

Every mechanism implements auction.Mechanism; build_mechanism() resolves a
configured name to a ready instance.
"""

import sys
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from typing import Optional, Sequence

import console
from auction import Mechanism
from models import AuctionInstance, ExperimentConfig


MECHANISM_NAMES = ("gsp", "ugsp", "dnalite", "edgenet", "second-price", "first-price")


def build_mechanism(
    name: str,
    config: ExperimentConfig,
    edgenet_params=None,
    dnalite_params=None,
    tuning_instances: Optional[Sequence[AuctionInstance]] = None,
) -> Mechanism:
    """
    Resolve a mechanism name from the experiment configuration.

    Args:
        name: One of MECHANISM_NAMES
        config: Experiment configuration (baseline settings)
        edgenet_params: Trained EdgeNet parameters, required for "edgenet"
        dnalite_params: Trained DNA-lite parameters, required for "dnalite"
        tuning_instances: Instances for GSP squashing tuning; when omitted
            (or tuning is disabled) the configured exponent is used

    Returns:
        Mechanism ready to run

    Raises:
        ValueError: For an unknown name or missing trained parameters
    """
    from mechanisms import dnalite, gsp, oracles, ugsp

    if name == "gsp":
        sigma = config.gsp.squashing
        if config.gsp.tune and tuning_instances:
            sigma = gsp.tune_squashing(tuning_instances, config.gsp.tune_grid)
            console.print_info(f"GSP squashing tuned on {len(tuning_instances)} instances: sigma = {sigma}")
        return gsp.GspMechanism(squashing=sigma)
    if name == "ugsp":
        return ugsp.UgspMechanism(config.ugsp)
    if name == "dnalite":
        if dnalite_params is None:
            raise ValueError("DNA-lite needs trained parameters (run `train --model dnalite` first)")
        return dnalite.DnaLiteMechanism(dnalite_params)
    if name == "edgenet":
        if edgenet_params is None:
            raise ValueError("EdgeNet needs trained parameters (run `train` first)")
        from edgenet import EdgeNetMechanism
        return EdgeNetMechanism(edgenet_params, mode="argmax")
    if name == "second-price":
        return oracles.SecondPriceOracle()
    if name == "first-price":
        return oracles.FirstPriceMechanism()
    raise ValueError(f"Unknown mechanism: {name!r} (expected one of {', '.join(MECHANISM_NAMES)})")
