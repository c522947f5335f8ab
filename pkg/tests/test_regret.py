import numpy as np
import pytest
from hypothesis import given, settings

from auction import Mechanism, MechanismOutcome, assignment_matrix
from mechanisms.gsp import GspMechanism
from mechanisms.oracles import FirstPriceMechanism, SecondPriceOracle
from models import PerturbationScheme
from regret import advertiser_utility, empirical_regret, expost_regret, regret_profile, truthful_valuations
from factories import SEEDS, make_instance, random_instance, random_instances


FINE = PerturbationScheme(relative_step=0.01, half_width=100)


class FixedSlate(Mechanism):
    """Always shows ad 0 in slot 0 for free."""

    name = "fixed"

    def run(self, instance):
        return MechanismOutcome(
            allocation=assignment_matrix([0], instance.n_ads, instance.slot_count),
            payments=np.zeros(instance.n_ads),
            assignment=[0],
        )


def test_bid_independent_mechanism_has_no_regret():
    inst = make_instance([2.0, 1.0, 3.0])
    for i in range(3):
        assert expost_regret(FixedSlate(), inst, i, FINE) == 0.0


def test_second_price_is_truthful():
    inst = make_instance([2.0, 1.0])
    assert expost_regret(SecondPriceOracle(), inst, 0, FINE) == 0.0
    assert expost_regret(SecondPriceOracle(), inst, 1, FINE) == 0.0


def test_first_price_rewards_shading():
    inst = make_instance([2.0, 1.0])
    assert expost_regret(FirstPriceMechanism(), inst, 0, FINE) == pytest.approx(1.0, abs=0.02)
    assert expost_regret(FirstPriceMechanism(), inst, 1, FINE) == 0.0


def test_gsp_bidder_gains_by_dropping_a_slot():
    inst = make_instance([10.0, 9.6, 1.0], n_slots=2, discounts=[1.0, 0.5])
    scheme = PerturbationScheme()
    regrets, utilities = regret_profile(GspMechanism(squashing=1.0), inst, scheme)
    assert utilities[0] == pytest.approx(0.4)
    assert regrets[0] == pytest.approx(4.1)
    report = empirical_regret(GspMechanism(squashing=1.0), [inst], scheme)
    assert report.ic_r > 0.0
    assert report.mechanism == "gsp"


def test_second_price_audit_reports_zero_ic_r():
    report = empirical_regret(SecondPriceOracle(), random_instances(9, count=6), PerturbationScheme())
    assert report.ic_r == 0.0
    assert report.mean_regret == 0.0
    assert report.instances == 6
    assert len(report.per_position_regret) == 5


def test_duplicated_dataset_gives_the_same_report():
    instances = random_instances(10, count=1)
    mech = GspMechanism(squashing=1.0)
    once = empirical_regret(mech, instances)
    twice = empirical_regret(mech, instances * 2)
    assert twice.per_position_regret == pytest.approx(once.per_position_regret)
    assert twice.ic_r == pytest.approx(once.ic_r)


def test_regret_is_non_negative():
    for inst in random_instances(11, count=5):
        regrets, _ = regret_profile(GspMechanism(squashing=0.5), inst, PerturbationScheme(half_width=4))
        assert np.all(regrets >= 0.0)


def test_truthful_utility_bills_per_click():
    inst = make_instance([2.0, 1.0], pctr=[0.5, 0.5])
    outcome = SecondPriceOracle().run(inst)
    assert advertiser_utility(inst, outcome, 0) == pytest.approx(0.5 * (2.0 - 1.0))
    assert truthful_valuations(inst, 0, "conversion") == pytest.approx([0.5 * 0.1 * 10.0])


def test_empty_dataset_and_bad_index():
    with pytest.raises(ValueError):
        empirical_regret(SecondPriceOracle(), [])
    with pytest.raises(IndexError):
        expost_regret(SecondPriceOracle(), make_instance([1.0, 2.0]), 2)


def test_misreport_grid():
    scheme = PerturbationScheme(relative_step=0.5, half_width=2, floor_fraction=0.01)
    assert scheme.grid(2.0).tolist() == [1.0, 3.0, 4.0]
    assert 1.0 not in PerturbationScheme().multipliers().tolist()


@settings(max_examples=20, deadline=None)
@given(seed=SEEDS)
def test_first_price_regret_matches_the_best_shading(seed):
    inst = random_instance(seed)
    bids, pctr = inst.bids(), inst.pctrs()
    regrets, _ = regret_profile(FirstPriceMechanism(), inst, FINE)
    for i in range(inst.n_ads):
        runner_up = np.delete(bids, i).max()
        best = pctr[i] * max(bids[i] - runner_up, 0.0)
        assert regrets[i] <= best + 1e-12
        assert regrets[i] >= best - FINE.relative_step * bids[i] * pctr[i] - 1e-12


class GridWithTruthfulBid(PerturbationScheme):
    """The usual grid plus the truthful bid itself."""

    def grid(self, bid: float) -> np.ndarray:
        return np.append(super().grid(bid), bid)


@settings(max_examples=15, deadline=None)
@given(seed=SEEDS)
def test_wider_grid_never_lowers_regret_and_truthful_point_adds_nothing(seed):
    inst = random_instance(seed)
    mech = GspMechanism(squashing=0.5)
    narrow = PerturbationScheme(relative_step=0.1, half_width=3)
    wide = PerturbationScheme(relative_step=0.1, half_width=6)
    narrow_regrets, narrow_utilities = regret_profile(mech, inst, narrow)
    wide_regrets, wide_utilities = regret_profile(mech, inst, wide)
    assert np.all(wide_regrets >= narrow_regrets - 1e-12)
    assert np.allclose(wide_utilities, narrow_utilities)

    with_truthful, _ = regret_profile(mech, inst, GridWithTruthfulBid(relative_step=0.1, half_width=3))
    assert np.allclose(with_truthful, narrow_regrets)
