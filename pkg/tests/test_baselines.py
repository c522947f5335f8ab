import numpy as np
import pytest
from hypothesis import given, settings

import evalkit
from auction import AuctionBatch, check_outcome
from mechanisms import MECHANISM_NAMES, build_mechanism
from mechanisms.dnalite import (
    DnaLiteMechanism,
    DnaLiteParams,
    _position,
    dnalite_run,
    dnalite_train,
    expected_objective,
    load_params,
    retention_price,
    save_params,
    soft_rank,
)
from mechanisms.gsp import GspMechanism, gsp_run, tune_squashing
from mechanisms.oracles import FirstPriceMechanism, SecondPriceOracle
from mechanisms.ugsp import UgspMechanism, ugsp_run
from models import DnaLiteConfig, ExperimentConfig, ObjectiveWeights, UgspConfig
from numgrad import Tensor
from factories import SEEDS, make_instance, random_instance, random_instances


def brute_force_retention(instance, winner, slot, own_score, other_scores, step=1e-4):
    """Smallest grid bid that keeps ``winner`` in ``slot`` or better, other bids fixed."""
    bids = instance.bids()
    grid = np.append(np.arange(0.0, bids[winner], step), bids[winner])
    own = own_score(grid)[:, None]
    others = np.delete(np.arange(instance.n_ads), winner)
    s, b = other_scores[others][None, :], bids[others][None, :]
    ahead = (s > own) | ((s == own) & ((b > grid[:, None]) | ((b == grid[:, None]) & (others[None, :] < winner))))
    return grid[ahead.sum(axis=1) <= slot].min()


class TestGsp:
    def test_worked_example(self):
        inst = make_instance([3.0, 2.0, 1.0], pctr=[0.1, 0.2, 0.25], n_slots=2)
        outcome = gsp_run(inst, 1.0)
        assert outcome.assignment == [1, 0]
        assert outcome.payments == pytest.approx([2.5, 1.5, 0.0])
        check_outcome(inst, outcome)

    def test_lone_bidder_pays_nothing(self):
        outcome = gsp_run(make_instance([4.0]), 1.0)
        assert outcome.assignment == [0]
        assert outcome.payments.tolist() == [0.0]

    def test_no_squashing_is_a_bid_auction(self):
        inst = make_instance([1.0, 3.0, 2.0], pctr=[0.9, 0.01, 0.3], n_slots=2)
        outcome = gsp_run(inst, 0.0)
        assert outcome.assignment == [1, 2]
        assert outcome.payments == pytest.approx([0.0, 2.0, 1.0])

    def test_zero_ctr_ad_cannot_win(self):
        inst = make_instance([9.0, 1.0], pctr=[0.0, 0.5])
        assert gsp_run(inst, 1.0).assignment == [1]

    def test_negative_squashing_rejected(self):
        with pytest.raises(ValueError):
            GspMechanism(squashing=-0.5)

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS)
    def test_payment_is_the_minimum_bid_to_keep_the_slot(self, seed):
        inst = random_instance(seed)
        sigma = [0.5, 1.0, 1.5][seed % 3]
        quality = inst.pctrs() ** sigma
        outcome = gsp_run(inst, sigma)
        check_outcome(inst, outcome)
        for slot, winner in enumerate(outcome.assignment):
            brute = brute_force_retention(
                inst, winner, slot, lambda g: g * quality[winner], inst.bids() * quality
            )
            price = outcome.payments[winner]
            assert price <= brute + 1e-9
            assert brute - price <= 1e-4 + 1e-9

    def test_tuning_picks_the_best_rpm(self):
        instances = random_instances(2, count=30)
        grid = [0.0, 0.5, 1.0, 2.0]
        rpms = [evalkit.simulate_metrics(GspMechanism(squashing=s), instances).rpm for s in grid]
        assert tune_squashing(instances, grid) == grid[int(np.argmax(rpms))]
        with pytest.raises(ValueError):
            tune_squashing(instances, [])


class TestUgsp:
    def test_worked_example(self):
        inst = make_instance([2.0, 1.0], pctr=[0.2, 0.4], pcvr=[0.3, 0.3])
        outcome = ugsp_run(inst, UgspConfig(lambda1=1.0, lambda2=0.5, lambda3=0.0))
        assert outcome.assignment == [1]
        assert outcome.payments[1] == pytest.approx(0.75)
        assert outcome.payments[0] == 0.0

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS)
    def test_pure_ecpm_weights_reduce_to_gsp(self, seed):
        inst = random_instance(seed)
        ugsp = ugsp_run(inst, UgspConfig(lambda1=1.0, lambda2=0.0, lambda3=0.0))
        gsp = gsp_run(inst, 1.0)
        assert ugsp.assignment == gsp.assignment
        assert np.array_equal(ugsp.payments, gsp.payments)
        assert np.array_equal(ugsp.allocation, gsp.allocation)

    def test_last_winner_without_successor_pays_nothing(self):
        inst = make_instance([2.0, 1.0], pctr=[0.3, 0.2], n_slots=2, discounts=[1.0, 0.7])
        outcome = UgspMechanism().run(inst)
        assert outcome.payments[outcome.assignment[-1]] == 0.0

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS)
    def test_payment_is_the_minimum_bid_to_keep_the_slot(self, seed):
        inst = random_instance(seed)
        config = UgspConfig(lambda1=1.0, lambda2=0.5, lambda3=0.5)
        pctr = inst.pctrs()
        offset = (config.lambda2 * pctr + config.lambda3 * inst.pcvrs()) / config.lambda1
        outcome = ugsp_run(inst, config)
        check_outcome(inst, outcome)
        for slot, winner in enumerate(outcome.assignment):
            brute = brute_force_retention(
                inst, winner, slot,
                lambda g: g * pctr[winner] + offset[winner],
                inst.bids() * pctr + offset,
            )
            price = outcome.payments[winner]
            assert price <= brute + 1e-9
            assert brute - price <= 1e-4 + 1e-9


class TestDnaLite:
    @pytest.fixture
    def params(self):
        return DnaLiteParams.initialize(3, DnaLiteConfig(hidden=4), seed=5)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS)
    def test_prices_keep_the_slot_and_stay_below_bid(self, seed):
        params = DnaLiteParams.initialize(3, DnaLiteConfig(hidden=4), seed=seed % 97)
        inst = random_instance(seed)
        outcome = DnaLiteMechanism(params).run(inst)
        check_outcome(inst, outcome)
        quality = DnaLiteMechanism(params)._quality([inst])[0]
        slope = params.bid_weight
        bids = inst.bids()
        scores = quality + slope * bids
        for slot, winner in enumerate(outcome.assignment):
            price = outcome.payments[winner]
            assert 0.0 <= price <= bids[winner]
            assert _position(winner, price, quality[winner], slope, scores, bids) <= slot
            if price > 1e-6:
                assert _position(winner, price - 1e-6, quality[winner], slope, scores, bids) > slot

    def test_flat_feature_network_ranks_by_bid(self, params):
        params.tensors["dna.W1"].data[...] = 0.0
        inst = random_instance(8)
        outcome = DnaLiteMechanism(params).run(inst)
        assert outcome.assignment == np.argsort(-inst.bids())[:3].tolist()

    def test_retention_price_closed_form_for_a_simple_case(self):
        quality = np.array([0.0, 0.0, 0.0])
        bids = np.array([3.0, 2.0, 1.0])
        assert retention_price(0, 0, quality, 1.0, bids) == pytest.approx(2.0, abs=1e-8)
        assert retention_price(1, 1, quality, 1.0, bids) == pytest.approx(1.0, abs=1e-8)
        assert retention_price(2, 2, quality, 1.0, bids) == 0.0

    def test_cold_soft_rank_is_the_hard_ranking(self):
        scores = Tensor(np.array([[3.0, 1.0, 2.0, 0.5]]))
        probs = soft_rank(scores, n_slots=3, temperature=1e-3).data[0]
        expected = np.zeros((4, 3))
        expected[[0, 2, 1], [0, 1, 2]] = 1.0
        assert np.allclose(probs, expected, atol=1e-6)

    def test_constant_scores_spread_evenly(self):
        probs = soft_rank(Tensor(np.full((2, 5), 0.7)), n_slots=3, temperature=0.1).data
        assert np.allclose(probs, 0.2)

    def test_soft_rank_needs_positive_temperature(self):
        with pytest.raises(ValueError):
            soft_rank(Tensor(np.zeros((1, 3))), n_slots=1, temperature=0.0)

    def test_training_improves_the_objective(self):
        inst = random_instance(12)
        config = DnaLiteConfig(hidden=4, steps=20, batch_size=1, learning_rate=1e-3, seed=0)
        result = dnalite_train([inst], ObjectiveWeights(), config)
        assert len(result.objective_history) == 20
        assert result.final_objective > result.initial_objective

    def test_bid_revenue_proxy_bounds_the_charged_revenue(self, params):
        inst = random_instance(14)
        outcome = DnaLiteMechanism(params).run(inst)
        hard = outcome.realized_allocation()
        weights = ObjectiveWeights(revenue=1.0, ctr=0.0, cvr=0.0)
        proxy = expected_objective(Tensor(hard[None]), AuctionBatch.from_instances([inst]), weights).data[0]
        clicks = (hard * inst.click_rates()).sum(axis=1)
        assert proxy == pytest.approx(float(clicks @ inst.bids()))
        assert proxy >= float(clicks @ outcome.payments)

    def test_training_needs_data(self):
        with pytest.raises(ValueError):
            dnalite_train([], ObjectiveWeights())

    def test_run_many_matches_run(self, params):
        instances = random_instances(6, count=5)
        mech = DnaLiteMechanism(params)
        for inst, batched in zip(instances, mech.run_many(instances)):
            single = mech.run(inst)
            assert batched.assignment == single.assignment
            assert np.allclose(batched.payments, single.payments, atol=1e-8)
            assert dnalite_run(inst, params).assignment == single.assignment

    def test_checkpoint_round_trip(self, params, tmp_path):
        loaded = load_params(save_params(params, tmp_path / "dna.json"))
        assert loaded.d_x == 3
        assert loaded.config == params.config
        for name, array in params.tensors.arrays().items():
            assert np.array_equal(loaded.tensors[name].data, array)


class TestOracles:
    def test_second_price(self):
        inst = make_instance([2.0, 1.0])
        outcome = SecondPriceOracle().run(inst)
        assert outcome.assignment == [0]
        assert outcome.payments.tolist() == [1.0, 0.0]

    def test_first_price(self):
        outcome = FirstPriceMechanism().run(make_instance([2.0, 1.0]))
        assert outcome.payments.tolist() == [2.0, 0.0]

    def test_only_the_first_slot_is_filled(self):
        inst = make_instance([2.0, 5.0, 1.0], n_slots=2)
        outcome = SecondPriceOracle().run(inst)
        assert outcome.assignment == [1]
        assert outcome.payments[1] == 2.0
        check_outcome(inst, outcome)


class TestRegistry:
    def test_every_name_resolves(self):
        config = ExperimentConfig()
        dna = DnaLiteParams.initialize(config.synth.d_x, config.dnalite)
        from edgenet import EdgeNetParams
        net = EdgeNetParams.initialize(config.edgenet)
        for name in MECHANISM_NAMES:
            mech = build_mechanism(name, config, edgenet_params=net, dnalite_params=dna)
            assert mech.name == name

    def test_trained_mechanisms_need_parameters(self):
        with pytest.raises(ValueError):
            build_mechanism("edgenet", ExperimentConfig())
        with pytest.raises(ValueError):
            build_mechanism("dnalite", ExperimentConfig())
        with pytest.raises(ValueError):
            build_mechanism("vcg", ExperimentConfig())

    def test_gsp_tuning_uses_instances(self, capsys):
        config = ExperimentConfig(gsp={"tune": True, "tune_grid": [0.0, 1.0]})
        instances = random_instances(3, count=10, d_x=8, d_y=8)
        mech = build_mechanism("gsp", config, tuning_instances=instances)
        assert mech.squashing == tune_squashing(instances, [0.0, 1.0])
        assert capsys.readouterr().out == f"ℹ GSP squashing tuned on 10 instances: sigma = {mech.squashing}\n"
        assert build_mechanism("gsp", config).squashing == config.gsp.squashing
