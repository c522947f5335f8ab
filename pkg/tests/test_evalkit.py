import csv
import io

import numpy as np
import pytest

import evalkit
import storage
from auction import Mechanism, MechanismOutcome, assignment_matrix
from evalkit import (
    NormalizationError,
    compare,
    format_stat,
    render_table,
    simulate_metrics,
    table_csv,
    write_bar_charts,
    write_regret_report,
    write_table,
)
from mechanisms.oracles import SecondPriceOracle
from models import MetricRow, MetricStat, MetricTable
from regret import empirical_regret
from factories import make_instance, random_instances


class ScaledPrices(Mechanism):
    """Second-price allocation with every payment multiplied by ``factor``."""

    name = "scaled"

    def __init__(self, factor):
        self.factor = factor

    def run(self, instance):
        outcome = SecondPriceOracle().run(instance)
        return MechanismOutcome(outcome.allocation, outcome.payments * self.factor, outcome.assignment)


class FreeSlate(Mechanism):
    name = "free"

    def run(self, instance):
        return MechanismOutcome(
            allocation=assignment_matrix([0], instance.n_ads, instance.slot_count),
            payments=np.zeros(instance.n_ads),
            assignment=[0],
        )


def stat(mean, std=0.0):
    return MetricStat(mean=mean, std=std)


TABLE = MetricTable(
    reference="a",
    seeds=[0, 1],
    rows=[
        MetricRow(mechanism="a", ctr=stat(1.0), rpm=stat(1.0), cvr=stat(1.0), raw={"ctr": 0.1, "rpm": 200.0, "cvr": 0.01}),
        MetricRow(mechanism="b", ctr=stat(1.0), rpm=stat(2.0, 0.1), cvr=stat(0.9), ic_r=1.25,
                  raw={"ctr": 0.1, "rpm": 400.0, "cvr": 0.009}),
    ],
)


class TestSimulation:
    LOG = [make_instance([3.0, 2.0], pctr=[0.1, 0.1])]

    def test_single_slot_expectations(self):
        metrics = simulate_metrics(SecondPriceOracle(), self.LOG)
        assert metrics.impressions == 1
        assert metrics.ctr == pytest.approx(0.1)
        assert metrics.rpm == pytest.approx(200.0)
        assert metrics.cvr == pytest.approx(0.01)

    def test_doubling_payments_doubles_rpm_only(self):
        base = simulate_metrics(SecondPriceOracle(), self.LOG)
        doubled = simulate_metrics(ScaledPrices(2.0), self.LOG)
        assert doubled.rpm == pytest.approx(2 * base.rpm)
        assert doubled.ctr == base.ctr

    def test_sampled_clicks_are_reproducible_counts(self):
        instances = random_instances(4, count=40)
        first = simulate_metrics(SecondPriceOracle(), instances, seed=3, sampled=True)
        again = simulate_metrics(SecondPriceOracle(), instances, seed=3, sampled=True)
        assert first == again
        assert first.clicks == int(first.clicks)
        assert first.orders <= first.clicks <= first.impressions

    def test_chunking_does_not_change_totals(self):
        instances = random_instances(5, count=9)
        whole = simulate_metrics(SecondPriceOracle(), instances)
        chunked = simulate_metrics(SecondPriceOracle(), instances, chunk_size=2)
        assert chunked.rpm == pytest.approx(whole.rpm)
        assert chunked.impressions == whole.impressions == 9 * 3

    def test_empty_log(self):
        with pytest.raises(ValueError):
            simulate_metrics(SecondPriceOracle(), [])


class TestCompare:
    LOG = random_instances(6, count=12)

    def test_reference_row_is_one(self):
        table = compare({"sp": SecondPriceOracle(), "x2": ScaledPrices(2.0)}, self.LOG, [0, 1], "sp")
        ref = table.row("sp")
        for metric in ("ctr", "rpm", "cvr"):
            assert getattr(ref, metric).mean == 1.0
            assert getattr(ref, metric).std == 0.0
        assert table.row("x2").rpm.mean == pytest.approx(2.0)
        assert table.row("x2").ctr.mean == pytest.approx(1.0)
        assert ref.ic_r is None

    def test_row_values_do_not_depend_on_order(self):
        forward = compare({"sp": SecondPriceOracle(), "x2": ScaledPrices(2.0)}, self.LOG, [0], "sp")
        backward = compare({"x2": ScaledPrices(2.0), "sp": SecondPriceOracle()}, self.LOG, [0], "sp")
        assert [row.mechanism for row in backward.rows] == ["x2", "sp"]
        for name in ("sp", "x2"):
            assert forward.row(name) == backward.row(name)

    def test_factories_are_called_per_seed(self):
        sources = {"sp": SecondPriceOracle(), "grow": lambda seed: ScaledPrices(1.0 + seed)}
        rpm = compare(sources, self.LOG, [0, 1], "sp").row("grow").rpm
        assert rpm.mean == pytest.approx(1.5)
        assert rpm.std == pytest.approx(0.5)

    def test_audits_each_distinct_mechanism_once(self, monkeypatch):
        calls = []
        original = evalkit.empirical_regret

        def counting(mech, instances, scheme=None, name=None):
            calls.append(name)
            return original(mech, instances, scheme, name=name)

        monkeypatch.setattr(evalkit, "empirical_regret", counting)
        sources = {"sp": SecondPriceOracle(), "grow": lambda seed: ScaledPrices(1.0 + seed)}
        table = compare(sources, self.LOG, [0, 1], "sp", audit_instances=self.LOG[:3])
        assert calls.count("sp") == 1
        assert calls.count("grow") == 2
        assert table.row("sp").ic_r == 0.0

    def test_zero_reference_metric(self):
        with pytest.raises(NormalizationError):
            compare({"free": FreeSlate(), "sp": SecondPriceOracle()}, self.LOG, [0], "free")

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            compare({"sp": SecondPriceOracle()}, self.LOG, [], "sp")
        with pytest.raises(ValueError):
            compare({"sp": SecondPriceOracle()}, self.LOG, [0], "gsp")


class TestRendering:
    def test_format_stat(self):
        assert format_stat(stat(1.0), is_reference=True) == "1.0000 ± 0.0000"
        assert format_stat(stat(2.0, 0.1)) == "2.0000 ± 0.1000 (+100.00%)"
        assert format_stat(stat(0.9)).endswith("(-10.00%)")

    def test_table_layout(self):
        lines = render_table(TABLE).splitlines()
        assert lines[0].split() == ["Mechanism", "CTR", "RPM", "CVR", "IC-R"]
        assert set(lines[1]) <= {"-", " "}
        assert lines[2].startswith("a ")
        assert "%" not in lines[2]
        assert lines[2].endswith("-")
        assert "2.0000 ± 0.1000 (+100.00%)" in lines[3]
        assert lines[3].endswith("1.25%")

    def test_csv(self):
        rows = list(csv.DictReader(io.StringIO(table_csv(TABLE))))
        assert [row["mechanism"] for row in rows] == ["a", "b"]
        assert float(rows[1]["rpm_mean"]) == 2.0
        assert float(rows[1]["rpm_raw"]) == 400.0
        assert rows[0]["ic_r"] == ""
        assert float(rows[1]["ic_r"]) == 1.25

    def test_write_table(self, tmp_path):
        config = {"eval": {"seeds": [0, 1]}}
        paths = write_table(TABLE, tmp_path / "reports", "eval", config)
        assert [p.name for p in paths] == ["eval.txt", "eval.csv", "eval.json"]
        text = paths[0].read_text().splitlines()
        assert text[0].startswith("# config: ")
        assert storage.loads(text[0][len("# config: "):]) == config
        assert text[1].startswith("# reference: a")
        assert paths[1].read_text().startswith("mechanism,ctr_mean,ctr_std,ctr_raw")
        data = storage.read_json(paths[2])
        assert data["config"] == config
        assert MetricTable(**data["table"]) == TABLE

    def test_bar_charts(self, tmp_path):
        pytest.importorskip("matplotlib")
        paths = write_bar_charts(TABLE, tmp_path, "eval")
        assert [p.name for p in paths] == ["eval_ctr.svg", "eval_rpm.svg", "eval_cvr.svg"]
        assert b"<svg" in paths[1].read_bytes()
        again = write_bar_charts(TABLE, tmp_path / "again", "eval")
        assert again[1].read_bytes() == paths[1].read_bytes()

    def test_regret_report_files(self, tmp_path):
        report = empirical_regret(SecondPriceOracle(), random_instances(1, count=3))
        txt, js = write_regret_report(report, tmp_path, {"seed": 1})
        assert (txt.name, js.name) == ("audit_second-price.txt", "audit_second-price.json")
        text = txt.read_text()
        assert text.startswith("# config: ")
        assert "IC-R:          0.00%" in text
        assert storage.read_json(js)["report"]["instances"] == 3
