"""
Platform metrics and mechanism comparison tables.

Metrics follow the usual sponsored-search definitions over a log of L
auctions with K slots each (impressions = K * L):

    CTR = sum clicks / impressions
    CVR = sum orders / impressions
    RPM = sum (clicks x price per click) / impressions x 1000

By default clicks and orders are expectations (pCTR_i * gamma_j and
pCTR_i * pCVR_i * gamma_j per displayed slot); sampled mode draws them as
Bernoulli outcomes from a seeded generator instead.

Comparison tables normalize every mechanism by a reference mechanism seed by
seed and report mean +/- population standard deviation over seeds.
"""

import csv
import io
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from auction import Mechanism
import console
from models import AuctionInstance, AuctionLog, MetricRow, MetricStat, MetricTable, PerturbationScheme, RegretReport
from regret import empirical_regret
import storage


METRICS = ("ctr", "rpm", "cvr")
DEFAULT_CHUNK = 512

MechanismSource = Union[Mechanism, Callable[[int], Mechanism]]


class NormalizationError(ValueError):
    """Raised when the reference mechanism has a zero metric to normalize by."""


@dataclass(frozen=True)
class RawMetrics:
    ctr: float
    rpm: float
    cvr: float
    clicks: float
    orders: float
    revenue: float
    impressions: int

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _instances(log: Union[AuctionLog, Sequence[AuctionInstance]]) -> List[AuctionInstance]:
    return list(log.instances) if isinstance(log, AuctionLog) else list(log)


# ============================================================================
# Simulation
# ============================================================================

def simulate_metrics(
    mech: Mechanism,
    log: Union[AuctionLog, Sequence[AuctionInstance]],
    seed: int = 0,
    sampled: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
) -> RawMetrics:
    """
    Run ``mech`` over every instance of ``log`` and aggregate CTR, RPM and CVR.

    Args:
        mech: Mechanism to evaluate
        log: Auction log or list of instances
        seed: Seed of the click/order generator (sampled mode only)
        sampled: Draw Bernoulli clicks and orders instead of expectations
        chunk_size: Instances handed to run_many() at a time

    Returns:
        RawMetrics with totals and the three ratios

    Raises:
        ValueError: If the log holds no instances
    """
    instances = _instances(log)
    if not instances:
        raise ValueError("Cannot simulate metrics on an empty log")

    rng = np.random.default_rng(seed)
    clicks = orders = revenue = 0.0
    impressions = 0

    for start in range(0, len(instances), chunk_size):
        chunk = instances[start:start + chunk_size]
        for inst, outcome in zip(chunk, mech.run_many(chunk)):
            shown = outcome.realized_allocation()
            click_rates = shown * inst.click_rates()
            if sampled:
                click_draws = rng.random(click_rates.shape) < click_rates
                order_draws = click_draws & (rng.random(click_rates.shape) < inst.pcvrs()[:, None])
                ad_clicks = click_draws.sum(axis=1).astype(np.float64)
                ad_orders = order_draws.sum(axis=1).astype(np.float64)
            else:
                ad_clicks = click_rates.sum(axis=1)
                ad_orders = ad_clicks * inst.pcvrs()
            clicks += float(ad_clicks.sum())
            orders += float(ad_orders.sum())
            revenue += float(ad_clicks @ outcome.payments)
            impressions += inst.slot_count

    return RawMetrics(
        ctr=clicks / impressions,
        rpm=revenue / impressions * 1000.0,
        cvr=orders / impressions,
        clicks=clicks,
        orders=orders,
        revenue=revenue,
        impressions=impressions,
    )


# ============================================================================
# Comparison
# ============================================================================

def _resolve(source: MechanismSource, seed: int) -> Mechanism:
    return source if isinstance(source, Mechanism) else source(seed)


def compare(
    mechanisms: Mapping[str, MechanismSource],
    log: Union[AuctionLog, Sequence[AuctionInstance]],
    seeds: Sequence[int],
    reference: str,
    sampled: bool = False,
    audit_instances: Optional[Sequence[AuctionInstance]] = None,
    scheme: Optional[PerturbationScheme] = None,
) -> MetricTable:
    """
    Evaluate every mechanism on ``log`` for each seed and normalize by ``reference``.

    A mechanism may be given as an instance (shared by all seeds) or as a
    factory called with the seed, e.g. to load the network trained with it.
    When ``audit_instances`` is given, IC-R is audited on them and averaged
    over the distinct mechanism objects seen across seeds.

    Raises:
        ValueError: If no seed is given or ``reference`` is not compared
        NormalizationError: If a reference metric is zero for some seed
    """
    if not seeds:
        raise ValueError("compare() needs at least one seed")
    if reference not in mechanisms:
        raise ValueError(f"Reference mechanism {reference!r} is not among {sorted(mechanisms)}")

    raw: Dict[str, List[RawMetrics]] = {name: [] for name in mechanisms}
    ic_r: Dict[str, List[float]] = {name: [] for name in mechanisms}
    audited: Dict[str, List[Mechanism]] = {name: [] for name in mechanisms}

    for seed in seeds:
        for name, source in mechanisms.items():
            mech = _resolve(source, seed)
            raw[name].append(simulate_metrics(mech, log, seed=seed, sampled=sampled))
            if audit_instances and not any(m is mech for m in audited[name]):
                report = empirical_regret(mech, audit_instances, scheme, name=name)
                audited[name].append(mech)
                ic_r[name].append(report.ic_r)
                console.print_detail(f"{name} (seed {seed}): IC-R {report.ic_r:.2f}%")

    for k, seed in enumerate(seeds):
        for metric in METRICS:
            if getattr(raw[reference][k], metric) == 0.0:
                raise NormalizationError(
                    f"Reference {reference!r} has zero {metric.upper()} for seed {seed}; cannot normalize"
                )

    rows = []
    for name in mechanisms:
        stats = {}
        for metric in METRICS:
            ratios = np.array([
                getattr(mine, metric) / getattr(ref, metric) for mine, ref in zip(raw[name], raw[reference])
            ])
            stats[metric] = MetricStat(mean=float(ratios.mean()), std=float(ratios.std()))
        rows.append(MetricRow(
            mechanism=name,
            ic_r=float(np.mean(ic_r[name])) if ic_r[name] else None,
            raw={metric: float(np.mean([getattr(m, metric) for m in raw[name]])) for metric in METRICS},
            **stats,
        ))
    return MetricTable(reference=reference, seeds=list(seeds), rows=rows)


# ============================================================================
# Rendering
# ============================================================================

def format_stat(stat: MetricStat, is_reference: bool = False) -> str:
    """``mean ± std``, plus the relative change to the reference for other rows."""
    text = f"{stat.mean:.4f} ± {stat.std:.4f}"
    if not is_reference:
        text += f" ({(stat.mean - 1.0) * 100:+.2f}%)"
    return text


def render_table(table: MetricTable) -> str:
    """Aligned plain-text table: one row per mechanism, columns CTR, RPM, CVR, IC-R."""
    header = ["Mechanism", "CTR", "RPM", "CVR", "IC-R"]
    lines = [header]
    for row in table.rows:
        is_ref = row.mechanism == table.reference
        lines.append([
            row.mechanism,
            *(format_stat(getattr(row, m), is_ref) for m in METRICS),
            "-" if row.ic_r is None else f"{row.ic_r:.2f}%",
        ])
    widths = [max(len(line[c]) for line in lines) for c in range(len(header))]
    rendered = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in lines]
    rendered.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(rendered)


def table_csv(table: MetricTable) -> str:
    fieldnames = ["mechanism"]
    for metric in METRICS:
        fieldnames += [f"{metric}_mean", f"{metric}_std", f"{metric}_raw"]
    fieldnames.append("ic_r")

    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in table.rows:
        record: Dict[str, Any] = {"mechanism": row.mechanism, "ic_r": "" if row.ic_r is None else repr(row.ic_r)}
        for metric in METRICS:
            stat = getattr(row, metric)
            record[f"{metric}_mean"] = repr(stat.mean)
            record[f"{metric}_std"] = repr(stat.std)
            record[f"{metric}_raw"] = repr(row.raw.get(metric, float("nan")))
        writer.writerow(record)
    return buf.getvalue()


def _config_line(config: Optional[Dict[str, Any]]) -> str:
    return "# config: " + storage.dumps(config or {}).decode("utf-8")


def write_table(
    table: MetricTable,
    reports_dir: Union[str, Path],
    stem: str = "comparison",
    config: Optional[Dict[str, Any]] = None,
    bar_charts: bool = False,
) -> List[Path]:
    """
    Write ``<stem>.txt``, ``<stem>.csv`` and ``<stem>.json`` (and SVG charts if asked).

    The text and JSON reports echo ``config``.
    """
    reports_dir = Path(reports_dir)
    text = "\n".join([
        _config_line(config),
        f"# reference: {table.reference}  seeds: {table.seeds}",
        "",
        render_table(table),
    ]) + "\n"
    paths = [
        storage.write_text_atomic(reports_dir / f"{stem}.txt", text),
        storage.write_text_atomic(reports_dir / f"{stem}.csv", table_csv(table)),
        storage.write_json(reports_dir / f"{stem}.json", {
            "config": config or {},
            "table": table.model_dump(mode="json"),
        }),
    ]
    if bar_charts:
        paths.extend(write_bar_charts(table, reports_dir, stem))
    return paths


def write_bar_charts(table: MetricTable, reports_dir: Union[str, Path], stem: str = "comparison") -> List[Path]:
    """One SVG bar chart per metric, bars at the normalized mean with std error bars."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams.update({"svg.hashsalt": "adauctionlab", "axes.unicode_minus": False})
    import matplotlib.pyplot as plt

    names = [row.mechanism for row in table.rows]
    paths = []
    for metric in METRICS:
        stats = [getattr(row, metric) for row in table.rows]
        fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
        ax.bar(names, [s.mean for s in stats], yerr=[s.std for s in stats], capsize=4, color="#4c72b0")
        ax.axhline(1.0, color="grey", linewidth=0.8, linestyle="--")
        ax.set_ylabel(f"{metric.upper()} / {table.reference}")
        ax.set_title(metric.upper())
        ax.grid(True, axis="y", alpha=0.3)

        buf = io.BytesIO()
        # no Date metadata, so identical tables give identical files
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(storage.write_bytes_atomic(Path(reports_dir) / f"{stem}_{metric}.svg", buf.getvalue()))
    return paths


def render_regret_report(report: RegretReport) -> str:
    lines = [
        f"Mechanism:     {report.mechanism}",
        f"Instances:     {report.instances}",
        f"Value model:   {report.scheme.value_model}",
        f"Grid:          delta={report.scheme.relative_step} m={report.scheme.half_width}",
        f"IC-R:          {report.ic_r:.2f}%",
        f"Mean regret:   {report.mean_regret:.6g}",
        "",
        "Position  Regret        Utility",
    ]
    for i, (r, u) in enumerate(zip(report.per_position_regret, report.per_position_utility)):
        lines.append(f"{i:<8}  {r:<12.6g}  {u:.6g}")
    return "\n".join(lines)


def write_regret_report(
    report: RegretReport,
    reports_dir: Union[str, Path],
    config: Optional[Dict[str, Any]] = None,
) -> List[Path]:
    """Write ``audit_<mechanism>.txt`` and ``.json``, both echoing ``config``."""
    reports_dir = Path(reports_dir)
    stem = f"audit_{report.mechanism}"
    return [
        storage.write_text_atomic(
            reports_dir / f"{stem}.txt", _config_line(config) + "\n\n" + render_regret_report(report) + "\n"
        ),
        storage.write_json(reports_dir / f"{stem}.json", {
            "config": config or {},
            "report": report.model_dump(mode="json"),
        }),
    ]
