#!/usr/bin/env python3
"""
AdAuctionLab - experiment commands.

Each command runs a small numbered pipeline over the configured artifacts:
- gen:     synthesize the train and test auction logs
- train:   fit EdgeNet (augmented Lagrangian) and/or DNA-lite
- eval:    metric table over the configured mechanisms
- audit:   empirical regret / IC-R report for one mechanism
- compare: train per seed, then a mean +/- std table over seeds

Everything a command does is determined by its ExperimentConfig, so a rerun
with the same config reproduces the same files.
"""

import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

# Add scripts directory to path
sys.path.insert(0, str(Path(__file__).parent))

from models import AuctionInstance, AuctionLog, ExperimentConfig, MetricTable, RegretReport
import console
import datagen
import edgenet
import evalkit
from mechanisms import build_mechanism
from mechanisms import dnalite
from regret import empirical_regret
import storage
import trainer


PROJECT_ROOT = Path(__file__).parent.parent
DEFAULT_CONFIG = PROJECT_ROOT / "config" / "experiment.config.json"
CONFIG_ENV = "ADLAB_CONFIG"


class ConfigError(ValueError):
    """Raised for unreadable config files and malformed overrides."""


# ============================================================================
# Configuration
# ============================================================================

def config_path(path: Optional[str] = None) -> Optional[Path]:
    """Explicit path, else $ADLAB_CONFIG, else the repo default (None if that is absent)."""
    if path:
        return Path(path)
    if os.getenv(CONFIG_ENV):
        return Path(os.environ[CONFIG_ENV])
    return DEFAULT_CONFIG if DEFAULT_CONFIG.exists() else None


def apply_override(data: Dict[str, Any], assignment: str) -> None:
    """
    Apply one ``dotted.key=value`` override in place.

    The value is decoded as JSON when possible (numbers, booleans, lists)
    and taken as a plain string otherwise.
    """
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override must look like dotted.key=value, got {assignment!r}")
    try:
        value = storage.loads(raw)
    except ValueError:
        value = raw

    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot set {key}: {part} is not a section")
        node = child
    node[parts[-1]] = value


def load_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    steps: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> ExperimentConfig:
    """
    Load the experiment configuration; flags win over ``--set`` overrides,
    which win over the file.

    Raises:
        ConfigError: If an explicitly named file is missing or unreadable
        pydantic.ValidationError: If the merged values are invalid
    """
    source = config_path(path)
    data: Dict[str, Any] = {}
    if source is not None:
        if not source.exists():
            raise ConfigError(f"Configuration not found: {source}")
        try:
            data = storage.read_json(source)
        except ValueError as exc:
            raise ConfigError(f"Configuration {source} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Configuration {source} must hold a JSON object")

    for assignment in overrides:
        apply_override(data, assignment)
    if seed is not None:
        for key in ("synth.seed", "train.seed", "dnalite.seed"):
            apply_override(data, f"{key}={seed}")
    if steps is not None:
        apply_override(data, f"train.steps={steps}")
    if out_dir is not None:
        out = Path(out_dir)
        for key, name in (
            ("train_log", "train.log.jsonl"),
            ("test_log", "test.log.jsonl"),
            ("checkpoint_dir", "checkpoints"),
            ("reports_dir", "reports"),
            ("training_log", "training.log.tsv"),
        ):
            data.setdefault("paths", {})[key] = str(out / name)

    return ExperimentConfig(**data)


def config_echo(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


# ============================================================================
# Artifact paths
# ============================================================================

def edgenet_checkpoint(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.paths.checkpoint_dir) / f"edgenet-seed{seed}.json"


def dnalite_checkpoint(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.paths.checkpoint_dir) / f"dnalite-seed{seed}.json"


def training_log(config: ExperimentConfig, seed: int) -> Path:
    base = Path(config.paths.training_log)
    return base.with_name(f"{base.stem}.seed{seed}{base.suffix}")


def _read_log(path: str, what: str) -> AuctionLog:
    try:
        log = datagen.read_log(path)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"{exc} (run `gen` to create the {what} log)") from exc
    if not len(log):
        raise ValueError(f"The {what} log {path} holds no instances")
    return log


def _load_edgenet(config: ExperimentConfig, seed: int) -> edgenet.EdgeNetParams:
    path = edgenet_checkpoint(config, seed)
    if not path.exists():
        raise FileNotFoundError(f"EdgeNet checkpoint not found: {path} (run `train` first)")
    params, _ = edgenet.load_params(path)
    return params


def _load_dnalite(config: ExperimentConfig, seed: int) -> dnalite.DnaLiteParams:
    path = dnalite_checkpoint(config, seed)
    if not path.exists():
        raise FileNotFoundError(f"DNA-lite checkpoint not found: {path} (run `train --model dnalite` first)")
    return dnalite.load_params(path)


# ============================================================================
# Commands
# ============================================================================

def cmd_gen(config: ExperimentConfig) -> Dict[str, int]:
    """Generate and write the train and test auction logs; returns instance counts."""
    console.print_header("AdAuctionLab - Generate Auction Logs")
    synth = config.synth
    console.print_info(f"N={synth.n_ads} ads, K={synth.n_slots} slots, seed {synth.seed}")
    counts = {}
    for step, (split, path) in enumerate((("train", config.paths.train_log), ("test", config.paths.test_log)), 1):
        console.print_step(step, 2, f"Generating {split} split")
        started = time.time()
        log = datagen.generate(synth, split=split)
        datagen.write_log(log, path)
        counts[split] = len(log)
        console.print_success(f"{len(log)} instances -> {path} ({console.format_duration(time.time() - started)})")
    return counts


def _train_edgenet(
    config: ExperimentConfig,
    seed: int,
    instances: Sequence[AuctionInstance],
    resume: bool,
) -> trainer.TrainResult:
    train_config = config.train.model_copy(update={"seed": seed})
    started = time.time()
    result = trainer.train(
        instances,
        config.objective,
        train_config,
        config.edgenet,
        checkpoint_path=edgenet_checkpoint(config, seed),
        log_path=training_log(config, seed),
        resume=resume,
    )
    console.print_success(f"EdgeNet seed {seed}: {result.steps_run} steps in {console.format_duration(time.time() - started)}")
    console.print_change("Loss", result.initial_loss, result.final_loss)
    console.print_change("IC-R", result.initial_ic_r, result.final_ic_r, fmt=".2f", unit="%")
    console.print_saved([edgenet_checkpoint(config, seed)])
    return result


def _train_dnalite(
    config: ExperimentConfig,
    seed: int,
    instances: Sequence[AuctionInstance],
    resume: bool,
) -> dnalite.DnaLiteParams:
    path = dnalite_checkpoint(config, seed)
    if resume and path.exists():
        console.print_info(f"Reusing DNA-lite checkpoint {path}")
        return dnalite.load_params(path)
    started = time.time()
    result = dnalite.dnalite_train(instances, config.objective, config.dnalite.model_copy(update={"seed": seed}))
    dnalite.save_params(result.params, path)
    console.print_success(
        f"DNA-lite seed {seed}: objective {result.initial_objective:.5f} -> {result.final_objective:.5f} "
        f"({console.format_duration(time.time() - started)})"
    )
    console.print_saved([path])
    return result.params


def cmd_train(config: ExperimentConfig, model: str = "edgenet", resume: bool = False) -> List[Path]:
    """
    Train EdgeNet and/or DNA-lite with the configured seed; returns checkpoint paths.

    Args:
        config: Experiment configuration
        model: "edgenet", "dnalite" or "all"
        resume: Continue EdgeNet from its checkpoint (reuse DNA-lite's)
    """
    if model not in ("edgenet", "dnalite", "all"):
        raise ValueError(f"Unknown model {model!r} (expected edgenet, dnalite or all)")
    console.print_header("AdAuctionLab - Train")

    console.print_step(1, 2, "Loading training log")
    log = _read_log(config.paths.train_log, "train")
    console.print_success(f"{len(log)} instances (N={log.n_ads}, K={log.n_slots})")

    console.print_step(2, 2, f"Training {model}")
    paths = []
    if model in ("edgenet", "all"):
        _train_edgenet(config, config.train.seed, log.instances, resume)
        paths.append(edgenet_checkpoint(config, config.train.seed))
    if model in ("dnalite", "all"):
        _train_dnalite(config, config.dnalite.seed, log.instances, resume)
        paths.append(dnalite_checkpoint(config, config.dnalite.seed))
    return paths


def _baselines(config: ExperimentConfig, names: Iterable[str], tuning: Sequence[AuctionInstance]) -> Dict[str, Any]:
    return {
        name: build_mechanism(name, config, tuning_instances=tuning)
        for name in names if name not in ("edgenet", "dnalite")
    }


def cmd_eval(config: ExperimentConfig) -> Tuple[MetricTable, List[Path]]:
    """Evaluate the configured mechanisms on the test log and write the table."""
    console.print_header("AdAuctionLab - Evaluate")
    names = list(config.eval.mechanisms)

    console.print_step(1, 3, "Loading logs and mechanisms")
    test_log = _read_log(config.paths.test_log, "test")
    train_log = _read_log(config.paths.train_log, "train")
    mechanisms = _baselines(config, names, train_log.instances)
    if "dnalite" in names:
        mechanisms["dnalite"] = build_mechanism(
            "dnalite", config, dnalite_params=_load_dnalite(config, config.dnalite.seed)
        )
    if "edgenet" in names:
        mechanisms["edgenet"] = build_mechanism(
            "edgenet", config, edgenet_params=_load_edgenet(config, config.train.seed)
        )
    mechanisms = {name: mechanisms[name] for name in names}
    console.print_success(f"{len(test_log)} test instances, mechanisms: {', '.join(names)}")

    console.print_step(2, 3, f"Simulating metrics over seeds {config.eval.seeds}")
    started = time.time()
    table = evalkit.compare(
        mechanisms,
        test_log,
        config.eval.seeds,
        config.eval.reference,
        sampled=config.eval.sampled_clicks,
        audit_instances=test_log.instances[:config.eval.audit_instances],
        scheme=config.regret,
    )
    console.print_success(f"Done in {console.format_duration(time.time() - started)}")

    console.print_step(3, 3, "Writing reports")
    paths = evalkit.write_table(
        table, config.paths.reports_dir, "eval", config_echo(config), bar_charts=config.eval.bar_charts
    )
    print()
    print(evalkit.render_table(table))
    print()
    console.print_saved(paths)
    return table, paths


def cmd_audit(config: ExperimentConfig, mechanism: str = "edgenet") -> Tuple[RegretReport, List[Path]]:
    """Audit one mechanism's empirical regret on the head of the test log."""
    console.print_header(f"AdAuctionLab - Audit {mechanism}")

    console.print_step(1, 3, "Loading test log")
    test_log = _read_log(config.paths.test_log, "test")
    instances = test_log.instances[:config.eval.audit_instances]
    console.print_success(f"Auditing {len(instances)} instances")

    console.print_step(2, 3, "Searching misreports")
    started = time.time()
    kwargs: Dict[str, Any] = {}
    if mechanism == "edgenet":
        kwargs["edgenet_params"] = _load_edgenet(config, config.train.seed)
    elif mechanism == "dnalite":
        kwargs["dnalite_params"] = _load_dnalite(config, config.dnalite.seed)
    elif mechanism == "gsp":
        kwargs["tuning_instances"] = _read_log(config.paths.train_log, "train").instances
    mech = build_mechanism(mechanism, config, **kwargs)
    report = empirical_regret(mech, instances, config.regret, name=mechanism)
    console.print_success(f"IC-R {report.ic_r:.2f}% ({console.format_duration(time.time() - started)})")

    console.print_step(3, 3, "Writing reports")
    paths = evalkit.write_regret_report(report, config.paths.reports_dir, config_echo(config))
    console.print_saved(paths)
    return report, paths


def cmd_compare(config: ExperimentConfig, resume: bool = False) -> Tuple[MetricTable, List[Path]]:
    """Train EdgeNet and DNA-lite for every seed in ``config.seeds``, then tabulate."""
    console.print_header("AdAuctionLab - Multi-seed Comparison")
    names = list(config.eval.mechanisms)
    seeds = list(config.seeds)
    total = len(seeds) + 2

    console.print_step(1, total, "Loading logs")
    train_log = _read_log(config.paths.train_log, "train")
    test_log = _read_log(config.paths.test_log, "test")
    console.print_success(f"{len(train_log)} train / {len(test_log)} test instances")

    edgenet_params: Dict[int, edgenet.EdgeNetParams] = {}
    dnalite_params: Dict[int, dnalite.DnaLiteParams] = {}
    for k, seed in enumerate(seeds, 2):
        console.print_step(k, total, f"Training seed {seed}")
        if "edgenet" in names:
            edgenet_params[seed] = _train_edgenet(config, seed, train_log.instances, resume).params
        if "dnalite" in names:
            dnalite_params[seed] = _train_dnalite(config, seed, train_log.instances, resume)

    console.print_step(total, total, "Evaluating")
    sources: Dict[str, Any] = _baselines(config, names, train_log.instances)
    if "dnalite" in names:
        sources["dnalite"] = lambda s: build_mechanism("dnalite", config, dnalite_params=dnalite_params[s])
    if "edgenet" in names:
        sources["edgenet"] = lambda s: build_mechanism("edgenet", config, edgenet_params=edgenet_params[s])
    table = evalkit.compare(
        {name: sources[name] for name in names},
        test_log,
        seeds,
        config.eval.reference,
        sampled=config.eval.sampled_clicks,
        audit_instances=test_log.instances[:config.eval.audit_instances],
        scheme=config.regret,
    )
    paths = evalkit.write_table(
        table, config.paths.reports_dir, "compare", config_echo(config), bar_charts=config.eval.bar_charts
    )
    print()
    print(evalkit.render_table(table))
    print()
    console.print_saved(paths)
    return table, paths
