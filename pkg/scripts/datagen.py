"""
Synthetic auction logs and the auction-log file format.

Generation stands in for logged GSP traffic: bids are log-normal and drawn
independently per advertiser, pCTR / pCVR are Beta distributed, and ad
features carry a tunable amount of signal about pCTR and pCVR so the encoder
has something to learn.

File format (one JSON document per line, written with orjson):
    line 1:  header object {"format", "version", "n_ads", "n_slots", "d_x",
             "d_y", "slot_discounts", "count"}
    line 2+: one auction per line: [user_features, [[bid, pctr, pcvr, cpc,
             *features], ...N rows]]
"""

from pathlib import Path
from typing import List, Literal, Union

import numpy as np
import orjson
from pydantic import ValidationError

from models import (
    LOG_SCHEMA_VERSION,
    AdCandidate,
    AuctionInstance,
    AuctionLog,
    SynthConfig,
    UserContext,
)
import storage


LOG_FORMAT = "adauctionlab.auction-log"


class LogFormatError(ValueError):
    """Raised for a malformed auction-log file; the message names the line."""


class SchemaVersionError(ValueError):
    """Raised when a log file was written with another schema version."""


# ============================================================================
# Generation
# ============================================================================

def _standardize(values: np.ndarray) -> np.ndarray:
    if values.size == 0:
        return np.zeros_like(values)
    std = values.std()
    return (values - values.mean()) / std if std > 0 else np.zeros_like(values)


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-9, 1 - 1e-9)
    return np.log(p) - np.log1p(-p)


def generate(config: SynthConfig, split: Literal["train", "test"] = "train") -> AuctionLog:
    """
    Generate a synthetic auction log.

    The train split uses ``config.seed`` and ``config.instances``; the test
    split uses ``config.seed + 1`` and ``config.test_instances``.

    Args:
        config: Generator parameters
        split: Which split to produce

    Returns:
        AuctionLog, identical for identical (config, split)
    """
    count = config.instances if split == "train" else config.test_instances
    seed = config.seed if split == "train" else config.seed + 1
    rng = np.random.default_rng(seed)
    n, d_x, d_y = config.n_ads, config.d_x, config.d_y
    gammas = config.discounts()

    bids = rng.lognormal(config.bid_log_mean, config.bid_log_sigma, size=(count, n))
    pctr = rng.beta(config.pctr_alpha, config.pctr_beta, size=(count, n))
    pcvr = rng.beta(config.pcvr_alpha, config.pcvr_beta, size=(count, n))
    cpc = rng.uniform(config.cpc_low, config.cpc_high, size=(count, n))
    users = rng.standard_normal((count, d_y))

    # Two fixed unit directions in feature space carry the pCTR and pCVR signals
    directions = rng.standard_normal((2, d_x))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    signal = (
        _standardize(_logit(pctr))[..., None] * directions[0]
        + _standardize(_logit(pcvr))[..., None] * directions[1]
    ) / np.sqrt(2.0)
    noise = rng.standard_normal((count, n, d_x))
    rho = config.correlation
    features = rho * signal + np.sqrt(1.0 - rho * rho) * noise

    instances = [
        AuctionInstance(
            user=UserContext(features=users[k].tolist()),
            candidates=[
                AdCandidate(
                    bid=float(bids[k, i]),
                    pctr=float(pctr[k, i]),
                    pcvr=float(pcvr[k, i]),
                    cpc_value=float(cpc[k, i]),
                    features=features[k, i].tolist(),
                )
                for i in range(n)
            ],
            slot_count=config.n_slots,
            slot_discounts=gammas,
        )
        for k in range(count)
    ]
    return AuctionLog(
        n_ads=n, n_slots=config.n_slots, d_x=d_x, d_y=d_y,
        slot_discounts=gammas, instances=instances,
    )


# ============================================================================
# File I/O
# ============================================================================

def _header(log: AuctionLog) -> dict:
    return {
        "format": LOG_FORMAT,
        "version": log.schema_version,
        "n_ads": log.n_ads,
        "n_slots": log.n_slots,
        "d_x": log.d_x,
        "d_y": log.d_y,
        "slot_discounts": log.slot_discounts,
        "count": len(log.instances),
    }


def _encode_instance(inst: AuctionInstance) -> bytes:
    rows = [[ad.bid, ad.pctr, ad.pcvr, ad.cpc_value, *ad.features] for ad in inst.candidates]
    return orjson.dumps([inst.user.features, rows])


def write_log(log: AuctionLog, path: Union[str, Path]) -> Path:
    """Write ``log`` to ``path`` atomically (parent directories are created)."""
    lines = [storage.dumps(_header(log))]
    lines.extend(_encode_instance(inst) for inst in log.instances)
    return storage.write_lines(path, lines)


def _decode_instance(row, header: dict, where: str) -> AuctionInstance:
    if not (isinstance(row, list) and len(row) == 2 and isinstance(row[1], list)):
        raise LogFormatError(f"{where}: expected [user_features, candidate_rows]")
    user, ads = row
    width = 4 + header["d_x"]
    if len(ads) != header["n_ads"]:
        raise LogFormatError(f"{where}: expected {header['n_ads']} candidates, found {len(ads)}")
    if len(user) != header["d_y"]:
        raise LogFormatError(f"{where}: expected {header['d_y']} user features, found {len(user)}")
    candidates: List[AdCandidate] = []
    for a, ad in enumerate(ads):
        if not isinstance(ad, list) or len(ad) != width:
            raise LogFormatError(f"{where}: candidate {a} must have {width} values")
        candidates.append(AdCandidate(bid=ad[0], pctr=ad[1], pcvr=ad[2], cpc_value=ad[3], features=ad[4:]))
    return AuctionInstance(
        user=UserContext(features=user),
        candidates=candidates,
        slot_count=header["n_slots"],
        slot_discounts=header["slot_discounts"],
    )


def read_log(path: Union[str, Path]) -> AuctionLog:
    """
    Read an auction log written by write_log().

    Raises:
        FileNotFoundError: If the file does not exist
        SchemaVersionError: If the header's version differs from this build's
        LogFormatError: On any malformed or missing line (message names it)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Auction log not found: {path}")

    with open(path, "rb") as f:
        lines = f.read().splitlines()
    if not lines:
        raise LogFormatError(f"{path}:1: missing header line")

    try:
        header = orjson.loads(lines[0])
    except orjson.JSONDecodeError as exc:
        raise LogFormatError(f"{path}:1: unreadable header ({exc})") from exc
    if not isinstance(header, dict) or header.get("format") != LOG_FORMAT:
        raise LogFormatError(f"{path}:1: not an auction log header")
    if header.get("version") != LOG_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {header.get('version')} is not supported (expected {LOG_SCHEMA_VERSION})"
        )

    instances: List[AuctionInstance] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        where = f"{path}:{lineno}"
        try:
            row = orjson.loads(raw)
        except orjson.JSONDecodeError as exc:
            raise LogFormatError(f"{where}: malformed record ({exc})") from exc
        try:
            instances.append(_decode_instance(row, header, where))
        except (ValidationError, TypeError) as exc:
            raise LogFormatError(f"{where}: invalid record ({exc})") from exc

    if len(instances) != header.get("count"):
        raise LogFormatError(
            f"{path}:{len(lines) + 1}: expected {header.get('count')} records, found {len(instances)} (truncated file?)"
        )

    try:
        return AuctionLog(
            schema_version=header["version"],
            n_ads=header["n_ads"],
            n_slots=header["n_slots"],
            d_x=header["d_x"],
            d_y=header["d_y"],
            slot_discounts=header["slot_discounts"],
            instances=instances,
        )
    except ValidationError as exc:
        raise LogFormatError(f"{path}:1: header inconsistent with records ({exc})") from exc
