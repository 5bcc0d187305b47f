"""Experiment configuration: an INI-style key-value file.

    [run]
    seed = 1
    duration_ms = 1000
    snr_db = 10
    ber = 1e-6

    [cell 1]
    bandwidth_mhz = 20

    [ue 0x0100]
    traffic = constant
    rate_mbps = 20
    cells = 1

Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import configparser
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .cell import CellConfig
from .sim import UeProfile

SEED_ENV = "NGKIT_SEED"

RUN_KEYS = {"seed", "duration_ms", "snr_db", "ber", "target", "window", "max_messages", "record"}
CELL_KEYS = {"bandwidth_mhz", "antennas", "role", "usable_cce"}
UE_KEYS = {"traffic", "rate_mbps", "on_ms", "off_ms", "flow_bytes", "flow_gap_ms", "mcs_low",
           "mcs_high", "mcs_start", "mcs_move_prob", "streams", "format", "cells", "levels"}


class ConfigError(ValueError):
    """Missing or invalid configuration."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    duration_ms: Optional[int] = None
    snr_db: float = 10.0
    ber: float = 0.0
    target: Optional[int] = None
    window: int = 100
    max_messages: int = 4
    record: tuple = ()
    cells: list = field(default_factory=list)
    ues: list = field(default_factory=list)
    digest: str = ""

    def cell(self, cell_id: int) -> CellConfig:
        for c in self.cells:
            if c.cell_id == cell_id:
                return c
        raise ConfigError(f"cell {cell_id} is not configured")

    def require(self, *names: str):
        for n in names:
            if getattr(self, n) in (None, [], ()):
                raise ConfigError(f"missing required setting {n!r}")


def _check_keys(section: str, keys, allowed):
    extra = set(keys) - allowed
    if extra:
        raise ConfigError(f"[{section}]: unknown keys {sorted(extra)}")


def _num(section, key, text, kind=float):
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: bad value {text!r}") from exc


def _ints(section, key, text) -> tuple:
    return tuple(_num(section, key, x.strip(), lambda s: int(s, 0)) for x in text.split(",") if x.strip())


def load_config(path, seed_override: Optional[int] = None) -> ExperimentConfig:
    raw = Path(path).read_bytes()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(raw.decode())
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = ExperimentConfig(digest=hashlib.sha256(raw).hexdigest())
    for name in parser.sections():
        sec = parser[name]
        kind, _, ident = name.partition(" ")
        if kind == "run":
            _check_keys(name, sec, RUN_KEYS)
            cfg.seed = _num(name, "seed", sec.get("seed", "0"), int)
            if "duration_ms" in sec:
                cfg.duration_ms = _num(name, "duration_ms", sec["duration_ms"], int)
            cfg.snr_db = _num(name, "snr_db", sec.get("snr_db", "10"))
            cfg.ber = _num(name, "ber", sec.get("ber", "0"))
            if "target" in sec:
                cfg.target = _num(name, "target", sec["target"], lambda s: int(s, 0))
            cfg.window = _num(name, "window", sec.get("window", "100"), int)
            cfg.max_messages = _num(name, "max_messages", sec.get("max_messages", "4"), int)
            cfg.record = _ints(name, "record", sec.get("record", ""))
        elif kind == "cell":
            _check_keys(name, sec, CELL_KEYS)
            try:
                cfg.cells.append(CellConfig(
                    cell_id=_num(name, "cell id", ident, int),
                    bandwidth_mhz=_num(name, "bandwidth_mhz", sec.get("bandwidth_mhz", "20"), int),
                    antennas=_num(name, "antennas", sec.get("antennas", "2"), int),
                    role=sec.get("role", "primary-capable"),
                    usable_cce=_num(name, "usable_cce", sec["usable_cce"], int) if "usable_cce" in sec else None))
            except ValueError as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        elif kind == "ue":
            _check_keys(name, sec, UE_KEYS)
            rate = sec.get("rate_mbps", "10")
            kw = dict(
                rnti=_num(name, "rnti", ident, lambda s: int(s, 0)),
                traffic=sec.get("traffic", "constant"),
                rate_bps=math.inf if rate.strip().lower() in ("inf", "full") else _num(name, "rate_mbps", rate) * 1e6,
                streams=_num(name, "streams", sec.get("streams", "1"), int),
                format_id=sec.get("format") or None,
                ca_cells=_ints(name, "cells", sec.get("cells", "1")),
            )
            for key in ("on_ms", "off_ms", "flow_bytes", "mcs_low", "mcs_high", "mcs_start"):
                if key in sec:
                    kw[key] = _num(name, key, sec[key], int)
            for key in ("flow_gap_ms", "mcs_move_prob"):
                if key in sec:
                    kw[key] = _num(name, key, sec[key])
            if "levels" in sec:
                kw["levels"] = _ints(name, "levels", sec["levels"])
            try:
                cfg.ues.append(UeProfile(**kw))
            except ValueError as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        else:
            raise ConfigError(f"unknown section [{name}]")
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        cfg.seed = _num("env", SEED_ENV, env, int)
    if seed_override is not None:
        cfg.seed = seed_override
    return cfg
