"""JSON configuration files and dotted-path overrides.

See ``docs/formats.md`` for the schema.  Every validation failure is an
:class:`~oldrm.model.InvalidConfigError` naming the offending field.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Iterable

from .engine import SimulationConfig
from .model import ConsumerParams, InvalidConfigError, MarketConfig

SCHEMA_VERSION = 1

_MARKET_KEYS = set(MarketConfig.__dataclass_fields__)
_CONSUMER_KEYS = {"a", "d", "noise_sd"}
_SIM_KEYS = set(SimulationConfig.__dataclass_fields__) - {"market", "consumers"}
_TOP_KEYS = {"schema_version", "market", "consumers", "simulation"}


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``"market.delta_p=0.3"`` into a path and a JSON-decoded value.

    Values that are not valid JSON are kept as strings, so
    ``simulation.so_policy=etc`` needs no quoting.
    """
    path, sep, raw = text.partition("=")
    if not sep or not path.strip():
        raise InvalidConfigError("--set", f"expected KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip().split("."), value


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    """Return a copy of ``raw`` with each dotted override applied."""
    out = copy.deepcopy(raw)
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for key in path[:-1]:
            if isinstance(node, list):
                node = node[_index(node, key, text)]
            else:
                node = node.setdefault(key, {})
        last = path[-1]
        if isinstance(node, list):
            node[_index(node, last, text)] = value
        elif isinstance(node, dict):
            node[last] = value
        else:
            raise InvalidConfigError(".".join(path), f"cannot override inside a scalar ({text!r})")
    return out


def _index(seq: list, key: str, text: str) -> int:
    try:
        i = int(key)
        seq[i]
    except (ValueError, IndexError):
        raise InvalidConfigError(key, f"bad list index in override {text!r}") from None
    return i


def _check_keys(obj: Any, allowed: set, where: str) -> dict:
    if not isinstance(obj, dict):
        raise InvalidConfigError(where, "must be a JSON object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise InvalidConfigError(extra[0], f"unknown key in {where}")
    return obj


def _number(obj: dict, key: str, kind=float):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InvalidConfigError(key, f"must be a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise InvalidConfigError(key, f"must be an integer, got {v!r}")
        return int(v)
    return float(v)


def config_from_dict(raw: dict) -> SimulationConfig:
    """Validate a decoded config document and build a :class:`SimulationConfig`."""
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidConfigError(
            "schema_version", f"expected {SCHEMA_VERSION}, got {version!r}"
        )
    consumers_raw = raw.get("consumers")
    if not isinstance(consumers_raw, list) or not consumers_raw:
        raise InvalidConfigError("consumers", "must be a non-empty list")
    consumers = []
    for i, c in enumerate(consumers_raw, start=1):
        _check_keys(c, _CONSUMER_KEYS, f"consumers[{i - 1}]")
        for key in ("a", "d"):
            if key not in c:
                raise InvalidConfigError(key, f"missing for consumer {i}")
        consumers.append(
            ConsumerParams(
                a=_number(c, "a"),
                d=_number(c, "d"),
                noise_sd=_number(c, "noise_sd") if "noise_sd" in c else 0.0,
                id=i,
            )
        )

    market_raw = dict(_check_keys(raw.get("market", {}), _MARKET_KEYS, "market"))
    market_raw.setdefault("n_consumers", len(consumers))
    ints = {"m", "T", "n_consumers"}
    market = MarketConfig(
        **{k: _number(market_raw, k, int if k in ints else float) for k in market_raw}
    )

    sim = dict(_check_keys(raw.get("simulation", {}), _SIM_KEYS, "simulation"))
    for key in ("seed", "n_replications", "chunk_size"):
        if key in sim:
            sim[key] = _number(sim, key, int)
    if sim.get("n_explore") is not None:
        sim["n_explore"] = _number(sim, "n_explore", int)
    for key in ("include_upfront", "clamp_nonneg"):
        if key in sim and not isinstance(sim[key], bool):
            raise InvalidConfigError(key, f"must be true or false, got {sim[key]!r}")
    for key in ("consumer_policy", "so_policy"):
        if key in sim and not isinstance(sim[key], str):
            raise InvalidConfigError(key, f"must be a string, got {sim[key]!r}")
    return SimulationConfig(market=market, consumers=tuple(consumers), **sim)


def config_to_dict(config: SimulationConfig) -> dict:
    """Inverse of :func:`config_from_dict` (consumer ids are positional)."""
    d = config.to_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "market": d["market"],
        "consumers": [{k: c[k] for k in ("a", "d", "noise_sd")} for c in d["consumers"]],
        "simulation": {k: d[k] for k in sorted(_SIM_KEYS)},
    }


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> SimulationConfig:
    """Read a JSON config file, apply dotted overrides and validate."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfigError("config", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(apply_overrides(raw, overrides))
