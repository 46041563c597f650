"""JSON (de)serialisation of run configurations.

Unknown keys are rejected so that a misspelt field fails loudly instead of
silently falling back to a default.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from ..compressors import CompressorKind, Tag
from ..errors import ClansimError, ConfigError
from ..protocol import AggregationConfig, Mode
from .runner import RunConfig

AGGREGATION_KEYS = ("mode", "compressor", "size_threshold_bytes", "shard_count", "shard_policy",
                    "local_devices", "use_ef")
RUN_KEYS = tuple(f.name for f in fields(RunConfig))


def _reject_unknown(data: dict, allowed, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(extra)}")


def aggregation_from_dict(data: dict, n_workers: int = 1) -> AggregationConfig:
    """Build an :class:`AggregationConfig`.

    ``use_ef`` is accepted as shorthand for the mode when a compressor is
    given: ``true`` selects ``compressed_ef`` and ``false`` selects ``compressed``.
    """
    _reject_unknown(data, AGGREGATION_KEYS, "aggregation")
    data = dict(data)
    try:
        kind = CompressorKind.parse(data.pop("compressor", "none"))
    except (ClansimError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad compressor: {exc}") from None
    use_ef = data.pop("use_ef", None)
    if use_ef is not None and not isinstance(use_ef, bool):
        raise ConfigError("use_ef must be true or false")
    implied = None if use_ef is None else (Mode.COMPRESSED_EF if use_ef else Mode.COMPRESSED)
    try:
        mode = Mode(data.pop("mode")) if "mode" in data else None
    except ValueError:
        raise ConfigError(f"unknown mode; expected one of {[m.value for m in Mode]}") from None
    if mode is not None and implied is not None and mode != implied:
        raise ConfigError(f"use_ef={use_ef} contradicts mode={mode.value}")
    if mode is None:
        mode = implied if implied is not None and kind.tag != Tag.NONE else Mode.FULL_PRECISION
    try:
        return AggregationConfig(mode=mode, compressor=kind, n_workers=n_workers, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def aggregation_to_dict(agg: AggregationConfig) -> dict:
    return {"mode": agg.mode.value, "compressor": agg.compressor.spec(),
            "size_threshold_bytes": agg.size_threshold_bytes, "shard_count": agg.shard_count,
            "shard_policy": agg.shard_policy, "local_devices": agg.local_devices}


def run_config_from_dict(data: dict) -> RunConfig:
    _reject_unknown(data, RUN_KEYS, "run config")
    data = dict(data)
    n = data.get("n_workers", 1)
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError("n_workers must be an integer")
    data["aggregation"] = aggregation_from_dict(data.get("aggregation", {}), n)
    if not isinstance(data.get("problem_params", {}), dict):
        raise ConfigError("problem_params must be a JSON object")
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def run_config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        out[f.name] = aggregation_to_dict(v) if f.name == "aggregation" else v
    return out


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return run_config_from_dict(data)
