"""Run configuration: defaults, TOML file loading (strict keys) and flag overrides."""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .errors import InputError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

THREADS_ENV = "SPKEVAL_THREADS"

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    # abx / sweep
    "tasks": ["triphone-within-spk", "triphone-across-spk", "phone-within-ctx", "phone-any-ctx"],
    "cell_cap": 20,
    "representation": "continuous",
    # quantize / assign
    "k": 500,
    "max_iter": 300,
    "rel_tol": 1e-6,
    "frame_rate": 50.0,
    # per
    "collapse_gold": True,
    # lm / zeroshot
    "order": 5,
    "discount": 0.75,
    "dedup": True,
    # mcd
    "align": "dtw",
    "sample_rate": 16000,
    "win_length": 400,
    "hop_length": 160,
    "n_fft": 1024,
    "n_mels": 80,
    "n_ceps": 13,
}

# affects wall time only, so it is kept out of reports
NON_RESULT_KEYS = ("threads",)


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise InputError(f"config key {key!r} expects true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise InputError(f"config key {key!r} expects an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise InputError(f"config key {key!r} expects a number, got {value!r}")
    if isinstance(default, list):
        if isinstance(value, str):
            value = [value]
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return list(value)
        raise InputError(f"config key {key!r} expects a list of strings, got {value!r}")
    if isinstance(value, str):
        return value
    raise InputError(f"config key {key!r} expects a string, got {value!r}")


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Defaults <- TOML file <- explicit overrides (``None`` values are ignored).

    ``threads`` falls back to the SPKEVAL_THREADS environment variable when
    neither the file nor a flag sets it.
    """
    config = {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS.items()}
    if "threads" in DEFAULTS and os.environ.get(THREADS_ENV):
        try:
            config["threads"] = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}") from None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
        for key, value in data.items():
            if key not in DEFAULTS:
                raise InputError(f"{path}: unknown config key {key!r}")
            config[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise InputError(f"unknown config key {key!r}")
        config[key] = _coerce(key, value)
    if config["threads"] < 1:
        raise InputError(f"threads must be >= 1, got {config['threads']}")
    return config


def report_config(config: Mapping[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in sorted(config.items()) if k not in NON_RESULT_KEYS}
