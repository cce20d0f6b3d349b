"""Pipeline configuration: an INI-style file where every value has a same-name CLI flag.

Sections [paths], [run], [pair], and [export] hold scalar settings;
[weak_judge], [strong_judge], and [summarizer] each configure one backend.
CLI overrides use the flat key for scalars (--target-size) and a
section-prefixed key for backends (--strong-judge-model-id).
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .backend import BackendConfig
from .errors import ConfigError
from .pairing import EXPORT_FORMATS
from .scoring import CRITERIA

CONFIG_IDS = ("c1", "c2", "c3", "c4")

# Short flag spellings accepted for criteria, per-dimension and SFT alike.
CRITERION_ALIASES = {
    "composite": "composite",
    "faith": "faithfulness",
    "faithfulness": "faithfulness",
    "comp": "completeness",
    "completeness": "completeness",
    "conc": "conciseness",
    "conciseness": "conciseness",
}

SFT_CRITERION_ALIASES = {
    "human": "human",
    "composite": "best_composite",
    "faith": "best_faith",
    "comp": "best_comp",
    "conc": "best_conc",
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_configs(text: str) -> tuple[str, ...]:
    ids = tuple(part.strip().lower() for part in text.split(",") if part.strip())
    return ids


def _parse_criterion(text: str) -> str:
    key = text.strip().lower()
    if key not in CRITERION_ALIASES:
        raise ValueError(f"expected one of {', '.join(sorted(set(CRITERION_ALIASES)))}")
    return CRITERION_ALIASES[key]


@dataclass(frozen=True)
class PipelineConfig:
    documents: str = ""
    summaries: str = ""
    keyfacts: str = ""
    human_scores: str = ""
    out: str = "out"
    configs: tuple[str, ...] = CONFIG_IDS
    seed: int = 0
    capacity_limit: int = 8192
    mock_fixtures: str = ""
    reference_summarizer: str = "human"
    generated_category: str = "open_llm"
    criterion: str = "composite"
    target_size: int | None = None
    max_pairs_per_doc: int | None = None
    chosen_min: str = ""  # empty string means the scale default
    min_gap: str = ""
    format: str = "plain"
    begin_token: str = ""
    end_token: str = ""
    response_token: str = ""
    weak_judge: BackendConfig = field(default_factory=lambda: BackendConfig(model_id="weak-judge"))
    strong_judge: BackendConfig = field(default_factory=lambda: BackendConfig(model_id="strong-judge"))
    summarizer: BackendConfig = field(default_factory=lambda: BackendConfig(model_id="summarizer"))

    def __post_init__(self):
        if not self.configs:
            raise ConfigError("configs must name at least one of c1..c4")
        for config_id in self.configs:
            if config_id not in CONFIG_IDS:
                raise ConfigError(f"unknown config id {config_id!r}")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.format not in EXPORT_FORMATS:
            raise ConfigError(f"unknown export format {self.format!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.capacity_limit < 1:
            raise ConfigError("capacity_limit must be positive")
        if self.target_size is not None and self.target_size < 1:
            raise ConfigError("target_size must be at least 1")
        if self.max_pairs_per_doc is not None and self.max_pairs_per_doc < 1:
            raise ConfigError("max_pairs_per_doc must be at least 1")
        for name in ("chosen_min", "min_gap"):
            value = getattr(self, name)
            if value:
                try:
                    Fraction(value)
                except (ValueError, ZeroDivisionError) as err:
                    raise ConfigError(f"{name} must be a number, got {value!r}") from err

    def threshold(self, name: str) -> Fraction | None:
        value = getattr(self, name)
        return Fraction(value) if value else None

    def to_json(self) -> dict:
        obj: dict = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, BackendConfig):
                obj[f.name] = {
                    bf.name: getattr(value, bf.name) for bf in fields(BackendConfig)
                }
            elif isinstance(value, tuple):
                obj[f.name] = list(value)
            else:
                obj[f.name] = value
        return obj


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config.to_json(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# key -> (ini section, parser); parser None keeps the raw string.
_SCALAR_KEYS: dict[str, tuple[str, object]] = {
    "documents": ("paths", None),
    "summaries": ("paths", None),
    "keyfacts": ("paths", None),
    "human_scores": ("paths", None),
    "out": ("paths", None),
    "configs": ("run", _parse_configs),
    "seed": ("run", int),
    "capacity_limit": ("run", int),
    "mock_fixtures": ("run", None),
    "reference_summarizer": ("run", None),
    "generated_category": ("run", None),
    "criterion": ("pair", _parse_criterion),
    "target_size": ("pair", int),
    "max_pairs_per_doc": ("pair", int),
    "chosen_min": ("pair", None),
    "min_gap": ("pair", None),
    "format": ("export", None),
    "begin_token": ("export", None),
    "end_token": ("export", None),
    "response_token": ("export", None),
}

_BACKEND_SECTIONS = ("weak_judge", "strong_judge", "summarizer")

_BACKEND_KEYS: dict[str, object] = {
    "model_id": None,
    "endpoint_url": None,
    "api_key_ref": None,
    "max_in_flight": int,
    "retry_max_attempts": int,
    "retry_base_delay": float,
    "timeout": float,
    "temperature": float,
    "max_output_tokens": int,
}


def _coerce(key: str, raw: str, parser) -> object:
    try:
        return raw if parser is None else parser(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {raw!r} ({err})") from err


def _read_ini(path: str) -> dict[str, object]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config file {path}: {err}") from err

    values: dict[str, object] = {}
    known_scalar_sections = {section for section, _ in _SCALAR_KEYS.values()}
    for section in parser.sections():
        if section in _BACKEND_SECTIONS:
            for key, raw in parser.items(section):
                if key not in _BACKEND_KEYS:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[f"{section}.{key}"] = _coerce(f"{section}.{key}", raw, _BACKEND_KEYS[key])
        elif section in known_scalar_sections:
            for key, raw in parser.items(section):
                if key not in _SCALAR_KEYS or _SCALAR_KEYS[key][0] != section:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = _coerce(key, raw, _SCALAR_KEYS[key][1])
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return values


def load_config(
    path: str | None = None, overrides: Mapping[str, object] | None = None
) -> PipelineConfig:
    """Merge defaults, the INI file (if given), and CLI overrides, then validate.

    Override keys are the flat scalar names or 'section.key' for backends;
    values may be pre-parsed or raw strings.
    """
    values: dict[str, object] = {}
    if path:
        values.update(_read_ini(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _SCALAR_KEYS:
            parser = _SCALAR_KEYS[key][1]
            values[key] = _coerce(key, value, parser) if isinstance(value, str) else value
        elif "." in key:
            section, _, backend_key = key.partition(".")
            if section not in _BACKEND_SECTIONS or backend_key not in _BACKEND_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            parser = _BACKEND_KEYS[backend_key]
            values[key] = _coerce(key, value, parser) if isinstance(value, str) else value
        else:
            raise ConfigError(f"unknown config key {key!r}")

    backends: dict[str, BackendConfig] = {}
    for section in _BACKEND_SECTIONS:
        kwargs = {
            key.split(".", 1)[1]: value
            for key, value in values.items()
            if key.startswith(section + ".")
        }
        kwargs.setdefault("model_id", section.replace("_", "-"))
        backends[section] = BackendConfig(**kwargs)

    scalar_values = {k: v for k, v in values.items() if "." not in k}
    return PipelineConfig(**scalar_values, **backends)
