"""Layered run configuration: defaults, then environment, then a JSON file.

The file holds one object with optional ``providers``, ``ingest``, ``fusion``,
``retrieval`` sections plus a top level ``jobs``; every key maps one to one
onto the matching config dataclass field. Unknown keys are rejected so typos
fail fast instead of silently running on defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .fuse import FusionConfig
from .ingest import IngestConfig
from .providers import ProviderConfig
from .retrieve import RetrievalConfig


class ConfigError(Exception):
    pass


@dataclass
class CliConfig:
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    jobs: int = 1


def _apply_section(instance: Any, values: dict[str, Any], section: str) -> Any:
    names = {f.name for f in dataclasses.fields(instance)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    try:
        return dataclasses.replace(instance, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in {section!r}: {exc}") from exc


def load_config(path: str | Path | None = None, use_env: bool = True) -> CliConfig:
    """Resolve configuration; file values override environment values."""
    providers = ProviderConfig.from_env() if use_env else ProviderConfig()
    config = CliConfig(providers=providers)
    if path is None:
        return config
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")

    sections = {"providers", "ingest", "fusion", "retrieval", "jobs"}
    unknown = set(raw) - sections
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    for name, current in (
        ("providers", config.providers),
        ("ingest", config.ingest),
        ("fusion", config.fusion),
        ("retrieval", config.retrieval),
    ):
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError(f"section {name!r} must be a JSON object")
            setattr(config, name, _apply_section(current, raw[name], name))
    if "jobs" in raw:
        jobs = raw["jobs"]
        if not isinstance(jobs, int) or isinstance(jobs, bool) or jobs < 1:
            raise ConfigError("jobs must be a positive integer")
        config.jobs = jobs
    return config
