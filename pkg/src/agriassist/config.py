"""Configuration assembly shared by the CLI and the service.

Precedence: built-in defaults < config file < environment < explicit flags.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from . import dialogue, lingua, prompting, retrieval, schema
from .backends import AuditLog, router_from_env

ENV_PREFIX = "AGRIASSIST_"


@dataclass
class AppConfig:
    registry_path: str = str(schema.default_registry_path())
    template_path: str = str(prompting.default_template_path())
    index_path: str = ""
    journal_path: str = "journal.jsonl"
    port: int = 8080
    score_floor: float = 0.25
    max_clarification_turns: int = dialogue.DEFAULT_MAX_CLARIFICATION_TURNS
    cors_origins: str = "*"
    transcribe_url: str = ""
    synthesize_url: str = ""


_ENV_KEYS = {
    "registry_path": "REGISTRY",
    "template_path": "TEMPLATE",
    "index_path": "INDEX",
    "journal_path": "JOURNAL",
    "port": "PORT",
    "score_floor": "SCORE_FLOOR",
    "max_clarification_turns": "MAX_CLARIFICATION_TURNS",
    "cors_origins": "CORS_ORIGINS",
    "transcribe_url": "TRANSCRIBE_URL",
    "synthesize_url": "SYNTHESIZE_URL",
}


class ConfigError(Exception):
    pass


def load_app_config(
    config_file: Optional[str] = None,
    env: Optional[dict[str, str]] = None,
    **flag_overrides,
) -> AppConfig:
    env = dict(os.environ) if env is None else env
    config = AppConfig()
    if config_file:
        try:
            doc = yaml.safe_load(Path(config_file).read_text("utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {config_file} is not valid YAML: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must contain a mapping")
        unknown = set(doc) - {f.name for f in fields(AppConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in doc.items():
            setattr(config, key, value)
    for field_name, env_suffix in _ENV_KEYS.items():
        raw = env.get(ENV_PREFIX + env_suffix)
        if raw is not None:
            setattr(config, field_name, raw)
    for key, value in flag_overrides.items():
        if value is not None:
            setattr(config, key, value)
    config.port = int(config.port)
    config.score_floor = float(config.score_floor)
    config.max_clarification_turns = int(config.max_clarification_turns)
    return config


def build_deps(
    config: AppConfig,
    env: Optional[dict[str, str]] = None,
    audit: Optional[AuditLog] = None,
) -> dialogue.Deps:
    """Materialize the shared dialogue dependencies from configuration."""
    env = dict(os.environ) if env is None else env
    registry = schema.load_registry(config.registry_path)
    template = prompting.load_template(config.template_path)
    router = router_from_env(env, audit=audit)
    index = None
    embedder: Optional[retrieval.Embedder] = None
    if config.index_path and Path(config.index_path).exists():
        index = retrieval.load_index(config.index_path)
        embedder = retrieval.HashingEmbedder()
    en_dict, hi_dict = lingua.load_default_dicts()
    return dialogue.Deps(
        registry=registry,
        router=router,
        template=template,
        index=index,
        embedder=embedder,
        en_dict=en_dict,
        hi_dict=hi_dict,
        score_floor=config.score_floor,
        max_clarification_turns=config.max_clarification_turns,
    )
