"""Run configuration: YAML/JSON file, overridden by command-line flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from pnb.corpus import EntityType
from pnb.errors import ConfigError
from pnb.llmclient import DEFAULT_MODEL, DEFAULT_URL
from pnb.prompting import DEFAULT_DEFINITIONS, PromptFormat, Setting, template_key

log = logging.getLogger(__name__)

MODES = ("live", "replay")
SELECTIONS = ("random", "similar")
MATCH_LEVELS = ("span", "string")


@dataclass
class RunConfig:
    corpus: str | None = None
    seed: int = 0
    split_file: str | None = None
    setting: str = "zero"
    format: str = "simple"
    selection: str = "random"
    model_id: str = DEFAULT_MODEL
    temperature: float = 0.0
    endpoint: str = DEFAULT_URL
    cache: str | None = None
    mode: str = "replay"
    match_level: str = "span"
    stopwords: str | None = None
    embeddings: str | None = None
    label_map: dict[str, str] = field(default_factory=dict)
    definitions: dict[str, str] = field(default_factory=dict)
    templates: dict[str, str] = field(default_factory=dict)
    whole_token: bool = True
    longest_first: bool = True
    max_docs: int | None = None
    max_in_flight: int = 4
    run_dir: str = "runs/default"

    # Fields that cannot change any prediction or score.
    _NOT_FINGERPRINTED = ("corpus", "split_file", "cache", "stopwords", "embeddings",
                          "endpoint", "mode", "max_in_flight", "run_dir")

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides: Any) -> RunConfig:
        data: dict[str, Any] = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            text = p.read_text(encoding="utf-8")
            loaded = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
            if loaded is not None and not isinstance(loaded, dict):
                raise ConfigError(f"{p}: top level must be a mapping")
            data.update(loaded or {})
            # Relative paths in a config file are relative to the file.
            for key in ("corpus", "split_file", "cache", "stopwords", "embeddings", "run_dir"):
                if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                    data[key] = str((p.parent / data[key]).resolve())
        data.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name, allowed in (("mode", MODES), ("selection", SELECTIONS), ("match_level", MATCH_LEVELS)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        try:
            Setting(self.setting)
            PromptFormat(self.format)
            for k in self.definitions:
                EntityType.parse(k)
            for v in self.label_map.values():
                EntityType.parse(v)
            for k in self.templates:
                template_key(k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be at least 1")
        if self.max_docs is not None and self.max_docs < 1:
            raise ConfigError("max_docs must be positive")
        for key in ("split_file", "stopwords", "embeddings"):
            value = getattr(self, key)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{key} not found: {value}")
        if self.setting == "zero" and self.selection != "random":
            log.warning("selection strategy %r has no effect in the zero-shot setting", self.selection)

    @property
    def setting_enum(self) -> Setting:
        return Setting(self.setting)

    @property
    def format_enum(self) -> PromptFormat:
        return PromptFormat(self.format)

    def definition(self, etype: EntityType) -> str:
        for k, v in self.definitions.items():
            if EntityType.parse(k) is etype:
                return v
        return DEFAULT_DEFINITIONS[etype]

    def template_overrides(self) -> dict[tuple[Setting, PromptFormat], str]:
        return {template_key(k): v for k, v in self.templates.items()}

    def fingerprint(self, extra: Mapping[str, str] | None = None) -> str:
        """Hash of every result-affecting setting plus content digests of referenced inputs."""
        payload = {
            k: v for k, v in dataclasses.asdict(self).items() if k not in self._NOT_FINGERPRINTED
        }
        if self.setting == "zero":
            payload.pop("selection")
        for key in ("stopwords", "embeddings", "split_file"):
            value = getattr(self, key)
            payload[f"{key}_sha256"] = file_digest(value) if value else None
        payload.update(extra or {})
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
