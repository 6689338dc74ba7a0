"""INI-style pipeline configuration with strict keys, flag overrides and provenance.

A file looks like::

    seed = 3

    [adam]
    peak_lr = 6e-4
    warmup_steps = 100

Keys before the first section are global.  Unknown sections or keys,
unparsable values and invariant violations raise :class:`ConfigError`
naming the key and its line.  Overrides given as ``section.key=value``
(the CLI's ``--set``) always win over file values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .corpus import CleaningConfig
from .finetune import GridSearchConfig
from .masking import MaskingConfig
from .pretrain import AdamConfig
from .transformer import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BpeConfig:
    num_merges: int = 50_000 - 5

    def __post_init__(self):
        if self.num_merges < 0:
            raise ValueError("num_merges must be >= 0")


SECTIONS: dict[str, type] = {
    "cleaning": CleaningConfig,
    "bpe": BpeConfig,
    "masking": MaskingConfig,
    "model": ModelConfig,
    "adam": AdamConfig,
    "grid": GridSearchConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    bpe: BpeConfig = field(default_factory=BpeConfig)
    masking: MaskingConfig = field(default_factory=lambda: MaskingConfig(max_len=128))
    model: ModelConfig = field(default_factory=lambda: ModelConfig.preset("toy"))
    adam: AdamConfig = field(default_factory=AdamConfig)
    grid: GridSearchConfig = field(default_factory=GridSearchConfig)

    def to_ini(self) -> str:
        lines = [f"seed = {self.seed}", ""]
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in dataclasses.fields(getattr(self, name)):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_scalar(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text.replace("_", ""))
    if kind is float:
        return float(text)
    if kind is str:
        return text
    raise TypeError(f"unsupported field type {kind}")


def parse_value(text: str, annotation):
    text = text.strip()
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if text.lower() == "none":
            return None
        return parse_value(text, args[0])
    if origin is tuple:
        item = typing.get_args(annotation)[0]
        return tuple(_parse_scalar(p.strip(), item) for p in text.split(",") if p.strip())
    return _parse_scalar(text, annotation)


def _read_ini(text: str, source: str) -> dict[str, dict[str, tuple[str, int]]]:
    """section -> key -> (raw value, line number); globals live under ''."""
    out: dict[str, dict[str, tuple[str, int]]] = {"": {}}
    section = ""
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{n}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{source}:{n}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out[section]:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[section][key] = (value, n)
    return out


def _build(raw: dict[str, dict[str, tuple[str, int]]], source: str) -> PipelineConfig:
    kwargs: dict[str, Any] = {}
    for key, (value, n) in raw.get("", {}).items():
        if key != "seed":
            raise ConfigError(f"{source}:{n}: unknown global key {key!r}")
        try:
            kwargs["seed"] = int(value)
        except ValueError:
            raise ConfigError(f"{source}:{n}: key 'seed' expects an integer, got {value!r}") from None
    defaults = PipelineConfig()
    for section, cls in SECTIONS.items():
        entries = raw.get(section, {})
        hints = typing.get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, (value, n) in entries.items():
            if key not in names:
                raise ConfigError(f"{source}:{n}: unknown key {key!r} in [{section}]")
            try:
                values[key] = parse_value(value, hints[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}:{n}: key {section}.{key}: {exc}") from None
        try:
            kwargs[section] = dataclasses.replace(getattr(defaults, section), **values)
        except (TypeError, ValueError) as exc:
            blamed = [k for k in entries if k in str(exc)] or list(entries)
            where = ", ".join(f"{section}.{k} (line {entries[k][1]})" for k in blamed)
            raise ConfigError(f"{source}: invalid value for {where}: {exc}") from None
    return PipelineConfig(**kwargs)


def parse_config_text(text: str, overrides: dict[str, str] | None = None, source: str = "<config>") -> PipelineConfig:
    raw = _read_ini(text, source)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        if section and section not in SECTIONS:
            raise ConfigError(f"override {dotted!r}: unknown section [{section}]")
        raw.setdefault(section, {})[key] = (value, 0)
    return _build(raw, source)


def parse_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Read ``path`` (None means all defaults) and apply ``section.key`` overrides."""
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, overrides, source=str(path) if path else "<defaults>")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_provenance(out_dir: str | Path, stage: str, cfg: PipelineConfig, inputs: list[str | Path],
                     extra: dict | None = None) -> Path:
    """Echo the resolved config and write ``manifest.json`` with input hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    files = []
    for p in inputs:
        p = Path(p)
        for f in sorted(p.rglob("*")) if p.is_dir() else [p]:
            if f.is_file():
                files.append({"path": str(f), "sha256": sha256_file(f)})
    manifest = {
        "stage": stage,
        "version": __version__,
        "inputs": files,
        "config": cfg.to_dict(),
        **(extra or {}),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path
