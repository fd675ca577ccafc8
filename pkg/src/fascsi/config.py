"""Flat INI-style run configuration with three sections: [scene], [amp], [experiment].

Every key is optional. Missing keys keep the reference defaults, unknown keys
and values of the wrong type are rejected with the offending key (and line)
named in the message.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field, fields

from .amp import AmpConfig
from .channel import SceneConfig

SECTIONS = ("scene", "amp", "experiment")

# [experiment] schema: key -> parser name
EXPERIMENT_KEYS = {
    "snr_db": "float",
    "grid": "float_list",
    "algorithms": "str_list",
    "N_s": "int",
    "aoa_sparsity": "int",
    "seed_base": "int",
    "workers": "int",
}


class ConfigError(ValueError):
    """Bad configuration document."""


@dataclass
class ParsedConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    amp: AmpConfig = field(default_factory=AmpConfig)
    scene_overrides: dict = field(default_factory=dict)
    amp_overrides: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)

    @property
    def seed_base(self) -> int:
        return int(self.experiment.get("seed_base", 0))

    @property
    def workers(self) -> int:
        return int(self.experiment.get("workers", 1))

    def harness_overrides(self) -> dict:
        """Override dict in the shape ``harness.run_experiment`` expects."""
        out = {k: v for k, v in self.experiment.items() if k not in ("seed_base", "workers")}
        if self.scene_overrides:
            out["scene"] = dict(self.scene_overrides)
        if self.amp_overrides:
            out["amp"] = dict(self.amp_overrides)
        return out

    def digest(self) -> str:
        """Short hash of the parsed (not textual) configuration."""
        blob = json.dumps(
            {"scene": self.scene_overrides, "amp": self.amp_overrides, "experiment": self.experiment},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _schema(cls) -> dict:
    return {f.name: type(f.default).__name__ for f in fields(cls)}


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    where, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
        elif line and line[0] not in "#;" and section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            where.setdefault((section, key), i)
    return where


def _convert(kind: str, raw: str):
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "str":
        if not raw:
            raise ValueError("empty string")
        return raw
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    if kind == "float_list":
        # keep integral grid values integral (port counts)
        return [int(s) if re.fullmatch(r"[+-]?\d+", s) else float(s) for s in items]
    if kind == "str_list":
        return items
    raise AssertionError(kind)


def parse_config(text: str) -> ParsedConfig:
    """Parse a configuration document; an empty document gives the defaults."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (K vs K_a)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    lines = _key_lines(text)
    unknown_sections = [s for s in cp.sections() if s not in SECTIONS]
    if unknown_sections:
        raise ConfigError(f"unknown section(s) {unknown_sections}; valid sections: {list(SECTIONS)}")

    schemas = {"scene": _schema(SceneConfig), "amp": _schema(AmpConfig), "experiment": EXPERIMENT_KEYS}
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    for section in cp.sections():
        schema = schemas[section]
        for key, raw in cp.items(section):
            line = lines.get((section, key), "?")
            if key not in schema:
                raise ConfigError(
                    f"line {line}: unknown key {key!r} in [{section}]; valid keys: {', '.join(schema)}"
                )
            try:
                values[section][key] = _convert(schema[key], raw)
            except ValueError:
                raise ConfigError(
                    f"line {line}: key {key!r} in [{section}] expects {schema[key]}, got {raw.strip()!r}"
                ) from None

    try:
        scene = SceneConfig(**values["scene"])
        amp_cfg = AmpConfig(**values["amp"])
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    exp = values["experiment"]
    if "workers" in exp and exp["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return ParsedConfig(scene, amp_cfg, values["scene"], values["amp"], exp)


def load_config(path) -> ParsedConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
