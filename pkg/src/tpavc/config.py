"""INI run configuration: six sections, typed keys, unknown keys rejected.

Every key, its type and its default is listed in ``SCHEMA`` below; the
README table mirrors it.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from tpavc.env import EnvConfig
from tpavc.errors import ConfigError
from tpavc.marl.agents import Ablation, TrainConfig
from tpavc.profiles import SyntheticParams
from tpavc.tpa.encoder import EncoderConfig
from tpavc.tpa.prototype import PrototypeHyper

REQUIRED = object()


def _dc_keys(cls, skip=()) -> dict:
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


SCHEMA: dict[str, dict] = {
    "env": _dc_keys(EnvConfig),
    "encoder": _dc_keys(EncoderConfig, skip=("memory", "n_features")),
    "prototype": {**_dc_keys(PrototypeHyper), "init": "data", "bank": ""},
    "marl": {**_dc_keys(TrainConfig), "seed": 0,
             "use_memory": True, "use_season": True, "use_prototypes": True},
    "profiles": {"data": REQUIRED, "feeder": "desk",
                 **{f"synthetic_{k}": v for k, v in _dc_keys(SyntheticParams).items()}, "seed": 0},
    "eval": {"cycles": "day", "out": "runs", "trace_day": 0},
}


def _coerce(section: str, key: str, raw: str, default):
    where = f"[{section}] {key}"
    if default is REQUIRED or isinstance(default, str):
        return raw
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return int(raw) if isinstance(default, int) else float(raw)
    except ValueError:
        kind = "an integer" if isinstance(default, int) else "a number"
        raise ConfigError(f"{where}: expected {kind}, got {raw!r}") from None


@dataclass
class RunConfig:
    values: dict[str, dict] = field(default_factory=dict)
    source: str | None = None

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(**self.values["env"])

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(**self.values["encoder"], memory=self.values["env"]["memory"])

    @property
    def prototype(self) -> PrototypeHyper:
        keys = _dc_keys(PrototypeHyper)
        return PrototypeHyper(**{k: self.values["prototype"][k] for k in keys})

    @property
    def train(self) -> TrainConfig:
        keys = _dc_keys(TrainConfig)
        return TrainConfig(**{k: self.values["marl"][k] for k in keys})

    @property
    def ablation(self) -> Ablation:
        m = self.values["marl"]
        return Ablation(memory=m["use_memory"], season=m["use_season"], prototypes=m["use_prototypes"])

    @property
    def synthetic(self) -> SyntheticParams:
        p = self.values["profiles"]
        return SyntheticParams(**{k: p[f"synthetic_{k}"] for k in _dc_keys(SyntheticParams)})

    @property
    def seed(self) -> int:
        return int(self.values["marl"]["seed"])

    @property
    def cycles(self) -> list[str]:
        return [c.strip() for c in self.values["eval"]["cycles"].split(",") if c.strip()]

    def validate(self) -> None:
        self.env.validate()
        self.encoder.validate()
        self.prototype.validate()
        self.train.validate()
        self.synthetic.validate()
        if self.values["prototype"]["init"] not in ("data", "random"):
            raise ConfigError("[prototype] init must be 'data' or 'random'")

    def override(self, dotted: str) -> None:
        """Apply ``section.key=value``."""
        if "=" not in dotted or "." not in dotted.split("=", 1)[0]:
            raise ConfigError(f"override {dotted!r} must look like section.key=value")
        lhs, raw = dotted.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        self._set(section, key, raw.strip())

    def _set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        self.values[section][key] = _coerce(section, key, raw, SCHEMA[section][key])

    def missing(self) -> list[str]:
        return [f"[{s}] {k}" for s, keys in self.values.items() for k, v in keys.items() if v is REQUIRED]

    def require_complete(self) -> None:
        gone = self.missing()
        if gone:
            raise ConfigError(f"missing required key {gone[0]}")

    def to_dict(self) -> dict:
        return {s: {k: (None if v is REQUIRED else v) for k, v in keys.items()} for s, keys in self.values.items()}

    def digest(self) -> str:
        """Short hash of the sections that shape a trained run; [eval] is excluded."""
        d = {s: keys for s, keys in self.to_dict().items() if s != "eval"}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.values["eval"]["out"]) / f"{self.digest()}-s{self.seed}"

    def dumps(self) -> str:
        lines = []
        for s, keys in self.to_dict().items():
            lines.append(f"[{s}]")
            lines += [f"{k} = {'' if v is None else v}" for k, v in keys.items()]
            lines.append("")
        return "\n".join(lines)


def default_config() -> RunConfig:
    return RunConfig({s: dict(keys) for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<string>")
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config: {err}") from None
    cfg = default_config()
    cfg.source = source
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg._set(section, key, raw)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = parse_config(path.read_text(), str(path))
    data = cfg.values["profiles"]["data"]
    if data is not REQUIRED and data and not Path(data).is_absolute():
        cfg.values["profiles"]["data"] = str(path.parent / data)
    return cfg
