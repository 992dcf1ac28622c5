"""Experiment configuration: a JSON schema over generator and optimizer settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .synthdata import GeneratorConfig
from .trainer import HyperParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "default_config"]

_MODES = ("ca", "dca")


class ConfigError(ValueError):
    """A configuration file is malformed or inconsistent."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: data recipe, optimizer, modes, output."""

    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    hyper: HyperParams = field(default_factory=HyperParams)
    modes: tuple[str, ...] = ("ca", "dca")
    output_dir: str = "runs/default"
    export_gates: bool = False
    n_seeds: int = 5

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("modes must not be empty")
        for m in self.modes:
            if m not in _MODES:
                raise ConfigError(f"modes entries must be 'ca' or 'dca', got {m!r}")
        if self.n_seeds < 1:
            raise ConfigError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigError("output_dir must be a non-empty path string")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
        known = {"generator", "hyper", "modes", "output_dir", "export_gates", "n_seeds"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "generator" in raw:
            kwargs["generator"] = _build("generator", GeneratorConfig, raw["generator"])
        if "hyper" in raw:
            kwargs["hyper"] = _build("hyper", HyperParams, raw["hyper"])
        if "modes" in raw:
            modes = raw["modes"]
            if not isinstance(modes, list):
                raise ConfigError("modes must be a list of 'ca'/'dca'")
            kwargs["modes"] = tuple(str(m).lower() for m in modes)
        for key in ("output_dir", "export_gates", "n_seeds"):
            if key in raw:
                kwargs[key] = raw[key]
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def _build(section: str, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section} must be an object, got {type(raw).__name__}")
    allowed = set(cls.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


def load_config(path) -> ExperimentConfig:
    """Read and validate an ExperimentConfig JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(raw)


def default_config() -> ExperimentConfig:
    """The desk-scale defaults: trains in seconds per run."""
    return ExperimentConfig()


def write_echo(cfg: ExperimentConfig, path) -> None:
    """Persist the fully resolved config next to the results it produced."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
