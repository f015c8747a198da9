"""Run configuration: TOML file, environment and command-line overrides."""

import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Set, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, PrivateAttr, ValidationError

from model import ModelConfig
from services import EvalConfig, TrainConfig
from templates import get_run_config_template
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ("model", "train", "eval", "paths")
OUTPUT_ROOT_ENV = "DSNET_OUTPUT_ROOT"
NUMERIC_MODE_ENV = "DSNET_NUMERIC_MODE"
RESOLVED_CONFIG_NAME = "resolved_config.toml"


class PathsConfig(BaseModel):
    """Input and output locations of a run."""

    manifest: Optional[Path] = Field(default=None, description="Dataset manifest CSV (path,label,split)")
    checkpoint: Optional[Path] = Field(default=None, description="Checkpoint to evaluate or resume from")
    output_dir: Path = Field(default=Path("runs/latest"), description="Directory receiving every artifact of the run")
    log_file: Optional[Path] = Field(default=None, description="Optional log file (relative paths live in output_dir)")


class RunConfig(BaseModel):
    """Everything a command needs, merged from file, environment and flags."""

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    _explicit: Set[str] = PrivateAttr(default_factory=set)

    def explicit(self, section: str) -> bool:
        """Whether `section` was set by the file or an override."""
        return section in self._explicit

    def output_dir(self) -> Path:
        out = self.paths.output_dir
        root = os.getenv(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def render(self, note: Optional[str] = None) -> str:
        return get_run_config_template(
            {"model": self.model, "train": self.train, "eval": self.eval, "paths": self.paths}, note
        )

    def write_resolved(self, directory: Union[str, Path], note: Optional[str] = None) -> Path:
        """Write the resolved config next to a run's outputs."""
        path = Path(directory) / RESOLVED_CONFIG_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render(note), encoding="utf-8")
        logger.info(f"Resolved config written to {path}")
        return path


def parse_override(item: str) -> tuple:
    """
    Split `section.key=value`; the value is read as a TOML literal, else a string.

    Returns:
        (section, key, value)
    """
    if "=" not in item:
        raise ConfigError(f"Override '{item}' is not of the form section.key=value")
    target, raw = item.split("=", 1)
    if "." not in target:
        raise ConfigError(f"Override '{item}' needs a section, e.g. train.epochs=5")
    section, key = target.strip().split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"Unknown config section '{section}'. Supported: {', '.join(SECTIONS)}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, key.strip(), value


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    flags: Optional[Dict[str, Dict[str, Any]]] = None,
) -> RunConfig:
    """
    Build a RunConfig.

    Precedence, lowest first: defaults, DSNET_NUMERIC_MODE, the TOML file,
    command-line flags, then `--set` overrides.

    Args:
        path: Optional TOML file with [model], [train], [eval], [paths] tables
        overrides: `section.key=value` strings
        flags: Values from dedicated command-line flags, by section

    Raises:
        ConfigError: Unreadable file, unknown section or a failed invariant
    """
    load_dotenv()
    data: Dict[str, Dict[str, Any]] = {section: {} for section in SECTIONS}
    explicit: Set[str] = set()

    env_mode = os.getenv(NUMERIC_MODE_ENV)
    if env_mode:
        data["train"]["numeric_mode"] = env_mode

    if path is not None:
        path = Path(path)
        try:
            loaded = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid TOML ({e})") from e
        unknown = [key for key in loaded if key not in SECTIONS]
        if unknown:
            raise ConfigError(f"{path}: unknown section(s) {', '.join(unknown)}. Supported: {', '.join(SECTIONS)}")
        for section, values in loaded.items():
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: [{section}] must be a table")
            data[section].update(values)
            explicit.add(section)
        logger.debug(f"Loaded config file {path}")

    for section, values in (flags or {}).items():
        present = {k: v for k, v in values.items() if v is not None}
        if present:
            data[section].update(present)
            explicit.add(section)

    for item in overrides:
        section, key, value = parse_override(item)
        data[section][key] = value
        explicit.add(section)

    try:
        config = RunConfig(
            model=ModelConfig(**data["model"]),
            train=TrainConfig(**data["train"]),
            eval=EvalConfig(**data["eval"]),
            paths=PathsConfig(**data["paths"]),
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {_validation_message(e)}") from e
    config._explicit = explicit
    return config
