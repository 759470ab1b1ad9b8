"""config module: Experiment configuration files.

Files hold one "section.key = value" per line; "#" starts a comment and
blank lines are ignored. Every key has a default, so an empty file is a
valid configuration.

Classes
-------
ModelConfig, RunConfig
    Victim geometry and run-level settings.
ExperimentConfig
    Every module configuration, one section each.

Functions
---------
parse_config(path), parse_config_text(text)
validate_config(config)
emit_config(config)
config_hash(config)
"""

# Standard imports
from dataclasses import dataclass, field, fields
from fractions import Fraction
import hashlib
import logging

# Local imports
from deconflict.attacks.ExplicitAttack import AnchorConfig
from deconflict.attacks.ImplicitAttack import ImplicitConfig
from deconflict.defenses.DefenseStrategy import DefenseConfig
from deconflict.env.Datasets import DataConfig, PoisonConfig
from deconflict.env.Scene import SceneConfig
from deconflict.evaluation.Evaluator import RolloutConfig
from deconflict.exceptions import ConfigError, ContractError
from deconflict.models.ProxyEncoder import ProxyConfig
from deconflict.training.Trainer import TrainConfig

logger = logging.getLogger(__name__)

# Keys left out of the config hash
COSMETIC = {"run.output_dir", "run.progress"}

@dataclass
class ModelConfig:
    """Victim geometry; the image side comes from scene.grid."""

    hidden: int = 32
    freeze_vision: bool = True
    proxy_kind: str = "aligned"

@dataclass
class RunConfig:
    """Preset, seeds and output location."""

    preset: str = ""
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    output_dir: str = "runs"
    progress: bool = False

@dataclass
class ExperimentConfig:
    """Every module configuration of one experiment."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    poison: PoisonConfig = field(default_factory=PoisonConfig)
    implicit: ImplicitConfig = field(default_factory=ImplicitConfig)
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def sections(self):
        return { f.name: getattr(self, f.name) for f in fields(self) }

    def with_progress(self):
        """Copy run.progress into every section that shows progress bars."""

        for section in self.sections().values():
            if hasattr(section, "progress"):
                section.progress = self.run.progress
        return self

def coerce(value, kind, default, key, line=None):
    """Return value (a string) converted to kind."""

    try:
        if kind is bool:
            lowered = value.lower()
            if lowered not in ("true", "false"):
                raise ValueError(value)
            return lowered == "true"
        if kind is int:
            return int(value)
        if kind is float:
            try:
                return float(value)
            except ValueError:
                return float(Fraction(value.replace(" ", "")))
        if kind is list:
            item = type(default[0]) if default else str
            return [item(v.strip()) for v in value.split(",") if v.strip()]
        return value
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}", line=line, key=key)

def set_value(config, key, value, line=None):
    """Assign the text value to the dotted key of config."""

    if "." not in key:
        raise ConfigError(f"key {key!r} has no section", line=line, key=key)
    section_name, name = key.split(".", 1)
    sections = config.sections()
    if section_name not in sections:
        raise ConfigError(f"unknown section in key {key!r}", line=line, key=key)
    section = sections[section_name]
    known = { f.name: f for f in fields(section) }
    if name not in known:
        raise ConfigError(f"unknown key {key!r}", line=line, key=key)
    kind = known[name].type
    setattr(section, name, coerce(value, kind, getattr(section, name), key, line))

def parse_config_text(text):
    """Return the ExperimentConfig described by text."""

    config = ExperimentConfig()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        set_value(config, key, value, number)
    return validate_config(config)

def validate_config(config):
    """Return config after checking every section that has a validate method.

    Raises
    ------
    ConfigError
        naming the offending key, or the section when only the section knows it
    """

    for section_name, section in config.sections().items():
        if not hasattr(section, "validate"):
            continue
        try:
            section.validate()
        except ConfigError:
            raise
        except ContractError as error:
            raise ConfigError(f"{section_name}: {error}", key=section_name) from error
    return config

def parse_config(path):
    """Return the ExperimentConfig read from path.

    Parameters
    ----------
    path: Path
        configuration file

    Returns
    -------
    ExperimentConfig with defaults for every key the file does not set
    """

    with open(path, encoding="utf-8") as cf:
        config = parse_config_text(cf.read())
    logger.info("Read configuration from %s", path)
    return config

def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)

def emit_config(config, skip=()):
    """Return config as text listing every key, section by section."""

    lines = []
    for section_name, section in config.sections().items():
        for f in fields(section):
            key = f"{section_name}.{f.name}"
            if key in skip:
                continue
            lines.append(f"{key} = {format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"

def config_hash(config):
    """Return the SHA-256 of every result-affecting key of config."""

    skip = set(COSMETIC)
    for section_name, section in config.sections().items():
        if hasattr(section, "progress"):
            skip.add(f"{section_name}.progress")
    return hashlib.sha256(emit_config(config, skip).encode()).hexdigest()
