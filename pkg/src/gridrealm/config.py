"""Master configuration: every tunable of the world, mechanics, net, and trainer.

The config file is TOML with one table per subsystem (``[worldgen]``,
``[combat]``, ...). Every key has a default, so an empty file is a valid,
fully-populated configuration. Unknown keys are hard errors to catch typos.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV_VAR = "GRIDREALM_CONFIG"


class ConfigError(Exception):
    """Raised for unreadable, malformed, or out-of-range configuration."""


@dataclass
class WorldgenConfig:
    size: int = 80
    octaves: int = 6
    base_frequency: float = 0.03125  # 1/32 cells
    lacunarity: float = 2.0
    persistence: float = 0.5
    water_threshold: float = 0.30
    grass_threshold: float = 0.57
    forest_threshold: float = 0.715
    retry_budget: int = 16
    interior_lava: bool = False


@dataclass
class ForageConfig:
    starting_food: int = 32
    starting_water: int = 32
    forest_food: int = 5
    water_gain: int = 5
    scrub_regen_prob: float = 0.025


@dataclass
class AgentConfig:
    starting_health: int = 10
    health_regen: int = 1
    regen_food_threshold: int = 16
    regen_water_threshold: int = 16
    spawn_immunity_ticks: int = 15


@dataclass
class CombatConfig:
    enabled: bool = True
    melee_damage: int = 10
    melee_range: int = 1
    ranged_damage: int = 2
    ranged_range: int = 2
    mage_damage: int = 1
    mage_range: int = 3
    freeze_ticks: int = 2
    allow_same_population: bool = False


@dataclass
class ObservationConfig:
    crop_size: int = 15
    lifetime_norm: float = 1000.0


@dataclass
class NeuralConfig:
    tile_embed_dim: int = 7
    entity_dim: int = 32
    hidden_dim: int = 48
    nonlinearity: str = "relu"
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-5
    entropy_coef: float = 1e-2
    value_coef: float = 0.5
    init_scale: float = 1.0


@dataclass
class TrainingConfig:
    worlds: int = 100
    n_pop: int = 1
    spawn_cap_mode: str = "fixed"  # "fixed": cap = cap_per_pop * n_pop; "random": cap ~ U{1..cap_constant}
    cap_per_pop: int = 16
    cap_constant: int = 128
    gamma: float = 0.99
    horizon: int = 256
    trajectory_budget: int = 2000
    advantage_normalize: bool = False
    checkpoint_every: int = 25
    max_updates: int = 0  # 0: run to the trajectory budget
    randomize_maps: bool = True
    record_replay: bool = False
    seed: int = 1


@dataclass
class TournamentConfig:
    ticks: int = 1000
    spawn_cap: int = 16
    worlds: int = 4
    combat: bool = True
    include_censored: bool = False
    seed: int = 1


@dataclass
class AnalysisConfig:
    probe_age: int = 100
    image_scale: int = 8


@dataclass
class Config:
    worldgen: WorldgenConfig = field(default_factory=WorldgenConfig)
    forage: ForageConfig = field(default_factory=ForageConfig)
    agents: AgentConfig = field(default_factory=AgentConfig)
    combat: CombatConfig = field(default_factory=CombatConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    neural: NeuralConfig = field(default_factory=NeuralConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    tournament: TournamentConfig = field(default_factory=TournamentConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def override_seeds(self, seed: int) -> None:
        """Force every seed in the config to `seed` (CLI --seed)."""
        self.training.seed = seed
        self.tournament.seed = seed


# (key, predicate, requirement description) -- checked by validate()
_RANGE_CHECKS = [
    ("worldgen.size", lambda v: v >= 16, "must be >= 16"),
    ("worldgen.octaves", lambda v: v >= 1, "must be >= 1"),
    ("worldgen.base_frequency", lambda v: v > 0, "must be > 0"),
    ("worldgen.lacunarity", lambda v: v > 0, "must be > 0"),
    ("worldgen.persistence", lambda v: 0 < v <= 1, "must be in (0, 1]"),
    ("worldgen.water_threshold", lambda v: 0 < v < 1, "must be in (0, 1)"),
    ("worldgen.grass_threshold", lambda v: 0 < v < 1, "must be in (0, 1)"),
    ("worldgen.forest_threshold", lambda v: 0 < v < 1, "must be in (0, 1)"),
    ("worldgen.retry_budget", lambda v: v >= 1, "must be >= 1"),
    ("forage.starting_food", lambda v: v >= 1, "must be >= 1"),
    ("forage.starting_water", lambda v: v >= 1, "must be >= 1"),
    ("forage.forest_food", lambda v: v >= 0, "must be >= 0"),
    ("forage.water_gain", lambda v: v >= 0, "must be >= 0"),
    ("forage.scrub_regen_prob", lambda v: 0 <= v <= 1, "must be in [0, 1]"),
    ("agents.starting_health", lambda v: v >= 1, "must be >= 1"),
    ("agents.health_regen", lambda v: v >= 0, "must be >= 0"),
    ("agents.spawn_immunity_ticks", lambda v: v >= 0, "must be >= 0"),
    ("combat.melee_damage", lambda v: v >= 0, "must be >= 0"),
    ("combat.ranged_damage", lambda v: v >= 0, "must be >= 0"),
    ("combat.mage_damage", lambda v: v >= 0, "must be >= 0"),
    ("combat.melee_range", lambda v: v >= 1, "must be >= 1"),
    ("combat.ranged_range", lambda v: v >= 1, "must be >= 1"),
    ("combat.mage_range", lambda v: v >= 1, "must be >= 1"),
    ("combat.freeze_ticks", lambda v: v >= 0, "must be >= 0"),
    ("observation.crop_size", lambda v: v >= 3 and v % 2 == 1, "must be odd and >= 3"),
    ("observation.lifetime_norm", lambda v: v > 0, "must be > 0"),
    ("neural.tile_embed_dim", lambda v: v >= 1, "must be >= 1"),
    ("neural.entity_dim", lambda v: v >= 1, "must be >= 1"),
    ("neural.hidden_dim", lambda v: v >= 1, "must be >= 1"),
    ("neural.nonlinearity", lambda v: v in ("relu", "tanh"), "must be 'relu' or 'tanh'"),
    ("neural.learning_rate", lambda v: v > 0, "must be > 0"),
    ("neural.adam_beta1", lambda v: 0 <= v < 1, "must be in [0, 1)"),
    ("neural.adam_beta2", lambda v: 0 <= v < 1, "must be in [0, 1)"),
    ("neural.adam_eps", lambda v: v > 0, "must be > 0"),
    ("neural.weight_decay", lambda v: v >= 0, "must be >= 0"),
    ("neural.entropy_coef", lambda v: v >= 0, "must be >= 0"),
    ("neural.value_coef", lambda v: v >= 0, "must be >= 0"),
    ("neural.init_scale", lambda v: v > 0, "must be > 0"),
    ("training.worlds", lambda v: v >= 1, "must be >= 1"),
    ("training.n_pop", lambda v: v >= 1, "must be >= 1"),
    ("training.spawn_cap_mode", lambda v: v in ("fixed", "random"), "must be 'fixed' or 'random'"),
    ("training.cap_per_pop", lambda v: v >= 1, "must be >= 1"),
    ("training.cap_constant", lambda v: v >= 1, "must be >= 1"),
    ("training.gamma", lambda v: 0 < v < 1, "must be in (0, 1)"),
    ("training.horizon", lambda v: v >= 1, "must be >= 1"),
    ("training.trajectory_budget", lambda v: v >= 1, "must be >= 1"),
    ("training.checkpoint_every", lambda v: v >= 1, "must be >= 1"),
    ("training.max_updates", lambda v: v >= 0, "must be >= 0"),
    ("tournament.ticks", lambda v: v >= 1, "must be >= 1"),
    ("tournament.spawn_cap", lambda v: v >= 1, "must be >= 1"),
    ("tournament.worlds", lambda v: v >= 1, "must be >= 1"),
    ("analysis.probe_age", lambda v: v >= 0, "must be >= 0"),
    ("analysis.image_scale", lambda v: v >= 1, "must be >= 1"),
]


def _get_dotted(config: Config, path: str):
    obj = config
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _find_key_line(text: str, section: str, key: str | None) -> int | None:
    """Best-effort line number of `key` inside `[section]` (or the header itself)."""
    in_section = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("["):
            if in_section and key is not None:
                break
            in_section = stripped == f"[{section}]"
            if in_section and key is None:
                return lineno
            continue
        if in_section and key is not None:
            name = stripped.split("=", 1)[0].strip()
            if name == key:
                return lineno
    return None


def validate(config: Config) -> Config:
    """Range-check a config, raising ConfigError naming the offending key."""
    for path, check, requirement in _RANGE_CHECKS:
        value = _get_dotted(config, path)
        if not check(value):
            raise ConfigError(f"{path} = {value!r}: {requirement}")
    wg = config.worldgen
    if not (wg.water_threshold < wg.grass_threshold < wg.forest_threshold < 1.0):
        raise ConfigError(
            "worldgen thresholds must be strictly increasing: "
            f"water={wg.water_threshold} < grass={wg.grass_threshold} "
            f"< forest={wg.forest_threshold} < 1.0"
        )
    if config.observation.crop_size >= config.worldgen.size:
        raise ConfigError("observation.crop_size must be smaller than worldgen.size")
    return config


def from_dict(data: dict, *, source_text: str = "") -> Config:
    """Build a Config from nested dicts, rejecting unknown keys and wrong types."""
    config = Config()
    known_sections = {f.name: f.type for f in fields(Config)}
    for section_name, section_data in data.items():
        if section_name not in known_sections:
            line = _find_key_line(source_text, section_name, None)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"unknown section [{section_name}]{where}")
        if not isinstance(section_data, dict):
            raise ConfigError(f"[{section_name}] must be a table, got {type(section_data).__name__}")
        section = getattr(config, section_name)
        valid = {f.name: f for f in fields(section)}
        for key, value in section_data.items():
            if key not in valid:
                line = _find_key_line(source_text, section_name, key)
                where = f" (line {line})" if line else ""
                raise ConfigError(f"unknown key {section_name}.{key}{where}")
            current = getattr(section, key)
            if isinstance(current, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{section_name}.{key} must be a boolean, got {value!r}")
            elif isinstance(current, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{section_name}.{key} must be an integer, got {value!r}")
            elif isinstance(current, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{section_name}.{key} must be a number, got {value!r}")
                value = float(value)
            elif isinstance(current, str):
                if not isinstance(value, str):
                    raise ConfigError(f"{section_name}.{key} must be a string, got {value!r}")
            setattr(section, key, value)
    return validate(config)


def parse_config(path: str | os.PathLike) -> Config:
    """Load and validate a config file; an empty file yields all defaults."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config parse failure in {path}: {exc}") from exc
    return from_dict(data, source_text=raw.decode("utf-8", errors="replace"))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return str(value)


def dump_config(config: Config) -> str:
    """Render a config as TOML; round-trips through parse_config exactly."""
    lines = []
    for section_field in fields(Config):
        section = getattr(config, section_field.name)
        lines.append(f"[{section_field.name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def default_config() -> Config:
    return Config()


def config_equal(a: Config, b: Config) -> bool:
    return dataclasses.asdict(a) == dataclasses.asdict(b)
