import os
import json
import copy
import logging
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

from .d2r import EvalConfig, target_label
from .evaluator import ENDPOINT_ENV
from .evolve import EsConfig, GaConfig
from .exceptions import ConfigurationError
from .helpers import PathLike
from .p2i import ArchConfig
from .sim_core import SimConfig

logger = logging.getLogger(__name__)

OPTIMIZERS = ("es", "ga")

# profile -> (epochs, seeds, generations)
PROFILES = {
    "desk":  {"epochs": 5,  "seeds": 10, "generations": 30},
    "paper": {"epochs": 30, "seeds": 30, "generations": 50},
}

_NESTED = {
    "sim":  SimConfig,
    "eval": EvalConfig,
    "es":   EsConfig,
    "ga":   GaConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A full evolution campaign: one optimizer run per (grid size, seed index).

    Attributes:
        prompt: The instruction the controller is evolved for.
        grid_sizes: Vector field resolutions to run.
        seeds: Runs per grid size.
        optimizer: "es" or "ga".
        sim, eval, es, ga: Component configs.
        hidden_dims, output_scale: Controller architecture, the grid size
            comes from grid_sizes.
        output_dir: Campaign directory.
        base_seed: Root of the run seed ladder.
        workers: Runs executed concurrently.
        profile: "desk" or "paper", the defaults the config was built from.
        embeddings: Optional embedding table file.
    """

    prompt: str = "Cluster!"
    grid_sizes: Tuple[int, ...] = (2, 3, 5, 10)
    seeds: int = 10
    optimizer: str = "es"
    sim: SimConfig = field(default_factory=SimConfig)
    eval: EvalConfig = field(default_factory=lambda: EvalConfig(epochs=5))
    es: EsConfig = field(default_factory=lambda: EsConfig(generations=30))
    ga: GaConfig = field(default_factory=lambda: GaConfig(generations=30))
    hidden_dims: Tuple[int, ...] = (64,)
    output_scale: float = 1.0
    output_dir: str = "runs"
    base_seed: int = 0
    workers: int = 1
    profile: str = "desk"
    embeddings: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "grid_sizes", tuple(self.grid_sizes))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        self.validate()

    def validate(self) -> None:
        if not self.grid_sizes:
            raise ConfigurationError("grid_sizes must not be empty", field="grid_sizes")
        for n in self.grid_sizes:
            if not isinstance(n, int) or n < 2:
                raise ConfigurationError(f"grid sizes must be integers >= 2, got {n!r}", field="grid_sizes")
        if not isinstance(self.seeds, int) or self.seeds < 1:
            raise ConfigurationError(f"seeds must be >= 1, got {self.seeds!r}", field="seeds")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}",
                                     field="optimizer")
        if self.profile not in PROFILES:
            raise ConfigurationError(f"profile must be one of {sorted(PROFILES)}, got {self.profile!r}",
                                     field="profile")
        if not isinstance(self.base_seed, int) or self.base_seed < 0:
            raise ConfigurationError("base_seed must be a non-negative integer", field="base_seed")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigurationError("workers must be >= 1", field="workers")
        if not self.output_dir:
            raise ConfigurationError("output_dir must not be empty", field="output_dir")
        target_label(self.prompt)
        # surfaces architecture errors before any run starts
        self.arch_for(self.grid_sizes[0])

    def arch_for(self, grid_n: int) -> ArchConfig:
        return ArchConfig(grid_n=grid_n, hidden_dims=self.hidden_dims, output_scale=self.output_scale)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _NESTED:
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            d[f.name] = value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigurationError(f"experiment config must be a JSON object, got {type(data).__name__}")

        known   = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown experiment field(s): {', '.join(unknown)}", field=unknown[0])

        kwargs = dict(data)
        for name, config_cls in _NESTED.items():
            if name in kwargs and isinstance(kwargs[name], dict):
                kwargs[name] = config_cls.from_dict(kwargs[name])
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigurationError(f"invalid experiment config: {e}") from e


def profile_defaults(profile: str) -> dict:
    """
    Nested config dict holding a profile's epochs, seeds and generations.
    """

    if profile not in PROFILES:
        raise ConfigurationError(f"profile must be one of {sorted(PROFILES)}, got {profile!r}", field="profile")

    p = PROFILES[profile]
    return {
        "profile": profile,
        "seeds":   p["seeds"],
        "eval":    {"epochs": p["epochs"]},
        "es":      {"generations": p["generations"]},
        "ga":      {"generations": p["generations"]},
    }


def deep_merge(base: dict, override: dict) -> dict:
    """
    Merge override into a copy of base; nested dicts merge key by key.
    """

    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config_file(path: PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def resolve_config(file_data: Optional[dict] = None, flags: Optional[dict] = None,
                   profile: Optional[str] = None) -> ExperimentConfig:
    """
    Resolve an ExperimentConfig: flags override the config file, which
    overrides the profile defaults, which override the dataclass defaults.
    ZAPFIELD_EVALUATOR_URL fills the evaluator endpoint when nothing else does.

    Args:
        file_data (dict): Parsed config file, nested like ExperimentConfig.to_dict().
        flags (dict): Values given on the command line, same nesting.
        profile (str): Profile forced on the command line.

    Returns:
        ExperimentConfig: The resolved config.
    """

    file_data = file_data or {}
    flags     = flags or {}

    chosen = profile or flags.get("profile") or file_data.get("profile") or "desk"
    data   = deep_merge(profile_defaults(chosen), file_data)
    data   = deep_merge(data, flags)
    data["profile"] = chosen

    if not data.get("eval", {}).get("endpoint") and os.environ.get(ENDPOINT_ENV):
        data.setdefault("eval", {})["endpoint"] = os.environ[ENDPOINT_ENV]

    config = ExperimentConfig.from_dict(data)
    logger.debug("resolved experiment config: %s", config.to_dict())
    return config
