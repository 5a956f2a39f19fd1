"""Experiment config: dataclass blocks loaded from TOML files plus command-line overrides"""
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import toml

from ppisvrg.data import SyntheticSpec, forest_analog, galaxies_analog, true_calibration
from ppisvrg.calibration import make_calibration
from ppisvrg.losses import LossKind, LossModel
from ppisvrg.optim import OptConfig
from ppisvrg.inference import BootstrapConfig
from ppisvrg.harness import ProtocolConfig, default_protocol_opt
from ppisvrg.rng import child_seed, check_seed, STREAM_DATASET, STREAM_OPTIMIZER, \
    STREAM_BOOTSTRAP

# Configure logger
logger = logging.getLogger(__name__)

COMMANDS = ("gen", "optimize", "compare", "mc", "bound")
FORMATS = ("csv", "json")
PRESETS = {"forest": forest_analog, "galaxies": galaxies_analog}
SYNTHETIC_FIELDS = ("n", "N", "outcome_kind", "theta_star", "pred_noise_sigma", "flip_prob",
                    "prevalence", "dim")
OPTIMIZER_FIELDS = ("algorithm", "eta", "m", "m0", "S", "snapshot_rule", "record_every",
                    "theta0", "strict", "max_epoch_length")
BOOTSTRAP_FIELDS = ("B", "deflation", "tol")
PROTOCOL_FIELDS = ("gamma_grid", "reps", "methods", "theta_star", "pool_mean_target",
                   "fast_mode")


class ConfigError(ValueError):
    """An invalid config value; field is the dotted path of the offending key."""

    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


def _check_keys(section: str, values: Dict[str, Any], allowed) -> None:
    for key in values:
        if key not in allowed:
            path = f"{section}.{key}" if section else key
            raise ConfigError(path, f"unknown key, expected one of {', '.join(allowed)}")


@dataclass
class DatasetConfig:
    path: Optional[str] = None
    preset: Optional[str] = None
    synthetic: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "DatasetConfig":
        _check_keys("dataset", values, ("path", "preset") + SYNTHETIC_FIELDS)
        synthetic = {k: v for k, v in values.items() if k in SYNTHETIC_FIELDS}
        cfg = cls(path=values.get("path"), preset=values.get("preset"), synthetic=synthetic)
        if cfg.path is not None and (cfg.preset is not None or synthetic):
            raise ConfigError("dataset", "give exactly one dataset source: a path or synthetic fields")
        if cfg.preset is not None and cfg.preset not in PRESETS:
            raise ConfigError("dataset.preset", f"unknown preset '{cfg.preset}', "
                                                f"expected one of {', '.join(PRESETS)}")
        return cfg

    @property
    def is_synthetic(self) -> bool:
        return self.path is None

    def spec(self, seed: int) -> SyntheticSpec:
        """The synthetic spec, seeded from the experiment seed."""
        if not self.is_synthetic:
            raise ConfigError("dataset", "dataset is read from a file, not generated")
        dataset_seed = child_seed(seed, STREAM_DATASET)
        try:
            if self.preset is not None:
                return replace(PRESETS[self.preset](dataset_seed), **self.synthetic)
            return SyntheticSpec(seed=dataset_seed, **self.synthetic)
        except (TypeError, ValueError) as e:
            raise ConfigError("dataset", str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        values = dict(self.synthetic)
        if self.path is not None:
            values["path"] = self.path
        if self.preset is not None:
            values["preset"] = self.preset
        return values


@dataclass
class ModelConfig:
    kind: str = "mean_sq"
    regularization: float = 0.0
    aux_mode: str = "g_equals_ell"
    # None, "true" (the generator's exact map) or an inline table {kind = ..., ...}
    calibration: Any = None
    smoothness_lambda: Optional[float] = None
    strong_convexity_gamma: Optional[float] = None
    fit_intercept: bool = False
    compensated: bool = False

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        _check_keys("model", values, tuple(f.name for f in fields(cls)))
        return cls(**values)

    def build(self, spec: Optional[SyntheticSpec] = None) -> LossModel:
        try:
            calibration = None
            if self.calibration == "true":
                if spec is None:
                    raise ConfigError("model.calibration",
                                      "'true' calibration needs a synthetic dataset")
                calibration = true_calibration(spec)
            elif isinstance(self.calibration, dict):
                calibration = make_calibration(self.calibration)
            elif self.calibration is not None:
                raise ConfigError("model.calibration",
                                  f"expected 'true' or a table, got {self.calibration!r}")
            return LossModel(
                kind=self.kind, regularization=self.regularization, aux_mode=self.aux_mode,
                calibration=calibration, smoothness_lambda=self.smoothness_lambda,
                strong_convexity_gamma=self.strong_convexity_gamma,
                fit_intercept=self.fit_intercept, compensated=self.compensated)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError("model", str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}


@dataclass
class BoundConfig:
    seeds: int = 20
    max_violations: int = 0
    tolerance: float = 0.0
    floor: str = "auto"

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "BoundConfig":
        _check_keys("bound", values, tuple(f.name for f in fields(cls)))
        cfg = cls(**values)
        if cfg.seeds < 1:
            raise ConfigError("bound.seeds", f"must be at least 1, got {cfg.seeds}")
        if cfg.floor not in ("auto", "analytic", "residual"):
            raise ConfigError("bound.floor", f"expected auto, analytic or residual, got {cfg.floor}")
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class OutputConfig:
    dir: str = "out"
    format: str = "csv"
    jobs: int = 1

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "OutputConfig":
        _check_keys("output", values, tuple(f.name for f in fields(cls)))
        cfg = cls(**values)
        if cfg.format not in FORMATS:
            raise ConfigError("output.format", f"expected csv or json, got {cfg.format}")
        if cfg.jobs == 0:
            raise ConfigError("output.jobs", "must be non-zero (negative counts from the CPU count)")
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ExperimentConfig:
    """
    One reproducible experiment. Every random stream derives from seed:
    the dataset, optimizer and bootstrap seeds are child seeds of it and the
    protocol's master seed is the seed itself.
    """
    command: str = "optimize"
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: Dict[str, Any] = field(default_factory=dict)
    bootstrap: Dict[str, Any] = field(default_factory=dict)
    protocol: Dict[str, Any] = field(default_factory=dict)
    bound: BoundConfig = field(default_factory=BoundConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ExperimentConfig":
        _check_keys("", values, ("command", "seed", "dataset", "model", "optimizer",
                                 "bootstrap", "protocol", "bound", "output"))
        for section in ("dataset", "model", "optimizer", "bootstrap", "protocol", "bound",
                        "output"):
            if not isinstance(values.get(section, {}), dict):
                raise ConfigError(section, "must be a table")
        missing = [s for s in ("dataset", "model") if s not in values]
        for section in missing:
            logger.warning(f"No [{section}] section in config, using defaults")
        command = values.get("command", "optimize")
        if command not in COMMANDS:
            raise ConfigError("command", f"expected one of {', '.join(COMMANDS)}, got {command}")
        try:
            seed = check_seed(values.get("seed", 0))
        except (TypeError, ValueError) as e:
            raise ConfigError("seed", str(e)) from e
        optimizer = dict(values.get("optimizer", {}))
        bootstrap = dict(values.get("bootstrap", {}))
        protocol = dict(values.get("protocol", {}))
        _check_keys("optimizer", optimizer, OPTIMIZER_FIELDS)
        _check_keys("bootstrap", bootstrap, BOOTSTRAP_FIELDS)
        _check_keys("protocol", protocol, PROTOCOL_FIELDS)
        try:
            model = ModelConfig.from_dict(dict(values.get("model", {})))
            bound = BoundConfig.from_dict(dict(values.get("bound", {})))
            output = OutputConfig.from_dict(dict(values.get("output", {})))
        except TypeError as e:
            raise ConfigError("config", str(e)) from e
        cfg = cls(command=command, seed=seed,
                  dataset=DatasetConfig.from_dict(dict(values.get("dataset", {}))),
                  model=model, optimizer=optimizer, bootstrap=bootstrap, protocol=protocol,
                  bound=bound, output=output)
        # surface block errors at load time
        cfg.opt_config()
        cfg.bootstrap_config()
        return cfg

    def spec(self) -> Optional[SyntheticSpec]:
        return self.dataset.spec(self.seed) if self.dataset.is_synthetic else None

    def opt_config(self, **overrides) -> OptConfig:
        values = {**self.optimizer, **overrides}
        values.setdefault("seed", child_seed(self.seed, STREAM_OPTIMIZER))
        try:
            return OptConfig(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError("optimizer", str(e)) from e

    def bootstrap_config(self) -> BootstrapConfig:
        try:
            return BootstrapConfig(seed=child_seed(self.seed, STREAM_BOOTSTRAP), **self.bootstrap)
        except (TypeError, ValueError) as e:
            raise ConfigError("bootstrap", str(e)) from e

    def protocol_config(self, theta_star: Optional[float] = None,
                        model: Optional[LossModel] = None) -> ProtocolConfig:
        values = dict(self.protocol)
        if model is not None:
            if model.kind != LossKind.MEAN_SQ:
                raise ConfigError("model.kind",
                                  "the mc protocol estimates a mean and needs mean_sq")
            values["model"] = model
        if values.get("theta_star") is None and theta_star is not None:
            values["theta_star"] = theta_star
        opt = default_protocol_opt()
        if self.optimizer:
            opt = self.opt_config(**{k: getattr(opt, k) for k in ("eta", "m", "S", "record_every")
                                     if k not in self.optimizer})
        try:
            return ProtocolConfig(master_seed=self.seed, bootstrap=self.bootstrap_config(),
                                  opt=replace(opt, algorithm="ppi_svrg"), **values)
        except (TypeError, ValueError) as e:
            raise ConfigError("protocol", str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command, "seed": self.seed,
            "dataset": self.dataset.to_dict(), "model": self.model.to_dict(),
            "optimizer": dict(self.optimizer), "bootstrap": dict(self.bootstrap),
            "protocol": dict(self.protocol), "bound": self.bound.to_dict(),
            "output": self.output.to_dict(),
        }


def load_config_file(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as file:
        try:
            return toml.load(file)
        except toml.TomlDecodeError:
            logger.error(f"Failed to parse TOML from config file: {path}")
            raise


def parse_override(assignment: str) -> Tuple[List[str], Any]:
    """Split 'section.key=value'; the value is read as a TOML value, else kept as a string."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like section.key=value")
    path, text = assignment.split("=", 1)
    keys = [k.strip() for k in path.strip().split(".") if k.strip()]
    if not keys:
        raise ConfigError(assignment, "override has an empty key")
    try:
        value = toml.loads(f"value = {text.strip()}")["value"]
    except toml.TomlDecodeError:
        value = text.strip()
    return keys, value


def apply_overrides(values: Dict[str, Any], assignments: List[str]) -> Dict[str, Any]:
    values = {k: dict(v) if isinstance(v, dict) else v for k, v in values.items()}
    for assignment in assignments:
        keys, value = parse_override(assignment)
        node = values
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(".".join(keys), f"'{key}' is not a section")
        node[keys[-1]] = value
    return values
