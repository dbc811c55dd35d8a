"""
Experiment table and run configuration.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from src.discovery import LibraryConfig
from src.errors import ConfigError, LibraryConfigError
from src.fno import FnoHyperparams

LATENT_SOURCES = ("predicted", "simulated")


@dataclass(frozen=True)
class ExperimentSetup:
    """
    Fixed recipe of one experiment id.

    Attributes:
        system: reference system name
        omega: angular frequency of the Sine training / test family
        matern: Matérn kernel used for the third test family
        noise_level: relative noise on the training displacement
        downsample_factor: stride applied to the training data
        baselines: whether SINDy / Lasso on raw data are run by default
        thresholds: STLSQ thresholds swept (None = the configured threshold)
    """
    system: str
    omega: float
    matern: str
    noise_level: float = 0.0
    downsample_factor: int = 1
    baselines: bool = False
    thresholds: tuple = None


EXPERIMENTS = {
    "exp1": ExperimentSetup("exp1", 4.0 * np.pi, "matern52"),
    "exp2": ExperimentSetup("exp2", 4.0 * np.pi, "matern52"),
    "exp3": ExperimentSetup("exp3", 2.0 * np.pi, "matern32"),
    "exp4": ExperimentSetup("exp4", 4.0 * np.pi, "matern32"),
    "exp5a": ExperimentSetup("exp1", 4.0 * np.pi, "matern52", noise_level=0.2, baselines=True),
    "exp5b": ExperimentSetup("exp1", 4.0 * np.pi, "matern52", downsample_factor=5, baselines=True),
    "exp6": ExperimentSetup("exp4", 4.0 * np.pi, "matern32", thresholds=(0.1, 0.01, 0.001)),
}

EXPERIMENT_IDS = ("exp1", "exp2", "exp3", "exp4", "exp5a", "exp5b", "exp6")


def unknown_experiment_message(name):
    return f"unknown experiment '{name}'; valid ids: {', '.join(EXPERIMENT_IDS)}"


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything a run depends on. Fields left as None take the value of the
    experiment's setup.
    """
    experiment: str = "exp1"
    seed: int = 0
    n: int = 100
    n_train: int = 1000
    n_test: int = 1000
    stage2_count: int = 500
    fno: FnoHyperparams = field(default_factory=FnoHyperparams)
    library: LibraryConfig = None
    threshold: float = 0.01
    thresholds: tuple = None
    stlsq_max_iter: int = 10
    lasso_alpha: float = 1e-3
    lasso_max_iter: int = 10000
    noise_level: float = None
    downsample_factor: int = None
    baselines: bool = None
    substeps: int = 10
    latent_source: str = "predicted"
    plot_samples: int = 3
    output_dir: str = "results"
    threads: int = 1

    @property
    def setup(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(unknown_experiment_message(self.experiment))
        return EXPERIMENTS[self.experiment]

    @property
    def effective_noise(self):
        return self.setup.noise_level if self.noise_level is None else self.noise_level

    @property
    def effective_factor(self):
        return self.setup.downsample_factor if self.downsample_factor is None else self.downsample_factor

    @property
    def effective_baselines(self):
        return self.setup.baselines if self.baselines is None else self.baselines

    @property
    def effective_thresholds(self):
        if self.thresholds is not None:
            return tuple(self.thresholds)
        return self.setup.thresholds or (self.threshold,)

    @property
    def train_points(self):
        """Grid size the operator is trained on, after downsampling."""
        return math.ceil(self.n / self.effective_factor)

    def library_config(self, state_count):
        return self.library or LibraryConfig.default_for(state_count)

    def validate(self):
        """Raise ConfigError for anything that would fail later in the run."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(unknown_experiment_message(self.experiment))
        for name in ("n_train", "n_test", "stage2_count", "substeps", "stlsq_max_iter", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n < 3:
            raise ConfigError(f"n must be at least 3, got {self.n}")
        if self.stage2_count > self.n_test:
            raise ConfigError(f"stage2_count {self.stage2_count} exceeds n_test {self.n_test}")
        if self.fno.batch_size > self.n_train:
            raise ConfigError(f"batch size {self.fno.batch_size} exceeds n_train {self.n_train}")
        if self.fno.modes > self.n // 2 + 1:
            raise ConfigError(f"{self.fno.modes} modes do not fit a grid of {self.n} points")
        thresholds = self.effective_thresholds
        if not thresholds or any(t < 0 for t in thresholds):
            raise ConfigError("thresholds must be a non-empty list of non-negative values")
        if self.effective_noise < 0:
            raise ConfigError("noise_level must be non-negative")
        factor = self.effective_factor
        if factor < 1 or factor > self.n or self.train_points < 3:
            raise ConfigError(f"downsample factor {factor} leaves too few points of {self.n}")
        if self.lasso_alpha <= 0:
            raise ConfigError("lasso_alpha must be positive")
        if self.latent_source not in LATENT_SOURCES:
            raise ConfigError(f"latent_source must be one of {LATENT_SOURCES}")
        if self.plot_samples < 0:
            raise ConfigError("plot_samples must be non-negative")
        return self

    def resolved(self):
        """Copy with the operator output channels matched to the system."""
        channels = 2 if self.setup.system in ("exp3", "exp4") else 1
        return replace(self, fno=replace(self.fno, out_channels=channels))

    def to_dict(self):
        """Snapshot recorded in manifests (output_dir is left out)."""
        data = asdict(self)
        data.pop("output_dir")
        data["fno"] = self.fno.to_dict()
        data["library"] = None if self.library is None else self.library.to_dict()
        data["thresholds"] = list(self.effective_thresholds)
        return data


def config_from_dict(data, **overrides):
    """
    Build a config from a JSON-like mapping, then apply non-None overrides.

    Unknown keys raise ConfigError.
    """
    known = {f.name for f in fields(ExperimentConfig)}
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        if isinstance(merged.get("fno"), dict):
            merged["fno"] = FnoHyperparams(**merged["fno"])
        if isinstance(merged.get("library"), dict):
            merged["library"] = LibraryConfig(**merged["library"])
        if merged.get("thresholds") is not None:
            merged["thresholds"] = tuple(merged["thresholds"])
        config = ExperimentConfig(**merged)
    except (TypeError, ValueError, LibraryConfigError) as error:
        raise ConfigError(f"invalid configuration: {error}") from error
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(unknown_experiment_message(config.experiment))
    # two-state systems always train a two-channel operator
    return config.resolved()


def load_config(path=None, **overrides):
    """
    Input: path - JSON file whose keys mirror ExperimentConfig (None = defaults)
           overrides - values that win over the file (None entries are ignored)
    Output: ExperimentConfig
    """
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as error:
            raise ConfigError(f"{path} is not valid JSON: {error}") from error
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a JSON object")
    return config_from_dict(data, **overrides)
