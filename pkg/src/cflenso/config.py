"""Run configuration: an INI file with one section per concern.

``default_config_text()`` prints every key with its default value; any key
can be omitted from a user file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cfl import EXPECTATION_TOL
from .errors import ConfigError, DataError
from .grid import NINO34, PACIFIC_BAND, RegionSpec
from .regression import RegressorConfig
from .synthetic import SyntheticEnsoConfig, ToyConfig

SOURCES = ("synthetic", "toy", "files")


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    zw_path: str = ""
    sst_path: str = ""
    format: str = "auto"
    # files already smoothed and cropped (e.g. written by ``ingest``)
    preprocessed: bool = False


@dataclass(frozen=True)
class PreprocessSection:
    window_days: int = 7
    lag_steps: int = 0
    band_lat_min: float = PACIFIC_BAND.lat_min
    band_lat_max: float = PACIFIC_BAND.lat_max
    band_lon_min: float = PACIFIC_BAND.lon_min
    band_lon_max: float = PACIFIC_BAND.lon_max
    nino_lat_min: float = NINO34.lat_min
    nino_lat_max: float = NINO34.lat_max
    nino_lon_min: float = NINO34.lon_min
    nino_lon_max: float = NINO34.lon_max

    @property
    def band(self) -> RegionSpec:
        return RegionSpec(self.band_lat_min, self.band_lat_max, self.band_lon_min, self.band_lon_max)

    @property
    def nino(self) -> RegionSpec:
        return RegionSpec(self.nino_lat_min, self.nino_lat_max, self.nino_lon_min, self.nino_lon_max)


@dataclass(frozen=True)
class SyntheticSection:
    n_samples: int = 4000
    n_states: int = 4
    anomaly_amplitude: float = 2.0
    wind_noise: float = 1.0
    sst_noise: float = 0.5
    nuisance_amplitude: float = 6.0
    seasonal_amplitude: float = 0.5

    def generator_config(self, seed: int) -> SyntheticEnsoConfig:
        amps = [0.0] * self.n_states
        if self.n_states >= 2:
            amps[1] = self.anomaly_amplitude
        if self.n_states >= 3:
            amps[2] = -self.anomaly_amplitude
        return SyntheticEnsoConfig(
            n_samples=self.n_samples, n_states=self.n_states, anomaly_amplitudes=tuple(amps),
            wind_noise=self.wind_noise, sst_noise=self.sst_noise,
            nuisance_amplitude=self.nuisance_amplitude, seasonal_amplitude=self.seasonal_amplitude, seed=seed,
        )


@dataclass(frozen=True)
class ToySection:
    n_samples: int = 10_000
    # flatness of the k-NN rows is only measurable with many neighbours
    knn_k: int = 100

    def generator_config(self, seed: int) -> ToyConfig:
        return ToyConfig(self.n_samples, seed)


@dataclass(frozen=True)
class CflSection:
    kw: int = 4
    kt: int = 4
    knn_k: int = 3
    tol_tv: float = 0.05
    tol_expectation: float = EXPECTATION_TOL
    n_restarts: int = 10


@dataclass(frozen=True)
class RegressorSection:
    hidden_layer_sizes: tuple[int, ...] = RegressorConfig.hidden_layer_sizes
    activation: str = RegressorConfig.activation
    weight_decay: float = RegressorConfig.weight_decay
    learning_rate: float = RegressorConfig.learning_rate
    batch_size: int = RegressorConfig.batch_size
    max_epochs: int = RegressorConfig.max_epochs
    patience: int = RegressorConfig.patience
    validation_fraction: float = RegressorConfig.validation_fraction
    optimizer: str = RegressorConfig.optimizer

    def regressor_config(self) -> RegressorConfig:
        return RegressorConfig(**dataclasses.asdict(self))


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs/default"
    reshuffle_trials: int = 5
    k_values: tuple[int, ...] = tuple(range(2, 17))


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    toy: ToySection = field(default_factory=ToySection)
    cfl: CflSection = field(default_factory=CflSection)
    regressor: RegressorSection = field(default_factory=RegressorSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.data.source!r}")
        if self.data.source == "files" and not (self.data.zw_path and self.data.sst_path):
            raise ConfigError("data.source = files requires zw_path and sst_path")
        if self.data.format not in ("auto", "csv", "bin"):
            raise ConfigError(f"unknown data.format {self.data.format!r}")
        if self.cfl.kw < 1 or self.cfl.kt < 1 or self.cfl.knn_k < 1 or self.toy.knn_k < 1:
            raise ConfigError("kw, kt and knn_k must be >= 1")
        if not 0.0 <= self.cfl.tol_tv <= 1.0:
            raise ConfigError("tol_tv must lie in [0, 1]")
        if self.cfl.tol_expectation < 0:
            raise ConfigError("tol_expectation must be >= 0")
        if self.cfl.n_restarts < 1 or self.run.reshuffle_trials < 1:
            raise ConfigError("n_restarts and reshuffle_trials must be >= 1")
        if self.preprocess.window_days < 1 or self.preprocess.lag_steps < 0:
            raise ConfigError("window_days must be >= 1 and lag_steps >= 0")
        if not self.run.k_values or any(k < 1 for k in self.run.k_values):
            raise ConfigError("k_values must be a non-empty list of positive integers")
        try:
            self.regressor.regressor_config()
            self.synthetic.generator_config(self.run.seed)
            self.preprocess.band, self.preprocess.nino
        except DataError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc
    return raw


def config_to_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for sec in fields(cfg):
        section = getattr(cfg, sec.name)
        parser[sec.name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def default_config_text() -> str:
    return config_to_text(RunConfig())


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    base = RunConfig()
    known = {f.name for f in fields(base)}
    unknown = [s for s in parser.sections() if s not in known]
    if unknown:
        raise ConfigError(f"{origin}: unknown section(s) {unknown}")
    updates = {}
    for sec in fields(base):
        section = getattr(base, sec.name)
        if not parser.has_section(sec.name):
            continue
        names = {f.name for f in fields(section)}
        bad = [k for k in parser[sec.name] if k not in names]
        if bad:
            raise ConfigError(f"{origin}: unknown key(s) {bad} in [{sec.name}]")
        values = {k: _parse(v, getattr(section, k), f"{origin} [{sec.name}] {k}")
                  for k, v in parser[sec.name].items()}
        updates[sec.name] = replace(section, **values)
    return replace(base, **updates)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
