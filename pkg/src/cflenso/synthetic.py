"""Datasets with known macro-structure.

``toy_generate`` draws independent inputs and outputs from the two-band
uniform distribution, so the correct answer is a single input state.

``enso_like_generate`` plants ``n_states`` input macro-states.  Each state has
its own wind mean field and its own SST mean field; two states push the SST in
the anomaly region up and down by the configured amplitudes.  On top of that
the SST carries a state-independent coastal pattern of large amplitude and a
small seasonal cycle, so the largest spatial variance of the SST is unrelated
to the wind and plain clustering of SST maps is drawn away from the anomaly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import NINO34, FieldSeries, PairedDataset, RegionSpec, flatten_pairs

TOY_BANDS = ((0.2, 0.4), (0.6, 0.8))


@dataclass(frozen=True)
class ToyConfig:
    n_samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")


def _two_band(rng, n):
    band = rng.integers(0, 2, size=n)
    lo = np.array([b[0] for b in TOY_BANDS])[band]
    hi = np.array([b[1] for b in TOY_BANDS])[band]
    return lo + (hi - lo) * rng.random(n)


def toy_generate(cfg: ToyConfig = ToyConfig()) -> PairedDataset:
    rng = np.random.default_rng(cfg.seed)
    x = _two_band(rng, cfg.n_samples)
    y = _two_band(rng, cfg.n_samples)
    return PairedDataset(X=x.reshape(-1, 1), Y=y.reshape(-1, 1), time=np.arange(cfg.n_samples),
                         x_grid=(1, 1), y_grid=(1, 1))


@dataclass(frozen=True)
class SyntheticEnsoConfig:
    n_samples: int = 4000
    lat_count: int = 9
    lon_count: int = 55
    lat_start: float = -10.0
    lat_step: float = 2.5
    lon_start: float = 142.5
    lon_step: float = 2.5
    n_states: int = 4
    state_probs: tuple[float, ...] | None = None
    wind_amplitude: float = 3.0
    wind_noise: float = 1.0
    sst_pattern_amplitude: float = 1.5
    sst_noise: float = 0.5
    anomaly_amplitudes: tuple[float, ...] = (0.0, 2.0, -2.0, 0.0)
    anomaly_region: RegionSpec = NINO34
    nuisance_amplitude: float = 6.0
    nuisance_lon_min: float = 245.0
    seasonal_amplitude: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 1:
            raise ConfigError("n_states must be >= 1")
        if self.n_samples < 0 or self.lat_count < 1 or self.lon_count < 1:
            raise ConfigError("n_samples must be >= 0 and the grid non-empty")
        if len(self.anomaly_amplitudes) != self.n_states:
            raise ConfigError(f"anomaly_amplitudes needs {self.n_states} entries, "
                              f"got {len(self.anomaly_amplitudes)}")
        if self.state_probs is not None:
            p = np.asarray(self.state_probs, dtype=float)
            if p.size != self.n_states or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ConfigError("state_probs must be a probability vector over the states")
        if min(self.wind_noise, self.sst_noise, self.nuisance_amplitude) < 0:
            raise ConfigError("noise scales must be >= 0")

    @property
    def lats(self) -> np.ndarray:
        return self.lat_start + self.lat_step * np.arange(self.lat_count)

    @property
    def lons(self) -> np.ndarray:
        return np.mod(self.lon_start + self.lon_step * np.arange(self.lon_count), 360.0)


@dataclass
class SyntheticEnso:
    data: PairedDataset
    zw: FieldSeries
    sst: FieldSeries
    states: np.ndarray
    injected_anomaly: np.ndarray
    wind_means: np.ndarray
    sst_means: np.ndarray
    anomaly_mask: np.ndarray
    meta: dict = field(default_factory=dict)


def _blob(lats, lons, lat_c, lon_c, lat_w, lon_w):
    return np.exp(-0.5 * (((lats[:, None] - lat_c) / lat_w) ** 2 + ((lons[None, :] - lon_c) / lon_w) ** 2))


def state_mean_fields(cfg: SyntheticEnsoConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Wind and SST mean fields for every state plus the anomaly mask."""
    lats, lons = cfg.lats, cfg.lons
    lon_lo, lon_hi = float(lons.min()), float(lons.max())
    lat_lo, lat_hi = float(lats.min()), float(lats.max())
    span = max(lon_hi - lon_lo, cfg.lon_step)
    lat_w = max((lat_hi - lat_lo) / 4.0, cfg.lat_step)
    mask = cfg.anomaly_region.cell_mask(lats, lons).astype(float)

    # background: easterlies, warm pool in the west cooling eastward
    wind_base = -5.0 + 2.0 * np.cos(np.deg2rad(lats))[:, None] * np.ones((1, lons.size))
    sst_base = 29.0 - 5.0 * (lons[None, :] - lon_lo) / span - 0.05 * lats[:, None] ** 2

    wind, sst = [], []
    for s in range(cfg.n_states):
        lon_c = lon_lo + (s + 0.5) * span / cfg.n_states
        lat_c = (lat_hi if s % 2 == 0 else lat_lo) / 2.0
        sign = 1.0 if s % 2 == 0 else -1.0
        wind.append(wind_base + sign * cfg.wind_amplitude * _blob(lats, lons, lat_c, lon_c, lat_w, span / 8))
        pattern = sign * cfg.sst_pattern_amplitude * _blob(lats, lons, -lat_c, lon_c, lat_w, span / 8)
        sst.append(sst_base + pattern * (1.0 - mask) + cfg.anomaly_amplitudes[s] * mask)
    return np.stack(wind), np.stack(sst), mask.astype(bool)


def _check_separation(means, noise, what):
    flat = means.reshape(means.shape[0], -1)
    for a in range(flat.shape[0]):
        for b in range(a + 1, flat.shape[0]):
            d = float(np.linalg.norm(flat[a] - flat[b]))
            if d < 3.0 * noise or d == 0.0:
                raise ConfigError(f"{what} mean fields of states {a} and {b} are {d:.3g} apart, "
                                  f"need >= 3 x noise ({3.0 * noise:.3g}) and > 0")


def enso_like_generate(cfg: SyntheticEnsoConfig = SyntheticEnsoConfig()) -> SyntheticEnso:
    """Draw i.i.d. daily samples with planted states.

    Returns the paired dataset (ground-truth state in ``truth_w`` and
    ``truth_t``), the two field series, and the injected anomaly amplitude of
    every sample.
    """
    wind_means, sst_means, mask = state_mean_fields(cfg)
    _check_separation(wind_means, cfg.wind_noise, "wind")
    _check_separation(sst_means, cfg.sst_noise, "SST")

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    probs = None if cfg.state_probs is None else np.asarray(cfg.state_probs, dtype=float)
    states = rng.choice(cfg.n_states, size=n, p=probs)
    shape = (n, cfg.lat_count, cfg.lon_count)
    zw = wind_means[states] + cfg.wind_noise * rng.standard_normal(shape)

    coastal = (cfg.lons >= cfg.nuisance_lon_min)[None, :] & np.ones((cfg.lat_count, 1), dtype=bool)
    nuisance = rng.uniform(-cfg.nuisance_amplitude, cfg.nuisance_amplitude, size=n)
    days = np.arange(n)
    season = cfg.seasonal_amplitude * np.sin(2.0 * np.pi * np.mod(days, 365) / 365.0)
    sst = (sst_means[states]
           + nuisance[:, None, None] * coastal[None]
           + season[:, None, None]
           + cfg.sst_noise * rng.standard_normal(shape))

    geo = dict(lat_start=cfg.lat_start, lat_step=cfg.lat_step, lon_start=cfg.lon_start, lon_step=cfg.lon_step)
    zw_series = FieldSeries(zw, days, **geo)
    sst_series = FieldSeries(sst, days, **geo)
    data = flatten_pairs(zw_series, sst_series, 0)
    data.truth_w = states.astype(np.int64)
    data.truth_t = states.astype(np.int64)
    injected = np.asarray(cfg.anomaly_amplitudes, dtype=float)[states]
    return SyntheticEnso(data, zw_series, sst_series, states, injected, wind_means, sst_means, mask,
                         meta={"generator": "enso_like", "seed": cfg.seed})
