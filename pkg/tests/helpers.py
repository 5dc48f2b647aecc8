from cflenso.regression import RegressorConfig
from cflenso.synthetic import SyntheticEnsoConfig

# 4 x 12 grid spanning the same band at coarse resolution; keeps pipeline tests fast
SMALL_GRID = dict(lat_count=4, lon_count=12, lat_start=-7.5, lat_step=5.0, lon_start=145.0, lon_step=12.0)
FAST_REG = RegressorConfig(hidden_layer_sizes=(32, 32), max_epochs=60, patience=10)


def small_enso(**kw) -> SyntheticEnsoConfig:
    return SyntheticEnsoConfig(**{**SMALL_GRID, "n_samples": 3000, **kw})
