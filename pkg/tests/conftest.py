import os

import numpy as np
import pytest

from src.models.autoformer import ModelConfig
from src.processors.data_processor import SyntheticSpec, generate_synthetic, save_csv

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(ROOT, 'configs')


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(7))


@pytest.fixture
def tiny_config():
    """End-to-end gradient-check sized model"""
    return ModelConfig(input_len=16, pred_len=8, n_channels=2, n_time_features=1, d_model=8,
                       n_heads=2, e_layers=1, d_layers=1, factor=1.0, moving_avg_window=5,
                       d_ff=16, mechanism='autocorr_speedup', seed=2021, dropout=0.0)


@pytest.fixture
def sine_csv(tmp_path):
    spec = SyntheticSpec(length=200, channels=2, periods=[12], trend_slope=0.0, noise_sd=0.05, seed=3)
    return save_csv(generate_synthetic(spec), str(tmp_path / 'sine.csv'))


def config_path(name: str) -> str:
    return os.path.join(CONFIG_DIR, name)


def assert_reconstructs(seasonal, trend, original):
    """seasonal + trend gives the input back to within two units in the last place"""
    seasonal, trend, original = (np.asarray(a, dtype=np.float64) for a in (seasonal, trend, original))
    scale = np.maximum.reduce([np.abs(seasonal), np.abs(trend), np.abs(original)])
    residual = np.abs((seasonal + trend) - original)
    assert np.all(residual <= 2 * np.spacing(scale)), f"worst residual {residual.max():.3e}"
