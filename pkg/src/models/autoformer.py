#!/usr/bin/env python3

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from src.autograd import tensor_core as tc
from src.autograd.tensor_core import Tensor, as_tensor, dropout
from src.errors import AutoformerError, ConfigError, ShapeError, require_number
from src.models.auto_correlation import AutoCorrelationLayer, MechanismKind
from src.models.layers import DataEmbedding, FeedForward, Linear, Module, SeriesDecompBlock
from src.processors.series_ops import validate_window

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'autoformer-model/1'
DECODER_PAST_OPTIONS = ('none', 'half', 'full')


@dataclass
class ModelConfig:
    """Architecture hyper-parameters; defaults follow the published operating point"""
    input_len: int = 96
    pred_len: int = 96
    n_channels: Optional[int] = None
    n_time_features: Optional[int] = None
    d_model: int = 512
    n_heads: int = 8
    e_layers: int = 2
    d_layers: int = 1
    factor: float = 1.0
    moving_avg_window: int = 25
    d_ff: Optional[int] = None
    mechanism: str = MechanismKind.AUTOCORR_SPEEDUP.value
    seed: int = 2021
    dropout: float = 0.0
    decoder_past: str = 'half'

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def label_len(self) -> int:
        """Past steps handed to the decoder: 0, floor(I/2) or I"""
        return {'none': 0, 'half': self.input_len // 2, 'full': self.input_len}[self.decoder_past]

    @property
    def decoder_len(self) -> int:
        return self.label_len + self.pred_len

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    def validate(self, require_data_dims: bool = True) -> 'ModelConfig':
        for name in ('input_len', 'pred_len', 'd_model', 'n_heads', 'e_layers', 'd_layers', 'seed'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.input_len < 2:
            raise ConfigError(f"input_len must be >= 2, got {self.input_len}")
        if self.pred_len < 1:
            raise ConfigError(f"pred_len must be >= 1, got {self.pred_len}")
        for name in ('n_channels', 'n_time_features'):
            value = getattr(self, name)
            if value is None:
                if require_data_dims:
                    raise ConfigError(f"{name} is unresolved; set it or derive it from the data")
            elif not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.e_layers < 1 or self.d_layers < 1:
            raise ConfigError("e_layers and d_layers must be >= 1")
        if self.d_ff is not None and (not isinstance(self.d_ff, int) or self.d_ff < 1):
            raise ConfigError(f"d_ff must be a positive integer, got {self.d_ff!r}")
        validate_window(self.moving_avg_window)
        if not 0.0 <= require_number('dropout', self.dropout) < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if require_number('factor', self.factor) <= 0:
            raise ConfigError(f"factor must be positive, got {self.factor}")
        MechanismKind.parse(self.mechanism)
        if self.decoder_past not in DECODER_PAST_OPTIONS:
            raise ConfigError(f"decoder_past must be one of {DECODER_PAST_OPTIONS}, got {self.decoder_past!r}")
        longest = max(self.input_len, self.decoder_len)
        if math.floor(self.factor * math.log(longest)) < 1:
            raise ConfigError(f"floor(factor * ln {longest}) < 1; increase factor")
        return self


def _stage(name: str, run: Callable[[], Any]) -> Any:
    try:
        return run()
    except AutoformerError as e:
        raise type(e)(f"Stage '{name}' failed: {e}") from e


def _with_batch(x: Any) -> Tensor:
    x = as_tensor(x)
    return x.reshape((1,) + x.shape) if x.ndim == 2 else x


def init_decoder_inputs(x_en: Any, cfg: ModelConfig) -> Tuple[Tensor, Tensor]:
    """Seasonal and trend decoder initialisations.

    The recent past (label_len rows) is decomposed; the horizon is filled
    with zeros (seasonal) and the per-channel mean of the latter input half
    (trend).
    """
    x_en = _with_batch(x_en)
    batch, length, channels = x_en.shape
    if length < 2:
        raise ConfigError(f"Decoder initialisation needs input_len >= 2, got {length}")
    half = length // 2
    label = {'none': 0, 'half': half, 'full': length}[cfg.decoder_past]
    horizon = cfg.pred_len

    mean = x_en[:, length - half:, :].mean(axis=1, keepdims=True)
    placeholder_trend = mean * Tensor(np.ones((batch, horizon, channels)))
    placeholder_seasonal = Tensor(np.zeros((batch, horizon, channels)))
    if label == 0:
        return placeholder_seasonal, placeholder_trend

    decomp = SeriesDecompBlock(cfg.moving_avg_window, 'decoder_init')
    seasonal, trend = decomp(x_en[:, length - label:, :])
    return (tc.concat([seasonal, placeholder_seasonal], axis=1),
            tc.concat([trend, placeholder_trend], axis=1))


class EncoderLayer(Module):
    """Auto-Correlation and feed-forward blocks, each followed by a decomposition whose trend is dropped"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, index: int):
        self.attention = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.factor, cfg.mechanism, rng)
        self.feed_forward = FeedForward(cfg.d_model, cfg.ff_width, cfg.dropout, rng)
        self.decomp1 = SeriesDecompBlock(cfg.moving_avg_window, f'encoder.{index}.decomp1')
        self.decomp2 = SeriesDecompBlock(cfg.moving_avg_window, f'encoder.{index}.decomp2')
        self.rate = cfg.dropout
        self.rng = rng

    def __call__(self, x: Tensor, training: bool = False,
                 trace: Optional[List[Dict[str, Any]]] = None) -> Tensor:
        attended = dropout(self.attention(x, training=training), self.rate, self.rng, training)
        seasonal, _ = self.decomp1(attended + x, trace)
        seasonal, _ = self.decomp2(self.feed_forward(seasonal, training) + seasonal, trace)
        return seasonal


class DecoderLayer(Module):
    """Inner and encoder-decoder Auto-Correlation plus feed-forward, accumulating three trend parts"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, index: int):
        self.self_attention = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.factor, cfg.mechanism, rng)
        self.cross_attention = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.factor, cfg.mechanism, rng)
        self.feed_forward = FeedForward(cfg.d_model, cfg.ff_width, cfg.dropout, rng)
        self.decomp1 = SeriesDecompBlock(cfg.moving_avg_window, f'decoder.{index}.decomp1')
        self.decomp2 = SeriesDecompBlock(cfg.moving_avg_window, f'decoder.{index}.decomp2')
        self.decomp3 = SeriesDecompBlock(cfg.moving_avg_window, f'decoder.{index}.decomp3')
        self.trend_projection1 = Linear(cfg.d_model, cfg.n_channels, rng)
        self.trend_projection2 = Linear(cfg.d_model, cfg.n_channels, rng)
        self.trend_projection3 = Linear(cfg.d_model, cfg.n_channels, rng)
        self.index = index
        self.rate = cfg.dropout
        self.rng = rng

    def __call__(self, x: Tensor, cross: Tensor, trend_in: Tensor, training: bool = False,
                 trace: Optional[List[Dict[str, Any]]] = None) -> Tuple[Tensor, Tensor]:
        if trend_in.shape[:2] != x.shape[:2]:
            raise ShapeError(f"Trend {trend_in.shape} does not match decoder input {x.shape}")
        attended = dropout(self.self_attention(x, training=training), self.rate, self.rng, training)
        seasonal, trend1 = self.decomp1(attended + x, trace)
        attended = dropout(self.cross_attention(seasonal, cross, training=training),
                           self.rate, self.rng, training)
        seasonal, trend2 = self.decomp2(attended + seasonal, trace)
        seasonal, trend3 = self.decomp3(self.feed_forward(seasonal, training) + seasonal, trace)

        contribution = (self.trend_projection1(trend1) + self.trend_projection2(trend2)
                        + self.trend_projection3(trend3))
        if trace is not None:
            trace.append({'stage': f'decoder.{self.index}.trend', 'contribution': contribution.data})
        return seasonal, trend_in + contribution


class AutoformerModel(Module):
    """Decomposition encoder-decoder with Auto-Correlation; one-step generation of O steps"""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg.validate()
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.enc_embedding = DataEmbedding(cfg.n_channels, cfg.n_time_features, cfg.d_model,
                                           cfg.dropout, self.rng)
        self.dec_embedding = DataEmbedding(cfg.n_channels, cfg.n_time_features, cfg.d_model,
                                           cfg.dropout, self.rng)
        self.encoder = [EncoderLayer(cfg, self.rng, i) for i in range(cfg.e_layers)]
        self.decoder = [DecoderLayer(cfg, self.rng, i) for i in range(cfg.d_layers)]
        self.projection = Linear(cfg.d_model, cfg.n_channels, self.rng)
        logger.info(f"Autoformer built: {self.parameter_count()} parameters, "
                    f"mechanism={cfg.mechanism}, I={cfg.input_len}, O={cfg.pred_len}")

    def _check_inputs(self, x_enc: Tensor, marks_enc: Tensor, marks_dec: Tensor):
        cfg = self.config
        expected = {
            'encoder values': (x_enc, (cfg.input_len, cfg.n_channels)),
            'encoder time marks': (marks_enc, (cfg.input_len, cfg.n_time_features)),
            'decoder time marks': (marks_dec, (cfg.decoder_len, cfg.n_time_features)),
        }
        for label, (tensor, tail) in expected.items():
            if tensor.ndim != 3 or tensor.shape[1:] != tail:
                raise ShapeError(f"{label}: expected (B, {tail[0]}, {tail[1]}), got {tensor.shape}")
        if not x_enc.shape[0] == marks_enc.shape[0] == marks_dec.shape[0]:
            raise ShapeError("Batch extents of values and time marks differ")

    def __call__(self, x_enc: Any, marks_enc: Any, marks_dec: Any, training: bool = False,
                 trace: Optional[List[Dict[str, Any]]] = None) -> Tensor:
        return self.forward(x_enc, marks_enc, marks_dec, training, trace)

    def forward(self, x_enc: Any, marks_enc: Any, marks_dec: Any, training: bool = False,
                trace: Optional[List[Dict[str, Any]]] = None) -> Tensor:
        """Prediction (B, O, d); an unbatched I x d input gives an O x d prediction"""
        unbatched = as_tensor(x_enc).ndim == 2
        x_enc, marks_enc, marks_dec = _with_batch(x_enc), _with_batch(marks_enc), _with_batch(marks_dec)
        _stage('inputs', lambda: self._check_inputs(x_enc, marks_enc, marks_dec))

        enc = _stage('embed', lambda: self.enc_embedding(x_enc, marks_enc, training))
        for layer in self.encoder:
            enc = _stage('encoder', lambda: layer(enc, training, trace))

        seasonal_init, trend = _stage('decoder_init', lambda: init_decoder_inputs(x_enc, self.config))
        dec = _stage('embed', lambda: self.dec_embedding(seasonal_init, marks_dec, training))
        for layer in self.decoder:
            dec, trend = _stage('decoder', lambda: layer(dec, enc, trend, training, trace))

        prediction = _stage('projection', lambda: self.projection(dec) + trend)
        prediction = prediction[:, -self.config.pred_len:, :]
        return prediction.reshape(prediction.shape[1:]) if unbatched else prediction

    def predict(self, x_enc: Any, marks_enc: Any, marks_dec: Any) -> np.ndarray:
        return self.forward(x_enc, marks_enc, marks_dec, training=False).numpy()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ConfigError(f"Parameter set mismatch; missing={missing[:5]}, unexpected={extra[:5]}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(f"Parameter '{name}' has shape {value.shape}, expected {tensor.shape}")
            tensor.data[...] = value


def save_model(model: AutoformerModel, path: str) -> str:
    """Single JSON document: config plus path -> {shape, values}"""
    document = {
        'format': MODEL_FORMAT,
        'config': model.config.to_dict(),
        'parameters': {
            name: {'shape': list(p.shape), 'values': p.data.reshape(-1).tolist()}
            for name, p in model.named_parameters().items()
        },
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f)
    logger.info(f"Model saved: {path}")
    return path


def load_model(path: str) -> AutoformerModel:
    with open(path, 'r', encoding='utf-8') as f:
        document = json.load(f)
    if document.get('format') != MODEL_FORMAT:
        raise ConfigError(f"{path} is not a saved model ({document.get('format')!r})")
    cfg = ModelConfig.from_dict(document['config']).validate()
    model = AutoformerModel(cfg)
    state = {}
    for name, entry in document['parameters'].items():
        values = np.asarray(entry['values'], dtype=np.float64)
        shape = tuple(entry['shape'])
        if values.size != int(np.prod(shape)):
            raise ShapeError(f"Parameter '{name}' stores {values.size} values for shape {shape}")
        state[name] = values.reshape(shape)
    model.load_state_dict(state)
    return model
