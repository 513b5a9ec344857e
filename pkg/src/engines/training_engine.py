#!/usr/bin/env python3

import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from config import Config
from src.autograd.tensor_core import GradientTape, Tensor
from src.errors import AutoformerError, ConfigError, NumericError, ShapeError, require_number
from src.models.autoformer import AutoformerModel, ModelConfig
from src.optimizers.adam_optimizer import AdamOptimizer
from src.processors.data_processor import (DataConfig, Standardization, TimeSeriesFrame, WindowStack,
                                           chronological_split, make_windows, select_features,
                                           stack_windows, standardize)

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 2021
    min_delta: float = 0.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown train config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> 'TrainConfig':
        if not require_number('learning_rate', self.learning_rate) > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ('batch_size', 'max_epochs', 'patience'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.patience > self.max_epochs:
            raise ConfigError(f"patience={self.patience} exceeds max_epochs={self.max_epochs}")
        if require_number('min_delta', self.min_delta) < 0:
            raise ConfigError(f"min_delta must be >= 0, got {self.min_delta}")
        return self


@dataclass
class TrainingResult:
    model: AutoformerModel
    history: List[Dict[str, Any]]
    best_epoch: int
    best_val_mse: float
    stopped_early: bool


def _check_pair(pred: np.ndarray, target: np.ndarray):
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction {pred.shape} and target {target.shape} differ in shape")
    if pred.size == 0:
        raise ShapeError("Metrics need at least one value")


def mse(pred: Any, target: Any) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred: Any, target: Any) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def predict_windows(model: AutoformerModel, windows: WindowStack, batch_size: int = 32) -> np.ndarray:
    """Inference-mode forecasts for every window, in window order"""
    outputs = []
    for start in range(0, len(windows), batch_size):
        batch = windows.take(range(start, min(start + batch_size, len(windows))))
        outputs.append(model.predict(batch.encoder_values, batch.encoder_marks, batch.decoder_marks))
    return np.concatenate(outputs, axis=0)


def evaluate(model: AutoformerModel, windows: WindowStack, batch_size: int = 32) -> Dict[str, Any]:
    predictions = predict_windows(model, windows, batch_size)
    return {'mse': mse(predictions, windows.target), 'mae': mae(predictions, windows.target),
            'n_windows': len(windows)}


def persistence_forecast(windows: WindowStack) -> np.ndarray:
    """Repeat the last encoder value over the horizon"""
    horizon = windows.target.shape[1]
    return np.repeat(windows.encoder_values[:, -1:, :], horizon, axis=1)


def persistence_baseline(windows: WindowStack) -> Dict[str, float]:
    baseline = persistence_forecast(windows)
    return {'mse': mse(baseline, windows.target), 'mae': mae(baseline, windows.target)}


def _batch_loss(model: AutoformerModel, batch: WindowStack) -> Tensor:
    prediction = model(batch.encoder_values, batch.encoder_marks, batch.decoder_marks, training=True)
    diff = prediction - Tensor(batch.target)
    return (diff * diff).mean()


def train(model: AutoformerModel, train_windows: WindowStack, val_windows: WindowStack,
          cfg: TrainConfig, record_wall_time: Optional[bool] = None,
          on_epoch: Optional[Callable[[Dict[str, Any]], None]] = None) -> TrainingResult:
    """Mini-batch Adam on the L2 loss with early stopping on validation MSE.

    The parameters with the best validation MSE are restored before returning.
    """
    cfg.validate()
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ShapeError("Training needs non-empty train and validation window sets")
    record_wall_time = Config.RECORD_WALL_TIME if record_wall_time is None else record_wall_time

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = model.named_parameters()
    optimizer = AdamOptimizer(params, learning_rate=cfg.learning_rate)

    history: List[Dict[str, Any]] = []
    best_val, best_epoch, best_state = np.inf, 0, model.state_dict()
    stale_epochs = 0
    stopped_early = False

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_windows))
        squared_error, count = 0.0, 0

        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_windows.take(order[start:start + cfg.batch_size])
            try:
                with GradientTape() as tape:
                    loss = _batch_loss(model, batch)
                optimizer.step(tape.gradient(loss, params))
            except NumericError as e:
                logger.error(f"Non-finite values at epoch {epoch}, batch {batch_index}")
                raise NumericError(f"Training aborted at epoch {epoch}, batch {batch_index}: {e}") from e
            squared_error += loss.item() * batch.target.size
            count += batch.target.size

        train_mse = squared_error / count
        val_mse = evaluate(model, val_windows, cfg.batch_size)['mse']
        record = {
            'epoch': epoch,
            'train_mse': train_mse,
            'val_mse': val_mse,
            'wall_seconds': time.perf_counter() - started if record_wall_time else None,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)

        if val_mse < best_val - cfg.min_delta:
            best_val, best_epoch, best_state = val_mse, epoch, model.state_dict()
            stale_epochs = 0
        else:
            stale_epochs += 1
        logger.info(f"Epoch {epoch}: train_mse={train_mse:.6f} val_mse={val_mse:.6f} "
                    f"(best {best_val:.6f} @ {best_epoch})")
        if stale_epochs >= cfg.patience:
            stopped_early = True
            logger.info(f"Early stopping after {epoch} epochs; no improvement for {cfg.patience}")
            break

    model.load_state_dict(best_state)
    return TrainingResult(model=model, history=history, best_epoch=best_epoch,
                          best_val_mse=float(best_val), stopped_early=stopped_early)


def resolve_model_config(cfg: ModelConfig, frame: TimeSeriesFrame) -> ModelConfig:
    """Fill n_channels / n_time_features from the data and check explicit values against it"""
    resolved = replace(cfg)
    for name, actual in (('n_channels', frame.n_channels), ('n_time_features', frame.n_time_features)):
        declared = getattr(resolved, name)
        if declared is None:
            setattr(resolved, name, actual)
        elif declared != actual:
            raise ShapeError(f"Config {name}={declared} but the data provides {actual}")
    return resolved.validate()


class TrainingEngine:
    """Forecasting pipeline: features, splits, scaling, windows, training, evaluation"""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, data_cfg: DataConfig):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg.validate()
        self.data_cfg = data_cfg.validate()

    def prepare_windows(self, frame: TimeSeriesFrame,
                        stats: Optional[Standardization] = None) -> Dict[str, Any]:
        """Split chronologically, standardize with train statistics, cut windows"""
        frame = select_features(frame, self.data_cfg)
        model_cfg = resolve_model_config(self.model_cfg, frame)
        min_length = model_cfg.input_len + model_cfg.pred_len
        splits = chronological_split(frame, self.data_cfg.split_ratios, min_length=min_length)
        if stats is None:
            splits, stats = standardize(*splits)
        else:
            splits = tuple(stats.apply(s) for s in splits)
        windows = {
            name: stack_windows(make_windows(split, model_cfg.input_len, model_cfg.pred_len,
                                             stride=self.data_cfg.stride, label_len=model_cfg.label_len))
            for name, split in zip(SPLITS, splits)
        }
        return {'model_config': model_cfg, 'stats': stats, 'windows': windows, 'frame': frame}

    def run(self, frame: TimeSeriesFrame, record_wall_time: Optional[bool] = None) -> Dict[str, Any]:
        start_time = time.time()
        try:
            logger.info("Phase 1: Data preparation...")
            prepared = self.prepare_windows(frame)
            windows = prepared['windows']
            logger.info("Windows: " + ', '.join(f"{k}={len(v)}" for k, v in windows.items()))

            logger.info("Phase 2: Model construction...")
            model = AutoformerModel(prepared['model_config'])

            logger.info("Phase 3: Training...")
            result = train(model, windows['train'], windows['val'], self.train_cfg,
                           record_wall_time=record_wall_time)

            logger.info("Phase 4: Evaluation...")
            metrics = {
                name: {**evaluate(result.model, windows[name], self.train_cfg.batch_size),
                       'baseline_mse': persistence_baseline(windows[name])['mse'],
                       'baseline_mae': persistence_baseline(windows[name])['mae']}
                for name in SPLITS
            }
            processing_time = time.time() - start_time
            logger.info(f"Training pipeline completed in {processing_time:.2f}s; "
                        f"test mse={metrics['test']['mse']:.6f} baseline={metrics['test']['baseline_mse']:.6f}")
            return {
                'success': True,
                'model': result.model,
                'history': result.history,
                'best_epoch': result.best_epoch,
                'best_val_mse': result.best_val_mse,
                'stopped_early': result.stopped_early,
                'stats': prepared['stats'],
                'metrics': metrics,
                'processing_time': processing_time,
            }
        except AutoformerError as e:
            logger.error(f"Training pipeline error: {e}")
            return {'success': False, 'error': str(e), 'exit_code': e.exit_code}
