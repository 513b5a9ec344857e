#!/usr/bin/env python3

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from config import Config
from src.engines.benchmark_engine import MechanismBenchmark
from src.engines.gradcheck_engine import GradCheckEngine, GradCheckSettings
from src.engines.training_engine import (TrainConfig, TrainingEngine, evaluate, persistence_baseline,
                                         resolve_model_config)
from src.errors import AutoformerError, ConfigError, DataError
from src.models.autoformer import ModelConfig, load_model, save_model
from src.processors.data_processor import (DataConfig, Standardization, SyntheticSpec, TimeSeriesFrame,
                                           continue_timestamps, data_fingerprint, destandardize,
                                           generate_synthetic, load_csv, save_csv, select_features,
                                           time_features)
from src.processors.series_ops import series_decomp, validate_window
from src.renderers.report_renderer import RunManifest, write_decomposition_csv, write_json, write_jsonl

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.json'
SCALER_FILE = 'scaler.json'
HISTORY_FILE = 'history.jsonl'
METRICS_FILE = 'metrics.json'
MANIFEST_FILE = 'manifest.json'
RUN_CONFIG_SECTIONS = ('model', 'train', 'data')


def _read_json(path: str, what: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"{what} {path} must hold a JSON object")
    return document


def load_run_config(path: str, seed: Optional[int] = None) -> Tuple[ModelConfig, TrainConfig, DataConfig]:
    """Parse a run config; `seed` (or AUTOFORMER_DEFAULT_SEED) fills every unset seed"""
    document = _read_json(path, 'Run config')
    unknown = sorted(set(document) - set(RUN_CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown run config sections: {', '.join(unknown)}")
    model_section = dict(document.get('model', {}))
    train_section = dict(document.get('train', {}))
    default_seed = Config.DEFAULT_SEED if seed is None else seed
    for section in (model_section, train_section):
        if seed is not None or 'seed' not in section:
            section['seed'] = default_seed
    try:
        model_cfg = ModelConfig.from_dict(model_section)
        train_cfg = TrainConfig.from_dict(train_section)
        data_cfg = DataConfig.from_dict(document.get('data', {}))
        model_cfg.validate(require_data_dims=False)
        return model_cfg, train_cfg.validate(), data_cfg.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Malformed run config {path}: {e}")


def _failure(e: AutoformerError) -> Dict[str, Any]:
    logger.error(f"{type(e).__name__}: {e}")
    return {'success': False, 'error': str(e), 'exit_code': e.exit_code}


def _load_trained(model_dir: str):
    model = load_model(os.path.join(model_dir, MODEL_FILE))
    stats = Standardization.from_dict(_read_json(os.path.join(model_dir, SCALER_FILE), 'Scaler'))
    manifest = _read_json(os.path.join(model_dir, MANIFEST_FILE), 'Manifest')
    data_cfg = DataConfig.from_dict(manifest.get('data_config') or {}).validate()
    train_cfg = TrainConfig.from_dict(manifest.get('train_config') or {})
    return model, stats, data_cfg, train_cfg


def cmd_train(config_path: str, data_path: str, out_dir: str, seed: Optional[int] = None) -> Dict[str, Any]:
    """Train on a CSV and write model, scaler, history, metrics and manifest"""
    try:
        model_cfg, train_cfg, data_cfg = load_run_config(config_path, seed)
        frame = load_csv(data_path)
        result = TrainingEngine(model_cfg, train_cfg, data_cfg).run(frame)
        if not result['success']:
            return result

        manifest = RunManifest(command='train', seed=result['model'].config.seed,
                               model_config=result['model'].config.to_dict(),
                               train_config=train_cfg.to_dict(), data_config=data_cfg.to_dict(),
                               data=data_fingerprint(data_path))
        os.makedirs(out_dir, exist_ok=True)
        manifest.add_artifact(save_model(result['model'], os.path.join(out_dir, MODEL_FILE)))
        manifest.add_artifact(write_json(os.path.join(out_dir, SCALER_FILE), result['stats'].to_dict()))
        manifest.add_artifact(write_jsonl(os.path.join(out_dir, HISTORY_FILE), result['history']))
        manifest.add_artifact(write_json(os.path.join(out_dir, METRICS_FILE), {
            'units': 'standardized',
            'best_epoch': result['best_epoch'],
            'best_val_mse': result['best_val_mse'],
            'stopped_early': result['stopped_early'],
            'splits': result['metrics'],
        }))
        manifest.write(os.path.join(out_dir, MANIFEST_FILE))
        logger.info(f"✅ Training artifacts written to {out_dir}")
        return {'success': True, 'exit_code': 0, 'out_dir': out_dir, 'metrics': result['metrics'],
                'epochs': len(result['history'])}
    except AutoformerError as e:
        return _failure(e)


def cmd_eval(model_dir: str, data_path: str, split: str = 'test',
             out_path: Optional[str] = None) -> Dict[str, Any]:
    """MSE/MAE over every window of one split, with the persistence baseline alongside"""
    try:
        if split not in ('train', 'val', 'test'):
            raise ConfigError(f"split must be train, val or test, got {split!r}")
        model, stats, data_cfg, train_cfg = _load_trained(model_dir)
        frame = load_csv(data_path)
        engine = TrainingEngine(model.config, train_cfg, data_cfg)
        windows = engine.prepare_windows(frame, stats)['windows'][split]
        baseline = persistence_baseline(windows)
        metrics = {**evaluate(model, windows, train_cfg.batch_size),
                   'baseline_mse': baseline['mse'], 'baseline_mae': baseline['mae'],
                   'split': split, 'units': 'standardized'}
        path = out_path or os.path.join(model_dir, f'eval_{split}.json')
        write_json(path, metrics)
        return {'success': True, 'exit_code': 0, 'metrics': metrics, 'path': path}
    except AutoformerError as e:
        return _failure(e)


def cmd_forecast(model_dir: str, data_path: str, out_path: str) -> Dict[str, Any]:
    """Forecast the O steps after the last observation, in original units"""
    try:
        model, stats, data_cfg, _ = _load_trained(model_dir)
        cfg = model.config
        frame = stats.apply(select_features(load_csv(data_path), data_cfg))
        resolve_model_config(cfg, frame)
        if frame.length < cfg.input_len:
            raise DataError(f"Forecasting needs at least input_len={cfg.input_len} rows, got {frame.length}")

        recent = frame.slice(frame.length - cfg.input_len, frame.length)
        future = continue_timestamps(frame, cfg.pred_len)
        marks = time_features(recent)
        future_marks = time_features(recent, future)
        decoder_marks = np.concatenate([marks[cfg.input_len - cfg.label_len:], future_marks], axis=0)

        prediction = model.predict(recent.values, marks, decoder_marks)
        forecast = TimeSeriesFrame(future, destandardize(prediction, stats), list(frame.channels),
                                   frame.mark_origin, frame.mark_span)
        save_csv(forecast, out_path)
        logger.info(f"Forecast of {cfg.pred_len} steps written to {out_path}")
        return {'success': True, 'exit_code': 0, 'path': out_path, 'horizon': cfg.pred_len}
    except AutoformerError as e:
        return _failure(e)


def cmd_decompose(data_path: str, window: int, out_path: str) -> Dict[str, Any]:
    try:
        validate_window(window)
        frame = load_csv(data_path)
        pair = series_decomp(frame.values, window, axis=0)
        write_decomposition_csv(frame, pair.seasonal.numpy(), pair.trend.numpy(), out_path)
        return {'success': True, 'exit_code': 0, 'path': out_path, 'channels': frame.channels}
    except AutoformerError as e:
        return _failure(e)


def cmd_bench(mechanism: str, lengths: List[int], repeats: int = 10, out_path: Optional[str] = None,
              d_model: int = 32, n_heads: int = 1, seed: Optional[int] = None) -> Dict[str, Any]:
    """Mechanism-only forward timings and their log-log slope"""
    try:
        bench = MechanismBenchmark(mechanism, d_model=d_model, n_heads=n_heads,
                                   seed=Config.DEFAULT_SEED if seed is None else seed)
        table = bench.run(lengths, repeats)
        if out_path:
            write_json(out_path, table)
        return {'success': True, 'exit_code': 0, 'table': table}
    except AutoformerError as e:
        return _failure(e)


def cmd_gradcheck(config_path: str, corrupt: bool = False, out_path: Optional[str] = None,
                  seed: Optional[int] = None) -> Dict[str, Any]:
    """Exit 0 iff every gradient suite passes"""
    try:
        model_cfg, _, _ = load_run_config(config_path, seed)
        settings = GradCheckSettings(seed=model_cfg.seed, corrupt=corrupt)
        report = GradCheckEngine(model_cfg, settings).run()
        if out_path:
            write_json(out_path, report)
        report['exit_code'] = 0 if report['passed'] else 1
        return report
    except AutoformerError as e:
        return _failure(e)


def cmd_generate(spec_path: str, out_path: str, seed: Optional[int] = None) -> Dict[str, Any]:
    try:
        document = _read_json(spec_path, 'Synthetic spec')
        if seed is not None:
            document['seed'] = seed
        try:
            spec = SyntheticSpec.from_dict(document)
        except TypeError as e:
            raise ConfigError(f"Malformed synthetic spec {spec_path}: {e}")
        save_csv(generate_synthetic(spec), out_path)
        return {'success': True, 'exit_code': 0, 'path': out_path, 'rows': spec.length}
    except AutoformerError as e:
        return _failure(e)


def _lengths(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid length list: {text!r}; use e.g. '256,512,1024'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='autoformer',
                                     description="Decomposition forecasting with Auto-Correlation")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help="Train a model on a CSV")
    p.add_argument('--config', required=True, help="Run config JSON")
    p.add_argument('--data', required=True, help="CSV with a 'date' column")
    p.add_argument('--out', default=Config.OUTPUT_FOLDER, help="Output directory")
    p.add_argument('--seed', type=int, default=None)

    p = sub.add_parser('eval', help="Evaluate a trained model on one split")
    p.add_argument('--model', required=True, help="Directory written by 'train'")
    p.add_argument('--data', required=True)
    p.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    p.add_argument('--out', default=None, help="Metrics JSON path")

    p = sub.add_parser('forecast', help="Forecast past the end of a CSV")
    p.add_argument('--model', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--out', required=True, help="Forecast CSV path")

    p = sub.add_parser('decompose', help="Seasonal/trend split of every channel")
    p.add_argument('--data', required=True)
    p.add_argument('--window', type=int, default=25, help="Odd moving-average window")
    p.add_argument('--out', required=True)

    p = sub.add_parser('bench', help="Time a mechanism over series lengths")
    p.add_argument('--mechanism', default='autocorr_speedup')
    p.add_argument('--lengths', type=_lengths, default=[256, 512, 1024, 2048, 4096])
    p.add_argument('--repeats', type=int, default=10)
    p.add_argument('--d-model', type=int, default=32)
    p.add_argument('--heads', type=int, default=1)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None)

    p = sub.add_parser('gradcheck', help="Analytic versus numeric gradients")
    p.add_argument('--config', required=True)
    p.add_argument('--corrupt', action='store_true', help="Perturb analytic gradients (negative control)")
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None)

    p = sub.add_parser('generate', help="Write a synthetic series CSV")
    p.add_argument('--spec', required=True)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', required=True)
    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace], Dict[str, Any]]] = {
    'train': lambda a: cmd_train(a.config, a.data, a.out, a.seed),
    'eval': lambda a: cmd_eval(a.model, a.data, a.split, a.out),
    'forecast': lambda a: cmd_forecast(a.model, a.data, a.out),
    'decompose': lambda a: cmd_decompose(a.data, a.window, a.out),
    'bench': lambda a: cmd_bench(a.mechanism, a.lengths, a.repeats, a.out, a.d_model, a.heads, a.seed),
    'gradcheck': lambda a: cmd_gradcheck(a.config, a.corrupt, a.out, a.seed),
    'generate': lambda a: cmd_generate(a.spec, a.out, a.seed),
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=Config.LOG_LEVEL,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    args = build_parser().parse_args(argv)
    result = COMMANDS[args.command](args)

    if not result.get('success'):
        print(f"Error: {result['error']}", file=sys.stderr)
        return result['exit_code']

    printable = {k: v for k, v in result.items() if k not in ('success', 'exit_code')}
    print(json.dumps(printable, indent=2, default=str))
    return result['exit_code']
