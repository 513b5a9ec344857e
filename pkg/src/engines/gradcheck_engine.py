#!/usr/bin/env python3

import logging
import time
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

from src.autograd.finite_difference import numeric_partial, relative_error
from src.autograd.tensor_core import GradientTape, Tensor, parameter, softmax
from src.models.auto_correlation import AutoCorrelationLayer, DelayFreezer, MechanismKind, frozen_delays
from src.models.autoformer import AutoformerModel, DecoderLayer, EncoderLayer, ModelConfig
from src.models.layers import Module
from src.processors.series_ops import cross_correlation, series_decomp

logger = logging.getLogger(__name__)


@dataclass
class GradCheckSettings:
    eps: float = 1e-4
    tolerance: float = 1e-4
    pass_fraction: float = 0.99
    samples: int = 200
    seed: int = 2021
    corrupt: bool = False


@dataclass
class GradSuite:
    """A scalar loss closure and the tensors it is differentiated against"""
    name: str
    params: Dict[str, Tensor]
    loss: Callable[[], Tensor]


def _weights(rng: np.random.Generator, shape: Tuple[int, ...]) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _module_suite(name: str, module: Module, loss: Callable[[], Tensor]) -> GradSuite:
    return GradSuite(name, module.named_parameters(), loss)


def build_suites(cfg: ModelConfig, seed: int) -> List[GradSuite]:
    """Operation- and module-level checks sized from a tiny model config"""
    cfg = cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    suites = []

    x = parameter(rng.standard_normal(7))
    w = _weights(rng, (7,))
    suites.append(GradSuite('softmax', {'x': x}, lambda: (softmax(x) * w).sum()))

    q, k = parameter(rng.standard_normal(7)), parameter(rng.standard_normal(7))
    w_corr = _weights(rng, (7,))
    suites.append(GradSuite('fft_correlation', {'q': q, 'k': k},
                            lambda: (cross_correlation(q, k) * w_corr).sum()))

    series = parameter(rng.standard_normal((2, cfg.input_len, cfg.n_channels)))
    w_s = _weights(rng, series.shape)
    w_t = _weights(rng, series.shape)

    def decomposition_loss():
        pair = series_decomp(series, cfg.moving_avg_window, axis=1)
        return (pair.seasonal * w_s).sum() + (pair.trend * w_t).sum()

    suites.append(GradSuite('series_decomp', {'x': series}, decomposition_loss))

    hidden = Tensor(rng.standard_normal((2, cfg.input_len, cfg.d_model)))
    w_hidden = _weights(rng, hidden.shape)
    for kind, training in ((MechanismKind.AUTOCORR_STANDARD, False),
                           (MechanismKind.AUTOCORR_SPEEDUP, True),
                           (MechanismKind.AUTOCORR_SPEEDUP, False),
                           (MechanismKind.FULL_ATTENTION, False)):
        layer = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.factor, kind, rng)
        label = f"{kind.value}{'_train' if kind is MechanismKind.AUTOCORR_SPEEDUP and training else ''}"
        suites.append(_module_suite(
            label, layer,
            lambda layer=layer, training=training: (layer(hidden, training=training) * w_hidden).sum()))

    encoder = EncoderLayer(cfg, rng, 0)
    suites.append(_module_suite('encoder_layer', encoder,
                                lambda: (encoder(hidden, training=True) * w_hidden).sum()))

    decoder = DecoderLayer(cfg, rng, 0)
    dec_in = Tensor(rng.standard_normal((2, cfg.decoder_len, cfg.d_model)))
    trend_in = Tensor(rng.standard_normal((2, cfg.decoder_len, cfg.n_channels)))
    w_dec = _weights(rng, dec_in.shape)
    w_trend = _weights(rng, trend_in.shape)

    def decoder_loss():
        seasonal, trend = decoder(dec_in, hidden, trend_in, training=True)
        return (seasonal * w_dec).sum() + (trend * w_trend).sum()

    suites.append(_module_suite('decoder_layer', decoder, decoder_loss))

    model = AutoformerModel(cfg)
    x_enc = rng.standard_normal((2, cfg.input_len, cfg.n_channels))
    marks_enc = rng.uniform(-0.5, 0.5, (2, cfg.input_len, cfg.n_time_features))
    marks_dec = rng.uniform(-0.5, 0.5, (2, cfg.decoder_len, cfg.n_time_features))
    target = Tensor(rng.standard_normal((2, cfg.pred_len, cfg.n_channels)))

    def model_loss():
        diff = model(x_enc, marks_enc, marks_dec, training=True) - target
        return (diff * diff).mean()

    suites.append(_module_suite('autoformer_end_to_end', model, model_loss))
    return suites


def _coordinates(params: Dict[str, Tensor], samples: int, rng: np.random.Generator) -> List[Tuple[str, int]]:
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    if total <= samples:
        return [(n, i) for n in names for i in range(params[n].size)]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = np.sort(rng.choice(total, size=samples, replace=False))
    owners = np.searchsorted(offsets, picks, side='right') - 1
    return [(names[o], int(p - offsets[o])) for o, p in zip(owners, picks)]


def check_suite(suite: GradSuite, settings: GradCheckSettings) -> Dict[str, Any]:
    """Analytic (tape) versus central-difference partials with top-k choices frozen"""
    freezer = DelayFreezer()
    with frozen_delays(freezer):
        with GradientTape() as tape:
            loss = suite.loss()
        analytic = tape.gradient(loss, suite.params)
        if settings.corrupt:
            analytic = {name: g * 1.1 + 1e-3 for name, g in analytic.items()}

        def probe() -> float:
            freezer.replay()
            return suite.loss().item()

        rng = np.random.Generator(np.random.PCG64(settings.seed))
        coordinates = _coordinates(suite.params, settings.samples, rng)
        errors = np.empty(len(coordinates))
        for i, (name, index) in enumerate(coordinates):
            numeric = numeric_partial(probe, suite.params[name], index, settings.eps)
            errors[i] = relative_error(analytic[name].reshape(-1)[index], numeric)

    pass_fraction = float(np.mean(errors <= settings.tolerance))
    return {
        'name': suite.name,
        'checked': len(coordinates),
        'worst_relative_error': float(errors.max()),
        'pass_fraction': pass_fraction,
        'passed': pass_fraction >= settings.pass_fraction,
    }


class GradCheckEngine:
    """Runs every gradient suite and aggregates a pass/fail report"""

    def __init__(self, model_cfg: ModelConfig, settings: GradCheckSettings = None):
        self.model_cfg = model_cfg
        self.settings = settings or GradCheckSettings()

    def run(self) -> Dict[str, Any]:
        start_time = time.time()
        cfg = replace(self.model_cfg, dropout=0.0)
        if cfg.n_channels is None:
            cfg.n_channels = 2
        if cfg.n_time_features is None:
            cfg.n_time_features = 1

        logger.info("Phase 1: Building gradient suites...")
        suites = build_suites(cfg, self.settings.seed)

        logger.info(f"Phase 2: Checking {len(suites)} suites (eps={self.settings.eps}, "
                    f"tolerance={self.settings.tolerance})...")
        report = []
        for suite in suites:
            result = check_suite(suite, self.settings)
            status = 'PASS' if result['passed'] else 'FAIL'
            logger.info(f"{status} {result['name']}: worst relative error {result['worst_relative_error']:.3e} "
                        f"over {result['checked']} coordinates")
            report.append(result)

        passed = all(r['passed'] for r in report)
        return {
            'success': True,
            'passed': passed,
            'corrupted': self.settings.corrupt,
            'suites': report,
            'processing_time': time.time() - start_time,
        }
