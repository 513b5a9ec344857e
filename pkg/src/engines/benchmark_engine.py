#!/usr/bin/env python3

import logging
import os
import time
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import psutil

from config import Config
from src.errors import ConfigError
from src.models.auto_correlation import (MechanismKind, autocorrelation_speedup, autocorrelation_standard,
                                         full_attention)

logger = logging.getLogger(__name__)


class MechanismBenchmark:
    """Median forward time of one mechanism over increasing series lengths"""

    def __init__(self, mechanism: str, d_model: int = 32, n_heads: int = 1, batch: int = 1,
                 factor: float = 1.0, seed: int = 2021, memory_fraction: Optional[float] = None):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.mechanism = MechanismKind.parse(mechanism)
        self.d_model = d_model
        self.n_heads = n_heads
        self.batch = batch
        self.factor = factor
        self.seed = seed
        self.memory_fraction = Config.BENCH_MEMORY_FRACTION if memory_fraction is None else memory_fraction

    def estimated_bytes(self, length: int) -> int:
        """Rough peak working set of one forward, in bytes"""
        activations = self.batch * length * self.d_model * 8
        if self.mechanism is MechanismKind.FULL_ATTENTION:
            return 4 * self.batch * self.n_heads * length * length * 8 + 4 * activations
        # complex spectra plus k gathered copies
        return 16 * activations + int(self.factor * np.log(max(length, 2))) * activations

    def _fits(self, length: int) -> bool:
        budget = psutil.virtual_memory().available * self.memory_fraction
        return self.estimated_bytes(length) <= budget

    def _forward(self, q: np.ndarray, k: np.ndarray, v: np.ndarray):
        if self.mechanism is MechanismKind.AUTOCORR_STANDARD:
            return autocorrelation_standard(q, k, v, self.factor)
        if self.mechanism is MechanismKind.AUTOCORR_SPEEDUP:
            return autocorrelation_speedup(q, k, v, self.factor, phase='infer')
        return full_attention(q, k, v)

    def time_length(self, length: int, repeats: int, warmup: int = 1) -> Optional[float]:
        if not self._fits(length):
            logger.warning(f"L={length}: estimated {self.estimated_bytes(length) / 2**20:.0f} MiB exceeds "
                           f"the memory budget; recorded as out-of-memory")
            return None
        rng = np.random.Generator(np.random.PCG64(self.seed))
        shape = (self.batch, length, self.n_heads, self.d_model // self.n_heads)
        try:
            q, k, v = (rng.standard_normal(shape) for _ in range(3))
            for _ in range(warmup):
                self._forward(q, k, v)
            timings = []
            for _ in range(repeats):
                start = time.perf_counter()
                self._forward(q, k, v)
                timings.append(time.perf_counter() - start)
        except MemoryError:
            logger.warning(f"L={length}: out of memory during the forward pass")
            return None
        return float(np.median(timings))

    def run(self, lengths: Sequence[int], repeats: int = 10) -> Dict[str, Any]:
        lengths = [int(n) for n in lengths]
        if not lengths or any(n < 2 for n in lengths):
            raise ConfigError(f"Benchmark lengths must be >= 2, got {lengths}")
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ConfigError(f"Benchmark lengths must be strictly ascending, got {lengths}")
        if repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {repeats}")

        threads = os.environ.get('OMP_NUM_THREADS')
        if threads is None:
            logger.warning("BLAS threads are not pinned; start through 'app.py bench' for stable timings")

        entries: List[Dict[str, Any]] = []
        for length in lengths:
            median = self.time_length(length, repeats)
            entries.append({'length': length, 'median_seconds': median})
            if median is not None:
                logger.info(f"{self.mechanism.value} L={length}: {median * 1e3:.3f} ms")

        return {
            'mechanism': self.mechanism.value,
            'd_model': self.d_model,
            'n_heads': self.n_heads,
            'batch': self.batch,
            'repeats': repeats,
            'blas_threads': threads,
            'entries': entries,
            'slope': loglog_slope(entries),
        }


def loglog_slope(entries: Sequence[Dict[str, Any]]) -> Optional[float]:
    """Least-squares slope of log(time) against log(L), skipping out-of-memory entries"""
    points = [(e['length'], e['median_seconds']) for e in entries
              if e['median_seconds'] is not None and e['median_seconds'] > 0]
    if len(points) < 2:
        return None
    lengths, times = np.array(points, dtype=np.float64).T
    slope, _ = np.polyfit(np.log(lengths), np.log(times), 1)
    return float(slope)
