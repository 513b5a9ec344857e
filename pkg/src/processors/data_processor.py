#!/usr/bin/env python3
"""
Time-series data processing: CSV ingestion in the ETT layout, chronological
splits, train-statistics standardization, calendar/index time marks,
input-I-predict-O windows and the seeded synthetic generator.
"""

import hashlib
import logging
import os
import re
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import ConfigError, DataError, require_number

logger = logging.getLogger(__name__)

DATE_COLUMN = 'date'
CALENDAR_FEATURES = ('month', 'day', 'weekday', 'hour', 'minute')
_INTEGER_PATTERN = re.compile(r'^[+-]?\d+$')


@dataclass
class TimeSeriesFrame:
    """L timestamps, an L x d value matrix and the channel names.

    `mark_origin` / `mark_span` pin the scaling of integer-index time marks;
    slices inherit them so every split of one file shares a time axis.
    """
    timestamps: pd.Index
    values: np.ndarray
    channels: List[str]
    mark_origin: Optional[float] = None
    mark_span: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        if self.values.ndim != 2:
            raise DataError(f"Frame values must be L x d, got shape {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError(f"{len(self.timestamps)} timestamps for {self.values.shape[0]} rows")
        if len(self.channels) != self.values.shape[1]:
            raise DataError(f"{len(self.channels)} channel names for {self.values.shape[1]} columns")
        if not np.all(np.isfinite(self.values)):
            raise DataError("Frame contains missing or non-finite values")
        if not (self.timestamps.is_monotonic_increasing and self.timestamps.is_unique):
            raise DataError("Timestamps must be strictly increasing")
        if not self.is_calendar and self.mark_origin is None and self.length > 0:
            self.mark_origin = float(self.timestamps[0])
            self.mark_span = float(max(self.timestamps[-1] - self.timestamps[0], 1))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def is_calendar(self) -> bool:
        return isinstance(self.timestamps, pd.DatetimeIndex)

    @property
    def n_time_features(self) -> int:
        return len(CALENDAR_FEATURES) if self.is_calendar else 1

    def slice(self, start: int, stop: int) -> 'TimeSeriesFrame':
        return TimeSeriesFrame(self.timestamps[start:stop], self.values[start:stop].copy(),
                               list(self.channels), self.mark_origin, self.mark_span)

    def with_values(self, values: np.ndarray) -> 'TimeSeriesFrame':
        return TimeSeriesFrame(self.timestamps, values, list(self.channels),
                               self.mark_origin, self.mark_span)

    def select(self, channels: Sequence[str]) -> 'TimeSeriesFrame':
        positions = [self.channels.index(c) for c in channels]
        return TimeSeriesFrame(self.timestamps, self.values[:, positions].copy(), list(channels),
                               self.mark_origin, self.mark_span)


@dataclass
class WindowSample:
    encoder_values: np.ndarray
    encoder_marks: np.ndarray
    decoder_marks: np.ndarray
    target: np.ndarray
    start: int = 0


@dataclass
class WindowStack:
    """Windows stacked along a leading batch axis"""
    encoder_values: np.ndarray
    encoder_marks: np.ndarray
    decoder_marks: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return self.encoder_values.shape[0]

    def take(self, indices: Sequence[int]) -> 'WindowStack':
        indices = np.asarray(indices, dtype=np.int64)
        return WindowStack(self.encoder_values[indices], self.encoder_marks[indices],
                           self.decoder_marks[indices], self.target[indices])


@dataclass
class DataConfig:
    split_ratios: List[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    features: str = 'M'
    target: Optional[str] = None
    stride: int = 1

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DataConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown data config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> 'DataConfig':
        if not isinstance(self.split_ratios, (list, tuple)) or len(self.split_ratios) != 3:
            raise ConfigError(f"split_ratios must be three positive numbers, got {self.split_ratios!r}")
        if any(require_number('split_ratios', r) <= 0 for r in self.split_ratios):
            raise ConfigError(f"split_ratios must be three positive numbers, got {self.split_ratios}")
        if self.features not in ('M', 'S'):
            raise ConfigError(f"features must be 'M' or 'S', got {self.features!r}")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigError(f"stride must be a positive integer, got {self.stride!r}")
        return self


@dataclass
class Standardization:
    """Per-channel train-split mean and population standard deviation"""
    mean: np.ndarray
    std: np.ndarray
    channels: List[str]

    def apply(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        if frame.channels != self.channels:
            raise DataError(f"Channels {frame.channels} do not match the fitted channels {self.channels}")
        return frame.with_values((frame.values - self.mean) / self.std)

    def to_dict(self) -> Dict[str, Any]:
        return {'mean': self.mean.tolist(), 'std': self.std.tolist(), 'channels': list(self.channels)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Standardization':
        return cls(np.asarray(data['mean'], dtype=np.float64),
                   np.asarray(data['std'], dtype=np.float64), list(data['channels']))


@dataclass
class SyntheticSpec:
    """Sum of sinusoids + linear trend + Gaussian noise, one phase offset per channel"""
    length: int = 2000
    channels: int = 1
    periods: List[float] = field(default_factory=lambda: [24])
    amplitudes: Optional[List[float]] = None
    trend_slope: float = 0.0
    noise_sd: float = 0.0
    seed: int = 2021
    start: Optional[str] = None
    freq: str = 'h'

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SyntheticSpec':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown synthetic spec keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self) -> 'SyntheticSpec':
        if self.length < 1:
            raise ConfigError(f"Synthetic length must be >= 1, got {self.length}")
        if self.channels < 1:
            raise ConfigError(f"Synthetic channel count must be >= 1, got {self.channels}")
        for p in self.periods:
            if p <= 0:
                raise ConfigError(f"Periods must be positive, got {p}")
        if self.amplitudes is not None and len(self.amplitudes) != len(self.periods):
            raise ConfigError("amplitudes must list one value per period")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")
        return self


# --- ingestion ---------------------------------------------------------

def _parse_timestamps(raw: pd.Series) -> pd.Index:
    text = raw.str.strip()
    if (text == '').any():
        row = int(np.flatnonzero((text == '').to_numpy())[0])
        raise DataError(f"Blank timestamp at row {row + 1}, column '{DATE_COLUMN}'")
    if text.map(lambda s: bool(_INTEGER_PATTERN.match(s))).all():
        return pd.Index(text.astype(np.int64).to_numpy())
    parsed = pd.to_datetime(text, errors='coerce', format='ISO8601')
    if parsed.isna().any():
        row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
        raise DataError(f"Unparsable timestamp {raw.iloc[row]!r} at row {row + 1}, column '{DATE_COLUMN}'")
    return pd.DatetimeIndex(parsed)


def load_csv(path: str) -> TimeSeriesFrame:
    """Read an ETT-layout CSV: a `date` column followed by numeric channels.

    Rows are numbered from 1 (the first data row); blank or non-numeric
    cells are rejected with their coordinates.
    """
    if not os.path.isfile(path):
        raise DataError(f"Data file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"Cannot read {path}: {e}")

    if len(df.columns) < 2 or df.columns[0] != DATE_COLUMN:
        raise DataError(f"{path}: expected header '{DATE_COLUMN}' followed by at least one channel, "
                        f"got {list(df.columns)}")
    if len(df) == 0:
        raise DataError(f"{path}: no data rows")

    timestamps = _parse_timestamps(df[DATE_COLUMN])
    channels = [str(c) for c in df.columns[1:]]
    values = np.empty((len(df), len(channels)))
    for j, name in enumerate(channels):
        column = pd.to_numeric(df[name].str.strip(), errors='coerce')
        bad = column.isna().to_numpy() | ~np.isfinite(column.to_numpy(dtype=np.float64, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            cell = df[name].iloc[row]
            kind = 'Blank' if cell.strip() == '' else f"Unparsable value {cell!r} in"
            raise DataError(f"{kind} cell at row {row + 1}, column '{name}'")
        values[:, j] = column.to_numpy(dtype=np.float64)

    steps = np.diff(timestamps.asi8 if isinstance(timestamps, pd.DatetimeIndex) else timestamps.to_numpy())
    if (steps <= 0).any():
        row = int(np.flatnonzero(steps <= 0)[0]) + 2
        raise DataError(f"Timestamps not strictly increasing at row {row}")

    logger.info(f"Loaded {path}: L={len(df)}, d={len(channels)}, "
                f"{'calendar' if isinstance(timestamps, pd.DatetimeIndex) else 'integer'} timestamps")
    return TimeSeriesFrame(timestamps, values, channels)


def save_csv(frame: TimeSeriesFrame, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df = pd.DataFrame(frame.values, columns=frame.channels)
    if frame.is_calendar:
        dates = frame.timestamps.strftime('%Y-%m-%d %H:%M:%S')
    else:
        dates = frame.timestamps.astype(np.int64)
    df.insert(0, DATE_COLUMN, np.asarray(dates))
    df.to_csv(path, index=False, lineterminator='\n')
    return path


def data_fingerprint(path: str) -> Dict[str, Any]:
    with open(path, 'rb') as f:
        content = f.read()
    rows = max(content.count(b'\n') - 1, 0) if content.endswith(b'\n') else content.count(b'\n')
    return {'path': os.path.abspath(path), 'rows': rows, 'sha256': hashlib.sha256(content).hexdigest()}


def select_features(frame: TimeSeriesFrame, cfg: DataConfig) -> TimeSeriesFrame:
    """Multivariate keeps every channel; univariate keeps only the target"""
    if cfg.features == 'M':
        return frame
    target = cfg.target if cfg.target is not None else frame.channels[-1]
    if target not in frame.channels:
        raise ConfigError(f"Target channel {target!r} not in {frame.channels}")
    return frame.select([target])


# --- splitting and scaling -----------------------------------------------

def chronological_split(frame: TimeSeriesFrame, ratios: Sequence[float],
                        min_length: int = 1) -> Tuple[TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame]:
    """Contiguous train/val/test with floor(r1 L), floor(r2 L) and the remainder"""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {list(ratios)}")
    exact = [Fraction(str(r)) for r in ratios]
    total = sum(exact)
    length = frame.length
    n_train = int(length * exact[0] / total)
    n_val = int(length * exact[1] / total)
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, length)]

    splits = []
    for name, (start, stop) in zip(('train', 'val', 'test'), bounds):
        if stop - start < min_length:
            raise DataError(f"{name} split has {stop - start} rows; at least {min_length} "
                            f"(input_len + pred_len) required from L={length}")
        splits.append(frame.slice(start, stop))
    logger.info(f"Chronological split of L={length}: {[s.length for s in splits]}")
    return tuple(splits)


def standardize(train: TimeSeriesFrame, val: TimeSeriesFrame, test: TimeSeriesFrame):
    """Z-score all three splits with train statistics; returns (frames, Standardization)"""
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    for j, name in enumerate(train.channels):
        if not std[j] > 0:
            raise DataError(f"Channel '{name}' has zero variance in the training split")
    stats = Standardization(mean, std, list(train.channels))
    return (stats.apply(train), stats.apply(val), stats.apply(test)), stats


def destandardize(values: np.ndarray, stats: Standardization) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


# --- time marks and windows ------------------------------------------------

def time_features(frame: TimeSeriesFrame, timestamps: Optional[pd.Index] = None) -> np.ndarray:
    """Time marks scaled to [-0.5, 0.5]: five calendar fields, or the integer index"""
    stamps = frame.timestamps if timestamps is None else timestamps
    if isinstance(stamps, pd.DatetimeIndex):
        return np.stack([
            (stamps.month.to_numpy() - 1) / 11.0 - 0.5,
            (stamps.day.to_numpy() - 1) / 30.0 - 0.5,
            stamps.weekday.to_numpy() / 6.0 - 0.5,
            stamps.hour.to_numpy() / 23.0 - 0.5,
            stamps.minute.to_numpy() / 59.0 - 0.5,
        ], axis=1).astype(np.float64)
    index = np.asarray(stamps, dtype=np.float64)
    return ((index - frame.mark_origin) / frame.mark_span - 0.5).reshape(-1, 1)


def make_windows(frame: TimeSeriesFrame, input_len: int, pred_len: int, stride: int = 1,
                 label_len: Optional[int] = None) -> List[WindowSample]:
    """Every input-I-predict-O window; decoder marks span the label rows plus the horizon"""
    if input_len < 1 or pred_len < 1 or stride < 1:
        raise ConfigError("input_len, pred_len and stride must be >= 1")
    label_len = input_len // 2 if label_len is None else label_len
    if not 0 <= label_len <= input_len:
        raise ConfigError(f"label_len {label_len} outside [0, {input_len}]")
    length = frame.length
    if length < input_len + pred_len:
        raise DataError(f"Series of length {length} is shorter than input_len + pred_len "
                        f"= {input_len + pred_len}")
    marks = time_features(frame)
    samples = []
    for start in range(0, length - input_len - pred_len + 1, stride):
        split = start + input_len
        samples.append(WindowSample(
            encoder_values=frame.values[start:split],
            encoder_marks=marks[start:split],
            decoder_marks=marks[split - label_len:split + pred_len],
            target=frame.values[split:split + pred_len],
            start=start,
        ))
    return samples


def stack_windows(samples: Sequence[WindowSample]) -> WindowStack:
    if not samples:
        raise DataError("No windows to stack")
    return WindowStack(
        encoder_values=np.stack([s.encoder_values for s in samples]),
        encoder_marks=np.stack([s.encoder_marks for s in samples]),
        decoder_marks=np.stack([s.decoder_marks for s in samples]),
        target=np.stack([s.target for s in samples]),
    )


def continue_timestamps(frame: TimeSeriesFrame, horizon: int) -> pd.Index:
    """The `horizon` timestamps following the last observation"""
    stamps = frame.timestamps
    if frame.is_calendar:
        freq = pd.infer_freq(stamps) if len(stamps) >= 3 else None
        if freq is not None:
            return pd.date_range(start=stamps[-1], periods=horizon + 1, freq=freq)[1:]
        step = stamps[-1] - stamps[-2] if len(stamps) >= 2 else pd.Timedelta(hours=1)
        return pd.DatetimeIndex([stamps[-1] + step * (i + 1) for i in range(horizon)])
    step = int(stamps[-1] - stamps[-2]) if len(stamps) >= 2 else 1
    return pd.Index(int(stamps[-1]) + step * np.arange(1, horizon + 1, dtype=np.int64))


# --- synthetic series ----------------------------------------------------

def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesFrame:
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    t = np.arange(spec.length, dtype=np.float64)
    amplitudes = spec.amplitudes if spec.amplitudes is not None else [1.0] * len(spec.periods)

    values = np.zeros((spec.length, spec.channels))
    for c in range(spec.channels):
        phase = 2.0 * np.pi * c / spec.channels
        for period, amplitude in zip(spec.periods, amplitudes):
            values[:, c] += amplitude * np.sin(2.0 * np.pi * t / period + phase)
        values[:, c] += spec.trend_slope * t
    values += spec.noise_sd * rng.standard_normal((spec.length, spec.channels))

    if spec.start is not None:
        timestamps = pd.date_range(start=spec.start, periods=spec.length, freq=spec.freq)
    else:
        timestamps = pd.Index(np.arange(spec.length, dtype=np.int64))
    channels = [f'channel_{c}' for c in range(spec.channels)]
    logger.info(f"Generated synthetic series: L={spec.length}, d={spec.channels}, "
                f"periods={spec.periods}, slope={spec.trend_slope}, noise_sd={spec.noise_sd}")
    return TimeSeriesFrame(timestamps, values, channels)
