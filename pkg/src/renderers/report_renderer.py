#!/usr/bin/env python3

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from src import __version__
from src.processors.data_processor import DATE_COLUMN, TimeSeriesFrame

logger = logging.getLogger(__name__)


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: str, payload: Dict[str, Any]) -> str:
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_plain(payload), f, indent=2, allow_nan=False)
        f.write('\n')
    logger.debug(f"Wrote {path}")
    return path


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> str:
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(_plain(record), allow_nan=False) + '\n')
    return path


def write_decomposition_csv(frame: TimeSeriesFrame, seasonal: np.ndarray, trend: np.ndarray, path: str) -> str:
    """One `<channel>_seasonal` and one `<channel>_trend` column per input channel"""
    _ensure_parent(path)
    columns: Dict[str, Any] = {}
    if frame.is_calendar:
        columns[DATE_COLUMN] = np.asarray(frame.timestamps.strftime('%Y-%m-%d %H:%M:%S'))
    else:
        columns[DATE_COLUMN] = np.asarray(frame.timestamps, dtype=np.int64)
    for j, name in enumerate(frame.channels):
        columns[f'{name}_seasonal'] = seasonal[:, j]
        columns[f'{name}_trend'] = trend[:, j]
    pd.DataFrame(columns).to_csv(path, index=False, lineterminator='\n')
    return path


@dataclass
class RunManifest:
    """Everything needed to reproduce a command's outputs"""
    command: str
    seed: int
    model_config: Optional[Dict[str, Any]] = None
    train_config: Optional[Dict[str, Any]] = None
    data_config: Optional[Dict[str, Any]] = None
    data: Optional[Dict[str, Any]] = None
    artifacts: List[str] = field(default_factory=list)
    tool_version: str = __version__

    def add_artifact(self, path: str) -> str:
        self.artifacts.append(os.path.basename(path))
        return path

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, path: str) -> str:
        self.add_artifact(path)
        return write_json(path, self.to_dict())
