import json
import os
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from src.autograd.tensor_core import parameter
from src.engines.benchmark_engine import MechanismBenchmark, loglog_slope
from src.engines.gradcheck_engine import GradCheckSettings, GradSuite, _coordinates, check_suite
from src.errors import ConfigError
from src.processors.data_processor import TimeSeriesFrame
from src.renderers.report_renderer import RunManifest, write_decomposition_csv, write_json, write_jsonl
from tests.conftest import ROOT


class TestSlope:

    def test_quadratic_timings(self):
        entries = [{'length': n, 'median_seconds': 1e-9 * n ** 2} for n in (64, 128, 256)]
        assert loglog_slope(entries) == pytest.approx(2.0)

    def test_out_of_memory_entries_skipped(self):
        entries = [{'length': 64, 'median_seconds': 0.1}, {'length': 128, 'median_seconds': 0.2},
                   {'length': 256, 'median_seconds': None}]
        assert loglog_slope(entries) == pytest.approx(1.0)
        assert loglog_slope(entries[2:]) is None


class TestMechanismBenchmark:

    def test_zero_memory_budget_records_null(self):
        table = MechanismBenchmark('full_attention', d_model=4, memory_fraction=0.0).run([8, 16], repeats=1)
        assert [e['median_seconds'] for e in table['entries']] == [None, None]
        assert table['slope'] is None

    def test_quadratic_estimate_for_attention(self):
        attention = MechanismBenchmark('full_attention', d_model=8)
        speedup = MechanismBenchmark('autocorr_speedup', d_model=8)
        assert attention.estimated_bytes(4096) > 10 * speedup.estimated_bytes(4096)

    @pytest.mark.parametrize('lengths', [[], [1, 8], [16, 16], [32, 16]])
    def test_invalid_lengths(self, lengths):
        with pytest.raises(ConfigError):
            MechanismBenchmark('autocorr_standard', d_model=4).run(lengths, repeats=1)

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            MechanismBenchmark('autocorr_speedup', d_model=6, n_heads=4)

    def test_table_records_thread_setting(self, monkeypatch):
        monkeypatch.delenv('OMP_NUM_THREADS', raising=False)
        table = MechanismBenchmark('autocorr_speedup', d_model=4).run([8, 16], repeats=1)
        assert table['blas_threads'] is None
        monkeypatch.setenv('OMP_NUM_THREADS', '2')
        assert MechanismBenchmark('autocorr_speedup', d_model=4).run([8, 16], repeats=1)['blas_threads'] == '2'

    def test_entry_point_pins_threads_for_bench(self):
        env = {k: v for k, v in os.environ.items()
               if k not in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS')}
        env['AUTOFORMER_BENCH_THREADS'] = '1'
        completed = subprocess.run([sys.executable, os.path.join(ROOT, 'app.py'), 'bench', '--lengths', '8,16',
                                    '--repeats', '1', '--d-model', '4'],
                                   cwd=ROOT, env=env, capture_output=True, text=True, check=True)
        assert json.loads(completed.stdout)['table']['blas_threads'] == '1'


class TestGradCheck:

    def test_coordinates_cover_small_parameter_sets(self, rng):
        params = {'a': parameter(np.zeros(3)), 'b': parameter(np.zeros((2, 2)))}
        assert len(_coordinates(params, 200, rng)) == 7
        sampled = _coordinates(params, 4, rng)
        assert len(set(sampled)) == 4
        assert all(index < params[name].size for name, index in sampled)

    def test_quadratic_suite(self):
        x = parameter([0.5, -1.0, 2.0])
        suite = GradSuite('square', {'x': x}, lambda: (x * x).sum())
        assert check_suite(suite, GradCheckSettings())['passed']
        corrupted = check_suite(suite, GradCheckSettings(corrupt=True))
        assert not corrupted['passed']
        assert corrupted['worst_relative_error'] > 1e-2


class TestReports:

    def test_json_is_stable_and_strict(self, tmp_path):
        path = write_json(str(tmp_path / 'out' / 'a.json'), {'x': np.float64(1.5), 'y': np.arange(2)})
        with open(path) as f:
            text = f.read()
        assert text.endswith('\n')
        assert json.loads(text) == {'x': 1.5, 'y': [0, 1]}
        with pytest.raises(ValueError):
            write_json(str(tmp_path / 'nan.json'), {'x': float('nan')})

    def test_jsonl_one_record_per_line(self, tmp_path):
        path = write_jsonl(str(tmp_path / 'h.jsonl'), [{'epoch': 1}, {'epoch': 2}])
        with open(path) as f:
            assert [json.loads(line)['epoch'] for line in f] == [1, 2]

    def test_decomposition_columns(self, tmp_path):
        frame = TimeSeriesFrame(pd.Index([0, 1]), np.array([[1.0, 2.0], [3.0, 4.0]]), ['a', 'b'])
        path = write_decomposition_csv(frame, np.zeros((2, 2)), frame.values, str(tmp_path / 'd.csv'))
        assert list(pd.read_csv(path).columns) == ['date', 'a_seasonal', 'a_trend', 'b_seasonal', 'b_trend']

    def test_manifest_lists_itself(self, tmp_path):
        manifest = RunManifest(command='generate', seed=3)
        manifest.add_artifact(str(tmp_path / 'series.csv'))
        manifest.write(str(tmp_path / 'manifest.json'))
        with open(tmp_path / 'manifest.json') as f:
            assert json.load(f)['artifacts'] == ['series.csv', 'manifest.json']
