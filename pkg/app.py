#!/usr/bin/env python3
# Entry point: python app.py <command> [options]
import os
import sys

from config import Config

if sys.argv[1:2] == ['bench']:
    # BLAS thread pools are sized when numpy loads
    for variable in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
        os.environ.setdefault(variable, str(Config.BENCH_THREADS))

from autoformer_app import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
