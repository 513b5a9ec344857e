import os
from dotenv import load_dotenv

load_dotenv()


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    # Logging
    LOG_LEVEL = os.getenv('AUTOFORMER_LOG_LEVEL', 'INFO')

    # Artifacts
    OUTPUT_FOLDER = os.getenv('AUTOFORMER_OUTPUT_FOLDER', 'output_files')

    # Randomness
    DEFAULT_SEED = int(os.getenv('AUTOFORMER_DEFAULT_SEED', '2021'))

    # Training history
    RECORD_WALL_TIME = _env_flag('AUTOFORMER_RECORD_WALL_TIME', 'false')

    # Benchmark
    BENCH_THREADS = int(os.getenv('AUTOFORMER_BENCH_THREADS', '1'))
    BENCH_MEMORY_FRACTION = float(os.getenv('AUTOFORMER_BENCH_MEMORY_FRACTION', '0.5'))
