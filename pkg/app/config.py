"""
Runtime configuration.

Values come from the environment (optionally a ``.env`` file) and act as
defaults; scenario files and CLI flags override them.
"""
import os
import logging

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

LOG_LEVEL = os.getenv("ADAPTBF_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Controller defaults
DEFAULT_INTERVAL_MS = int(os.getenv("ADAPTBF_INTERVAL_MS", "100"))
DEFAULT_EVICTION_K = int(os.getenv("ADAPTBF_EVICTION_K", "50"))
DEFAULT_RECLAIM_BOUND_MODE = os.getenv("ADAPTBF_RECLAIM_BOUND_MODE", "pre")

# Scheduler defaults (Lustre TBF ships with a bucket depth of 3 tokens)
DEFAULT_BUCKET_DEPTH = int(os.getenv("ADAPTBF_BUCKET_DEPTH", "3"))

# Output and metrics
DEFAULT_METRICS_INTERVAL_MS = int(os.getenv("ADAPTBF_METRICS_INTERVAL_MS", "100"))
DEFAULT_OUT_DIR = os.getenv("ADAPTBF_OUT_DIR", "results")
DEFAULT_SEED = int(os.getenv("ADAPTBF_SEED", "42"))

# Carried remainders are stored on a fixed grid so their denominators stay bounded
REMAINDER_RESOLUTION = int(os.getenv("ADAPTBF_REMAINDER_RESOLUTION", "1000000"))

# Benchmark
DEFAULT_BENCH_TRIALS = int(os.getenv("ADAPTBF_BENCH_TRIALS", "50"))
DEFAULT_BENCH_BUDGET_US = int(os.getenv("ADAPTBF_BENCH_BUDGET_US", "30000"))

VERSION = "0.1.0"


def configure_logging(verbose: bool = False) -> None:
    """Configure root logging for command-line entry points."""
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
