"""Trace-driven conditional-branch-predictor workbench.

Three layers:

* predictor models — path-history footprint schemes and multi-table tagged
  predictors (``history``, ``hashspec``, ``tage``, ``configs``), with a
  vectorized simulator (``sim``, ``engine``) over packed traces (``trace``);
* analysis — history-collision counting, per-branch scatter reports, and
  alignment what-ifs (``analysis``), plus synthetic workloads
  (``workloads``);
* recovery — a black-box probe pipeline that reconstructs a predictor's
  history parameters and hash layout from misprediction counts alone
  (``reharness``).
"""

from .configs import (
    BUILTIN_IDS,
    CbpConfig,
    ConfigError,
    builtin,
    capacity_bits,
    clone_24k,
    load_config,
    save_config,
    total_entries,
)
from .hashspec import BitSource, HashSpec, XorGroup
from .history import FootprintScheme, HistoryState, initial_state, update_history
from .sim import Comparison, SimReport, compare, simulate
from .tage import PhtSpec, Tage
from .trace import KIND_COND, KIND_INDIRECT, KIND_UNCOND, TraceBuffer

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_IDS",
    "BitSource",
    "CbpConfig",
    "ConfigError",
    "FootprintScheme",
    "HashSpec",
    "HistoryState",
    "KIND_COND",
    "KIND_UNCOND",
    "KIND_INDIRECT",
    "PhtSpec",
    "Comparison",
    "SimReport",
    "Tage",
    "TraceBuffer",
    "XorGroup",
    "builtin",
    "capacity_bits",
    "clone_24k",
    "initial_state",
    "load_config",
    "save_config",
    "compare",
    "simulate",
    "total_entries",
    "update_history",
    "__version__",
]
