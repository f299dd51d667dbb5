"""Case runner and reporting front end."""

from .config import CaseConfig, load_config
from .reports import (KERNELS, RunReport, coefficient_converged, compare_runs, emit_timing_breakdown,
                      load_run, time_to_threshold)
from .runner import run_case
