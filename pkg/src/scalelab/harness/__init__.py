from .config import ConfigError, SweepConfig, default_workers, load_config, parse_config
from .plotdata import emit_plotdata, fit_loglog_slope, write_histogram
from .sweep import SCHEMA_VERSION, SchemaError, Task, expand_tasks, read_records, run_sweep, run_task

__all__ = [
    "ConfigError", "SweepConfig", "default_workers", "load_config", "parse_config",
    "emit_plotdata", "fit_loglog_slope", "write_histogram",
    "SCHEMA_VERSION", "SchemaError", "Task", "expand_tasks", "read_records", "run_sweep", "run_task",
]
