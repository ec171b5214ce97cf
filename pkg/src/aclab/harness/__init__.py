from .config import SWEEP_AXES, ConfigSchemaError, ExperimentConfig, load_config, parse_config, parse_seeds
from .report import IncompatibleRecords, ScoreTable, emit_report, score_table
from .runner import RunRecord, collect_records, load_record, run_cell, run_experiment, sweep, sweep_cells
from .stats import WelchResult, mean_ci, welch_t_test

__all__ = [
    "ExperimentConfig", "ConfigSchemaError", "load_config", "parse_config", "parse_seeds", "SWEEP_AXES",
    "RunRecord", "run_cell", "run_experiment", "sweep", "sweep_cells", "collect_records", "load_record",
    "ScoreTable", "score_table", "emit_report", "IncompatibleRecords", "welch_t_test", "mean_ci", "WelchResult",
]
